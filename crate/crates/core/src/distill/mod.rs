//! Teacher-to-student knowledge transfer: policy selection, loss builders,
//! payloads and execution against a student learner.

mod payload;
mod transfer;

use serde::{Deserialize, Serialize};

use crate::error::{LencError, Result};
use crate::learner::LossSpec;
pub use payload::{soft_outputs, SoftTargets, TransferPayload};
pub use transfer::{execute_transfer, HeadTarget, TrainConfig, TransferReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Teacher ships its labeled dataset.
    P1,
    /// Teacher ships soft outputs.
    P2,
    /// Soft outputs plus hidden activations.
    P3,
    /// Teacher ships its parameters.
    P4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputOption {
    StudentStream,
    TeacherDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransferPolicy {
    pub kind: PolicyKind,
    /// Present exactly for P2 and P3.
    pub input_option: Option<InputOption>,
}

impl TransferPolicy {
    pub fn new(kind: PolicyKind, input_option: Option<InputOption>) -> Result<Self> {
        let needs = matches!(kind, PolicyKind::P2 | PolicyKind::P3);
        if needs != input_option.is_some() {
            return Err(LencError::InvalidParameter(format!(
                "{kind:?} {} an input option",
                if needs { "requires" } else { "takes no" }
            )));
        }
        Ok(Self { kind, input_option })
    }

    pub fn label(&self) -> String {
        match self.input_option {
            Some(InputOption::StudentStream) => format!("{:?}/StudentStream", self.kind),
            Some(InputOption::TeacherDataset) => format!("{:?}/TeacherDataset", self.kind),
            None => format!("{:?}", self.kind),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConstraints {
    pub dataset_privacy: bool,
    pub parameter_privacy: bool,
    pub architecture_privacy: bool,
    pub traffic_limited: bool,
    pub latency_critical: bool,
}

impl EnvironmentConstraints {
    /// A restriction on either side of a transfer applies to the transfer.
    pub fn combine(&self, other: &Self) -> Self {
        Self {
            dataset_privacy: self.dataset_privacy || other.dataset_privacy,
            parameter_privacy: self.parameter_privacy || other.parameter_privacy,
            architecture_privacy: self.architecture_privacy || other.architecture_privacy,
            traffic_limited: self.traffic_limited || other.traffic_limited,
            latency_critical: self.latency_critical || other.latency_critical,
        }
    }

    pub fn from_bits(bits: u8) -> Self {
        Self {
            dataset_privacy: bits & 1 != 0,
            parameter_privacy: bits & 2 != 0,
            architecture_privacy: bits & 4 != 0,
            traffic_limited: bits & 8 != 0,
            latency_critical: bits & 16 != 0,
        }
    }

    pub fn to_bits(&self) -> u8 {
        self.dataset_privacy as u8
            | (self.parameter_privacy as u8) << 1
            | (self.architecture_privacy as u8) << 2
            | (self.traffic_limited as u8) << 3
            | (self.latency_critical as u8) << 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossHyperparams {
    /// Weight of the ground-truth term under P1.
    pub alpha: f64,
    /// Weight of the soft-output term under P2 and P3.
    pub beta: f64,
    /// Weight of the hidden-activation term under P3.
    pub gamma: f64,
    pub temperature: f64,
    pub scale_kl_by_t2: bool,
}

impl Default for LossHyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            temperature: 2.0,
            scale_kl_by_t2: false,
        }
    }
}

impl LossHyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LencError::InvalidParameter(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(LencError::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Precedence P4 > P1 > P3 > P2.
pub fn select_policy(
    c: &EnvironmentConstraints,
    student_untrained: bool,
    shared_architecture: bool,
    student_more_complex: bool,
) -> TransferPolicy {
    let option = if !c.dataset_privacy && !c.traffic_limited {
        InputOption::TeacherDataset
    } else {
        InputOption::StudentStream
    };
    if c.latency_critical && !c.parameter_privacy && !c.architecture_privacy && student_untrained {
        TransferPolicy {
            kind: PolicyKind::P4,
            input_option: None,
        }
    } else if !c.dataset_privacy && !c.traffic_limited && !c.architecture_privacy && student_more_complex {
        TransferPolicy {
            kind: PolicyKind::P1,
            input_option: None,
        }
    } else if shared_architecture {
        TransferPolicy {
            kind: PolicyKind::P3,
            input_option: Some(option),
        }
    } else {
        TransferPolicy {
            kind: PolicyKind::P2,
            input_option: Some(option),
        }
    }
}

/// Loss weights for a transfer plus whether the EWC penalty joins them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyLoss {
    pub spec: LossSpec,
    pub include_ewc: bool,
}

/// Batch-mean values of each loss component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub kl: f64,
    pub hint: f64,
    pub ewc: f64,
}

impl PolicyLoss {
    pub fn total(&self, t: &LossTerms) -> f64 {
        let kl_scale = if self.spec.scale_kl_by_t2 {
            self.spec.temperature * self.spec.temperature
        } else {
            1.0
        };
        let ewc = if self.include_ewc { t.ewc } else { 0.0 };
        self.spec.ce_weight * t.ce + self.spec.kl_weight * kl_scale * t.kl + self.spec.hint_weight * t.hint + ewc
    }
}

/// α·CE, plus EWC once the student knows at least one task.
pub fn build_policy1_loss(hp: &LossHyperparams, student_task_count: usize) -> PolicyLoss {
    PolicyLoss {
        spec: LossSpec {
            temperature: hp.temperature,
            ..LossSpec::cross_entropy(hp.alpha)
        },
        include_ewc: student_task_count >= 1,
    }
}

fn check_soft_payload(payload: &SoftTargets, option: InputOption, training_inputs: usize) -> Result<()> {
    if payload.soft.len() != training_inputs {
        return Err(LencError::DimensionMismatch {
            expected: training_inputs,
            got: payload.soft.len(),
        });
    }
    if option == InputOption::TeacherDataset && payload.labels.as_ref().is_none_or(|l| l.len() != training_inputs) {
        return Err(LencError::InvalidParameter(
            "teacher-dataset option needs one label per training input".into(),
        ));
    }
    Ok(())
}

/// β·KL to the teacher's soft outputs, plus CE when ground truth travels with
/// the teacher's dataset.
pub fn build_policy2_loss(
    hp: &LossHyperparams,
    option: InputOption,
    payload: &SoftTargets,
    training_inputs: usize,
    has_consolidated: bool,
) -> Result<PolicyLoss> {
    check_soft_payload(payload, option, training_inputs)?;
    Ok(PolicyLoss {
        spec: LossSpec {
            ce_weight: if option == InputOption::TeacherDataset { 1.0 } else { 0.0 },
            kl_weight: hp.beta,
            hint_weight: 0.0,
            temperature: hp.temperature,
            scale_kl_by_t2: hp.scale_kl_by_t2,
        },
        include_ewc: has_consolidated,
    })
}

/// Policy-2 loss plus γ times the squared L2 gap of every hidden layer.
pub fn build_policy3_loss(
    hp: &LossHyperparams,
    option: InputOption,
    payload: &SoftTargets,
    training_inputs: usize,
    student_layer_sizes: &[usize],
    has_consolidated: bool,
) -> Result<PolicyLoss> {
    let hidden = payload
        .hidden
        .as_ref()
        .ok_or_else(|| LencError::PolicyInapplicable("payload carries no hidden activations".into()))?;
    let widths = &student_layer_sizes[1.min(student_layer_sizes.len())..];
    for h in hidden {
        let got: Vec<usize> = h.iter().map(Vec::len).collect();
        if got != widths {
            return Err(LencError::PolicyInapplicable(format!(
                "teacher hidden widths {got:?} differ from student widths {widths:?}"
            )));
        }
    }
    if hidden.len() != training_inputs {
        return Err(LencError::DimensionMismatch {
            expected: training_inputs,
            got: hidden.len(),
        });
    }
    let mut loss = build_policy2_loss(hp, option, payload, training_inputs, has_consolidated)?;
    loss.spec.hint_weight = hp.gamma;
    Ok(loss)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_policy1_loss, build_policy2_loss, build_policy3_loss, InputOption, LossHyperparams, PolicyKind,
    TransferPayload, TransferPolicy,
};
use crate::continual::{ConsolidatedTask, Ewc};
use crate::data::Stream;
use crate::error::{LencError, Result};
use crate::learner::{import_parameters, train_step, Learner, Regularizer, Sample, Sgd};

/// Which decision head a transfer trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadTarget {
    Reuse(usize),
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Capped at the number of training inputs.
    pub batch_size: usize,
    pub seed: u64,
    /// Test hook: abort with an error once this many epochs have run.
    pub fail_after_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
            fail_after_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub policy: TransferPolicy,
    /// Mean loss over the last epoch; `None` when nothing was trained.
    pub final_loss: Option<f64>,
    pub epochs_run: usize,
    pub head: usize,
    pub appended: bool,
    pub training_samples: usize,
    /// Unlabeled inputs the student saw during the transfer.
    #[serde(skip)]
    pub seen_inputs: Vec<Vec<f64>>,
}

struct Plan<'a> {
    inputs: &'a [Vec<f64>],
    labels: Option<&'a [usize]>,
    soft: Option<&'a [Vec<f64>]>,
    hidden: Option<&'a [Vec<Vec<f64>>]>,
    class_count: usize,
}

/// Runs one transfer into `student`. The student is left partially updated
/// on error; callers that need atomicity restore a checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn execute_transfer(
    student: &mut Learner,
    payload: &TransferPayload,
    policy: &TransferPolicy,
    hp: &LossHyperparams,
    target: HeadTarget,
    consolidated: &[ConsolidatedTask],
    stream: &Stream,
    cfg: &TrainConfig,
) -> Result<TransferReport> {
    hp.validate()?;
    if payload.kind() != policy.kind {
        return Err(LencError::PolicyInapplicable(format!(
            "payload is for {:?} but policy is {:?}",
            payload.kind(),
            policy.kind
        )));
    }
    let mut report = TransferReport {
        policy: *policy,
        final_loss: None,
        epochs_run: 0,
        head: 0,
        appended: false,
        training_samples: 0,
        seen_inputs: stream.inputs().to_vec(),
    };

    if let TransferPayload::ModelParameters(snapshot) = payload {
        if student.task_count() != 0 {
            return Err(LencError::PolicyInapplicable(
                "model copy is only allowed into an untrained student".into(),
            ));
        }
        *student = import_parameters(snapshot)?;
        report.appended = true;
        return Ok(report);
    }

    let task_count = student.task_count();
    let (plan, loss) = match payload {
        TransferPayload::Dataset(d) => {
            if d.is_empty() {
                return Err(LencError::EmptyDataset("teacher dataset is empty".into()));
            }
            let plan = Plan {
                inputs: &d.inputs,
                labels: Some(&d.labels),
                soft: None,
                hidden: None,
                class_count: d.class_count,
            };
            (plan, build_policy1_loss(hp, task_count))
        }
        TransferPayload::SoftOutputs(t) | TransferPayload::SoftOutputsWithIntermediates(t) => {
            let option = policy
                .input_option
                .ok_or_else(|| LencError::InvalidParameter("soft-output policy without input option".into()))?;
            let inputs: &[Vec<f64>] = match (option, &t.inputs) {
                (InputOption::TeacherDataset, Some(i)) => i,
                (InputOption::TeacherDataset, None) => {
                    return Err(LencError::InvalidParameter("teacher-dataset payload carries no inputs".into()))
                }
                (InputOption::StudentStream, _) => stream.inputs(),
            };
            let has_consolidated = !consolidated.is_empty();
            let hp_t = LossHyperparams {
                temperature: t.temperature,
                ..*hp
            };
            let mut loss = if policy.kind == PolicyKind::P3 {
                build_policy3_loss(&hp_t, option, t, inputs.len(), &student.fm.layer_sizes(), has_consolidated)?
            } else {
                build_policy2_loss(&hp_t, option, t, inputs.len(), has_consolidated)?
            };
            if option == InputOption::StudentStream {
                loss.spec.ce_weight = 0.0;
            }
            let class_count = t.soft.first().map_or(0, Vec::len);
            let plan = Plan {
                inputs,
                labels: t.labels.as_deref().filter(|_| option == InputOption::TeacherDataset),
                soft: Some(&t.soft),
                hidden: t.hidden.as_deref(),
                class_count,
            };
            (plan, loss)
        }
        TransferPayload::ModelParameters(_) => unreachable!("handled above"),
    };
    if plan.inputs.is_empty() {
        return Err(LencError::EmptyDataset("no training inputs for transfer".into()));
    }
    if plan.inputs.as_ptr() != stream.inputs().as_ptr() {
        report.seen_inputs.extend(plan.inputs.iter().cloned());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    report.head = match target {
        HeadTarget::Append => {
            report.appended = true;
            student.append_decision_head(plan.class_count, &mut rng)?
        }
        HeadTarget::Reuse(i) => {
            let have = student.head(i)?.class_count();
            if have != plan.class_count {
                return Err(LencError::PolicyInapplicable(format!(
                    "head {i} has {have} classes, teacher task has {}",
                    plan.class_count
                )));
            }
            i
        }
    };
    let ewc = Ewc {
        tasks: consolidated,
        exclude_task: match target {
            HeadTarget::Reuse(i) => Some(i),
            HeadTarget::Append => None,
        },
    };
    let reg: Option<&dyn Regularizer> = if loss.include_ewc && !consolidated.is_empty() {
        ewc.validate(&student.params())?;
        Some(&ewc)
    } else {
        None
    };

    let n = plan.inputs.len();
    report.training_samples = n;
    let batch = cfg.batch_size.clamp(1, n);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        if cfg.fail_after_epochs == Some(epoch) {
            return Err(LencError::Aborted(format!("injected fault after {epoch} epochs")));
        }
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let samples: Vec<Sample<'_>> = chunk
                .iter()
                .map(|&i| Sample {
                    input: &plan.inputs[i],
                    label: plan.labels.map(|l| l[i]),
                    soft_target: plan.soft.map(|s| s[i].as_slice()),
                    hint: plan.hidden.map(|h| h[i].as_slice()),
                })
                .collect();
            match train_step(student, report.head, &samples, &loss.spec, reg, &mut opt) {
                Ok(l) => sum += l,
                Err(e) => {
                    log::warn!("transfer aborted in epoch {epoch}: {e}");
                    return Err(e);
                }
            }
            batches += 1;
        }
        report.epochs_run = epoch + 1;
        report.final_loss = Some(sum / batches as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[-3.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            inputs.push(vec![
                centers[c][0] + rng.sample::<f64, _>(StandardNormal) * 0.7,
                centers[c][1] + rng.sample::<f64, _>(StandardNormal) * 0.7,
            ]);
            labels.push(c);
        }
        LabeledDataset::new("blobs", inputs, labels, 3).unwrap()
    }

    fn trained_teacher() -> (Learner, LabeledDataset) {
        let data = blobs(1, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = TransferPolicy::new(PolicyKind::P1, None).unwrap();
        let payload = TransferPayload::Dataset(data.clone());
        let mut t = Learner::new(&[2, 8], &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            lr: 0.05,
            batch_size: 32,
            ..Default::default()
        };
        let stream = Stream::new(data.inputs.clone()).unwrap();
        execute_transfer(&mut t, &payload, &policy, &LossHyperparams::default(), HeadTarget::Append, &[], &stream, &cfg)
            .unwrap();
        (t, data)
    }

    fn accuracy_vs(student: &Learner, teacher: &Learner, inputs: &[Vec<f64>]) -> f64 {
        let agree = inputs
            .iter()
            .filter(|x| student.predict_label(0, x).unwrap() == teacher.predict_label(0, x).unwrap())
            .count();
        agree as f64 / inputs.len() as f64
    }

    #[test]
    fn model_copy_is_bit_exact() {
        let (teacher, _) = trained_teacher();
        let policy = TransferPolicy::new(PolicyKind::P4, None).unwrap();
        let stream = Stream::new(vec![vec![0.0, 0.0]]).unwrap();
        let payload = TransferPayload::prepare(&teacher, 0, &policy, &stream, None, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut student = Learner::new(&[2, 5, 5], &mut rng).unwrap();
        let r = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(r.epochs_run, 0);
        for _ in 0..200 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let a = teacher.logits(0, &x).unwrap();
            let b = student.logits(0, &x).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        let err = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LencError::PolicyInapplicable(_)));
    }

    #[test]
    fn zero_epochs_leave_student_unchanged_except_new_head() {
        let (teacher, data) = trained_teacher();
        let stream = Stream::new(data.inputs[..50].to_vec()).unwrap();
        let policy = TransferPolicy::new(PolicyKind::P2, Some(InputOption::StudentStream)).unwrap();
        let payload = TransferPayload::prepare(&teacher, 0, &policy, &stream, None, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut student = Learner::new(&[2, 8], &mut rng).unwrap();
        student.append_decision_head(3, &mut rng).unwrap();
        let before = student.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let r = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Reuse(0),
            &[],
            &stream,
            &cfg,
        )
        .unwrap();
        assert_eq!(student, before);
        assert_eq!(r.final_loss, None);
    }

    #[test]
    fn stream_distillation_improves_agreement() {
        let (teacher, data) = trained_teacher();
        let stream = Stream::new(data.inputs[..200].to_vec()).unwrap();
        let policy = TransferPolicy::new(PolicyKind::P2, Some(InputOption::StudentStream)).unwrap();
        let hp = LossHyperparams::default();
        let payload = TransferPayload::prepare(&teacher, 0, &policy, &stream, None, hp.temperature).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut student = Learner::new(&[2, 8], &mut rng).unwrap();
        student.append_decision_head(3, &mut rng).unwrap();
        let before = accuracy_vs(&student, &teacher, stream.inputs());
        let held_out = blobs(77, 150);
        let kl_before = mean_kl(&teacher, &student, &held_out.inputs, hp.temperature);
        execute_transfer(
            &mut student,
            &payload,
            &policy,
            &hp,
            HeadTarget::Reuse(0),
            &[],
            &stream,
            &TrainConfig::default(),
        )
        .unwrap();
        let after = accuracy_vs(&student, &teacher, stream.inputs());
        assert!(after > before, "{before} -> {after}");
        let kl_after = mean_kl(&teacher, &student, &held_out.inputs, hp.temperature);
        assert!(kl_after < kl_before, "{kl_before} -> {kl_after}");
    }

    fn mean_kl(teacher: &Learner, student: &Learner, xs: &[Vec<f64>], t: f64) -> f64 {
        use crate::learner::{kl_divergence, softmax_with_temperature};
        xs.iter()
            .map(|x| {
                let p = softmax_with_temperature(&teacher.logits(0, x).unwrap(), t).unwrap();
                let q = softmax_with_temperature(&student.logits(0, x).unwrap(), t).unwrap();
                kl_divergence(&p, &q).unwrap().value
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    #[test]
    fn hint_transfer_requires_matching_widths() {
        let (teacher, data) = trained_teacher();
        let stream = Stream::new(data.inputs[..20].to_vec()).unwrap();
        let policy = TransferPolicy::new(PolicyKind::P3, Some(InputOption::StudentStream)).unwrap();
        let payload = TransferPayload::prepare(&teacher, 0, &policy, &stream, None, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut student = Learner::new(&[2, 6], &mut rng).unwrap();
        let err = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LencError::PolicyInapplicable(_)));
        let mut same = Learner::new(&[2, 8], &mut rng).unwrap();
        let r = execute_transfer(
            &mut same,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &TrainConfig { epochs: 3, ..Default::default() },
        )
        .unwrap();
        assert_eq!(r.epochs_run, 3);
        assert!(r.appended);
    }

    #[test]
    fn divergence_aborts() {
        let (teacher, data) = trained_teacher();
        let stream = Stream::new(data.inputs[..40].to_vec()).unwrap();
        let policy = TransferPolicy::new(PolicyKind::P1, None).unwrap();
        let payload = TransferPayload::prepare(&teacher, 0, &policy, &stream, Some(&data), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut student = Learner::new(&[2, 8], &mut rng).unwrap();
        let cfg = TrainConfig {
            lr: 1e307,
            momentum: 0.9,
            epochs: 20,
            batch_size: 1,
            ..Default::default()
        };
        let err = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, LencError::Divergence(_)), "{err}");
        let cfg = TrainConfig {
            fail_after_epochs: Some(2),
            ..Default::default()
        };
        let mut student = Learner::new(&[2, 8], &mut rng).unwrap();
        let err = execute_transfer(
            &mut student,
            &payload,
            &policy,
            &LossHyperparams::default(),
            HeadTarget::Append,
            &[],
            &stream,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, LencError::Aborted(_)));
    }
}

use serde::{Deserialize, Serialize};

use super::{Dense, DecisionHead, FeatureModule, Learner};
use crate::codec::{Decoder, Encoder, Envelope, Kind};
use crate::error::{LencError, Result};

const SEC_ARCH: u8 = 1;
const SEC_PARAMS: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDescriptor {
    pub task_index: usize,
    pub class_count: usize,
    pub stored_accuracy: Option<f64>,
}

/// Architecture description plus flat parameters of a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub layer_sizes: Vec<usize>,
    pub heads: Vec<HeadDescriptor>,
    pub params: Vec<f64>,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> LencError {
    LencError::Snapshot {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ParameterSnapshot {
    pub fn expected_param_count(&self) -> usize {
        let fm: usize = self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let feat = self.layer_sizes.last().copied().unwrap_or(0);
        fm + self
            .heads
            .iter()
            .map(|h| feat * h.class_count + h.class_count)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(invalid("layer_sizes", "empty"));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(invalid(format!("layer_sizes[{i}]"), "zero width"));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.task_index != i {
                return Err(invalid(
                    format!("heads[{i}].task_index"),
                    format!("expected {i}, found {}", h.task_index),
                ));
            }
            if h.class_count < 2 {
                return Err(invalid(format!("heads[{i}].class_count"), "fewer than 2 classes"));
            }
            if let Some(a) = h.stored_accuracy {
                if !(0.0..=1.0).contains(&a) {
                    return Err(invalid(format!("heads[{i}].stored_accuracy"), "outside [0, 1]"));
                }
            }
        }
        let expected = self.expected_param_count();
        if self.params.len() != expected {
            return Err(invalid(
                "params",
                format!("expected {expected} values for the declared architecture, found {}", self.params.len()),
            ));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("params[{i}]"), "non-finite value"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut arch = Encoder::new();
        arch.usizes(&self.layer_sizes);
        arch.u64(self.heads.len() as u64);
        for h in &self.heads {
            arch.u64(h.task_index as u64)
                .u64(h.class_count as u64)
                .opt_f64(h.stored_accuracy);
        }
        let mut params = Encoder::new();
        params.f64s(&self.params);
        let mut env = Envelope::new(Kind::Learner);
        env.push(SEC_ARCH, arch.finish()).push(SEC_PARAMS, params.finish());
        env.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::Learner)?;
        let mut d = Decoder::new(env.section(SEC_ARCH, "architecture")?);
        let layer_sizes = d.usizes("layer_sizes")?;
        let n_heads = d.usize("heads")?;
        let mut heads = Vec::new();
        for i in 0..n_heads {
            heads.push(HeadDescriptor {
                task_index: d.usize(&format!("heads[{i}].task_index"))?,
                class_count: d.usize(&format!("heads[{i}].class_count"))?,
                stored_accuracy: d.opt_f64(&format!("heads[{i}].stored_accuracy"))?,
            });
        }
        d.expect_done("architecture")?;
        let mut d = Decoder::new(env.section(SEC_PARAMS, "params")?);
        let params = d.f64s("params")?;
        d.expect_done("params")?;
        let snap = Self {
            layer_sizes,
            heads,
            params,
        };
        snap.validate()?;
        Ok(snap)
    }
}

pub fn export_parameters(learner: &Learner) -> ParameterSnapshot {
    ParameterSnapshot {
        layer_sizes: learner.fm.layer_sizes(),
        heads: learner
            .heads
            .iter()
            .map(|h| HeadDescriptor {
                task_index: h.task_index,
                class_count: h.class_count(),
                stored_accuracy: h.stored_accuracy,
            })
            .collect(),
        params: learner.params(),
    }
}

/// Builds a learner whose architecture and parameters are exactly the snapshot's.
pub fn import_parameters(snapshot: &ParameterSnapshot) -> Result<Learner> {
    snapshot.validate()?;
    let fm = FeatureModule::zeros(&snapshot.layer_sizes)?;
    let feat = fm.output_dim();
    let heads = snapshot
        .heads
        .iter()
        .map(|h| DecisionHead {
            task_index: h.task_index,
            dense: Dense::zeros(feat, h.class_count),
            stored_accuracy: h.stored_accuracy,
        })
        .collect();
    let mut learner = Learner { fm, heads };
    learner.set_params(&snapshot.params)?;
    Ok(learner)
}

use serde::{Deserialize, Serialize};

use super::{InputOption, PolicyKind, TransferPolicy};
use crate::codec::{Decoder, Encoder, Envelope, Kind};
use crate::data::{decode_rows, encode_rows, LabeledDataset, Stream};
use crate::error::{LencError, Result};
use crate::learner::{export_parameters, softmax_with_temperature, Learner, ParameterSnapshot};

/// Teacher outputs aligned with the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTargets {
    /// Teacher inputs; `None` when the student trains on its own stream.
    pub inputs: Option<Vec<Vec<f64>>>,
    pub labels: Option<Vec<usize>>,
    pub soft: Vec<Vec<f64>>,
    /// Per input, one activation vector per hidden layer.
    pub hidden: Option<Vec<Vec<Vec<f64>>>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransferPayload {
    Dataset(LabeledDataset),
    SoftOutputs(SoftTargets),
    SoftOutputsWithIntermediates(SoftTargets),
    ModelParameters(ParameterSnapshot),
}

/// Softened head outputs, and optionally hidden activations, for each input.
#[allow(clippy::type_complexity)]
pub fn soft_outputs(
    teacher: &Learner,
    head: usize,
    inputs: &[Vec<f64>],
    temperature: f64,
    with_hidden: bool,
) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<Vec<f64>>>>)> {
    let mut soft = Vec::with_capacity(inputs.len());
    let mut hidden = with_hidden.then(|| Vec::with_capacity(inputs.len()));
    for x in inputs {
        let trace = teacher.forward(head, x)?;
        soft.push(softmax_with_temperature(&trace.logits, temperature)?);
        if let Some(h) = hidden.as_mut() {
            h.push(trace.hidden);
        }
    }
    Ok((soft, hidden))
}

const SEC_BODY: u8 = 1;

impl TransferPayload {
    pub fn kind(&self) -> PolicyKind {
        match self {
            TransferPayload::Dataset(_) => PolicyKind::P1,
            TransferPayload::SoftOutputs(_) => PolicyKind::P2,
            TransferPayload::SoftOutputsWithIntermediates(_) => PolicyKind::P3,
            TransferPayload::ModelParameters(_) => PolicyKind::P4,
        }
    }

    /// Teacher side: builds what `policy` ships for the teacher's head `head`.
    pub fn prepare(
        teacher: &Learner,
        head: usize,
        policy: &TransferPolicy,
        stream: &Stream,
        dataset: Option<&LabeledDataset>,
        temperature: f64,
    ) -> Result<Self> {
        let need_dataset = || {
            dataset.ok_or_else(|| LencError::PolicyInapplicable("teacher holds no dataset for this task".into()))
        };
        match policy.kind {
            PolicyKind::P1 => Ok(TransferPayload::Dataset(need_dataset()?.clone())),
            PolicyKind::P4 => Ok(TransferPayload::ModelParameters(export_parameters(
                &teacher.extract_task(head)?,
            ))),
            PolicyKind::P2 | PolicyKind::P3 => {
                let with_hidden = policy.kind == PolicyKind::P3;
                let (inputs, labels) = match policy.input_option {
                    Some(InputOption::TeacherDataset) => {
                        let d = need_dataset()?;
                        (Some(d.inputs.clone()), Some(d.labels.clone()))
                    }
                    _ => (None, None),
                };
                let source = inputs.as_deref().unwrap_or(stream.inputs());
                let (soft, hidden) = soft_outputs(teacher, head, source, temperature, with_hidden)?;
                let t = SoftTargets {
                    inputs,
                    labels,
                    soft,
                    hidden,
                    temperature,
                };
                Ok(if with_hidden {
                    TransferPayload::SoftOutputsWithIntermediates(t)
                } else {
                    TransferPayload::SoftOutputs(t)
                })
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            TransferPayload::Dataset(d) => {
                e.u8(1).bytes(&d.encode());
            }
            TransferPayload::SoftOutputs(t) => {
                e.u8(2);
                encode_soft(&mut e, t);
            }
            TransferPayload::SoftOutputsWithIntermediates(t) => {
                e.u8(3);
                encode_soft(&mut e, t);
            }
            TransferPayload::ModelParameters(s) => {
                e.u8(4).bytes(&s.encode());
            }
        }
        let mut env = Envelope::new(Kind::TransferPayload);
        env.push(SEC_BODY, e.finish());
        env.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::TransferPayload)?;
        let mut d = Decoder::new(env.section(SEC_BODY, "payload")?);
        let out = match d.u8("payload.kind")? {
            1 => TransferPayload::Dataset(LabeledDataset::decode(d.bytes("payload.dataset")?)?),
            2 => TransferPayload::SoftOutputs(decode_soft(&mut d)?),
            3 => TransferPayload::SoftOutputsWithIntermediates(decode_soft(&mut d)?),
            4 => TransferPayload::ModelParameters(ParameterSnapshot::decode(d.bytes("payload.snapshot")?)?),
            k => {
                return Err(LencError::Snapshot {
                    field: "payload.kind".into(),
                    reason: format!("unknown payload kind {k}"),
                })
            }
        };
        d.expect_done("payload")?;
        Ok(out)
    }
}

fn encode_soft(e: &mut Encoder, t: &SoftTargets) {
    e.f64(t.temperature);
    e.bool(t.inputs.is_some());
    if let Some(inputs) = &t.inputs {
        encode_rows(e, inputs);
    }
    e.bool(t.labels.is_some());
    if let Some(labels) = &t.labels {
        e.usizes(labels);
    }
    encode_rows(e, &t.soft);
    e.bool(t.hidden.is_some());
    if let Some(hidden) = &t.hidden {
        let layers = hidden.first().map_or(0, Vec::len);
        e.u64(layers as u64);
        for l in 0..layers {
            let rows: Vec<Vec<f64>> = hidden.iter().map(|h| h[l].clone()).collect();
            encode_rows(e, &rows);
        }
    }
}

fn decode_soft(d: &mut Decoder<'_>) -> Result<SoftTargets> {
    let temperature = d.f64("payload.temperature")?;
    let inputs = if d.bool("payload.has_inputs")? {
        Some(decode_rows(d, "payload.inputs")?)
    } else {
        None
    };
    let labels = if d.bool("payload.has_labels")? {
        Some(d.usizes("payload.labels")?)
    } else {
        None
    };
    let soft = decode_rows(d, "payload.soft")?;
    let hidden = if d.bool("payload.has_hidden")? {
        let layers = d.usize("payload.hidden_layers")?;
        let mut per_input: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(layers); soft.len()];
        for l in 0..layers {
            let rows = decode_rows(d, &format!("payload.hidden[{l}]"))?;
            if rows.len() != soft.len() {
                return Err(LencError::Snapshot {
                    field: format!("payload.hidden[{l}]"),
                    reason: "row count differs from soft outputs".into(),
                });
            }
            for (dst, r) in per_input.iter_mut().zip(rows) {
                dst.push(r);
            }
        }
        Some(per_input)
    } else {
        None
    };
    Ok(SoftTargets {
        inputs,
        labels,
        soft,
        hidden,
        temperature,
    })
}

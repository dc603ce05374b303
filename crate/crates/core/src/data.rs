//! Labeled datasets and unlabeled streams.

use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder, Envelope, Kind};
use crate::error::{LencError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let name = name.into();
        if inputs.len() != labels.len() {
            return Err(LencError::InvalidParameter(format!(
                "dataset `{name}`: {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        check_uniform_dim(&inputs)?;
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(LencError::InvalidParameter(format!(
                "dataset `{name}`: label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Self {
            name,
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut env = Envelope::new(Kind::Dataset);
        let mut e = Encoder::new();
        e.bytes(self.name.as_bytes());
        e.u64(self.class_count as u64);
        e.usizes(&self.labels);
        encode_rows(&mut e, &self.inputs);
        env.push(1, e.finish());
        env.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::Dataset)?;
        let mut d = Decoder::new(env.section(1, "dataset")?);
        let name = String::from_utf8(d.bytes("dataset.name")?.to_vec()).map_err(|_| {
            LencError::Snapshot {
                field: "dataset.name".into(),
                reason: "invalid utf-8".into(),
            }
        })?;
        let class_count = d.usize("dataset.class_count")?;
        let labels = d.usizes("dataset.labels")?;
        let inputs = decode_rows(&mut d, "dataset.inputs")?;
        d.expect_done("dataset")?;
        LabeledDataset::new(name, inputs, labels, class_count).map_err(|e| LencError::Snapshot {
            field: "dataset".into(),
            reason: e.to_string(),
        })
    }
}

/// An unlabeled batch of points delivered by the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    inputs: Vec<Vec<f64>>,
}

impl Stream {
    pub fn new(inputs: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(LencError::EmptyDataset("stream must contain at least one point".into()));
        }
        check_uniform_dim(&inputs)?;
        Ok(Self { inputs })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// M^s, the number of points.
    pub fn size(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut env = Envelope::new(Kind::Stream);
        let mut e = Encoder::new();
        encode_rows(&mut e, &self.inputs);
        env.push(1, e.finish());
        env.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::Stream)?;
        let mut d = Decoder::new(env.section(1, "stream")?);
        let inputs = decode_rows(&mut d, "stream.inputs")?;
        d.expect_done("stream")?;
        Stream::new(inputs)
    }
}

fn check_uniform_dim(inputs: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = inputs.first() {
        let d = first.len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
            return Err(LencError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
    }
    Ok(())
}

pub(crate) fn encode_rows(e: &mut Encoder, rows: &[Vec<f64>]) {
    e.u64(rows.len() as u64);
    e.u64(rows.first().map_or(0, Vec::len) as u64);
    for r in rows {
        for x in r {
            e.f64(*x);
        }
    }
}

pub(crate) fn decode_rows(d: &mut Decoder<'_>, field: &str) -> Result<Vec<Vec<f64>>> {
    let n = d.usize(field)?;
    let dim = d.usize(field)?;
    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        rows.push((0..dim).map(|_| d.f64(field)).collect::<Result<Vec<_>>>()?);
    }
    Ok(rows)
}

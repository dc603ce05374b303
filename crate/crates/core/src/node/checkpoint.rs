use super::NodeState;
use crate::codec::{Decoder, Encoder, Envelope, Kind};
use crate::continual::ConsolidatedTask;
use crate::data::LabeledDataset;
use crate::distill::EnvironmentConstraints;
use crate::error::{LencError, Result};
use crate::ksa::KsaModule;
use crate::learner::{export_parameters, import_parameters, ParameterSnapshot};

const SEC_HEADER: u8 = 1;
const SEC_LEARNER: u8 = 2;
const SEC_KSA: u8 = 3;
const SEC_ANCHORS: u8 = 4;
const SEC_DATASETS: u8 = 5;

impl NodeState {
    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut header = Encoder::new();
        header
            .u32(self.id)
            .u64(self.seed)
            .u64(self.educations)
            .u8(self.constraints.to_bits());

        let mut ksa = Encoder::new();
        ksa.u64(self.ksa.len() as u64);
        for k in &self.ksa {
            ksa.bool(k.is_some());
            if let Some(k) = k {
                k.encode_into(&mut ksa);
            }
        }

        let mut anchors = Encoder::new();
        anchors.u64(self.consolidated.len() as u64);
        for c in &self.consolidated {
            anchors.u64(c.task_index as u64).f64(c.lambda).f64s(&c.anchor).f64s(&c.fisher);
        }

        let mut datasets = Encoder::new();
        datasets.u64(self.datasets.len() as u64);
        for d in &self.datasets {
            datasets.bool(d.is_some());
            if let Some(d) = d {
                datasets.bytes(&d.encode());
            }
        }

        let mut env = Envelope::new(Kind::NodeCheckpoint);
        env.push(SEC_HEADER, header.finish())
            .push(SEC_LEARNER, export_parameters(&self.learner).encode())
            .push(SEC_KSA, ksa.finish())
            .push(SEC_ANCHORS, anchors.finish())
            .push(SEC_DATASETS, datasets.finish());
        env.encode()
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::NodeCheckpoint)?;
        let mut d = Decoder::new(env.section(SEC_HEADER, "header")?);
        let id = d.u32("node.id")?;
        let seed = d.u64("node.seed")?;
        let educations = d.u64("node.educations")?;
        let constraints = EnvironmentConstraints::from_bits(d.u8("node.constraints")?);
        d.expect_done("header")?;

        let learner = import_parameters(&ParameterSnapshot::decode(env.section(SEC_LEARNER, "learner")?)?)?;

        let mut d = Decoder::new(env.section(SEC_KSA, "ksa")?);
        let n = d.usize("ksa.count")?;
        let mut ksa = Vec::with_capacity(n.min(1024));
        for i in 0..n {
            let field = format!("ksa[{i}]");
            ksa.push(if d.bool(&field)? {
                Some(KsaModule::decode_from(&mut d, &field)?)
            } else {
                None
            });
        }
        d.expect_done("ksa")?;

        let mut d = Decoder::new(env.section(SEC_ANCHORS, "anchors")?);
        let n = d.usize("anchors.count")?;
        let mut consolidated = Vec::with_capacity(n.min(1024));
        for i in 0..n {
            let field = format!("anchors[{i}]");
            consolidated.push(ConsolidatedTask {
                task_index: d.usize(&field)?,
                lambda: d.f64(&field)?,
                anchor: d.f64s(&field)?,
                fisher: d.f64s(&field)?,
            });
        }
        d.expect_done("anchors")?;

        let mut d = Decoder::new(env.section(SEC_DATASETS, "datasets")?);
        let n = d.usize("datasets.count")?;
        let mut datasets = Vec::with_capacity(n.min(1024));
        for i in 0..n {
            let field = format!("datasets[{i}]");
            datasets.push(if d.bool(&field)? {
                Some(LabeledDataset::decode(d.bytes(&field)?)?)
            } else {
                None
            });
        }
        d.expect_done("datasets")?;

        let node = NodeState {
            id,
            learner,
            ksa,
            consolidated,
            datasets,
            constraints,
            seed,
            educations,
        };
        node.check_invariants().map_err(|e| LencError::Snapshot {
            field: "node".into(),
            reason: e.to_string(),
        })?;
        Ok(node)
    }
}

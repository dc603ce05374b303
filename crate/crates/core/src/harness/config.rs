//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::BlobSpec;
use crate::community::Availability;
use crate::distill::{EnvironmentConstraints, TrainConfig};
use crate::error::{LencError, Result};
use crate::node::{NodeId, ProtocolConfig, SelectionPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    pub sigma: f64,
    pub center_spread: f64,
    /// Number of equal class groups; each group is one task.
    pub tasks: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let b = BlobSpec::default();
        Self {
            class_count: b.class_count,
            dim: b.dim,
            per_class: b.per_class,
            sigma: b.sigma,
            center_spread: b.center_spread,
            tasks: 1,
        }
    }
}

impl DatasetSpec {
    pub fn blobs(&self) -> BlobSpec {
        BlobSpec {
            class_count: self.class_count,
            dim: self.dim,
            per_class: self.per_class,
            sigma: self.sigma,
            center_spread: self.center_spread,
        }
    }

    /// Training points available per task.
    pub fn train_per_task(&self) -> usize {
        (self.class_count / self.tasks.max(1)) * (self.per_class * 4 / 5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Feature-module widths, input first.
    pub layers: Vec<usize>,
    /// Tasks learned by supervised training before the community starts.
    #[serde(default)]
    pub pretrain: Vec<usize>,
    #[serde(default = "yes")]
    pub store_dataset: bool,
    #[serde(default = "yes")]
    pub store_accuracy: bool,
    #[serde(default)]
    pub availability: Availability,
    #[serde(default)]
    pub constraints: EnvironmentConstraints,
}

fn yes() -> bool {
    true
}

impl NodeSpec {
    pub fn student(id: NodeId, layers: Vec<usize>) -> Self {
        Self {
            id,
            layers,
            pretrain: Vec::new(),
            store_dataset: true,
            store_accuracy: true,
            availability: Availability::Always,
            constraints: EnvironmentConstraints::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSpec {
    pub student: NodeId,
    pub task: usize,
    /// Overrides the experiment-wide stream size.
    #[serde(default)]
    pub stream_size: Option<usize>,
}

/// Either an explicit cycle list or a generated one: for each task in
/// `task_order`, `repeats` rounds over `students`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub students: Vec<NodeId>,
    pub task_order: Vec<usize>,
    pub repeats: usize,
    /// Truncates or cyclically extends the generated schedule.
    pub cycle_count: Option<usize>,
    pub cycles: Vec<CycleSpec>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            students: Vec::new(),
            task_order: vec![0],
            repeats: 1,
            cycle_count: None,
            cycles: Vec::new(),
        }
    }
}

impl ScheduleSpec {
    pub fn expand(&self) -> Vec<CycleSpec> {
        if !self.cycles.is_empty() {
            return self.cycles.clone();
        }
        let mut base = Vec::new();
        for &task in &self.task_order {
            for _ in 0..self.repeats {
                for &student in &self.students {
                    base.push(CycleSpec {
                        student,
                        task,
                        stream_size: None,
                    });
                }
            }
        }
        match self.cycle_count {
            Some(n) if !base.is_empty() => base.iter().cycle().take(n).copied().collect(),
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub selection: SelectionPolicy,
    pub stream_size: usize,
    pub dataset: DatasetSpec,
    pub protocol: ProtocolConfig,
    /// Supervised training used for pretrained nodes.
    pub pretrain: TrainConfig,
    pub nodes: Vec<NodeSpec>,
    pub schedule: ScheduleSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            selection: SelectionPolicy::Disagreement,
            stream_size: 200,
            dataset: DatasetSpec::default(),
            protocol: ProtocolConfig::default(),
            pretrain: TrainConfig::default(),
            nodes: Vec::new(),
            schedule: ScheduleSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LencError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LencError::Config(e.to_string()))
    }

    pub fn cycles(&self) -> Vec<CycleSpec> {
        self.schedule.expand()
    }

    pub fn stream_size_of(&self, c: &CycleSpec) -> usize {
        c.stream_size.unwrap_or(self.stream_size)
    }

    /// Nodes with nothing to pretrain.
    pub fn students(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.pretrain.is_empty()).map(|n| n.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LencError::Config(m));
        let d = &self.dataset;
        if d.tasks == 0 || d.class_count % d.tasks != 0 {
            return bad(format!("{} classes cannot form {} equal tasks", d.class_count, d.tasks));
        }
        if d.class_count / d.tasks < 2 {
            return bad("every task needs at least two classes".into());
        }
        if self.nodes.is_empty() {
            return bad("no nodes defined".into());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return bad(format!("node {} defined twice", n.id));
            }
            if n.layers.first() != Some(&d.dim) {
                return bad(format!("node {}: first layer must equal input dim {}", n.id, d.dim));
            }
            if let Some(t) = n.pretrain.iter().find(|&&t| t >= d.tasks) {
                return bad(format!("node {}: pretrain task {t} not defined", n.id));
            }
        }
        let cycles = self.cycles();
        if cycles.is_empty() {
            return bad("empty cycle schedule".into());
        }
        let per_task = d.train_per_task();
        for c in &cycles {
            if !ids.contains(&c.student) {
                return bad(format!("schedule names unknown node {}", c.student));
            }
            if c.task >= d.tasks {
                return bad(format!("schedule names undefined task {}", c.task));
            }
            let s = self.stream_size_of(c);
            if s == 0 || s > per_task {
                return bad(format!("stream size {s} outside [1, {per_task}]"));
            }
        }
        Ok(())
    }
}

//! Parameter sweeps: one run per (value, seed), executed in parallel and
//! aggregated per value.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NodeSpec};
use super::metrics::{last_step, mean_accuracy, mean_std};
use super::run::{run_experiment, ExperimentOutput};
use crate::error::{LencError, Result};
use crate::node::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    StreamSize,
    Lambda,
    NodeCount,
    CycleCount,
}

impl FromStr for SweepAxis {
    type Err = LencError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stream_size" => Ok(SweepAxis::StreamSize),
            "lambda" => Ok(SweepAxis::Lambda),
            "node_count" => Ok(SweepAxis::NodeCount),
            "cycle_count" => Ok(SweepAxis::CycleCount),
            other => Err(LencError::Config(format!(
                "unknown sweep axis `{other}` (stream_size, lambda, node_count, cycle_count)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::StreamSize => "stream_size",
            SweepAxis::Lambda => "lambda",
            SweepAxis::NodeCount => "node_count",
            SweepAxis::CycleCount => "cycle_count",
        })
    }
}

fn whole(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(LencError::Config(format!("{axis} needs a positive integer, got {v}")))
    }
}

/// Copy of `base` with the axis set to `value`.
///
/// `node_count` keeps every pretrained node and fills the rest with students
/// shaped like the first configured student; the generated schedule then
/// rotates over all of them.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::StreamSize => {
            cfg.stream_size = whole(axis, value)?;
            for c in &mut cfg.schedule.cycles {
                c.stream_size = None;
            }
        }
        SweepAxis::Lambda => {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(LencError::Config(format!("lambda must be finite and ≥ 0, got {value}")));
            }
            cfg.protocol.lambda = value;
        }
        SweepAxis::NodeCount => {
            if !cfg.schedule.cycles.is_empty() {
                return Err(LencError::Config("node_count needs a generated schedule".into()));
            }
            let n = whole(axis, value)?;
            let template = cfg
                .nodes
                .iter()
                .find(|s| s.pretrain.is_empty())
                .cloned()
                .ok_or_else(|| LencError::Config("node_count needs at least one student node".into()))?;
            cfg.nodes.retain(|s| !s.pretrain.is_empty());
            if n <= cfg.nodes.len() {
                return Err(LencError::Config(format!(
                    "node_count {n} leaves no room for students beside {} pretrained nodes",
                    cfg.nodes.len()
                )));
            }
            let mut next: NodeId = cfg.nodes.iter().map(|s| s.id + 1).max().unwrap_or(0);
            let mut students = Vec::new();
            while cfg.nodes.len() < n {
                cfg.nodes.push(NodeSpec { id: next, ..template.clone() });
                students.push(next);
                next += 1;
            }
            cfg.schedule.students = students;
        }
        SweepAxis::CycleCount => {
            if !cfg.schedule.cycles.is_empty() {
                return Err(LencError::Config("cycle_count needs a generated schedule".into()));
            }
            cfg.schedule.cycle_count = Some(whole(axis, value)?);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub result: std::result::Result<ExperimentOutput, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
    pub error: Option<String>,
}

/// Final-step summary of one run: student mean accuracy, per-task student
/// accuracy, community accuracy and total bytes.
pub fn run_metrics(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Vec<(String, f64)> {
    let step = last_step(&out.rows);
    let mut students = cfg.students();
    if students.is_empty() {
        students = cfg.nodes.iter().map(|n| n.id).collect();
    }
    let scheduled: Vec<usize> = cfg.cycles().iter().map(|c| c.task).collect::<BTreeSet<_>>().into_iter().collect();
    let mut m = Vec::new();
    m.push((
        "student_accuracy".to_string(),
        mean_accuracy(&out.rows, step, &students, &scheduled).unwrap_or(0.0),
    ));
    for t in 0..cfg.dataset.tasks {
        m.push((format!("task{t}_accuracy"), mean_accuracy(&out.rows, step, &students, &[t]).unwrap_or(0.0)));
    }
    let community = out.rows.iter().find(|r| r.step == step).map_or(0.0, |r| r.community_accuracy);
    m.push(("community_accuracy".to_string(), community));
    let bytes: u64 = out.cycles.iter().filter_map(|c| c.report.as_ref()).map(|r| r.bytes).sum();
    m.push(("bytes".to_string(), bytes as f64));
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub axis: SweepAxis,
    pub runs: Vec<SweepRun>,
    pub aggregate: Vec<AggregateRow>,
}

pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepOutput> {
    if values.is_empty() || seeds.is_empty() {
        return Err(LencError::Config("sweep needs at least one value and one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = values.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs: Vec<(SweepRun, Option<Vec<(String, f64)>>)> = jobs
        .par_iter()
        .map(|&(value, seed)| {
            let result = apply_axis(base, axis, value).and_then(|mut cfg| {
                cfg.seed = seed;
                let out = run_experiment(&cfg)?;
                let m = run_metrics(&cfg, &out);
                Ok((out, m))
            });
            match result {
                Ok((out, m)) => (
                    SweepRun {
                        value,
                        seed,
                        result: Ok(out),
                    },
                    Some(m),
                ),
                Err(e) => (
                    SweepRun {
                        value,
                        seed,
                        result: Err(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut aggregate = Vec::new();
    for &value in values {
        let here: Vec<&(SweepRun, Option<Vec<(String, f64)>>)> = runs.iter().filter(|(r, _)| r.value == value).collect();
        let ok: Vec<&Vec<(String, f64)>> = here.iter().filter_map(|(_, m)| m.as_ref()).collect();
        let failures = here.len() - ok.len();
        let error = here.iter().find_map(|(r, _)| r.result.as_ref().err().cloned());
        let names: Vec<String> = match ok.first() {
            Some(m) => m.iter().map(|(n, _)| n.clone()).collect(),
            None => vec!["student_accuracy".to_string()],
        };
        for (i, name) in names.iter().enumerate() {
            let v: Vec<f64> = ok.iter().map(|m| m[i].1).collect();
            let (mean, std) = mean_std(&v);
            aggregate.push(AggregateRow {
                axis,
                value,
                metric: name.clone(),
                mean,
                std,
                runs: ok.len(),
                failures,
                error: error.clone(),
            });
        }
    }
    Ok(SweepOutput {
        axis,
        runs: runs.into_iter().map(|(r, _)| r).collect(),
        aggregate,
    })
}

pub const AGGREGATE_HEADER: [&str; 8] = ["axis", "value", "metric", "mean", "std", "runs", "failures", "error"];

impl SweepOutput {
    pub fn aggregate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| LencError::Io(e.to_string());
        w.write_record(AGGREGATE_HEADER).map_err(wrap)?;
        for r in &self.aggregate {
            w.write_record([
                r.axis.to_string(),
                r.value.to_string(),
                r.metric.clone(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.std),
                r.runs.to_string(),
                r.failures.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(wrap)?;
        }
        let bytes = w.into_inner().map_err(|e| LencError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| LencError::Io(e.to_string()))
    }

    /// Per-run outputs under `runs/<axis>=<value>/seed=<seed>/`, then the
    /// merged `aggregate.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for r in &self.runs {
            let sub = dir
                .join("runs")
                .join(format!("{}={}", self.axis, r.value))
                .join(format!("seed={}", r.seed));
            match &r.result {
                Ok(out) => out.write(&sub)?,
                Err(e) => {
                    std::fs::create_dir_all(&sub)?;
                    std::fs::write(sub.join("error.txt"), e)?;
                }
            }
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("aggregate.csv"), self.aggregate_csv()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DatasetSpec, ScheduleSpec};

    fn base() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            stream_size: 50,
            dataset: DatasetSpec {
                class_count: 2,
                per_class: 100,
                ..DatasetSpec::default()
            },
            nodes: vec![
                NodeSpec {
                    pretrain: vec![0],
                    ..NodeSpec::student(0, vec![2, 6])
                },
                NodeSpec::student(1, vec![2, 6]),
            ],
            schedule: ScheduleSpec {
                students: vec![1],
                ..ScheduleSpec::default()
            },
            ..ExperimentConfig::default()
        };
        c.protocol.ksa.vae.epochs = 5;
        c.protocol.train.epochs = 5;
        c.pretrain.epochs = 10;
        c.pretrain.lr = 0.05;
        c
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("lambda".parse::<SweepAxis>().unwrap(), SweepAxis::Lambda);
        assert!("epochs".parse::<SweepAxis>().is_err());
        assert_eq!(SweepAxis::NodeCount.to_string(), "node_count");
    }

    #[test]
    fn applying_axes() {
        let b = base();
        assert_eq!(apply_axis(&b, SweepAxis::StreamSize, 80.0).unwrap().stream_size, 80);
        assert!(apply_axis(&b, SweepAxis::StreamSize, 2.5).is_err());
        assert!(apply_axis(&b, SweepAxis::StreamSize, 1000.0).is_err());
        assert_eq!(apply_axis(&b, SweepAxis::Lambda, 100.0).unwrap().protocol.lambda, 100.0);
        let n = apply_axis(&b, SweepAxis::NodeCount, 4.0).unwrap();
        assert_eq!(n.nodes.len(), 4);
        assert_eq!(n.schedule.students, vec![1, 2, 3]);
        assert!(apply_axis(&b, SweepAxis::NodeCount, 1.0).is_err());
        assert_eq!(apply_axis(&b, SweepAxis::CycleCount, 3.0).unwrap().cycles().len(), 3);
    }

    #[test]
    fn stream_size_sweep_gives_one_row_per_value_and_metric() {
        let out = sweep(&base(), SweepAxis::StreamSize, &[20.0, 40.0, 60.0, 5000.0], &[1, 2]).unwrap();
        assert_eq!(out.runs.len(), 8);
        let acc: Vec<&AggregateRow> = out.aggregate.iter().filter(|r| r.metric == "student_accuracy").collect();
        assert_eq!(acc.len(), 4);
        assert_eq!(acc[3].failures, 2);
        assert!(acc[3].error.is_some());
        assert!(acc[..3].iter().all(|r| r.runs == 2 && r.failures == 0));
        assert!(out.aggregate.iter().any(|r| r.metric == "task0_accuracy"));
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        assert!(dir.path().join("aggregate.csv").exists());
        assert!(dir.path().join("runs/stream_size=20/seed=1/metrics.csv").exists());
        assert!(dir.path().join("runs/stream_size=5000/seed=1/error.txt").exists());
    }
}

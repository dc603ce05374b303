//! Single experiment run: build the community, pretrain experts, play the
//! cycle schedule and evaluate after every step.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{make_blobs, split_tasks};
use super::metrics::{metrics_csv, MetricsRow};
use crate::community::{Community, CycleOutcome, CycleReport};
use crate::data::{LabeledDataset, Stream};
use crate::error::{LencError, Result};
use crate::node::{NodeId, NodeState, ProtocolConfig};
use crate::seed::derive_seed;

const DATA: u64 = 1;
const NODES: u64 = 2;
const STREAMS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub step: usize,
    pub student: NodeId,
    pub task: usize,
    pub stream_size: usize,
    pub report: Option<CycleReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub cycles: Vec<CycleRecord>,
    pub trace: String,
}

impl ExperimentOutput {
    pub fn metrics_csv(&self) -> Result<String> {
        metrics_csv(&self.rows)
    }

    pub fn reports_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.cycles).map_err(|e| LencError::Io(e.to_string()))
    }

    /// Writes `metrics.csv`, `trace.log` and `reports.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        std::fs::write(dir.join("trace.log"), &self.trace)?;
        std::fs::write(dir.join("reports.json"), self.reports_json()?)?;
        Ok(())
    }
}

/// Train and test splits of every task.
pub fn task_data(cfg: &ExperimentConfig) -> Result<(Vec<LabeledDataset>, Vec<LabeledDataset>)> {
    let tt = make_blobs(derive_seed(cfg.seed, &[DATA]), &cfg.dataset.blobs())?;
    Ok((split_tasks(&tt.train, cfg.dataset.tasks)?, split_tasks(&tt.test, cfg.dataset.tasks)?))
}

/// Uniform sample of `size` distinct inputs.
pub fn sample_stream(data: &LabeledDataset, size: usize, seed: u64) -> Result<(Stream, Vec<usize>)> {
    if size > data.len() {
        return Err(LencError::Config(format!("stream of {size} from {} points", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, data.len(), size).into_vec();
    let stream = Stream::new(idx.iter().map(|&i| data.inputs[i].clone()).collect())?;
    Ok((stream, idx))
}

/// Accuracy of routed predictions on a whole test split; 0 for a node that
/// knows nothing.
pub fn routed_accuracy(node: &NodeState, test: &LabeledDataset, cfg: &ProtocolConfig) -> Result<f64> {
    if node.task_count() == 0 {
        return Ok(0.0);
    }
    let stream = Stream::new(test.inputs.clone())?;
    let labels = node.predict(&stream, cfg)?;
    let correct = labels.iter().zip(&test.labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / test.len().max(1) as f64)
}

pub fn build_community(cfg: &ExperimentConfig, train: &[LabeledDataset], test: &[LabeledDataset]) -> Result<Community> {
    let mut com = Community::new(cfg.protocol.clone());
    let node_seed = derive_seed(cfg.seed, &[NODES]);
    for spec in &cfg.nodes {
        let mut node = NodeState::new(spec.id, &spec.layers, spec.constraints, node_seed)?;
        for &t in &spec.pretrain {
            let eval = spec.store_accuracy.then_some(&test[t]);
            node.pretrain_task(&train[t], eval, spec.store_dataset, &cfg.protocol, &cfg.pretrain)?;
        }
        com.add_node(node)?;
        com.set_availability(spec.id, spec.availability)?;
    }
    Ok(com)
}

fn outcome_label(o: &CycleOutcome) -> &'static str {
    match o {
        CycleOutcome::NoCycle => "no_cycle",
        CycleOutcome::NoTeacher => "no_teacher",
        CycleOutcome::Completed => "completed",
        CycleOutcome::Failed(_) => "failed",
    }
}

fn evaluate(com: &Community, test: &[LabeledDataset], step: usize, cycle: Option<&CycleRecord>) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for node in com.nodes() {
        for (t, data) in test.iter().enumerate() {
            let (accuracy, error) = match routed_accuracy(node, data, &com.cfg) {
                Ok(a) => (a, None),
                Err(e) => {
                    log::warn!("step {step}: evaluating node {} on task {t} failed: {e}", node.id);
                    (0.0, Some(e.to_string()))
                }
            };
            let report = cycle.and_then(|c| c.report.as_ref());
            let teacher_score = report.and_then(|r| {
                let t = r.teacher?;
                r.scores.iter().find(|(id, _)| *id == t).map(|(_, q)| *q)
            });
            rows.push(MetricsRow {
                step,
                node: node.id,
                task: t,
                accuracy,
                community_accuracy: 0.0,
                student: cycle.map(|c| c.student),
                streamed_task: cycle.map(|c| c.task),
                teacher: report.and_then(|r| r.teacher),
                teacher_score,
                policy: report.and_then(|r| r.transfer_policy).map(|p| p.label()),
                outcome: match cycle {
                    None => "initial".into(),
                    Some(CycleRecord { report: Some(r), .. }) => outcome_label(&r.outcome).into(),
                    Some(_) => "error".into(),
                },
                bytes: report.map_or(0, |r| r.bytes),
                error: error.or_else(|| {
                    cycle.and_then(|c| {
                        c.error.clone().or_else(|| match c.report.as_ref().map(|r| &r.outcome) {
                            Some(CycleOutcome::Failed(e)) => Some(e.clone()),
                            _ => None,
                        })
                    })
                }),
            });
        }
    }
    let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len().max(1) as f64;
    for r in &mut rows {
        r.community_accuracy = mean;
    }
    rows
}

/// Runs the configured schedule. Setup errors abort the run; errors inside a
/// cycle are recorded and the schedule continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (train, test) = task_data(cfg)?;
    let mut com = build_community(cfg, &train, &test)?;
    let mut rows = evaluate(&com, &test, 0, None);
    let mut cycles = Vec::new();
    for (k, c) in cfg.cycles().iter().enumerate() {
        let step = k + 1;
        let size = cfg.stream_size_of(c);
        let result = sample_stream(&train[c.task], size, derive_seed(cfg.seed, &[STREAMS, k as u64]))
            .and_then(|(s, _)| com.run_education_cycle(c.student, &s, cfg.selection));
        let record = match result {
            Ok(r) => CycleRecord {
                step,
                student: c.student,
                task: c.task,
                stream_size: size,
                report: Some(r),
                error: None,
            },
            Err(e) => {
                log::warn!("cycle {step}: {e}");
                CycleRecord {
                    step,
                    student: c.student,
                    task: c.task,
                    stream_size: size,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        log::info!(
            "cycle {step}: node {} task {} -> {}",
            c.student,
            c.task,
            record.report.as_ref().map_or("error", |r| outcome_label(&r.outcome))
        );
        rows.extend(evaluate(&com, &test, step, Some(&record)));
        cycles.push(record);
    }
    Ok(ExperimentOutput {
        rows,
        cycles,
        trace: com.trace_text(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DatasetSpec, NodeSpec, ScheduleSpec};
    use crate::node::SelectionPolicy;
    use std::collections::BTreeSet;

    pub(crate) fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            seed: 11,
            selection: SelectionPolicy::Disagreement,
            stream_size: 100,
            dataset: DatasetSpec {
                class_count: 4,
                per_class: 150,
                tasks: 2,
                ..DatasetSpec::default()
            },
            nodes: vec![
                NodeSpec {
                    pretrain: vec![0, 1],
                    ..NodeSpec::student(0, vec![2, 10])
                },
                NodeSpec::student(1, vec![2, 10]),
            ],
            schedule: ScheduleSpec {
                students: vec![1],
                task_order: vec![0, 1],
                repeats: 1,
                ..ScheduleSpec::default()
            },
            ..ExperimentConfig::default()
        };
        c.protocol.ksa.vae.epochs = 20;
        c.protocol.train.epochs = 30;
        c.protocol.train.lr = 0.05;
        c.pretrain.epochs = 40;
        c.pretrain.lr = 0.05;
        c
    }

    #[test]
    fn streams_never_repeat_an_index() {
        let (train, _) = task_data(&small_config()).unwrap();
        for seed in 0..20 {
            let (_, idx) = sample_stream(&train[0], 200, seed).unwrap();
            assert_eq!(idx.iter().collect::<BTreeSet<_>>().len(), 200);
        }
        assert!(sample_stream(&train[0], train[0].len() + 1, 0).is_err());
    }

    #[test]
    fn run_emits_rows_per_step_and_replays() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.cycles.len(), 2);
        // 3 steps × 2 nodes × 2 tasks
        assert_eq!(a.rows.len(), 12);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
        assert!(a.rows.iter().filter(|r| r.node == 1 && r.step == 0).all(|r| r.accuracy == 0.0));
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
        assert_eq!(a.trace, b.trace);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        for f in ["metrics.csv", "trace.log", "reports.json"] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn cycle_errors_are_recorded_and_the_run_continues() {
        let mut cfg = small_config();
        cfg.nodes.truncate(1);
        cfg.nodes[0].pretrain = vec![0];
        cfg.schedule.students = vec![0];
        cfg.schedule.task_order = vec![1, 0];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.cycles.len(), 2);
        assert!(out.cycles[0].error.is_some(), "{:?}", out.cycles[0]);
        assert!(out.rows.iter().any(|r| r.step == 1 && r.outcome == "error" && r.error.is_some()));
    }
}

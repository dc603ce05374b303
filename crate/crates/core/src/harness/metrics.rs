//! Per-cycle evaluation rows, their CSV form and summary statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LencError, Result};
use crate::node::NodeId;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 13] = [
    "step",
    "node",
    "task",
    "accuracy",
    "community_accuracy",
    "student",
    "streamed_task",
    "teacher",
    "teacher_score",
    "policy",
    "outcome",
    "bytes",
    "error",
];

/// Accuracy of one node on one task's test split after a schedule step.
/// Step 0 is the state right after pretraining; step k follows cycle k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub node: NodeId,
    pub task: usize,
    pub accuracy: f64,
    /// Mean accuracy over all nodes and tasks at this step.
    pub community_accuracy: f64,
    pub student: Option<NodeId>,
    pub streamed_task: Option<usize>,
    pub teacher: Option<NodeId>,
    /// Selection score of the chosen teacher (churn under disagreement).
    pub teacher_score: Option<f64>,
    pub policy: Option<String>,
    pub outcome: String,
    pub bytes: u64,
    pub error: Option<String>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.node.to_string(),
            self.task.to_string(),
            format!("{:.6}", self.accuracy),
            format!("{:.6}", self.community_accuracy),
            opt(&self.student),
            opt(&self.streamed_task),
            opt(&self.teacher),
            self.teacher_score.map_or_else(String::new, |s| format!("{s:.6}")),
            opt(&self.policy),
            self.outcome.clone(),
            self.bytes.to_string(),
            opt(&self.error),
        ]
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| LencError::Io(e.to_string());
    w.write_record(METRICS_HEADER).map_err(wrap)?;
    for r in rows {
        w.write_record(r.record()).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| LencError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LencError::Io(e.to_string()))
}

fn parse<T: std::str::FromStr>(s: &str, col: &str) -> Result<T> {
    s.parse().map_err(|_| LencError::Config(format!("bad `{col}` value `{s}` in metrics.csv")))
}

fn parse_opt<T: std::str::FromStr>(s: &str, col: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, col).map(Some)
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| LencError::Io(e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(LencError::Config("metrics.csv header does not match".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| LencError::Io(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let text = |i: usize| (!f(i).is_empty()).then(|| f(i).to_string());
        rows.push(MetricsRow {
            step: parse(f(0), "step")?,
            node: parse(f(1), "node")?,
            task: parse(f(2), "task")?,
            accuracy: parse(f(3), "accuracy")?,
            community_accuracy: parse(f(4), "community_accuracy")?,
            student: parse_opt(f(5), "student")?,
            streamed_task: parse_opt(f(6), "streamed_task")?,
            teacher: parse_opt(f(7), "teacher")?,
            teacher_score: parse_opt(f(8), "teacher_score")?,
            policy: text(9),
            outcome: f(10).to_string(),
            bytes: parse(f(11), "bytes")?,
            error: text(12),
        });
    }
    Ok(rows)
}

pub fn last_step(rows: &[MetricsRow]) -> usize {
    rows.iter().map(|r| r.step).max().unwrap_or(0)
}

/// Mean accuracy at `step` over the given nodes and tasks.
pub fn mean_accuracy(rows: &[MetricsRow], step: usize, nodes: &[NodeId], tasks: &[usize]) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.step == step && nodes.contains(&r.node) && tasks.contains(&r.task))
        .map(|r| r.accuracy)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Step × task accuracies of one node.
pub fn accuracy_matrix(rows: &[MetricsRow], node: NodeId) -> Vec<Vec<f64>> {
    let tasks: BTreeSet<usize> = rows.iter().map(|r| r.task).collect();
    let width = tasks.iter().next_back().map_or(0, |t| t + 1);
    let mut m = vec![vec![0.0; width]; last_step(rows) + 1];
    for r in rows.iter().filter(|r| r.node == node) {
        m[r.step][r.task] = r.accuracy;
    }
    m
}

/// Mean and sample standard deviation; std is 0 for fewer than two values.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Probability that a random positive scores above a random negative,
/// counting ties as one half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Option<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (negatives.len() * positives.len()) as f64)
}

//! Elastic weight consolidation.
//!
//! Each consolidated task keeps its own anchor θ*, diagonal Fisher F and
//! strength λ. The penalty is `Σ_tasks Σ_i (λ/2)·F_i·(θ_i − θ*_i)²`. Parameters
//! created after a consolidation (heads appended later) lie beyond the anchor
//! and are unconstrained by it.

use serde::{Deserialize, Serialize};

use crate::error::{LencError, Result};
use crate::learner::{softmax_with_temperature, Learner, Regularizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedTask {
    /// Decision head this anchor protects.
    pub task_index: usize,
    pub anchor: Vec<f64>,
    pub fisher: Vec<f64>,
    pub lambda: f64,
}

/// Evenly strided subset of `0..len` with `count` elements.
fn strided(len: usize, count: usize) -> impl Iterator<Item = usize> {
    (0..count).map(move |k| k * len / count)
}

/// Diagonal of the true Fisher for head `task`: for each sampled input the
/// squared score `(∇ log p(y|x))²` is averaged under the model's own predicted
/// label distribution, then averaged over inputs.
pub fn compute_fisher_diagonal(
    learner: &Learner,
    task: usize,
    inputs: &[Vec<f64>],
    sample_count: usize,
) -> Result<Vec<f64>> {
    if inputs.is_empty() || sample_count == 0 {
        return Err(LencError::EmptyDataset("Fisher estimation needs at least one input".into()));
    }
    if sample_count > inputs.len() {
        return Err(LencError::InvalidParameter(format!(
            "sample_count {sample_count} exceeds dataset size {}",
            inputs.len()
        )));
    }
    let n = learner.param_count();
    let mut fisher = vec![0.0; n];
    let mut score = vec![0.0; n];
    for idx in strided(inputs.len(), sample_count) {
        let x = &inputs[idx];
        let trace = learner.forward(task, x)?;
        let p = softmax_with_temperature(&trace.logits, 1.0)?;
        for (y, &py) in p.iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            let dz: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| pi - if i == y { 1.0 } else { 0.0 })
                .collect();
            score.iter_mut().for_each(|s| *s = 0.0);
            learner.accumulate_gradient(task, x, &trace, &dz, None, &mut score);
            for (f, s) in fisher.iter_mut().zip(&score) {
                *f += py * s * s;
            }
        }
    }
    let m = sample_count as f64;
    fisher.iter_mut().for_each(|f| *f /= m);
    Ok(fisher)
}

fn check_dims(params: &[f64], task: &ConsolidatedTask) -> Result<()> {
    if task.anchor.len() != task.fisher.len() {
        return Err(LencError::DimensionMismatch {
            expected: task.anchor.len(),
            got: task.fisher.len(),
        });
    }
    if task.anchor.len() > params.len() {
        return Err(LencError::DimensionMismatch {
            expected: task.anchor.len(),
            got: params.len(),
        });
    }
    Ok(())
}

pub fn ewc_penalty(params: &[f64], tasks: &[ConsolidatedTask]) -> Result<f64> {
    let mut total = 0.0;
    for t in tasks {
        check_dims(params, t)?;
        total += t
            .anchor
            .iter()
            .zip(&t.fisher)
            .zip(params)
            .map(|((a, f), p)| 0.5 * t.lambda * f * (p - a) * (p - a))
            .sum::<f64>();
    }
    Ok(total)
}

/// Adds `λ·F_i·(θ_i − θ*_i)` for every task into `grad`.
pub fn ewc_gradient(params: &[f64], tasks: &[ConsolidatedTask], grad: &mut [f64]) -> Result<()> {
    for t in tasks {
        check_dims(params, t)?;
        for (i, (a, f)) in t.anchor.iter().zip(&t.fisher).enumerate() {
            grad[i] += t.lambda * f * (params[i] - a);
        }
    }
    Ok(())
}

/// Snapshot the learner as the anchor for head `task` and estimate its Fisher.
pub fn consolidate(
    learner: &Learner,
    task: usize,
    inputs: &[Vec<f64>],
    sample_count: usize,
    lambda: f64,
) -> Result<ConsolidatedTask> {
    if !(lambda >= 0.0) {
        return Err(LencError::InvalidParameter(format!("λ must be ≥ 0, got {lambda}")));
    }
    let fisher = compute_fisher_diagonal(learner, task, inputs, sample_count.min(inputs.len()).max(1))?;
    Ok(ConsolidatedTask {
        task_index: task,
        anchor: learner.params(),
        fisher,
        lambda,
    })
}

/// EWC penalty as a training regularizer, optionally ignoring the anchor of
/// the head currently being retrained.
pub struct Ewc<'a> {
    pub tasks: &'a [ConsolidatedTask],
    pub exclude_task: Option<usize>,
}

impl<'a> Ewc<'a> {
    pub fn new(tasks: &'a [ConsolidatedTask]) -> Self {
        Self {
            tasks,
            exclude_task: None,
        }
    }

    fn active(&self) -> impl Iterator<Item = &ConsolidatedTask> {
        let skip = self.exclude_task;
        self.tasks.iter().filter(move |t| Some(t.task_index) != skip)
    }

    pub fn validate(&self, params: &[f64]) -> Result<()> {
        self.tasks.iter().try_for_each(|t| check_dims(params, t))
    }
}

impl Regularizer for Ewc<'_> {
    fn penalty(&self, params: &[f64]) -> f64 {
        self.active()
            .map(|t| ewc_penalty(params, std::slice::from_ref(t)).unwrap_or(f64::NAN))
            .sum()
    }

    fn add_gradient(&self, params: &[f64], grad: &mut [f64]) {
        for t in self.active() {
            if ewc_gradient(params, std::slice::from_ref(t), grad).is_err() {
                grad.iter_mut().for_each(|g| *g = f64::NAN);
            }
        }
    }
}

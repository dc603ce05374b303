//! Knowledge self-assessment: per-task density models, stream scores,
//! three-way verdicts and head routing.

pub mod vae;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::data::Stream;
use crate::error::{LencError, Result};
pub use vae::{train_vae, EncoderOutput, VaeConfig, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsaConfig {
    pub vae: VaeConfig,
    pub opt_steps: usize,
    pub opt_lr: f64,
    pub epsilon_quantile: f64,
    pub delta_quantile: f64,
    /// Bootstrap streams drawn from held-out scores during calibration.
    pub calibration_streams: usize,
    pub calibration_stream_size: usize,
    /// Fraction of a detector's inputs held out for calibration.
    pub holdout_fraction: f64,
}

impl Default for KsaConfig {
    fn default() -> Self {
        Self {
            vae: VaeConfig::default(),
            opt_steps: 30,
            opt_lr: 0.05,
            epsilon_quantile: 0.90,
            delta_quantile: 0.995,
            calibration_streams: 100,
            calibration_stream_size: 25,
            holdout_fraction: 0.2,
        }
    }
}

/// Aggregate likelihood regret of a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodScore {
    pub value: f64,
    pub per_point: Vec<f64>,
    /// Points whose regret could not be computed; excluded from `value`.
    pub failed: usize,
}

impl OodScore {
    /// Mean of `per_point`, summed in sorted order so input order never
    /// changes the result.
    pub fn from_points(per_point: Vec<f64>, failed: usize) -> Result<Self> {
        if per_point.is_empty() {
            return Err(LencError::Scoring(format!("all {failed} stream points failed to score")));
        }
        Ok(Self {
            value: order_free_mean(&per_point),
            per_point,
            failed,
        })
    }
}

fn order_free_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta: f64,
    pub epsilon: f64,
}

impl Thresholds {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon < delta) || !delta.is_finite() || !epsilon.is_finite() {
            return Err(LencError::InvalidParameter(format!(
                "thresholds need finite epsilon < delta, got epsilon {epsilon}, delta {delta}"
            )));
        }
        Ok(Self { delta, epsilon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Expert,
    Limited,
    Unknown,
}

/// Verdict plus the score and task that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: Verdict,
    pub task: Option<usize>,
    pub score: Option<OodScore>,
}

impl Assessment {
    pub fn unknown() -> Self {
        Self {
            verdict: Verdict::Unknown,
            task: None,
            score: None,
        }
    }
}

/// Ties at a threshold resolve to the more ignorant verdict.
pub fn verdict(score: f64, th: &Thresholds) -> Verdict {
    if score >= th.delta || score.is_nan() {
        Verdict::Unknown
    } else if score >= th.epsilon {
        Verdict::Limited
    } else {
        Verdict::Expert
    }
}

/// Index of the smallest score; ties go to the lowest index.
pub fn route_head(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(LencError::Routing("no tasks to route to".into()));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Per-point likelihood regret over a stream, computed in parallel.
pub fn stream_score(vae: &VaeModel, stream: &Stream, opt_steps: usize, opt_lr: f64) -> Result<OodScore> {
    let results: Vec<Result<f64>> = stream
        .inputs()
        .par_iter()
        .map(|x| vae.likelihood_regret(x, opt_steps, opt_lr))
        .collect();
    let mut per_point = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => per_point.push(v),
            Err(LencError::Scoring(msg)) => {
                log::debug!("stream point excluded: {msg}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failed > 0 {
        log::warn!("{failed} of {} stream points failed to score", stream.size());
    }
    OodScore::from_points(per_point, failed)
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Thresholds from quantiles of bootstrapped stream means of held-out
/// per-point scores.
pub fn calibrate_thresholds(held_out: &[f64], cfg: &KsaConfig, seed: u64) -> Result<Thresholds> {
    if held_out.is_empty() {
        return Err(LencError::EmptyDataset("no held-out scores for calibration".into()));
    }
    if !(cfg.epsilon_quantile < cfg.delta_quantile) {
        return Err(LencError::InvalidParameter("epsilon_quantile must be below delta_quantile".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.calibration_stream_size.max(1);
    let means: Vec<f64> = (0..cfg.calibration_streams.max(1))
        .map(|_| {
            let draw: Vec<f64> = (0..size).map(|_| held_out[rng.random_range(0..held_out.len())]).collect();
            order_free_mean(&draw)
        })
        .collect();
    let epsilon = quantile(&means, cfg.epsilon_quantile);
    let mut delta = quantile(&means, cfg.delta_quantile);
    if delta <= epsilon {
        delta = epsilon + 1e-9 * epsilon.abs().max(1.0);
    }
    Thresholds::new(delta, epsilon)
}

/// A trained detector for one task together with its thresholds and the
/// inputs it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsaModule {
    pub vae: VaeModel,
    pub thresholds: Thresholds,
    pub inputs: Vec<Vec<f64>>,
}

impl KsaModule {
    /// Trains on a deterministic split of `inputs` and calibrates thresholds
    /// on the held-out part.
    pub fn fit(inputs: &[Vec<f64>], cfg: &KsaConfig, seed: u64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(LencError::EmptyDataset("detector inputs are empty".into()));
        }
        let n = inputs.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let held = ((n as f64 * cfg.holdout_fraction).round() as usize).min(n.saturating_sub(1));
        let (cal_idx, fit_idx) = order.split_at(held);
        let fit: Vec<Vec<f64>> = fit_idx.iter().map(|&i| inputs[i].clone()).collect();
        let cal: Vec<Vec<f64>> = if cal_idx.is_empty() {
            fit.clone()
        } else {
            cal_idx.iter().map(|&i| inputs[i].clone()).collect()
        };
        let mut vae = train_vae(&fit, &cfg.vae, seed.wrapping_add(1))?;
        // Reliability refers to everything the detector was given.
        vae.unreliable = n < cfg.vae.min_train_size;
        let cal_scores = stream_score(&vae, &Stream::new(cal)?, cfg.opt_steps, cfg.opt_lr)?;
        let thresholds = calibrate_thresholds(&cal_scores.per_point, cfg, seed.wrapping_add(2))?;
        Ok(Self {
            vae,
            thresholds,
            inputs: inputs.to_vec(),
        })
    }

    pub fn score(&self, stream: &Stream, cfg: &KsaConfig) -> Result<OodScore> {
        stream_score(&self.vae, stream, cfg.opt_steps, cfg.opt_lr)
    }

    pub(crate) fn encode_into(&self, e: &mut Encoder) {
        e.bytes(&self.vae.encode_bytes())
            .f64(self.thresholds.delta)
            .f64(self.thresholds.epsilon);
        crate::data::encode_rows(e, &self.inputs);
    }

    pub(crate) fn decode_from(d: &mut Decoder<'_>, field: &str) -> Result<Self> {
        let vae = VaeModel::decode_bytes(d.bytes(&format!("{field}.vae"))?)?;
        let delta = d.f64(&format!("{field}.delta"))?;
        let epsilon = d.f64(&format!("{field}.epsilon"))?;
        let thresholds = Thresholds::new(delta, epsilon).map_err(|e| LencError::Snapshot {
            field: format!("{field}.thresholds"),
            reason: e.to_string(),
        })?;
        let inputs = crate::data::decode_rows(d, &format!("{field}.inputs"))?;
        Ok(Self {
            vae,
            thresholds,
            inputs,
        })
    }
}

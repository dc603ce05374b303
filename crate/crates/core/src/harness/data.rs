//! Synthetic Gaussian-blob datasets and split-task construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{LencError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    pub sigma: f64,
    /// Minimum distance between class centers.
    pub center_spread: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            class_count: 6,
            dim: 2,
            per_class: 500,
            sigma: 1.0,
            center_spread: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTest {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn class_centers(rng: &mut ChaCha8Rng, spec: &BlobSpec) -> Vec<Vec<f64>> {
    let per_axis = (spec.class_count as f64).powf(1.0 / spec.dim as f64).ceil().max(1.0);
    let half = 0.5 * spec.center_spread * (per_axis + 1.0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.class_count);
    while centers.len() < spec.class_count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..1000 {
            let c: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-half..=half)).collect();
            let nearest = centers
                .iter()
                .map(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if nearest >= spec.center_spread {
                best = Some((nearest, c));
                break;
            }
            if best.as_ref().is_none_or(|(d, _)| nearest > *d) {
                best = Some((nearest, c));
            }
        }
        centers.push(best.expect("at least one candidate").1);
    }
    centers
}

/// Gaussian clusters around seeded, mutually separated centers, split 80/20
/// per class into train and test.
pub fn make_blobs(seed: u64, spec: &BlobSpec) -> Result<TrainTest> {
    if spec.class_count < 2 || spec.per_class < 10 || spec.dim == 0 {
        return Err(LencError::Config(
            "blobs need at least 2 classes, 10 points per class and a positive dimension".into(),
        ));
    }
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(LencError::Config(format!("blob sigma must be finite and ≥ 0, got {}", spec.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = class_centers(&mut rng, spec);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n_train = (spec.per_class * 4) / 5;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, c) in centers.iter().enumerate() {
        for k in 0..spec.per_class {
            let x: Vec<f64> = c.iter().map(|m| m + spec.sigma * noise.sample(&mut rng)).collect();
            if k < n_train {
                train.push((x, label));
            } else {
                test.push((x, label));
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let build = |name: &str, rows: Vec<(Vec<f64>, usize)>| {
        let (inputs, labels) = rows.into_iter().unzip();
        LabeledDataset::new(name, inputs, labels, spec.class_count)
    };
    Ok(TrainTest {
        train: build("blobs/train", train)?,
        test: build("blobs/test", test)?,
    })
}

/// Partitions classes into `k` consecutive groups, relabeled from 0 within
/// each group.
pub fn split_tasks(dataset: &LabeledDataset, k: usize) -> Result<Vec<LabeledDataset>> {
    if k == 0 || dataset.class_count % k != 0 {
        return Err(LencError::Config(format!(
            "{} classes cannot be split into {k} equal tasks",
            dataset.class_count
        )));
    }
    let m = dataset.class_count / k;
    (0..k)
        .map(|t| {
            let lo = t * m;
            let (inputs, labels) = dataset
                .inputs
                .iter()
                .zip(&dataset.labels)
                .filter(|(_, &y)| y >= lo && y < lo + m)
                .map(|(x, &y)| (x.clone(), y - lo))
                .unzip();
            let name = if k == 1 {
                dataset.name.clone()
            } else {
                format!("{}/task{t}", dataset.name)
            };
            LabeledDataset::new(name, inputs, labels, m)
        })
        .collect()
}

/// Every input translated by `offset` along each axis.
pub fn shifted(inputs: &[Vec<f64>], offset: f64) -> Vec<Vec<f64>> {
    inputs.iter().map(|x| x.iter().map(|v| v + offset).collect()).collect()
}

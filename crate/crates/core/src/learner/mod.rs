//! Minimal dense learner: a shared tanh feature module feeding one linear
//! decision head per task, with hand-derived backpropagation.

mod loss;
mod snapshot;
mod train;

pub use loss::{cross_entropy, kl_divergence, softmax_with_temperature, Floored, PROB_FLOOR};
pub use snapshot::{export_parameters, import_parameters, HeadDescriptor, ParameterSnapshot};
pub use train::{
    loss_and_gradient, train_step, Diagnostics, LossSpec, Regularizer, Sample, Sgd,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LencError, Result};

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.1;

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.random_range(-scale..=scale);
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b
        }));
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.outputs);
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` (weights then bias) and,
    /// when requested, writes the gradient with respect to `x` into `dx`.
    pub fn backward(&self, x: &[f64], dout: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        for (o, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
            gb[o] += g;
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dout.iter().enumerate() {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weights.len();
        let nb = self.bias.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Shared representation network. Every layer is followed by tanh; an empty
/// layer list makes the module the identity on its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModule {
    pub input_dim: usize,
    pub layers: Vec<Dense>,
}

impl FeatureModule {
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::uniform(w[0], w[1], INIT_SCALE, rng))
            .collect();
        Ok(Self {
            input_dim: layer_sizes[0],
            layers,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        Ok(Self {
            input_dim: layer_sizes[0],
            layers: layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Input dimension first, then each hidden width.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }
}

fn validate_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(LencError::InvalidParameter(format!(
            "layer sizes must be non-empty and positive, got {sizes:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionHead {
    pub task_index: usize,
    pub dense: Dense,
    /// Test accuracy measured before deployment, when known.
    pub stored_accuracy: Option<f64>,
}

impl DecisionHead {
    pub fn class_count(&self) -> usize {
        self.dense.outputs
    }
}

/// Hidden post-activations for one input plus the head's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl ActivationTrace {
    pub fn features<'a>(&'a self, input: &'a [f64]) -> &'a [f64] {
        self.hidden.last().map_or(input, Vec::as_slice)
    }
}

/// A feature module together with its decision heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub fm: FeatureModule,
    pub heads: Vec<DecisionHead>,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        Ok(Self {
            fm: FeatureModule::new(layer_sizes, rng)?,
            heads: Vec::new(),
        })
    }

    /// Number of tasks T.
    pub fn task_count(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        self.fm.input_dim
    }

    /// Appends a freshly initialized head and returns its task index.
    pub fn append_decision_head<R: Rng + ?Sized>(
        &mut self,
        class_count: usize,
        rng: &mut R,
    ) -> Result<usize> {
        if class_count < 2 {
            return Err(LencError::InvalidParameter(format!(
                "a decision head needs at least 2 classes, got {class_count}"
            )));
        }
        let task_index = self.heads.len();
        self.heads.push(DecisionHead {
            task_index,
            dense: Dense::uniform(self.fm.output_dim(), class_count, INIT_SCALE, rng),
            stored_accuracy: None,
        });
        Ok(task_index)
    }

    pub fn head(&self, task: usize) -> Result<&DecisionHead> {
        self.heads
            .get(task)
            .ok_or_else(|| LencError::InvalidParameter(format!("no decision head {task}")))
    }

    pub fn forward(&self, task: usize, x: &[f64]) -> Result<ActivationTrace> {
        let head = self.head(task)?;
        if x.len() != self.fm.input_dim {
            return Err(LencError::DimensionMismatch {
                expected: self.fm.input_dim,
                got: x.len(),
            });
        }
        let mut hidden = Vec::with_capacity(self.fm.layers.len());
        for layer in &self.fm.layers {
            let prev: &[f64] = hidden.last().map_or(x, |h: &Vec<f64>| h.as_slice());
            let mut a = layer.forward(prev);
            a.iter_mut().for_each(|v| *v = v.tanh());
            hidden.push(a);
        }
        let features: &[f64] = hidden.last().map_or(x, Vec::as_slice);
        let logits = head.dense.forward(features);
        Ok(ActivationTrace { hidden, logits })
    }

    pub fn logits(&self, task: usize, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(task, x)?.logits)
    }

    pub fn predict_label(&self, task: usize, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(task, x)?))
    }

    pub fn param_count(&self) -> usize {
        self.fm.param_count() + self.heads.iter().map(|h| h.dense.param_count()).sum::<usize>()
    }

    /// Offset of head `task` inside the flat parameter vector.
    pub fn head_offset(&self, task: usize) -> usize {
        self.fm.param_count()
            + self.heads[..task]
                .iter()
                .map(|h| h.dense.param_count())
                .sum::<usize>()
    }

    /// Flat parameters: feature-module layers in order, then heads in order;
    /// each layer contributes its weights then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.fm.layers {
            l.write_params(&mut out);
        }
        for h in &self.heads {
            h.dense.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(LencError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.fm.layers {
            at += l.read_params(&params[at..]);
        }
        for h in &mut self.heads {
            at += h.dense.read_params(&params[at..]);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.fm.layers.iter().all(Dense::all_finite) && self.heads.iter().all(|h| h.dense.all_finite())
    }

    /// Backpropagates `dlogits` (and optional extra gradients on each hidden
    /// post-activation) for one input, accumulating into the flat `grad`.
    pub fn accumulate_gradient(
        &self,
        task: usize,
        x: &[f64],
        trace: &ActivationTrace,
        dlogits: &[f64],
        dhidden: Option<&[Vec<f64>]>,
        grad: &mut [f64],
    ) {
        let head = &self.heads[task];
        let features = trace.features(x);
        let off = self.head_offset(task);
        let n_layers = self.fm.layers.len();
        let mut dfeat = vec![0.0; features.len()];
        head.dense.backward(
            features,
            dlogits,
            &mut grad[off..off + head.dense.param_count()],
            (n_layers > 0).then_some(dfeat.as_mut_slice()),
        );
        if n_layers == 0 {
            return;
        }
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut acc = 0;
        for l in &self.fm.layers {
            layer_offsets.push(acc);
            acc += l.param_count();
        }
        let mut dh = dfeat;
        for li in (0..n_layers).rev() {
            if let Some(extra) = dhidden {
                for (d, e) in dh.iter_mut().zip(&extra[li]) {
                    *d += e;
                }
            }
            let h = &trace.hidden[li];
            let da: Vec<f64> = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
            let layer = &self.fm.layers[li];
            let prev: &[f64] = if li == 0 { x } else { &trace.hidden[li - 1] };
            let o = layer_offsets[li];
            let mut dprev = vec![0.0; layer.inputs];
            layer.backward(
                prev,
                &da,
                &mut grad[o..o + layer.param_count()],
                (li > 0).then_some(dprev.as_mut_slice()),
            );
            dh = dprev;
        }
    }

    /// Feature module plus a single head, renumbered as task 0.
    pub fn extract_task(&self, task: usize) -> Result<Learner> {
        let mut head = self.head(task)?.clone();
        head.task_index = 0;
        Ok(Learner {
            fm: self.fm.clone(),
            heads: vec![head],
        })
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut l = Learner {
            fm: FeatureModule::zeros(&[3, 5, 4]).unwrap(),
            heads: vec![],
        };
        l.append_decision_head(3, &mut rng(1)).unwrap();
        l.heads[0].dense = Dense::zeros(4, 3);
        assert_eq!(l.logits(0, &[0.3, -7.0, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_head() {
        let mut l = Learner {
            fm: FeatureModule::zeros(&[2]).unwrap(),
            heads: vec![],
        };
        l.append_decision_head(2, &mut rng(0)).unwrap();
        l.heads[0].dense.weights = vec![1.0, 0.0, 0.0, 1.0];
        l.heads[0].dense.bias = vec![0.0, 0.0];
        assert_eq!(l.logits(0, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let mut l = Learner::new(&[2, 4], &mut rng(0)).unwrap();
        l.append_decision_head(2, &mut rng(0)).unwrap();
        assert_eq!(
            l.forward(0, &[1.0]).unwrap_err(),
            LencError::DimensionMismatch { expected: 2, got: 1 }
        );
    }

    /// Independent oracle: explicit nested loops over a weight matrix.
    fn matmul_oracle(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut s = b[r];
            for c in 0..cols {
                s += w[r * cols + c] * x[c];
            }
            out[r] = s;
        }
        out
    }

    #[test]
    fn forward_matches_matrix_oracle_on_2_8_3() {
        let mut r = rng(42);
        let mut l = Learner::new(&[2, 8], &mut r).unwrap();
        l.append_decision_head(3, &mut r).unwrap();
        let x = [0.7, -1.3];
        let h1 = matmul_oracle(&l.fm.layers[0].weights, &l.fm.layers[0].bias, 8, 2, &x)
            .into_iter()
            .map(f64::tanh)
            .collect::<Vec<_>>();
        let z = matmul_oracle(&l.heads[0].dense.weights, &l.heads[0].dense.bias, 3, 8, &h1);
        let got = l.forward(0, &x).unwrap();
        assert_eq!(got.hidden.len(), 1);
        for (a, b) in got.logits.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in got.hidden[0].iter().zip(&h1) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn append_heads_counts_and_indices() {
        let mut l = Learner::new(&[2, 4], &mut rng(0)).unwrap();
        assert_eq!(l.task_count(), 0);
        assert!(l.append_decision_head(1, &mut rng(0)).is_err());
        assert_eq!(l.append_decision_head(2, &mut rng(1)).unwrap(), 0);
        assert_eq!(l.task_count(), 1);
        assert_eq!(l.logits(0, &[0.0, 1.0]).unwrap().len(), 2);
        let before = l.heads[0].clone();
        assert_eq!(l.append_decision_head(5, &mut rng(2)).unwrap(), 1);
        assert_eq!(l.heads[0], before);
        assert_eq!(l.heads[1].task_index, 1);
    }

    #[test]
    fn seeded_head_init_is_reproducible() {
        let base = Learner::new(&[3, 6], &mut rng(9)).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        a.append_decision_head(4, &mut rng(77)).unwrap();
        b.append_decision_head(4, &mut rng(77)).unwrap();
        assert_eq!(a.heads[0].dense, b.heads[0].dense);
        assert!(a.heads[0]
            .dense
            .weights
            .iter()
            .all(|w| w.abs() <= INIT_SCALE));
    }

    #[test]
    fn params_round_trip_and_layout() {
        let mut r = rng(3);
        let mut l = Learner::new(&[2, 3, 3], &mut r).unwrap();
        l.append_decision_head(2, &mut r).unwrap();
        l.append_decision_head(3, &mut r).unwrap();
        let p = l.params();
        assert_eq!(p.len(), l.param_count());
        assert_eq!(l.head_offset(1), 9 + 12 + 8);
        let mut m = l.clone();
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        m.set_params(&shifted).unwrap();
        assert_eq!(m.params(), shifted);
        assert!(m.set_params(&p[1..]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 2.3, -1.0]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }
}

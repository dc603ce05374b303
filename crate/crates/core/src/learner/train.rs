use super::loss::{cross_entropy, kl_divergence, softmax_unchecked, PROB_FLOOR};
use super::Learner;
use crate::error::{LencError, Result};

/// One training input and whichever targets the active loss terms need.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub label: Option<usize>,
    /// Target distribution for the KL term (already temperature-softened).
    pub soft_target: Option<&'a [f64]>,
    /// Target hidden post-activations, one vector per feature-module layer.
    pub hint: Option<&'a [Vec<f64>]>,
}

impl<'a> Sample<'a> {
    pub fn input(input: &'a [f64]) -> Self {
        Self {
            input,
            label: None,
            soft_target: None,
            hint: None,
        }
    }

    pub fn labeled(input: &'a [f64], label: usize) -> Self {
        Self {
            label: Some(label),
            ..Self::input(input)
        }
    }
}

/// Per-input loss is
/// `ce_weight·CE(y, softmax(z)) + kl_weight·[T²]·KL(t, softmax(z/T)) + hint_weight·Σ‖h_l − u_l‖²`,
/// averaged over the batch; a regularizer, when present, is added once per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub ce_weight: f64,
    pub kl_weight: f64,
    pub hint_weight: f64,
    pub temperature: f64,
    pub scale_kl_by_t2: bool,
}

impl LossSpec {
    pub fn cross_entropy(weight: f64) -> Self {
        Self {
            ce_weight: weight,
            kl_weight: 0.0,
            hint_weight: 0.0,
            temperature: 1.0,
            scale_kl_by_t2: false,
        }
    }

    pub fn none() -> Self {
        Self::cross_entropy(0.0)
    }
}

/// Penalty on the flat parameter vector, e.g. the EWC anchor term.
pub trait Regularizer {
    fn penalty(&self, params: &[f64]) -> f64;
    fn add_gradient(&self, params: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Loss terms where the probability floor was applied.
    pub clamped_terms: usize,
}

/// SGD with heavy-ball momentum: `v ← μ·v + g; θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(LencError::InvalidParameter(format!("learning rate must be ≥ 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(LencError::InvalidParameter(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Velocity is kept per parameter position; parameters appended at the
    /// end (new heads) start with zero velocity.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.velocity.resize(params.len(), 0.0);
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

/// Mean loss over `batch` for head `task` plus the regularizer, and its exact
/// gradient over the learner's flat parameter vector.
pub fn loss_and_gradient(
    learner: &Learner,
    task: usize,
    batch: &[Sample<'_>],
    spec: &LossSpec,
    reg: Option<&dyn Regularizer>,
) -> Result<(f64, Vec<f64>, Diagnostics)> {
    if batch.is_empty() {
        return Err(LencError::EmptyDataset("training batch is empty".into()));
    }
    learner.head(task)?;
    if spec.kl_weight != 0.0 && !(spec.temperature > 0.0) {
        return Err(LencError::InvalidParameter("temperature must be positive".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; learner.param_count()];
    let mut total = 0.0;
    let mut diag = Diagnostics::default();
    let n_layers = learner.fm.layers.len();
    let kl_scale = if spec.scale_kl_by_t2 {
        spec.temperature * spec.temperature
    } else {
        1.0
    };

    for s in batch {
        let trace = learner.forward(task, s.input)?;
        if trace.logits.iter().any(|z| !z.is_finite()) {
            return Err(LencError::Divergence("non-finite logits".into()));
        }
        let c = trace.logits.len();
        let mut dz = vec![0.0; c];
        let mut loss = 0.0;

        if spec.ce_weight != 0.0 {
            let y = s
                .label
                .ok_or_else(|| LencError::InvalidParameter("cross-entropy term needs a label".into()))?;
            let p = softmax_unchecked(&trace.logits, 1.0);
            let ce = cross_entropy(&p, y)?;
            diag.clamped_terms += ce.clamped as usize;
            loss += spec.ce_weight * ce.value;
            for (i, d) in dz.iter_mut().enumerate() {
                let onehot = if i == y { 1.0 } else { 0.0 };
                *d += spec.ce_weight * (p[i] - onehot);
            }
        }

        if spec.kl_weight != 0.0 {
            let t = s.soft_target.ok_or_else(|| {
                LencError::InvalidParameter("KL term needs a soft target".into())
            })?;
            if t.len() != c {
                return Err(LencError::DimensionMismatch {
                    expected: c,
                    got: t.len(),
                });
            }
            let q = softmax_unchecked(&trace.logits, spec.temperature);
            let kl = kl_divergence(t, &q)?;
            diag.clamped_terms += kl.clamped as usize;
            let w = spec.kl_weight * kl_scale;
            loss += w * kl.value;
            for (i, d) in dz.iter_mut().enumerate() {
                *d += w * (q[i] - t[i]) / spec.temperature;
            }
        }

        let mut dhidden = None;
        if spec.hint_weight != 0.0 {
            let u = s.hint.ok_or_else(|| {
                LencError::InvalidParameter("intermediate-matching term needs hint activations".into())
            })?;
            if u.len() != n_layers {
                return Err(LencError::PolicyInapplicable(format!(
                    "hint carries {} layers, student has {n_layers}",
                    u.len()
                )));
            }
            let mut dh = Vec::with_capacity(n_layers);
            for (h, ut) in trace.hidden.iter().zip(u) {
                if h.len() != ut.len() {
                    return Err(LencError::PolicyInapplicable(format!(
                        "hint layer width {} differs from student width {}",
                        ut.len(),
                        h.len()
                    )));
                }
                let mut sq = 0.0;
                let mut g = Vec::with_capacity(h.len());
                for (hv, uv) in h.iter().zip(ut) {
                    let diff = hv - uv;
                    sq += diff * diff;
                    g.push(2.0 * spec.hint_weight * diff / n);
                }
                loss += spec.hint_weight * sq;
                dh.push(g);
            }
            dhidden = Some(dh);
        }

        total += loss;
        dz.iter_mut().for_each(|d| *d /= n);
        learner.accumulate_gradient(task, s.input, &trace, &dz, dhidden.as_deref(), &mut grad);
    }

    let mut value = total / n;
    if let Some(reg) = reg {
        let params = learner.params();
        value += reg.penalty(&params);
        reg.add_gradient(&params, &mut grad);
    }
    Ok((value, grad, diag))
}

/// One SGD-with-momentum step on the composite loss. Returns the loss before
/// the update.
pub fn train_step(
    learner: &mut Learner,
    task: usize,
    batch: &[Sample<'_>],
    spec: &LossSpec,
    reg: Option<&dyn Regularizer>,
    opt: &mut Sgd,
) -> Result<f64> {
    let (loss, grad, diag) = loss_and_gradient(learner, task, batch, spec, reg)?;
    if diag.clamped_terms > 0 {
        log::debug!(
            "probability floor {PROB_FLOOR:e} applied to {} loss terms",
            diag.clamped_terms
        );
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LencError::Divergence(format!("non-finite loss or gradient (loss = {loss})")));
    }
    let mut params = learner.params();
    opt.step(&mut params, &grad);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(LencError::Divergence("parameters became non-finite".into()));
    }
    learner.set_params(&params)?;
    Ok(loss)
}

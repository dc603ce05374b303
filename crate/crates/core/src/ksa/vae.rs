//! Small Gaussian VAE used as a per-task density model.
//!
//! Inputs are standardized with statistics frozen at training time; all
//! likelihoods are computed in standardized space. The decoder variance is a
//! fixed constant. ELBO evaluations used for scoring average over a fixed set
//! of reparameterization draws stored with the model, so scores are
//! deterministic functions of the input.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder, Envelope, Kind};
use crate::error::{LencError, Result};
use crate::learner::{Dense, Sgd};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LOG_VAR_BOUNDS: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Batch gradients longer than this are rescaled; 0 disables clipping.
    pub grad_clip: f64,
    /// Standard deviation of the Gaussian decoder, in standardized units.
    pub decoder_std: f64,
    /// Fixed reparameterization draws used when scoring.
    pub score_samples: usize,
    /// Detectors fit on fewer points are flagged unreliable.
    pub min_train_size: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: 16,
            epochs: 50,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            grad_clip: 10.0,
            decoder_std: 0.25,
            score_samples: 8,
            min_train_size: 1000,
        }
    }
}

/// Posterior statistics for one input: latent mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub enc_hidden: Dense,
    /// Produces `[mean; log_var]`.
    pub enc_out: Dense,
    pub dec_hidden: Dense,
    pub dec_out: Dense,
    pub decoder_log_var: f64,
    pub score_eps: Vec<Vec<f64>>,
    pub trained: bool,
    pub unreliable: bool,
    pub train_size: usize,
}

impl VaeModel {
    /// Seeded initialization with identity standardization.
    pub fn init(input_dim: usize, cfg: &VaeConfig, seed: u64) -> Result<Self> {
        if input_dim == 0 || cfg.latent_dim == 0 || cfg.hidden == 0 {
            return Err(LencError::InvalidParameter("VAE dimensions must be positive".into()));
        }
        if !(cfg.decoder_std > 0.0) {
            return Err(LencError::InvalidParameter("decoder_std must be positive".into()));
        }
        if !(cfg.grad_clip >= 0.0) {
            return Err(LencError::InvalidParameter("grad_clip must be ≥ 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = crate::learner::INIT_SCALE;
        let l = cfg.latent_dim;
        let enc_hidden = Dense::uniform(input_dim, cfg.hidden, s, &mut rng);
        let enc_out = Dense::uniform(cfg.hidden, 2 * l, s, &mut rng);
        let dec_hidden = Dense::uniform(l, cfg.hidden, s, &mut rng);
        let dec_out = Dense::uniform(cfg.hidden, input_dim, s, &mut rng);
        let score_eps = (0..cfg.score_samples.max(1))
            .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Ok(Self {
            input_dim,
            latent_dim: l,
            shift: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            enc_hidden,
            enc_out,
            dec_hidden,
            dec_out,
            decoder_log_var: 2.0 * cfg.decoder_std.ln(),
            score_eps,
            trained: false,
            unreliable: true,
            train_size: 0,
        })
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(LencError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// Encoder statistics for a standardized input.
    pub fn encode_standardized(&self, xs: &[f64]) -> EncoderOutput {
        let h: Vec<f64> = self.enc_hidden.forward(xs).into_iter().map(f64::tanh).collect();
        let out = self.enc_out.forward(&h);
        let (mean, log_var) = out.split_at(self.latent_dim);
        EncoderOutput {
            mean: mean.to_vec(),
            log_var: log_var.to_vec(),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncoderOutput> {
        Ok(self.encode_standardized(&self.standardize(x)?))
    }

    /// Decoder mean for latent `z`, in standardized units.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = self.dec_hidden.forward(z).into_iter().map(f64::tanh).collect();
        self.dec_out.forward(&g)
    }

    fn log_likelihood(&self, xs: &[f64], xhat: &[f64]) -> f64 {
        let var = self.decoder_log_var.exp();
        -0.5 * xs
            .iter()
            .zip(xhat)
            .map(|(a, b)| (a - b) * (a - b) / var + self.decoder_log_var + LN_2PI)
            .sum::<f64>()
    }

    /// Backprop of a gradient on the decoder mean down to `z`; parameter
    /// gradients go into `grad` (decoder slice) when provided.
    fn decoder_backward(&self, z: &[f64], dxhat: &[f64], grad: Option<&mut [f64]>) -> Vec<f64> {
        let g: Vec<f64> = self.dec_hidden.forward(z).into_iter().map(f64::tanh).collect();
        let mut dg = vec![0.0; g.len()];
        let nh = self.dec_hidden.param_count();
        let mut scratch;
        let (gh, go) = match grad {
            Some(gr) => gr.split_at_mut(nh),
            None => {
                scratch = vec![0.0; nh + self.dec_out.param_count()];
                scratch.split_at_mut(nh)
            }
        };
        self.dec_out.backward(&g, dxhat, go, Some(&mut dg));
        let da: Vec<f64> = dg.iter().zip(&g).map(|(d, gv)| d * (1.0 - gv * gv)).collect();
        let mut dz = vec![0.0; z.len()];
        self.dec_hidden.backward(z, &da, gh, Some(&mut dz));
        dz
    }

    /// ELBO of standardized `xs` under posterior `post`, averaged over the
    /// stored reparameterization draws.
    pub fn elbo_standardized(&self, xs: &[f64], post: &EncoderOutput) -> f64 {
        let k = self.score_eps.len() as f64;
        let rec: f64 = self
            .score_eps
            .iter()
            .map(|eps| {
                let z = reparam(post, eps);
                self.log_likelihood(xs, &self.decode(&z))
            })
            .sum::<f64>()
            / k;
        rec - kl_to_standard_normal(post)
    }

    /// Gradient of the scoring ELBO with respect to the posterior statistics.
    fn elbo_posterior_gradient(&self, xs: &[f64], post: &EncoderOutput) -> (Vec<f64>, Vec<f64>) {
        let l = self.latent_dim;
        let k = self.score_eps.len() as f64;
        let var = self.decoder_log_var.exp();
        let mut gm = vec![0.0; l];
        let mut gv = vec![0.0; l];
        for eps in &self.score_eps {
            let z = reparam(post, eps);
            let xhat = self.decode(&z);
            let dxhat: Vec<f64> = xhat.iter().zip(xs).map(|(h, x)| (x - h) / var).collect();
            let dz = self.decoder_backward(&z, &dxhat, None);
            for j in 0..l {
                gm[j] += dz[j] / k;
                gv[j] += dz[j] * eps[j] * 0.5 * (0.5 * post.log_var[j]).exp() / k;
            }
        }
        for j in 0..l {
            gm[j] -= post.mean[j];
            gv[j] -= 0.5 * (post.log_var[j].exp() - 1.0);
        }
        (gm, gv)
    }

    /// Single-input ELBO with the given posterior statistics (raw input).
    pub fn elbo(&self, x: &[f64], post: &EncoderOutput) -> Result<f64> {
        self.check_posterior(post)?;
        let v = self.elbo_standardized(&self.standardize(x)?, post);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(LencError::Scoring("non-finite ELBO".into()))
        }
    }

    fn check_posterior(&self, post: &EncoderOutput) -> Result<()> {
        if post.mean.len() != self.latent_dim || post.log_var.len() != self.latent_dim {
            return Err(LencError::DimensionMismatch {
                expected: self.latent_dim,
                got: post.mean.len().max(post.log_var.len()),
            });
        }
        Ok(())
    }

    /// Mean scoring ELBO over `inputs` using the encoder's own posteriors.
    pub fn mean_elbo(&self, inputs: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in inputs {
            total += self.elbo(x, &self.encode(x)?)?;
        }
        Ok(total / inputs.len().max(1) as f64)
    }

    /// ELBO gain from re-optimizing this input's posterior statistics with
    /// the decoder frozen. The best iterate is kept, so the result is ≥ 0.
    pub fn likelihood_regret(&self, x: &[f64], opt_steps: usize, opt_lr: f64) -> Result<f64> {
        if !self.trained {
            return Err(LencError::Scoring("VAE has not been trained".into()));
        }
        if opt_steps == 0 {
            return Err(LencError::InvalidParameter("opt_steps must be ≥ 1".into()));
        }
        let xs = self.standardize(x)?;
        let start = self.encode_standardized(&xs);
        let base = self.elbo_standardized(&xs, &start);
        if !base.is_finite() {
            return Err(LencError::Scoring("non-finite ELBO at encoder posterior".into()));
        }
        let mut post = start;
        let mut best = base;
        for _ in 0..opt_steps {
            let (gm, gv) = self.elbo_posterior_gradient(&xs, &post);
            let norm = gm.iter().chain(&gv).map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(LencError::Scoring("posterior optimization diverged".into()));
            }
            let clip = if norm > MAX_STEP_NORM { MAX_STEP_NORM / norm } else { 1.0 };
            for j in 0..self.latent_dim {
                post.mean[j] += opt_lr * clip * gm[j];
                post.log_var[j] = (post.log_var[j] + opt_lr * clip * gv[j])
                    .clamp(LOG_VAR_BOUNDS.0, LOG_VAR_BOUNDS.1);
            }
            let v = self.elbo_standardized(&xs, &post);
            if !v.is_finite() {
                return Err(LencError::Scoring("posterior optimization diverged".into()));
            }
            if v > best {
                best = v;
            }
        }
        Ok(best - base)
    }

    fn param_count(&self) -> usize {
        self.enc_hidden.param_count()
            + self.enc_out.param_count()
            + self.dec_hidden.param_count()
            + self.dec_out.param_count()
    }

    fn layers(&self) -> [&Dense; 4] {
        [&self.enc_hidden, &self.enc_out, &self.dec_hidden, &self.dec_out]
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in [&mut self.enc_hidden, &mut self.enc_out, &mut self.dec_hidden, &mut self.dec_out] {
            let nw = l.weights.len();
            let nb = l.bias.len();
            l.weights.copy_from_slice(&p[at..at + nw]);
            l.bias.copy_from_slice(&p[at + nw..at + nw + nb]);
            at += nw + nb;
        }
    }

    /// Accumulates the gradient of the negative single-draw ELBO.
    fn neg_elbo_gradient(&self, xs: &[f64], eps: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.latent_dim;
        let n_eh = self.enc_hidden.param_count();
        let n_eo = self.enc_out.param_count();
        let (g_enc, g_dec) = grad.split_at_mut(n_eh + n_eo);
        let (g_eh, g_eo) = g_enc.split_at_mut(n_eh);

        let h: Vec<f64> = self.enc_hidden.forward(xs).into_iter().map(f64::tanh).collect();
        let out = self.enc_out.forward(&h);
        let post = EncoderOutput {
            mean: out[..l].to_vec(),
            log_var: out[l..].iter().map(|v| v.clamp(LOG_VAR_BOUNDS.0, LOG_VAR_BOUNDS.1)).collect(),
        };
        let z = reparam(&post, eps);
        let xhat = self.decode(&z);
        let loss = -self.log_likelihood(xs, &xhat) + kl_to_standard_normal(&post);
        let var = self.decoder_log_var.exp();
        let dxhat: Vec<f64> = xhat.iter().zip(xs).map(|(h, x)| (h - x) / var).collect();
        let dz = self.decoder_backward(&z, &dxhat, Some(g_dec));
        let mut dout = vec![0.0; 2 * l];
        for j in 0..l {
            dout[j] = dz[j] + post.mean[j];
            let inside = out[l + j] > LOG_VAR_BOUNDS.0 && out[l + j] < LOG_VAR_BOUNDS.1;
            if inside {
                let std = (0.5 * post.log_var[j]).exp();
                dout[l + j] = dz[j] * eps[j] * 0.5 * std + 0.5 * (post.log_var[j].exp() - 1.0);
            }
        }
        let mut dh = vec![0.0; h.len()];
        self.enc_out.backward(&h, &dout, g_eo, Some(&mut dh));
        let da: Vec<f64> = dh.iter().zip(&h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
        self.enc_hidden.backward(xs, &da, g_eh, None);
        loss
    }

    pub fn encode_bytes(&self) -> Vec<u8> {
        let mut desc = Encoder::new();
        desc.u64(self.input_dim as u64)
            .u64(self.latent_dim as u64)
            .u64(self.enc_hidden.outputs as u64)
            .f64(self.decoder_log_var)
            .bool(self.trained)
            .bool(self.unreliable)
            .u64(self.train_size as u64);
        let mut std = Encoder::new();
        std.f64s(&self.shift).f64s(&self.scale);
        let mut params = Encoder::new();
        params.f64s(&self.params());
        let mut eps = Encoder::new();
        crate::data::encode_rows(&mut eps, &self.score_eps);
        let mut env = Envelope::new(Kind::Vae);
        env.push(1, desc.finish())
            .push(2, std.finish())
            .push(3, params.finish())
            .push(4, eps.finish());
        env.encode()
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<Self> {
        let env = Envelope::decode_kind(bytes, Kind::Vae)?;
        let mut d = Decoder::new(env.section(1, "vae.descriptor")?);
        let input_dim = d.usize("vae.input_dim")?;
        let latent_dim = d.usize("vae.latent_dim")?;
        let hidden = d.usize("vae.hidden")?;
        let decoder_log_var = d.f64("vae.decoder_log_var")?;
        let trained = d.bool("vae.trained")?;
        let unreliable = d.bool("vae.unreliable")?;
        let train_size = d.usize("vae.train_size")?;
        d.expect_done("vae.descriptor")?;
        let cfg = VaeConfig {
            latent_dim,
            hidden,
            decoder_std: (0.5 * decoder_log_var).exp(),
            ..VaeConfig::default()
        };
        let mut m = VaeModel::init(input_dim, &cfg, 0).map_err(|e| LencError::Snapshot {
            field: "vae.descriptor".into(),
            reason: e.to_string(),
        })?;
        m.decoder_log_var = decoder_log_var;
        m.trained = trained;
        m.unreliable = unreliable;
        m.train_size = train_size;
        let mut d = Decoder::new(env.section(2, "vae.standardizer")?);
        m.shift = d.f64s("vae.shift")?;
        m.scale = d.f64s("vae.scale")?;
        if m.shift.len() != input_dim || m.scale.len() != input_dim {
            return Err(LencError::Snapshot {
                field: "vae.standardizer".into(),
                reason: "length differs from input_dim".into(),
            });
        }
        let mut d = Decoder::new(env.section(3, "vae.params")?);
        let p = d.f64s("vae.params")?;
        if p.len() != m.param_count() {
            return Err(LencError::Snapshot {
                field: "vae.params".into(),
                reason: format!("expected {} values, found {}", m.param_count(), p.len()),
            });
        }
        m.set_params(&p);
        let mut d = Decoder::new(env.section(4, "vae.score_eps")?);
        m.score_eps = crate::data::decode_rows(&mut d, "vae.score_eps")?;
        if m.score_eps.is_empty() || m.score_eps.iter().any(|e| e.len() != latent_dim) {
            return Err(LencError::Snapshot {
                field: "vae.score_eps".into(),
                reason: "draws must be non-empty with latent_dim entries".into(),
            });
        }
        Ok(m)
    }
}

/// Gradient norm cap for each posterior ascent step.
const MAX_STEP_NORM: f64 = 10.0;

fn reparam(post: &EncoderOutput, eps: &[f64]) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// KL(N(μ, diag σ²) ‖ N(0, I)).
pub fn kl_to_standard_normal(post: &EncoderOutput) -> f64 {
    0.5 * post
        .mean
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Fits a VAE by SGD on the negative ELBO with one fresh reparameterization
/// draw per input per step.
pub fn train_vae(inputs: &[Vec<f64>], cfg: &VaeConfig, seed: u64) -> Result<VaeModel> {
    let first = inputs
        .first()
        .ok_or_else(|| LencError::EmptyDataset("VAE training set is empty".into()))?;
    let dim = first.len();
    let mut model = VaeModel::init(dim, cfg, seed)?;
    let n = inputs.len() as f64;
    for j in 0..dim {
        let mean = inputs.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = inputs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        model.shift[j] = mean;
        model.scale[j] = var.sqrt().max(1e-6);
    }
    model.train_size = inputs.len();
    model.unreliable = inputs.len() < cfg.min_train_size;
    if model.unreliable {
        log::warn!(
            "unreliable detector: trained on {} points (< {})",
            inputs.len(),
            cfg.min_train_size
        );
    }
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let data: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| model.standardize(x))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a3e);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; model.param_count()];
            let mut loss = 0.0;
            for &i in chunk {
                let eps: Vec<f64> = (0..model.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
                loss += model.neg_elbo_gradient(&data[i], &eps, &mut grad);
            }
            let m = chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g /= m);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LencError::Divergence("VAE training produced non-finite values".into()));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let k = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            let mut p = model.params();
            opt.step(&mut p, &grad);
            model.set_params(&p);
        }
    }
    model.trained = true;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blob(seed: u64, n: usize, center: [f64; 2], sigma: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| vec![center[0] + rng.sample(nd), center[1] + rng.sample(nd)])
            .collect()
    }

    fn quick_cfg() -> VaeConfig {
        VaeConfig {
            epochs: 30,
            min_train_size: 100,
            ..VaeConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = blob(1, 50, [1.0, 2.0], 1.0);
        let cfg = VaeConfig {
            epochs: 0,
            ..VaeConfig::default()
        };
        let m = train_vae(&data, &cfg, 9).unwrap();
        let init = VaeModel::init(2, &cfg, 9).unwrap();
        assert_eq!(m.params(), init.params());
        assert!(!m.trained);
        assert!(m.likelihood_regret(&data[0], 5, 0.05).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blob(2, 200, [0.0, 0.0], 1.0);
        let a = train_vae(&data, &quick_cfg(), 5).unwrap();
        let b = train_vae(&data, &quick_cfg(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn training_improves_mean_elbo() {
        let data = blob(3, 400, [3.0, -1.0], 1.0);
        let cfg = VaeConfig {
            epochs: 50,
            ..VaeConfig::default()
        };
        let mut init = train_vae(&data, &VaeConfig { epochs: 0, ..cfg.clone() }, 4).unwrap();
        init.trained = true;
        let trained = train_vae(&data, &cfg, 4).unwrap();
        let before = init.mean_elbo(&data).unwrap();
        let after = trained.mean_elbo(&data).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn small_training_set_is_flagged_unreliable() {
        let data = blob(4, 120, [0.0, 0.0], 1.0);
        let m = train_vae(&data, &VaeConfig { epochs: 1, ..VaeConfig::default() }, 1).unwrap();
        assert!(m.unreliable);
        let m = train_vae(&data, &VaeConfig { epochs: 1, min_train_size: 100, ..VaeConfig::default() }, 1)
            .unwrap();
        assert!(!m.unreliable);
    }

    #[test]
    fn perfect_reconstruction_with_prior_posterior() {
        // Decoder that outputs exactly the standardized input regardless of z.
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: 2,
            ..VaeConfig::default()
        };
        let mut m = VaeModel::init(2, &cfg, 0).unwrap();
        let x = [0.4, -1.1];
        m.dec_hidden = Dense::zeros(2, 2);
        m.dec_out = Dense {
            inputs: 2,
            outputs: 2,
            weights: vec![0.0; 4],
            bias: x.to_vec(),
        };
        let post = EncoderOutput {
            mean: vec![0.0; 2],
            log_var: vec![0.0; 2],
        };
        assert_eq!(kl_to_standard_normal(&post), 0.0);
        let v = m.elbo(&x, &post).unwrap();
        let max_rec = -(m.decoder_log_var + LN_2PI);
        assert!((v - max_rec).abs() < 1e-12);
        // Any other decoder output lowers the reconstruction term.
        m.dec_out.bias[0] += 0.1;
        assert!(m.elbo(&x, &post).unwrap() < v);
    }

    /// Formula-level oracle on a hand-specified 2-2-2 VAE.
    #[test]
    fn elbo_matches_hand_evaluated_oracle() {
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: 2,
            score_samples: 2,
            decoder_std: 0.5,
            ..VaeConfig::default()
        };
        let mut m = VaeModel::init(2, &cfg, 0).unwrap();
        m.shift = vec![1.0, -1.0];
        m.scale = vec![2.0, 0.5];
        m.dec_hidden = Dense {
            inputs: 2,
            outputs: 2,
            weights: vec![0.5, -0.3, 0.2, 0.8],
            bias: vec![0.1, -0.2],
        };
        m.dec_out = Dense {
            inputs: 2,
            outputs: 2,
            weights: vec![1.2, 0.0, -0.4, 0.9],
            bias: vec![0.05, 0.0],
        };
        m.score_eps = vec![vec![0.3, -1.2], vec![-0.7, 0.5]];
        let x = [2.0, -0.5];
        let post = EncoderOutput {
            mean: vec![0.2, -0.1],
            log_var: vec![-0.5, 0.3],
        };

        let xs = [(2.0 - 1.0) / 2.0, (-0.5 + 1.0) / 0.5];
        let var = 0.25f64;
        let mut rec = 0.0;
        for eps in [[0.3, -1.2], [-0.7, 0.5]] {
            let z1 = 0.2 + (-0.25f64).exp() * eps[0];
            let z2 = -0.1 + (0.15f64).exp() * eps[1];
            let g1 = (0.5 * z1 - 0.3 * z2 + 0.1).tanh();
            let g2 = (0.2 * z1 + 0.8 * z2 - 0.2).tanh();
            let o1 = 1.2 * g1 + 0.05;
            let o2 = -0.4 * g1 + 0.9 * g2;
            let lp = |x: f64, mu: f64| {
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).powi(2) / (2.0 * var)
            };
            rec += 0.5 * (lp(xs[0], o1) + lp(xs[1], o2));
        }
        let kl = 0.5 * (((-0.5f64).exp() + 0.04 - 1.0 + 0.5) + ((0.3f64).exp() + 0.01 - 1.0 - 0.3));
        let oracle = rec - kl;
        assert!((m.elbo(&x, &post).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn elbo_decreases_away_from_training_data() {
        let data = blob(5, 500, [0.0, 0.0], 1.0);
        let m = train_vae(&data, &VaeConfig { min_train_size: 100, ..VaeConfig::default() }, 2).unwrap();
        let values: Vec<f64> = [0.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|r| {
                let x = [r * 0.6, r * 0.8];
                m.elbo(&x, &m.encode(&x).unwrap()).unwrap()
            })
            .collect();
        for w in values.windows(2) {
            assert!(w[1] < w[0], "{values:?}");
        }
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let data = blob(6, 200, [1.0, 1.0], 1.0);
        let m = train_vae(&data, &quick_cfg(), 3).unwrap();
        let xs = m.standardize(&[2.5, -0.5]).unwrap();
        let post = m.encode_standardized(&xs);
        let (gm, gv) = m.elbo_posterior_gradient(&xs, &post);
        let h = 1e-5;
        for j in 0..m.latent_dim {
            let mut p = post.clone();
            p.mean[j] += h;
            let up = m.elbo_standardized(&xs, &p);
            p.mean[j] -= 2.0 * h;
            let dn = m.elbo_standardized(&xs, &p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gm[j]).abs() < 1e-5 * fd.abs().max(1.0), "mean {j}: {fd} vs {}", gm[j]);
            let mut p = post.clone();
            p.log_var[j] += h;
            let up = m.elbo_standardized(&xs, &p);
            p.log_var[j] -= 2.0 * h;
            let dn = m.elbo_standardized(&xs, &p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gv[j]).abs() < 1e-5 * fd.abs().max(1.0), "logvar {j}: {fd} vs {}", gv[j]);
        }
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        let data = blob(7, 100, [0.0, 0.0], 1.0);
        let m = train_vae(&data, &VaeConfig { epochs: 3, ..quick_cfg() }, 8).unwrap();
        let xs = m.standardize(&[0.7, -1.4]).unwrap();
        let eps = [0.4, -0.9];
        let mut grad = vec![0.0; m.param_count()];
        m.neg_elbo_gradient(&xs, &eps, &mut grad);
        let p0 = m.params();
        let h = 1e-6;
        for i in (0..p0.len()).step_by(3) {
            let mut mm = m.clone();
            let mut p = p0.clone();
            p[i] += h;
            mm.set_params(&p);
            let up = mm.neg_elbo_gradient(&xs, &eps, &mut vec![0.0; p0.len()]);
            p[i] -= 2.0 * h;
            mm.set_params(&p);
            let dn = mm.neg_elbo_gradient(&xs, &eps, &mut vec![0.0; p0.len()]);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn likelihood_regret_properties() {
        let data = blob(8, 600, [0.0, 0.0], 1.0);
        let m = train_vae(&data, &VaeConfig { min_train_size: 100, ..VaeConfig::default() }, 4).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(m.likelihood_regret(&x, 10, 0.0).unwrap(), 0.0);
        assert!(m.likelihood_regret(&x, 0, 0.05).is_err());
        for p in data.iter().take(20) {
            assert!(m.likelihood_regret(p, 30, 0.05).unwrap() >= -1e-6);
        }
        let held_out = blob(9, 50, [0.0, 0.0], 1.0);
        let far = blob(10, 50, [10.0 * 0.6, 10.0 * 0.8], 1.0);
        let mean = |pts: &[Vec<f64>]| {
            pts.iter().map(|p| m.likelihood_regret(p, 30, 0.05).unwrap()).sum::<f64>() / pts.len() as f64
        };
        let (id, ood) = (mean(&held_out), mean(&far));
        assert!(id < ood, "id {id} ood {ood}");
    }

    #[test]
    fn snapshot_round_trip() {
        let data = blob(11, 100, [0.0, 1.0], 2.0);
        let m = train_vae(&data, &VaeConfig { epochs: 2, ..VaeConfig::default() }, 1).unwrap();
        let back = VaeModel::decode_bytes(&m.encode_bytes()).unwrap();
        assert_eq!(back, m);
        let bytes = m.encode_bytes();
        assert!(VaeModel::decode_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}

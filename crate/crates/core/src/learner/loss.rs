use crate::error::{LencError, Result};

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A loss value and whether the probability floor had to be applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Floored {
    pub value: f64,
    pub clamped: bool,
}

pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(LencError::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(LencError::InvalidParameter("logits must be finite".into()));
    }
    Ok(softmax_unchecked(logits, temperature))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// −ln p[label].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<Floored> {
    let p = *probs.get(label).ok_or_else(|| {
        LencError::InvalidParameter(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    let clamped = p < PROB_FLOOR;
    Ok(Floored {
        value: -p.max(PROB_FLOOR).ln(),
        clamped,
    })
}

/// Σ p_i ln(p_i / q_i), with 0·ln 0 = 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<Floored> {
    if p.len() != q.len() {
        return Err(LencError::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut clamped = false;
    let mut value = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi < PROB_FLOOR {
            clamped = true;
        }
        value += pi * (pi.ln() - qi.max(PROB_FLOOR).ln());
    }
    Ok(Floored { value, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let u = softmax_with_temperature(&[0.7, 0.7, 0.7], 3.0).unwrap();
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_with_temperature(&[2.0, 0.0], 1.0).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.8808).abs() < 1e-3 && (p[1] - 0.1192).abs() < 1e-3);
        let hot = softmax_with_temperature(&[2.0, 0.0], 1e6).unwrap();
        assert!((hot[0] - 0.5).abs() < 1e-5 && (hot[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_with_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_with_temperature(&[1.0], -2.0).is_err());
        assert!(softmax_with_temperature(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_with_temperature(&[1000.0, 999.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap().value, 0.0);
        let ce = cross_entropy(&[0.5, 0.5], 0).unwrap().value;
        assert!((ce - 2f64.ln()).abs() < 1e-12 && (ce - 0.6931).abs() < 1e-4);
        let ce = cross_entropy(&[0.25; 4], 3).unwrap().value;
        assert!((ce - 4f64.ln()).abs() < 1e-12 && (ce - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_floor_is_flagged() {
        let r = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!(r.clamped);
        assert!((r.value - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(cross_entropy(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.3, 0.2, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap().value, 0.0);
        let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap().value;
        let oracle = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - oracle).abs() < 1e-12 && (kl - 0.1438).abs() < 1e-3);
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap().value;
        assert!((kl - 0.6931).abs() < 1e-3);
    }

    #[test]
    fn kl_floor_is_flagged() {
        let r = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(r.clamped && r.value.is_finite());
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_permutation_equivariant(
            logits in prop::collection::vec(-50.0f64..50.0, 2..8),
            t in 0.05f64..20.0,
            rot in 0usize..8,
        ) {
            let p = softmax_with_temperature(&logits, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            let k = rot % logits.len();
            let mut rotated = logits.clone();
            rotated.rotate_left(k);
            let mut pr = p.clone();
            pr.rotate_left(k);
            let q = softmax_with_temperature(&rotated, t).unwrap();
            for (a, b) in q.iter().zip(&pr) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_nonnegative(p in distribution(5), q in distribution(5)) {
            let q: Vec<f64> = q.iter().map(|v| (v + 1e-6) / (1.0 + 5e-6)).collect();
            let kl = kl_divergence(&p, &q).unwrap().value;
            prop_assert!(kl >= -1e-9);
            prop_assert!(kl_divergence(&p, &p).unwrap().value.abs() < 1e-12);
        }
    }
}

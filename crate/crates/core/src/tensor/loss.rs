//! Binary cross-entropy and the heteroscedastic Gaussian negative log likelihood.

use super::check_finite;
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;
pub const LOG_VAR_MIN: f64 = -12.0;
pub const LOG_VAR_MAX: f64 = 6.0;

/// Mean BCE over the batch and its gradient w.r.t. each prediction.
/// Predictions are clamped to `[1e-7, 1 − 1e-7]`; the gradient is zero
/// where the clamp is active.
pub fn bce_loss(q: &[f64], s: &[f64]) -> Result<(f64, Vec<f64>)> {
    if q.len() != s.len() || q.is_empty() {
        return Err(Error::Shape(format!("bce over {} predictions and {} labels", q.len(), s.len())));
    }
    check_finite(q, "bce prediction")?;
    let n = q.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(q.len());
    for (&qi, &si) in q.iter().zip(s) {
        let qc = qi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= si * qc.ln() + (1.0 - si) * (1.0 - qc).ln();
        let inside = qi > PROB_CLAMP && qi < 1.0 - PROB_CLAMP;
        grad.push(if inside { (-si / qc + (1.0 - si) / (1.0 - qc)) / n } else { 0.0 });
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllGrads {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// `Σ_j [log σ²_j + (t_j − μ_j)²/σ²_j]` per sample, averaged over the batch.
/// Slices hold `dims` values per sample; `log_var` is clamped to
/// `[-12, 6]` with zero gradient outside.
pub fn gaussian_nll_loss(mu: &[f64], log_var: &[f64], target: &[f64], dims: usize) -> Result<(f64, NllGrads)> {
    if mu.len() != log_var.len() || mu.len() != target.len() || dims == 0 || mu.len() % dims != 0 || mu.is_empty() {
        return Err(Error::Shape(format!(
            "nll over {} means, {} log-variances, {} targets",
            mu.len(),
            log_var.len(),
            target.len()
        )));
    }
    check_finite(mu, "nll mean")?;
    check_finite(log_var, "nll log-variance")?;
    check_finite(target, "nll target")?;
    let n = (mu.len() / dims) as f64;
    let mut loss = 0.0;
    let mut g_mu = Vec::with_capacity(mu.len());
    let mut g_lv = Vec::with_capacity(mu.len());
    for ((&m, &lv), &t) in mu.iter().zip(log_var).zip(target) {
        let lvc = lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        let inv = (-lvc).exp();
        let r = t - m;
        loss += lvc + r * r * inv;
        g_mu.push(-2.0 * r * inv / n);
        let inside = lv > LOG_VAR_MIN && lv < LOG_VAR_MAX;
        g_lv.push(if inside { (1.0 - r * r * inv) / n } else { 0.0 });
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NumericFault(format!("nll loss evaluated to {loss}")));
    }
    Ok((loss, NllGrads { mu: g_mu, log_var: g_lv }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_half_is_ln2() {
        for s in [0.0, 1.0] {
            let (l, _) = bce_loss(&[0.5], &[s]).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_clamp_bounds_loss() {
        let (l, g) = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l <= -(1.0 - PROB_CLAMP).ln() + 1e-18);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, _) = bce_loss(&[0.0], &[1.0]).unwrap();
        assert!((l + PROB_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let q = [0.2, 0.7, 0.45];
        let s = [1.0, 0.0, 1.0];
        let (_, g) = bce_loss(&q, &s).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (bce_loss(&qp, &s).unwrap().0 - bce_loss(&qm, &s).unwrap().0) / (2.0 * h);
            assert!(((fd - g[i]) / g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn nll_direct_substitution() {
        let (l, _) = gaussian_nll_loss(&[0.0; 4], &[0.0; 4], &[0.0; 4], 4).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = gaussian_nll_loss(&[0.0], &[0.0], &[2.0], 1).unwrap();
        assert!((l - 4.0).abs() < 1e-15);
    }

    #[test]
    fn nll_optimum_at_squared_residual() {
        let r: f64 = 0.3;
        let f = |lv: f64| gaussian_nll_loss(&[0.0], &[lv], &[r], 1).unwrap().0;
        let best = (r * r).ln();
        assert!((f(best) - (best + 1.0)).abs() < 1e-12);
        assert!(f(best + 0.01) > f(best) && f(best - 0.01) > f(best));
        let (_, g) = gaussian_nll_loss(&[0.0], &[best], &[r], 1).unwrap();
        assert!(g.log_var[0].abs() < 1e-12);
    }

    #[test]
    fn nll_gradients_are_exact() {
        let mu = [0.1, -0.4, 0.3, 0.0, 0.2, 0.5];
        let lv = [-0.5, 0.2, 1.0, -2.0, 0.0, 0.7];
        let t = [0.3, 0.1, -0.2, 0.05, -0.1, 0.4];
        let (_, g) = gaussian_nll_loss(&mu, &lv, &t, 3).unwrap();
        for i in 0..6 {
            // ∂/∂μ = −2r/σ² / N, ∂/∂logσ² = (1 − r²/σ²) / N with N = 2
            let r = t[i] - mu[i];
            let inv = (-lv[i] as f64).exp();
            assert!((g.mu[i] - (-2.0 * r * inv / 2.0)).abs() < 1e-15);
            assert!((g.log_var[i] - (1.0 - r * r * inv) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nll_rejects_non_finite() {
        assert!(matches!(gaussian_nll_loss(&[f64::NAN], &[0.0], &[0.0], 1), Err(Error::NumericFault(_))));
        assert!(gaussian_nll_loss(&[0.0; 3], &[0.0; 3], &[0.0; 3], 2).is_err());
    }

    #[test]
    fn nll_clamps_log_variance() {
        let (l, g) = gaussian_nll_loss(&[0.0], &[20.0], &[0.0], 1).unwrap();
        assert_eq!(l, LOG_VAR_MAX);
        assert_eq!(g.log_var[0], 0.0);
    }
}

//! Central finite-difference verification of analytic gradients.

use super::Tensor;
use crate::error::Result;

/// A scalar objective over a fixed parameter list.
pub trait Objective {
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Loss only; must be deterministic (no dropout).
    fn loss(&mut self) -> Result<f64>;
    /// Loss with gradients accumulated into freshly zeroed parameter buffers.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

/// Relative error used by [`grad_check`]; tiny magnitudes are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Max relative error between analytic gradients and central differences
/// over every parameter entry.
pub fn grad_check(obj: &mut impl Objective, eps: f64) -> Result<f64> {
    for p in obj.params_mut() {
        p.grad_mut();
        p.zero_grad();
    }
    obj.loss_and_grad()?;
    let analytic: Vec<Vec<f64>> = obj
        .params_mut()
        .iter()
        .map(|p| p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = obj.params_mut()[pi].data()[i];
            obj.params_mut()[pi].data_mut()[i] = orig + eps;
            let up = obj.loss()?;
            obj.params_mut()[pi].data_mut()[i] = orig - eps;
            let down = obj.loss()?;
            obj.params_mut()[pi].data_mut()[i] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

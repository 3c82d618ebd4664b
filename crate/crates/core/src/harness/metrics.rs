//! Displacement error metrics.

use crate::error::{Error, Result};
use crate::geom::wrap_pi;
use crate::physics::Displacement;

/// Translational RMSE of the 3D offset (cm) and rotational RMSE of the
/// wrapped angle error (deg).
pub fn rmse_metrics(predictions: &[Displacement], truth: &[Displacement]) -> Result<(f64, f64)> {
    if predictions.len() != truth.len() {
        return Err(Error::RejectedInput(format!(
            "{} predictions for {} ground-truth displacements",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::RejectedInput("no displacements to compare".into()));
    }
    let n = predictions.len() as f64;
    let (mut t, mut r) = (0.0, 0.0);
    for (p, g) in predictions.iter().zip(truth) {
        t += (p.dx - g.dx).powi(2) + (p.dy - g.dy).powi(2) + (p.dz - g.dz).powi(2);
        r += wrap_pi(p.dtheta - g.dtheta).powi(2);
    }
    Ok(((t / n).sqrt() * 100.0, (r / n).sqrt().to_degrees()))
}

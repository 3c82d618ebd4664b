//! Affine normalization of network inputs and targets.

use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicU64, Ordering};

/// Half ranges of (translation x, translation y, grasp height, closing angle).
pub const ACTION_HALF_RANGE: [f64; 4] = [0.075, 0.075, 0.08, FRAC_PI_2];
/// Divisors of (Δx, Δy, Δz, Δθ).
pub const TARGET_SCALE: [f64; 4] = [0.05, 0.05, 0.05, FRAC_PI_2];

/// Maps action components into [-1, 1], clipping (and counting) anything
/// outside the configured ranges.
#[derive(Debug, Default)]
pub struct ActionScaler {
    clipped: AtomicU64,
}

impl Clone for ActionScaler {
    fn clone(&self) -> Self {
        ActionScaler {
            clipped: AtomicU64::new(self.clipped()),
        }
    }
}

impl PartialEq for ActionScaler {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl ActionScaler {
    pub fn clipped(&self) -> u64 {
        self.clipped.load(Ordering::Relaxed)
    }

    /// Scales the first `g.len()` components (at most 4).
    pub fn scale(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(ACTION_HALF_RANGE)
            .map(|(&v, h)| {
                let s = v / h;
                if s.abs() > 1.0 {
                    self.clipped.fetch_add(1, Ordering::Relaxed);
                    s.clamp(-1.0, 1.0)
                } else {
                    s
                }
            })
            .collect()
    }

    pub fn unscale(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(ACTION_HALF_RANGE).map(|(&v, h)| v * h).collect()
    }
}

pub fn scale_target(d: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| d[i] / TARGET_SCALE[i])
}

/// Physical mean and variance from scaled network outputs.
pub fn unscale_prediction(mu: [f64; 4], var: Option<[f64; 4]>) -> ([f64; 4], Option<[f64; 4]>) {
    (
        std::array::from_fn(|i| mu[i] * TARGET_SCALE[i]),
        var.map(|v| std::array::from_fn(|i| v[i] * TARGET_SCALE[i] * TARGET_SCALE[i])),
    )
}

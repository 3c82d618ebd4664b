//! RMSProp with inverse-time learning-rate decay.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub rho: f64,
    pub eps: f64,
    step: u64,
    acc: Vec<Vec<f64>>,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp::new(1e-5, 1e-6)
    }
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64) -> RmsProp {
        RmsProp {
            lr,
            decay,
            rho: 0.9,
            eps: 1e-8,
            step: 0,
            acc: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate applied at update number `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr / (1.0 + self.decay * step as f64)
    }

    /// One update from the gradient buffers of `params`. Parameters without
    /// a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.acc.is_empty() {
            self.acc = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.acc.len() != params.len() || self.acc.iter().zip(params.iter()).any(|(a, p)| a.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        let lr = self.lr_at(self.step);
        for (acc, p) in self.acc.iter_mut().zip(params.iter_mut()) {
            let Some(g) = p.grad().map(|g| g.to_vec()) else { continue };
            for ((a, w), g) in acc.iter_mut().zip(p.data_mut()).zip(&g) {
                *a = self.rho * *a + (1.0 - self.rho) * g * g;
                *w -= lr * g / (*a + self.eps).sqrt();
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = Tensor::from_fn(&[3], |i| i as f64);
        p.grad_mut();
        let before = p.clone();
        let mut opt = RmsProp::new(0.1, 0.0);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn first_step_hand_evaluated() {
        let g = 0.37;
        let mut p = Tensor::new(&[1], vec![1.0]).unwrap();
        p.accumulate_grad(&[g]).unwrap();
        let mut opt = RmsProp::default();
        opt.step(&mut [&mut p]).unwrap();
        let expect = 1.0 - 1e-5 * g / ((1.0 - 0.9) * g * g + 1e-8).sqrt();
        assert!((p.data()[0] - expect).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn learning_rate_decreases() {
        let opt = RmsProp::default();
        for t in 0..100 {
            assert!(opt.lr_at(t + 1) < opt.lr_at(t));
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut a = Tensor::zeros(&[2]);
        let mut b = Tensor::zeros(&[3]);
        let mut opt = RmsProp::default();
        opt.step(&mut [&mut a]).unwrap();
        assert!(opt.step(&mut [&mut b]).is_err());
    }
}

//! Minibatch training loops, batched inference and gradient checking of
//! the network heads.

use rand::seq::SliceRandom;
use rand::Rng;

use super::net::{GraspNet, NetSpec};
use super::Samples;
use crate::error::{Error, Result};
use crate::rng::{mix, mix3, rng, stream};
use crate::tensor::gradcheck::{grad_check, Objective};
use crate::tensor::loss::{bce_loss, gaussian_nll_loss};
use crate::tensor::ops::{sigmoid_scalar, Mode};
use crate::tensor::optim::RmsProp;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 100 epochs, RMSProp at 1e-5 with decay 1e-6, batches of 32.
    pub fn paper() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-5,
            lr_decay: 1e-6,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_decay >= 0.0) {
            return Err(Error::Configuration(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

/// Output head and its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// One logit, sigmoid, binary cross-entropy.
    Quality,
    /// Four means, Gaussian NLL with unit variance.
    Mean,
    /// Four means and four log-variances, Gaussian NLL.
    MeanVar,
}

impl Head {
    pub fn dim(self) -> usize {
        match self {
            Head::Quality => 1,
            Head::Mean => 4,
            Head::MeanVar => 8,
        }
    }

    pub fn target_dim(self) -> usize {
        match self {
            Head::Quality => 1,
            _ => 4,
        }
    }
}

/// Batch loss and the gradient w.r.t. the raw head outputs.
pub fn head_loss(head: Head, out: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    let n = out.shape()[0];
    if targets.len() != n * head.target_dim() || out.shape()[1] != head.dim() {
        return Err(Error::Shape(format!("head {head:?} output {:?} with {} targets", out.shape(), targets.len())));
    }
    match head {
        Head::Quality => {
            let q: Vec<f64> = out.data().iter().map(|&z| sigmoid_scalar(z)).collect();
            let (loss, dq) = bce_loss(&q, targets)?;
            let dz = q.iter().zip(&dq).map(|(q, g)| g * q * (1.0 - q)).collect();
            Ok((loss, Tensor::new(out.shape(), dz)?))
        }
        Head::Mean | Head::MeanVar => {
            let d = head.dim();
            let mu: Vec<f64> = out.data().chunks(d).flat_map(|r| r[..4].to_vec()).collect();
            let lv: Vec<f64> = if head == Head::MeanVar {
                out.data().chunks(d).flat_map(|r| r[4..].to_vec()).collect()
            } else {
                vec![0.0; mu.len()]
            };
            let (loss, g) = gaussian_nll_loss(&mu, &lv, targets, 4)?;
            let mut grad = Vec::with_capacity(out.len());
            for i in 0..n {
                grad.extend_from_slice(&g.mu[i * 4..(i + 1) * 4]);
                if head == Head::MeanVar {
                    grad.extend_from_slice(&g.log_var[i * 4..(i + 1) * 4]);
                }
            }
            Ok((loss, Tensor::new(out.shape(), grad)?))
        }
    }
}

/// Raw head outputs for every sample, in eval mode.
pub fn infer(net: &GraspNet, samples: &Samples) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(samples.len() * net.spec().head_dim);
    let rows: Vec<usize> = (0..samples.len()).collect();
    let mut r = rng(0);
    for chunk in rows.chunks(CHUNK) {
        let (img, act, _) = samples.batch(chunk);
        let (y, _) = net.forward(&img, &act, Mode::Eval, &mut r)?;
        out.extend_from_slice(y.data());
    }
    Ok(out)
}

fn check_compat(net: &GraspNet, head: Head, s: &Samples) -> Result<()> {
    let spec = net.spec();
    if s.image_side != spec.image_side || s.action_dim != spec.action_dim || spec.head_dim != head.dim() {
        return Err(Error::Shape(format!(
            "samples (side {}, action {}) do not fit network {spec:?} with head {head:?}",
            s.image_side, s.action_dim
        )));
    }
    if s.target_dim != head.target_dim() {
        return Err(Error::Shape(format!("{} targets per sample for head {head:?}", s.target_dim)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches (training mode).
    pub loss: f64,
    /// Running accuracy of the training-mode predictions, quality head only.
    pub train_accuracy: Option<f64>,
}

/// Runs `cfg.epochs` epochs of shuffled minibatch RMSProp, calling
/// `on_epoch` after each.
pub fn train_loop(
    net: &mut GraspNet,
    head: Head,
    train: &Samples,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(EpochSummary, &GraspNet) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::RejectedInput("empty training data".into()));
    }
    check_compat(net, head, train)?;
    let mut opt = RmsProp::new(cfg.lr, cfg.lr_decay);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng(mix3(cfg.seed, stream::SHUFFLE, epoch as u64)));
        let mut total = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (img, act, tgt) = train.batch(batch);
            let mut r = rng(mix3(cfg.seed, stream::DROPOUT, step));
            let (out, cache) = net.forward(&img, &act, Mode::Train, &mut r)?;
            let (loss, d_out) = head_loss(head, &out, &tgt)?;
            if head == Head::Quality {
                correct += out.data().iter().zip(&tgt).filter(|(z, t)| (**z >= 0.0) == (**t >= 0.5)).count();
            }
            net.zero_grads();
            net.backward(&cache, &d_out)?;
            opt.step(&mut net.params_mut())?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        let summary = EpochSummary {
            epoch,
            loss: total / train.len() as f64,
            train_accuracy: (head == Head::Quality).then(|| correct as f64 / train.len() as f64),
        };
        on_epoch(summary, net)?;
    }
    Ok(())
}

/// Eval-mode loss of a network head on a fixed batch.
pub struct HeadObjective {
    pub net: GraspNet,
    pub head: Head,
    pub images: Vec<f64>,
    pub actions: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Objective for HeadObjective {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let (out, _) = self.net.forward(&self.images, &self.actions, Mode::Eval, &mut rng(0))?;
        Ok(head_loss(self.head, &out, &self.targets)?.0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let (out, cache) = self.net.forward(&self.images, &self.actions, Mode::Eval, &mut rng(0))?;
        let (loss, d) = head_loss(self.head, &out, &self.targets)?;
        self.net.zero_grads();
        self.net.backward(&cache, &d)?;
        Ok(loss)
    }
}

/// Finite-difference check of a shrunken network with the given head on a
/// random batch of three samples; returns the max relative error.
pub fn grad_check_head(head: Head, action_dim: usize, seed: u64) -> Result<f64> {
    let spec = NetSpec::shrunken(action_dim, head.dim());
    let mut net = GraspNet::new(spec, mix(seed, stream::INIT))?;
    let mut r = rng(seed);
    // small random biases keep pre-activations away from the ReLU kink
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.1..0.1));
        }
    }
    let n = 3;
    let side = spec.image_side;
    let images = (0..n * side * side).map(|_| r.random_range(-1.0..1.0)).collect();
    let actions = (0..n * action_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let targets = match head {
        Head::Quality => (0..n).map(|i| (i % 2) as f64).collect(),
        _ => (0..n * 4).map(|_| r.random_range(-1.0..1.0)).collect(),
    };
    let mut obj = HeadObjective {
        net,
        head,
        images,
        actions,
        targets,
    };
    grad_check(&mut obj, 1e-5)
}

/// Per-dimension root mean square of `pred − target` over rows of 4.
pub fn rmse4(pred: &[[f64; 4]], target: &[[f64; 4]]) -> [f64; 4] {
    let n = pred.len().max(1) as f64;
    std::array::from_fn(|j| (pred.iter().zip(target).map(|(p, t)| (p[j] - t[j]).powi(2)).sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_head_gradcheck() {
        let err = grad_check_head(Head::Quality, 3, 1).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mean_var_head_gradcheck() {
        let err = grad_check_head(Head::MeanVar, 4, 2).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mean_head_gradcheck() {
        let err = grad_check_head(Head::Mean, 3, 3).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn head_loss_shapes() {
        let out = Tensor::zeros(&[2, 8]);
        assert!(head_loss(Head::MeanVar, &out, &[0.0; 8]).is_ok());
        assert!(head_loss(Head::Mean, &out, &[0.0; 8]).is_err());
        let (l, _) = head_loss(Head::Quality, &Tensor::zeros(&[2, 1]), &[0.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

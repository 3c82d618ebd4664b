//! Synthetic tasks with known generative models, shared by integration tests.
#![allow(dead_code)]

use pgrasp_core::models::gdn::train_gdn_samples;
use pgrasp_core::models::{Gdn, GdnVariant, NetSpec, Samples, TrainConfig};
use pgrasp_core::rng::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Small network with the production topology; wide enough in the action
/// branch to fit affine maps.
pub fn small_spec(action_dim: usize, head_dim: usize) -> NetSpec {
    NetSpec {
        image_side: 32,
        conv: [(2, 5, 2), (2, 5, 2), (2, 3, 2)],
        fc_image: 4,
        fc_action: 64,
        fc_merge: 64,
        action_dim,
        head_dim,
    }
}

/// Noise standard deviation (scaled units) in the quiet and loud regions.
pub const QUIET_SD: f64 = 0.15;
pub const LOUD_SD: f64 = 0.6;

/// Row-major affine map from a 3-action to 4 targets.
pub const AFFINE: [[f64; 3]; 4] = [[0.1, -0.06, 0.04], [-0.08, 0.02, 0.06], [0.04, 0.04, -0.1], [0.02, -0.12, 0.02]];
pub const OFFSET: [f64; 4] = [0.1, -0.05, 0.0, 0.2];

pub fn affine(a: &[f64]) -> [f64; 4] {
    let mut t = OFFSET;
    for (k, row) in AFFINE.iter().enumerate() {
        t[k] += row.iter().zip(a).map(|(c, x)| c * x).sum::<f64>();
    }
    t
}

/// Loud region: first action coordinate non-negative.
pub fn loud(a: &[f64]) -> bool {
    a[0] >= 0.0
}

/// Blank images, uniform actions in [-1, 1]^3 and affine targets with
/// region-dependent Gaussian noise.
pub fn heteroscedastic(n: usize, seed: u64) -> Samples {
    let mut r = rng(seed);
    let quiet = Normal::new(0.0, QUIET_SD).unwrap();
    let noisy = Normal::new(0.0, LOUD_SD).unwrap();
    let mut actions = Vec::with_capacity(3 * n);
    let mut targets = Vec::with_capacity(4 * n);
    for _ in 0..n {
        let a: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let d = if loud(&a) { &noisy } else { &quiet };
        targets.extend(affine(&a).map(|m| m + d.sample(&mut r)));
        actions.extend(a);
    }
    Samples::new(32, vec![0.0; n * 32 * 32], 3, actions, 4, targets).unwrap()
}

/// Bright-left versus bright-right patches; label 1 for bright-left.
pub fn separable(n: usize, seed: u64) -> Samples {
    let mut r = rng(seed);
    let side = 32;
    let mut images = Vec::with_capacity(n * side * side);
    let mut actions = Vec::with_capacity(3 * n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let left = i % 2 == 0;
        for _y in 0..side {
            for x in 0..side {
                let bright = (x < side / 2) == left;
                let v: f64 = if bright { 1.0 } else { -1.0 };
                images.push((v + r.random_range(-0.3..0.3)) as f32);
            }
        }
        actions.extend((0..3).map(|_| r.random_range(-1.0..1.0)));
        targets.push(if left { 1.0 } else { 0.0 });
    }
    Samples::new(side, images, 3, actions, 1, targets).unwrap()
}

pub fn scaled_rmse(pred: &[[f64; 4]], targets: &[f64]) -> f64 {
    let se: f64 = pred.iter().zip(targets.chunks(4)).flat_map(|(p, t)| (0..4).map(move |k| (p[k] - t[k]).powi(2))).sum();
    (se / targets.len() as f64).sqrt()
}

/// Outcome of fitting the M and M+V heads to the heteroscedastic task.
#[derive(Debug)]
pub struct HeteroFit {
    pub rmse_m: f64,
    pub rmse_mv: f64,
    /// Mean predicted variance per output, quiet then loud region.
    pub var_quiet: [f64; 4],
    pub var_loud: [f64; 4],
}

pub fn hetero_config() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch_size: 64,
        lr: 1e-2,
        lr_decay: 2e-3,
        seed: 3,
    }
}

pub fn fit_heteroscedastic() -> HeteroFit {
    let train = heteroscedastic(2000, 1);
    let val = heteroscedastic(2000, 2);
    let cfg = hetero_config();
    let fit = |v: GdnVariant, head| {
        let mut g = Gdn::with_spec(v, small_spec(3, head), 7).unwrap();
        train_gdn_samples(&mut g, &train, &val, &cfg).unwrap();
        g.predict_scaled(&val).unwrap()
    };
    let m = fit(GdnVariant::GcipM, 4);
    let mv = fit(GdnVariant::GcipMV, 8);
    let means = |p: &[([f64; 4], Option<[f64; 4]>)]| p.iter().map(|x| x.0).collect::<Vec<_>>();
    let (mut vq, mut vl, mut nq, mut nl) = ([0.0; 4], [0.0; 4], 0.0, 0.0);
    for (a, p) in val.actions.chunks(3).zip(&mv) {
        let v = p.1.expect("M+V predicts variance");
        let (acc, n) = if loud(a) { (&mut vl, &mut nl) } else { (&mut vq, &mut nq) };
        *n += 1.0;
        for k in 0..4 {
            acc[k] += v[k];
        }
    }
    HeteroFit {
        rmse_m: scaled_rmse(&means(&m), &val.targets),
        rmse_mv: scaled_rmse(&means(&mv), &val.targets),
        var_quiet: vq.map(|v| v / nq),
        var_loud: vl.map(|v| v / nl),
    }
}

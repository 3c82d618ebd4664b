mod common;

use common::*;
use pgrasp_core::models::gqn::train_gqn_samples;
use pgrasp_core::models::gdn::train_gdn_samples;
use pgrasp_core::models::{Gdn, GdnVariant, Gqn, NetSpec, Samples, TrainConfig};
use pgrasp_core::tensor::loss::LOG_VAR_MIN;

#[test]
fn heteroscedastic_variance_and_mean_error() {
    let f = fit_heteroscedastic();
    let (q, l) = (QUIET_SD * QUIET_SD, LOUD_SD * LOUD_SD);
    for k in 0..4 {
        assert!((f.var_quiet[k] - q).abs() <= 0.2 * q, "quiet variance {k}: {f:?}");
        assert!((f.var_loud[k] - l).abs() <= 0.2 * l, "loud variance {k}: {f:?}");
    }
    assert!(f.rmse_mv <= f.rmse_m, "{f:?}");
}

#[test]
fn constant_targets_collapse_variance() {
    let n = 1024;
    let constant = [0.3, -0.2, 0.1, 0.05];
    let s = |seed| {
        let base = heteroscedastic(n, seed);
        Samples::new(32, base.images, 3, base.actions, 4, constant.repeat(n)).unwrap()
    };
    let (train, val) = (s(1), s(2));
    let mut g = Gdn::with_spec(GdnVariant::GcipMV, small_spec(3, 8), 5).unwrap();
    let cfg = TrainConfig { epochs: 300, batch_size: 32, lr: 1e-2, lr_decay: 1e-3, seed: 1 };
    train_gdn_samples(&mut g, &train, &val, &cfg).unwrap();
    let floor = LOG_VAR_MIN.exp();
    for (mu, var) in g.predict_scaled(&val).unwrap() {
        let var = var.unwrap();
        for k in 0..4 {
            assert!((mu[k] - constant[k]).abs() < 5e-3, "mean {mu:?}");
            assert!((var[k] - floor).abs() <= 1e-9 * floor, "variance {var:?} vs floor {floor}");
        }
    }
}

#[test]
fn separable_patches_are_learned() {
    let (train, val) = (separable(400, 1), separable(200, 2));
    let mut g = Gqn::with_spec(NetSpec { head_dim: 1, ..small_spec(3, 1) }, 3).unwrap();
    let cfg = TrainConfig { epochs: 20, batch_size: 32, lr: 1e-3, lr_decay: 0.0, seed: 2 };
    let rows = train_gqn_samples(&mut g, &train, &val, &cfg).unwrap();
    let best = rows.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
    assert!(best >= 0.95, "{rows:?}");
    assert!(rows.last().unwrap().val_accuracy >= 0.95);
}

#[test]
fn untrained_quality_is_chance() {
    let val = separable(400, 9);
    for seed in 0..3 {
        let g = Gqn::with_spec(small_spec(3, 1), seed).unwrap();
        let acc = g.accuracy(&val).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "seed {seed}: {acc}");
    }
}

#[test]
fn empty_training_data_rejected() {
    let empty = Samples::new(32, vec![], 3, vec![], 1, vec![]).unwrap();
    let mut g = Gqn::with_spec(small_spec(3, 1), 0).unwrap();
    assert!(train_gqn_samples(&mut g, &empty, &empty, &TrainConfig::default()).is_err());
    let empty4 = Samples::new(32, vec![], 3, vec![], 4, vec![]).unwrap();
    let mut d = Gdn::with_spec(GdnVariant::GcipM, small_spec(3, 4), 0).unwrap();
    assert!(train_gdn_samples(&mut d, &empty4, &empty4, &TrainConfig::default()).is_err());
}

//! Grasp quality network: P(lift succeeds | grasp-centric patch, grasp offset and height).

use std::path::Path;

use super::net::{GraspNet, NetSpec};
use super::train::{infer, train_loop, EpochSummary, Head, TrainConfig};
use super::{ActionScaler, ObsKind, Query, Samples};
use crate::dataset::GraspRecord;
use crate::error::{Error, Result};
use crate::rng::{mix, stream};
use crate::tensor::checkpoint;
use crate::tensor::ops::sigmoid_scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Gqn {
    pub net: GraspNet,
    pub scaler: ActionScaler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GqnEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Largest probability below one; keeps outputs inside (0, 1).
const Q_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

impl Gqn {
    pub fn new(seed: u64) -> Gqn {
        Gqn::with_spec(NetSpec::standard(3, 1), seed).expect("standard spec is valid")
    }

    pub fn with_spec(spec: NetSpec, seed: u64) -> Result<Gqn> {
        if spec.head_dim != 1 {
            return Err(Error::Shape("quality network needs a single output".into()));
        }
        Ok(Gqn {
            net: GraspNet::new(spec, mix(seed, stream::INIT))?,
            scaler: ActionScaler::default(),
        })
    }

    /// Success probability for each prepared sample.
    pub fn predict_samples(&self, samples: &Samples) -> Result<Vec<f64>> {
        Ok(infer(&self.net, samples)?
            .into_iter()
            .map(|z| sigmoid_scalar(z).clamp(f64::MIN_POSITIVE, Q_MAX))
            .collect())
    }

    /// Success probability for each query; images are grasp-centric patches.
    pub fn quality(&self, queries: &[Query]) -> Result<Vec<f64>> {
        self.predict_samples(&Samples::from_queries(queries, ObsKind::Gcip, &self.scaler)?)
    }

    /// Fraction of samples whose thresholded prediction matches the label.
    pub fn accuracy(&self, samples: &Samples) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let q = self.predict_samples(samples)?;
        let hits = q.iter().zip(&samples.targets).filter(|(q, t)| (**q >= 0.5) == (**t >= 0.5)).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.net.named_params())
    }

    pub fn load(path: &Path) -> Result<Gqn> {
        let mut g = Gqn::new(0);
        g.net.load_named(&checkpoint::load(path)?)?;
        Ok(g)
    }
}

/// Trains on prepared samples; returns one metrics row per epoch.
pub fn train_gqn_samples(model: &mut Gqn, train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<Vec<GqnEpoch>> {
    let mut rows = Vec::with_capacity(cfg.epochs);
    let scaler = model.scaler.clone();
    train_loop(&mut model.net, Head::Quality, train, cfg, |s: EpochSummary, net| {
        let snapshot = Gqn {
            net: net.clone(),
            scaler: scaler.clone(),
        };
        let row = GqnEpoch {
            epoch: s.epoch,
            loss: s.loss,
            train_accuracy: s.train_accuracy.unwrap_or(0.0),
            val_accuracy: snapshot.accuracy(val)?,
        };
        log::info!("gqn epoch {} loss {:.4} train acc {:.3} val acc {:.3}", row.epoch, row.loss, row.train_accuracy, row.val_accuracy);
        rows.push(row);
        Ok(())
    })?;
    Ok(rows)
}

/// Trains a fresh standard GQN on (balanced) records.
pub fn train_gqn(train: &[&GraspRecord], val: &[&GraspRecord], cfg: &TrainConfig) -> Result<(Gqn, Vec<GqnEpoch>)> {
    if train.is_empty() {
        return Err(Error::RejectedInput("no training records".into()));
    }
    let mut model = Gqn::new(cfg.seed);
    let t = Samples::for_gqn(train, &model.scaler)?;
    let v = Samples::for_gqn(val, &model.scaler)?;
    let rows = train_gqn_samples(&mut model, &t, &v, cfg)?;
    Ok((model, rows))
}

pub fn gqn_metrics_csv(rows: &[GqnEpoch]) -> String {
    let mut s = String::from("epoch,loss,train_accuracy,val_accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.train_accuracy, r.val_accuracy));
    }
    s
}

//! Grasp displacement networks: mean (M) or mean and variance (M+V) of the
//! grasp displacement, from a grasp-centric patch (GCIP) or an
//! object-centric full image (OCFI).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::gqn::Gqn;
use super::net::{GraspNet, NetSpec};
use super::train::{infer, rmse4, train_loop, EpochSummary, Head, TrainConfig};
use super::{prediction_to_object, unscale_prediction, ActionScaler, DisplacementPrediction, ObsKind, Query, Samples};
use crate::dataset::GraspRecord;
use crate::error::{Error, Result};
use crate::rng::{mix, stream};
use crate::tensor::checkpoint;
use crate::tensor::loss::{LOG_VAR_MAX, LOG_VAR_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GdnVariant {
    OcfiM,
    OcfiMV,
    GcipM,
    GcipMV,
}

impl GdnVariant {
    pub const ALL: [GdnVariant; 4] = [GdnVariant::OcfiM, GdnVariant::OcfiMV, GdnVariant::GcipM, GdnVariant::GcipMV];

    pub fn name(self) -> &'static str {
        match self {
            GdnVariant::OcfiM => "OCFI-M",
            GdnVariant::OcfiMV => "OCFI-M+V",
            GdnVariant::GcipM => "GCIP-M",
            GdnVariant::GcipMV => "GCIP-M+V",
        }
    }

    pub fn has_variance(self) -> bool {
        matches!(self, GdnVariant::OcfiMV | GdnVariant::GcipMV)
    }

    pub fn observation(self) -> ObsKind {
        match self {
            GdnVariant::OcfiM | GdnVariant::OcfiMV => ObsKind::Ocfi,
            GdnVariant::GcipM | GdnVariant::GcipMV => ObsKind::Gcip,
        }
    }

    pub fn head(self) -> Head {
        if self.has_variance() {
            Head::MeanVar
        } else {
            Head::Mean
        }
    }

    pub fn spec(self) -> NetSpec {
        NetSpec::standard(self.observation().action_dim(), self.head().dim())
    }
}

impl fmt::Display for GdnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GdnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-").replace("MV", "M+V");
        GdnVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::RejectedInput(format!("unknown displacement model variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gdn {
    pub variant: GdnVariant,
    pub net: GraspNet,
    pub scaler: ActionScaler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdnEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Validation RMSE of (Δx, Δy, Δz) in cm and Δθ in deg, object frame.
    pub val_rmse: [f64; 4],
    pub val_trans_rmse_cm: f64,
    pub val_rot_rmse_deg: f64,
}

impl Gdn {
    /// Randomly initialized standard network.
    pub fn new(variant: GdnVariant, seed: u64) -> Gdn {
        Gdn::with_spec(variant, variant.spec(), seed).expect("standard spec is valid")
    }

    pub fn with_spec(variant: GdnVariant, spec: NetSpec, seed: u64) -> Result<Gdn> {
        if spec.head_dim != variant.head().dim() || spec.action_dim != variant.observation().action_dim() {
            return Err(Error::Shape(format!("spec {spec:?} does not fit {variant}")));
        }
        Ok(Gdn {
            variant,
            net: GraspNet::new(spec, mix(seed, stream::INIT))?,
            scaler: ActionScaler::default(),
        })
    }

    /// Scaled observation-frame mean and variance for each sample.
    pub fn predict_scaled(&self, samples: &Samples) -> Result<Vec<([f64; 4], Option<[f64; 4]>)>> {
        let d = self.net.spec().head_dim;
        Ok(infer(&self.net, samples)?
            .chunks(d)
            .map(|r| {
                let mu = [r[0], r[1], r[2], r[3]];
                let var = self
                    .variant
                    .has_variance()
                    .then(|| std::array::from_fn(|j| r[4 + j].clamp(LOG_VAR_MIN, LOG_VAR_MAX).exp()));
                (mu, var)
            })
            .collect())
    }

    /// Physical object-frame predictions for prepared samples.
    pub fn predict_samples(&self, samples: &Samples) -> Result<Vec<DisplacementPrediction>> {
        Ok(self
            .predict_scaled(samples)?
            .into_iter()
            .zip(&samples.to_object)
            .map(|((mu, var), &phi)| {
                let (mu, var) = unscale_prediction(mu, var);
                prediction_to_object(mu, var, phi)
            })
            .collect())
    }

    /// Images must match the variant's observation kind.
    pub fn predict(&self, queries: &[Query]) -> Result<Vec<DisplacementPrediction>> {
        self.predict_samples(&Samples::from_queries(queries, self.variant.observation(), &self.scaler)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.net.named_params())
    }

    pub fn load(variant: GdnVariant, path: &Path) -> Result<Gdn> {
        let mut g = Gdn::new(variant, 0);
        g.net.load_named(&checkpoint::load(path)?)?;
        Ok(g)
    }
}

/// GCIP variants start from the quality network's convolution filters
/// (copied, not shared); OCFI variants are always randomly initialized.
/// Returns the model and whether a transfer happened.
pub fn init_gdn_from_gqn(gqn: &Gqn, variant: GdnVariant, seed: u64) -> Result<(Gdn, bool)> {
    let spec = NetSpec {
        action_dim: variant.observation().action_dim(),
        head_dim: variant.head().dim(),
        ..*gqn.net.spec()
    };
    let mut gdn = Gdn::with_spec(variant, spec, seed)?;
    if variant.observation() != ObsKind::Gcip {
        return Ok((gdn, false));
    }
    gdn.net.copy_conv_from(&gqn.net)?;
    Ok((gdn, true))
}

/// Validation metrics of a model on prepared samples.
pub fn evaluate_gdn(model: &Gdn, val: &Samples) -> Result<[f64; 4]> {
    if val.is_empty() {
        return Ok([0.0; 4]);
    }
    let pred: Vec<[f64; 4]> = model.predict_samples(val)?.iter().map(|p| p.mean.as_array()).collect();
    let truth: Vec<[f64; 4]> = val
        .targets
        .chunks(4)
        .zip(&val.to_object)
        .map(|(t, &phi)| {
            let (mu, _) = unscale_prediction([t[0], t[1], t[2], t[3]], None);
            prediction_to_object(mu, None, phi).mean.as_array()
        })
        .collect();
    let r = rmse4(&pred, &truth);
    Ok([r[0] * 100.0, r[1] * 100.0, r[2] * 100.0, r[3].to_degrees()])
}

pub fn train_gdn_samples(model: &mut Gdn, train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<Vec<GdnEpoch>> {
    let mut rows = Vec::with_capacity(cfg.epochs);
    let (variant, scaler) = (model.variant, model.scaler.clone());
    train_loop(&mut model.net, variant.head(), train, cfg, |s: EpochSummary, net| {
        let snapshot = Gdn {
            variant,
            net: net.clone(),
            scaler: scaler.clone(),
        };
        let r = evaluate_gdn(&snapshot, val)?;
        let row = GdnEpoch {
            epoch: s.epoch,
            loss: s.loss,
            val_rmse: r,
            val_trans_rmse_cm: (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(),
            val_rot_rmse_deg: r[3],
        };
        log::info!("{variant} epoch {} loss {:.4} val {:.3} cm {:.2} deg", row.epoch, row.loss, row.val_trans_rmse_cm, row.val_rot_rmse_deg);
        rows.push(row);
        Ok(())
    })?;
    Ok(rows)
}

/// Trains `model` on successful records only.
pub fn train_gdn(mut model: Gdn, train: &[&GraspRecord], val: &[&GraspRecord], cfg: &TrainConfig) -> Result<(Gdn, Vec<GdnEpoch>)> {
    if train.is_empty() {
        return Err(Error::RejectedInput("no training records".into()));
    }
    if train.iter().chain(val).any(|r| !r.success) {
        return Err(Error::RejectedInput("displacement models train on successful grasps only".into()));
    }
    let kind = model.variant.observation();
    let t = Samples::for_gdn(train, kind, &model.scaler)?;
    let v = Samples::for_gdn(val, kind, &model.scaler)?;
    let rows = train_gdn_samples(&mut model, &t, &v, cfg)?;
    Ok((model, rows))
}

pub fn gdn_metrics_csv(rows: &[GdnEpoch]) -> String {
    let mut s = String::from("epoch,loss,val_rmse_dx_cm,val_rmse_dy_cm,val_rmse_dz_cm,val_rmse_dtheta_deg,val_trans_rmse_cm,val_rot_rmse_deg\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.loss, r.val_rmse[0], r.val_rmse[1], r.val_rmse[2], r.val_rmse[3], r.val_trans_rmse_cm, r.val_rot_rmse_deg
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse() {
        for v in GdnVariant::ALL {
            assert_eq!(v.name().parse::<GdnVariant>().unwrap(), v);
        }
        assert_eq!("gcip-mv".parse::<GdnVariant>().unwrap(), GdnVariant::GcipMV);
        assert!("gcip-x".parse::<GdnVariant>().is_err());
    }

    #[test]
    fn transfer_copies_filters_only_for_patches() {
        let gqn = Gqn::with_spec(NetSpec::shrunken(3, 1), 1).unwrap();
        let (mut gdn, moved) = init_gdn_from_gqn(&gqn, GdnVariant::GcipMV, 2).unwrap();
        assert!(moved);
        for i in 0..super::super::net::CONV_PARAMS {
            let (a, b) = (&gdn.net.params()[i], &gqn.net.params()[i]);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(gdn.net.params()[12].shape(), &[8, 6]);
        gdn.net.params_mut()[0].data_mut()[0] += 1.0;
        assert_ne!(gdn.net.params()[0].data()[0], gqn.net.params()[0].data()[0]);
        let (ocfi, moved) = init_gdn_from_gqn(&gqn, GdnVariant::OcfiMV, 2).unwrap();
        assert!(!moved);
        assert_ne!(ocfi.net.params()[0].data(), gqn.net.params()[0].data());
    }

    #[test]
    fn mean_variants_have_no_variance() {
        let g = Gdn::with_spec(GdnVariant::GcipM, NetSpec::shrunken(3, 4), 0).unwrap();
        let s = Samples::new(32, vec![0.0; 2 * 1024], 3, vec![0.1; 6], 4, vec![0.0; 8]).unwrap();
        let p = g.predict_samples(&s).unwrap();
        assert!(p.iter().all(|p| p.variance.is_none()));
        let g = Gdn::with_spec(GdnVariant::GcipMV, NetSpec::shrunken(3, 8), 0).unwrap();
        assert!(g.predict_samples(&s).unwrap().iter().all(|p| p.variance.unwrap().iter().all(|v| *v > 0.0)));
        assert!(Gdn::with_spec(GdnVariant::GcipM, NetSpec::shrunken(3, 8), 0).is_err());
    }
}

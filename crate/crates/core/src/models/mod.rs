//! Grasp quality and displacement models, their inputs, and the LOWESS
//! baseline.
//!
//! Networks see translations and displacements in the frame of their
//! observation: the grasp-centric patch is rotated with the closing axis,
//! the object-centric image is world aligned. Displacements are rotated
//! back into the object frame on output, so every public prediction is a
//! grasp displacement in the object frame.

pub mod gdn;
pub mod gqn;
pub mod lowess;
pub mod net;
pub mod scaling;
pub mod train;

use crate::dataset::GraspRecord;
use crate::error::{Error, Result};
use crate::geom::{wrap_half_pi, Point2};
use crate::parts::Pose;
use crate::physics::{Displacement, Grasp};
use crate::sensor::{standardize_f32, PIXELS};

pub use gdn::{evaluate_gdn, gdn_metrics_csv, init_gdn_from_gqn, train_gdn, Gdn, GdnEpoch, GdnVariant};
pub use gqn::{gqn_metrics_csv, train_gqn, Gqn, GqnEpoch};
pub use lowess::Lowess;
pub use net::{GraspNet, NetSpec};
pub use scaling::{scale_target, unscale_prediction, ActionScaler};
pub use train::{grad_check_head, Head, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKind {
    /// Grasp-centric patch, rotated with the closing axis.
    Gcip,
    /// Object-centric full image, world aligned.
    Ocfi,
}

impl ObsKind {
    pub fn action_dim(self) -> usize {
        match self {
            ObsKind::Gcip => 3,
            ObsKind::Ocfi => 4,
        }
    }

    /// World rotation of the observation.
    pub fn frame_angle(self, pose: &Pose, grasp: &Grasp) -> f64 {
        match self {
            ObsKind::Gcip => pose.theta + grasp.gtheta,
            ObsKind::Ocfi => 0.0,
        }
    }

    /// Unscaled action: grasp offset in the observation frame and height,
    /// plus the closing angle in the image for object-centric views.
    pub fn raw_action(self, pose: &Pose, grasp: &Grasp) -> Vec<f64> {
        let t = Point2::new(grasp.gx, grasp.gy).rotated(-self.frame_angle(pose, grasp));
        match self {
            ObsKind::Gcip => vec![t.x, t.y, grasp.gz],
            ObsKind::Ocfi => vec![t.x, t.y, grasp.gz, wrap_half_pi(pose.theta + grasp.gtheta)],
        }
    }

    /// Rotation taking observation-frame vectors to the object frame.
    pub fn to_object(self, pose: &Pose, grasp: &Grasp) -> f64 {
        self.frame_angle(pose, grasp) - pose.theta
    }
}

/// Object-frame displacement to observation frame (`to_object` = φ).
pub fn displacement_to_obs(d: &Displacement, phi: f64) -> [f64; 4] {
    let v = Point2::new(d.dx, d.dy).rotated(-phi);
    [v.x, v.y, d.dz, d.dtheta]
}

/// Observation-frame mean and diagonal variance to the object frame. The
/// variance is the diagonal of the rotated covariance.
pub fn prediction_to_object(mu: [f64; 4], var: Option<[f64; 4]>, phi: f64) -> DisplacementPrediction {
    let v = Point2::new(mu[0], mu[1]).rotated(phi);
    let (s, c) = phi.sin_cos();
    DisplacementPrediction {
        mean: Displacement {
            dx: v.x,
            dy: v.y,
            dz: mu[2],
            dtheta: mu[3],
        },
        variance: var.map(|w| [c * c * w[0] + s * s * w[1], s * s * w[0] + c * c * w[1], w[2], w[3]]),
    }
}

/// Predicted grasp displacement (object frame, SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementPrediction {
    pub mean: Displacement,
    pub variance: Option<[f64; 4]>,
}

/// A grasp with the observation a model should see for it.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub pose: Pose,
    pub grasp: Grasp,
    pub image: &'a [f32],
}

/// Model-ready tensors: standardized images, scaled actions and scaled
/// observation-frame targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub image_side: usize,
    pub action_dim: usize,
    pub target_dim: usize,
    pub images: Vec<f32>,
    pub actions: Vec<f64>,
    pub targets: Vec<f64>,
    /// Per-sample rotation from the observation frame to the object frame.
    pub to_object: Vec<f64>,
}

impl Samples {
    pub fn new(
        image_side: usize,
        images: Vec<f32>,
        action_dim: usize,
        actions: Vec<f64>,
        target_dim: usize,
        targets: Vec<f64>,
    ) -> Result<Samples> {
        let px = image_side * image_side;
        if px == 0 || action_dim == 0 || target_dim == 0 || images.len() % px != 0 {
            return Err(Error::Shape("sample dimensions must be positive and images whole".into()));
        }
        let n = images.len() / px;
        if actions.len() != n * action_dim || targets.len() != n * target_dim {
            return Err(Error::Shape(format!(
                "{n} images with {} action and {} target values",
                actions.len(),
                targets.len()
            )));
        }
        Ok(Samples {
            image_side,
            action_dim,
            target_dim,
            images,
            actions,
            targets,
            to_object: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.to_object.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_object.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let px = self.image_side * self.image_side;
        &self.images[i * px..(i + 1) * px]
    }

    /// Gathers the given rows as (images, actions, targets).
    pub fn batch(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let px = self.image_side * self.image_side;
        let mut img = Vec::with_capacity(rows.len() * px);
        let mut act = Vec::with_capacity(rows.len() * self.action_dim);
        let mut tgt = Vec::with_capacity(rows.len() * self.target_dim);
        for &i in rows {
            img.extend(self.image(i).iter().map(|&v| v as f64));
            act.extend_from_slice(&self.actions[i * self.action_dim..(i + 1) * self.action_dim]);
            tgt.extend_from_slice(&self.targets[i * self.target_dim..(i + 1) * self.target_dim]);
        }
        (img, act, tgt)
    }

    /// Scaled inputs for queries; targets are empty.
    pub fn from_queries(queries: &[Query], kind: ObsKind, scaler: &ActionScaler) -> Result<Samples> {
        let mut images = Vec::with_capacity(queries.len() * PIXELS);
        let mut actions = Vec::with_capacity(queries.len() * kind.action_dim());
        let mut to_object = Vec::with_capacity(queries.len());
        for q in queries {
            if q.image.len() != PIXELS {
                return Err(Error::Shape(format!("observation with {} pixels", q.image.len())));
            }
            images.extend(standardize_f32(q.image).into_iter().map(|v| v as f32));
            actions.extend(scaler.scale(&kind.raw_action(&q.pose, &q.grasp)));
            to_object.push(kind.to_object(&q.pose, &q.grasp));
        }
        Ok(Samples {
            image_side: crate::sensor::IMAGE_SIDE,
            action_dim: kind.action_dim(),
            target_dim: 0,
            images,
            actions,
            targets: Vec::new(),
            to_object,
        })
    }

    /// Success labels on grasp-centric patches.
    pub fn for_gqn(records: &[&GraspRecord], scaler: &ActionScaler) -> Result<Samples> {
        let queries: Vec<Query> = records
            .iter()
            .map(|r| Query {
                pose: r.pose,
                grasp: r.grasp,
                image: &r.gcip,
            })
            .collect();
        let mut s = Samples::from_queries(&queries, ObsKind::Gcip, scaler)?;
        s.target_dim = 1;
        s.targets = records.iter().map(|r| if r.success { 1.0 } else { 0.0 }).collect();
        Ok(s)
    }

    /// Scaled observation-frame grasp displacements.
    pub fn for_gdn(records: &[&GraspRecord], kind: ObsKind, scaler: &ActionScaler) -> Result<Samples> {
        let queries: Vec<Query> = records
            .iter()
            .map(|r| Query {
                pose: r.pose,
                grasp: r.grasp,
                image: match kind {
                    ObsKind::Gcip => &r.gcip,
                    ObsKind::Ocfi => &r.ocfi,
                },
            })
            .collect();
        let mut s = Samples::from_queries(&queries, kind, scaler)?;
        s.target_dim = 4;
        s.targets = records
            .iter()
            .zip(&s.to_object)
            .flat_map(|(r, &phi)| scale_target(displacement_to_obs(&r.grasp_displacement, phi)))
            .collect();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn frame_round_trip() {
        let mut r = rng(1);
        for _ in 0..200 {
            let d = Displacement::from_array(std::array::from_fn(|_| r.random_range(-0.1..0.1)));
            let phi = r.random_range(-PI..PI);
            let p = prediction_to_object(displacement_to_obs(&d, phi), Some([1.0, 1.0, 1.0, 1.0]), phi);
            assert!((p.mean.dx - d.dx).abs() < 1e-15 && (p.mean.dy - d.dy).abs() < 1e-15);
            let v = p.variance.unwrap();
            assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_variance_preserves_trace() {
        let p = prediction_to_object([0.0; 4], Some([4.0, 1.0, 0.5, 0.2]), 0.7);
        let v = p.variance.unwrap();
        assert!((v[0] + v[1] - 5.0).abs() < 1e-12);
        let p = prediction_to_object([0.0; 4], Some([4.0, 1.0, 0.5, 0.2]), PI / 2.0);
        let v = p.variance.unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn patch_action_is_rotation_invariant() {
        let g = Grasp {
            gx: 0.01,
            gy: -0.02,
            gz: 0.005,
            gtheta: 0.3,
        };
        let a = ObsKind::Gcip.raw_action(&Pose::new(0.0, 0.0, 0.4), &g);
        // rotate the scene by φ: offsets rotate, gtheta stays relative
        let phi: f64 = 1.1;
        let t = Point2::new(g.gx, g.gy).rotated(phi);
        let g2 = Grasp { gx: t.x, gy: t.y, ..g };
        let b = ObsKind::Gcip.raw_action(&Pose::new(0.0, 0.0, 0.4 + phi), &g2);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        assert_eq!(ObsKind::Ocfi.raw_action(&Pose::default(), &g).len(), 4);
    }

    #[test]
    fn sample_shapes_checked() {
        assert!(Samples::new(4, vec![0.0; 32], 2, vec![0.0; 4], 1, vec![0.0; 2]).is_ok());
        assert!(Samples::new(4, vec![0.0; 32], 2, vec![0.0; 3], 1, vec![0.0; 2]).is_err());
        assert!(Samples::new(4, vec![0.0; 30], 2, vec![0.0; 4], 1, vec![0.0; 2]).is_err());
    }
}

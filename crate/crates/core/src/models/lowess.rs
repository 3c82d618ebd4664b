//! Locally weighted averaging of stored grasp displacements per known part.
//!
//! Grasps are compared in the part frame as (a_x, a_y, g_z, g_θ), where
//! `a` is the grasp offset rotated into the part frame, so memories from
//! one resting pose apply to any other. Weights are the unnormalized
//! Gaussian kernel `exp(-½ Σ_j d_j² / Σ_jj)`; the angular difference is
//! wrapped to (−π, π].

use std::collections::BTreeMap;

use super::DisplacementPrediction;
use crate::dataset::GraspRecord;
use crate::error::{Error, Result};
use crate::geom::{wrap_pi, Point2};
use crate::parts::Pose;
use crate::physics::{Displacement, Grasp};

/// Diagonal kernel covariance in m², m², m², rad².
pub const KERNEL_VARIANCE: [f64; 4] = [0.02, 0.02, 0.05, 1.00];
/// Below this total weight the nearest stored grasp is returned.
pub const MIN_TOTAL_WEIGHT: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct Lowess {
    kernel_variance: [f64; 4],
    memory: BTreeMap<u64, Vec<([f64; 4], [f64; 4])>>,
}

/// Part-frame grasp coordinates.
pub fn grasp_key(pose: &Pose, grasp: &Grasp) -> [f64; 4] {
    let a = Point2::new(grasp.gx, grasp.gy).rotated(-pose.theta);
    [a.x, a.y, grasp.gz, grasp.gtheta]
}

impl Lowess {
    pub fn new(kernel_variance: [f64; 4]) -> Result<Lowess> {
        if kernel_variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Configuration(format!("kernel variances must be positive: {kernel_variance:?}")));
        }
        Ok(Lowess {
            kernel_variance,
            memory: BTreeMap::new(),
        })
    }

    /// Memory of every successful record, grouped by part.
    pub fn from_records<R: AsRef<GraspRecord>>(records: &[R]) -> Lowess {
        let mut l = Lowess::new(KERNEL_VARIANCE).expect("default kernel is valid");
        for r in records.iter().map(|r| r.as_ref()).filter(|r| r.success) {
            l.insert(r.part_id, grasp_key(&r.pose, &r.grasp), r.grasp_displacement.as_array());
        }
        l
    }

    pub fn insert(&mut self, part_id: u64, key: [f64; 4], delta_g: [f64; 4]) {
        self.memory.entry(part_id).or_default().push((key, delta_g));
    }

    pub fn knows(&self, part_id: u64) -> bool {
        self.memory.contains_key(&part_id)
    }

    pub fn stored(&self, part_id: u64) -> &[([f64; 4], [f64; 4])] {
        self.memory.get(&part_id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Squared Mahalanobis distance under the kernel covariance.
    pub fn distance2(&self, a: &[f64; 4], b: &[f64; 4]) -> f64 {
        (0..4)
            .map(|j| {
                let d = if j == 3 { wrap_pi(a[j] - b[j]) } else { a[j] - b[j] };
                d * d / self.kernel_variance[j]
            })
            .sum()
    }

    /// Weighted mean and weighted (population) variance of the stored
    /// displacements around `key`.
    pub fn predict_key(&self, part_id: u64, key: &[f64; 4]) -> Result<([f64; 4], [f64; 4])> {
        let mem = match self.memory.get(&part_id) {
            Some(m) if !m.is_empty() => m,
            _ => return Err(Error::UnknownObject(part_id)),
        };
        let weights: Vec<f64> = mem.iter().map(|(k, _)| (-0.5 * self.distance2(k, key)).exp()).collect();
        let total: f64 = weights.iter().sum();
        if !(total >= MIN_TOTAL_WEIGHT) {
            let nearest = mem
                .iter()
                .map(|(k, d)| (self.distance2(k, key), d))
                .fold((f64::INFINITY, &mem[0].1), |best, c| if c.0 < best.0 { c } else { best });
            return Ok((*nearest.1, [0.0; 4]));
        }
        let mut mean = [0.0; 4];
        for (w, (_, d)) in weights.iter().zip(mem) {
            for j in 0..4 {
                mean[j] += w * d[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = [0.0; 4];
        for (w, (_, d)) in weights.iter().zip(mem) {
            for j in 0..4 {
                var[j] += w * (d[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= total);
        Ok((mean, var))
    }

    pub fn predict(&self, part_id: u64, pose: &Pose, grasp: &Grasp) -> Result<DisplacementPrediction> {
        let (mean, var) = self.predict_key(part_id, &grasp_key(pose, grasp))?;
        Ok(DisplacementPrediction {
            mean: Displacement::from_array(mean),
            variance: Some(var),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_memory_is_returned() {
        let mut l = Lowess::new(KERNEL_VARIANCE).unwrap();
        l.insert(1, [0.01, 0.0, 0.005, 0.2], [0.001, -0.002, 0.0005, 0.03]);
        let (m, v) = l.predict_key(1, &[-0.05, 0.04, 0.01, -1.0]).unwrap();
        assert_eq!(m, [0.001, -0.002, 0.0005, 0.03]);
        assert_eq!(v, [0.0; 4]);
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        let mut l = Lowess::new(KERNEL_VARIANCE).unwrap();
        l.insert(1, [0.01, 0.0, 0.0, 0.0], [0.002, 0.0, 0.0, 0.1]);
        l.insert(1, [-0.01, 0.0, 0.0, 0.0], [0.004, 0.002, 0.0, -0.1]);
        let (m, _) = l.predict_key(1, &[0.0; 4]).unwrap();
        assert_eq!(m, [0.003, 0.001, 0.0, 0.0]);
    }

    #[test]
    fn unknown_part_is_an_error() {
        let l = Lowess::new(KERNEL_VARIANCE).unwrap();
        assert!(matches!(l.predict_key(9, &[0.0; 4]), Err(Error::UnknownObject(9))));
    }

    #[test]
    fn far_query_falls_back_to_nearest() {
        let mut l = Lowess::new([1e-8, 1e-8, 1e-8, 1e-8]).unwrap();
        l.insert(1, [0.0; 4], [1.0, 0.0, 0.0, 0.0]);
        l.insert(1, [0.5, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]);
        let (m, _) = l.predict_key(1, &[0.4, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m[0], 2.0);
    }

    #[test]
    fn angle_wraps_in_kernel() {
        let l = Lowess::new(KERNEL_VARIANCE).unwrap();
        let d = l.distance2(&[0.0, 0.0, 0.0, 3.1], &[0.0, 0.0, 0.0, -3.1]);
        assert!((d - (2.0 * std::f64::consts::PI - 6.2).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn pose_invariant_keys() {
        let g = Grasp {
            gx: 0.02,
            gy: 0.01,
            gz: 0.003,
            gtheta: 0.4,
        };
        let k1 = grasp_key(&Pose::new(0.0, 0.0, 0.0), &g);
        let t = Point2::new(g.gx, g.gy).rotated(0.8);
        let k2 = grasp_key(&Pose::new(1.0, 2.0, 0.8), &Grasp { gx: t.x, gy: t.y, ..g });
        assert!(k1.iter().zip(&k2).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}

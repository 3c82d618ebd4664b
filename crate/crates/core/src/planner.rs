//! Grasp planning: sample candidates over a scene, keep the most likely to
//! lift, and among those pick the one with the lowest predicted
//! displacement variance.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};
use crate::models::{DisplacementPrediction, Gdn, Gqn, Lowess, ObsKind, Query};
use crate::parts::{bounding_box, Part, Pose};
use crate::physics::{sample_grasp, Displacement, Grasp};
use crate::rng::{mix, mix3, stream};
use crate::sensor::{add_noise, render_full, PatchRenderer, SensorConfig};

pub const DEFAULT_CANDIDATES: usize = 3200;
pub const DEFAULT_TOP_FRACTION: f64 = 0.03;

/// A posed part with its (noisy) observations.
pub struct Scene<'a> {
    pub part: &'a Part,
    pub pose: Pose,
    pub sensor: SensorConfig,
    noise_seed: u64,
    full: Vec<f32>,
    patches: PatchRenderer,
}

impl<'a> Scene<'a> {
    pub fn new(part: &'a Part, pose: Pose, sensor: SensorConfig, noise_seed: u64) -> Result<Scene<'a>> {
        let full = render_full(part, &pose, sensor.full_window, sensor.camera_height)?;
        Ok(Scene {
            part,
            pose,
            sensor,
            noise_seed,
            full: add_noise(&full, sensor.noise_sigma, mix(noise_seed, 0)).to_f32(),
            patches: PatchRenderer::new(part, &pose, sensor.patch_window, sensor.camera_height)?,
        })
    }

    /// Object-centric full view.
    pub fn ocfi(&self) -> &[f32] {
        &self.full
    }

    /// Grasp-centric patch of candidate `index`; the noise depends only on
    /// the scene seed and the index.
    pub fn gcip(&self, c: &Candidate) -> Vec<f32> {
        let img = self.patches.render(&c.grasp);
        add_noise(&img, self.sensor.noise_sigma, mix3(self.noise_seed, 1, c.index as u64)).to_f32()
    }

    /// Bounding box of the posed part relative to its centroid.
    pub fn grasp_box(&self) -> Rect {
        bounding_box(self.part, &self.pose).translated(Point2::new(-self.pose.x, -self.pose.y))
    }

    /// Half the bounding-box diagonal: meters per radian in the variance scalarization.
    pub fn lambda(&self) -> f64 {
        bounding_box(self.part, &self.pose).diagonal() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub grasp: Grasp,
}

/// Predicted success probability per candidate.
pub trait GraspScorer: Sync {
    fn score(&self, scene: &Scene, candidates: &[Candidate]) -> Result<Vec<f64>>;
}

/// Predicted grasp displacement per candidate.
pub trait DisplacementPredictor: Sync {
    fn name(&self) -> String;
    fn has_variance(&self) -> bool;
    fn predict(&self, scene: &Scene, candidates: &[Candidate]) -> Result<Vec<DisplacementPrediction>>;
}

const RENDER_CHUNK: usize = 256;

fn patch_queries<T>(
    scene: &Scene,
    candidates: &[Candidate],
    mut f: impl FnMut(&[Query]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(RENDER_CHUNK) {
        let images: Vec<Vec<f32>> = chunk.iter().map(|c| scene.gcip(c)).collect();
        let queries: Vec<Query> = chunk
            .iter()
            .zip(&images)
            .map(|(c, img)| Query {
                pose: scene.pose,
                grasp: c.grasp,
                image: img,
            })
            .collect();
        out.extend(f(&queries)?);
    }
    Ok(out)
}

impl GraspScorer for Gqn {
    fn score(&self, scene: &Scene, candidates: &[Candidate]) -> Result<Vec<f64>> {
        patch_queries(scene, candidates, |q| self.quality(q))
    }
}

impl DisplacementPredictor for Gdn {
    fn name(&self) -> String {
        self.variant.name().to_string()
    }

    fn has_variance(&self) -> bool {
        self.variant.has_variance()
    }

    fn predict(&self, scene: &Scene, candidates: &[Candidate]) -> Result<Vec<DisplacementPrediction>> {
        match self.variant.observation() {
            ObsKind::Gcip => patch_queries(scene, candidates, |q| Gdn::predict(self, q)),
            ObsKind::Ocfi => {
                let queries: Vec<Query> = candidates
                    .iter()
                    .map(|c| Query {
                        pose: scene.pose,
                        grasp: c.grasp,
                        image: scene.ocfi(),
                    })
                    .collect();
                Gdn::predict(self, &queries)
            }
        }
    }
}

impl DisplacementPredictor for Lowess {
    fn name(&self) -> String {
        "LOWESS".to_string()
    }

    fn has_variance(&self) -> bool {
        true
    }

    fn predict(&self, scene: &Scene, candidates: &[Candidate]) -> Result<Vec<DisplacementPrediction>> {
        candidates
            .iter()
            .map(|c| Lowess::predict(self, scene.part.part_id, &scene.pose, &c.grasp))
            .collect()
    }
}

/// Uniform candidates over the scene's bounding box; candidate `i` depends
/// only on `(seed, i)`.
pub fn sample_candidates(scene: &Scene, n: usize, seed: u64) -> Vec<Candidate> {
    let bbox = scene.grasp_box();
    (0..n)
        .map(|i| Candidate {
            index: i,
            grasp: sample_grasp(&bbox, scene.part.height, mix3(seed, stream::GRASP, i as u64)),
        })
        .collect()
}

/// `ceil(top_fraction · n)`, at least one and at most `n`.
pub fn pool_size(n: usize, top_fraction: f64) -> usize {
    (((top_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Indices of the `k` best scores, ordered by score descending then index ascending.
pub fn top_pool(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `σ²x + σ²y + σ²z + λ²σ²θ`.
pub fn scalar_variance(var: &[f64; 4], lambda: f64) -> f64 {
    var[0] + var[1] + var[2] + lambda * lambda * var[3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub grasp: Grasp,
    pub candidate_index: usize,
    pub quality: f64,
    pub mu: Option<Displacement>,
    pub variance: Option<[f64; 4]>,
    pub scalar_variance: Option<f64>,
    pub candidates: usize,
    pub pool_size: usize,
}

impl PlanResult {
    /// Single-line `key=value` record.
    pub fn report_line(&self) -> String {
        let g = &self.grasp;
        let mut s = format!(
            "index={} quality={} gx={} gy={} gz={} gtheta={} candidates={} pool={}",
            self.candidate_index, self.quality, g.gx, g.gy, g.gz, g.gtheta, self.candidates, self.pool_size
        );
        if let Some(m) = &self.mu {
            let _ = write!(s, " mu_dx={} mu_dy={} mu_dz={} mu_dtheta={}", m.dx, m.dy, m.dz, m.dtheta);
        }
        if let Some(v) = &self.variance {
            let _ = write!(s, " var_dx={} var_dy={} var_dz={} var_dtheta={}", v[0], v[1], v[2], v[3]);
        }
        if let Some(v) = self.scalar_variance {
            let _ = write!(s, " v={v}");
        }
        s
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::RejectedInput("planning needs at least one candidate".into()));
    }
    Ok(())
}

/// Highest predicted quality among `n` candidates; ties go to the lowest index.
pub fn plan_quality_only(scene: &Scene, gqn: &(impl GraspScorer + ?Sized), n: usize, seed: u64) -> Result<PlanResult> {
    check_n(n)?;
    let cands = sample_candidates(scene, n, seed);
    let scores = gqn.score(scene, &cands)?;
    let best = top_pool(&scores, 1)[0];
    Ok(PlanResult {
        grasp: cands[best].grasp,
        candidate_index: best,
        quality: scores[best],
        mu: None,
        variance: None,
        scalar_variance: None,
        candidates: n,
        pool_size: 1,
    })
}

/// Lowest scalarized variance within the top `ceil(top_fraction · n)` by
/// quality. The reduction runs in candidate-index order, so ties go to the
/// lowest candidate index in the pool.
pub fn plan_precise(
    scene: &Scene,
    gqn: &(impl GraspScorer + ?Sized),
    gdn: &(impl DisplacementPredictor + ?Sized),
    n: usize,
    top_fraction: f64,
    seed: u64,
) -> Result<PlanResult> {
    check_n(n)?;
    if !gdn.has_variance() {
        return Err(Error::RejectedInput(format!("{} predicts no variance; variance-aware planning needs an M+V model", gdn.name())));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::RejectedInput(format!("top fraction {top_fraction} outside (0, 1]")));
    }
    let cands = sample_candidates(scene, n, seed);
    let scores = gqn.score(scene, &cands)?;
    let k = pool_size(n, top_fraction);
    let mut members = top_pool(&scores, k);
    members.sort_unstable();
    let pool: Vec<Candidate> = members.into_iter().map(|i| cands[i]).collect();
    let preds = gdn.predict(scene, &pool)?;
    let lambda = scene.lambda();
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in preds.iter().enumerate() {
        let var = p.variance.ok_or_else(|| Error::NumericFault("variance missing from an M+V prediction".into()))?;
        let v = scalar_variance(&var, lambda);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((j, v));
        }
    }
    let (j, v) = best.expect("pool is non-empty");
    let chosen = pool[j];
    Ok(PlanResult {
        grasp: chosen.grasp,
        candidate_index: chosen.index,
        quality: scores[chosen.index],
        mu: Some(preds[j].mean),
        variance: preds[j].variance,
        scalar_variance: Some(v),
        candidates: n,
        pool_size: k,
    })
}

/// Object pose to command so that, after the in-hand grasp displacement
/// `mu`, the object lands at `target`. `grasp_offset` is the nominal grasp
/// centre in the object frame; the robot places the gripper at
/// `commanded ∘ grasp` while the object actually hangs at `grasp + mu`.
pub fn correct_placement(target: &Pose, grasp_offset: Point2, mu: &Displacement) -> Pose {
    let theta = target.theta + mu.dtheta;
    let actual = grasp_offset.add(Point2::new(mu.dx, mu.dy));
    let gripper = target.apply(actual);
    let p = gripper.sub(grasp_offset.rotated(theta));
    Pose::new(p.x, p.y, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parts::{generate, Family};

    struct ConstScorer(f64);
    impl GraspScorer for ConstScorer {
        fn score(&self, _: &Scene, c: &[Candidate]) -> Result<Vec<f64>> {
            Ok(vec![self.0; c.len()])
        }
    }

    struct ByIndex;
    impl GraspScorer for ByIndex {
        fn score(&self, _: &Scene, c: &[Candidate]) -> Result<Vec<f64>> {
            Ok(c.iter().map(|c| ((c.index * 7919) % 101) as f64 / 101.0).collect())
        }
    }

    struct ConstVar;
    impl DisplacementPredictor for ConstVar {
        fn name(&self) -> String {
            "const".into()
        }
        fn has_variance(&self) -> bool {
            true
        }
        fn predict(&self, _: &Scene, c: &[Candidate]) -> Result<Vec<DisplacementPrediction>> {
            Ok(vec![
                DisplacementPrediction {
                    mean: Displacement::ZERO,
                    variance: Some([1.0; 4])
                };
                c.len()
            ])
        }
    }

    fn scene(part: &Part) -> Scene<'_> {
        Scene::new(part, Pose::new(0.0, 0.0, 0.3), SensorConfig::default(), 1).unwrap()
    }

    #[test]
    fn pool_sizes() {
        assert_eq!(pool_size(3200, 0.03), 96);
        assert_eq!(pool_size(100, 0.03), 3);
        assert_eq!(pool_size(10, 0.03), 1);
        assert_eq!(pool_size(5, 1.0), 5);
    }

    #[test]
    fn constant_scores_pick_first() {
        let part = generate(1, Family::Ngon);
        let s = scene(&part);
        let r = plan_quality_only(&s, &ConstScorer(0.5), 50, 3).unwrap();
        assert_eq!(r.candidate_index, 0);
        let r = plan_precise(&s, &ConstScorer(0.5), &ConstVar, 100, 0.03, 3).unwrap();
        assert_eq!(r.candidate_index, 0);
        assert_eq!(r.pool_size, 3);
    }

    #[test]
    fn variance_ties_go_to_lowest_index_in_pool() {
        let part = generate(4, Family::Ngon);
        let s = scene(&part);
        struct Rising;
        impl GraspScorer for Rising {
            fn score(&self, _: &Scene, c: &[Candidate]) -> Result<Vec<f64>> {
                Ok(c.iter().map(|c| c.index as f64 / 1000.0).collect())
            }
        }
        // pool ranked 199, 198, ..., 194
        let r = plan_precise(&s, &Rising, &ConstVar, 200, 0.03, 1).unwrap();
        assert_eq!((r.candidate_index, r.pool_size), (194, 6));
    }

    #[test]
    fn argmax_contract() {
        let part = generate(2, Family::Gear);
        let s = scene(&part);
        let r = plan_quality_only(&s, &ByIndex, 300, 4).unwrap();
        let scores = ByIndex.score(&s, &sample_candidates(&s, 300, 4)).unwrap();
        assert!(scores.iter().all(|&q| q <= r.quality));
        assert_eq!(r, plan_quality_only(&s, &ByIndex, 300, 4).unwrap());
    }

    #[test]
    fn top_pool_orders_and_breaks_ties() {
        assert_eq!(top_pool(&[0.2, 0.9, 0.9, 0.1, 0.5], 3), vec![1, 2, 4]);
    }

    #[test]
    fn placement_identity_and_rotation() {
        let t = Pose::new(0.3, -0.1, 0.7);
        let a = Point2::new(0.01, 0.02);
        assert_eq!(correct_placement(&t, a, &Displacement::ZERO), t);
        let d = 0.2;
        // object turned by d in hand, so the grasp turned by −d in the object frame
        let c = correct_placement(&Pose::default(), Point2::default(), &Displacement { dtheta: -d, ..Displacement::ZERO });
        assert!((c.theta + d).abs() < 1e-15);
    }

    #[test]
    fn precise_requires_variance() {
        struct NoVar;
        impl DisplacementPredictor for NoVar {
            fn name(&self) -> String {
                "GCIP-M".into()
            }
            fn has_variance(&self) -> bool {
                false
            }
            fn predict(&self, _: &Scene, _: &[Candidate]) -> Result<Vec<DisplacementPrediction>> {
                unreachable!()
            }
        }
        let part = generate(3, Family::Ellipse);
        assert!(plan_precise(&scene(&part), &ConstScorer(0.1), &NoVar, 10, 0.03, 0).is_err());
    }
}

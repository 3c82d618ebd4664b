//! Corpus preparation and the two planning experiments: grasps chosen by
//! quality alone, and by quality then lowest predicted variance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::config::{Config, EvalConfig};
use super::metrics::rmse_metrics;
use crate::dataset::{corpus_stats, filter_corpus, split_objectwise, tag_splits, CollectConfig, PartStats};
use crate::error::{Error, Result};
use crate::models::DisplacementPrediction;
use crate::parts::{generate_corpus, Part, Pose};
use crate::physics::{simulate_pinch, Displacement, PhysicsParams};
use crate::planner::{plan_precise, plan_quality_only, Candidate, DisplacementPredictor, GraspScorer, PlanResult, Scene};
use crate::rng::{mix, mix3, rng, stream};
use crate::sensor::SensorConfig;

/// Generated parts, their statistics and the object-wise split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub parts: Vec<Part>,
    pub stats: Vec<PartStats>,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
}

impl Corpus {
    pub fn part(&self, id: u64) -> Option<&Part> {
        self.parts.iter().find(|p| p.part_id == id)
    }

    pub fn parts_of(&self, ids: &[u64]) -> Vec<Part> {
        ids.iter().filter_map(|&id| self.part(id).cloned()).collect()
    }
}

pub fn collect_config(cfg: &Config) -> CollectConfig {
    CollectConfig {
        grasps_per_part: cfg.corpus.grasps_per_part,
        master_seed: cfg.corpus.collect_seed,
        physics: cfg.physics,
        sensor: cfg.sensor,
        workers: cfg.corpus.workers,
    }
}

/// Splits retained ids. With caps set, a seeded subset of
/// `train_parts + val_parts` ids is split exactly into those sizes.
pub fn split_retained(retained: &[u64], cfg: &Config) -> Result<(Vec<u64>, Vec<u64>)> {
    let c = &cfg.corpus;
    if c.train_parts == 0 && c.val_parts == 0 {
        return split_objectwise(retained, c.val_fraction, c.split_seed);
    }
    let want = c.train_parts + c.val_parts;
    if retained.len() < want || c.train_parts == 0 || c.val_parts == 0 {
        return Err(Error::Configuration(format!(
            "{} parts survived filtering; {} train + {} val requested",
            retained.len(),
            c.train_parts,
            c.val_parts
        )));
    }
    let mut ids = retained.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut rng(mix(c.split_seed, stream::SPLIT)));
    let mut train = ids[..c.train_parts].to_vec();
    let mut val = ids[c.train_parts..want].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Generates the corpus, runs the statistics pass, filters and splits.
pub fn prepare_corpus(cfg: &Config) -> Result<Corpus> {
    let parts = generate_corpus(cfg.corpus.seed, cfg.corpus.parts);
    let mut stats = corpus_stats(&parts, &collect_config(cfg))?;
    let retained: Vec<u64> = filter_corpus(&stats).into_iter().collect();
    let (train, val) = split_retained(&retained, cfg)?;
    tag_splits(&mut stats, &train, &val);
    Ok(Corpus {
        parts,
        stats,
        train,
        val,
    })
}

/// Always predicts no displacement.
pub struct ZeroPredictor;

impl DisplacementPredictor for ZeroPredictor {
    fn name(&self) -> String {
        "ZERO".into()
    }

    fn has_variance(&self) -> bool {
        false
    }

    fn predict(&self, _: &Scene, c: &[Candidate]) -> Result<Vec<DisplacementPrediction>> {
        Ok(vec![
            DisplacementPrediction {
                mean: Displacement::ZERO,
                variance: None
            };
            c.len()
        ])
    }
}

/// One evaluated model on one trial (or a bare row for a failed grasp).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub experiment: String,
    pub selector: String,
    pub part_id: u64,
    pub trial: usize,
    pub candidate_index: usize,
    pub pool_size: usize,
    pub quality: f64,
    pub success: bool,
    pub truth: Displacement,
    /// Empty for failed grasps.
    pub model: String,
    pub prediction: Displacement,
}

pub const LOG_HEADER: &str = "experiment,selector,part_id,trial,candidate_index,pool_size,quality,success,true_dx,true_dy,true_dz,true_dtheta,model,pred_dx,pred_dy,pred_dz,pred_dtheta";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub model: String,
    pub evaluated: usize,
    pub trans_rmse_cm: f64,
    pub rot_rmse_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMetrics {
    pub part_id: u64,
    pub trials: usize,
    pub successes: usize,
    pub models: Vec<ModelMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub selector: String,
    pub trials: usize,
    pub successes: usize,
    pub pool_size: usize,
    pub models: Vec<ModelMetrics>,
    pub per_object: Vec<ObjectMetrics>,
    pub log: Vec<TrialRow>,
}

fn model_metrics(rows: &[&TrialRow]) -> Result<Vec<ModelMetrics>> {
    let mut by_model: BTreeMap<&str, (Vec<Displacement>, Vec<Displacement>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.success && !r.model.is_empty()) {
        let e = by_model.entry(&r.model).or_default();
        e.0.push(r.prediction);
        e.1.push(r.truth);
    }
    by_model
        .into_iter()
        .map(|(m, (p, t))| {
            let (tr, rot) = rmse_metrics(&p, &t)?;
            Ok(ModelMetrics {
                model: m.to_string(),
                evaluated: p.len(),
                trans_rmse_cm: tr,
                rot_rmse_deg: rot,
            })
        })
        .collect()
}

fn trial_counts(rows: &[&TrialRow]) -> (usize, usize) {
    let mut trials: BTreeMap<(u64, usize), bool> = BTreeMap::new();
    for r in rows {
        trials.insert((r.part_id, r.trial), r.success);
    }
    (trials.len(), trials.values().filter(|s| **s).count())
}

impl EvalReport {
    /// Aggregates a raw trial log. Reports are always built this way, so
    /// re-reading the emitted log reproduces them exactly.
    pub fn from_log(experiment: &str, selector: &str, log: Vec<TrialRow>) -> Result<EvalReport> {
        let all: Vec<&TrialRow> = log.iter().collect();
        let (trials, successes) = trial_counts(&all);
        let mut parts: BTreeMap<u64, Vec<&TrialRow>> = BTreeMap::new();
        for r in &log {
            parts.entry(r.part_id).or_default().push(r);
        }
        let per_object = parts
            .into_iter()
            .map(|(id, rows)| {
                let (t, s) = trial_counts(&rows);
                Ok(ObjectMetrics {
                    part_id: id,
                    trials: t,
                    successes: s,
                    models: model_metrics(&rows)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            experiment: experiment.into(),
            selector: selector.into(),
            trials,
            successes,
            pool_size: log.first().map(|r| r.pool_size).unwrap_or(0),
            models: model_metrics(&all)?,
            per_object,
            log,
        })
    }

    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("experiment,selector,model,trials,successes,success_rate,pool_size,evaluated,trans_rmse_cm,rot_rmse_deg\n");
        for m in &self.models {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                self.experiment,
                self.selector,
                m.model,
                self.trials,
                self.successes,
                self.success_rate(),
                self.pool_size,
                m.evaluated,
                m.trans_rmse_cm,
                m.rot_rmse_deg
            );
        }
        s
    }

    pub fn per_object_csv(&self) -> String {
        let mut s = String::from("experiment,selector,part_id,trials,successes,model,evaluated,trans_rmse_cm,rot_rmse_deg\n");
        for o in &self.per_object {
            if o.models.is_empty() {
                let _ = writeln!(s, "{},{},{},{},{},,0,,", self.experiment, self.selector, o.part_id, o.trials, o.successes);
            }
            for m in &o.models {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    self.experiment, self.selector, o.part_id, o.trials, o.successes, m.model, m.evaluated, m.trans_rmse_cm, m.rot_rmse_deg
                );
            }
        }
        s
    }

    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.log {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.experiment,
                r.selector,
                r.part_id,
                r.trial,
                r.candidate_index,
                r.pool_size,
                r.quality,
                u8::from(r.success),
                r.truth.dx,
                r.truth.dy,
                r.truth.dz,
                r.truth.dtheta,
                r.model,
                r.prediction.dx,
                r.prediction.dy,
                r.prediction.dz,
                r.prediction.dtheta
            );
        }
        s
    }
}

/// Parses the output of [`EvalReport::log_csv`].
pub fn parse_log_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::RejectedInput("trial log header mismatch".into()));
    }
    let bad = |i: usize| Error::RejectedInput(format!("malformed trial log line {}", i + 2));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 17 {
                return Err(bad(i));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i));
            let int = |k: usize| f[k].parse::<u64>().map_err(|_| bad(i));
            Ok(TrialRow {
                experiment: f[0].into(),
                selector: f[1].into(),
                part_id: int(2)?,
                trial: int(3)? as usize,
                candidate_index: int(4)? as usize,
                pool_size: int(5)? as usize,
                quality: num(6)?,
                success: int(7)? == 1,
                truth: Displacement::from_array([num(8)?, num(9)?, num(10)?, num(11)?]),
                model: f[12].into(),
                prediction: Displacement::from_array([num(13)?, num(14)?, num(15)?, num(16)?]),
            })
        })
        .collect()
}

/// Pose, observation noise and candidate seeds of one trial.
pub fn trial_setup(eval_seed: u64, part_id: u64, trial: usize) -> (Pose, u64, u64) {
    let s = mix3(eval_seed, part_id, trial as u64);
    let mut r = rng(mix(s, stream::POSE));
    let pose = Pose::new(
        r.random_range(-0.05..0.05),
        r.random_range(-0.05..0.05),
        r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    (pose, mix(s, stream::NOISE), mix(s, stream::GRASP))
}

struct Env<'a> {
    eval: &'a EvalConfig,
    sensor: SensorConfig,
    physics: PhysicsParams,
}

fn run_trials(
    env: &Env,
    parts: &[Part],
    experiment: &str,
    selector: &str,
    plan: &(dyn Fn(&Scene, u64) -> Result<PlanResult> + Sync),
    models: &[&dyn DisplacementPredictor],
) -> Result<Vec<TrialRow>> {
    let per_part: Vec<Result<Vec<TrialRow>>> = parts
        .par_iter()
        .map(|part| {
            let mut rows = Vec::new();
            for trial in 0..env.eval.trials_per_object {
                let (pose, noise, cand) = trial_setup(env.eval.seed, part.part_id, trial);
                let scene = Scene::new(part, pose, env.sensor, noise)?;
                let plan = plan(&scene, cand)?;
                let outcome = match simulate_pinch(part, &pose, &plan.grasp, &env.physics) {
                    Ok(o) => Some(o),
                    Err(Error::SimulationDivergence { steps }) => {
                        log::warn!("part {} trial {trial}: simulation diverged after {steps} steps, counted as a failure", part.part_id);
                        None
                    }
                    Err(e) => return Err(e),
                };
                let success = outcome.is_some_and(|o| o.success);
                let base = TrialRow {
                    experiment: experiment.into(),
                    selector: selector.into(),
                    part_id: part.part_id,
                    trial,
                    candidate_index: plan.candidate_index,
                    pool_size: plan.pool_size,
                    quality: plan.quality,
                    success,
                    truth: if success { outcome.expect("present").grasp_displacement } else { Displacement::ZERO },
                    model: String::new(),
                    prediction: Displacement::ZERO,
                };
                if !success {
                    rows.push(base);
                    continue;
                }
                let chosen = [Candidate {
                    index: plan.candidate_index,
                    grasp: plan.grasp,
                }];
                for m in models {
                    let prediction = match (m.name() == selector, plan.mu) {
                        (true, Some(mu)) => mu,
                        _ => match m.predict(&scene, &chosen) {
                            Ok(p) => p[0].mean,
                            Err(Error::UnknownObject(_)) => continue,
                            Err(e) => return Err(e),
                        },
                    };
                    rows.push(TrialRow {
                        model: m.name(),
                        prediction,
                        ..base.clone()
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_part {
        all.extend(r?);
    }
    Ok(all)
}

/// Experiment (1): highest predicted quality; every model predicts the
/// displacement of the chosen grasp.
pub fn run_experiment_quality(
    parts: &[Part],
    gqn: &dyn GraspScorer,
    models: &[&dyn DisplacementPredictor],
    eval: &EvalConfig,
    sensor: SensorConfig,
    physics: PhysicsParams,
) -> Result<EvalReport> {
    let env = Env { eval, sensor, physics };
    let plan = |scene: &Scene, seed: u64| plan_quality_only(scene, gqn, eval.candidates, seed);
    let log = run_trials(&env, parts, "exp1", "GQN", &plan, models)?;
    EvalReport::from_log("exp1", "GQN", log)
}

/// Experiment (2): for each variance model, the lowest-variance grasp of
/// the quality pool, evaluated on that model's own mean prediction.
pub fn run_experiment_precise(
    parts: &[Part],
    gqn: &dyn GraspScorer,
    mv_models: &[&dyn DisplacementPredictor],
    eval: &EvalConfig,
    sensor: SensorConfig,
    physics: PhysicsParams,
) -> Result<Vec<EvalReport>> {
    if let Some(m) = mv_models.iter().find(|m| !m.has_variance()) {
        return Err(Error::RejectedInput(format!(
            "{} predicts no variance; experiment (2) applies to LOWESS and M+V models only",
            m.name()
        )));
    }
    let env = Env { eval, sensor, physics };
    mv_models
        .iter()
        .map(|&m| {
            let name = m.name();
            let plan = |scene: &Scene, seed: u64| plan_precise(scene, gqn, m, eval.candidates, eval.top_fraction, seed);
            let log = run_trials(&env, parts, "exp2", &name, &plan, &[m])?;
            EvalReport::from_log("exp2", &name, log)
        })
        .collect()
}

/// Side-by-side RMSEs of each variance model under both selection rules.
pub fn comparison_csv(exp1: &EvalReport, exp2: &[EvalReport]) -> String {
    let mut s = String::from("model,exp1_trans_rmse_cm,exp1_rot_rmse_deg,exp1_evaluated,exp2_trans_rmse_cm,exp2_rot_rmse_deg,exp2_evaluated\n");
    for r in exp2 {
        let (Some(a), Some(b)) = (exp1.model(&r.selector), r.model(&r.selector)) else { continue };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.selector, a.trans_rmse_cm, a.rot_rmse_deg, a.evaluated, b.trans_rmse_cm, b.rot_rmse_deg, b.evaluated
        );
    }
    s
}

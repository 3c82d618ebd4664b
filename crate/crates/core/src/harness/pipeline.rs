//! File-backed pipeline stages behind the command line. Every stage reads
//! its inputs from and writes its outputs to the configured output
//! directory; each returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Config;
use super::experiments::{
    collect_config, comparison_csv, parse_log_csv, run_experiment_precise, run_experiment_quality, split_retained, trial_setup,
    EvalReport, ZeroPredictor,
};
use crate::dataset::{
    balanced_indices, collect, corpus_stats, decode_parts, encode_parts, filter_corpus, read_verified, select_parts,
    tag_splits, write_dataset, GraspRecord, Manifest, PartStats, Split,
};
use crate::error::{Error, Result};
use crate::models::{
    gdn_metrics_csv, gqn_metrics_csv, grad_check_head, init_gdn_from_gqn, train_gdn, train_gqn, Gdn, GdnVariant, Gqn, Head, Lowess, ObsKind,
};
use crate::parts::{generate_corpus, Part};
use crate::rng::mix;
use crate::planner::{plan_precise, plan_quality_only, DisplacementPredictor, Scene};

/// Output file layout.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: &Path) -> Paths {
        Paths { root: root.to_path_buf() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn parts(&self) -> PathBuf {
        self.file("parts.pgpc")
    }

    pub fn stats(&self) -> PathBuf {
        self.file("stats.csv")
    }

    pub fn retained(&self) -> PathBuf {
        self.file("retained.txt")
    }

    pub fn split(&self) -> PathBuf {
        self.file("split.txt")
    }

    pub fn dataset(&self) -> PathBuf {
        self.file("dataset.pgds")
    }

    pub fn gqn(&self) -> PathBuf {
        self.file("gqn.pgwt")
    }

    pub fn gdn(&self, v: GdnVariant) -> PathBuf {
        self.file(&format!("gdn-{}.pgwt", v.name().to_lowercase()))
    }

    pub fn report(&self, stem: &str) -> PathBuf {
        self.file(&format!("{stem}.csv"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path, produced_by: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Configuration(format!("cannot read {} ({e}); run `{produced_by}` first", path.display()))
    })
}

fn parse_ids(s: &str, what: &str) -> Result<Vec<u64>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::RejectedInput(format!("bad part id `{t}` in {what}"))))
        .collect()
}

fn load_parts(paths: &Paths) -> Result<Vec<Part>> {
    if !paths.parts().exists() {
        return Err(Error::Configuration(format!("{} missing; run `gen-parts` first", paths.parts().display())));
    }
    decode_parts(&fs::read(paths.parts())?)
}

pub fn stats_csv(stats: &[PartStats]) -> String {
    let mut s = String::from("part_id,family,attempts,successes,divergences,success_rate,longest_axis,split\n");
    for p in stats {
        let split = match p.split {
            Some(Split::Train) => "train",
            Some(Split::Val) => "val",
            None => "",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.part_id,
            p.family.name(),
            p.attempts,
            p.successes,
            p.divergences,
            p.success_rate(),
            p.longest_axis,
            split
        );
    }
    s
}

/// Reads `split.txt`: `(train, val)`.
pub fn load_split(paths: &Paths) -> Result<(Vec<u64>, Vec<u64>)> {
    let text = read_text(&paths.split(), "split")?;
    let (mut train, mut val) = (None, None);
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim() == "train" => train = Some(parse_ids(v, "split.txt")?),
            Some((k, v)) if k.trim() == "val" => val = Some(parse_ids(v, "split.txt")?),
            _ if line.trim().is_empty() => {}
            _ => return Err(Error::RejectedInput(format!("unexpected line in split.txt: `{line}`"))),
        }
    }
    match (train, val) {
        (Some(t), Some(v)) => Ok((t, v)),
        _ => Err(Error::RejectedInput("split.txt needs `train =` and `val =` lines".into())),
    }
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn gen_parts(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let parts = generate_corpus(cfg.corpus.seed, cfg.corpus.parts);
    fs::create_dir_all(&paths.root)?;
    fs::write(paths.parts(), encode_parts(&parts))?;
    Ok(format!("wrote {} parts to {}", parts.len(), paths.parts().display()))
}

/// Physics-only statistics pass over every part, then the retention filter.
pub fn filter(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let parts = load_parts(&paths)?;
    let stats = corpus_stats(&parts, &collect_config(cfg))?;
    let retained: Vec<u64> = filter_corpus(&stats).into_iter().collect();
    write(&paths.stats(), &stats_csv(&stats))?;
    write(&paths.retained(), &format!("{}\n", join_ids(&retained)))?;
    Ok(format!("retained {} of {} parts", retained.len(), parts.len()))
}

pub fn split(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let retained = parse_ids(&read_text(&paths.retained(), "filter")?, "retained.txt")?;
    let (train, val) = split_retained(&retained, cfg)?;
    write(&paths.split(), &format!("train = {}\nval = {}\n", join_ids(&train), join_ids(&val)))?;
    if let Ok(text) = fs::read_to_string(paths.stats()) {
        // Re-tag the statistics table with the split.
        let parts = load_parts(&paths)?;
        let mut stats = corpus_stats_from_csv(&text, &parts)?;
        tag_splits(&mut stats, &train, &val);
        write(&paths.stats(), &stats_csv(&stats))?;
    }
    Ok(format!("{} train parts, {} validation parts", train.len(), val.len()))
}

fn corpus_stats_from_csv(text: &str, parts: &[Part]) -> Result<Vec<PartStats>> {
    let bad = |i: usize| Error::RejectedInput(format!("malformed stats.csv line {}", i + 2));
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(i));
            }
            let id: u64 = f[0].parse().map_err(|_| bad(i))?;
            let part = parts.iter().find(|p| p.part_id == id).ok_or(Error::UnknownObject(id))?;
            Ok(PartStats {
                part_id: id,
                family: part.family,
                attempts: f[2].parse().map_err(|_| bad(i))?,
                successes: f[3].parse().map_err(|_| bad(i))?,
                divergences: f[4].parse().map_err(|_| bad(i))?,
                longest_axis: f[6].parse().map_err(|_| bad(i))?,
                split: None,
            })
        })
        .collect()
}

/// Collects the split parts (or the retained parts, or all parts, whichever
/// selection exists first).
pub fn collect_dataset(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let parts = load_parts(&paths)?;
    let ids: Option<Vec<u64>> = if paths.split().exists() {
        let (mut t, v) = load_split(&paths)?;
        t.extend(v);
        t.sort_unstable();
        Some(t)
    } else if paths.retained().exists() {
        Some(parse_ids(&fs::read_to_string(paths.retained())?, "retained.txt")?)
    } else {
        None
    };
    let chosen: Vec<Part> = match ids {
        Some(ids) => parts.into_iter().filter(|p| ids.binary_search(&p.part_id).is_ok()).collect(),
        None => parts,
    };
    let cc = collect_config(cfg);
    let c = collect(&chosen, &cc)?;
    write_dataset(&paths.dataset(), &c.records, &Manifest::for_collection(&c, &cc))?;
    Ok(format!(
        "collected {} grasps on {} parts ({} successful, {} divergences skipped)",
        c.records.len(),
        chosen.len(),
        c.positives(),
        c.divergences()
    ))
}

fn load_records(paths: &Paths) -> Result<Vec<GraspRecord>> {
    if !paths.dataset().exists() {
        return Err(Error::Configuration(format!("{} missing; run `collect` first", paths.dataset().display())));
    }
    Ok(read_verified(&paths.dataset())?.0)
}

/// Class-balanced training and validation records for the quality network.
pub fn gqn_training_sets<'a>(
    cfg: &Config,
    records: &'a [GraspRecord],
    train: &[u64],
    val: &[u64],
) -> Result<(Vec<&'a GraspRecord>, Vec<&'a GraspRecord>)> {
    let tr = select_parts(records, train);
    let va = select_parts(records, val);
    let pick = |rs: &[&'a GraspRecord], seed| -> Result<Vec<&'a GraspRecord>> {
        Ok(balanced_indices(rs, seed)?.into_iter().map(|i| rs[i]).collect())
    };
    Ok((pick(&tr, mix(cfg.gqn.seed, 1))?, pick(&va, mix(cfg.gqn.seed, 2))?))
}

/// Successful records of the given parts.
pub fn successful_of<'a>(records: &'a [GraspRecord], ids: &[u64]) -> Vec<&'a GraspRecord> {
    select_parts(records, ids).into_iter().filter(|r| r.success).collect()
}

/// Fresh displacement network; patch variants copy the quality network's
/// filters when one is given. Returns whether filters were transferred.
pub fn initial_gdn(cfg: &Config, variant: GdnVariant, gqn: Option<&Gqn>) -> Result<(Gdn, bool)> {
    match gqn {
        Some(g) => init_gdn_from_gqn(g, variant, cfg.gdn.seed),
        None => Ok((Gdn::new(variant, cfg.gdn.seed), false)),
    }
}

pub fn train_gqn_stage(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let records = load_records(&paths)?;
    let (train, val) = load_split(&paths)?;
    let (trb, vab) = gqn_training_sets(cfg, &records, &train, &val)?;
    let (gqn, metrics) = train_gqn(&trb, &vab, &cfg.gqn)?;
    gqn.save(&paths.gqn())?;
    write(&paths.report("gqn_metrics"), &gqn_metrics_csv(&metrics))?;
    let last = metrics.last().expect("at least one epoch");
    Ok(format!(
        "GQN trained for {} epochs: train accuracy {:.3}, validation accuracy {:.3}",
        metrics.len(),
        last.train_accuracy,
        last.val_accuracy
    ))
}

pub fn train_gdn_stage(cfg: &Config, variant: GdnVariant) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let records = load_records(&paths)?;
    let (train, val) = load_split(&paths)?;
    let trr = successful_of(&records, &train);
    let var = successful_of(&records, &val);
    let gqn = match variant.observation() {
        ObsKind::Gcip if paths.gqn().exists() => Some(Gqn::load(&paths.gqn())?),
        _ => None,
    };
    let (init, transferred) = initial_gdn(cfg, variant, gqn.as_ref())?;
    let (gdn, metrics) = train_gdn(init, &trr, &var, &cfg.gdn)?;
    gdn.save(&paths.gdn(variant))?;
    write(&paths.report(&format!("gdn-{}_metrics", variant.name().to_lowercase())), &gdn_metrics_csv(&metrics))?;
    let last = metrics.last().expect("at least one epoch");
    Ok(format!(
        "{} trained for {} epochs{}: validation RMSE {:.3} cm, {:.2} deg",
        variant.name(),
        metrics.len(),
        if transferred { " from GQN filters" } else { "" },
        last.val_trans_rmse_cm,
        last.val_rot_rmse_deg
    ))
}

struct EvalInputs {
    val_parts: Vec<Part>,
    gqn: Gqn,
    lowess: Lowess,
    gdns: Vec<Gdn>,
}

fn eval_inputs(cfg: &Config) -> Result<EvalInputs> {
    let paths = Paths::new(&cfg.out_dir);
    let parts = load_parts(&paths)?;
    let (_, val) = load_split(&paths)?;
    if !paths.gqn().exists() {
        return Err(Error::Configuration("gqn.pgwt missing; run `train-gqn` first".into()));
    }
    let gqn = Gqn::load(&paths.gqn())?;
    let records = load_records(&paths)?;
    let lowess = Lowess::from_records(&successful_of(&records, &val));
    let mut gdns = Vec::new();
    for v in GdnVariant::ALL {
        if paths.gdn(v).exists() {
            gdns.push(Gdn::load(v, &paths.gdn(v))?);
        }
    }
    let val_parts = parts.into_iter().filter(|p| val.contains(&p.part_id)).collect();
    Ok(EvalInputs {
        val_parts,
        gqn,
        lowess,
        gdns,
    })
}

fn write_report(paths: &Paths, stem: &str, r: &EvalReport) -> Result<()> {
    write(&paths.report(&format!("{stem}_summary")), &r.summary_csv())?;
    write(&paths.report(&format!("{stem}_per_object")), &r.per_object_csv())?;
    write(&paths.report(&format!("{stem}_log")), &r.log_csv())
}

fn exp1(cfg: &Config, inputs: &EvalInputs) -> Result<EvalReport> {
    let zero = ZeroPredictor;
    let mut models: Vec<&dyn DisplacementPredictor> = vec![&zero, &inputs.lowess];
    models.extend(inputs.gdns.iter().map(|g| g as &dyn DisplacementPredictor));
    run_experiment_quality(&inputs.val_parts, &inputs.gqn, &models, &cfg.eval, cfg.sensor, cfg.physics)
}

pub fn eval_exp1(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let report = exp1(cfg, &eval_inputs(cfg)?)?;
    write_report(&paths, "exp1", &report)?;
    Ok(report.summary_csv())
}

/// Experiment (2) for LOWESS and every trained M+V model, plus the
/// comparison against experiment (1), reusing its log when present.
pub fn eval_exp2(cfg: &Config) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let inputs = eval_inputs(cfg)?;
    let mut models: Vec<&dyn DisplacementPredictor> = vec![&inputs.lowess];
    models.extend(inputs.gdns.iter().filter(|g| g.variant.has_variance()).map(|g| g as &dyn DisplacementPredictor));
    let reports = run_experiment_precise(&inputs.val_parts, &inputs.gqn, &models, &cfg.eval, cfg.sensor, cfg.physics)?;
    let e1 = match fs::read_to_string(paths.report("exp1_log")) {
        Ok(text) => EvalReport::from_log("exp1", "GQN", parse_log_csv(&text)?)?,
        Err(_) => {
            let r = exp1(cfg, &inputs)?;
            write_report(&paths, "exp1", &r)?;
            r
        }
    };
    let mut out = String::new();
    for r in &reports {
        let stem = format!("exp2-{}", r.selector.to_lowercase());
        write_report(&paths, &stem, r)?;
        out.push_str(&r.summary_csv());
    }
    let cmp = comparison_csv(&e1, &reports);
    write(&paths.report("comparison"), &cmp)?;
    out.push_str(&cmp);
    Ok(out)
}

/// Plans one grasp on a validation part, as trial `trial` of the evaluation.
pub fn plan(cfg: &Config, part_id: Option<u64>, trial: usize, variant: Option<GdnVariant>) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let parts = load_parts(&paths)?;
    let id = match part_id {
        Some(id) => id,
        None => *load_split(&paths)?.1.first().ok_or_else(|| Error::RejectedInput("empty validation split".into()))?,
    };
    let part = parts.iter().find(|p| p.part_id == id).ok_or(Error::UnknownObject(id))?;
    let gqn = Gqn::load(&paths.gqn())?;
    let (pose, noise, seed) = trial_setup(cfg.eval.seed, id, trial);
    let scene = Scene::new(part, pose, cfg.sensor, noise)?;
    let result = match variant {
        None => plan_quality_only(&scene, &gqn, cfg.eval.candidates, seed)?,
        Some(v) => {
            let gdn = Gdn::load(v, &paths.gdn(v))?;
            plan_precise(&scene, &gqn, &gdn, cfg.eval.candidates, cfg.eval.top_fraction, seed)?
        }
    };
    Ok(format!("part={id} trial={trial} {}", result.report_line()))
}

/// Gradient check of every head shape over `seeds` seeds; returns the
/// largest relative error and a per-head report.
pub fn gradcheck(seeds: u64) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    let mut s = String::new();
    for (label, head, action_dim) in [
        ("GQN", Head::Quality, 3),
        ("GDN OCFI-M", Head::Mean, 4),
        ("GDN OCFI-M+V", Head::MeanVar, 4),
        ("GDN GCIP-M", Head::Mean, 3),
        ("GDN GCIP-M+V", Head::MeanVar, 3),
    ] {
        let mut head_worst: f64 = 0.0;
        for seed in 0..seeds {
            head_worst = head_worst.max(grad_check_head(head, action_dim, seed)?);
        }
        let _ = writeln!(s, "{label}: max relative error {head_worst:.3e} over {seeds} seeds");
        worst = worst.max(head_worst);
    }
    Ok((worst, s))
}

//! Flat `key = value` configuration with `#` comments. Every key has a
//! default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::TrainConfig;
use crate::physics::PhysicsParams;
use crate::sensor::SensorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Parts generated before filtering.
    pub parts: usize,
    pub grasps_per_part: usize,
    pub collect_seed: u64,
    pub split_seed: u64,
    pub val_fraction: f64,
    /// Caps on retained parts per split (0 = no cap).
    pub train_parts: usize,
    pub val_parts: usize,
    /// Collection threads (0 = all cores).
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub candidates: usize,
    pub top_fraction: f64,
    pub trials_per_object: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub physics: PhysicsParams,
    pub sensor: SensorConfig,
    pub corpus: CorpusConfig,
    pub gqn: TrainConfig,
    pub gdn: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            physics: PhysicsParams::default(),
            sensor: SensorConfig::default(),
            corpus: CorpusConfig {
                seed: 1,
                parts: 1000,
                grasps_per_part: 1000,
                collect_seed: 2,
                split_seed: 3,
                val_fraction: 0.146,
                train_parts: 0,
                val_parts: 0,
                workers: 0,
            },
            gqn: TrainConfig { seed: 4, ..TrainConfig::paper() },
            gdn: TrainConfig { seed: 5, ..TrainConfig::paper() },
            eval: EvalConfig {
                candidates: 3200,
                top_fraction: 0.03,
                trials_per_object: 30,
                seed: 6,
            },
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Configuration(format!("`{value}` is not a valid value for {key}")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        pub const KEYS: &[&str] = &[$($key),*];

        impl Config {
            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    "output.dir" => self.out_dir = PathBuf::from(value),
                    $($key => self.$($field).+ = parse($key, value)?,)*
                    _ => return Err(Error::UnknownConfigKey { key: key.to_string(), line }),
                }
                Ok(())
            }

            /// All keys with their current values, in file syntax.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", $key, self.$($field).+);)*
                let _ = writeln!(s, "output.dir = {}", self.out_dir.display());
                s
            }
        }
    };
}

config_keys! {
    "physics.pad_width" => physics.pad_width,
    "physics.max_opening" => physics.max_opening,
    "physics.closing_step" => physics.closing_step,
    "physics.friction" => physics.friction,
    "physics.k_rot" => physics.k_rot,
    "physics.torque_tol" => physics.torque_tol,
    "physics.rot_step_cap" => physics.rot_step_cap,
    "physics.contact_tol" => physics.contact_tol,
    "physics.min_separation" => physics.min_separation,
    "physics.max_steps" => physics.max_steps,
    "sensor.full_window" => sensor.full_window,
    "sensor.patch_window" => sensor.patch_window,
    "sensor.camera_height" => sensor.camera_height,
    "sensor.noise_sigma" => sensor.noise_sigma,
    "corpus.seed" => corpus.seed,
    "corpus.parts" => corpus.parts,
    "corpus.grasps_per_part" => corpus.grasps_per_part,
    "corpus.collect_seed" => corpus.collect_seed,
    "corpus.split_seed" => corpus.split_seed,
    "corpus.val_fraction" => corpus.val_fraction,
    "corpus.train_parts" => corpus.train_parts,
    "corpus.val_parts" => corpus.val_parts,
    "corpus.workers" => corpus.workers,
    "gqn.epochs" => gqn.epochs,
    "gqn.batch_size" => gqn.batch_size,
    "gqn.lr" => gqn.lr,
    "gqn.lr_decay" => gqn.lr_decay,
    "gqn.seed" => gqn.seed,
    "gdn.epochs" => gdn.epochs,
    "gdn.batch_size" => gdn.batch_size,
    "gdn.lr" => gdn.lr,
    "gdn.lr_decay" => gdn.lr_decay,
    "gdn.seed" => gdn.seed,
    "eval.candidates" => eval.candidates,
    "eval.top_fraction" => eval.top_fraction,
    "eval.trials_per_object" => eval.trials_per_object,
    "eval.seed" => eval.seed,
}

impl Config {
    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Configuration(format!("line {}: expected `key = value`", i + 1)));
            };
            c.set(k.trim(), v.trim(), i + 1)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Replaces every seed with one derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        use crate::rng::mix;
        self.corpus.seed = mix(seed, 1);
        self.corpus.collect_seed = mix(seed, 2);
        self.corpus.split_seed = mix(seed, 3);
        self.gqn.seed = mix(seed, 4);
        self.gdn.seed = mix(seed, 5);
        self.eval.seed = mix(seed, 6);
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        let s = &self.sensor;
        if !(s.full_window > 0.0 && s.patch_window > 0.0 && s.camera_height > 0.0 && s.noise_sigma >= 0.0) {
            return Err(Error::Configuration("sensor windows and camera height must be positive, noise non-negative".into()));
        }
        if self.corpus.parts == 0 || self.corpus.grasps_per_part == 0 {
            return Err(Error::Configuration("corpus.parts and corpus.grasps_per_part must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.corpus.val_fraction) {
            return Err(Error::Configuration("corpus.val_fraction must lie in [0, 1)".into()));
        }
        if self.eval.candidates == 0 || !(self.eval.top_fraction > 0.0 && self.eval.top_fraction <= 1.0) {
            return Err(Error::Configuration("eval.candidates must be positive and eval.top_fraction in (0, 1]".into()));
        }
        for t in [&self.gqn, &self.gdn] {
            if t.batch_size == 0 || !(t.lr > 0.0) || !(t.lr_decay >= 0.0) {
                return Err(Error::Configuration(format!("invalid training settings {t:?}")));
            }
        }
        Ok(())
    }
}

//! Grasp data collection, object filtering, object-wise splitting, class
//! balancing and the `PGDS` record container.
//!
//! Container layout (little-endian): `"PGDS"`, u16 version = 1, u64 record
//! count, then per record: u64 part id, pose (3×f64), grasp (4×f64), u8
//! success, object displacement (4×f64), grasp displacement (4×f64), OCFI
//! (4096×f32 row-major), GCIP (4096×f32 row-major). A text manifest with
//! `key=value` lines sits next to the container at `<path>.manifest`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::parts::{bounding_box, Family, Part, Pose};
use crate::physics::{sample_grasp, simulate_pinch, Displacement, Grasp, PhysicsParams};
use crate::rng::{mix, mix3, rng, stream};
use crate::sensor::{add_noise, render_full, PatchRenderer, SensorConfig, PIXELS};

pub const MAGIC: &[u8; 4] = b"PGDS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 8;
pub const RECORD_BYTES: usize = 8 + 3 * 8 + 4 * 8 + 1 + 4 * 8 + 4 * 8 + 2 * PIXELS * 4;

/// Planar offset range of the random resting pose (meters, per axis).
pub const POSE_OFFSET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRecord {
    pub part_id: u64,
    pub pose: Pose,
    pub grasp: Grasp,
    pub success: bool,
    pub object_displacement: Displacement,
    /// Zero when `success` is false.
    pub grasp_displacement: Displacement,
    /// Object-centric full image, noisy, unstandardized.
    pub ocfi: Vec<f32>,
    /// Grasp-centric patch, noisy, unstandardized.
    pub gcip: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartStats {
    pub part_id: u64,
    pub family: Family,
    /// Simulated attempts, excluding divergences.
    pub attempts: usize,
    pub successes: usize,
    pub divergences: usize,
    pub longest_axis: f64,
    pub split: Option<Split>,
}

impl PartStats {
    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub grasps_per_part: usize,
    pub master_seed: u64,
    pub physics: PhysicsParams,
    pub sensor: SensorConfig,
    /// Worker threads; 0 uses the global pool. Never affects the output.
    pub workers: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            grasps_per_part: 1000,
            master_seed: 0,
            physics: PhysicsParams::default(),
            sensor: SensorConfig::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    /// Records in ascending part id order, then attempt order.
    pub records: Vec<GraspRecord>,
    pub stats: Vec<PartStats>,
}

impl Collection {
    pub fn divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }
}

/// Seed stream of one part; independent of corpus order and worker count.
pub fn part_seed(master_seed: u64, part_id: u64) -> u64 {
    mix(master_seed, part_id)
}

/// Random resting pose of a part for a collection run.
pub fn resting_pose(master_seed: u64, part_id: u64) -> Pose {
    let mut r = rng(mix(part_seed(master_seed, part_id), stream::POSE));
    let x = r.random_range(-POSE_OFFSET..POSE_OFFSET);
    let y = r.random_range(-POSE_OFFSET..POSE_OFFSET);
    let theta = r.random_range(-PI..PI);
    Pose::new(x, y, theta)
}

fn attempt_seed(master_seed: u64, part_id: u64, attempt: usize, purpose: u64) -> u64 {
    mix3(part_seed(master_seed, part_id), purpose, attempt as u64)
}

/// Grasp sampling box of a posed part, relative to its centroid.
pub fn grasp_box(part: &Part, pose: &Pose) -> crate::geom::Rect {
    bounding_box(part, pose).translated(Point2::new(-pose.x, -pose.y))
}

fn check_corpus(parts: &[Part]) -> Result<()> {
    if parts.is_empty() {
        return Err(Error::RejectedInput("empty part corpus".into()));
    }
    let ids: BTreeSet<u64> = parts.iter().map(|p| p.part_id).collect();
    if ids.len() != parts.len() {
        return Err(Error::RejectedInput("duplicate part ids in corpus".into()));
    }
    Ok(())
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn sorted_by_id(parts: &[Part]) -> Vec<&Part> {
    let mut v: Vec<&Part> = parts.iter().collect();
    v.sort_by_key(|p| p.part_id);
    v
}

fn part_records(part: &Part, cfg: &CollectConfig, render: bool) -> Result<(Vec<GraspRecord>, PartStats)> {
    let seed = cfg.master_seed;
    let pose = resting_pose(seed, part.part_id);
    let bbox = grasp_box(part, &pose);
    let views = if render {
        let s = &cfg.sensor;
        Some((
            render_full(part, &pose, s.full_window, s.camera_height)?,
            PatchRenderer::new(part, &pose, s.patch_window, s.camera_height)?,
        ))
    } else {
        None
    };
    let mut stats = PartStats {
        part_id: part.part_id,
        family: part.family,
        attempts: 0,
        successes: 0,
        divergences: 0,
        longest_axis: part.longest_axis(),
        split: None,
    };
    let mut records = Vec::new();
    for i in 0..cfg.grasps_per_part {
        let grasp = sample_grasp(&bbox, part.height, attempt_seed(seed, part.part_id, i, stream::GRASP));
        let out = match simulate_pinch(part, &pose, &grasp, &cfg.physics) {
            Ok(o) => o,
            Err(Error::SimulationDivergence { steps }) => {
                log::debug!("part {} attempt {i}: diverged after {steps} steps, dropped", part.part_id);
                stats.divergences += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        stats.attempts += 1;
        stats.successes += usize::from(out.success);
        if let Some((full, patches)) = &views {
            let noise = attempt_seed(seed, part.part_id, i, stream::NOISE);
            let sigma = cfg.sensor.noise_sigma;
            records.push(GraspRecord {
                part_id: part.part_id,
                pose,
                grasp,
                success: out.success,
                object_displacement: out.object_displacement,
                grasp_displacement: if out.success { out.grasp_displacement } else { Displacement::ZERO },
                ocfi: add_noise(full, sigma, mix(noise, 0)).to_f32(),
                gcip: add_noise(&patches.render(&grasp), sigma, mix(noise, 1)).to_f32(),
            });
        }
    }
    Ok((records, stats))
}

fn run(parts: &[Part], cfg: &CollectConfig, render: bool) -> Result<Collection> {
    check_corpus(parts)?;
    cfg.physics.validate()?;
    let ordered = sorted_by_id(parts);
    let per_part: Vec<Result<(Vec<GraspRecord>, PartStats)>> =
        with_pool(cfg.workers, || ordered.par_iter().map(|p| part_records(p, cfg, render)).collect())?;
    let mut records = Vec::new();
    let mut stats = Vec::with_capacity(parts.len());
    for r in per_part {
        let (recs, st) = r?;
        records.extend(recs);
        stats.push(st);
    }
    Ok(Collection { records, stats })
}

/// Renders, samples, simulates and records `grasps_per_part` attempts on
/// every part. Divergent attempts are dropped and counted in the stats.
pub fn collect(parts: &[Part], cfg: &CollectConfig) -> Result<Collection> {
    run(parts, cfg, true)
}

/// The per-part statistics `collect` would report, without rendering.
pub fn corpus_stats(parts: &[Part], cfg: &CollectConfig) -> Result<Vec<PartStats>> {
    Ok(run(parts, cfg, false)?.stats)
}

pub const MIN_SUCCESS_RATE: f64 = 0.05;
pub const MAX_SUCCESS_RATE: f64 = 0.40;
pub const MIN_AXIS: f64 = 0.02;
pub const MAX_AXIS: f64 = 0.15;

/// Ids of parts that are neither too hard, too easy, too large nor too
/// small. All bounds are inclusive.
pub fn filter_corpus(stats: &[PartStats]) -> BTreeSet<u64> {
    stats
        .iter()
        .filter(|s| {
            let r = s.success_rate();
            (MIN_SUCCESS_RATE..=MAX_SUCCESS_RATE).contains(&r) && (MIN_AXIS..=MAX_AXIS).contains(&s.longest_axis)
        })
        .map(|s| s.part_id)
        .collect()
}

/// Seeded object-wise partition; `round(n · val_fraction)` parts (at least
/// one, at most n − 1) go to validation. Both halves come back sorted.
pub fn split_objectwise(part_ids: &[u64], val_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    let mut ids: Vec<u64> = part_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::RejectedInput(format!("object-wise split needs at least 2 parts, got {}", ids.len())));
    }
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::RejectedInput(format!("validation fraction {val_fraction} outside [0, 1]")));
    }
    let n = ids.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    ids.shuffle(&mut rng(mix(seed, stream::SPLIT)));
    let mut val = ids.split_off(n - n_val);
    ids.sort_unstable();
    val.sort_unstable();
    Ok((ids, val))
}

/// Sets the split tag of every stats row from the two id sets.
pub fn tag_splits(stats: &mut [PartStats], train: &[u64], val: &[u64]) {
    let t: BTreeSet<_> = train.iter().collect();
    let v: BTreeSet<_> = val.iter().collect();
    for s in stats {
        s.split = if t.contains(&s.part_id) {
            Some(Split::Train)
        } else if v.contains(&s.part_id) {
            Some(Split::Val)
        } else {
            None
        };
    }
}

/// Records whose part id is in `ids`, in their original order.
pub fn select_parts<'a>(records: &'a [GraspRecord], ids: &[u64]) -> Vec<&'a GraspRecord> {
    let set: BTreeSet<_> = ids.iter().collect();
    records.iter().filter(|r| set.contains(&r.part_id)).collect()
}

/// Uniformly undersamples the majority class so both classes are equally
/// represented. Kept records stay in input order.
pub fn balance_for_gqn<'a, R: AsRef<GraspRecord>>(records: &'a [R], seed: u64) -> Result<Vec<&'a GraspRecord>> {
    Ok(balanced_indices(records, seed)?.into_iter().map(|i| records[i].as_ref()).collect())
}

/// Ascending indices of the records [`balance_for_gqn`] keeps.
pub fn balanced_indices<R: AsRef<GraspRecord>>(records: &[R], seed: u64) -> Result<Vec<usize>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| records[i].as_ref().success);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UnbalanceableData(format!(
            "{} positive and {} negative records",
            pos.len(),
            neg.len()
        )));
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let picks = index::sample(&mut rng(mix(seed, stream::BALANCE)), majority.len(), minority.len());
    let mut keep: Vec<usize> = minority.into_iter().chain(picks.into_iter().map(|k| majority[k])).collect();
    keep.sort_unstable();
    Ok(keep)
}

pub fn successful_only<'a, R: AsRef<GraspRecord>>(records: &'a [R]) -> Vec<&'a GraspRecord> {
    records.iter().map(|r| r.as_ref()).filter(|r| r.success).collect()
}

impl AsRef<GraspRecord> for GraspRecord {
    fn as_ref(&self) -> &GraspRecord {
        self
    }
}

pub fn encode(records: &[GraspRecord]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.buf.reserve(HEADER_BYTES + records.len() * RECORD_BYTES);
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u64(records.len() as u64);
    for r in records {
        if r.ocfi.len() != PIXELS || r.gcip.len() != PIXELS {
            return Err(Error::Shape(format!("record images must hold {PIXELS} pixels")));
        }
        if !r.success && r.grasp_displacement != Displacement::ZERO {
            return Err(Error::RejectedInput("failed grasp with a non-zero grasp displacement".into()));
        }
        w.u64(r.part_id);
        for v in [r.pose.x, r.pose.y, r.pose.theta] {
            w.f64(v);
        }
        for v in r.grasp.as_array() {
            w.f64(v);
        }
        w.u8(u8::from(r.success));
        for v in r.object_displacement.as_array().into_iter().chain(r.grasp_displacement.as_array()) {
            w.f64(v);
        }
        for &v in r.ocfi.iter().chain(&r.gcip) {
            w.f32(v);
        }
    }
    Ok(w.buf)
}

fn f64x4(r: &mut Reader, what: &str) -> Result<[f64; 4]> {
    Ok([r.f64(what)?, r.f64(what)?, r.f64(what)?, r.f64(what)?])
}

pub fn decode(bytes: &[u8]) -> Result<Vec<GraspRecord>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return r.fail(at, format!("unsupported version {version}"));
    }
    let at = r.pos;
    let count = r.u64("record count")?;
    let body = r.remaining();
    if count.checked_mul(RECORD_BYTES as u64) != Some(body as u64) {
        return r.fail(at, format!("header declares {count} records but the body holds {body} bytes"));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let part_id = r.u64("part id")?;
        let (x, y, theta) = (r.f64("pose")?, r.f64("pose")?, r.f64("pose")?);
        let g = f64x4(&mut r, "grasp")?;
        let at = r.pos;
        let success = match r.u8("success flag")? {
            0 => false,
            1 => true,
            b => return r.fail(at, format!("success flag {b} is not 0 or 1")),
        };
        let dp = f64x4(&mut r, "object displacement")?;
        let at = r.pos;
        let dg = f64x4(&mut r, "grasp displacement")?;
        if !success && dg != [0.0; 4] {
            return r.fail(at, "failed grasp carries a grasp displacement");
        }
        out.push(GraspRecord {
            part_id,
            pose: Pose { x, y, theta },
            grasp: Grasp {
                gx: g[0],
                gy: g[1],
                gz: g[2],
                gtheta: g[3],
            },
            success,
            object_displacement: Displacement::from_array(dp),
            grasp_displacement: Displacement::from_array(dg),
            ocfi: r.f32s(PIXELS, "ocfi pixel")?,
            gcip: r.f32s(PIXELS, "gcip pixel")?,
        });
    }
    r.expect_end()?;
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar `key=value` text, keys sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Configuration(format!("manifest line {} has no '='", i + 1)));
            };
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    /// Accounting entries for a collection run.
    pub fn for_collection(c: &Collection, cfg: &CollectConfig) -> Manifest {
        let mut m = Manifest::default();
        m.set("master_seed", cfg.master_seed);
        m.set("grasps_per_part", cfg.grasps_per_part);
        m.set("parts", c.stats.len());
        m.set("records", c.records.len());
        m.set("positives", c.positives());
        m.set("divergences", c.divergences());
        let p = &cfg.physics;
        m.set("physics.pad_width", p.pad_width);
        m.set("physics.max_opening", p.max_opening);
        m.set("physics.closing_step", p.closing_step);
        m.set("physics.friction", p.friction);
        m.set("physics.k_rot", p.k_rot);
        m.set("physics.torque_tol", p.torque_tol);
        m.set("physics.max_steps", p.max_steps);
        let s = &cfg.sensor;
        m.set("sensor.full_window", s.full_window);
        m.set("sensor.patch_window", s.patch_window);
        m.set("sensor.camera_height", s.camera_height);
        m.set("sensor.noise_sigma", s.noise_sigma);
        m
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the container and its manifest; the manifest gains `sha256`.
pub fn write_dataset(path: &Path, records: &[GraspRecord], manifest: &Manifest) -> Result<()> {
    let bytes = encode(records)?;
    let mut m = manifest.clone();
    m.set("sha256", sha256_hex(&bytes));
    m.set("records", records.len());
    std::fs::write(path, &bytes)?;
    std::fs::write(manifest_path(path), m.to_text())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<GraspRecord>> {
    decode(&std::fs::read(path)?)
}

/// Reads a container and checks it against the digest in its manifest.
pub fn read_verified(path: &Path) -> Result<(Vec<GraspRecord>, Manifest)> {
    let bytes = std::fs::read(path)?;
    let m = Manifest::parse(&std::fs::read_to_string(manifest_path(path))?)?;
    let digest = sha256_hex(&bytes);
    if m.get("sha256") != Some(digest.as_str()) {
        return Err(Error::corrupt(0, format!("digest {digest} does not match the manifest")));
    }
    Ok((decode(&bytes)?, m))
}

pub const PARTS_MAGIC: &[u8; 4] = b"PGPC";

/// Parts corpus layout: `"PGPC"`, u16 version, u64 count, then per part:
/// u64 id, u8 family code, f64 height, u32 ring count (outer first), and
/// per ring u32 vertex count followed by x, y pairs.
pub fn encode_parts(parts: &[Part]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(PARTS_MAGIC);
    w.u16(VERSION);
    w.u64(parts.len() as u64);
    for p in parts {
        w.u64(p.part_id);
        w.u8(p.family.code());
        w.f64(p.height);
        w.u32(1 + p.holes.len() as u32);
        for ring in p.rings() {
            w.u32(ring.len() as u32);
            for v in ring {
                w.f64(v.x);
                w.f64(v.y);
            }
        }
    }
    w.buf
}

pub fn decode_parts(bytes: &[u8]) -> Result<Vec<Part>> {
    let mut r = Reader::new(bytes);
    r.magic(PARTS_MAGIC)?;
    let at = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return r.fail(at, format!("unsupported version {version}"));
    }
    let count = r.u64("part count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let part_id = r.u64("part id")?;
        let at = r.pos;
        let family = match Family::from_code(r.u8("family")?) {
            Some(f) => f,
            None => return r.fail(at, "unknown family code"),
        };
        let height = r.f64("height")?;
        let at = r.pos;
        let rings = r.u32("ring count")? as usize;
        if rings == 0 {
            return r.fail(at, "part without an outer ring");
        }
        let mut all = Vec::with_capacity(rings);
        for _ in 0..rings {
            let at = r.pos;
            let n = r.u32("vertex count")? as usize;
            if n < 3 || n.saturating_mul(16) > r.remaining() {
                return r.fail(at, format!("implausible vertex count {n}"));
            }
            let mut ring = Vec::with_capacity(n);
            for _ in 0..n {
                ring.push(Point2::new(r.f64("vertex")?, r.f64("vertex")?));
            }
            all.push(ring);
        }
        let outer = all.remove(0);
        out.push(Part {
            part_id,
            family,
            height,
            outer,
            holes: all,
        });
    }
    r.expect_end()?;
    Ok(out)
}

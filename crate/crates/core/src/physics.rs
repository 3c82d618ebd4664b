//! Deterministic quasi-static parallel-jaw pinch oracle.
//!
//! The simulation runs in the gripper frame: `u` is the closing axis and
//! `v` the lateral axis, origin at the grasp centre. Two pads of width
//! `pad_width` start at `u = ±max_opening / 2` and close symmetrically in
//! steps of `closing_step`. Only the part of the object that lies in the
//! lateral band `|v| <= pad_width / 2` can touch a pad; its extent along
//! `u` is computed exactly by clipping the outer ring to the band (holes
//! never carry the band extrema).
//!
//! Stepper, per iteration:
//!
//! * one pad in contact: the object is translated along that pad's normal
//!   by the penetration depth and rotated about its centroid by
//!   `k_rot * torque` (unit push force, capped at `rot_step_cap`);
//! * both pads in contact: the object is centred between the pads, which
//!   stop at the band width. The residual torque is the lateral gap
//!   between the two contact patches. Within `torque_tol` the grasp is
//!   judged by the friction cone; otherwise the object is rotated in the
//!   width-reducing direction and the step cap halves whenever the torque
//!   changes sign;
//! * no contact: pads advance by one step.
//!
//! The grasp fails when the pads land on material, the jaws close to
//! `min_separation` without two-sided contact, the object leaves the band
//! (squeeze-out), a contact normal leaves the friction cone, or the object
//! jams.

use std::f64::consts::FRAC_PI_2;

use rand::distr::Open01;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{wrap_pi, Point2, Rect};
use crate::parts::{Part, Pose};
use crate::rng;

/// Top-down grasp relative to the object's geometric centre. `gx, gy` are
/// world-aligned offsets; `gtheta` is the closing-axis angle relative to
/// the object's orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grasp {
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
    pub gtheta: f64,
}

impl Grasp {
    pub fn to_world(&self, pose: &Pose) -> WorldGrasp {
        WorldGrasp {
            x: pose.x + self.gx,
            y: pose.y + self.gy,
            z: self.gz,
            theta: pose.theta + self.gtheta,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.gx, self.gy, self.gz, self.gtheta]
    }
}

/// Gripper pose in the world: centre, height and closing-axis angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldGrasp {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl WorldGrasp {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Planar rigid displacement plus a vertical offset. Used both for the
/// object displacement and for the grasp displacement in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        dtheta: 0.0,
    };

    pub fn from_array(a: [f64; 4]) -> Self {
        Displacement {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dtheta: a[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dtheta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Grasp height at or above the part top.
    Miss,
    /// A pad would land on the part while descending.
    Collision,
    /// Jaws closed without two-sided contact.
    EmptyClose,
    /// The object rotated out of the pad band.
    SqueezeOut,
    /// A contact normal lies outside the friction cone.
    Slip,
    /// The pinched width is not above the minimum separation.
    TooThin,
    /// No admissible rotation reduces the residual torque.
    Jammed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub object_displacement: Displacement,
    /// Only meaningful when `success`; failed grasps carry it for logging.
    pub grasp_displacement: Displacement,
    pub friction_margin: f64,
    pub contact_count: u32,
    pub failure: Option<FailureKind>,
    pub final_separation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    pub pad_width: f64,
    pub max_opening: f64,
    pub closing_step: f64,
    pub friction: f64,
    /// Rotation per unit torque (rad per meter of lever arm).
    pub k_rot: f64,
    pub torque_tol: f64,
    pub rot_step_cap: f64,
    pub contact_tol: f64,
    pub min_separation: f64,
    pub max_steps: usize,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            pad_width: 0.02,
            max_opening: 0.08,
            closing_step: 0.0005,
            friction: 0.5,
            k_rot: 20.0,
            torque_tol: 2e-4,
            rot_step_cap: 0.05,
            contact_tol: 1e-6,
            min_separation: 0.001,
            max_steps: 4000,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pad_width", self.pad_width),
            ("max_opening", self.max_opening),
            ("closing_step", self.closing_step),
            ("friction", self.friction),
            ("torque_tol", self.torque_tol),
            ("rot_step_cap", self.rot_step_cap),
            ("contact_tol", self.contact_tol),
            ("min_separation", self.min_separation),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Configuration(format!("physics {name} must be positive, got {v}")));
            }
        }
        if !(self.k_rot >= 0.0) || self.max_steps == 0 {
            return Err(Error::Configuration("physics k_rot must be >= 0 and max_steps > 0".into()));
        }
        Ok(())
    }

    pub fn friction_angle(&self) -> f64 {
        self.friction.atan()
    }
}

/// Samples a grasp uniformly: centre over `bbox` (given relative to the
/// object centre, world-aligned), height over `(0, part_height)`,
/// closing angle over `[-π/2, π/2)`.
pub fn sample_grasp(bbox: &Rect, part_height: f64, rng_seed: u64) -> Grasp {
    let mut r = rng::rng(rng_seed);
    let gx = bbox.min_x + r.random::<f64>() * bbox.width();
    let gy = bbox.min_y + r.random::<f64>() * bbox.height();
    let u: f64 = r.sample(Open01);
    let gtheta = r.random_range(-FRAC_PI_2..FRAC_PI_2);
    Grasp {
        gx,
        gy,
        gz: part_height * u,
        gtheta,
    }
}

/// Converts an object displacement into the grasp displacement expressed
/// in the object frame, with the gripper held fixed in the world.
pub fn displacement_to_grasp_frame(pose_before: &Pose, delta_p: &Displacement, grasp_world: &WorldGrasp) -> Displacement {
    let g = grasp_world.position();
    let p = pose_before.position();
    let a = g.sub(p).rotated(-pose_before.theta);
    let theta_after = pose_before.theta + delta_p.dtheta;
    let p_after = p.add(Point2::new(delta_p.dx, delta_p.dy));
    let a_after = g.sub(p_after).rotated(-theta_after);
    Displacement {
        dx: a_after.x - a.x,
        dy: a_after.y - a.y,
        dz: -delta_p.dz,
        dtheta: wrap_pi(-delta_p.dtheta),
    }
}

/// Inverse of [`displacement_to_grasp_frame`].
pub fn grasp_to_object_displacement(pose_before: &Pose, delta_g: &Displacement, grasp_world: &WorldGrasp) -> Displacement {
    let g = grasp_world.position();
    let p = pose_before.position();
    let a = g.sub(p).rotated(-pose_before.theta);
    let dtheta = wrap_pi(-delta_g.dtheta);
    let theta_after = pose_before.theta + dtheta;
    let a_after = a.add(Point2::new(delta_g.dx, delta_g.dy));
    let p_after = g.sub(a_after.rotated(theta_after));
    Displacement {
        dx: p_after.x - p.x,
        dy: p_after.y - p.y,
        dz: -delta_g.dz,
        dtheta,
    }
}

#[derive(Debug, Clone, Copy)]
struct BandVertex {
    p: Point2,
    /// Outward normal of the source edge for vertices created by clipping.
    clip_normal: Option<Point2>,
}

#[derive(Debug, Clone, Copy)]
struct Extents {
    min: f64,
    max: f64,
}

/// The object as seen from the gripper frame.
struct BandObject<'a> {
    ring: &'a [Point2],
    half_band: f64,
    /// centroid position in the gripper frame
    c: Point2,
    /// object orientation relative to the closing axis
    ang: f64,
    buf: Vec<BandVertex>,
    tmp: Vec<BandVertex>,
}

impl<'a> BandObject<'a> {
    fn clip(&mut self) {
        let (s, co) = self.ang.sin_cos();
        self.buf.clear();
        for q in self.ring {
            self.buf.push(BandVertex {
                p: Point2::new(self.c.x + co * q.x - s * q.y, self.c.y + s * q.x + co * q.y),
                clip_normal: None,
            });
        }
        // Single pass against the slab |y| <= h. Every crossing is
        // interpolated from the original edge, starting at its endpoint on
        // the inner side of that bound; the result is then independent of
        // traversal direction and exactly mirror-symmetric.
        let h = self.half_band;
        self.tmp.clear();
        let m = self.buf.len();
        for i in 0..m {
            let a = self.buf[i].p;
            let b = self.buf[(i + 1) % m].p;
            if a.y.abs() <= h {
                self.tmp.push(self.buf[i]);
            }
            let d = b.sub(a);
            let len = d.norm();
            // outward normal of a counter-clockwise edge
            let normal = Some(Point2::new(d.y / len, -d.x / len));
            let mut crossings = [(0.0, Point2::new(0.0, 0.0)); 2];
            let mut k = 0;
            for bound in [h, -h] {
                let side = |v: Point2| if bound > 0.0 { v.y <= bound } else { v.y >= bound };
                if side(a) != side(b) {
                    let (p, q) = if side(a) { (a, b) } else { (b, a) };
                    let t = (bound - p.y) / (q.y - p.y);
                    let x = p.x + t * (q.x - p.x);
                    // order along a -> b
                    let along = if side(a) { t } else { 1.0 - t };
                    crossings[k] = (along, Point2::new(x, bound));
                    k += 1;
                }
            }
            if k == 2 && crossings[1].0 < crossings[0].0 {
                crossings.swap(0, 1);
            }
            for &(_, p) in &crossings[..k] {
                self.tmp.push(BandVertex { p, clip_normal: normal });
            }
        }
        std::mem::swap(&mut self.buf, &mut self.tmp);
    }

    fn extents(&mut self) -> Option<Extents> {
        self.clip();
        if self.buf.is_empty() {
            return None;
        }
        let mut e = Extents {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for v in &self.buf {
            e.min = e.min.min(v.p.x);
            e.max = e.max.max(v.p.x);
        }
        Some(e)
    }

    /// Lateral interval and max normal deviation of the contact patch at
    /// the min (`left`) or max extreme. Requires a preceding `extents`.
    fn patch(&self, ext: &Extents, left: bool, tol: f64) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut dev: f64 = 0.0;
        let dir = if left { Point2::new(-1.0, 0.0) } else { Point2::new(1.0, 0.0) };
        for v in &self.buf {
            let near = if left { v.p.x <= ext.min + tol } else { v.p.x >= ext.max - tol };
            if !near {
                continue;
            }
            lo = lo.min(v.p.y);
            hi = hi.max(v.p.y);
            if let Some(n) = v.clip_normal {
                dev = dev.max(n.dot(dir).clamp(-1.0, 1.0).acos());
            }
        }
        (lo, hi, dev)
    }

    fn band_width(&mut self) -> Option<f64> {
        self.extents().map(|e| e.max - e.min)
    }
}

/// Rotations below this (rad) count as no motion.
const MIN_ROTATION: f64 = 1e-9;

fn patch_torque(l: (f64, f64), r: (f64, f64)) -> f64 {
    if r.0 > l.1 {
        r.0 - l.1
    } else if l.0 > r.1 {
        -(l.0 - r.1)
    } else {
        0.0
    }
}

struct Stepper<'a> {
    obj: BandObject<'a>,
    prm: &'a PhysicsParams,
    s_half: f64,
    shift: f64,
    rot: f64,
    trace: Option<&'a mut Vec<f64>>,
}

enum StepEnd {
    Success { friction_margin: f64 },
    Failure { kind: FailureKind, contacts: u32, friction_margin: f64 },
}

impl<'a> Stepper<'a> {
    fn record(&mut self) {
        let gap = 2.0 * self.s_half;
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(gap);
        }
    }

    fn translate(&mut self, du: f64) {
        self.obj.c.x += du;
        self.shift += du;
    }

    /// Tries a rotation about the centroid, halving it until the band width
    /// fits `max_width`. Returns the applied angle (0 when rejected).
    fn try_rotate(&mut self, mut d: f64, max_width: f64, halvings: usize) -> Option<f64> {
        for _ in 0..=halvings {
            if d.abs() < MIN_ROTATION {
                return Some(0.0);
            }
            self.obj.ang += d;
            match self.obj.band_width() {
                Some(w) if w <= max_width + 1e-12 => {
                    self.rot += d;
                    return Some(d);
                }
                None => {
                    // object left the band entirely
                    self.rot += d;
                    return None;
                }
                _ => {
                    self.obj.ang -= d;
                    d *= 0.5;
                }
            }
        }
        Some(0.0)
    }

    fn run(&mut self) -> Result<StepEnd> {
        let p = *self.prm;
        let step = p.closing_step;
        let cone = p.friction_angle();
        let margin_of = |dev: f64| (1.0 - dev / cone).clamp(0.0, 1.0);

        let ext = match self.obj.extents() {
            Some(e) => e,
            None => {
                self.record();
                self.s_half = p.min_separation / 2.0;
                self.record();
                return Ok(StepEnd::Failure { kind: FailureKind::EmptyClose, contacts: 0, friction_margin: 0.0 });
            }
        };
        if ext.min <= -self.s_half || ext.max >= self.s_half {
            self.record();
            return Ok(StepEnd::Failure { kind: FailureKind::Collision, contacts: 0, friction_margin: 0.0 });
        }
        self.record();
        // pads travel freely until the first contact
        let free = (ext.min + self.s_half).min(self.s_half - ext.max);
        let k = (free / step).ceil().max(1.0);
        let last = self.s_half;
        self.s_half -= k * step;
        if self.s_half * 2.0 <= p.min_separation {
            self.s_half = (p.min_separation / 2.0).min(last);
            self.record();
            return Ok(StepEnd::Failure { kind: FailureKind::EmptyClose, contacts: 0, friction_margin: 0.0 });
        }

        let mut steps = k as usize;
        let mut two_sided_cap = p.rot_step_cap;
        let mut prev_tau = 0.0f64;
        let mut single_cap = p.rot_step_cap;
        let mut prev_side = 0.0f64;
        loop {
            if steps >= p.max_steps {
                return Err(Error::SimulationDivergence { steps });
            }
            steps += 1;
            let ext = match self.obj.extents() {
                Some(e) => e,
                None => {
                    self.record();
                    return Ok(StepEnd::Failure { kind: FailureKind::SqueezeOut, contacts: 0, friction_margin: 0.0 });
                }
            };
            let pl = -self.s_half - ext.min;
            let pr = ext.max - self.s_half;
            let cl = pl > -p.contact_tol;
            let cr = pr > -p.contact_tol;

            if cl && cr {
                let width = ext.max - ext.min;
                self.translate(-(ext.max + ext.min) / 2.0);
                if width < 2.0 * self.s_half {
                    self.s_half = width / 2.0;
                }
                self.record();
                let ext = self.obj.extents().expect("band unchanged by translation");
                let (l0, l1, dl) = self.obj.patch(&ext, true, p.contact_tol);
                let (r0, r1, dr) = self.obj.patch(&ext, false, p.contact_tol);
                let dev = dl.max(dr);
                if width <= p.min_separation {
                    return Ok(StepEnd::Failure { kind: FailureKind::TooThin, contacts: 2, friction_margin: margin_of(dev) });
                }
                let tau = patch_torque((l0, l1), (r0, r1));
                if tau.abs() <= p.torque_tol {
                    if dev < cone {
                        return Ok(StepEnd::Success { friction_margin: 1.0 - dev / cone });
                    }
                    return Ok(StepEnd::Failure { kind: FailureKind::Slip, contacts: 2, friction_margin: 0.0 });
                }
                if prev_tau != 0.0 && prev_tau.signum() != tau.signum() {
                    two_sided_cap *= 0.5;
                    if two_sided_cap < MIN_ROTATION {
                        // torque flips sign across an arbitrarily small turn: a restoring equilibrium
                        if dev < cone {
                            return Ok(StepEnd::Success { friction_margin: 1.0 - dev / cone });
                        }
                        return Ok(StepEnd::Failure { kind: FailureKind::Slip, contacts: 2, friction_margin: 0.0 });
                    }
                }
                prev_tau = tau;
                let d = (p.k_rot * tau).clamp(-two_sided_cap, two_sided_cap);
                match self.try_rotate(d, width, 40) {
                    None => {
                        self.record();
                        return Ok(StepEnd::Failure { kind: FailureKind::SqueezeOut, contacts: 0, friction_margin: 0.0 });
                    }
                    Some(0.0) => {
                        return Ok(StepEnd::Failure { kind: FailureKind::Jammed, contacts: 2, friction_margin: margin_of(dev) });
                    }
                    Some(_) => {}
                }
                continue;
            }

            if cl || cr {
                // single-sided push
                let sign = if cl { 1.0 } else { -1.0 };
                let depth = if cl { pl } else { pr };
                if depth > 0.0 {
                    self.translate(sign * depth);
                }
                let (lo, hi, _) = self.obj.patch(&ext, cl, p.contact_tol);
                let lever = 0.5 * (lo + hi) - self.obj.c.y;
                let torque = -sign * lever;
                if prev_side != 0.0 && prev_side != sign {
                    // contact alternates between pads: damp the turn
                    single_cap *= 0.5;
                }
                prev_side = sign;
                let d = (p.k_rot * torque).clamp(-single_cap, single_cap);
                if self.try_rotate(d, 2.0 * self.s_half, 0).is_none() {
                    self.record();
                    return Ok(StepEnd::Failure { kind: FailureKind::SqueezeOut, contacts: 0, friction_margin: 0.0 });
                }
                let ext = match self.obj.extents() {
                    Some(e) => e,
                    None => {
                        self.record();
                        return Ok(StepEnd::Failure { kind: FailureKind::SqueezeOut, contacts: 0, friction_margin: 0.0 });
                    }
                };
                // restore non-penetration on the pushing side
                if cl && ext.min < -self.s_half {
                    self.translate(-self.s_half - ext.min);
                } else if cr && ext.max > self.s_half {
                    self.translate(self.s_half - ext.max);
                }
                let mut ext = self.obj.extents().expect("band unchanged by translation");
                if ext.min < -self.s_half || ext.max > self.s_half {
                    // the turn swung material into the far pad; the band still fits, so centre it
                    self.translate(-(ext.max + ext.min) / 2.0);
                    ext = self.obj.extents().expect("band unchanged by translation");
                }
                let other = if cl { ext.max - self.s_half } else { -self.s_half - ext.min };
                self.record();
                if other > -p.contact_tol {
                    continue;
                }
            } else {
                self.record();
            }

            prev_side = 0.0;
            self.s_half -= step;
            if 2.0 * self.s_half <= p.min_separation {
                self.s_half = p.min_separation / 2.0;
                self.record();
                let contacts = u32::from(cl || cr);
                return Ok(StepEnd::Failure { kind: FailureKind::EmptyClose, contacts, friction_margin: 0.0 });
            }
        }
    }
}

/// Lattice pitch for gripper-frame positions: 2^-40 m, about 1e-12 m.
const SNAP: f64 = 1099511627776.0;

/// Odd-symmetric and exact apart from the rounding itself.
fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

/// Simulates one pinch and lift. Deterministic in all inputs.
pub fn simulate_pinch(part: &Part, pose: &Pose, grasp: &Grasp, params: &PhysicsParams) -> Result<GraspOutcome> {
    simulate(part, pose, grasp, params, None)
}

/// As [`simulate_pinch`], also returning the jaw separation after every
/// resolved step.
pub fn simulate_pinch_traced(
    part: &Part,
    pose: &Pose,
    grasp: &Grasp,
    params: &PhysicsParams,
) -> Result<(GraspOutcome, Vec<f64>)> {
    let mut trace = Vec::new();
    let out = simulate(part, pose, grasp, params, Some(&mut trace))?;
    Ok((out, trace))
}

fn simulate(
    part: &Part,
    pose: &Pose,
    grasp: &Grasp,
    params: &PhysicsParams,
    trace: Option<&mut Vec<f64>>,
) -> Result<GraspOutcome> {
    params.validate()?;
    let world = grasp.to_world(pose);
    let failed = |kind, contacts, sep| GraspOutcome {
        success: false,
        object_displacement: Displacement::ZERO,
        grasp_displacement: Displacement::ZERO,
        friction_margin: 0.0,
        contact_count: contacts,
        failure: Some(kind),
        final_separation: sep,
    };
    if grasp.gz >= part.height || grasp.gz <= 0.0 {
        if let Some(t) = trace {
            t.push(params.max_opening);
        }
        return Ok(failed(FailureKind::Miss, 0, params.max_opening));
    }
    // Object centroid and orientation in the gripper frame. The stepper is
    // discontinuous at contact events, so rounding noise from the world
    // transform would be amplified; snapping the centroid to a lattice makes
    // the outcome a function of the relative configuration alone.
    let c = Point2::new(-grasp.gx, -grasp.gy).rotated(-world.theta);
    let obj = BandObject {
        ring: &part.outer,
        half_band: params.pad_width / 2.0,
        c: Point2::new(snap(c.x), snap(c.y)),
        ang: -grasp.gtheta,
        buf: Vec::with_capacity(part.outer.len() + 8),
        tmp: Vec::with_capacity(part.outer.len() + 8),
    };
    let mut st = Stepper {
        obj,
        prm: params,
        s_half: params.max_opening / 2.0,
        shift: 0.0,
        rot: 0.0,
        trace,
    };
    let end = st.run()?;
    let planar = Point2::new(st.shift, 0.0).rotated(world.theta);
    let dtheta = wrap_pi(st.rot);
    let sep = 2.0 * st.s_half;
    match end {
        StepEnd::Success { friction_margin } => {
            let z_com = part.height / 2.0;
            let sag = (z_com - grasp.gz).clamp(-part.height / 2.0, part.height / 2.0);
            let dp = Displacement {
                dx: planar.x,
                dy: planar.y,
                dz: (1.0 - friction_margin) * sag,
                dtheta,
            };
            Ok(GraspOutcome {
                success: true,
                object_displacement: dp,
                grasp_displacement: displacement_to_grasp_frame(pose, &dp, &world),
                friction_margin,
                contact_count: 2,
                failure: None,
                final_separation: sep,
            })
        }
        StepEnd::Failure { kind, contacts, friction_margin } => {
            let dp = Displacement {
                dx: planar.x,
                dy: planar.y,
                dz: 0.0,
                dtheta,
            };
            Ok(GraspOutcome {
                success: false,
                object_displacement: dp,
                grasp_displacement: displacement_to_grasp_frame(pose, &dp, &world),
                friction_margin,
                contact_count: contacts,
                failure: Some(kind),
                final_separation: sep,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parts::{bounding_box, Family};
    use std::f64::consts::TAU;

    fn rect(len: f64, w: f64) -> Part {
        let ring = vec![
            Point2::new(-len / 2.0, -w / 2.0),
            Point2::new(len / 2.0, -w / 2.0),
            Point2::new(len / 2.0, w / 2.0),
            Point2::new(-len / 2.0, w / 2.0),
        ];
        Part::from_rings(1, Family::SlottedBar, 0.02, ring, vec![]).unwrap()
    }

    fn disk(r: f64, n: usize) -> Part {
        let ring = (0..n)
            .map(|i| {
                let a = TAU * i as f64 / n as f64;
                Point2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        Part::from_rings(2, Family::Ellipse, 0.02, ring, vec![]).unwrap()
    }

    #[test]
    fn centered_rectangle_is_stable() {
        let part = rect(0.06, 0.03);
        let prm = PhysicsParams::default();
        for gtheta in [0.0, -FRAC_PI_2] {
            let g = Grasp { gx: 0.0, gy: 0.0, gz: 0.01, gtheta };
            let out = simulate_pinch(&part, &Pose::default(), &g, &prm).unwrap();
            assert!(out.success, "{gtheta}: {out:?}");
            let d = out.object_displacement;
            assert!(d.dx.hypot(d.dy).hypot(d.dz).hypot(d.dtheta) < 1e-9, "{d:?}");
            assert_eq!(out.contact_count, 2);
        }
    }

    #[test]
    fn disk_recentres_on_jaw_midplane() {
        let part = disk(0.02, 64);
        let prm = PhysicsParams::default();
        for o in [-0.015, -0.004, 0.007, 0.012] {
            let g = Grasp { gx: o, gy: 0.0, gz: 0.01, gtheta: 0.0 };
            let out = simulate_pinch(&part, &Pose::default(), &g, &prm).unwrap();
            assert!(out.success);
            let d = out.object_displacement;
            assert!((d.dx - o).abs() <= 2.0 * prm.closing_step, "{o}: {d:?}");
            assert!(d.dy.abs() < 1e-12);
        }
    }

    #[test]
    fn grasp_off_the_part_misses() {
        let part = rect(0.03, 0.02);
        let g = Grasp { gx: 0.0, gy: 0.05, gz: 0.01, gtheta: 0.0 };
        let out = simulate_pinch(&part, &Pose::default(), &g, &PhysicsParams::default()).unwrap();
        assert!(!out.success);
        assert_eq!(out.contact_count, 0);
        assert_eq!(out.failure, Some(FailureKind::EmptyClose));
    }

    #[test]
    fn too_high_grasp_misses() {
        let part = rect(0.03, 0.02);
        let g = Grasp { gx: 0.0, gy: 0.0, gz: 0.02, gtheta: 0.0 };
        let out = simulate_pinch(&part, &Pose::default(), &g, &PhysicsParams::default()).unwrap();
        assert_eq!(out.failure, Some(FailureKind::Miss));
    }

    #[test]
    fn too_wide_part_collides() {
        let part = rect(0.10, 0.02);
        let g = Grasp { gx: 0.0, gy: 0.0, gz: 0.01, gtheta: 0.0 };
        let out = simulate_pinch(&part, &Pose::default(), &g, &PhysicsParams::default()).unwrap();
        assert_eq!(out.failure, Some(FailureKind::Collision));
    }

    #[test]
    fn zero_displacement_maps_to_zero() {
        let pose = Pose::new(0.1, -0.2, 0.7);
        let g = Grasp { gx: 0.01, gy: 0.02, gz: 0.01, gtheta: 0.3 }.to_world(&pose);
        let dg = displacement_to_grasp_frame(&pose, &Displacement::ZERO, &g);
        assert_eq!(dg.as_array().map(|v| v.abs()), [0.0; 4]);
    }

    #[test]
    fn pure_translation_at_identity() {
        let pose = Pose::default();
        let g = WorldGrasp { x: 0.01, y: -0.02, z: 0.01, theta: 0.4 };
        let dp = Displacement { dx: 0.003, dy: -0.001, dz: 0.0, dtheta: 0.0 };
        let dg = displacement_to_grasp_frame(&pose, &dp, &g);
        assert!((dg.dx + 0.003).abs() < 1e-15 && (dg.dy - 0.001).abs() < 1e-15);
    }

    #[test]
    fn sampled_grasps_respect_invariants() {
        let part = crate::parts::generate(4, Family::Gear);
        let bbox = bounding_box(&part, &Pose::new(0.0, 0.0, 0.3));
        for s in 0..500 {
            let g = sample_grasp(&bbox, part.height, s);
            assert!(bbox.contains(Point2::new(g.gx, g.gy)));
            assert!(g.gz > 0.0 && g.gz < part.height);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&g.gtheta));
            assert_eq!(g, sample_grasp(&bbox, part.height, s));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let part = rect(0.03, 0.02);
        let prm = PhysicsParams { closing_step: 0.0, ..Default::default() };
        let g = Grasp { gx: 0.0, gy: 0.0, gz: 0.01, gtheta: 0.0 };
        assert!(matches!(simulate_pinch(&part, &Pose::default(), &g, &prm), Err(Error::Configuration(_))));
    }
}

//! Procedural 2.5D parts and the geometric queries the renderer and the
//! pinch oracle need.
//!
//! Every part is a constant cross-section extrusion: an outer ring
//! (counter-clockwise) with zero or more holes (clockwise), expressed in a
//! frame whose origin is the area centroid.
//!
//! Family parameter table (all lengths in meters, ranges are uniform draws):
//!
//! | family        | parameters                                                                 | outer vertices |
//! |---------------|----------------------------------------------------------------------------|----------------|
//! | `ngon`        | k in 3..=8, circumradius 0.010..0.045, radial jitter ±20 %, angle jitter ±15 % of pitch | k |
//! | `gear`        | teeth k in 6..=14, root radius 0.012..0.040, tooth depth 0.15..0.35 × root, bore 0.20..0.40 × root (12-gon hole) | 4k |
//! | `lbracket`    | arm lengths 0.030..0.100, arm thickness 0.008..0.020                        | 6 |
//! | `slotted_bar` | length 0.040..0.130, width 0.012..0.030, 0..=2 rectangular slots of 0.20..0.35 × length by 0.35 × width | 4 |
//! | `ellipse`     | semi-major 0.012..0.060, aspect 0.30..0.90, hole (12-gon, 0.3 × minor) with probability 0.3 | 32 |
//!
//! Heights are drawn from 0.005..0.040 for every family.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{wrap_pi, Point2, Rect};
use crate::rng;

pub const MIN_HEIGHT: f64 = 0.005;
pub const MAX_HEIGHT: f64 = 0.08;
const GEN_HEIGHT: (f64, f64) = (0.005, 0.040);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Ngon,
    Gear,
    LBracket,
    SlottedBar,
    Ellipse,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Ngon,
        Family::Gear,
        Family::LBracket,
        Family::SlottedBar,
        Family::Ellipse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ngon => "ngon",
            Family::Gear => "gear",
            Family::LBracket => "lbracket",
            Family::SlottedBar => "slotted_bar",
            Family::Ellipse => "ellipse",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Family::Ngon => 0,
            Family::Gear => 1,
            Family::LBracket => 2,
            Family::SlottedBar => 3,
            Family::Ellipse => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Family> {
        Family::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::RejectedInput(format!("unknown part family `{s}`")))
    }
}

/// Planar resting pose of a part on the table (z of the base is 0).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_pi(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Part frame -> world.
    pub fn apply(&self, p: Point2) -> Point2 {
        p.rotated(self.theta).add(self.position())
    }

    /// World -> part frame.
    pub fn inverse_apply(&self, p: Point2) -> Point2 {
        p.sub(self.position()).rotated(-self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub part_id: u64,
    pub family: Family,
    pub height: f64,
    pub outer: Vec<Point2>,
    pub holes: Vec<Vec<Point2>>,
}

impl Part {
    /// Builds a part from raw rings: orients them, recenters on the area
    /// centroid and checks the invariants that can be checked cheaply.
    pub fn from_rings(
        part_id: u64,
        family: Family,
        height: f64,
        mut outer: Vec<Point2>,
        mut holes: Vec<Vec<Point2>>,
    ) -> Result<Part> {
        if outer.len() < 3 || holes.iter().any(|h| h.len() < 3) {
            return Err(Error::DegenerateGeometry("ring with fewer than 3 vertices".into()));
        }
        if !(MIN_HEIGHT..=MAX_HEIGHT).contains(&height) {
            return Err(Error::RejectedInput(format!("height {height} outside [{MIN_HEIGHT}, {MAX_HEIGHT}]")));
        }
        if signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        for h in holes.iter_mut() {
            if signed_area(h) > 0.0 {
                h.reverse();
            }
        }
        let (c, _) = area_centroid(&outer, &holes)?;
        let shift = |r: &mut Vec<Point2>| r.iter_mut().for_each(|p| *p = p.sub(c));
        shift(&mut outer);
        holes.iter_mut().for_each(shift);
        Ok(Part {
            part_id,
            family,
            height,
            outer,
            holes,
        })
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point2]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn vertex_count(&self) -> usize {
        self.rings().map(|r| r.len()).sum()
    }

    /// Bounding-box diagonal in the part frame.
    pub fn longest_axis(&self) -> f64 {
        bounding_box(self, &Pose::default()).diagonal()
    }

    /// Largest distance from the centroid to any outer vertex.
    pub fn radius(&self) -> f64 {
        self.outer.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// The same part mirrored across the part-frame x axis.
    pub fn mirrored(&self) -> Part {
        let flip = |r: &Vec<Point2>| {
            let mut m: Vec<Point2> = r.iter().map(|p| Point2::new(p.x, -p.y)).collect();
            m.reverse();
            m
        };
        Part {
            part_id: self.part_id,
            family: self.family,
            height: self.height,
            outer: flip(&self.outer),
            holes: self.holes.iter().map(flip).collect(),
        }
    }
}

/// `count` parts cycling through the families in order; part `i` uses the
/// sub-seed `mix(seed, i)`.
pub fn generate_corpus(seed: u64, count: usize) -> Vec<Part> {
    (0..count)
        .map(|i| generate(rng::mix(seed, i as u64), Family::ALL[i % Family::ALL.len()]))
        .collect()
}

/// Deterministic part identifier for a (seed, family) pair.
pub fn part_id_for(seed: u64, family: Family) -> u64 {
    rng::mix3(seed, rng::stream::PART, family.code() as u64)
}

/// Generates a part of the named family. Identical inputs give a
/// bit-identical part.
pub fn generate_part(seed: u64, family: &str) -> Result<Part> {
    let family: Family = family.parse()?;
    Ok(generate(seed, family))
}

pub fn generate(seed: u64, family: Family) -> Part {
    let mut r = rng::rng(rng::mix(seed, family.code() as u64));
    let height = r.random_range(GEN_HEIGHT.0..GEN_HEIGHT.1);
    let (outer, holes) = match family {
        Family::Ngon => ngon(&mut r),
        Family::Gear => {
            let k = r.random_range(6..=14);
            gear_rings(&mut r, k)
        }
        Family::LBracket => lbracket(&mut r),
        Family::SlottedBar => slotted_bar(&mut r),
        Family::Ellipse => ellipse(&mut r),
    };
    Part::from_rings(part_id_for(seed, family), family, height, outer, holes)
        .expect("generator tables only produce valid rings")
}

fn circle(center: Point2, radius: f64, n: usize) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let a = TAU * i as f64 / n as f64;
            Point2::new(center.x + radius * a.cos(), center.y + radius * a.sin())
        })
        .collect()
}

fn ngon(r: &mut impl Rng) -> (Vec<Point2>, Vec<Vec<Point2>>) {
    let k = r.random_range(3..=8usize);
    let radius = r.random_range(0.010..0.045);
    let pitch = TAU / k as f64;
    let phase = r.random_range(0.0..TAU);
    let outer = (0..k)
        .map(|i| {
            let a = phase + pitch * (i as f64 + r.random_range(-0.15..0.15));
            let rho = radius * r.random_range(0.8..1.2);
            Point2::new(rho * a.cos(), rho * a.sin())
        })
        .collect();
    (outer, Vec::new())
}

/// Gear outline with `teeth` teeth: four outer vertices per tooth
/// (root, tip start, tip end, root end), plus a 12-gon bore.
pub(crate) fn gear_rings(r: &mut impl Rng, teeth: usize) -> (Vec<Point2>, Vec<Vec<Point2>>) {
    let root = r.random_range(0.012..0.040);
    let tip = root * (1.0 + r.random_range(0.15..0.35));
    let pitch = TAU / teeth as f64;
    let mut outer = Vec::with_capacity(4 * teeth);
    for t in 0..teeth {
        let a0 = pitch * t as f64;
        for (frac, rad) in [(0.0, root), (0.15, tip), (0.50, tip), (0.65, root)] {
            let a = a0 + frac * pitch;
            outer.push(Point2::new(rad * a.cos(), rad * a.sin()));
        }
    }
    let mut bore = circle(Point2::default(), root * r.random_range(0.20..0.40), 12);
    bore.reverse();
    (outer, vec![bore])
}

/// Number of outer-ring vertices the gear generator emits for `teeth` teeth.
pub const fn gear_outer_vertex_count(teeth: usize) -> usize {
    4 * teeth
}

fn lbracket(r: &mut impl Rng) -> (Vec<Point2>, Vec<Vec<Point2>>) {
    let l1 = r.random_range(0.030..0.100);
    let l2 = r.random_range(0.030..0.100);
    let t1 = r.random_range(0.008..0.020);
    let t2 = r.random_range(0.008..0.020);
    let outer = vec![
        Point2::new(0.0, 0.0),
        Point2::new(l1, 0.0),
        Point2::new(l1, t1),
        Point2::new(t2, t1),
        Point2::new(t2, l2),
        Point2::new(0.0, l2),
    ];
    (outer, Vec::new())
}

fn rect_ring(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    vec![
        Point2::new(x0, y0),
        Point2::new(x1, y0),
        Point2::new(x1, y1),
        Point2::new(x0, y1),
    ]
}

fn slotted_bar(r: &mut impl Rng) -> (Vec<Point2>, Vec<Vec<Point2>>) {
    let len = r.random_range(0.040..0.130);
    let w = r.random_range(0.012..0.030);
    let outer = rect_ring(-len / 2.0, -w / 2.0, len / 2.0, w / 2.0);
    let slots = r.random_range(0..=2usize);
    let sw = 0.35 * w;
    let mut holes = Vec::new();
    match slots {
        1 => {
            let sl = len * r.random_range(0.20..0.35);
            let c = r.random_range(-0.15..0.15) * len;
            holes.push(rect_ring(c - sl / 2.0, -sw / 2.0, c + sl / 2.0, sw / 2.0));
        }
        2 => {
            for side in [-1.0, 1.0] {
                let sl = len * r.random_range(0.20..0.35);
                let c = side * 0.25 * len;
                holes.push(rect_ring(c - sl / 2.0, -sw / 2.0, c + sl / 2.0, sw / 2.0));
            }
        }
        _ => {}
    }
    (outer, holes)
}

fn ellipse(r: &mut impl Rng) -> (Vec<Point2>, Vec<Vec<Point2>>) {
    let a = r.random_range(0.012..0.060);
    let b = a * r.random_range(0.30..0.90);
    let outer = (0..32)
        .map(|i| {
            let t = TAU * i as f64 / 32.0;
            Point2::new(a * t.cos(), b * t.sin())
        })
        .collect();
    let holes = if r.random_bool(0.3) {
        let mut h = circle(Point2::default(), 0.3 * b, 12);
        h.reverse();
        vec![h]
    } else {
        Vec::new()
    };
    (outer, holes)
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| ring[i].cross(ring[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

fn ring_moments(ring: &[Point2]) -> (f64, f64, f64) {
    let n = ring.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        let c = p.cross(q);
        a += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    (a / 2.0, cx / 6.0, cy / 6.0)
}

/// Area-weighted centroid of an outer ring minus its holes, independent of
/// ring orientation. Returns the centroid and the (positive) area.
pub fn area_centroid(outer: &[Point2], holes: &[Vec<Point2>]) -> Result<(Point2, f64)> {
    let mut area = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    let mut add = |ring: &[Point2], sign: f64| {
        let (a, x, y) = ring_moments(ring);
        let s = sign * a.signum();
        area += s * a;
        mx += s * x;
        my += s * y;
    };
    add(outer, 1.0);
    for h in holes {
        add(h, -1.0);
    }
    if !(area > 1e-18) {
        return Err(Error::DegenerateGeometry(format!("polygon area {area:e}")));
    }
    Ok((Point2::new(mx / area, my / area), area))
}

/// Minimal axis-aligned rectangle (world frame) enclosing the posed part.
pub fn bounding_box(part: &Part, pose: &Pose) -> Rect {
    Rect::from_points(part.outer.iter().map(|&p| pose.apply(p))).expect("outer ring is non-empty")
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let len2 = ab.dot(ab);
    let len = len2.sqrt();
    // 1e-12 m distance tolerance
    let tol = 1e-12 * len;
    if ab.cross(ap).abs() > tol {
        return false;
    }
    let t = ap.dot(ab);
    t >= -tol && t <= len2 + tol
}

/// Winding number of `ring` around `p`, or `None` when `p` lies on the ring.
fn winding(ring: &[Point2], p: Point2) -> Option<i32> {
    let n = ring.len();
    let mut wn = 0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return None;
        }
        let side = b.sub(a).cross(p.sub(a));
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            wn -= 1;
        }
    }
    Some(wn)
}

/// Point containment in part-frame coordinates; ring boundaries count as
/// material.
pub fn contains_local(part: &Part, p: Point2) -> bool {
    match winding(&part.outer, p) {
        None => return true,
        Some(0) => return false,
        Some(_) => {}
    }
    part.holes
        .iter()
        .all(|h| !matches!(winding(h, p), Some(w) if w != 0))
}

/// True iff the world point lies on the posed part's silhouette.
pub fn silhouette_contains(part: &Part, pose: &Pose, point: Point2) -> bool {
    contains_local(part, pose.inverse_apply(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn square(half: f64) -> Vec<Point2> {
        rect_ring(-half, -half, half, half)
    }

    #[test]
    fn unit_square_centroid() {
        let (c, a) = area_centroid(&square(0.5), &[]).unwrap();
        assert!(c.norm() < 1e-15);
        assert!((a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn square_with_hole() {
        let mut hole = square(0.25);
        hole.reverse();
        let (c, a) = area_centroid(&square(0.5), &[hole.clone()]).unwrap();
        assert!(c.norm() < 1e-15);
        assert!((a - 0.75).abs() < 1e-15);
        // orientation of the hole ring does not matter
        hole.reverse();
        let (_, a2) = area_centroid(&square(0.5), &[hole]).unwrap();
        assert!((a2 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn l_bracket_composite_centroid() {
        // two unit squares side by side -> centroid (1.0, 0.5)
        let ring = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let (c, a) = area_centroid(&ring, &[]).unwrap();
        assert!((c.x - 1.0).abs() < 1e-15 && (c.y - 0.5).abs() < 1e-15);
        assert!((a - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_ring_rejected() {
        let ring = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        assert!(matches!(area_centroid(&ring, &[]), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn unknown_family_rejected() {
        assert!(matches!(generate_part(1, "sprocket"), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn generation_is_deterministic_and_centered() {
        for fam in Family::ALL {
            let a = generate_part(7, fam.name()).unwrap();
            let b = generate_part(7, fam.name()).unwrap();
            assert_eq!(a, b);
            let (c, _) = area_centroid(&a.outer, &a.holes).unwrap();
            assert!(c.norm() < 1e-12, "{fam}: {c:?}");
        }
    }

    #[test]
    fn gear_vertex_count_matches_formula() {
        // The generator draws the tooth count first from the same stream.
        let part = generate_part(3, "gear").unwrap();
        let mut r = rng::rng(rng::mix(3, Family::Gear.code() as u64));
        let _h: f64 = r.random_range(GEN_HEIGHT.0..GEN_HEIGHT.1);
        let k: usize = r.random_range(6..=14);
        // independent recount: vertices at the tip radius come in pairs per tooth
        let max_r = part.outer.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let min_r = part.outer.iter().map(|p| p.norm()).fold(f64::MAX, f64::min);
        let mid = 0.5 * (max_r + min_r);
        let tips = part.outer.iter().filter(|p| p.norm() > mid).count();
        assert_eq!(tips, 2 * k);
        assert_eq!(part.outer.len(), gear_outer_vertex_count(k));
        assert_eq!(part.holes.len(), 1);
        assert_eq!(part.holes[0].len(), 12);
    }

    #[test]
    fn fixed_tooth_gear_has_4k_vertices() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for k in [6, 9, 14] {
            let (outer, _) = gear_rings(&mut r, k);
            assert_eq!(outer.len(), 4 * k);
        }
    }

    #[test]
    fn rotated_square_bbox() {
        let part = Part::from_rings(0, Family::Ngon, 0.01, square(0.5), vec![]).unwrap();
        let b = bounding_box(&part, &Pose::default());
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (-0.5, -0.5, 0.5, 0.5));
        let b = bounding_box(&part, &Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_4));
        assert!((b.width() - 2f64.sqrt()).abs() < 1e-12);
        assert!((b.height() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn containment_basics() {
        let part = generate_part(11, "ngon").unwrap();
        let pose = Pose::new(0.3, -0.2, 1.0);
        assert!(silhouette_contains(&part, &pose, pose.position()));
        let far = pose.position().add(Point2::new(2.0 * part.radius() + 0.01, 0.0));
        assert!(!silhouette_contains(&part, &pose, far));
        // boundary counts as inside
        let v = pose.apply(part.outer[0]);
        assert!(silhouette_contains(&part, &pose, v));
    }

    #[test]
    fn hole_interior_is_outside() {
        let mut hole = square(0.25);
        hole.reverse();
        let part = Part::from_rings(0, Family::SlottedBar, 0.01, square(0.5), vec![hole]).unwrap();
        assert!(!contains_local(&part, Point2::new(0.0, 0.0)));
        assert!(contains_local(&part, Point2::new(0.25, 0.0)));
        assert!(contains_local(&part, Point2::new(0.4, 0.4)));
    }

    #[test]
    fn generated_parts_satisfy_invariants() {
        for seed in 0..200u64 {
            for fam in Family::ALL {
                let p = generate(seed, fam);
                assert!(p.outer.len() >= 3);
                assert!(signed_area(&p.outer) > 0.0);
                assert!(p.holes.iter().all(|h| signed_area(h) < 0.0));
                assert!((MIN_HEIGHT..=MAX_HEIGHT).contains(&p.height));
                let axis = p.longest_axis();
                assert!((0.01..=0.20).contains(&axis), "{fam} seed {seed}: {axis}");
                for h in &p.holes {
                    for v in h {
                        assert!(matches!(winding(&p.outer, *v), Some(w) if w != 0));
                    }
                }
            }
        }
    }
}

//! Orthographic top-down depth rendering of a posed part, the depth noise
//! model and per-image standardization.
//!
//! Pixel `(row, col)` of a view centred at `c` with rotation `r` and pitch
//! `m` images the world point `c + R(r) * ((col + 0.5 - 32) m, (32 - row - 0.5) m)`,
//! so row 0 is the top of the image and the image x axis points along the
//! view rotation.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::parts::{bounding_box, contains_local, Part, Pose};
use crate::physics::Grasp;
use crate::rng;

pub const IMAGE_SIDE: usize = 64;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const DEFAULT_FULL_WINDOW: f64 = 0.30;
pub const DEFAULT_PATCH_WINDOW: f64 = 0.15;
pub const DEFAULT_CAMERA_HEIGHT: f64 = 0.7;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub full_window: f64,
    pub patch_window: f64,
    pub camera_height: f64,
    pub noise_sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            full_window: DEFAULT_FULL_WINDOW,
            patch_window: DEFAULT_PATCH_WINDOW,
            camera_height: DEFAULT_CAMERA_HEIGHT,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    /// Row-major 64x64 depth values in meters.
    pub pixels: Vec<f64>,
    pub meters_per_pixel: f64,
    pub center_world: Point2,
    pub rotation_world: f64,
}

impl DepthImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Offset of a pixel centre from the view centre, in the view frame.
    pub fn pixel_offset(row: usize, col: usize, mpp: f64) -> Point2 {
        Point2::new(
            (col as f64 - 31.5) * mpp,
            (31.5 - row as f64) * mpp,
        )
    }

    pub fn pixel_world(&self, row: usize, col: usize) -> Point2 {
        let off = Self::pixel_offset(row, col, self.meters_per_pixel);
        self.center_world.add(off.rotated(self.rotation_world))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32).collect()
    }
}

fn check_camera(part: Option<&Part>, window_side: f64, camera_height: f64) -> Result<()> {
    if !(window_side > 0.0) {
        return Err(Error::Configuration(format!("window side {window_side} must be positive")));
    }
    if let Some(p) = part {
        if !(camera_height > p.height) {
            return Err(Error::Configuration(format!(
                "camera height {camera_height} is not above part top {}",
                p.height
            )));
        }
    } else if !(camera_height > 0.0) {
        return Err(Error::Configuration("camera height must be positive".into()));
    }
    Ok(())
}

/// Renders an arbitrary view by evaluating the analytic height field at
/// every pixel centre. `scene = None` renders an empty table.
pub fn render_view(
    scene: Option<(&Part, &Pose)>,
    center: Point2,
    rotation: f64,
    window_side: f64,
    camera_height: f64,
) -> Result<DepthImage> {
    check_camera(scene.map(|s| s.0), window_side, camera_height)?;
    let mpp = window_side / IMAGE_SIDE as f64;
    let mut img = DepthImage {
        pixels: vec![camera_height; PIXELS],
        meters_per_pixel: mpp,
        center_world: center,
        rotation_world: rotation,
    };
    if let Some((part, pose)) = scene {
        let top = camera_height - part.height;
        let bbox = bounding_box(part, pose);
        for row in 0..IMAGE_SIDE {
            for col in 0..IMAGE_SIDE {
                let w = img.pixel_world(row, col);
                if bbox.contains(w) && contains_local(part, pose.inverse_apply(w)) {
                    img.pixels[row * IMAGE_SIDE + col] = top;
                }
            }
        }
    }
    Ok(img)
}

/// Object-centric full view: centred on the part centroid, unrotated.
pub fn render_full(part: &Part, pose: &Pose, window_side: f64, camera_height: f64) -> Result<DepthImage> {
    render_view(Some((part, pose)), pose.position(), 0.0, window_side, camera_height)
}

/// Height field of one posed part sampled on a world-aligned lattice
/// anchored at the part centroid with half the patch pixel pitch.
/// Grasp-centric patches bilinearly interpolate this lattice.
#[derive(Debug, Clone)]
pub struct PatchRenderer {
    pose: Pose,
    window_side: f64,
    camera_height: f64,
    pitch: f64,
    // lattice index range (inclusive lower, exclusive upper) relative to anchor
    i0: i64,
    j0: i64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl PatchRenderer {
    pub fn new(part: &Part, pose: &Pose, window_side: f64, camera_height: f64) -> Result<Self> {
        check_camera(Some(part), window_side, camera_height)?;
        let pitch = window_side / IMAGE_SIDE as f64 / 2.0;
        let anchor = pose.position();
        let bbox = bounding_box(part, pose);
        let i0 = ((bbox.min_x - anchor.x) / pitch).floor() as i64 - 1;
        let i1 = ((bbox.max_x - anchor.x) / pitch).ceil() as i64 + 2;
        let j0 = ((bbox.min_y - anchor.y) / pitch).floor() as i64 - 1;
        let j1 = ((bbox.max_y - anchor.y) / pitch).ceil() as i64 + 2;
        let nx = (i1 - i0) as usize;
        let ny = (j1 - j0) as usize;
        let top = camera_height - part.height;
        let mut values = vec![camera_height; nx * ny];
        for jy in 0..ny {
            for ix in 0..nx {
                let w = Point2::new(
                    anchor.x + (i0 + ix as i64) as f64 * pitch,
                    anchor.y + (j0 + jy as i64) as f64 * pitch,
                );
                if bbox.contains(w) && contains_local(part, pose.inverse_apply(w)) {
                    values[jy * nx + ix] = top;
                }
            }
        }
        Ok(PatchRenderer {
            pose: *pose,
            window_side,
            camera_height,
            pitch,
            i0,
            j0,
            nx,
            ny,
            values,
        })
    }

    fn lattice(&self, i: i64, j: i64) -> f64 {
        let ix = i - self.i0;
        let jy = j - self.j0;
        if ix < 0 || jy < 0 || ix >= self.nx as i64 || jy >= self.ny as i64 {
            self.camera_height
        } else {
            self.values[jy as usize * self.nx + ix as usize]
        }
    }

    /// Bilinear interpolation of the lattice at a world point.
    pub fn sample(&self, w: Point2) -> f64 {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-6 {
                r
            } else {
                v
            }
        };
        let u = snap((w.x - self.pose.x) / self.pitch);
        let v = snap((w.y - self.pose.y) / self.pitch);
        let fu = u.floor();
        let fv = v.floor();
        let (tu, tv) = (u - fu, v - fv);
        let (i, j) = (fu as i64, fv as i64);
        let a = self.lattice(i, j);
        if tu == 0.0 && tv == 0.0 {
            return a;
        }
        let b = self.lattice(i + 1, j);
        let c = self.lattice(i, j + 1);
        let d = self.lattice(i + 1, j + 1);
        if a == b && a == c && a == d {
            return a;
        }
        (1.0 - tu) * (1.0 - tv) * a + tu * (1.0 - tv) * b + (1.0 - tu) * tv * c + tu * tv * d
    }

    /// Grasp-centric patch: centred on the grasp point, image x axis along
    /// the gripper closing axis.
    pub fn render(&self, grasp: &Grasp) -> DepthImage {
        let center = self.pose.position().add(Point2::new(grasp.gx, grasp.gy));
        let rotation = self.pose.theta + grasp.gtheta;
        let mpp = self.window_side / IMAGE_SIDE as f64;
        let (s, c) = rotation.sin_cos();
        let mut pixels = Vec::with_capacity(PIXELS);
        for row in 0..IMAGE_SIDE {
            for col in 0..IMAGE_SIDE {
                let o = DepthImage::pixel_offset(row, col, mpp);
                let w = Point2::new(center.x + c * o.x - s * o.y, center.y + s * o.x + c * o.y);
                pixels.push(self.sample(w));
            }
        }
        DepthImage {
            pixels,
            meters_per_pixel: mpp,
            center_world: center,
            rotation_world: rotation,
        }
    }
}

pub fn render_grasp_patch(
    part: &Part,
    pose: &Pose,
    grasp: &Grasp,
    window_side: f64,
    camera_height: f64,
) -> Result<DepthImage> {
    Ok(PatchRenderer::new(part, pose, window_side, camera_height)?.render(grasp))
}

/// Adds independent zero-mean Gaussian noise with standard deviation
/// `sigma` to every pixel. Deterministic per `noise_seed`.
pub fn add_noise(img: &DepthImage, sigma: f64, noise_seed: u64) -> DepthImage {
    let mut out = img.clone();
    if sigma == 0.0 {
        return out;
    }
    let mut r = rng::rng(noise_seed);
    for p in out.pixels.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *p += sigma * z;
    }
    out
}

/// Zero-mean, unit (population) standard deviation copy of the pixels.
/// Images with standard deviation at or below 1e-9 are only mean-shifted.
pub fn standardize(pixels: &[f64]) -> Vec<f64> {
    let n = pixels.len() as f64;
    if pixels.iter().all(|&v| v == pixels[0]) {
        return vec![0.0; pixels.len()];
    }
    let mean = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-9 {
        pixels.iter().map(|v| (v - mean) / std).collect()
    } else {
        pixels.iter().map(|v| v - mean).collect()
    }
}

pub fn standardize_f32(pixels: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = pixels.iter().map(|&p| p as f64).collect();
    standardize(&v)
}

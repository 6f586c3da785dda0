//! Procedural scenes and simulated coded-exposure captures.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::masks::MaskStack;
use crate::model::{Geometry, Hologram, HologramKind, Object4D, SensingOperator, Shape4};

pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TwoPlane,
    MovingParticles,
    StaticFibers,
    Custom,
}

/// Outline of one object, sizes in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectShape {
    Disk { radius: f64 },
    Ring { radius: f64, width: f64 },
    /// Rectangle of `length × width` rotated by `angle` radians.
    Bar { length: f64, width: f64, angle: f64 },
    /// Circular arc of the given arc length and curvature (1/m), centered on
    /// the object position and tangent to `angle` there.
    Fiber { length: f64, width: f64, curvature: f64, angle: f64 },
    /// User-supplied amplitudes (e.g. an imported image), one pixel per sample.
    Raster { nx: usize, ny: usize, data: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Index into the scene's depth planes.
    pub plane: usize,
    /// Peak amplitude in (0, 1].
    pub amplitude: f64,
    pub shape: ObjectShape,
    /// Center at frame 0, meters from the grid origin (x, y).
    pub position: [f64; 2],
    /// Lateral velocity, m/s.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl SceneObject {
    /// Center at frame `t` in meters.
    pub fn position_at(&self, t: usize, frame_interval: f64) -> [f64; 2] {
        let dt = t as f64 * frame_interval;
        [self.position[0] + self.velocity[0] * dt, self.position[1] + self.velocity[1] * dt]
    }

    /// Center at frame `t` rounded to the pixel grid.
    pub fn pixel_at(&self, t: usize, frame_interval: f64, pitch: f64) -> (i64, i64) {
        let p = self.position_at(t, frame_interval);
        ((p[0] / pitch).round() as i64, (p[1] / pitch).round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    /// Depth-plane distances, meters.
    pub planes: Vec<f64>,
    pub frames: usize,
    pub frame_interval: f64,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn empty(nx: usize, ny: usize, pitch: f64, planes: Vec<f64>, frames: usize, frame_interval: f64) -> Self {
        Self { kind: SceneKind::Custom, nx, ny, pitch, planes, frames, frame_interval, objects: Vec::new() }
    }

    pub fn shape(&self) -> Shape4 {
        Shape4 { nt: self.frames, nd: self.planes.len(), ny: self.ny, nx: self.nx }
    }

    /// Geometry matching the scene grid, planes and timing, with the given
    /// wavelength and a lens-relayed mask (no mask or sensor gap).
    pub fn geometry(&self, wavelength: f64) -> Geometry {
        Geometry {
            nx: self.nx,
            ny: self.ny,
            pitch: self.pitch,
            wavelength,
            depths: self.planes.clone(),
            frame_count: self.frames,
            frame_interval: self.frame_interval,
            ..Geometry::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.frames == 0 || self.planes.is_empty() {
            return Err(invalid("scene needs a non-empty grid, frames and planes"));
        }
        if !(self.pitch > 0.0 && self.frame_interval > 0.0) {
            return Err(invalid("scene pitch and frame interval must be positive"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.plane >= self.planes.len() {
                return Err(invalid(format!("object {i} references missing plane {}", o.plane)));
            }
            if !(o.amplitude > 0.0 && o.amplitude <= 1.0) {
                return Err(invalid(format!("object {i} amplitude {} outside (0, 1]", o.amplitude)));
            }
            for t in 0..self.frames {
                let (x, y) = o.pixel_at(t, self.frame_interval, self.pitch);
                if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                    return Err(invalid(format!(
                        "object {i} center ({x}, {y}) leaves the {}x{} grid at frame {t}",
                        self.nx, self.ny
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rasterizes every object into its plane for every frame. Overlapping
/// objects keep the larger amplitude.
pub fn build_scene(spec: &SceneSpec) -> Result<Object4D> {
    spec.validate()?;
    let mut obj = Object4D::zeros(spec.shape());
    for t in 0..spec.frames {
        for o in &spec.objects {
            let (cx, cy) = o.pixel_at(t, spec.frame_interval, spec.pitch);
            stamp(&mut obj, t, o, cx, cy, spec);
        }
    }
    Ok(obj)
}

fn stamp(obj: &mut Object4D, t: usize, o: &SceneObject, cx: i64, cy: i64, spec: &SceneSpec) {
    let p = spec.pitch;
    let (nx, ny) = (spec.nx as i64, spec.ny as i64);
    let mut put = |x: i64, y: i64, a: f64| {
        if x >= 0 && y >= 0 && x < nx && y < ny && a > 0.0 {
            let cur = obj.get(t, o.plane, y as usize, x as usize).re;
            if a > cur {
                obj.set(t, o.plane, y as usize, x as usize, Complex64::new(a, 0.0));
            }
        }
    };
    if let ObjectShape::Raster { nx: rw, ny: rh, data } = &o.shape {
        let (ox, oy) = (cx - *rw as i64 / 2, cy - *rh as i64 / 2);
        for ry in 0..*rh {
            for rx in 0..*rw {
                put(ox + rx as i64, oy + ry as i64, o.amplitude * data[ry * rw + rx]);
            }
        }
        return;
    }
    let reach = (shape_extent(&o.shape) / p).ceil() as i64 + 1;
    let polyline = match &o.shape {
        ObjectShape::Fiber { length, curvature, angle, .. } => arc_points(*length, *curvature, *angle),
        _ => Vec::new(),
    };
    for y in cy - reach..=cy + reach {
        for x in cx - reach..=cx + reach {
            let (dx, dy) = ((x - cx) as f64 * p, (y - cy) as f64 * p);
            // Edges that land exactly on a pixel center count as inside.
            let slack = 1e-9 * p;
            let inside = match &o.shape {
                ObjectShape::Disk { radius } => dx.hypot(dy) <= radius + slack,
                ObjectShape::Ring { radius, width } => (dx.hypot(dy) - radius).abs() <= 0.5 * width + slack,
                ObjectShape::Bar { length, width, angle } => {
                    let (s, c) = angle.sin_cos();
                    let along = dx * c + dy * s;
                    let across = -dx * s + dy * c;
                    along.abs() <= 0.5 * length + slack && across.abs() <= 0.5 * width + slack
                }
                ObjectShape::Fiber { width, .. } => polyline_distance(&polyline, dx, dy) <= 0.5 * width + slack,
                ObjectShape::Raster { .. } => unreachable!(),
            };
            if inside {
                put(x, y, o.amplitude);
            }
        }
    }
}

fn shape_extent(shape: &ObjectShape) -> f64 {
    match shape {
        ObjectShape::Disk { radius } => *radius,
        ObjectShape::Ring { radius, width } => radius + width,
        ObjectShape::Bar { length, width, .. } => 0.5 * length.hypot(*width),
        ObjectShape::Fiber { length, width, .. } => 0.5 * length + width,
        ObjectShape::Raster { nx, ny, .. } => (*nx).max(*ny) as f64,
    }
}

fn arc_points(length: f64, curvature: f64, angle: f64) -> Vec<(f64, f64)> {
    const SEGMENTS: usize = 256;
    (0..=SEGMENTS)
        .map(|i| {
            let s = length * (i as f64 / SEGMENTS as f64 - 0.5);
            // Arc through the origin with unit tangent (1, 0), bending toward +y.
            let (u, v) = if curvature.abs() < 1e-12 {
                (s, 0.0)
            } else {
                let phi = s * curvature;
                (phi.sin() / curvature, (1.0 - phi.cos()) / curvature)
            };
            let (sn, cs) = angle.sin_cos();
            (u * cs - v * sn, u * sn + v * cs)
        })
        .collect()
}

fn polyline_distance(points: &[(f64, f64)], x: f64, y: f64) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let ((ax, ay), (bx, by)) = (w[0], w[1]);
            let (ex, ey) = (bx - ax, by - ay);
            let len2 = ex * ex + ey * ey;
            let s = if len2 > 0.0 { (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (x - ax - s * ex).hypot(y - ay - s * ey)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    None,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    /// Standard deviation relative to the mean background level.
    pub sigma: f64,
    pub seed: u64,
}

/// Full intensity capture: per frame `|O_c + R_c|²`, integrated over `τ`,
/// plus optional noise on the raw image. The background is the same
/// pipeline with no object.
pub fn simulate_capture(
    obj: &Object4D,
    masks: &MaskStack,
    geom: &Geometry,
    noise: &NoiseSpec,
) -> Result<(Hologram, Hologram)> {
    if !(noise.sigma >= 0.0) {
        return Err(invalid("noise sigma must be non-negative"));
    }
    let op = SensingOperator::new(geom, masks)?;
    if obj.shape() != op.object_shape() {
        return Err(mismatch(format!("object shape {:?} does not match geometry {:?}", obj.shape(), op.object_shape())));
    }
    let tau = geom.frame_interval;
    let frames: Vec<(Vec<f64>, Vec<f64>)> = (0..geom.frame_count)
        .into_par_iter()
        .map(|t| {
            let object = op.sensor_field(obj, t);
            let reference = op.reference_field(t);
            let total = object.iter().zip(&reference).map(|(o, r)| (o + r).norm_sqr()).collect();
            let background = reference.iter().map(|r| r.norm_sqr()).collect();
            (total, background)
        })
        .collect();
    let n = geom.nx * geom.ny;
    let (mut raw, mut background) = (vec![0.0; n], vec![0.0; n]);
    for (total, bg) in &frames {
        raw.iter_mut().zip(total).for_each(|(a, v)| *a += tau * v);
        background.iter_mut().zip(bg).for_each(|(a, v)| *a += tau * v);
    }
    if noise.model == NoiseModel::Gaussian && noise.sigma > 0.0 {
        let level = background.iter().sum::<f64>() / n as f64;
        let dist = Normal::new(0.0, noise.sigma * level).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        raw.iter_mut().for_each(|v| *v = (*v + dist.sample(&mut rng)).max(0.0));
    }
    Ok((
        Hologram::new(geom.nx, geom.ny, HologramKind::Raw, raw)?,
        Hologram::new(geom.nx, geom.ny, HologramKind::Background, background)?,
    ))
}

/// The `τ·Σ_t |O_c|²` term that the linear model leaves out.
pub fn quadratic_term(obj: &Object4D, masks: &MaskStack, geom: &Geometry) -> Result<Vec<f64>> {
    let op = SensingOperator::new(geom, masks)?;
    let mut out = vec![0.0; geom.nx * geom.ny];
    for t in 0..geom.frame_count {
        let field = op.sensor_field(obj, t);
        out.iter_mut().zip(&field).for_each(|(a, v)| *a += geom.frame_interval * v.norm_sqr());
    }
    Ok(out)
}

/// `10·log10(peak²/MSE)` over the whole volume on magnitudes, with the peak
/// taken from `truth`. Returns [`PSNR_CAP_DB`] for identical inputs.
pub fn psnr(recon: &Object4D, truth: &Object4D) -> Result<f64> {
    if recon.shape() != truth.shape() {
        return Err(mismatch(format!("shapes {:?} and {:?} differ", recon.shape(), truth.shape())));
    }
    let mse = recon
        .data()
        .iter()
        .zip(truth.data())
        .map(|(r, t)| (r.norm() - t.norm()).powi(2))
        .sum::<f64>()
        / truth.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let peak = truth.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(invalid("PSNR is undefined for an all-zero reference"));
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

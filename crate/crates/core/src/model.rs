//! The coded-exposure holographic sensing operator and its adjoint.
//!
//! For each sub-frame `t` the object planes are propagated to the mask plane
//! and summed, multiplied by the mask, optionally propagated to the sensor,
//! and reduced to `2τ·Re{·}`; the sensor integrates all sub-frames. The
//! reference wave is a unit-amplitude plane wave, so the interference term
//! with it is the real part of the object field at the sensor.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::fft::Fft2;
use crate::field::{apply_spectrum, crop_from, make_transfer_with, pad_into, DEFAULT_PAD_FACTOR};
use crate::masks::MaskStack;

/// Laser wavelength of the reference setup, meters.
pub const DEFAULT_WAVELENGTH: f64 = 532e-9;
/// Sensor pixel pitch of the reference setup, meters.
pub const DEFAULT_PITCH: f64 = 5.86e-6;
/// Mask pattern interval, seconds.
pub const DEFAULT_FRAME_INTERVAL: f64 = 500e-6;

const NORM_SEED: u64 = 0x5eed_0f_a11;

/// Everything that defines the sensing operator apart from the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub wavelength: f64,
    /// Object-plane distances to the observation plane, strictly increasing.
    pub depths: Vec<f64>,
    /// Observation plane to mask plane.
    pub observation_to_mask_distance: f64,
    /// Mask plane to sensor; 0 when a relay lens images the mask onto the sensor.
    pub mask_to_sensor_distance: f64,
    pub frame_count: usize,
    /// Sub-frame duration τ, seconds.
    pub frame_interval: f64,
    pub pad_factor: usize,
    pub band_limited: bool,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            pitch: DEFAULT_PITCH,
            wavelength: DEFAULT_WAVELENGTH,
            depths: vec![0.071, 0.101],
            observation_to_mask_distance: 0.0,
            mask_to_sensor_distance: 0.0,
            frame_count: 1,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            pad_factor: DEFAULT_PAD_FACTOR,
            band_limited: true,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(invalid("geometry grid must be non-empty"));
        }
        for (name, v) in [("pitch", self.pitch), ("wavelength", self.wavelength), ("frame_interval", self.frame_interval)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.depths.is_empty() {
            return Err(invalid("at least one depth plane is required"));
        }
        if self.depths.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(invalid("depths must be finite and non-negative"));
        }
        if self.depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("depths must be strictly increasing"));
        }
        for (name, v) in [
            ("observation_to_mask_distance", self.observation_to_mask_distance),
            ("mask_to_sensor_distance", self.mask_to_sensor_distance),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        if self.frame_count == 0 {
            return Err(invalid("frame_count must be at least 1"));
        }
        if self.pad_factor == 0 {
            return Err(invalid("pad_factor must be at least 1"));
        }
        Ok(())
    }

    pub fn depth_count(&self) -> usize {
        self.depths.len()
    }

    pub fn shape(&self) -> Shape4 {
        Shape4 { nt: self.frame_count, nd: self.depths.len(), ny: self.ny, nx: self.nx }
    }
}

/// Dimensions of a 4D volume ordered (time, depth, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape4 {
    pub nt: usize,
    pub nd: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Shape4 {
    pub fn len(&self) -> usize {
        self.nt * self.nd * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.ny * self.nx
    }

    pub fn index(&self, t: usize, n: usize, y: usize, x: usize) -> usize {
        ((t * self.nd + n) * self.ny + y) * self.nx + x
    }
}

/// The unknown complex object field over (time, depth, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct Object4D {
    shape: Shape4,
    data: Vec<Complex64>,
}

impl Object4D {
    pub fn new(shape: Shape4, data: Vec<Complex64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(invalid("object volume must be non-empty"));
        }
        if data.len() != shape.len() {
            return Err(mismatch(format!(
                "object data has {} samples, shape {:?} needs {}",
                data.len(),
                shape,
                shape.len()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("object contains non-finite samples"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self { shape, data: vec![Complex64::default(); shape.len()] }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, t: usize, n: usize, y: usize, x: usize) -> Complex64 {
        self.data[self.shape.index(t, n, y, x)]
    }

    pub fn set(&mut self, t: usize, n: usize, y: usize, x: usize, v: Complex64) {
        let i = self.shape.index(t, n, y, x);
        self.data[i] = v;
    }

    /// One `ny × nx` plane.
    pub fn plane(&self, t: usize, n: usize) -> &[Complex64] {
        let len = self.shape.plane_len();
        let start = (t * self.shape.nd + n) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, t: usize, n: usize) -> &mut [Complex64] {
        let len = self.shape.plane_len();
        let start = (t * self.shape.nd + n) * len;
        &mut self.data[start..start + len]
    }

    /// Magnitudes of one plane.
    pub fn plane_abs(&self, t: usize, n: usize) -> Vec<f64> {
        self.plane(t, n).iter().map(|v| v.norm()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real inner product with ℂ treated as ℝ².
    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HologramKind {
    Raw,
    Background,
    Subtracted,
}

impl HologramKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Background => "background",
            Self::Subtracted => "subtracted",
        }
    }
}

/// A real-valued sensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct Hologram {
    nx: usize,
    ny: usize,
    kind: HologramKind,
    data: Vec<f64>,
}

impl Hologram {
    pub fn new(nx: usize, ny: usize, kind: HologramKind, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(invalid("hologram grid must be non-empty"));
        }
        if data.len() != nx * ny {
            return Err(mismatch(format!(
                "hologram data has {} samples, grid {nx}x{ny} needs {}",
                data.len(),
                nx * ny
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("hologram contains non-finite samples"));
        }
        if kind != HologramKind::Subtracted && data.iter().any(|&v| v < 0.0) {
            return Err(invalid(format!("{} hologram must be non-negative", kind.as_str())));
        }
        Ok(Self { nx, ny, kind, data })
    }

    pub fn zeros(nx: usize, ny: usize, kind: HologramKind) -> Self {
        Self { nx, ny, kind, data: vec![0.0; nx * ny] }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn kind(&self) -> HologramKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Removes the recorded reference intensity from a raw capture.
pub fn subtract_background(raw: &Hologram, background: &Hologram) -> Result<Hologram> {
    if raw.kind != HologramKind::Raw {
        return Err(Error::KindMismatch { expected: "raw".into(), found: raw.kind.as_str().into() });
    }
    if background.kind != HologramKind::Background {
        return Err(Error::KindMismatch {
            expected: "background".into(),
            found: background.kind.as_str().into(),
        });
    }
    if raw.nx != background.nx || raw.ny != background.ny {
        return Err(mismatch(format!(
            "raw is {}x{}, background is {}x{}",
            raw.nx, raw.ny, background.nx, background.ny
        )));
    }
    let data = raw.data.iter().zip(&background.data).map(|(r, b)| r - b).collect();
    Hologram::new(raw.nx, raw.ny, HologramKind::Subtracted, data)
}

/// Matrix-free sensing operator with precomputed transfer functions.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    geom: Geometry,
    masks: MaskStack,
    fft: Fft2,
    /// Observation-to-mask transfer for each depth plane (distance `d_n + z1 − z0`).
    depth_spectra: Vec<Vec<Complex64>>,
    sensor_spectrum: Option<Vec<Complex64>>,
}

impl SensingOperator {
    pub fn new(geom: &Geometry, masks: &MaskStack) -> Result<Self> {
        geom.validate()?;
        if masks.nx() != geom.nx || masks.ny() != geom.ny {
            return Err(mismatch(format!(
                "masks are {}x{}, geometry is {}x{}",
                masks.nx(),
                masks.ny(),
                geom.nx,
                geom.ny
            )));
        }
        if masks.frame_count() != geom.frame_count {
            return Err(mismatch(format!(
                "mask stack has {} frames, geometry expects {}",
                masks.frame_count(),
                geom.frame_count
            )));
        }
        let transfer = |z: f64| {
            make_transfer_with(geom.nx, geom.ny, geom.pitch, geom.wavelength, z, geom.pad_factor, geom.band_limited)
                .map(|tf| tf.spectrum().to_vec())
        };
        let depth_spectra = geom
            .depths
            .iter()
            .map(|d| transfer(d + geom.observation_to_mask_distance))
            .collect::<Result<Vec<_>>>()?;
        let sensor_spectrum = if geom.mask_to_sensor_distance != 0.0 {
            Some(transfer(geom.mask_to_sensor_distance)?)
        } else {
            None
        };
        Ok(Self {
            geom: geom.clone(),
            masks: masks.clone(),
            fft: Fft2::new(geom.nx * geom.pad_factor, geom.ny * geom.pad_factor),
            depth_spectra,
            sensor_spectrum,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn masks(&self) -> &MaskStack {
        &self.masks
    }

    pub fn object_shape(&self) -> Shape4 {
        self.geom.shape()
    }

    fn check_object(&self, obj: &Object4D) -> Result<()> {
        if obj.shape() != self.object_shape() {
            return Err(mismatch(format!(
                "object shape {:?} does not match geometry {:?}",
                obj.shape(),
                self.object_shape()
            )));
        }
        Ok(())
    }

    fn check_hologram(&self, holo: &Hologram) -> Result<()> {
        if holo.nx != self.geom.nx || holo.ny != self.geom.ny {
            return Err(mismatch(format!(
                "hologram is {}x{}, geometry is {}x{}",
                holo.nx, holo.ny, self.geom.nx, self.geom.ny
            )));
        }
        Ok(())
    }

    /// Sum of all depth planes of frame `t`, propagated to the mask plane.
    pub fn mask_plane_field(&self, obj: &Object4D, t: usize) -> Vec<Complex64> {
        let (nx, ny) = (self.geom.nx, self.geom.ny);
        let mut spectrum = vec![Complex64::default(); self.fft.len()];
        let mut buf = vec![Complex64::default(); self.fft.len()];
        for (n, h) in self.depth_spectra.iter().enumerate() {
            let plane = obj.plane(t, n);
            if plane.iter().all(|v| *v == Complex64::default()) {
                continue;
            }
            pad_into(plane, nx, ny, &mut buf, self.fft.nx());
            self.fft.forward(&mut buf);
            spectrum.iter_mut().zip(&buf).zip(h).for_each(|((s, b), h)| *s += b * h);
        }
        self.fft.inverse(&mut spectrum);
        let mut out = vec![Complex64::default(); nx * ny];
        crop_from(&spectrum, self.fft.nx(), &mut out, nx, ny);
        out
    }

    fn to_sensor(&self, field: &mut [Complex64], conjugate: bool) {
        if let Some(h2) = &self.sensor_spectrum {
            let (nx, ny) = (self.geom.nx, self.geom.ny);
            let mut buf = vec![Complex64::default(); self.fft.len()];
            pad_into(field, nx, ny, &mut buf, self.fft.nx());
            apply_spectrum(&self.fft, &mut buf, h2, conjugate);
            crop_from(&buf, self.fft.nx(), field, nx, ny);
        }
    }

    /// Complex object field reaching the sensor during frame `t`.
    pub fn sensor_field(&self, obj: &Object4D, t: usize) -> Vec<Complex64> {
        let mut field = self.mask_plane_field(obj, t);
        field.iter_mut().zip(self.masks.frame(t)).for_each(|(v, &m)| {
            if m == 0 {
                *v = Complex64::default();
            }
        });
        self.to_sensor(&mut field, false);
        field
    }

    /// Unit plane-wave reference after passing mask `t` and reaching the sensor.
    pub fn reference_field(&self, t: usize) -> Vec<Complex64> {
        let mut field: Vec<Complex64> =
            self.masks.frame(t).iter().map(|&m| Complex64::new(m as f64, 0.0)).collect();
        self.to_sensor(&mut field, false);
        field
    }

    pub fn apply(&self, obj: &Object4D) -> Result<Hologram> {
        self.check_object(obj)?;
        let scale = 2.0 * self.geom.frame_interval;
        let frames: Vec<Vec<Complex64>> =
            (0..self.geom.frame_count).into_par_iter().map(|t| self.sensor_field(obj, t)).collect();
        let mut out = vec![0.0; self.geom.nx * self.geom.ny];
        for frame in &frames {
            out.iter_mut().zip(frame).for_each(|(o, v)| *o += scale * v.re);
        }
        Hologram::new(self.geom.nx, self.geom.ny, HologramKind::Subtracted, out)
    }

    pub fn apply_adjoint(&self, holo: &Hologram) -> Result<Object4D> {
        self.back_project(holo, 2.0 * self.geom.frame_interval, None)
    }

    /// Scales the hologram, carries it back to the mask plane, applies mask
    /// `t` times `frame_gain[t]` (gain 1 when absent) and conjugate-propagates
    /// it to every depth plane of frame `t`.
    pub(crate) fn back_project(&self, holo: &Hologram, scale: f64, frame_gain: Option<&[f64]>) -> Result<Object4D> {
        self.check_hologram(holo)?;
        let (nx, ny) = (self.geom.nx, self.geom.ny);
        let shape = self.object_shape();
        let mut obj = Object4D::zeros(shape);
        let mut sensor: Vec<Complex64> = holo.data.iter().map(|&g| Complex64::new(scale * g, 0.0)).collect();
        self.to_sensor(&mut sensor, true);
        let frame_len = shape.nd * shape.plane_len();
        obj.data.par_chunks_mut(frame_len).enumerate().for_each(|(t, frame)| {
            let gain = frame_gain.map_or(1.0, |g| g[t]);
            let field: Vec<Complex64> = sensor
                .iter()
                .zip(self.masks.frame(t))
                .map(|(v, &m)| if m == 0 { Complex64::default() } else { v * gain })
                .collect();
            let mut spectrum = vec![Complex64::default(); self.fft.len()];
            pad_into(&field, nx, ny, &mut spectrum, self.fft.nx());
            self.fft.forward(&mut spectrum);
            let mut buf = vec![Complex64::default(); self.fft.len()];
            for (n, h) in self.depth_spectra.iter().enumerate() {
                buf.iter_mut().zip(&spectrum).zip(h).for_each(|((b, s), h)| *b = s * h.conj());
                self.fft.inverse(&mut buf);
                crop_from(&buf, self.fft.nx(), &mut frame[n * nx * ny..(n + 1) * nx * ny], nx, ny);
            }
        });
        Ok(obj)
    }

    /// Power iteration on AᵀA from a fixed-seed random start; returns the
    /// largest Rayleigh-quotient estimate of ‖A‖₂ seen.
    pub fn norm_estimate(&self, iterations: usize) -> Result<f64> {
        if iterations == 0 {
            return Err(invalid("power iteration needs at least one iteration"));
        }
        let shape = self.object_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
        let data = (0..shape.len())
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let mut x = Object4D::new(shape, data)?;
        let mut best = 0.0f64;
        for _ in 0..iterations {
            let norm = x.norm();
            if norm == 0.0 {
                break;
            }
            x.data.iter_mut().for_each(|v| *v /= norm);
            let ax = self.apply(&x)?;
            best = best.max(ax.norm());
            x = self.apply_adjoint(&ax)?;
        }
        Ok(best)
    }
}

pub fn forward(obj: &Object4D, masks: &MaskStack, geom: &Geometry) -> Result<Hologram> {
    SensingOperator::new(geom, masks)?.apply(obj)
}

pub fn adjoint(holo: &Hologram, masks: &MaskStack, geom: &Geometry) -> Result<Object4D> {
    SensingOperator::new(geom, masks)?.apply_adjoint(holo)
}

pub fn operator_norm_estimate(masks: &MaskStack, geom: &Geometry, iterations: usize) -> Result<f64> {
    SensingOperator::new(geom, masks)?.norm_estimate(iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::generate_partition_masks;
    use std::f64::consts::PI;

    fn random_object(shape: Shape4, seed: u64) -> Object4D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        Object4D::new(shape, data).unwrap()
    }

    fn random_hologram(nx: usize, ny: usize, seed: u64) -> Hologram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..nx * ny).map(|_| StandardNormal.sample(&mut rng)).collect();
        Hologram::new(nx, ny, HologramKind::Subtracted, data).unwrap()
    }

    fn small_geometry(frames: usize) -> Geometry {
        Geometry {
            nx: 16,
            ny: 8,
            pitch: 10e-6,
            depths: vec![0.01, 0.02, 0.035],
            observation_to_mask_distance: 0.004,
            mask_to_sensor_distance: 0.003,
            frame_count: frames,
            ..Geometry::default()
        }
    }

    /// Direct-sum angular-spectrum propagation on the zero-padded grid, phase
    /// taken relative to the plane-wave carrier.
    fn naive_propagate(plane: &[Complex64], g: &Geometry, z: f64) -> Vec<Complex64> {
        let (nx, ny) = (g.nx, g.ny);
        let (px, py) = (nx * g.pad_factor, ny * g.pad_factor);
        let freq = |k: usize, n: usize| {
            let s = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
            s / (n as f64 * g.pitch)
        };
        let limit = |n: usize| {
            let du = 1.0 / (n as f64 * g.pitch);
            1.0 / (g.wavelength * ((2.0 * du * z).powi(2) + 1.0).sqrt())
        };
        let mut spec = vec![Complex64::default(); px * py];
        for v in 0..py {
            for u in 0..px {
                let mut acc = Complex64::default();
                for y in 0..ny {
                    for x in 0..nx {
                        let ph = -2.0 * PI * (u as f64 * x as f64 / px as f64 + v as f64 * y as f64 / py as f64);
                        acc += plane[y * nx + x] * Complex64::from_polar(1.0, ph);
                    }
                }
                let (fx, fy) = (freq(u, px), freq(v, py));
                let s2 = 1.0 / (g.wavelength * g.wavelength) - fx * fx - fy * fy;
                let pass = s2 > 0.0 && (!g.band_limited || (fx.abs() <= limit(px) && fy.abs() <= limit(py)));
                spec[v * px + u] = if pass { acc * Complex64::from_polar(1.0, 2.0 * PI * z * (s2.sqrt() - 1.0 / g.wavelength)) } else { Complex64::default() };
            }
        }
        let mut out = vec![Complex64::default(); nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = Complex64::default();
                for v in 0..py {
                    for u in 0..px {
                        let ph = 2.0 * PI * (u as f64 * x as f64 / px as f64 + v as f64 * y as f64 / py as f64);
                        acc += spec[v * px + u] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[y * nx + x] = acc / (px * py) as f64;
            }
        }
        out
    }

    #[test]
    fn single_frame_matches_direct_sum() {
        let g = Geometry {
            nx: 8,
            ny: 8,
            pitch: 20e-6,
            depths: vec![0.005, 0.009],
            observation_to_mask_distance: 0.002,
            ..Geometry::default()
        };
        let masks = MaskStack::all_ones(8, 8, 1).unwrap();
        let obj = random_object(g.shape(), 3);
        let holo = forward(&obj, &masks, &g).unwrap();
        let mut expected = vec![0.0; 64];
        for n in 0..2 {
            let p = naive_propagate(obj.plane(0, n), &g, g.depths[n] + g.observation_to_mask_distance);
            expected.iter_mut().zip(&p).for_each(|(e, v)| *e += 2.0 * g.frame_interval * v.re);
        }
        let scale = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in holo.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_inner_product() {
        let g = small_geometry(3);
        let masks = generate_partition_masks(16, 8, 3, 2, 9).unwrap();
        let op = SensingOperator::new(&g, &masks).unwrap();
        for seed in 0..3 {
            let o = random_object(g.shape(), 10 + seed);
            let h = random_hologram(16, 8, 20 + seed);
            let lhs = op.apply(&o).unwrap().dot(&h);
            let rhs = o.dot(&op.apply_adjoint(&h).unwrap());
            let bound = 1e-10 * op.apply(&o).unwrap().norm() * h.norm();
            assert!((lhs - rhs).abs() <= bound, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn linear_and_frame_additive() {
        let g = small_geometry(2);
        let masks = generate_partition_masks(16, 8, 2, 1, 4).unwrap();
        let op = SensingOperator::new(&g, &masks).unwrap();
        let (a, b) = (random_object(g.shape(), 1), random_object(g.shape(), 2));
        let combo = Object4D::new(
            g.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| 2.5 * x - 0.5 * y).collect(),
        )
        .unwrap();
        let (ha, hb, hc) = (op.apply(&a).unwrap(), op.apply(&b).unwrap(), op.apply(&combo).unwrap());
        for i in 0..ha.data().len() {
            let want = 2.5 * ha.data()[i] - 0.5 * hb.data()[i];
            assert!((hc.data()[i] - want).abs() < 1e-12 * ha.norm().max(1e-30));
        }
        // Zeroing one frame removes exactly that frame's contribution.
        let mut only0 = a.clone();
        let plane = g.shape().nd * g.shape().plane_len();
        only0.data_mut()[plane..].iter_mut().for_each(|v| *v = Complex64::default());
        let mut only1 = a.clone();
        only1.data_mut()[..plane].iter_mut().for_each(|v| *v = Complex64::default());
        let (h0, h1) = (op.apply(&only0).unwrap(), op.apply(&only1).unwrap());
        for i in 0..ha.data().len() {
            assert!((ha.data()[i] - h0.data()[i] - h1.data()[i]).abs() < 1e-12 * ha.norm());
        }
    }

    #[test]
    fn identity_like_norm() {
        let g = Geometry {
            nx: 16,
            ny: 16,
            depths: vec![0.0],
            ..Geometry::default()
        };
        let masks = MaskStack::all_ones(16, 16, 1).unwrap();
        let norm = operator_norm_estimate(&masks, &g, 30).unwrap();
        let want = 2.0 * g.frame_interval;
        assert!((norm - want).abs() <= 1e-9 * want, "{norm} vs {want}");
    }

    #[test]
    fn sparse_masks_lower_the_norm_and_estimate_converges() {
        let g = Geometry { nx: 32, ny: 32, frame_count: 10, depths: vec![0.02, 0.03], pitch: 10e-6, ..Geometry::default() };
        let ones = MaskStack::all_ones(32, 32, 10).unwrap();
        let sparse = generate_partition_masks(32, 32, 10, 1, 5).unwrap();
        let full = operator_norm_estimate(&ones, &g, 50).unwrap();
        let coded = operator_norm_estimate(&sparse, &g, 50).unwrap();
        assert!(coded < full, "{coded} !< {full}");
        let long = operator_norm_estimate(&sparse, &g, 200).unwrap();
        assert!((long - coded).abs() / long < 1e-3, "{coded} vs {long}");
        assert!(coded <= long * (1.0 + 1e-12));
    }

    #[test]
    fn background_subtraction_checks() {
        let raw = Hologram::new(2, 1, HologramKind::Raw, vec![3.0, 1.0]).unwrap();
        let bg = Hologram::new(2, 1, HologramKind::Background, vec![1.0, 1.5]).unwrap();
        let sub = subtract_background(&raw, &bg).unwrap();
        assert_eq!(sub.kind(), HologramKind::Subtracted);
        assert_eq!(sub.data(), &[2.0, -0.5]);
        assert!(matches!(subtract_background(&bg, &raw), Err(Error::KindMismatch { .. })));
        let small = Hologram::new(1, 1, HologramKind::Background, vec![0.0]).unwrap();
        assert!(matches!(subtract_background(&raw, &small), Err(Error::DimensionMismatch(_))));
        assert!(Hologram::new(1, 1, HologramKind::Raw, vec![-1.0]).is_err());
    }

    #[test]
    fn operator_rejects_mismatches() {
        let g = small_geometry(2);
        assert!(SensingOperator::new(&g, &MaskStack::all_ones(16, 8, 3).unwrap()).is_err());
        assert!(SensingOperator::new(&g, &MaskStack::all_ones(8, 8, 2).unwrap()).is_err());
        let op = SensingOperator::new(&g, &MaskStack::all_ones(16, 8, 2).unwrap()).unwrap();
        let wrong = Object4D::zeros(Shape4 { nt: 1, nd: 3, ny: 8, nx: 16 });
        assert!(matches!(op.apply(&wrong), Err(Error::DimensionMismatch(_))));
        let mut bad = g.clone();
        bad.depths = vec![0.02, 0.01];
        assert!(bad.validate().is_err());
    }
}

//! Sampled complex optical fields and scalar free-space propagation.
//!
//! Propagation is a linear shift-invariant convolution with the free-space
//! diffraction kernel, evaluated in the frequency domain on a zero-padded grid
//! with the angular-spectrum transfer function.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::fft::Fft2;

pub const DEFAULT_PAD_FACTOR: usize = 2;

/// A 2D complex field on a uniform square-pitch grid, row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    nx: usize,
    ny: usize,
    pitch: f64,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(nx: usize, ny: usize, pitch: f64, data: Vec<Complex64>) -> Result<Self> {
        check_grid(nx, ny, pitch)?;
        if data.len() != nx * ny {
            return Err(mismatch(format!(
                "field data has {} samples, grid {nx}x{ny} needs {}",
                data.len(),
                nx * ny
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("field contains non-finite samples"));
        }
        Ok(Self { nx, ny, pitch, data })
    }

    pub fn zeros(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        Self::new(nx, ny, pitch, vec![Complex64::default(); nx * ny])
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        pitch: f64,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        let data = (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(nx, ny, pitch, data)
    }

    /// Unit sample at `(x, y)`, zero elsewhere.
    pub fn impulse(nx: usize, ny: usize, pitch: f64, x: usize, y: usize) -> Result<Self> {
        if x >= nx || y >= ny {
            return Err(invalid(format!("impulse position ({x}, {y}) outside {nx}x{ny} grid")));
        }
        let mut field = Self::zeros(nx, ny, pitch)?;
        field.data[y * nx + x] = Complex64::new(1.0, 0.0);
        Ok(field)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.nx + x]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Frequency-domain propagation operator for one distance on a padded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    nx: usize,
    ny: usize,
    pad_factor: usize,
    pitch: f64,
    wavelength: f64,
    z: f64,
    band_limited: bool,
    spectrum: Vec<Complex64>,
}

impl TransferFunction {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn padded_nx(&self) -> usize {
        self.nx * self.pad_factor
    }

    pub fn padded_ny(&self) -> usize {
        self.ny * self.pad_factor
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn band_limited(&self) -> bool {
        self.band_limited
    }

    /// Samples in FFT order (zero frequency first), `padded_ny × padded_nx`.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// The transfer function for `-z`.
    pub fn reversed(&self) -> Self {
        Self {
            z: -self.z,
            spectrum: self.spectrum.iter().map(|v| v.conj()).collect(),
            ..self.clone()
        }
    }
}

/// Angular-spectrum transfer function with anti-aliasing band limit enabled.
pub fn make_transfer(
    nx: usize,
    ny: usize,
    pitch: f64,
    wavelength: f64,
    z: f64,
    pad_factor: usize,
) -> Result<TransferFunction> {
    make_transfer_with(nx, ny, pitch, wavelength, z, pad_factor, true)
}

pub fn make_transfer_with(
    nx: usize,
    ny: usize,
    pitch: f64,
    wavelength: f64,
    z: f64,
    pad_factor: usize,
    band_limited: bool,
) -> Result<TransferFunction> {
    check_grid(nx, ny, pitch)?;
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(invalid(format!("wavelength must be finite and positive, got {wavelength}")));
    }
    if !z.is_finite() {
        return Err(invalid(format!("propagation distance must be finite, got {z}")));
    }
    if pad_factor < 1 {
        return Err(invalid("pad_factor must be at least 1"));
    }
    let (pnx, pny) = (nx * pad_factor, ny * pad_factor);
    let inv_lambda = 1.0 / wavelength;
    let fx = frequencies(pnx, pitch);
    let fy = frequencies(pny, pitch);
    let (limit_x, limit_y) = if band_limited {
        (band_limit(pnx, pitch, wavelength, z), band_limit(pny, pitch, wavelength, z))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    // exp(i2πz·sqrt(1/λ² − f²)) relative to the plane-wave carrier exp(i2πz/λ).
    // The illumination that lights the object and the reference share that
    // carrier, so it cancels in the interference term. Writing the remaining
    // phase as −2πz·f²/(1/λ + sqrt(1/λ² − f²)) also keeps it accurate for z ≫ λ.
    let mut spectrum = Vec::with_capacity(pnx * pny);
    for &v in &fy {
        for &u in &fx {
            let f2 = u * u + v * v;
            let s2 = inv_lambda * inv_lambda - f2;
            if s2 <= 0.0 || u.abs() > limit_x || v.abs() > limit_y {
                spectrum.push(Complex64::default());
                continue;
            }
            let residual = f2 / (inv_lambda + s2.sqrt());
            spectrum.push(Complex64::from_polar(1.0, -2.0 * PI * z * residual));
        }
    }
    Ok(TransferFunction {
        nx,
        ny,
        pad_factor,
        pitch,
        wavelength,
        z,
        band_limited,
        spectrum,
    })
}

/// Propagates `field` by `tf.z()` and crops back to the field's own grid.
pub fn propagate(field: &ComplexField, tf: &TransferFunction) -> Result<ComplexField> {
    check_compatible(field, tf, false)?;
    let fft = Fft2::new(tf.padded_nx(), tf.padded_ny());
    let mut buf = vec![Complex64::default(); fft.len()];
    pad_into(&field.data, field.nx, field.ny, &mut buf, fft.nx());
    apply_spectrum(&fft, &mut buf, &tf.spectrum, false);
    let mut out = vec![Complex64::default(); field.nx * field.ny];
    crop_from(&buf, fft.nx(), &mut out, field.nx, field.ny);
    ComplexField::new(field.nx, field.ny, field.pitch, out)
}

/// Propagates a field that already lives on the padded grid of `tf`; no cropping.
pub fn propagate_padded(field: &ComplexField, tf: &TransferFunction) -> Result<ComplexField> {
    check_compatible(field, tf, true)?;
    let fft = Fft2::new(tf.padded_nx(), tf.padded_ny());
    let mut buf = field.data.clone();
    apply_spectrum(&fft, &mut buf, &tf.spectrum, false);
    ComplexField::new(field.nx, field.ny, field.pitch, buf)
}

/// Signed FFT-order frequencies (cycles per meter) for `n` samples at `pitch`.
pub(crate) fn frequencies(n: usize, pitch: f64) -> Vec<f64> {
    let span = n as f64 * pitch;
    (0..n)
        .map(|k| {
            let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
            signed / span
        })
        .collect()
}

/// Highest frequency along one axis whose transfer-function phase is still
/// sampled without aliasing for the padded extent `n·pitch`.
fn band_limit(n: usize, pitch: f64, wavelength: f64, z: f64) -> f64 {
    let du = 1.0 / (n as f64 * pitch);
    1.0 / (wavelength * ((2.0 * du * z).powi(2) + 1.0).sqrt())
}

/// Forward FFT, multiply by `spectrum` (or its conjugate), inverse FFT, in place.
pub(crate) fn apply_spectrum(fft: &Fft2, buf: &mut [Complex64], spectrum: &[Complex64], conjugate: bool) {
    fft.forward(buf);
    if conjugate {
        buf.iter_mut().zip(spectrum).for_each(|(b, h)| *b *= h.conj());
    } else {
        buf.iter_mut().zip(spectrum).for_each(|(b, h)| *b *= h);
    }
    fft.inverse(buf);
}

/// Writes the `nx × ny` block into the top-left corner of a zeroed padded buffer.
pub(crate) fn pad_into(src: &[Complex64], nx: usize, ny: usize, dst: &mut [Complex64], pnx: usize) {
    dst.iter_mut().for_each(|v| *v = Complex64::default());
    for y in 0..ny {
        dst[y * pnx..y * pnx + nx].copy_from_slice(&src[y * nx..(y + 1) * nx]);
    }
}

pub(crate) fn crop_from(src: &[Complex64], pnx: usize, dst: &mut [Complex64], nx: usize, ny: usize) {
    for y in 0..ny {
        dst[y * nx..(y + 1) * nx].copy_from_slice(&src[y * pnx..y * pnx + nx]);
    }
}

fn check_grid(nx: usize, ny: usize, pitch: f64) -> Result<()> {
    if nx == 0 || ny == 0 {
        return Err(invalid(format!("grid must be non-empty, got {nx}x{ny}")));
    }
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(invalid(format!("pitch must be finite and positive, got {pitch}")));
    }
    Ok(())
}

pub(crate) fn same_pitch(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn check_compatible(field: &ComplexField, tf: &TransferFunction, padded: bool) -> Result<()> {
    let (ex, ey) = if padded { (tf.padded_nx(), tf.padded_ny()) } else { (tf.nx, tf.ny) };
    if field.nx != ex || field.ny != ey {
        return Err(mismatch(format!(
            "field is {}x{}, transfer function expects {ex}x{ey}",
            field.nx, field.ny
        )));
    }
    if !same_pitch(field.pitch, tf.pitch) {
        return Err(mismatch(format!(
            "field pitch {} differs from transfer pitch {}",
            field.pitch, tf.pitch
        )));
    }
    Ok(())
}

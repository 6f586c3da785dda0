//! The `CHV1` raster container, mask-stack directories and grayscale image
//! import/export.
//!
//! Layout: the 4 bytes `CHV1`, a little-endian `u32` header length, a JSON
//! header of that many bytes, then the payload as little-endian `f32`
//! samples (complex samples as interleaved re, im pairs), x fastest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::field::ComplexField;
use crate::masks::MaskStack;
use crate::model::{Hologram, HologramKind, Object4D, Shape4};

pub const MAGIC: &[u8; 4] = b"CHV1";
pub const MASK_INDEX: &str = "masks.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    C64,
}

impl Dtype {
    pub fn sample_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::C64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub magic: String,
    pub dtype: Dtype,
    /// Up to four dimensions ordered (t, z, y, x).
    pub shape: Vec<usize>,
    pub pitch_m: f64,
    pub wavelength_m: f64,
    /// `raw`, `background`, `subtracted`, `field`, `volume`, `mask` or any user tag.
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    Real(Vec<f32>),
    Complex(Vec<Complex32>),
}

impl RasterData {
    fn len(&self) -> usize {
        match self {
            RasterData::Real(v) => v.len(),
            RasterData::Complex(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub header: RasterHeader,
    pub data: RasterData,
}

impl Raster {
    pub fn new(shape: Vec<usize>, pitch_m: f64, wavelength_m: f64, kind: &str, data: RasterData) -> Result<Self> {
        let dtype = match data {
            RasterData::Real(_) => Dtype::F32,
            RasterData::Complex(_) => Dtype::C64,
        };
        let header = RasterHeader { magic: "CHV1".into(), dtype, shape, pitch_m, wavelength_m, kind: kind.into() };
        check_shape(&header.shape)?;
        let expected: usize = header.shape.iter().product();
        if data.len() != expected {
            return Err(mismatch(format!("{} samples for shape {:?}", data.len(), header.shape)));
        }
        Ok(Self { header, data })
    }

    pub fn from_object(obj: &Object4D, pitch_m: f64, wavelength_m: f64) -> Result<Self> {
        let s = obj.shape();
        let data = obj.data().iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
        Self::new(vec![s.nt, s.nd, s.ny, s.nx], pitch_m, wavelength_m, "volume", RasterData::Complex(data))
    }

    pub fn from_hologram(h: &Hologram, pitch_m: f64, wavelength_m: f64) -> Result<Self> {
        let data = h.data().iter().map(|&v| v as f32).collect();
        Self::new(vec![h.ny(), h.nx()], pitch_m, wavelength_m, h.kind().as_str(), RasterData::Real(data))
    }

    pub fn from_field(f: &ComplexField, wavelength_m: f64) -> Result<Self> {
        let data = f.data().iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
        Self::new(vec![f.ny(), f.nx()], f.pitch(), wavelength_m, "field", RasterData::Complex(data))
    }

    pub fn from_mask_frame(frame: &[u8], nx: usize, ny: usize, pitch_m: f64) -> Result<Self> {
        let data = frame.iter().map(|&m| m as f32).collect();
        Self::new(vec![ny, nx], pitch_m, 0.0, "mask", RasterData::Real(data))
    }

    /// Shape padded on the left to four dimensions.
    pub fn shape4(&self) -> Shape4 {
        let mut dims = [1usize; 4];
        let s = &self.header.shape;
        dims[4 - s.len()..].copy_from_slice(s);
        Shape4 { nt: dims[0], nd: dims[1], ny: dims[2], nx: dims[3] }
    }

    fn values_f64(&self) -> Vec<Complex64> {
        match &self.data {
            RasterData::Real(v) => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
            RasterData::Complex(v) => v.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect(),
        }
    }

    pub fn to_object(&self) -> Result<Object4D> {
        Object4D::new(self.shape4(), self.values_f64())
    }

    /// Real rasters with a 2D shape; the hologram kind comes from the header tag.
    pub fn to_hologram(&self) -> Result<Hologram> {
        let RasterData::Real(v) = &self.data else {
            return Err(Error::Format("holograms are stored as f32".into()));
        };
        let kind = match self.header.kind.as_str() {
            "raw" => HologramKind::Raw,
            "background" => HologramKind::Background,
            "subtracted" => HologramKind::Subtracted,
            other => return Err(Error::Format(format!("kind `{other}` is not a hologram kind"))),
        };
        let s = self.shape4();
        if s.nt * s.nd != 1 {
            return Err(Error::Format(format!("hologram raster must be 2D, shape is {:?}", self.header.shape)));
        }
        Hologram::new(s.nx, s.ny, kind, v.iter().map(|&x| x as f64).collect())
    }

    pub fn to_field(&self) -> Result<ComplexField> {
        let s = self.shape4();
        if s.nt * s.nd != 1 {
            return Err(Error::Format(format!("field raster must be 2D, shape is {:?}", self.header.shape)));
        }
        ComplexField::new(s.nx, s.ny, self.header.pitch_m, self.values_f64())
    }

    /// Real-valued frames thresholded at 0.5. Every leading index beyond
    /// (y, x) is one frame.
    pub fn to_mask_stack(&self, superpixel: usize) -> Result<MaskStack> {
        let RasterData::Real(v) = &self.data else {
            return Err(Error::Format("masks are stored as f32".into()));
        };
        let s = self.shape4();
        let frames: Vec<Vec<f64>> =
            v.chunks(s.plane_len()).map(|c| c.iter().map(|&x| x as f64).collect()).collect();
        MaskStack::from_real_frames(s.nx, s.ny, superpixel, &frames)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + self.data.len() * self.header.dtype.sample_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            RasterData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RasterData::Complex(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing CHV1 magic".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Corrupt(format!(
                "header needs {header_len} bytes but only {} follow the prefix",
                bytes.len() - 8
            )));
        }
        let header: RasterHeader = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if header.magic != "CHV1" {
            return Err(Error::Format(format!("header magic is `{}`", header.magic)));
        }
        check_shape(&header.shape)?;
        let samples: usize = header.shape.iter().product();
        let expected = samples * header.dtype.sample_bytes();
        let payload = &bytes[header_end..];
        if payload.len() != expected {
            return Err(Error::Corrupt(format!(
                "payload has {} bytes, expected {expected} for shape {:?} of {:?}",
                payload.len(),
                header.shape,
                header.dtype
            )));
        }
        let word = |i: usize| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let data = match header.dtype {
            Dtype::F32 => RasterData::Real((0..samples).map(word).collect()),
            Dtype::C64 => RasterData::Complex((0..samples).map(|i| Complex32::new(word(2 * i), word(2 * i + 1))).collect()),
        };
        Ok(Self { header, data })
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(Error::Format(format!("shape must have 1 to 4 non-zero dimensions, got {shape:?}")));
    }
    Ok(())
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let bytes = raster.encode()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    Raster::decode(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskIndex {
    pub nx: usize,
    pub ny: usize,
    pub superpixel: usize,
    pub seed: u64,
    pub pitch_m: f64,
    pub files: Vec<String>,
}

/// Writes one raster per frame plus a JSON index into `dir`; returns the paths written.
pub fn write_mask_stack(dir: impl AsRef<Path>, stack: &MaskStack, pitch_m: f64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for t in 0..stack.frame_count() {
        let name = format!("mask_{t:03}.chv");
        write_raster(dir.join(&name), &Raster::from_mask_frame(stack.frame(t), stack.nx(), stack.ny(), pitch_m)?)?;
        written.push(dir.join(&name));
        files.push(name);
    }
    let index = MaskIndex { nx: stack.nx(), ny: stack.ny(), superpixel: stack.superpixel(), seed: stack.seed(), pitch_m, files };
    fs::write(dir.join(MASK_INDEX), serde_json::to_string_pretty(&index)? + "\n")?;
    written.push(dir.join(MASK_INDEX));
    Ok(written)
}

pub fn read_mask_stack(dir: impl AsRef<Path>) -> Result<MaskStack> {
    let dir = dir.as_ref();
    let index: MaskIndex = serde_json::from_str(&fs::read_to_string(dir.join(MASK_INDEX))?)?;
    let frames = index
        .files
        .iter()
        .map(|name| {
            let r = read_raster(dir.join(name))?;
            let s = r.shape4();
            if s.nx != index.nx || s.ny != index.ny || s.nt * s.nd != 1 {
                return Err(mismatch(format!("{name} has shape {:?}, index says {}x{}", r.header.shape, index.nx, index.ny)));
            }
            match r.data {
                RasterData::Real(v) => Ok(v.iter().map(|&x| x as f64).collect::<Vec<f64>>()),
                RasterData::Complex(_) => Err(Error::Format(format!("{name}: masks are stored as f32"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stack = MaskStack::from_real_frames(index.nx, index.ny, index.superpixel, &frames)?;
    MaskStack::new(index.nx, index.ny, index.superpixel, index.seed, (0..stack.frame_count()).map(|t| stack.frame(t).to_vec()).collect())
}

/// Loads an 8-bit grayscale image (any format the decoder knows, e.g. PNG or
/// PGM) as `(nx, ny, values)` with values in [0, 1].
pub fn import_grayscale(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)?.to_luma8();
    let (nx, ny) = (img.width() as usize, img.height() as usize);
    Ok((nx, ny, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()))
}

/// Writes `values` as an 8-bit PNG scaled so the largest value maps to 255.
pub fn write_png(path: impl AsRef<Path>, values: &[f64], nx: usize, ny: usize) -> Result<()> {
    if values.len() != nx * ny {
        return Err(mismatch(format!("{} values for a {nx}x{ny} image", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("image values must be finite"));
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let pixels: Vec<u8> = values.iter().map(|v| (v.max(0.0) * scale).round().min(255.0) as u8).collect();
    let img = image::GrayImage::from_raw(nx as u32, ny as u32, pixels).expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

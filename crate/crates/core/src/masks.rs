//! Binary per-frame exposure masks on the sensor grid.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// `T` binary masks, each `ny × nx`, stored frame after frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStack {
    nx: usize,
    ny: usize,
    frames: usize,
    superpixel: usize,
    seed: u64,
    data: Vec<u8>,
}

impl MaskStack {
    pub fn new(nx: usize, ny: usize, superpixel: usize, seed: u64, frames: Vec<Vec<u8>>) -> Result<Self> {
        if nx == 0 || ny == 0 || frames.is_empty() {
            return Err(invalid("mask stack needs a non-empty grid and at least one frame"));
        }
        if superpixel == 0 {
            return Err(invalid("superpixel must be at least 1"));
        }
        let count = frames.len();
        let mut data = Vec::with_capacity(count * nx * ny);
        for (t, frame) in frames.into_iter().enumerate() {
            if frame.len() != nx * ny {
                return Err(mismatch(format!(
                    "mask frame {t} has {} samples, expected {}",
                    frame.len(),
                    nx * ny
                )));
            }
            if let Some(v) = frame.iter().find(|&&v| v > 1) {
                return Err(invalid(format!("mask frame {t} holds non-binary value {v}")));
            }
            data.extend(frame);
        }
        Ok(Self { nx, ny, frames: count, superpixel, seed, data })
    }

    /// Thresholds externally supplied real-valued masks at 0.5.
    pub fn from_real_frames(nx: usize, ny: usize, superpixel: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let binary = frames
            .iter()
            .map(|f| f.iter().map(|&v| u8::from(v >= 0.5)).collect())
            .collect();
        Self::new(nx, ny, superpixel, 0, binary)
    }

    pub fn all_ones(nx: usize, ny: usize, frames: usize) -> Result<Self> {
        Self::new(nx, ny, 1, 0, vec![vec![1; nx * ny]; frames.max(1)])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn superpixel(&self) -> usize {
        self.superpixel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.nx * self.ny;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn density(&self, t: usize) -> f64 {
        let frame = self.frame(t);
        frame.iter().map(|&v| v as usize).sum::<usize>() as f64 / frame.len() as f64
    }

    /// Per-pixel count of open frames.
    pub fn coverage(&self) -> Vec<u32> {
        let n = self.nx * self.ny;
        let mut sum = vec![0u32; n];
        for t in 0..self.frames {
            sum.iter_mut().zip(self.frame(t)).for_each(|(s, &m)| *s += m as u32);
        }
        sum
    }
}

/// Splits the superpixel grid into `frames` disjoint random classes of
/// near-equal size; frame `t` is the indicator of class `t`.
pub fn generate_partition_masks(nx: usize, ny: usize, frames: usize, superpixel: usize, seed: u64) -> Result<MaskStack> {
    let (sx, sy) = superpixel_grid(nx, ny, frames, superpixel)?;
    if frames > sx * sy {
        return Err(invalid(format!(
            "{frames} frames exceed the {} available superpixels",
            sx * sy
        )));
    }
    let mut order: Vec<usize> = (0..sx * sy).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut class = vec![0usize; sx * sy];
    for (rank, &cell) in order.iter().enumerate() {
        class[cell] = rank % frames;
    }
    let stack = (0..frames)
        .map(|t| expand(&class, sx, nx, ny, superpixel, |c| c == t))
        .collect();
    MaskStack::new(nx, ny, superpixel, seed, stack)
}

/// Independent Bernoulli masks: each superpixel of each frame is open with
/// probability `density`. Frames may overlap and leave pixels uncovered.
pub fn generate_bernoulli_masks(
    nx: usize,
    ny: usize,
    frames: usize,
    superpixel: usize,
    density: f64,
    seed: u64,
) -> Result<MaskStack> {
    let (sx, sy) = superpixel_grid(nx, ny, frames, superpixel)?;
    if !(0.0..=1.0).contains(&density) {
        return Err(invalid(format!("density must lie in [0, 1], got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = (0..frames)
        .map(|_| {
            let open: Vec<usize> = (0..sx * sy).map(|_| usize::from(rng.random_bool(density))).collect();
            expand(&open, sx, nx, ny, superpixel, |c| c == 1)
        })
        .collect();
    MaskStack::new(nx, ny, superpixel, seed, stack)
}

fn superpixel_grid(nx: usize, ny: usize, frames: usize, superpixel: usize) -> Result<(usize, usize)> {
    if frames == 0 {
        return Err(invalid("frame count must be at least 1"));
    }
    if superpixel == 0 || nx == 0 || ny == 0 || nx % superpixel != 0 || ny % superpixel != 0 {
        return Err(invalid(format!(
            "grid {nx}x{ny} is not divisible by superpixel size {superpixel}"
        )));
    }
    Ok((nx / superpixel, ny / superpixel))
}

fn expand(cells: &[usize], sx: usize, nx: usize, ny: usize, sp: usize, open: impl Fn(usize) -> bool) -> Vec<u8> {
    let mut frame = vec![0u8; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            frame[y * nx + x] = u8::from(open(cells[(y / sp) * sx + x / sp]));
        }
    }
    frame
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn pass() -> Self {
        Self { passed: true, detail: String::new() }
    }

    fn fail(detail: String) -> Self {
        Self { passed: false, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub frames: usize,
    pub densities: Vec<f64>,
    pub binary: Check,
    pub disjoint: Check,
    pub complete: Check,
    pub block_constant: Check,
    /// Fraction of pixels not open in any frame.
    pub uncovered_fraction: f64,
    /// Fraction of pixels open in more than one frame.
    pub overlap_fraction: f64,
}

impl MaskReport {
    pub fn all_passed(&self) -> bool {
        self.binary.passed && self.disjoint.passed && self.complete.passed && self.block_constant.passed
    }
}

pub fn validate_masks(stack: &MaskStack) -> MaskReport {
    let (nx, ny, sp) = (stack.nx, stack.ny, stack.superpixel);
    let densities = (0..stack.frames).map(|t| stack.density(t)).collect();

    // MaskStack::new already rejects values above 1.
    let binary = Check::pass();

    let mut disjoint = Check::pass();
    let mut owner: Vec<Option<usize>> = vec![None; nx * ny];
    'outer: for t in 0..stack.frames {
        for (i, &m) in stack.frame(t).iter().enumerate() {
            if m == 0 {
                continue;
            }
            if let Some(first) = owner[i] {
                disjoint = Check::fail(format!(
                    "frames {first} and {t} overlap at pixel (x={}, y={})",
                    i % nx,
                    i / nx
                ));
                break 'outer;
            }
            owner[i] = Some(t);
        }
    }

    let coverage = stack.coverage();
    let uncovered = coverage.iter().filter(|&&c| c == 0).count();
    let overlapped = coverage.iter().filter(|&&c| c > 1).count();
    let complete = match coverage.iter().position(|&c| c != 1) {
        None => Check::pass(),
        Some(i) => Check::fail(format!(
            "pixel (x={}, y={}) is open in {} frames; {uncovered} pixels uncovered, {overlapped} over-covered",
            i % nx,
            i / nx,
            coverage[i]
        )),
    };

    let mut block_constant = Check::pass();
    'frames: for t in 0..stack.frames {
        let frame = stack.frame(t);
        for y in 0..ny {
            for x in 0..nx {
                let anchor = frame[(y - y % sp) * nx + (x - x % sp)];
                if frame[y * nx + x] != anchor {
                    block_constant = Check::fail(format!(
                        "frame {t} varies inside the {sp}x{sp} block containing (x={x}, y={y})"
                    ));
                    break 'frames;
                }
            }
        }
    }

    let total = (nx * ny) as f64;
    MaskReport {
        frames: stack.frames,
        densities,
        binary,
        disjoint,
        complete,
        block_constant,
        uncovered_fraction: uncovered as f64 / total,
        overlap_fraction: overlapped as f64 / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_is_all_ones() {
        let s = generate_partition_masks(16, 8, 1, 4, 3).unwrap();
        assert!(s.frame(0).iter().all(|&v| v == 1));
    }

    #[test]
    fn ten_percent_frames_on_sensor_grid() {
        let s = generate_partition_masks(960, 600, 10, 4, 42).unwrap();
        let cell = 16.0 / (960.0 * 600.0);
        for t in 0..10 {
            assert!((s.density(t) - 0.1).abs() <= cell + 1e-15, "frame {t}: {}", s.density(t));
        }
        assert!(validate_masks(&s).all_passed());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate_partition_masks(32, 32, 4, 2, 7).unwrap();
        let b = generate_partition_masks(32, 32, 4, 2, 7).unwrap();
        let c = generate_partition_masks(32, 32, 4, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(generate_partition_masks(30, 32, 4, 4, 0).is_err());
        assert!(generate_partition_masks(8, 8, 5, 4, 0).is_err());
        assert!(generate_partition_masks(8, 8, 0, 4, 0).is_err());
        assert!(MaskStack::new(2, 2, 1, 0, vec![vec![0, 1, 2, 1]]).is_err());
    }

    #[test]
    fn injected_overlap_is_named() {
        let s = generate_partition_masks(8, 8, 2, 1, 1).unwrap();
        let mut frames: Vec<Vec<u8>> = (0..2).map(|t| s.frame(t).to_vec()).collect();
        let pixel = frames[0].iter().position(|&v| v == 0).unwrap();
        frames[0][pixel] = 1;
        let broken = MaskStack::new(8, 8, 1, 1, frames).unwrap();
        let report = validate_masks(&broken);
        assert!(!report.disjoint.passed);
        let expected = format!("frames 0 and 1 overlap at pixel (x={}, y={})", pixel % 8, pixel / 8);
        assert_eq!(report.disjoint.detail, expected);
        assert!(report.binary.passed && report.block_constant.passed);
    }

    #[test]
    fn independent_masks_leave_coverage_gap() {
        let t = 5;
        let s = generate_bernoulli_masks(200, 200, t, 1, 1.0 / t as f64, 9).unwrap();
        let report = validate_masks(&s);
        assert!(!report.complete.passed);
        let expected = (1.0 - 1.0 / t as f64).powi(t as i32);
        assert!((report.uncovered_fraction - expected).abs() < 0.01, "{}", report.uncovered_fraction);
    }

    #[test]
    fn block_constancy_violation_detected() {
        let mut frame = vec![1u8; 16];
        frame[5] = 0;
        let s = MaskStack::new(4, 4, 2, 0, vec![frame]).unwrap();
        assert!(!validate_masks(&s).block_constant.passed);
    }

    #[test]
    fn real_masks_threshold_at_half() {
        let s = MaskStack::from_real_frames(2, 1, 1, &[vec![0.49, 0.5]]).unwrap();
        assert_eq!(s.frame(0), &[0, 1]);
    }
}

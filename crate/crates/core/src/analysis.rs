//! Focus metrics, particle detection, tracking and velocity estimation on
//! reconstructed volumes.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Geometry, Object4D};

pub const DEFAULT_WINDOW: usize = 21;
pub const DEFAULT_REJECT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_PROFILE_SIMILARITY: f64 = 0.9;
/// Per-frame association gate, meters.
pub const DEFAULT_MAX_JUMP: f64 = 3e-3;

fn check_window(window: usize, nx: usize, ny: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 || window > nx.min(ny) {
        return Err(invalid(format!(
            "window must be odd, at least 3 and at most {}, got {window}",
            nx.min(ny)
        )));
    }
    Ok(())
}

/// Population variance of `|slice|` inside the window centered on `(x, y)`,
/// clipped at the borders.
fn window_variance(slice: &[f64], nx: usize, ny: usize, half: usize, x: usize, y: usize) -> f64 {
    let (x0, x1) = (x.saturating_sub(half), (x + half).min(nx - 1));
    let (y0, y1) = (y.saturating_sub(half), (y + half).min(ny - 1));
    let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let rows = || (y0..=y1).flat_map(move |yy| slice[yy * nx + x0..=yy * nx + x1].iter().map(|v| v.abs()));
    let mean = rows().sum::<f64>() / count;
    rows().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count
}

/// Local variance of `|slice|` in a `window × window` neighborhood of every pixel.
pub fn block_variance_map(slice: &[f64], nx: usize, ny: usize, window: usize) -> Result<Vec<f64>> {
    if slice.len() != nx * ny {
        return Err(crate::error::mismatch(format!("slice has {} samples, expected {nx}x{ny}", slice.len())));
    }
    check_window(window, nx, ny)?;
    let half = window / 2;
    let mut out = vec![0.0; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = window_variance(slice, nx, ny, half, x, y);
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusProfile {
    pub depths: Vec<f64>,
    /// Block variance per depth divided by its maximum.
    pub variance: Vec<f64>,
    pub window: usize,
    /// False when the variance is zero at every depth.
    pub focused: bool,
}

impl FocusProfile {
    pub fn peak_index(&self) -> Option<usize> {
        if !self.focused {
            return None;
        }
        self.variance
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    pub fn peak_depth(&self) -> Option<f64> {
        self.peak_index().map(|i| self.depths[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth_m,variance\n");
        for (d, v) in self.depths.iter().zip(&self.variance) {
            let _ = writeln!(out, "{d:e},{v:e}");
        }
        out
    }
}

fn normalize(values: Vec<f64>) -> (Vec<f64>, bool) {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        (values.into_iter().map(|v| v / max).collect(), true)
    } else {
        (vec![0.0; values.len()], false)
    }
}

/// Block variance at `pixel = (x, y)` through every depth slice of `frame`.
pub fn focus_profile(vol: &Object4D, frame: usize, pixel: (usize, usize), window: usize, geom: &Geometry) -> Result<FocusProfile> {
    let s = vol.shape();
    if frame >= s.nt {
        return Err(invalid(format!("frame {frame} out of range 0..{}", s.nt)));
    }
    if pixel.0 >= s.nx || pixel.1 >= s.ny {
        return Err(invalid(format!("pixel {pixel:?} outside the {}x{} grid", s.nx, s.ny)));
    }
    if geom.depths.len() != s.nd {
        return Err(crate::error::mismatch(format!("{} depths for {} planes", geom.depths.len(), s.nd)));
    }
    check_window(window, s.nx, s.ny)?;
    let raw = (0..s.nd)
        .map(|n| window_variance(&vol.plane_abs(frame, n), s.nx, s.ny, window / 2, pixel.0, pixel.1))
        .collect();
    let (variance, focused) = normalize(raw);
    Ok(FocusProfile { depths: geom.depths.clone(), variance, window, focused })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub window: usize,
    /// A pixel is rejected when any off-peak depth reaches this fraction of its peak variance.
    pub reject_threshold: f64,
    /// Minimum cosine similarity of the normalized profiles of two adjacent pixels to merge them.
    pub profile_similarity: f64,
    /// Candidates must reach this fraction of the frame's strongest variance.
    pub min_peak_fraction: f64,
    /// Depth planes on either side of the peak that are not counted as off-peak.
    pub peak_halfwidth: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            reject_threshold: DEFAULT_REJECT_THRESHOLD,
            profile_similarity: DEFAULT_PROFILE_SIMILARITY,
            min_peak_fraction: 0.1,
            peak_halfwidth: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    /// Amplitude-weighted centroid in pixels (x, y).
    pub centroid_px: [f64; 2],
    /// Position in meters: x, y from the pitch, z the focused depth.
    pub position: [f64; 3],
    pub depth_index: usize,
    /// Largest block variance inside the particle.
    pub peak: f64,
    pub pixels: usize,
}

/// Finds in-focus particles in every frame of `vol`.
pub fn detect_particles(vol: &Object4D, cfg: &DetectionConfig, geom: &Geometry) -> Result<Vec<Vec<Detection>>> {
    let s = vol.shape();
    if !(cfg.reject_threshold > 0.0 && cfg.reject_threshold < 1.0) {
        return Err(invalid(format!("reject threshold must lie in (0, 1), got {}", cfg.reject_threshold)));
    }
    if geom.depths.len() != s.nd {
        return Err(crate::error::mismatch(format!("{} depths for {} planes", geom.depths.len(), s.nd)));
    }
    check_window(cfg.window, s.nx, s.ny)?;
    (0..s.nt).map(|t| detect_frame(vol, t, cfg, geom)).collect()
}

fn detect_frame(vol: &Object4D, t: usize, cfg: &DetectionConfig, geom: &Geometry) -> Result<Vec<Detection>> {
    let s = vol.shape();
    let (nx, ny, nd) = (s.nx, s.ny, s.nd);
    let slices: Vec<Vec<f64>> = (0..nd).map(|n| vol.plane_abs(t, n)).collect();
    let maps = slices
        .par_iter()
        .map(|sl| block_variance_map(sl, nx, ny, cfg.window))
        .collect::<Result<Vec<_>>>()?;
    let strongest = maps.iter().flatten().cloned().fold(0.0, f64::max);
    if strongest == 0.0 {
        return Ok(Vec::new());
    }

    // Per-pixel peak depth and normalized profile for accepted candidates.
    let mut peak_of = vec![usize::MAX; nx * ny];
    let mut profiles: Vec<Vec<f64>> = vec![Vec::new(); nx * ny];
    for p in 0..nx * ny {
        let profile: Vec<f64> = maps.iter().map(|m| m[p]).collect();
        let (k, &top) = profile
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |b, (i, v)| if *v > *b.1 { (i, v) } else { b });
        if top < cfg.min_peak_fraction * strongest || top <= 0.0 {
            continue;
        }
        let dominant = profile
            .iter()
            .enumerate()
            .all(|(i, v)| i.abs_diff(k) <= cfg.peak_halfwidth || v / top < cfg.reject_threshold);
        if dominant {
            peak_of[p] = k;
            profiles[p] = profile.iter().map(|v| v / top).collect();
        }
    }

    let mut labels = UnionFind::new(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let p = y * nx + x;
            if peak_of[p] == usize::MAX {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (0, 1), (1, 1), (-1, 1)] {
                let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                if qx < 0 || qx >= nx as i64 || qy >= ny as i64 {
                    continue;
                }
                let q = qy as usize * nx + qx as usize;
                if peak_of[q] != usize::MAX && cosine(&profiles[p], &profiles[q]) >= cfg.profile_similarity {
                    labels.union(p, q);
                }
            }
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for p in (0..nx * ny).filter(|&p| peak_of[p] != usize::MAX) {
        groups.entry(labels.find(p)).or_default().push(p);
    }
    let mut out = Vec::new();
    for pixels in groups.values() {
        let (best, peak) = pixels
            .iter()
            .map(|&p| (p, maps[peak_of[p]][p]))
            .fold((pixels[0], f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let n = peak_of[best];
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for &p in pixels {
            let w = slices[n][p];
            sw += w;
            sx += w * (p % nx) as f64;
            sy += w * (p / nx) as f64;
        }
        let centroid = if sw > 0.0 { [sx / sw, sy / sw] } else { [(best % nx) as f64, (best / nx) as f64] };
        out.push(Detection {
            frame: t,
            centroid_px: centroid,
            position: [centroid[0] * geom.pitch, centroid[1] * geom.pitch, geom.depths[n]],
            depth_index: n,
            peak,
            pixels: pixels.len(),
        });
    }
    Ok(out)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    /// One entry per frame; `None` where the particle was not seen.
    pub positions: Vec<Option<[f64; 3]>>,
    /// Filled by [`velocities`] for frames whose two neighbors are present.
    pub velocities: Vec<Option<[f64; 3]>>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.positions.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.positions.iter().position(|p| p.is_some())
    }

    pub fn speeds(&self) -> Vec<(usize, f64)> {
        self.velocities
            .iter()
            .enumerate()
            .filter_map(|(t, v)| v.map(|v| (t, norm3(v))))
            .collect()
    }

    pub fn mean_speed(&self) -> Option<f64> {
        let s = self.speeds();
        (!s.is_empty()).then(|| s.iter().map(|(_, v)| v).sum::<f64>() / s.len() as f64)
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Greedy nearest-neighbor linking of consecutive frames. A track that
/// misses a frame ends there; its later detections start a new track.
pub fn track_particles(detections: &[Vec<Detection>], max_jump: f64) -> Result<Vec<Track>> {
    if !(max_jump > 0.0) {
        return Err(invalid("max_jump must be positive"));
    }
    let frames = detections.len();
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for (t, dets) in detections.iter().enumerate() {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, &k) in active.iter().enumerate() {
            let last = tracks[k].positions[t - 1].expect("active tracks end at the previous frame");
            for (di, d) in dets.iter().enumerate() {
                let dist = distance(last, d.position);
                if dist <= max_jump {
                    pairs.push((dist, ai, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut track_used, mut det_used) = (vec![false; active.len()], vec![false; dets.len()]);
        let mut next_active = Vec::new();
        for (_, ai, di) in pairs {
            if track_used[ai] || det_used[di] {
                continue;
            }
            track_used[ai] = true;
            det_used[di] = true;
            tracks[active[ai]].positions[t] = Some(dets[di].position);
            next_active.push(active[ai]);
        }
        for (_, d) in dets.iter().enumerate().filter(|(di, _)| !det_used[*di]) {
            let mut positions = vec![None; frames];
            positions[t] = Some(d.position);
            tracks.push(Track { id: tracks.len(), positions, velocities: vec![None; frames] });
            next_active.push(tracks.len() - 1);
        }
        next_active.sort_unstable();
        active = next_active;
    }
    Ok(tracks)
}

/// Central-difference velocity `(p[t+1] − p[t−1]) / 2τ` at every frame whose
/// two neighbors are present.
pub fn velocities(track: &Track, tau: f64) -> Result<Track> {
    if !(tau > 0.0) {
        return Err(invalid("tau must be positive"));
    }
    let n = track.positions.len();
    let mut out = track.clone();
    out.velocities = vec![None; n];
    for t in 1..n.saturating_sub(1) {
        if let (Some(a), Some(b), Some(_)) = (track.positions[t - 1], track.positions[t + 1], track.positions[t]) {
            out.velocities[t] = Some([(b[0] - a[0]) / (2.0 * tau), (b[1] - a[1]) / (2.0 * tau), (b[2] - a[2]) / (2.0 * tau)]);
        }
    }
    Ok(out)
}

pub fn detections_csv(detections: &[Vec<Detection>]) -> String {
    let mut out = String::from("frame,x_m,y_m,z_m,depth_index,peak,pixels\n");
    for d in detections.iter().flatten() {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{},{:e},{}",
            d.frame, d.position[0], d.position[1], d.position[2], d.depth_index, d.peak, d.pixels
        );
    }
    out
}

pub fn tracks_csv(tracks: &[Track]) -> String {
    let mut out = String::from("frame,id,x_m,y_m,z_m,vx,vy,vz,speed\n");
    for tr in tracks {
        for (t, p) in tr.positions.iter().enumerate() {
            let Some(p) = p else { continue };
            let _ = write!(out, "{t},{},{:e},{:e},{:e}", tr.id, p[0], p[1], p[2]);
            match tr.velocities.get(t).copied().flatten() {
                Some(v) => {
                    let _ = writeln!(out, ",{:e},{:e},{:e},{:e}", v[0], v[1], v[2], norm3(v));
                }
                None => out.push_str(",,,,\n"),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape4;
    use num_complex::Complex64;

    #[test]
    fn impulse_variance() {
        let mut slice = vec![0.0; 25];
        slice[12] = 1.0;
        let map = block_variance_map(&slice, 5, 5, 3).unwrap();
        assert!((map[12] - 8.0 / 81.0).abs() < 1e-15);
        // Corner window is clipped to 2x2 and holds no impulse.
        assert_eq!(map[0], 0.0);
        assert!((map[6] - 8.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn clipped_border_window() {
        let mut slice = vec![0.0; 25];
        slice[0] = 1.0;
        let map = block_variance_map(&slice, 5, 5, 3).unwrap();
        // Four samples at the corner: mean 1/4, variance 3/16.
        assert!((map[0] - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_bad_windows() {
        let slice = vec![2.5; 36];
        assert!(block_variance_map(&slice, 6, 6, 5).unwrap().iter().all(|v| *v == 0.0));
        for w in [1, 4, 7] {
            assert!(block_variance_map(&slice, 6, 6, w).is_err());
        }
    }

    fn single_point_volume(depth: usize) -> (Object4D, Geometry) {
        let geom = Geometry { nx: 16, ny: 16, depths: vec![0.05, 0.06, 0.07, 0.08], ..Geometry::default() };
        let mut vol = Object4D::zeros(geom.shape());
        for n in 0..4 {
            // Defocused planes hold a faint uniform haze.
            vol.plane_mut(0, n).iter_mut().for_each(|v| *v = Complex64::new(0.05, 0.0));
        }
        vol.set(0, depth, 8, 8, Complex64::new(1.0, 0.0));
        (vol, geom)
    }

    #[test]
    fn profile_peaks_at_point_depth() {
        let (vol, geom) = single_point_volume(2);
        let profile = focus_profile(&vol, 0, (8, 8), 5, &geom).unwrap();
        assert_eq!(profile.peak_index(), Some(2));
        assert_eq!(profile.peak_depth(), Some(0.07));
        assert!(profile.variance.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(profile.to_csv().lines().count(), 5);

        let flat = Object4D::new(vol.shape(), vec![Complex64::new(1.0, 0.0); vol.shape().len()]).unwrap();
        let profile = focus_profile(&flat, 0, (3, 3), 5, &geom).unwrap();
        assert!(!profile.focused);
        assert_eq!(profile.peak_index(), None);
        assert!(focus_profile(&vol, 1, (0, 0), 5, &geom).is_err());
        assert!(focus_profile(&vol, 0, (16, 0), 5, &geom).is_err());
    }

    #[test]
    fn detects_one_point_and_rejects_flat_profile() {
        let (vol, geom) = single_point_volume(1);
        let cfg = DetectionConfig { window: 5, ..DetectionConfig::default() };
        let dets = detect_particles(&vol, &cfg, &geom).unwrap();
        assert_eq!(dets[0].len(), 1);
        let d = &dets[0][0];
        assert_eq!(d.depth_index, 1);
        assert!((d.centroid_px[0] - 8.0).abs() < 1.0 && (d.centroid_px[1] - 8.0).abs() < 1.0);

        // The same point at every depth has no dominant plane.
        let mut smeared = vol.clone();
        for n in 0..4 {
            smeared.set(0, n, 8, 8, Complex64::new(1.0, 0.0));
        }
        assert!(detect_particles(&smeared, &cfg, &geom).unwrap()[0].is_empty());

        let empty = Object4D::zeros(Shape4 { nt: 2, nd: 4, ny: 16, nx: 16 });
        assert!(detect_particles(&empty, &cfg, &geom).unwrap().iter().all(|f| f.is_empty()));
    }

    fn det(frame: usize, x: f64, y: f64, z: f64) -> Detection {
        Detection { frame, centroid_px: [0.0; 2], position: [x, y, z], depth_index: 0, peak: 1.0, pixels: 1 }
    }

    #[test]
    fn linear_motion_forms_one_track() {
        let dets: Vec<Vec<Detection>> = (0..6).map(|t| vec![det(t, 1e-3 * t as f64, 0.0, 0.07)]).collect();
        let tracks = track_particles(&dets, 2e-3).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 6);
    }

    #[test]
    fn crossing_particles_keep_identity() {
        // Two particles swap x order between frames 2 and 3 but stay far apart in y.
        let dets: Vec<Vec<Detection>> = (0..6)
            .map(|t| {
                let x = 1e-3 * t as f64;
                vec![det(t, x, 0.0, 0.07), det(t, 5e-3 - x, 4e-3, 0.07)]
            })
            .collect();
        let tracks = track_particles(&dets, 1.5e-3).unwrap();
        assert_eq!(tracks.len(), 2);
        for tr in &tracks {
            let ys: Vec<f64> = tr.positions.iter().map(|p| p.unwrap()[1]).collect();
            assert!(ys.iter().all(|y| *y == ys[0]));
        }
    }

    #[test]
    fn gap_splits_track() {
        let dets: Vec<Vec<Detection>> = (0..5)
            .map(|t| if t == 2 { vec![] } else { vec![det(t, 1e-4 * t as f64, 0.0, 0.07)] })
            .collect();
        let tracks = track_particles(&dets, 1e-3).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[1].first_frame(), Some(3));
        assert!(track_particles(&dets, 0.0).is_err());
    }

    #[test]
    fn central_difference_velocity() {
        let track = Track {
            id: 0,
            positions: vec![Some([0.0, 0.0, 0.0]), Some([1e-3, 0.0, 0.0]), Some([4e-3, 0.0, 0.0])],
            velocities: vec![None; 3],
        };
        let v = velocities(&track, 500e-6).unwrap();
        assert_eq!(v.velocities[0], None);
        assert_eq!(v.velocities[2], None);
        assert!((v.velocities[1].unwrap()[0] - 4.0).abs() < 1e-12);
        assert!(velocities(&track, 0.0).is_err());
    }

    #[test]
    fn csv_layouts() {
        let track = velocities(
            &Track { id: 3, positions: vec![Some([0.0; 3]), Some([1.0, 0.0, 0.0]), Some([2.0, 0.0, 0.0])], velocities: vec![] },
            0.5,
        )
        .unwrap();
        let csv = tracks_csv(&[track]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,id,x_m,y_m,z_m,vx,vy,vz,speed");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",,,,"));
        assert!(lines[2].ends_with(",2e0,0e0,0e0,2e0"));
        assert_eq!(detections_csv(&[vec![]]), "frame,x_m,y_m,z_m,depth_index,peak,pixels\n");
    }
}

//! Desk-scale versions of the two-plane PSNR sweep, the particle-tracking
//! run and the depth-sectioning comparison.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{detect_particles, focus_profile, track_particles, velocities, DetectionConfig, FocusProfile, Track};
use crate::error::{invalid, Result};
use crate::masks::{generate_partition_masks, MaskStack};
use crate::model::{subtract_background, Geometry, Object4D, SensingOperator, DEFAULT_WAVELENGTH};
use crate::scene::{build_scene, psnr, simulate_capture, NoiseSpec, ObjectShape, SceneKind, SceneObject, SceneSpec};
use crate::solver::{backpropagate, backpropagate_masked, default_lambda, twist_with_operator, SolveTrace, SolverConfig, StopReason};

/// Regularization settings expressed relative to the data: the spatial
/// weight is `lambda_scale · default_lambda` and the temporal weight is
/// `temporal_ratio` times the spatial one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Regularization {
    pub lambda_scale: f64,
    pub temporal_ratio: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { lambda_scale: 1.0, temporal_ratio: 0.0 }
    }
}

/// TwIST with λ chosen relative to the data as described by `reg`.
pub fn solve_regularized(
    op: &SensingOperator,
    g: &crate::model::Hologram,
    base: &SolverConfig,
    reg: &Regularization,
) -> Result<(Object4D, SolveTrace)> {
    let lambda = reg.lambda_scale * default_lambda(op, g)?;
    let cfg = SolverConfig { lambda_spatial: lambda, lambda_temporal: reg.temporal_ratio * lambda, ..base.clone() };
    twist_with_operator(op, g, &cfg, None)
}

/// Whether every recorded objective stays within the monotonicity slack of its predecessor.
pub fn objective_monotone(trace: &SolveTrace) -> bool {
    let Some(first) = trace.records.first() else { return true };
    trace.records.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-12 * first.objective)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoPlaneConfig {
    pub nx: usize,
    pub pitch: f64,
    pub wavelength: f64,
    /// Distance of the first object from the sensor.
    pub first_plane: f64,
    /// Empty planes inserted between the two objects.
    pub intermediate_planes: usize,
    pub frame_interval: f64,
    pub superpixel: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    pub regularization: Regularization,
}

impl Default for TwoPlaneConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            // Close to the critical pitch sqrt(λz/N) for a 64 grid at 70 mm.
            pitch: 24e-6,
            wavelength: DEFAULT_WAVELENGTH,
            first_plane: 0.070,
            intermediate_planes: 4,
            frame_interval: crate::model::DEFAULT_FRAME_INTERVAL,
            superpixel: 1,
            amplitude: 0.25,
            seed: 7,
            solver: SolverConfig { max_iters: 300, tol: 1e-8, real_valued: true, ..SolverConfig::default() },
            regularization: Regularization { lambda_scale: 0.3, temporal_ratio: 1.0 },
        }
    }
}

/// Frame count for a subsampling fraction: each frame exposes `1/T` of the pixels.
pub fn frames_for_fraction(fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    Ok((1.0 / fraction).round() as usize)
}

/// Two static objects, one on the first plane and one `dz` behind it, with
/// empty planes in between. Shapes are laid out relative to the grid size.
pub fn two_plane_scene(cfg: &TwoPlaneConfig, dz: f64, frames: usize) -> Result<SceneSpec> {
    if !(dz > 0.0) {
        return Err(invalid("dz must be positive"));
    }
    let n = cfg.intermediate_planes + 2;
    let planes: Vec<f64> = (0..n).map(|i| cfg.first_plane + dz * i as f64 / (n - 1) as f64).collect();
    let extent = cfg.nx as f64 * cfg.pitch;
    let at = |fx: f64, fy: f64| [fx * extent, fy * extent];
    let a = cfg.amplitude;
    let object = |plane, amplitude, shape, position| SceneObject { plane, amplitude, shape, position, velocity: [0.0; 2] };
    let last = n - 1;
    let objects = vec![
        object(0, a, ObjectShape::Fiber { length: 0.55 * extent, width: 0.05 * extent, curvature: 2.2 / extent, angle: 0.5 }, at(0.4, 0.38)),
        object(0, 0.8 * a, ObjectShape::Disk { radius: 0.07 * extent }, at(0.68, 0.3)),
        object(last, a, ObjectShape::Bar { length: 0.45 * extent, width: 0.06 * extent, angle: -0.9 }, at(0.58, 0.6)),
        object(last, 0.8 * a, ObjectShape::Ring { radius: 0.1 * extent, width: 0.035 * extent }, at(0.3, 0.7)),
    ];
    let spec = SceneSpec {
        kind: SceneKind::TwoPlane,
        nx: cfg.nx,
        ny: cfg.nx,
        pitch: cfg.pitch,
        planes,
        frames,
        frame_interval: cfg.frame_interval,
        objects,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fraction: f64,
    pub frames: usize,
    pub dz: f64,
    pub psnr_cs: f64,
    pub psnr_bp: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
}

pub struct CellOutput {
    pub result: CellResult,
    pub truth: Object4D,
    pub cs: Object4D,
    pub bp: Object4D,
    pub trace: SolveTrace,
}

/// Simulates one (fraction, dz) cell and reconstructs it by CS and BP.
pub fn run_two_plane_cell(cfg: &TwoPlaneConfig, fraction: f64, dz: f64) -> Result<CellOutput> {
    let frames = frames_for_fraction(fraction)?;
    let spec = two_plane_scene(cfg, dz, frames)?;
    let truth = build_scene(&spec)?;
    let geom = Geometry { band_limited: true, ..spec.geometry(cfg.wavelength) };
    let masks = generate_partition_masks(cfg.nx, cfg.nx, frames, cfg.superpixel, cfg.seed)?;
    let (raw, background) = simulate_capture(&truth, &masks, &geom, &NoiseSpec::default())?;
    let g = subtract_background(&raw, &background)?;
    let op = SensingOperator::new(&geom, &masks)?;
    let (cs, trace) = solve_regularized(&op, &g, &cfg.solver, &cfg.regularization)?;
    let bp = if frames == 1 { backpropagate(&g, &geom)? } else { backpropagate_masked(&g, &masks, &geom)? };
    let result = CellResult {
        fraction,
        frames,
        dz,
        psnr_cs: psnr(&cs, &truth)?,
        psnr_bp: psnr(&bp, &truth)?,
        lambda: trace.lambda,
        iterations: trace.iterations(),
        converged: trace.stop == StopReason::Converged,
        monotone: objective_monotone(&trace),
    };
    Ok(CellOutput { result, truth, cs, bp, trace })
}

/// One row per sweep cell in input order. Failed cells keep their
/// coordinates and carry the error text.
pub fn benchmark_csv(cells: &[(f64, f64, std::result::Result<CellResult, String>)]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("fraction,frames,dz_m,psnr_cs_db,psnr_bp_db,lambda,iterations,converged,error\n");
    for (fraction, dz, cell) in cells {
        match cell {
            Ok(c) => {
                let _ = writeln!(
                    out,
                    "{},{},{:e},{:.4},{:.4},{:e},{},{},",
                    c.fraction, c.frames, c.dz, c.psnr_cs, c.psnr_bp, c.lambda, c.iterations, c.converged
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{fraction},,{dz:e},,,,,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleConfig {
    pub nx: usize,
    pub pitch: f64,
    pub wavelength: f64,
    pub depths: Vec<f64>,
    pub frames: usize,
    pub frame_interval: f64,
    pub particles: usize,
    /// Particle radius, meters.
    pub radius: f64,
    pub amplitude: f64,
    pub speed_range: [f64; 2],
    pub superpixel: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub regularization: Regularization,
    pub detection: DetectionConfig,
    pub max_jump: f64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            nx: 128,
            pitch: 10e-6,
            wavelength: DEFAULT_WAVELENGTH,
            depths: vec![0.060, 0.080],
            frames: 10,
            // 10 sub-frames inside a 200 µs exposure.
            frame_interval: 20e-6,
            particles: 7,
            radius: 20e-6,
            amplitude: 0.5,
            speed_range: [0.7, 5.5],
            superpixel: 1,
            seed: 3,
            solver: SolverConfig { max_iters: 100, ..SolverConfig::default() },
            regularization: Regularization::default(),
            detection: DetectionConfig { window: 9, ..DetectionConfig::default() },
            // The fastest particle moves 11 pixels per sub-frame.
            max_jump: 0.15e-3,
        }
    }
}

/// Ground truth of one particle: constant velocity in the plane of its depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleTruth {
    pub depth_index: usize,
    pub speed: f64,
    pub velocity: [f64; 2],
    /// Rasterized center per frame, pixels.
    pub pixels: Vec<(i64, i64)>,
}

/// Draws speeds evenly spread over the configured range (in shuffled order),
/// directions and start points that keep every particle inside the grid
/// and apart from the others on its plane.
pub fn particle_scene(cfg: &ParticleConfig) -> Result<(SceneSpec, Vec<ParticleTruth>)> {
    if cfg.particles == 0 || cfg.frames < 3 || cfg.depths.is_empty() {
        return Err(invalid("particle scene needs particles, at least 3 frames and a depth"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = cfg.nx as f64 * cfg.pitch;
    let margin = cfg.radius + 3.0 * cfg.pitch;
    let span = (cfg.frames - 1) as f64 * cfg.frame_interval;
    let [lo, hi] = cfg.speed_range;
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut truth = Vec::new();
    for k in 0..cfg.particles {
        let frac = if cfg.particles == 1 { 0.5 } else { k as f64 / (cfg.particles - 1) as f64 };
        let speed = lo + (hi - lo) * frac;
        let depth_index = k % cfg.depths.len();
        let travel = speed * span;
        if travel > (extent - 2.0 * margin) * std::f64::consts::SQRT_2 {
            return Err(invalid(format!("a {speed} m/s particle leaves the {extent:.2e} m field of view")));
        }
        let mut placed = None;
        for _ in 0..10_000 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let v = [speed * theta.cos(), speed * theta.sin()];
            let (dx, dy) = (v[0] * span, v[1] * span);
            let (xmin, xmax) = (margin - dx.min(0.0), extent - margin - dx.max(0.0));
            let (ymin, ymax) = (margin - dy.min(0.0), extent - margin - dy.max(0.0));
            if xmin >= xmax || ymin >= ymax {
                continue;
            }
            let p0 = [rng.random_range(xmin..xmax), rng.random_range(ymin..ymax)];
            let candidate = SceneObject {
                plane: depth_index,
                amplitude: cfg.amplitude,
                shape: ObjectShape::Disk { radius: cfg.radius },
                position: p0,
                velocity: v,
            };
            let clear = objects.iter().filter(|o| o.plane == depth_index).all(|o| {
                (0..cfg.frames).all(|t| {
                    let (a, b) = (o.position_at(t, cfg.frame_interval), candidate.position_at(t, cfg.frame_interval));
                    (a[0] - b[0]).hypot(a[1] - b[1]) > 2.0 * cfg.max_jump
                })
            });
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        let obj = placed.ok_or_else(|| invalid("could not place particles without collisions"))?;
        truth.push(ParticleTruth {
            depth_index,
            speed,
            velocity: obj.velocity,
            pixels: (0..cfg.frames).map(|t| obj.pixel_at(t, cfg.frame_interval, cfg.pitch)).collect(),
        });
        objects.push(obj);
    }
    let spec = SceneSpec {
        kind: SceneKind::MovingParticles,
        nx: cfg.nx,
        ny: cfg.nx,
        pitch: cfg.pitch,
        planes: cfg.depths.clone(),
        frames: cfg.frames,
        frame_interval: cfg.frame_interval,
        objects,
    };
    spec.validate()?;
    Ok((spec, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleReport {
    pub pairs: usize,
    /// (particle, frame) pairs found within 2 pixels at the right depth.
    pub located: usize,
    pub located_fraction: f64,
    /// Per particle: true speed, recovered mean speed of its best track.
    pub speeds: Vec<(f64, Option<f64>)>,
    pub tracks: usize,
    pub lambda: f64,
    pub iterations: usize,
}

pub struct ParticleOutput {
    pub report: ParticleReport,
    pub truth: Vec<ParticleTruth>,
    pub recon: Object4D,
    pub tracks: Vec<Track>,
    pub trace: SolveTrace,
    pub geometry: Geometry,
}

pub fn run_particle_experiment(cfg: &ParticleConfig) -> Result<ParticleOutput> {
    let (spec, truth) = particle_scene(cfg)?;
    let obj = build_scene(&spec)?;
    let geom = spec.geometry(cfg.wavelength);
    let masks = generate_partition_masks(cfg.nx, cfg.nx, cfg.frames, cfg.superpixel, cfg.seed)?;
    let (raw, background) = simulate_capture(&obj, &masks, &geom, &NoiseSpec::default())?;
    let g = subtract_background(&raw, &background)?;
    let op = SensingOperator::new(&geom, &masks)?;
    let (recon, trace) = solve_regularized(&op, &g, &cfg.solver, &cfg.regularization)?;
    let detections = detect_particles(&recon, &cfg.detection, &geom)?;
    let tracks: Vec<Track> = track_particles(&detections, cfg.max_jump)?
        .iter()
        .map(|t| velocities(t, cfg.frame_interval))
        .collect::<Result<_>>()?;

    let mut located = 0;
    for p in &truth {
        for (t, &(x, y)) in p.pixels.iter().enumerate() {
            let hit = detections[t].iter().any(|d| {
                d.depth_index == p.depth_index
                    && (d.centroid_px[0] - x as f64).hypot(d.centroid_px[1] - y as f64) <= 2.0
            });
            located += usize::from(hit);
        }
    }
    let pairs = truth.len() * cfg.frames;
    let speeds = truth
        .iter()
        .map(|p| {
            // The track that shares the most frames with this particle.
            let best = tracks
                .iter()
                .map(|tr| {
                    let shared = p
                        .pixels
                        .iter()
                        .enumerate()
                        .filter(|(t, &(x, y))| {
                            tr.positions[*t].is_some_and(|q| {
                                (q[0] / cfg.pitch - x as f64).hypot(q[1] / cfg.pitch - y as f64) <= 2.0
                                    && (q[2] - cfg.depths[p.depth_index]).abs() < 1e-12
                            })
                        })
                        .count();
                    (shared, tr)
                })
                .filter(|(shared, _)| *shared >= 3)
                .max_by_key(|(shared, _)| *shared);
            (p.speed, best.and_then(|(_, tr)| tr.mean_speed()))
        })
        .collect();
    let report = ParticleReport {
        pairs,
        located,
        located_fraction: located as f64 / pairs as f64,
        speeds,
        tracks: tracks.len(),
        lambda: trace.lambda,
        iterations: trace.iterations(),
    };
    Ok(ParticleOutput { report, truth, recon, tracks, trace, geometry: geom })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectioningConfig {
    pub nx: usize,
    pub pitch: f64,
    pub wavelength: f64,
    pub fiber_depths: [f64; 2],
    pub depth_range: [f64; 2],
    pub planes: usize,
    /// Open fraction of the single subsampling mask.
    pub subsample_fraction: f64,
    pub window: usize,
    pub amplitude: f64,
    pub superpixel: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub regularization: Regularization,
}

impl Default for SectioningConfig {
    fn default() -> Self {
        Self {
            nx: 128,
            pitch: 1.5e-3 / 128.0,
            wavelength: DEFAULT_WAVELENGTH,
            fiber_depths: [0.071, 0.101],
            depth_range: [0.065, 0.108],
            planes: 120,
            subsample_fraction: 0.1,
            window: 21,
            amplitude: 0.4,
            superpixel: 1,
            seed: 11,
            solver: SolverConfig { max_iters: 60, norm_iters: 20, ..SolverConfig::default() },
            regularization: Regularization::default(),
        }
    }
}

impl SectioningConfig {
    pub fn depths(&self) -> Vec<f64> {
        let [a, b] = self.depth_range;
        (0..self.planes).map(|i| a + (b - a) * i as f64 / (self.planes - 1) as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.depth_range[1] - self.depth_range[0]) / (self.planes - 1) as f64
    }

    /// Index of the plane nearest to `z`.
    pub fn nearest_plane(&self, z: f64) -> usize {
        let d = self.depths();
        (0..d.len()).min_by(|&a, &b| (d[a] - z).abs().total_cmp(&(d[b] - z).abs())).unwrap_or(0)
    }
}

/// Two crossing fibers, each on the plane nearest its configured depth.
pub fn sectioning_scene(cfg: &SectioningConfig) -> Result<SceneSpec> {
    let extent = cfg.nx as f64 * cfg.pitch;
    let width = 2.5 * cfg.pitch;
    let fiber = |plane, angle: f64, curvature: f64, pos: [f64; 2]| SceneObject {
        plane,
        amplitude: cfg.amplitude,
        shape: ObjectShape::Fiber { length: 0.8 * extent, width, curvature, angle },
        position: pos,
        velocity: [0.0; 2],
    };
    let spec = SceneSpec {
        kind: SceneKind::StaticFibers,
        nx: cfg.nx,
        ny: cfg.nx,
        pitch: cfg.pitch,
        planes: cfg.depths(),
        frames: 1,
        frame_interval: crate::model::DEFAULT_FRAME_INTERVAL,
        objects: vec![
            fiber(cfg.nearest_plane(cfg.fiber_depths[0]), 0.35, 0.8 / extent, [0.5 * extent, 0.45 * extent]),
            fiber(cfg.nearest_plane(cfg.fiber_depths[1]), 0.35 + PI / 2.0, -0.6 / extent, [0.5 * extent, 0.55 * extent]),
        ],
    };
    spec.validate()?;
    Ok(spec)
}

/// Pixel on fiber `k` of the sectioning scene away from the crossing point,
/// used to read focus profiles.
pub fn fiber_probe(cfg: &SectioningConfig, k: usize) -> (usize, usize) {
    let spec = sectioning_scene(cfg).expect("default scene is valid");
    let obj = build_scene(&spec).expect("scene rasterizes");
    let other = &spec.objects[1 - k];
    let plane = spec.objects[k].plane;
    let a = obj.plane_abs(0, plane);
    let b = obj.plane_abs(0, other.plane);
    let n = cfg.nx;
    let center = (n as f64 / 2.0, n as f64 / 2.0);
    // Farthest on-fiber pixel from the other fiber within the central region.
    let mut best = (0, 0, f64::NEG_INFINITY);
    for y in n / 4..3 * n / 4 {
        for x in n / 4..3 * n / 4 {
            if a[y * n + x] == 0.0 || b[y * n + x] != 0.0 {
                continue;
            }
            let far = (0..n * n)
                .filter(|&q| b[q] != 0.0)
                .map(|q| ((q % n) as f64 - x as f64).hypot((q / n) as f64 - y as f64))
                .fold(f64::INFINITY, f64::min);
            let score = far.min(cfg.window as f64) - 0.01 * ((x as f64 - center.0).hypot(y as f64 - center.1));
            if score > best.2 {
                best = (x, y, score);
            }
        }
    }
    (best.0, best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectioningMethod {
    pub name: String,
    /// Focus profile at each fiber's probe pixel.
    pub profiles: [FocusProfile; 2],
    pub peaks: [Option<usize>; 2],
    /// Mean normalized variance over planes strictly between the two fibers,
    /// excluding one plane spacing around each.
    pub off_peak: f64,
}

pub struct SectioningOutput {
    pub true_planes: [usize; 2],
    pub probes: [(usize, usize); 2],
    pub methods: Vec<SectioningMethod>,
    pub traces: Vec<(String, SolveTrace)>,
}

pub fn run_sectioning_experiment(cfg: &SectioningConfig) -> Result<SectioningOutput> {
    let spec = sectioning_scene(cfg)?;
    let truth = build_scene(&spec)?;
    let geom = spec.geometry(cfg.wavelength);
    let full = MaskStack::all_ones(cfg.nx, cfg.nx, 1)?;
    let partition = generate_partition_masks(cfg.nx, cfg.nx, frames_for_fraction(cfg.subsample_fraction)?, cfg.superpixel, cfg.seed)?;
    let sub = MaskStack::new(cfg.nx, cfg.nx, cfg.superpixel, cfg.seed, vec![partition.frame(0).to_vec()])?;
    let true_planes = [spec.objects[0].plane, spec.objects[1].plane];
    let probes = [fiber_probe(cfg, 0), fiber_probe(cfg, 1)];

    let mut methods = Vec::new();
    let mut traces = Vec::new();
    let mut record = |name: &str, vol: &Object4D| -> Result<()> {
        let profiles = [
            focus_profile(vol, 0, probes[0], cfg.window, &geom)?,
            focus_profile(vol, 0, probes[1], cfg.window, &geom)?,
        ];
        let peaks = [profiles[0].peak_index(), profiles[1].peak_index()];
        let (lo, hi) = (true_planes[0].min(true_planes[1]) + 2, true_planes[0].max(true_planes[1]).saturating_sub(2));
        let mut sum = 0.0;
        let mut count = 0;
        for p in &profiles {
            for v in p.variance.get(lo..=hi).unwrap_or(&[]) {
                sum += v;
                count += 1;
            }
        }
        let off_peak = if count > 0 { sum / count as f64 } else { 0.0 };
        methods.push(SectioningMethod { name: name.into(), profiles, peaks, off_peak });
        Ok(())
    };

    for (name, masks) in [("cs_full", &full), ("cs_subsampled", &sub)] {
        let (raw, background) = simulate_capture(&truth, masks, &geom, &NoiseSpec::default())?;
        let g = subtract_background(&raw, &background)?;
        let op = SensingOperator::new(&geom, masks)?;
        let (recon, trace) = solve_regularized(&op, &g, &cfg.solver, &cfg.regularization)?;
        record(name, &recon)?;
        traces.push((name.to_string(), trace));
        if name == "cs_full" {
            record("bp_full", &backpropagate(&g, &geom)?)?;
        } else {
            record("bp_subsampled", &backpropagate_masked(&g, masks, &geom)?)?;
        }
    }
    Ok(SectioningOutput { true_planes, probes, methods, traces })
}

use std::path::{Path, PathBuf};

use chv_core::experiments::{
    benchmark_csv, frames_for_fraction, objective_monotone, particle_scene, run_two_plane_cell, sectioning_scene,
    solve_regularized, two_plane_scene, CellResult,
};
use chv_core::io::{read_mask_stack, write_mask_stack, write_png};
use chv_core::{
    analysis, backpropagate, backpropagate_masked, build_scene, detect_particles, focus_profile, generate_bernoulli_masks,
    generate_partition_masks, psnr, read_raster, simulate_capture, subtract_background, track_particles,
    twist_reconstruct, validate_masks, velocities, Error, Geometry, HologramKind, MaskStack, Object4D, Raster,
    SceneSpec, SolveTrace, SolverConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, MaskKind, Method, Preset};
use crate::manifest::Outputs;
use crate::plots::{line_chart, track_panels, Series};
use crate::CliError;

pub const GEOMETRY_FILE: &str = "geometry.json";

fn make_masks(cfg: &Config, nx: usize, ny: usize, frames: usize) -> Result<MaskStack, CliError> {
    let m = &cfg.masks;
    let stack = match m.kind {
        MaskKind::Partition => generate_partition_masks(nx, ny, frames, m.superpixel, cfg.seed())?,
        MaskKind::Bernoulli => {
            let density = m.density.unwrap_or(1.0 / frames as f64);
            generate_bernoulli_masks(nx, ny, frames, m.superpixel, density, cfg.seed())?
        }
        MaskKind::Ones => MaskStack::all_ones(nx, ny, frames)?,
    };
    Ok(stack)
}

pub fn masks(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let g = &cfg.geometry;
    let stack = make_masks(cfg, g.nx, g.ny, cfg.masks.frames)?;
    let report = validate_masks(&stack);
    for p in write_mask_stack(out.path("masks")?, &stack, g.pitch)? {
        out.record(p);
    }
    out.write_json("mask_report.json", &report)?;
    // Bernoulli frames are independent by construction, so only the
    // per-pixel checks apply to them.
    let passed = match cfg.masks.kind {
        MaskKind::Bernoulli => report.binary.passed && report.block_constant.passed,
        _ => report.all_passed(),
    };
    out.note(format!("{} mask frames, validation {}", stack.frame_count(), if passed { "passed" } else { "FAILED" }));
    if !passed {
        return Err(CliError::Validation(format!(
            "mask validation failed: {}",
            serde_json::to_string(&report).unwrap_or_default()
        )));
    }
    Ok(())
}

/// Geometry for a scene, with the optical-path settings taken from the config.
fn scene_geometry(cfg: &Config, spec: &SceneSpec) -> Geometry {
    let g = &cfg.geometry;
    Geometry {
        observation_to_mask_distance: g.observation_to_mask_distance,
        mask_to_sensor_distance: g.mask_to_sensor_distance,
        pad_factor: g.pad_factor,
        band_limited: g.band_limited,
        ..spec.geometry(g.wavelength)
    }
}

fn write_capture(
    cfg: &Config,
    out: &mut Outputs,
    dir: &Path,
    spec: &SceneSpec,
    masks: &MaskStack,
) -> Result<(), CliError> {
    let geom = scene_geometry(cfg, spec);
    let truth = build_scene(spec)?;
    let (raw, background) = simulate_capture(&truth, masks, &geom, &cfg.scene.noise)?;
    let g = subtract_background(&raw, &background)?;
    out.write_json(dir.join(GEOMETRY_FILE), &geom)?;
    out.write_json(dir.join("scene.json"), spec)?;
    for p in write_mask_stack(out.path(dir.join("masks"))?, masks, geom.pitch)? {
        out.record(p);
    }
    for (name, h) in [("raw.chv", &raw), ("background.chv", &background), ("subtracted.chv", &g)] {
        let p = out.path(dir.join(name))?;
        chv_core::write_raster(&p, &Raster::from_hologram(h, geom.pitch, geom.wavelength)?)?;
        out.record(p);
    }
    let p = out.path(dir.join("truth.chv"))?;
    chv_core::write_raster(&p, &Raster::from_object(&truth, geom.pitch, geom.wavelength)?)?;
    out.record(p);
    Ok(())
}

pub fn simulate(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let s = &cfg.scene;
    match s.preset {
        Preset::TwoPlane => {
            if s.dz.is_empty() {
                return Err(CliError::Usage("scene.dz must list at least one separation".into()));
            }
            let frames = cfg.masks.frames;
            let n = s.two_plane.nx;
            let masks = make_masks(cfg, n, n, frames)?;
            for &dz in &s.dz {
                let spec = two_plane_scene(&s.two_plane, dz, frames)?;
                let dir = PathBuf::from(format!("dz_{:.1}mm", dz * 1e3));
                write_capture(cfg, out, &dir, &spec, &masks)?;
                out.note(format!("simulated dz = {:.1} mm into {}", dz * 1e3, dir.display()));
            }
        }
        Preset::Particles => {
            let (spec, truth) = particle_scene(&s.particles)?;
            let masks = make_masks(cfg, spec.nx, spec.ny, spec.frames)?;
            write_capture(cfg, out, Path::new(""), &spec, &masks)?;
            out.write_json("particles.json", &truth)?;
            out.note(format!("simulated {} particles over {} frames", truth.len(), spec.frames));
        }
        Preset::Sectioning => {
            let spec = sectioning_scene(&s.sectioning)?;
            let masks = make_masks(cfg, spec.nx, spec.ny, spec.frames)?;
            write_capture(cfg, out, Path::new(""), &spec, &masks)?;
            out.note(format!("simulated two fibers over {} planes", spec.planes.len()));
        }
        Preset::Custom => {
            let spec = s.spec.clone().ok_or_else(|| CliError::Usage("preset = \"custom\" needs a [scene.spec] table".into()))?;
            let masks = make_masks(cfg, spec.nx, spec.ny, spec.frames)?;
            write_capture(cfg, out, Path::new(""), &spec, &masks)?;
            out.note("simulated custom scene");
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Capture directories under `input`: itself if it holds a geometry file,
/// otherwise each immediate subdirectory that does, in name order.
fn capture_sets(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.join(GEOMETRY_FILE).exists() {
        return Ok(vec![PathBuf::new()]);
    }
    let entries = std::fs::read_dir(input).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let mut sets: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(GEOMETRY_FILE).exists())
        .map(|e| PathBuf::from(e.file_name()))
        .collect();
    sets.sort();
    if sets.is_empty() {
        return Err(CliError::Usage(format!("no {GEOMETRY_FILE} found in {} or its subdirectories", input.display())));
    }
    Ok(sets)
}

#[derive(Serialize)]
struct ReconstructSummary {
    frames: usize,
    depths: usize,
    lambda: Option<f64>,
    iterations: Option<usize>,
    stop: Option<String>,
    monotone: Option<bool>,
    psnr_cs_db: Option<f64>,
    psnr_bp_db: Option<f64>,
}

fn write_volume(out: &mut Outputs, rel: PathBuf, vol: &Object4D, geom: &Geometry) -> Result<(), CliError> {
    let p = out.path(rel)?;
    chv_core::write_raster(&p, &Raster::from_object(vol, geom.pitch, geom.wavelength)?)?;
    out.record(p);
    Ok(())
}

fn write_previews(out: &mut Outputs, dir: &Path, name: &str, vol: &Object4D) -> Result<(), CliError> {
    let s = vol.shape();
    for t in 0..s.nt {
        for n in 0..s.nd {
            let p = out.path(dir.join("previews").join(format!("{name}_t{t:02}_z{n:03}.png")))?;
            write_png(&p, &vol.plane_abs(t, n), s.nx, s.ny)?;
            out.record(p);
        }
    }
    Ok(())
}

pub fn reconstruct(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let r = &cfg.reconstruct;
    let input = r.input.clone().unwrap_or_else(|| out.root().to_path_buf());
    for set in capture_sets(&input)? {
        let src = input.join(&set);
        let geom: Geometry = read_json(&src.join(GEOMETRY_FILE))?;
        let masks = read_mask_stack(src.join("masks"))?;
        let g = read_raster(src.join("subtracted.chv"))?.to_hologram()?;
        if g.kind() != HologramKind::Subtracted {
            return Err(CliError::Usage(format!("{} is not a background-subtracted hologram", src.join("subtracted.chv").display())));
        }
        let truth = match src.join("truth.chv") {
            p if p.exists() => Some(read_raster(p)?.to_object()?),
            _ => None,
        };
        out.write_json(set.join(GEOMETRY_FILE), &geom)?;
        let mut summary = ReconstructSummary {
            frames: geom.frame_count,
            depths: geom.depths.len(),
            lambda: None,
            iterations: None,
            stop: None,
            monotone: None,
            psnr_cs_db: None,
            psnr_bp_db: None,
        };
        if matches!(r.method, Method::Bp | Method::Both) {
            let bp = if masks.frame_count() == 1 && masks.frame(0).iter().all(|&m| m == 1) {
                backpropagate(&g, &geom)?
            } else {
                backpropagate_masked(&g, &masks, &geom)?
            };
            write_volume(out, set.join("bp.chv"), &bp, &geom)?;
            if r.previews {
                write_previews(out, &set, "bp", &bp)?;
            }
            summary.psnr_bp_db = truth.as_ref().map(|t| psnr(&bp, t)).transpose()?;
        }
        if matches!(r.method, Method::Cs | Method::Both) {
            let solved = match r.lambda {
                Some(lambda) => {
                    let solver = SolverConfig {
                        lambda_spatial: lambda,
                        lambda_temporal: r.regularization.temporal_ratio * lambda,
                        ..r.solver.clone()
                    };
                    twist_reconstruct(&g, &masks, &geom, &solver, None)
                }
                None => {
                    let op = chv_core::SensingOperator::new(&geom, &masks)?;
                    solve_regularized(&op, &g, &r.solver, &r.regularization)
                }
            };
            let (cs, trace) = match solved {
                Ok(v) => v,
                Err(Error::NumericalAbort { iteration, reason, trace }) => {
                    out.write(set.join("trace.csv"), trace.to_csv())?;
                    return Err(CliError::Numerical(format!("solver aborted at iteration {iteration}: {reason}")));
                }
                Err(e) => return Err(e.into()),
            };
            write_volume(out, set.join("cs.chv"), &cs, &geom)?;
            out.write(set.join("trace.csv"), trace.to_csv())?;
            if r.previews {
                write_previews(out, &set, "cs", &cs)?;
            }
            summary.lambda = Some(trace.lambda);
            summary.iterations = Some(trace.iterations());
            summary.stop = Some(format!("{:?}", trace.stop));
            summary.monotone = Some(objective_monotone(&trace));
            summary.psnr_cs_db = truth.as_ref().map(|t| psnr(&cs, t)).transpose()?;
            out.note(format!("{}: CS {} iterations, stop {:?}", src.display(), trace.iterations(), trace.stop));
        }
        out.write_json(set.join("summary.json"), &summary)?;
    }
    Ok(())
}

/// Pixel of the largest magnitude in the frame's maximum projection over depth.
fn brightest_pixel(vol: &Object4D, frame: usize) -> [usize; 2] {
    let s = vol.shape();
    let mut best = (0, f64::NEG_INFINITY);
    for n in 0..s.nd {
        for (i, v) in vol.plane_abs(frame, n).into_iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
    }
    [best.0 % s.nx, best.0 / s.nx]
}

#[derive(Serialize)]
struct ProbeSummary {
    pixel: [usize; 2],
    focused: bool,
    peak_depth_m: Option<f64>,
}

#[derive(Serialize)]
struct AnalysisSummary {
    probes: Vec<ProbeSummary>,
    detections_per_frame: Vec<usize>,
    tracks: usize,
    mean_speeds_m_per_s: Vec<Option<f64>>,
}

pub fn analyze(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let volume = a.volume.clone().unwrap_or_else(|| out.root().join("cs.chv"));
    let geom_path = a.geometry.clone().unwrap_or_else(|| volume.with_file_name(GEOMETRY_FILE));
    let vol = read_raster(&volume).map_err(|e| CliError::Usage(format!("cannot load volume {}: {e}", volume.display())))?.to_object()?;
    let geom: Geometry = read_json(&geom_path)?;
    if a.frame >= vol.shape().nt {
        return Err(CliError::Usage(format!("analysis.frame {} but the volume has {} frames", a.frame, vol.shape().nt)));
    }
    let probes = if a.probes.is_empty() { vec![brightest_pixel(&vol, a.frame)] } else { a.probes.clone() };
    let mut series = Vec::new();
    let mut probe_summaries = Vec::new();
    for (i, &[x, y]) in probes.iter().enumerate() {
        let profile = focus_profile(&vol, a.frame, (x, y), a.window, &geom)?;
        out.write(format!("profile_{i:02}.csv"), profile.to_csv())?;
        series.push(Series {
            label: format!("pixel ({x}, {y})"),
            points: profile.depths.iter().zip(&profile.variance).map(|(d, v)| (d * 1e3, *v)).collect(),
            dashed: false,
            color: i,
        });
        probe_summaries.push(ProbeSummary { pixel: [x, y], focused: profile.focused, peak_depth_m: profile.peak_depth() });
    }
    let p = out.path("profiles.svg")?;
    line_chart(&p, "Normalized block variance vs depth", "depth (mm)", "normalized variance", &series)?;
    out.record(p);

    let (detections, tracks) = if a.detect {
        let detections = detect_particles(&vol, &a.detection, &geom)?;
        let tracks = track_particles(&detections, a.max_jump)?
            .iter()
            .map(|t| velocities(t, geom.frame_interval))
            .collect::<chv_core::Result<Vec<_>>>()?;
        (detections, tracks)
    } else {
        (vec![Vec::new(); vol.shape().nt], Vec::new())
    };
    out.write("detections.csv", analysis::detections_csv(&detections))?;
    out.write("tracks.csv", analysis::tracks_csv(&tracks))?;
    let paths: Vec<Vec<[f64; 3]>> = tracks.iter().map(|t| t.positions.iter().flatten().copied().collect()).collect();
    let p = out.path("tracks.svg")?;
    track_panels(&p, &paths)?;
    out.record(p);
    let speed_series: Vec<Series> = tracks
        .iter()
        .enumerate()
        .map(|(i, t)| Series {
            label: format!("track {}", t.id),
            points: t.speeds().into_iter().map(|(frame, v)| (frame as f64 * geom.frame_interval * 1e3, v)).collect(),
            dashed: false,
            color: i,
        })
        .collect();
    let p = out.path("speeds.svg")?;
    line_chart(&p, "Speed vs time", "time (ms)", "speed (m/s)", &speed_series)?;
    out.record(p);

    let summary = AnalysisSummary {
        probes: probe_summaries,
        detections_per_frame: detections.iter().map(Vec::len).collect(),
        tracks: tracks.len(),
        mean_speeds_m_per_s: tracks.iter().map(|t| t.mean_speed()).collect(),
    };
    out.note(format!("{} tracks from {} detections", tracks.len(), detections.iter().map(Vec::len).sum::<usize>()));
    out.write_json("analysis.json", &summary)?;
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum CellRecord<'a> {
    Done(&'a CellResult),
    Failed { fraction: f64, dz: f64, error: &'a str },
}

pub fn benchmark(cfg: &Config, out: &mut Outputs, jobs: usize) -> Result<(), CliError> {
    let b = &cfg.benchmark;
    let cells: Vec<(f64, f64)> = match b.cell {
        Some([f, dz]) => vec![(f, dz)],
        None => b.dz.iter().flat_map(|&dz| b.fractions.iter().map(move |&f| (f, dz))).collect(),
    };
    if cells.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one fraction and one dz".into()));
    }
    for &(f, _) in &cells {
        frames_for_fraction(f)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<(f64, f64, Result<CellResult, String>, Option<SolveTrace>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(f, dz)| match run_two_plane_cell(&b.two_plane, f, dz) {
                Ok(c) => (f, dz, Ok(c.result), Some(c.trace)),
                Err(e) => (f, dz, Err(e.to_string()), None),
            })
            .collect()
    });
    let mut failed = 0;
    for (i, (f, dz, r, trace)) in results.iter().enumerate() {
        match r {
            Ok(c) => out.note(format!("cell {i}: {:.0}% dz {:.1} mm  CS {:.2} dB  BP {:.2} dB", f * 100.0, dz * 1e3, c.psnr_cs, c.psnr_bp)),
            Err(e) => {
                failed += 1;
                out.note(format!("cell {i}: {:.0}% dz {:.1} mm failed: {e}", f * 100.0, dz * 1e3));
            }
        }
        let record = match r {
            Ok(c) => CellRecord::Done(c),
            Err(e) => CellRecord::Failed { fraction: *f, dz: *dz, error: e },
        };
        out.write_json(format!("cells/cell_{i:02}.json"), &record)?;
        if let Some(t) = trace {
            out.write(format!("cells/cell_{i:02}_trace.csv"), t.to_csv())?;
        }
    }
    let table: Vec<_> = results.iter().map(|(f, dz, r, _)| (*f, *dz, r.clone())).collect();
    out.write("benchmark.csv", benchmark_csv(&table))?;

    let mut series = Vec::new();
    let mut dzs: Vec<f64> = cells.iter().map(|c| c.1).collect();
    dzs.dedup();
    for (k, &dz) in dzs.iter().enumerate() {
        let row: Vec<&CellResult> = results.iter().filter(|r| r.1 == dz).filter_map(|r| r.2.as_ref().ok()).collect();
        let pick = |cs: bool| row.iter().map(|c| (c.fraction * 100.0, if cs { c.psnr_cs } else { c.psnr_bp })).collect();
        series.push(Series { label: format!("CS dz {:.0} mm", dz * 1e3), points: pick(true), dashed: false, color: k });
        series.push(Series { label: format!("BP dz {:.0} mm", dz * 1e3), points: pick(false), dashed: true, color: k });
    }
    let p = out.path("psnr.svg")?;
    line_chart(&p, "PSNR vs fraction of pixels per frame", "pixels per frame (%)", "PSNR (dB)", &series)?;
    out.record(p);
    if failed > 0 {
        out.note(format!("{failed} of {} cells failed; see benchmark.csv", results.len()));
    }
    Ok(())
}

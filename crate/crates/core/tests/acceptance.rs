//! Acceptance suite: one PASS/FAIL line per criterion.
//! Run with `cargo test -p chv-core --test acceptance`.

use chv_core::experiments::{
    run_particle_experiment, run_sectioning_experiment, run_two_plane_cell, CellResult, ParticleConfig,
    SectioningConfig, TwoPlaneConfig,
};
use chv_core::io::{read_raster, write_raster, RasterData};
use chv_core::{
    forward, generate_partition_masks, make_transfer, make_transfer_with, propagate, propagate_padded, tv_denoise,
    tv_norm, twist_reconstruct, validate_masks, velocities, ComplexField, Error, Geometry, Hologram, HologramKind,
    MaskStack, Object4D, Raster, SensingOperator, Shape4, SolverConfig, Track,
};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

const LAMBDA: f64 = 532e-9;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn adjoint_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let h2 = if i % 2 == 0 { 0.0 } else { 0.004 };
        let geom = Geometry {
            nx: 32,
            ny: 32,
            pitch: 8e-6,
            depths: vec![0.01, 0.02],
            frame_count: 4,
            mask_to_sensor_distance: h2,
            ..Geometry::default()
        };
        let masks = generate_partition_masks(32, 32, 4, 1, i).unwrap();
        let op = SensingOperator::new(&geom, &masks).unwrap();
        let obj = Object4D::new(op.object_shape(), random_complex(&mut rng, op.object_shape().len())).unwrap();
        let g = Hologram::new(32, 32, HologramKind::Subtracted, (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let ao = op.apply(&obj).unwrap();
        let gap = (ao.dot(&g) - obj.dot(&op.apply_adjoint(&g).unwrap())).abs() / (ao.norm() * g.norm());
        worst = worst.max(gap);
    }
    outcome(worst < 1e-10, format!("worst normalized gap {worst:.2e} over 20 instances"))
}

/// Direct sum of the Rayleigh-Sommerfeld integral, each sample a patch of
/// area pitch², relative to the plane-wave carrier.
fn diffraction_sum(f: &ComplexField, z: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / LAMBDA;
    let (n, p) = (f.nx(), f.pitch());
    let mut out = vec![Complex64::default(); n * n];
    for y0 in 0..n {
        for x0 in 0..n {
            let e0 = f.get(x0, y0);
            if e0 == Complex64::default() {
                continue;
            }
            for y in 0..n {
                for x in 0..n {
                    let (dx, dy) = ((x as f64 - x0 as f64) * p, (y as f64 - y0 as f64) * p);
                    let r = (dx * dx + dy * dy + z * z).sqrt();
                    out[y * n + x] += e0 * Complex64::new(0.0, -k / (2.0 * PI)) * Complex64::from_polar(p * p / r, k * (r - z));
                }
            }
        }
    }
    out
}

fn propagation() -> Outcome {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = ComplexField::new(2 * n, 2 * n, 5.86e-6, random_complex(&mut rng, 4 * n * n)).unwrap();
    let tf = make_transfer_with(n, n, 5.86e-6, LAMBDA, 0.07, 2, false).unwrap();
    let back = propagate_padded(&propagate_padded(&f, &tf).unwrap(), &tf.reversed()).unwrap();
    let err: f64 = back.data().iter().zip(f.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let round_trip = (err / f.energy()).sqrt();

    let z = 0.01;
    let pitch = 1.01 * (LAMBDA * z / (2 * n) as f64).sqrt();
    let imp = ComplexField::impulse(n, n, pitch, n / 2, n / 2).unwrap();
    let fft = propagate(&imp, &make_transfer(n, n, pitch, LAMBDA, z, 2).unwrap()).unwrap();
    let oracle = diffraction_sum(&imp, z);
    let (mut e, mut s) = (0.0, 0.0);
    for y in n / 4..3 * n / 4 {
        for x in n / 4..3 * n / 4 {
            e += (fft.get(x, y) - oracle[y * n + x]).norm_sqr();
            s += oracle[y * n + x].norm_sqr();
        }
    }
    let rms = (e / s).sqrt();
    outcome(round_trip < 1e-10 && rms < 0.01, format!("round trip {round_trip:.2e}, quadrature RMS {:.4}%", 100.0 * rms))
}

fn brute_force_tv(obj: &Object4D, wt: f64) -> f64 {
    let s = obj.shape();
    let mut total = 0.0;
    for part in [|v: Complex64| v.re, |v: Complex64| v.im] {
        for t in 0..s.nt {
            for n in 0..s.nd {
                for y in 0..s.ny {
                    for x in 0..s.nx {
                        let here = part(obj.get(t, n, y, x));
                        let d = |o: Complex64| part(o) - here;
                        let dx = if x + 1 < s.nx { d(obj.get(t, n, y, x + 1)) } else { 0.0 };
                        let dy = if y + 1 < s.ny { d(obj.get(t, n, y + 1, x)) } else { 0.0 };
                        let dz = if n + 1 < s.nd { d(obj.get(t, n + 1, y, x)) } else { 0.0 };
                        let dt = if t + 1 < s.nt { d(obj.get(t + 1, n, y, x)) } else { 0.0 };
                        total += (dx * dx + dy * dy + dz * dz + wt * wt * dt * dt).sqrt();
                    }
                }
            }
        }
    }
    total
}

/// Exact TV prox of a two-level step of `m + m` samples: each level moves
/// toward the other by weight/m until they meet.
fn step_prox(a: f64, b: f64, m: usize, weight: f64) -> (f64, f64) {
    let shift = weight / m as f64;
    if (b - a).abs() <= 2.0 * shift {
        let mid = 0.5 * (a + b);
        (mid, mid)
    } else {
        let s = (b - a).signum() * shift;
        (a + s, b - s)
    }
}

fn tv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SolverConfig { lambda_spatial: 1.0, lambda_temporal: 0.5, ..SolverConfig::default() };
    let shape = Shape4 { nt: 3, nd: 2, ny: 4, nx: 4 };
    let mut worst_norm: f64 = 0.0;
    for _ in 0..10 {
        let obj = Object4D::new(shape, random_complex(&mut rng, shape.len())).unwrap();
        let want = brute_force_tv(&obj, 0.5);
        worst_norm = worst_norm.max((tv_norm(&obj, &cfg) - want).abs() / want);
    }
    let m = 8;
    let prox_cfg = SolverConfig { lambda_spatial: 1.0, lambda_temporal: 1.0, tv_inner_iters: 20_000, ..SolverConfig::default() };
    let mut worst_prox: f64 = 0.0;
    let axes = [
        Shape4 { nt: 1, nd: 1, ny: 1, nx: 2 * m },
        Shape4 { nt: 1, nd: 1, ny: 2 * m, nx: 1 },
        Shape4 { nt: 1, nd: 2 * m, ny: 1, nx: 1 },
        Shape4 { nt: 2 * m, nd: 1, ny: 1, nx: 1 },
    ];
    for s in axes {
        for weight in [0.5, 1.0, 2.5, 6.0] {
            let data = (0..2 * m).map(|i| Complex64::new(if i < m { 0.2 } else { 1.3 }, 0.0)).collect();
            let u = tv_denoise(&Object4D::new(s, data).unwrap(), weight, &prox_cfg);
            let (lo, hi) = step_prox(0.2, 1.3, m, weight);
            for (i, v) in u.data().iter().enumerate() {
                worst_prox = worst_prox.max((v.re - if i < m { lo } else { hi }).abs()).max(v.im.abs());
            }
        }
    }
    outcome(worst_norm < 1e-12 && worst_prox < 1e-4, format!("tv_norm rel err {worst_norm:.1e}, prox max err {worst_prox:.1e}"))
}

fn mask_partition() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for t in [2usize, 5, 10] {
        let stack = generate_partition_masks(960, 600, t, 4, 42).unwrap();
        let report = validate_masks(&stack);
        let coverage_exact = stack.coverage().iter().all(|&c| c == 1);
        let slack = 16.0 / (960.0 * 600.0);
        let density_ok = (0..t).all(|k| (stack.density(k) - 1.0 / t as f64).abs() <= slack);
        ok &= report.all_passed() && coverage_exact && density_ok;
        detail.push(format!("T={t}: {}", if report.all_passed() && coverage_exact && density_ok { "ok" } else { "bad" }));
    }
    outcome(ok, detail.join(", "))
}

fn two_plane_sweep() -> (Outcome, Vec<CellResult>) {
    let cfg = TwoPlaneConfig::default();
    let fractions = [1.0, 0.5, 0.2, 0.1];
    let dzs = [0.005, 0.015, 0.030];
    let mut cells = Vec::new();
    for &dz in &dzs {
        for &f in &fractions {
            let r = run_two_plane_cell(&cfg, f, dz).unwrap().result;
            println!("    dz {:>4.1} mm  fraction {:>3.0}%  CS {:6.2} dB  BP {:6.2} dB", dz * 1e3, f * 100.0, r.psnr_cs, r.psnr_bp);
            cells.push(r);
        }
    }
    let cs_beats_bp = cells.iter().all(|c| c.psnr_cs >= c.psnr_bp);
    let ordered = cells.chunks(fractions.len()).all(|row| row.windows(2).all(|w| w[1].psnr_cs <= w[0].psnr_cs + 0.3));
    let tenth: Vec<f64> = cells.iter().filter(|c| c.fraction == 0.1).map(|c| c.psnr_cs).collect();
    let dz_trend = tenth.windows(2).all(|w| w[0] < w[1]);
    let detail = format!("(a) CS ≥ BP {cs_beats_bp}, (b) fraction ordering {ordered}, (c) 10% dz trend {dz_trend}");
    (outcome(cs_beats_bp && ordered && dz_trend, detail), cells)
}

fn super_resolution() -> Outcome {
    let cfg = ParticleConfig::default();
    let out = run_particle_experiment(&cfg).unwrap();
    let r = &out.report;
    let mut worst: f64 = 0.0;
    let mut all_tracked = true;
    for (truth, got) in &r.speeds {
        match got {
            Some(v) => worst = worst.max((v - truth).abs() / truth),
            None => all_tracked = false,
        }
    }
    let ok = r.located_fraction >= 0.8 && all_tracked && worst <= 0.10;
    outcome(ok, format!("located {}/{} pairs, worst speed error {:.1}%, all tracked {all_tracked}", r.located, r.pairs, 100.0 * worst))
}

fn sectioning() -> Outcome {
    let cfg = SectioningConfig::default();
    let out = run_sectioning_experiment(&cfg).unwrap();
    let method = |name: &str| out.methods.iter().find(|m| m.name == name).unwrap();
    let peaks_ok = |name: &str| {
        method(name).peaks.iter().zip(out.true_planes).all(|(p, t)| p.is_some_and(|p| p.abs_diff(t) <= 1))
    };
    let located = ["cs_full", "cs_subsampled", "bp_full"].iter().all(|n| peaks_ok(n));
    let bp = method("bp_full").off_peak.min(method("bp_subsampled").off_peak);
    let quieter = method("cs_full").off_peak < bp && method("cs_subsampled").off_peak < bp;
    let detail = format!(
        "peaks within one plane {located}; off-peak CS {:.3}/{:.3} vs BP {:.3}/{:.3}",
        method("cs_full").off_peak,
        method("cs_subsampled").off_peak,
        method("bp_full").off_peak,
        method("bp_subsampled").off_peak
    );
    outcome(located && quieter, detail)
}

fn solver_behavior(cells: &[CellResult]) -> Outcome {
    let monotone = cells.iter().all(|c| c.monotone);
    let geom = Geometry { nx: 32, ny: 32, pitch: 10e-6, depths: vec![0.01], ..Geometry::default() };
    let masks = MaskStack::all_ones(32, 32, 1).unwrap();
    let mut truth = Object4D::zeros(geom.shape());
    truth.set(0, 0, 12, 10, Complex64::new(1.0, 0.0));
    truth.set(0, 0, 20, 22, Complex64::new(0.8, 0.0));
    let g = forward(&truth, &masks, &geom).unwrap();
    let cfg = SolverConfig { lambda_spatial: 1e-4 * (2.0 * geom.frame_interval).powi(2), tol: 1e-9, ..SolverConfig::default() };
    let (x, _) = twist_reconstruct(&g, &masks, &geom, &cfg, None).unwrap();
    let err = x.data().iter().zip(truth.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / truth.norm();
    outcome(monotone && err < 0.05, format!("monotone on {} sweep solves {monotone}, two-point relative error {err:.4}", cells.len()))
}

fn velocity_formula() -> Outcome {
    let tau = 500e-6;
    let hand = Track { id: 0, positions: vec![Some([0.0; 3]), Some([1e-3, 0.0, 0.0]), Some([4e-3, 0.0, 0.0])], velocities: vec![None; 3] };
    let v = velocities(&hand, tau).unwrap().velocities[1].unwrap();
    let hand_ok = (v[0] - 4.0).abs() < 1e-12 && v[1] == 0.0 && v[2] == 0.0;
    let vel = [1.25, -0.5, 0.25];
    let positions = (0..10).map(|t| Some(vel.map(|c| c * t as f64 * tau))).collect();
    let line = velocities(&Track { id: 1, positions, velocities: vec![None; 10] }, tau).unwrap();
    let worst = line.velocities.iter().flatten().flat_map(|u| (0..3).map(move |k| (u[k] - vel[k]).abs())).fold(0.0, f64::max);
    outcome(hand_ok && worst < 1e-12, format!("hand case {:.12} m/s, constant-velocity max error {worst:.1e}", v[0]))
}

fn io_formats() -> Outcome {
    let dir = std::env::temp_dir().join(format!("chv-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<Complex32> = (0..2 * 3 * 5 * 7).map(|_| Complex32::new(rng.random(), -rng.random::<f32>())).collect();
    let raster = Raster::new(vec![2, 3, 5, 7], 5.86e-6, LAMBDA, "volume", RasterData::Complex(data)).unwrap();
    let path = dir.join("vol.chv");
    write_raster(&path, &raster).unwrap();
    let round_trip = read_raster(&path).unwrap() == raster;

    let golden: &[u8] = include_bytes!("data/golden_f32.chv");
    let decoded = Raster::decode(golden).unwrap();
    let golden_ok = decoded.data == RasterData::Real(vec![1.0, -2.5, 0.15625, 1024.0, -0.0, 3.0e-3])
        && decoded.encode().unwrap() == golden;

    let cut = dir.join("cut.chv");
    std::fs::write(&cut, &golden[..golden.len() - 4]).unwrap();
    let truncation = matches!(read_raster(&cut), Err(Error::Corrupt(m)) if m.contains("20") && m.contains("24"));
    let mut bad = golden.to_vec();
    bad[0] = b'X';
    let magic = matches!(Raster::decode(&bad), Err(Error::Format(_)));
    std::fs::remove_dir_all(&dir).ok();
    outcome(
        round_trip && golden_ok && truncation && magic,
        format!("round trip {round_trip}, golden {golden_ok}, truncation {truncation}, bad magic {magic}"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, budget: Duration, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let ok = o.ok && elapsed <= budget;
        failures += usize::from(!ok);
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.1} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    report(1, "adjoint consistency", Duration::from_secs(10), &mut adjoint_consistency);
    report(2, "propagation", Duration::from_secs(30), &mut propagation);
    report(3, "TV oracle", Duration::from_secs(5), &mut tv_oracle);
    report(4, "mask partition", Duration::from_secs(5), &mut mask_partition);
    let mut cells = Vec::new();
    report(5, "two-plane trends", Duration::from_secs(600), &mut || {
        let (o, c) = two_plane_sweep();
        cells = c;
        o
    });
    report(6, "temporal super-resolution", Duration::from_secs(300), &mut super_resolution);
    report(7, "depth sectioning", Duration::from_secs(300), &mut sectioning);
    report(8, "solver behavior", Duration::from_secs(120), &mut || solver_behavior(&cells));
    report(9, "velocity formula", Duration::from_secs(1), &mut velocity_formula);
    report(10, "I/O formats", Duration::from_secs(5), &mut io_formats);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line;
//! the test fails if any check fails.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neref::evaluation::{camera_count_sweep, evaluate_view, flow_noise_sweep, SweepRow};
use neref::field::{integrate_positions, sample_deltas, Architecture, InitOptions, NeRefNetwork};
use neref::geometry::{refract, Ray, RefractionConstants, Vec3};
use neref::io::write_checkpoint;
use neref::simulator::{Scene, SceneConfig, WaveComponent, WaveSurface};
use neref::training::{batch_gradient, train, TrainConfig, TrainingData};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn report(o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let status = if o.pass { "PASS" } else { "FAIL" };
    writeln!(out, "{status} {}: {} ({:.1} s)", o.name, o.detail, o.seconds).unwrap();
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = f();
    let o = Outcome {
        name,
        pass,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    };
    report(&o);
    o
}

fn desk_scene(surface: WaveSurface) -> Scene {
    Scene::from_config(&SceneConfig::desk("acceptance", surface, 64), "acceptance", Path::new(".")).unwrap()
}

fn bump_surface() -> WaveSurface {
    WaveSurface {
        base_height: 0.2,
        time: 0.0,
        waves: vec![WaveComponent::Gaussian {
            amplitude: 0.02,
            sigma: 0.1,
            center: [0.0, 0.0],
            velocity: [0.0, 0.0],
        }],
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn refraction_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_snell = 0.0f64;
    let mut worst_plane = 0.0f64;
    let mut done = 0;
    while done < 10_000 {
        let n1 = rng.random_range(1.0..1.6);
        let n2 = rng.random_range(1.0..1.8);
        let c = RefractionConstants::new(n1, n2).unwrap();
        let normal = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0))
            .normalize();
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if d.norm() < 1e-3 {
            continue;
        }
        let d = d.normalize();
        if d.dot(&normal) > -1e-3 {
            continue;
        }
        let Ok(t) = refract(&d, &normal, &c) else {
            continue;
        };
        let sin1 = d.cross(&normal).norm();
        let sin2 = t.cross(&normal).norm();
        worst_snell = worst_snell.max((n1 * sin1 - n2 * sin2).abs());
        worst_plane = worst_plane.max(t.dot(&d.cross(&normal)).abs());
        done += 1;
    }
    (
        worst_snell < 1e-12 && worst_plane < 1e-12,
        format!("10000 draws, max |n1 sin1 - n2 sin2| = {worst_snell:.2e}, max coplanarity residual = {worst_plane:.2e}"),
    )
}

fn gradient_check() -> (bool, String) {
    let scene = Scene::from_config(&SceneConfig::desk("g", bump_surface(), 8), "g", Path::new(".")).unwrap();
    let data = TrainingData::from_scene(&scene, &scene.training_indices(), 0.0, 0);
    let cfg = TrainConfig {
        batch_rays: 4,
        chunk_rays: 4,
        coarse_samples: 8,
        fine_samples: 0,
        stratified: false,
        arch: Architecture {
            depth: 2,
            width: 8,
            head_depth: 1,
            encoding_freqs: 1,
            skip_layer: 0,
            density_scale: 20.0,
        },
        ..TrainConfig::default()
    };
    let patches = data.patches(&data.slab(cfg.slab_margin));
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut c = cfg.clone();
        c.init.seed = seed;
        let mut net = NeRefNetwork::new(c.arch, &c.init);
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        // zero hidden biases put dead-unit samples exactly on a ReLU kink
        for l in net.layout.trunk.clone() {
            for b in &mut net.params[l.bias..l.bias + l.n_out] {
                *b = pick.random_range(-0.1..0.1);
            }
        }
        let batch = [patches[pick.random_range(0..patches.len())]];
        let g = batch_gradient(&net, &data, &c, &batch, seed).unwrap();
        if g.rays != 4 {
            return (false, format!("seed {seed}: only {} of 4 rays valid", g.rays));
        }
        let scale = g.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        let mut probe = net.clone();
        for k in 0..net.params.len() {
            probe.params[k] = net.params[k] + h;
            let up = batch_gradient(&probe, &data, &c, &batch, seed).unwrap().l_tol;
            probe.params[k] = net.params[k] - h;
            let down = batch_gradient(&probe, &data, &c, &batch, seed).unwrap().l_tol;
            probe.params[k] = net.params[k];
            let fd = (up - down) / (2.0 * h);
            let err = (g.grad[k] - fd).abs() / g.grad[k].abs().max(fd.abs()).max(1e-3 * scale);
            worst = worst.max(err);
            checked += 1;
        }
    }
    (
        worst < 1e-3,
        format!("20 seeds, {checked} parameter checks, max relative error {worst:.2e}"),
    )
}

fn accumulation_invariants() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_tele = 0.0f64;
    for seed in 0..50 {
        let net = NeRefNetwork::new(
            Architecture {
                depth: 2,
                width: 16,
                head_depth: 2,
                encoding_freqs: 3,
                skip_layer: 0,
                density_scale: rng.random_range(1.0..40.0),
            },
            &InitOptions {
                seed,
                density_bias: rng.random_range(-2.0..2.0),
                ..Default::default()
            },
        );
        let ray = Ray::new(
            Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0),
            Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -1.0),
        );
        let mut pos: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.5)).collect();
        pos.sort_by(f64::total_cmp);
        let r = integrate_positions(&net, &ray, &pos, 1.6);
        let deltas = sample_deltas(&pos, 1.6);
        let points: Vec<Vec3> = pos.iter().map(|&l| ray.at(l)).collect();
        let samples = net.query_batch(&points);
        let (mut acc, mut optical) = (0.0, 0.0);
        for i in 0..pos.len() {
            acc += r.weights[i];
            optical += samples[i].sigma * deltas[i];
            worst_tele = worst_tele.max((acc - (1.0 - (-optical).exp())).abs());
        }
    }

    // trunk unit relu(z0 - z): no density above z0, σδ = 20 at the first
    // sample below it
    let arch = Architecture {
        depth: 1,
        width: 1,
        head_depth: 1,
        encoding_freqs: 0,
        skip_layer: 0,
        density_scale: 1.0,
    };
    let mut net = NeRefNetwork::new(arch, &InitOptions::default());
    net.params.fill(0.0);
    let trunk = net.layout.trunk[0];
    net.params[trunk.weight + 2] = -1.0;
    net.params[trunk.bias] = 0.55;
    net.params[net.layout.density.weight] = 20000.0;
    net.params[net.layout.density.bias] = -800.0;
    let out = net.layout.head[0];
    let n_star = [0.2, -0.4, 0.8];
    net.params[out.bias..out.bias + 3].copy_from_slice(&n_star);
    let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), -Vec3::z());
    let pos: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
    let sigma_delta = net.query(&ray.at(0.5)).sigma * 0.1;
    let r = integrate_positions(&net, &ray, &pos, 1.0);
    let depth_err = (r.depth - 0.5).abs();
    let normal_err = (r.normal - Vec3::from(n_star)).norm();
    (
        worst_tele < 1e-10 && (sigma_delta - 20.0).abs() < 1e-9 && depth_err < 1e-6 && normal_err < 1e-6,
        format!(
            "telescoping residual {worst_tele:.2e} over 50 rays; opaque sample σδ = {sigma_delta:.6}, depth error {depth_err:.2e}, normal error {normal_err:.2e}"
        ),
    )
}

/// Absolute Laplacian of the surface height at `(x, y)`.
fn curvature(surface: &WaveSurface, x: f64, y: f64) -> f64 {
    let h = 1e-3;
    let z = |x: f64, y: f64| surface.surface_eval(x, y).0;
    ((z(x + h, y) + z(x - h, y) + z(x, y + h) + z(x, y - h) - 4.0 * z(x, y)) / (h * h)).abs()
}

fn sweep_columns(rows: &[SweepRow], values: &[f64], pick: impl Fn(&SweepRow) -> f64) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|v| rows.iter().filter(|r| r.value == *v).map(&pick).collect())
        .collect()
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();

    outcomes.push(timed("refraction oracle", refraction_oracle));
    outcomes.push(timed("end-to-end gradient check", gradient_check));
    outcomes.push(timed("accumulation invariants", accumulation_invariants));

    let config = TrainConfig::desk();

    let flat = desk_scene(WaveSurface::flat(0.2));
    let held_out = flat.held_out_indices()[0];
    let t = Instant::now();
    let data = TrainingData::from_scene(&flat, &flat.training_indices(), 0.0, 0);
    let (net, _) = train(&config, &data).unwrap();
    let flat_eval = evaluate_view(&net, &flat, held_out, &config);
    let train_seconds = t.elapsed().as_secs_f64();
    let r = flat_eval.report;
    let o = Outcome {
        name: "flat-water reconstruction",
        pass: r.depth_relative_error < 0.01 && r.normal_angle_mean < 1.0,
        detail: format!(
            "9 cameras, 64x64, held-out view: depth relative error {:.3}% (< 1%), normal angle {:.3}° (< 1°), {} px",
            100.0 * r.depth_relative_error,
            r.normal_angle_mean,
            r.pixels
        ),
        seconds: train_seconds,
    };
    report(&o);
    outcomes.push(o);

    outcomes.push(timed("view synthesis", || {
        (
            r.psnr > 30.0 && r.ssim > 0.95,
            format!("held-out render PSNR {:.2} dB (> 30), SSIM {:.4} (> 0.95)", r.psnr, r.ssim),
        )
    }));

    outcomes.push(timed("gaussian-bump reconstruction", || {
        let surface = bump_surface();
        let scene = desk_scene(surface.clone());
        let idx = scene.held_out_indices()[0];
        let data = TrainingData::from_scene(&scene, &scene.training_indices(), 0.0, 0);
        let (net, _) = train(&config, &data).unwrap();
        let ev = evaluate_view(&net, &scene, idx, &config);
        let truth = scene.render_view(idx, true);
        let cam = &scene.cameras[idx].camera;
        let mut scored: Vec<(f64, f64)> = Vec::new();
        for row in 0..cam.height {
            for col in 0..cam.width {
                if !*ev.mask.get(col, row) {
                    continue;
                }
                let p = cam.pixel_center_ray(col, row).at(*truth.depth.get(col, row));
                scored.push((curvature(&surface, p.x, p.y), *ev.errors.angle_map.get(col, row)));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let quarter = scored.len() / 4;
        let low: Vec<f64> = scored[..2 * quarter].iter().map(|s| s.1).collect();
        let high: Vec<f64> = scored[scored.len() - quarter..].iter().map(|s| s.1).collect();
        let (lo, hi) = (mean(&low), mean(&high));
        let r = ev.report;
        (
            r.depth_relative_error < 0.02 && r.normal_angle_mean < 3.0 && hi > 1.5 * lo,
            format!(
                "depth relative error {:.3}% (< 2%), normal angle {:.3}° (< 3°); mean angle error {hi:.3}° in the top curvature quartile vs {lo:.3}° in the lower half (ratio {:.2} > 1.5)",
                100.0 * r.depth_relative_error,
                r.normal_angle_mean,
                hi / lo
            ),
        )
    }));

    outcomes.push(timed("camera-count trend", || {
        let scene = desk_scene(bump_surface());
        let mut cfg = config.clone();
        cfg.epochs = 2;
        let counts = [3usize, 5, 7, 9];
        let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let rows = camera_count_sweep(&scene, &cfg, &counts, &[0, 1, 2], |_, _| {}).unwrap();
        let mut pass = true;
        let mut parts = Vec::new();
        for (label, pick) in [
            ("depth RMSE [mm]", (|r: &SweepRow| 1e3 * r.report.depth_rmse) as fn(&SweepRow) -> f64),
            ("normal angle [°]", |r: &SweepRow| r.report.normal_angle_mean),
        ] {
            let cols = sweep_columns(&rows, &values, pick);
            let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
            let mut gaps = Vec::new();
            for i in 0..cols.len() - 1 {
                let gap = means[i] - means[i + 1];
                let se = (variance(&cols[i]) / 3.0 + variance(&cols[i + 1]) / 3.0).sqrt();
                pass &= gap > se;
                gaps.push(format!("{:.2}σ", gap / se));
            }
            parts.push(format!(
                "{label} means {} over {{3,5,7,9}}, adjacent drops {}",
                means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join("/"),
                gaps.join(", ")
            ));
        }
        (pass, format!("{} (each drop must exceed 1σ of the seed noise)", parts.join("; ")))
    }));

    outcomes.push(timed("flow-noise trend", || {
        let amplitudes = [0.0, 1.0, 2.0, 3.0, 4.0];
        let rows = flow_noise_sweep(&flat, &config, &amplitudes, &[0, 1], |_, _| {}).unwrap();
        let mut pass = true;
        let mut parts = Vec::new();
        for (label, pick) in [
            ("depth relative error [%]", (|r: &SweepRow| 100.0 * r.report.depth_relative_error) as fn(&SweepRow) -> f64),
            ("normal angle [°]", |r: &SweepRow| r.report.normal_angle_mean),
        ] {
            let means: Vec<f64> = sweep_columns(&rows, &amplitudes, pick).iter().map(|c| mean(c)).collect();
            let monotone = means.windows(2).all(|w| w[1] >= 0.95 * w[0]);
            let r2 = linear_r2(&amplitudes, &means);
            pass &= monotone && r2 > 0.9;
            parts.push(format!(
                "{label} {} (monotone within 5%: {monotone}, linear R² {r2:.3})",
                means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join("/"),
            ));
        }
        (pass, format!("amplitudes 0..4 px, 2 seeds: {}", parts.join("; ")))
    }));

    outcomes.push(timed("determinism", || {
        let scene = Scene::from_config(&SceneConfig::desk("d", bump_surface(), 24), "d", Path::new(".")).unwrap();
        let idx = scene.held_out_indices()[0];
        let data = TrainingData::from_scene(&scene, &scene.training_indices(), 0.5, 3);
        let mut cfg = config.clone();
        cfg.seed = 17;
        cfg.workers = 1;
        let run = || {
            let (net, hist) = train(&cfg, &data).unwrap();
            let report = evaluate_view(&net, &scene, idx, &cfg).report;
            (write_checkpoint(&net), hist, report)
        };
        let (a, b) = (run(), run());
        let same_metrics = format!("{:?}", a.2) == format!("{:?}", b.2) && a.1 == b.1;
        (
            a.0 == b.0 && same_metrics,
            format!(
                "two single-worker runs: checkpoints identical = {}, loss history and metrics identical = {same_metrics}",
                a.0 == b.0
            ),
        )
    }));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed acceptance checks: {failed:?}");
}

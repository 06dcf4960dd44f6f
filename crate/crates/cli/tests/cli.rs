use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neref::geometry::{PinholeCamera, Vec3};
use neref::io::read_pfm;
use neref::simulator::{Scene, SceneConfig};

fn neref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neref"))
        .args(args)
        .env_remove("NEREF_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = neref(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_flat(dir: &Path, res: usize) -> PathBuf {
    let out = dir.join("flat");
    ok(&["gen-scene", "--preset", "flat", "--resolution", &res.to_string(), "--out", s(&out)]);
    out
}

/// Desk recipe shrunk to a fraction of a second per epoch.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = String::from_utf8(ok(&["train", "--dump-config"]).stdout).unwrap();
    let text: String = text
        .lines()
        .map(|l| match l.split(" = ").next().unwrap() {
            "batch_rays" => "batch_rays = 32".to_string(),
            "coarse_samples" => "coarse_samples = 8".to_string(),
            "fine_samples" => "fine_samples = 8".to_string(),
            "epochs" => "epochs = 1".to_string(),
            _ => l.to_string(),
        })
        .map(|l| l + "\n")
        .collect();
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Every file below `root` except run manifests (timestamps) and `data.json`
/// (records the absolute scene path).
fn stable_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !["manifest.json", "data.json"].contains(&p.file_name().unwrap().to_str().unwrap()) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Straight-line and refracted hits on the pattern plane `z = 0` under flat
/// water of height `h`, by the scalar form of Snell's law.
fn flat_water_points(ray_origin: Vec3, d: Vec3, h: f64, ratio: f64) -> (Vec3, Vec3) {
    let d = d.normalize();
    let dry = ray_origin + d * (-ray_origin.z / d.z);
    let entry = ray_origin + d * ((h - ray_origin.z) / d.z);
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    let sin_t = ratio * horiz;
    let tan_t = sin_t / (1.0 - sin_t * sin_t).sqrt();
    let shift = h * tan_t;
    let (ux, uy) = if horiz > 0.0 { (d.x / horiz, d.y / horiz) } else { (0.0, 0.0) };
    let wet = Vec3::new(entry.x + shift * ux, entry.y + shift * uy, 0.0);
    (dry, wet)
}

#[test]
fn flat_scene_warps_match_closed_form_refraction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen_flat(tmp.path(), 12);
    let cfg = SceneConfig::parse(&fs::read_to_string(dir.join("scene.toml")).unwrap(), "scene").unwrap();
    let scene = Scene::from_config(&cfg, "scene", &dir).unwrap();
    let ratio = cfg.optics.ratio();
    let mut checked = 0;
    for cam in &scene.cameras {
        let warp = read_pfm(&dir.join("cameras").join(&cam.name).join("warp.pfm")).unwrap();
        let c: &PinholeCamera = &cam.camera;
        for row in 0..c.height {
            for col in 0..c.width {
                let px = warp.pixel(col, row);
                if px[2] < 0.5 {
                    continue;
                }
                let ray = c.pixel_center_ray(col, row);
                let (dry, wet) = flat_water_points(ray.origin, ray.direction, 0.2, ratio);
                let expect = c.project(&wet).unwrap() - c.project(&dry).unwrap();
                assert!((px[0] as f64 - expect.x).abs() < 1e-4, "{} ({col},{row}) u", cam.name);
                assert!((px[1] as f64 - expect.y).abs() < 1e-4, "{} ({col},{row}) v", cam.name);
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut trees = Vec::new();
    for run in 0..2 {
        let base = tmp.path().join(format!("run{run}"));
        let scene = gen_flat(&base, 10);
        ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--flow-noise", "0.5", "--out", s(&base.join("train"))]);
        trees.push(stable_files(&base));
    }
    assert!(trees[0].len() > 50);
    assert_eq!(trees[0].keys().collect::<Vec<_>>(), trees[1].keys().collect::<Vec<_>>());
    for (k, v) in &trees[0] {
        assert!(trees[1][k] == *v, "{} differs", k.display());
    }
}

#[test]
fn camera_below_the_water_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let text = fs::read_to_string(scene.join("scene.toml")).unwrap().replacen(
        "cameras = []",
        "cameras = [{ name = \"diver\", position = [0.0, 0.0, 0.1], look_at = [0.0, 0.0, 0.0], \
         fov_deg = 50.0, width = 8, height = 8 }]",
        1,
    );
    let cfg = tmp.path().join("diver.toml");
    fs::write(&cfg, text).unwrap();
    let out = neref(&["gen-scene", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diver"));
}

#[test]
fn existing_output_is_kept_unless_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let marker = scene.join("keep.txt");
    fs::write(&marker, "x").unwrap();
    let out = neref(&["gen-scene", "--preset", "flat", "--resolution", "8", "--out", s(&scene)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--overwrite"));
    assert!(marker.exists());
    ok(&["gen-scene", "--preset", "flat", "--resolution", "8", "--out", s(&scene), "--overwrite"]);
    assert!(!marker.exists());
    assert!(scene.join("scene.toml").exists());
}

#[test]
fn full_preset_dump_shows_the_full_recipe() {
    let text = String::from_utf8(ok(&["train", "--dump-config", "--preset", "full"]).stdout).unwrap();
    for line in ["lambda_ds = 0.15", "batch_rays = 2048", "coarse_samples = 96", "fine_samples = 192"] {
        assert!(text.lines().any(|l| l == line), "missing {line}");
    }
}

#[test]
fn zero_epochs_writes_the_initial_model_only() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--epochs", "0", "--out", s(&run)]);
    assert!(run.join("model.nrfc").is_file());
    assert_eq!(fs::read_dir(run.join("checkpoints")).unwrap().count(), 0);
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1);
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let cfg = tiny_config(tmp.path());
    let straight = tmp.path().join("straight");
    let split = tmp.path().join("split");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--epochs", "2", "--out", s(&straight)]);
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--epochs", "1", "--out", s(&split)]);
    ok(&["train", "--resume", "--epochs", "2", "--out", s(&split)]);
    for f in ["model.nrfc", "loss.csv", "checkpoints/epoch-0002.nrfc"] {
        assert!(fs::read(straight.join(f)).unwrap() == fs::read(split.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn eval_reports_every_metric_for_each_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&run)]);
    let ev = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", s(&run.join("model.nrfc")), "--scene", s(&scene), "--cameras", "heldout,cam04", "--out", s(&ev)]);
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "view,depth_rmse,depth_relative_error,normal_angle_mean,normal_l2_mean,psnr,ssim,pixels"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("heldout,") && lines[2].starts_with("cam04,"));
    for line in &lines[1..] {
        let fields: Vec<f64> = line.split(',').skip(1).map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 7);
        assert!(fields.iter().all(|v| v.is_finite() || *v == f64::INFINITY));
    }
    for f in ["depth.pfm", "normal.pfm", "depth_error.pfm", "angle_error.pfm", "render.png", "reference.png"] {
        assert!(ev.join("cameras/heldout").join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
}

#[test]
fn render_uses_a_swapped_pattern_and_rejects_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&run)]);
    let model = run.join("model.nrfc");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["render", "--checkpoint", s(&model), "--scene", s(&scene), "--camera", "heldout", "--out", s(&a)]);
    let other = tmp.path().join("other.png");
    image::RgbImage::from_fn(5, 3, |x, y| image::Rgb([40 * x as u8, 80 * y as u8, 200])).save(&other).unwrap();
    ok(&[
        "render", "--checkpoint", s(&model), "--scene", s(&scene), "--camera", "heldout",
        "--pattern", s(&other), "--extent", "0.8,0.8", "--out", s(&b),
    ]);
    assert!(fs::read(a.join("depth.pfm")).unwrap() == fs::read(b.join("depth.pfm")).unwrap());
    assert!(fs::read(a.join("render.png")).unwrap() != fs::read(b.join("render.png")).unwrap());

    let missing = neref(&["render", "--checkpoint", s(&tmp.path().join("none.nrfc")), "--config", s(&cfg),
        "--scene", s(&scene), "--camera", "heldout", "--out", s(&tmp.path().join("c"))]);
    assert_eq!(missing.status.code(), Some(1));
    let wider = tmp.path().join("wider.toml");
    fs::write(&wider, fs::read_to_string(&cfg).unwrap().replace("width = 32", "width = 16")).unwrap();
    let mismatch = neref(&["render", "--checkpoint", s(&model), "--config", s(&wider),
        "--scene", s(&scene), "--camera", "heldout", "--out", s(&tmp.path().join("d"))]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("version mismatch"));
}

#[test]
fn camera_sweep_writes_one_row_per_count() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = gen_flat(tmp.path(), 8);
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--kind", "cameras", "--scene", s(&scene), "--config", s(&cfg), "--values", "9,5,3", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("cameras/sweep.csv")).unwrap();
    let counts: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(counts, ["9", "5", "3"]);
    assert!(out.join("cameras/cameras=3/seed-0.nrfc").is_file());
    // the sweep's config travels with its checkpoints
    ok(&["eval", "--checkpoint", s(&out.join("cameras/cameras=3/seed-0.nrfc")), "--scene", s(&scene),
        "--cameras", "heldout", "--out", s(&tmp.path().join("ev"))]);

    let bad = neref(&["sweep", "--kind", "noise", "--scene", s(&scene), "--config", s(&cfg), "--values", "2,1",
        "--out", s(&tmp.path().join("bad"))]);
    assert_eq!(bad.status.code(), Some(1));
}

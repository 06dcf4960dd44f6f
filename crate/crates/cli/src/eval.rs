use std::path::PathBuf;

use clap::Args;

use neref::evaluation::{evaluate_view, write_metrics_csv};
use neref::grid::Grid;
use neref::io::{write_pfm, write_png};

use crate::common::{
    config_for_checkpoint, create_dir, depth_pfm, load_network, normal_pfm, parse_list, prepare_out, relative,
    resolve_out, SceneDir, CAMERAS_DIR,
};
use crate::error::CliResult;
use crate::manifest::{snapshot, unix_now, RunManifest};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (e.g. <run>/model.nrfc).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene directory holding the ground truth.
    #[arg(long)]
    pub scene: PathBuf,
    /// Training TOML [default: config.toml of the checkpoint's run].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated camera names [default: every camera].
    #[arg(long)]
    pub cameras: Option<String>,
    /// Output directory [default: $NEREF_OUTPUT_ROOT/eval].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

pub fn run(args: EvalArgs) -> CliResult<PathBuf> {
    let started = unix_now();
    let config = config_for_checkpoint(&args.checkpoint, args.config.as_deref())?;
    let net = load_network(&args.checkpoint, &config)?;
    let scene = SceneDir::load(&args.scene)?;
    let indices: Vec<usize> = match &args.cameras {
        Some(list) => parse_list::<String>(list, "camera name")?
            .iter()
            .map(|n| scene.camera_index(n))
            .collect::<CliResult<_>>()?,
        None => (0..scene.scene.cameras.len()).collect(),
    };
    let out = resolve_out(args.out, "eval");
    prepare_out(&out, args.overwrite)?;
    let mut artifacts = Vec::new();
    let mut rows = Vec::new();
    for i in indices {
        let cam = &scene.scene.cameras[i];
        let ev = evaluate_view(&net, &scene.scene, i, &config);
        let dir = out.join(CAMERAS_DIR).join(&cam.name);
        create_dir(&dir)?;
        let masked = |g: &Grid<f64>| Grid::from_fn(g.width, g.height, |c, r| if *ev.mask.get(c, r) { *g.get(c, r) } else { 0.0 });
        write_pfm(&dir.join("depth.pfm"), &depth_pfm(&ev.prediction.depth))?;
        write_pfm(&dir.join("normal.pfm"), &normal_pfm(&ev.prediction.normal))?;
        write_pfm(&dir.join("depth_error.pfm"), &depth_pfm(&masked(&ev.errors.relative_error_map)))?;
        write_pfm(&dir.join("angle_error.pfm"), &depth_pfm(&masked(&ev.errors.angle_map)))?;
        write_png(&dir.join("render.png"), &ev.rendered)?;
        write_png(&dir.join("reference.png"), &ev.reference)?;
        for name in ["depth.pfm", "normal.pfm", "depth_error.pfm", "angle_error.pfm", "render.png", "reference.png"] {
            artifacts.push(relative(&out, &dir.join(name)));
        }
        let r = ev.report;
        eprintln!(
            "{}: depth RMSE {:.4e} m, relative {:.3}%, normal {:.3}°, PSNR {:.2} dB, SSIM {:.4}",
            cam.name,
            r.depth_rmse,
            100.0 * r.depth_relative_error,
            r.normal_angle_mean,
            r.psnr,
            r.ssim
        );
        rows.push((cam.name.clone(), r));
    }
    let metrics = out.join("metrics.csv");
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows)?;
    crate::common::write_text(&metrics, &String::from_utf8(buf).expect("CSV is UTF-8"))?;
    artifacts.push("metrics.csv".into());
    RunManifest::new("eval", Some(config.seed), snapshot(&config), started).write(&out, artifacts)?;
    Ok(out)
}

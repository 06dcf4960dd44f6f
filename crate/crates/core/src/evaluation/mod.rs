//! Error metrics against simulator ground truth, view synthesis from a
//! trained field, and the camera-count and flow-noise ablations.

mod metrics;
mod render;

pub use metrics::{
    depth_normal_errors, image_metrics, mean_abs_diff, normal_angle_deg, psnr, ssim, GeometryErrors, ShapeMismatch,
};
pub use render::{predict_view, render_from_field, render_from_maps, FieldPrediction};

use std::io::Write;

use thiserror::Error;

use crate::field::NeRefNetwork;
use crate::grid::{ColorImage, Grid};
use crate::simulator::Scene;
use crate::training::{train, TrainConfig, TrainError, TrainingData};

/// Scalar summary of one evaluated view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub depth_rmse: f64,
    pub depth_relative_error: f64,
    pub normal_angle_mean: f64,
    pub normal_l2_mean: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Pixels entering the geometric statistics.
    pub pixels: usize,
}

/// Full evaluation of one camera: summary, maps and both images.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEvaluation {
    pub report: MetricsReport,
    pub errors: GeometryErrors,
    pub prediction: FieldPrediction,
    pub mask: Grid<bool>,
    pub rendered: ColorImage,
    pub reference: ColorImage,
}

/// Compares the field against the simulator on camera `index`. Geometry is
/// scored on pixels whose true ray lands inside the pattern and whose
/// predicted normal is defined; images are compared in full.
pub fn evaluate_view(network: &NeRefNetwork, scene: &Scene, index: usize, config: &TrainConfig) -> ViewEvaluation {
    let camera = &scene.cameras[index].camera;
    let truth = scene.render_view(index, true);
    let slab = crate::field::Slab::around_water(scene.surface.max_height(), config.slab_margin);
    let prediction = predict_view(network, camera, &slab, &config.schedule());
    let mask = Grid::from_fn(camera.width, camera.height, |c, r| {
        *truth.warp.valid.get(c, r) && *prediction.valid.get(c, r)
    });
    let errors = depth_normal_errors(&prediction.depth, &prediction.normal, &truth.depth, &truth.normal, &mask)
        .expect("prediction and truth share the camera resolution");
    let rendered = render_from_maps(
        camera,
        &prediction.depth,
        &prediction.normal,
        &prediction.valid,
        &scene.pattern,
        &scene.plane,
        &scene.constants,
    );
    let (psnr, ssim) = image_metrics(&rendered, &truth.image).expect("same resolution");
    ViewEvaluation {
        report: MetricsReport {
            depth_rmse: errors.depth_rmse,
            depth_relative_error: errors.depth_relative_error,
            normal_angle_mean: errors.normal_angle_mean,
            normal_l2_mean: errors.normal_l2_mean,
            psnr,
            ssim,
            pixels: errors.pixels,
        },
        errors,
        prediction,
        mask,
        rendered,
        reference: truth.image,
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs {needed} training cameras but the scene has {available}")]
    InsufficientCameras { needed: usize, available: usize },
    #[error("scene has no held-out camera to evaluate on")]
    NoHeldOutCamera,
    #[error("noise amplitudes must be non-negative and ascending")]
    BadAmplitudes,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One trained-and-evaluated sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Camera count or noise amplitude (pixels).
    pub value: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

fn held_out(scene: &Scene) -> Result<usize, SweepError> {
    scene.held_out_indices().first().copied().ok_or(SweepError::NoHeldOutCamera)
}

fn train_and_score(
    scene: &Scene,
    data: &TrainingData,
    config: &TrainConfig,
    seed: u64,
    eval_index: usize,
) -> Result<(NeRefNetwork, MetricsReport), SweepError> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    cfg.init.seed = seed;
    let (net, _) = train(&cfg, data)?;
    let report = evaluate_view(&net, scene, eval_index, &cfg).report;
    Ok((net, report))
}

/// Retrains from scratch on nested, centered-first camera subsets and scores
/// each run on the held-out camera. `on_point` sees every finished run.
pub fn camera_count_sweep(
    scene: &Scene,
    config: &TrainConfig,
    counts: &[usize],
    seeds: &[u64],
    mut on_point: impl FnMut(&SweepRow, &NeRefNetwork),
) -> Result<Vec<SweepRow>, SweepError> {
    let order = scene.centered_training_order();
    let needed = counts.iter().copied().max().unwrap_or(0);
    if needed > order.len() || counts.contains(&0) {
        return Err(SweepError::InsufficientCameras {
            needed,
            available: order.len(),
        });
    }
    let eval = held_out(scene)?;
    let mut rows = Vec::new();
    for &count in counts {
        let data = TrainingData::from_scene(scene, &order[..count], 0.0, 0);
        for &seed in seeds {
            let (net, report) = train_and_score(scene, &data, config, seed, eval)?;
            let row = SweepRow {
                value: count as f64,
                seed,
                report,
            };
            on_point(&row, &net);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Trains on every training camera with Gaussian noise of each amplitude
/// (pixels) added to the warps, scoring on the held-out camera.
pub fn flow_noise_sweep(
    scene: &Scene,
    config: &TrainConfig,
    amplitudes: &[f64],
    seeds: &[u64],
    mut on_point: impl FnMut(&SweepRow, &NeRefNetwork),
) -> Result<Vec<SweepRow>, SweepError> {
    if amplitudes.iter().any(|a| !(*a >= 0.0)) || amplitudes.windows(2).any(|w| w[1] < w[0]) {
        return Err(SweepError::BadAmplitudes);
    }
    let eval = held_out(scene)?;
    let cams = scene.training_indices();
    let mut rows = Vec::new();
    for &amp in amplitudes {
        for &seed in seeds {
            let data = TrainingData::from_scene(scene, &cams, amp, seed);
            let (net, report) = train_and_score(scene, &data, config, seed, eval)?;
            let row = SweepRow {
                value: amp,
                seed,
                report,
            };
            on_point(&row, &net);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Formats a float for CSV; infinities become `inf`.
pub fn csv_number(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

pub const METRICS_HEADER: &str = "depth_rmse,depth_relative_error,normal_angle_mean,normal_l2_mean,psnr,ssim,pixels";

fn metrics_fields(r: &MetricsReport) -> String {
    [
        r.depth_rmse,
        r.depth_relative_error,
        r.normal_angle_mean,
        r.normal_l2_mean,
        r.psnr,
        r.ssim,
    ]
    .iter()
    .map(|v| csv_number(*v))
    .chain(std::iter::once(r.pixels.to_string()))
    .collect::<Vec<_>>()
    .join(",")
}

/// `<label>,depth_rmse,...` with one row per labeled report.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[(String, MetricsReport)]) -> std::io::Result<()> {
    writeln!(out, "view,{METRICS_HEADER}")?;
    for (label, r) in rows {
        writeln!(out, "{label},{}", metrics_fields(r))?;
    }
    Ok(())
}

/// `<param>,seed,depth_rmse,...` with one row per sweep point.
pub fn write_sweep_csv<W: Write>(mut out: W, param: &str, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{param},seed,{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{}", csv_number(r.value), r.seed, metrics_fields(&r.report))?;
    }
    Ok(())
}

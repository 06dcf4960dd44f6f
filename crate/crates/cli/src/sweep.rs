use std::path::PathBuf;

use clap::{Args, ValueEnum};

use neref::evaluation::{camera_count_sweep, flow_noise_sweep, write_sweep_csv, SweepError, SweepRow};
use neref::field::NeRefNetwork;
use neref::io::{save_checkpoint, to_toml};
use neref::training::TrainError;

use crate::common::{create_dir, load_train_config, parse_list, prepare_out, relative, resolve_out, write_text, Preset, SceneDir, CONFIG_FILE};
use crate::error::{CliError, CliResult};
use crate::manifest::{snapshot, unix_now, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Retrain on nested camera subsets of growing size.
    Cameras,
    /// Retrain with Gaussian flow noise of growing amplitude.
    Noise,
}

impl SweepKind {
    fn param(self) -> &'static str {
        match self {
            SweepKind::Cameras => "cameras",
            SweepKind::Noise => "amplitude",
        }
    }

    fn dir_name(self) -> &'static str {
        match self {
            SweepKind::Cameras => "cameras",
            SweepKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    /// Scene directory; the sweep scores its first held-out camera.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Comma-separated sweep values [default: 9,7,5,3 cameras or 0,1,2,3,4 px].
    #[arg(long)]
    pub values: Option<String>,
    /// Comma-separated seeds; every value is trained once per seed.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory [default: $NEREF_OUTPUT_ROOT/sweep].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

fn sweep_error(e: SweepError) -> CliError {
    match e {
        SweepError::Train(TrainError::Diverged { iteration, .. }) => {
            CliError::Runtime(format!("a sweep run diverged at iteration {iteration}"))
        }
        SweepError::Train(e @ TrainError::Autodiff(_)) => CliError::Runtime(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn value_label(kind: SweepKind, v: f64) -> String {
    match kind {
        SweepKind::Cameras => format!("{}", v as usize),
        SweepKind::Noise => format!("{v}"),
    }
}

pub fn run(args: SweepArgs) -> CliResult<PathBuf> {
    let started = unix_now();
    let mut config = load_train_config(args.config.as_deref(), args.preset)?;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config
        .validate()
        .map_err(|(field, msg)| CliError::Validation(format!("invalid training configuration: {field}: {msg}")))?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    if seeds.is_empty() {
        return Err(CliError::Validation("--seeds is empty".into()));
    }
    let scene = SceneDir::load(&args.scene)?;

    let out = resolve_out(args.out, "sweep");
    prepare_out(&out, args.overwrite)?;
    let root = out.join(args.kind.dir_name());
    create_dir(&root)?;
    write_text(&root.join(CONFIG_FILE), &to_toml(&config))?;

    let mut artifacts = vec![relative(&out, &root.join(CONFIG_FILE))];
    let mut failure: Option<CliError> = None;
    let kind = args.kind;
    let mut on_point = |row: &SweepRow, net: &NeRefNetwork| {
        if failure.is_some() {
            return;
        }
        let point = root.join(format!("{}={}", kind.param(), value_label(kind, row.value)));
        let ckpt = point.join(format!("seed-{}.nrfc", row.seed));
        let result = create_dir(&point)
            .and_then(|_| save_checkpoint(&ckpt, net).map_err(|e| CliError::Runtime(e.to_string())))
            .and_then(|_| {
                let mut point_cfg = config.clone();
                point_cfg.seed = row.seed;
                point_cfg.init.seed = row.seed;
                RunManifest::new("sweep", Some(row.seed), snapshot(&point_cfg), started)
                    .write(&point, vec![format!("seed-{}.nrfc", row.seed)])
            });
        match result {
            Ok(()) => artifacts.push(relative(&out, &ckpt)),
            Err(e) => failure = Some(e),
        }
        eprintln!(
            "{}={} seed {}: depth RMSE {:.4e} m, relative {:.3}%, normal {:.3}°",
            kind.param(),
            value_label(kind, row.value),
            row.seed,
            row.report.depth_rmse,
            100.0 * row.report.depth_relative_error,
            row.report.normal_angle_mean
        );
    };
    let rows = match kind {
        SweepKind::Cameras => {
            let counts: Vec<usize> = parse_list(args.values.as_deref().unwrap_or("9,7,5,3"), "camera count")?;
            camera_count_sweep(&scene.scene, &config, &counts, &seeds, &mut on_point)
        }
        SweepKind::Noise => {
            let amps: Vec<f64> = parse_list(args.values.as_deref().unwrap_or("0,1,2,3,4"), "noise amplitude")?;
            flow_noise_sweep(&scene.scene, &config, &amps, &seeds, &mut on_point)
        }
    }
    .map_err(sweep_error)?;
    if let Some(e) = failure {
        return Err(e);
    }

    let csv = root.join("sweep.csv");
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, kind.param(), &rows)?;
    write_text(&csv, &String::from_utf8(buf).expect("CSV is UTF-8"))?;
    artifacts.push(relative(&out, &csv));
    RunManifest::new("sweep", Some(config.seed), snapshot(&config), started).write(&out, artifacts)?;
    Ok(out)
}

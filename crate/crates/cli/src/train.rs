use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use neref::io::{save_checkpoint, to_toml};
use neref::simulator::inject_flow_noise;
use neref::training::{
    build_targets, read_state, save_history_csv, write_state, TrainConfig, TrainError, Trainer, TrainingData,
    TrainingView,
};

use crate::common::{
    create_dir, load_train_config, parse_list, prepare_out, relative, resolve_out, write_text, Preset, SceneDir,
    CONFIG_FILE, MODEL_FILE, STATE_FILE,
};
use crate::error::{io_at, CliError, CliResult};
use crate::manifest::{snapshot, unix_now, RunManifest};

const DATA_FILE: &str = "data.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory written by gen-scene (recorded in the run for --resume).
    #[arg(long, required_unless_present_any = ["dump_config", "resume"])]
    pub scene: Option<PathBuf>,
    /// Training TOML; without it the --preset recipe is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides both the training and the initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on the count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Standard deviation (pixels) of Gaussian noise added to the stored warps.
    #[arg(long, default_value_t = 0.0)]
    pub flow_noise: f64,
    /// Comma-separated camera names [default: every training camera].
    #[arg(long)]
    pub cameras: Option<String>,
    /// Continue the run in --out from its last completed epoch.
    #[arg(long)]
    pub resume: bool,
    /// Output directory [default: $NEREF_OUTPUT_ROOT/train].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Data selection of a run, kept next to the run so `--resume` rebuilds
/// exactly the same targets.
#[derive(Debug, Serialize, Deserialize)]
struct DataSelection {
    scene: PathBuf,
    cameras: Vec<String>,
    flow_noise: f64,
    noise_seed: u64,
}

enum Stop {
    Train(TrainError),
    Cli(CliError),
}

impl From<TrainError> for Stop {
    fn from(e: TrainError) -> Self {
        Stop::Train(e)
    }
}

impl From<CliError> for Stop {
    fn from(e: CliError) -> Self {
        Stop::Cli(e)
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::NoData => CliError::Validation(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn build_data(scene: &SceneDir, sel: &DataSelection) -> CliResult<TrainingData> {
    if !(sel.flow_noise >= 0.0 && sel.flow_noise.is_finite()) {
        return Err(CliError::Validation("--flow-noise must be a non-negative number".into()));
    }
    let mut views = Vec::with_capacity(sel.cameras.len());
    for name in &sel.cameras {
        let i = scene.camera_index(name)?;
        let warp = scene.warp(i)?;
        let warp = inject_flow_noise(&warp, sel.flow_noise, sel.noise_seed.wrapping_add(i as u64));
        let camera = scene.scene.cameras[i].camera.clone();
        views.push(TrainingView {
            targets: build_targets(&camera, &warp, &scene.scene.plane),
            camera,
        });
    }
    Ok(TrainingData {
        views,
        water_top: scene.scene.surface.max_height(),
        plane: scene.scene.plane,
        constants: scene.scene.constants,
    })
}

fn effective_config(args: &TrainArgs, mut cfg: TrainConfig) -> CliResult<TrainConfig> {
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.init.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()
        .map_err(|(field, msg)| CliError::Validation(format!("invalid training configuration: {field}: {msg}")))?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> CliResult<Option<PathBuf>> {
    let started = unix_now();
    if args.dump_config {
        let cfg = effective_config(&args, load_train_config(args.config.as_deref(), args.preset)?)?;
        print!("{}", to_toml(&cfg));
        return Ok(None);
    }
    let out = resolve_out(args.out.clone(), "train");
    let (config, selection) = if args.resume {
        let cfg_path = out.join(CONFIG_FILE);
        let data_path = out.join(DATA_FILE);
        for p in [&cfg_path, &data_path, &out.join(STATE_FILE)] {
            if !p.is_file() {
                return Err(CliError::missing(p, "nothing to resume"));
            }
        }
        let cfg = effective_config(&args, load_train_config(Some(&cfg_path), args.preset)?)?;
        let text = io_at(&data_path, std::fs::read_to_string(&data_path))?;
        let sel: DataSelection = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", data_path.display())))?;
        (cfg, sel)
    } else {
        let scene_dir = args.scene.clone().expect("clap enforces --scene");
        let cfg = effective_config(&args, load_train_config(args.config.as_deref(), args.preset)?)?;
        let scene = SceneDir::load(&scene_dir)?;
        let cameras = match &args.cameras {
            Some(list) => parse_list::<String>(list, "camera name")?,
            None => scene
                .scene
                .training_indices()
                .into_iter()
                .map(|i| scene.scene.cameras[i].name.clone())
                .collect(),
        };
        if cameras.is_empty() {
            return Err(CliError::Validation("no training cameras selected".into()));
        }
        let sel = DataSelection {
            scene: std::fs::canonicalize(&scene_dir).unwrap_or(scene_dir),
            cameras,
            flow_noise: args.flow_noise,
            noise_seed: cfg.seed,
        };
        (cfg, sel)
    };
    let scene = SceneDir::load(&selection.scene)?;
    let data = build_data(&scene, &selection)?;

    let mut trainer = if args.resume {
        let bytes = io_at(&out.join(STATE_FILE), std::fs::read(out.join(STATE_FILE)))?;
        let state = read_state(&bytes).map_err(|e| CliError::Validation(format!("{STATE_FILE}: {e}")))?;
        Trainer::resume(config.clone(), &data, state).map_err(train_error)?
    } else {
        prepare_out(&out, args.overwrite)?;
        Trainer::new(config.clone(), &data).map_err(train_error)?
    };
    write_text(&out.join(CONFIG_FILE), &to_toml(&config))?;
    write_text(
        &out.join(DATA_FILE),
        &(serde_json::to_string_pretty(&selection).expect("selection serializes") + "\n"),
    )?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let loss_path = out.join("loss.csv");
    save_history_csv(&loss_path, &trainer.history)?;

    let total = config.epochs;
    let result = trainer.run(|t| -> Result<(), Stop> {
        let path = ckpt_dir.join(format!("epoch-{:04}.nrfc", t.epoch));
        save_checkpoint(&path, &t.network).map_err(|e| CliError::Runtime(e.to_string()))?;
        io_at(&out.join(STATE_FILE), std::fs::write(out.join(STATE_FILE), write_state(&t.state())))?;
        io_at(&loss_path, save_history_csv(&loss_path, &t.history))?;
        if let Some(last) = t.history.last() {
            eprintln!(
                "epoch {}/{total}: L_tol {:.4e} (L_corr {:.4e}, L_ds {:.4e}) after {} iterations",
                t.epoch, last.l_tol, last.l_corr, last.l_ds, last.iteration
            );
        }
        Ok(())
    });
    let manifest = RunManifest::new("train", Some(config.seed), snapshot(&config), started);
    let listing = |out: &std::path::Path| -> CliResult<Vec<String>> {
        let mut files = vec![CONFIG_FILE.to_string(), DATA_FILE.to_string(), "loss.csv".to_string()];
        for entry in io_at(&ckpt_dir, std::fs::read_dir(&ckpt_dir))? {
            files.push(relative(out, &entry?.path()));
        }
        for extra in [MODEL_FILE, STATE_FILE, "diverged.nrfc"] {
            if out.join(extra).is_file() {
                files.push(extra.to_string());
            }
        }
        Ok(files)
    };
    match result {
        Ok(()) => {
            save_checkpoint(&out.join(MODEL_FILE), &trainer.network).map_err(|e| CliError::Runtime(e.to_string()))?;
            manifest.write(&out, listing(&out)?)?;
            Ok(Some(out))
        }
        Err(Stop::Train(TrainError::Diverged { iteration, last_good })) => {
            save_checkpoint(&out.join("diverged.nrfc"), &last_good).map_err(|e| CliError::Runtime(e.to_string()))?;
            manifest.write(&out, listing(&out)?)?;
            Err(CliError::Runtime(format!(
                "loss diverged at iteration {iteration}; last finite parameters saved to diverged.nrfc"
            )))
        }
        Err(Stop::Train(e)) => Err(train_error(e)),
        Err(Stop::Cli(e)) => Err(e),
    }
}

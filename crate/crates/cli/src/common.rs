use std::path::{Path, PathBuf};

use clap::ValueEnum;

use neref::field::NeRefNetwork;
use neref::geometry::Vec3;
use neref::grid::Grid;
use neref::io::{load_checkpoint, read_pfm, PfmImage};
use neref::simulator::{Scene, SceneConfig, WarpField};
use neref::training::TrainConfig;

use crate::error::{io_at, CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "NEREF_OUTPUT_ROOT";
pub const SCENE_FILE: &str = "scene.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.nrfc";
pub const STATE_FILE: &str = "state.bin";
pub const CAMERAS_DIR: &str = "cameras";

/// `--out` if given, else `$NEREF_OUTPUT_ROOT/<default>` (root `runs`).
pub fn resolve_out(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
        root.join(default)
    })
}

/// Creates `dir`, refusing to touch a non-empty directory unless
/// `overwrite` is set, in which case its contents are replaced.
pub fn prepare_out(dir: &Path, overwrite: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = !dir.is_dir() || io_at(dir, std::fs::read_dir(dir))?.next().is_some();
        if occupied {
            if !overwrite {
                return Err(CliError::Validation(format!(
                    "{} already exists; pass --overwrite to replace it",
                    dir.display()
                )));
            }
            if dir.is_dir() {
                io_at(dir, std::fs::remove_dir_all(dir))?;
            } else {
                io_at(dir, std::fs::remove_file(dir))?;
            }
        }
    }
    io_at(dir, std::fs::create_dir_all(dir))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    io_at(dir, std::fs::create_dir_all(dir))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    io_at(path, std::fs::write(path, text))
}

/// Relative path of `path` below `root`, with `/` separators.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Scene directory written by `gen-scene`.
pub struct SceneDir {
    pub dir: PathBuf,
    pub scene: Scene,
}

impl SceneDir {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(SCENE_FILE);
        if !path.is_file() {
            return Err(CliError::missing(&path, "not a scene directory (run gen-scene first)"));
        }
        let text = io_at(&path, std::fs::read_to_string(&path))?;
        let origin = path.display().to_string();
        let config = SceneConfig::parse(&text, &origin)?;
        let scene = Scene::from_config(&config, &origin, dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            scene,
        })
    }

    pub fn camera_dir(&self, index: usize) -> PathBuf {
        self.dir.join(CAMERAS_DIR).join(&self.scene.cameras[index].name)
    }

    pub fn camera_index(&self, name: &str) -> CliResult<usize> {
        self.scene
            .cameras
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| {
                let names: Vec<&str> = self.scene.cameras.iter().map(|c| c.name.as_str()).collect();
                CliError::Validation(format!("unknown camera '{name}' (scene has {})", names.join(", ")))
            })
    }

    /// Reads the stored warp of camera `index`.
    pub fn warp(&self, index: usize) -> CliResult<WarpField> {
        let path = self.camera_dir(index).join("warp.pfm");
        if !path.is_file() {
            return Err(CliError::missing(&path, "warp field"));
        }
        let pfm = read_pfm(&path)?;
        let cam = &self.scene.cameras[index].camera;
        if pfm.channels != 3 || pfm.width != cam.width || pfm.height != cam.height {
            return Err(CliError::Validation(format!(
                "{}: expected a 3-channel {}x{} warp, found {} channel(s) at {}x{}",
                path.display(),
                cam.width,
                cam.height,
                pfm.channels,
                pfm.width,
                pfm.height
            )));
        }
        Ok(pfm_to_warp(&pfm))
    }
}

pub fn depth_pfm(depth: &Grid<f64>) -> PfmImage {
    PfmImage::new(depth.width, depth.height, 1, depth.data.iter().map(|&v| v as f32).collect())
}

pub fn normal_pfm(normal: &Grid<Vec3>) -> PfmImage {
    let data = normal.data.iter().flat_map(|n| n.iter().map(|&v| v as f32)).collect();
    PfmImage::new(normal.width, normal.height, 3, data)
}

/// Displacement in the first two channels, validity (0/1) in the third.
pub fn warp_pfm(warp: &WarpField) -> PfmImage {
    let data = warp
        .disp
        .data
        .iter()
        .zip(&warp.valid.data)
        .flat_map(|(d, &ok)| {
            if ok {
                [d[0] as f32, d[1] as f32, 1.0]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
        .collect();
    PfmImage::new(warp.disp.width, warp.disp.height, 3, data)
}

pub fn pfm_to_warp(pfm: &PfmImage) -> WarpField {
    let (w, h) = (pfm.width, pfm.height);
    WarpField {
        disp: Grid::from_fn(w, h, |c, r| {
            let p = pfm.pixel(c, r);
            [p[0] as f64, p[1] as f64]
        }),
        valid: Grid::from_fn(w, h, |c, r| pfm.pixel(c, r)[2] > 0.5),
    }
}

/// Built-in training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small network and sample budget for desk-scale scenes on one core.
    Desk,
    /// Full-size network and sampling recipe.
    Full,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Full => TrainConfig::default(),
        }
    }
}

pub fn load_train_config(path: Option<&Path>, preset: Preset) -> CliResult<TrainConfig> {
    match path {
        Some(p) => {
            let text = io_at(p, std::fs::read_to_string(p))?;
            Ok(TrainConfig::parse(&text, &p.display().to_string())?)
        }
        None => Ok(preset.config()),
    }
}

/// Loads a checkpoint and checks it against `config`'s architecture.
pub fn load_network(path: &Path, config: &TrainConfig) -> CliResult<NeRefNetwork> {
    if !path.is_file() {
        return Err(CliError::missing(path, "checkpoint"));
    }
    let net = load_checkpoint(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if *net.arch() != config.arch {
        return Err(CliError::Validation(format!(
            "version mismatch: checkpoint {} has architecture {:?} but the configuration expects {:?}",
            path.display(),
            net.arch(),
            config.arch
        )));
    }
    Ok(net)
}

/// Training configuration of a run directory, or of the directory holding
/// `checkpoint` when `explicit` is absent.
pub fn config_for_checkpoint(checkpoint: &Path, explicit: Option<&Path>) -> CliResult<TrainConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let mut candidate = dir.join(CONFIG_FILE);
            if !candidate.is_file() {
                if let Some(up) = dir.parent() {
                    candidate = up.join(CONFIG_FILE);
                }
            }
            candidate
        }
    };
    if !path.is_file() {
        return Err(CliError::missing(&path, "training configuration (pass --config)"));
    }
    load_train_config(Some(&path), Preset::Desk)
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("invalid {what} '{}'", s.trim())))
        })
        .collect()
}

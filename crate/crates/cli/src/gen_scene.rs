use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use neref::io::{to_toml, write_pfm, write_png};
use neref::simulator::{PatternConfig, Scene, SceneConfig, WaveComponent, WaveSurface};

use crate::common::{
    create_dir, depth_pfm, normal_pfm, prepare_out, relative, resolve_out, warp_pfm, write_text, CAMERAS_DIR,
    SCENE_FILE,
};
use crate::error::{io_at, CliError, CliResult};
use crate::manifest::{snapshot, unix_now, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenePreset {
    /// Flat water 0.2 m deep.
    Flat,
    /// Flat water with a 2 cm Gaussian bump at the tank center.
    Bump,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// Scene TOML; mutually exclusive with --preset.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in desk-scale scene (3×3 rig plus one held-out camera).
    #[arg(long, value_enum)]
    pub preset: Option<ScenePreset>,
    /// Image size of preset cameras.
    #[arg(long, default_value_t = 64, requires = "preset")]
    pub resolution: usize,
    /// Output directory [default: $NEREF_OUTPUT_ROOT/<scene name>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

fn preset_config(preset: ScenePreset, resolution: usize) -> SceneConfig {
    match preset {
        ScenePreset::Flat => SceneConfig::desk("flat", WaveSurface::flat(0.2), resolution),
        ScenePreset::Bump => SceneConfig::desk(
            "bump",
            WaveSurface {
                base_height: 0.2,
                time: 0.0,
                waves: vec![WaveComponent::Gaussian {
                    amplitude: 0.02,
                    sigma: 0.1,
                    center: [0.0, 0.0],
                    velocity: [0.0, 0.0],
                }],
            },
            resolution,
        ),
    }
}

pub fn run(args: GenSceneArgs) -> CliResult<PathBuf> {
    let started = unix_now();
    let (mut config, base_dir) = match (&args.config, args.preset) {
        (Some(path), _) => {
            let text = io_at(path, std::fs::read_to_string(path))?;
            let cfg = SceneConfig::parse(&text, &path.display().to_string())?;
            (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        (None, Some(p)) => (preset_config(p, args.resolution), PathBuf::from(".")),
        (None, None) => return Err(CliError::Validation("pass --config or --preset".into())),
    };
    let origin = args
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "preset".into());
    let scene = Scene::from_config(&config, &origin, &base_dir)?;

    let default_name = if config.name.is_empty() { "scene" } else { config.name.as_str() };
    let out = resolve_out(args.out, default_name);
    prepare_out(&out, args.overwrite)?;
    let mut artifacts = Vec::new();

    // the copied scene must stand alone, so image patterns travel with it
    let pattern_path = out.join("pattern.png");
    write_png(&pattern_path, &scene.pattern.image)?;
    artifacts.push(relative(&out, &pattern_path));
    if let PatternConfig::Image { path, .. } = &mut config.pattern {
        *path = "pattern.png".into();
    }
    let scene_path = out.join(SCENE_FILE);
    write_text(&scene_path, &to_toml(&config))?;
    artifacts.push(relative(&out, &scene_path));

    for (i, cam) in scene.cameras.iter().enumerate() {
        let dir = out.join(CAMERAS_DIR).join(&cam.name);
        create_dir(&dir)?;
        let wet = scene.render_view(i, true);
        let dry = scene.render_view(i, false);
        write_png(&dir.join("wet.png"), &wet.image)?;
        write_png(&dir.join("dry.png"), &dry.image)?;
        write_pfm(&dir.join("depth.pfm"), &depth_pfm(&wet.depth))?;
        write_pfm(&dir.join("normal.pfm"), &normal_pfm(&wet.normal))?;
        write_pfm(&dir.join("warp.pfm"), &warp_pfm(&wet.warp))?;
        for name in ["wet.png", "dry.png", "depth.pfm", "normal.pfm", "warp.pfm"] {
            artifacts.push(relative(&out, &dir.join(name)));
        }
    }
    RunManifest::new("gen-scene", None, snapshot(&config), started).write(&out, artifacts)?;
    Ok(out)
}

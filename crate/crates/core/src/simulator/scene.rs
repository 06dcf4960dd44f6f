use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pattern::Pattern;
use super::wave::WaveSurface;
use crate::geometry::{PinholeCamera, ReferencePlane, RefractionConstants, Vec3};
use crate::io::{parse_toml, read_png, ConfigError};

pub const SCENE_CONFIG_VERSION: u32 = 1;

/// Regular grid of downward-looking cameras plus one held-out view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighboring grid cameras (m).
    pub spacing: f64,
    /// Camera height above the pattern (m).
    pub elevation: f64,
    #[serde(default)]
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Held-out camera position relative to the rig center; omit for none.
    #[serde(default)]
    pub held_out_offset: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub name: String,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub held_out: bool,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PatternConfig {
    Checker {
        texels: usize,
        cell: usize,
        #[serde(default)]
        flip_probability: f64,
        #[serde(default)]
        seed: u64,
        extent: [f64; 2],
    },
    /// PNG path, resolved relative to the config file.
    Image { path: String, extent: [f64; 2] },
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig::Checker {
            texels: 40,
            cell: 2,
            flip_probability: 0.25,
            seed: 7,
            extent: [1.0, 1.0],
        }
    }
}

/// Versioned scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub optics: RefractionConstants,
    #[serde(default)]
    pub rig: Option<RigConfig>,
    #[serde(default)]
    pub cameras: Vec<CameraConfig>,
    pub surface: WaveSurface,
    #[serde(default)]
    pub pattern: PatternConfig,
}

impl SceneConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: SceneConfig = parse_toml(text, origin)?;
        if cfg.version != SCENE_CONFIG_VERSION {
            return Err(ConfigError::Version {
                path: origin.to_string(),
                found: cfg.version,
                expected: SCENE_CONFIG_VERSION,
            });
        }
        Ok(cfg)
    }

    /// Desk-scale tank: 1 m × 1 m pattern, water at `base_height`, a 3×3 rig
    /// 0.6 m above the pattern and one held-out camera between grid positions.
    pub fn desk(name: &str, surface: WaveSurface, resolution: usize) -> Self {
        Self {
            version: SCENE_CONFIG_VERSION,
            name: name.to_string(),
            optics: RefractionConstants::default(),
            rig: Some(RigConfig {
                rows: 3,
                cols: 3,
                spacing: 0.2,
                elevation: 0.6,
                look_at: [0.0, 0.0, 0.0],
                fov_deg: 50.0,
                width: resolution,
                height: resolution,
                held_out_offset: Some([0.1, 0.1]),
            }),
            cameras: Vec::new(),
            surface,
            pattern: PatternConfig::default(),
        }
    }

    /// Expands the rig and explicit cameras into named cameras.
    pub fn camera_list(&self) -> Vec<CameraConfig> {
        let mut out = Vec::new();
        if let Some(rig) = &self.rig {
            let center = (
                0.5 * (rig.cols as f64 - 1.0) * rig.spacing,
                0.5 * (rig.rows as f64 - 1.0) * rig.spacing,
            );
            for r in 0..rig.rows {
                for c in 0..rig.cols {
                    let x = c as f64 * rig.spacing - center.0 + rig.look_at[0];
                    let y = center.1 - r as f64 * rig.spacing + rig.look_at[1];
                    out.push(CameraConfig {
                        name: format!("cam{:02}", r * rig.cols + c),
                        position: [x, y, rig.elevation],
                        look_at: rig.look_at,
                        up: default_up(),
                        fov_deg: rig.fov_deg,
                        width: rig.width,
                        height: rig.height,
                        held_out: false,
                    });
                }
            }
            if let Some([dx, dy]) = rig.held_out_offset {
                out.push(CameraConfig {
                    name: "heldout".into(),
                    position: [rig.look_at[0] + dx, rig.look_at[1] + dy, rig.elevation],
                    look_at: rig.look_at,
                    up: default_up(),
                    fov_deg: rig.fov_deg,
                    width: rig.width,
                    height: rig.height,
                    held_out: true,
                });
            }
        }
        out.extend(self.cameras.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCamera {
    pub name: String,
    pub camera: PinholeCamera,
    pub held_out: bool,
}

/// Immutable synthetic ground truth: cameras, water surface, pattern, optics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub cameras: Vec<SceneCamera>,
    pub surface: WaveSurface,
    pub pattern: Pattern,
    pub plane: ReferencePlane,
    pub constants: RefractionConstants,
}

impl Scene {
    /// Builds and validates a scene; `base_dir` resolves pattern image paths.
    pub fn from_config(cfg: &SceneConfig, origin: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let bad = |field: &str, msg: String| ConfigError::invalid(origin, field, msg);
        let constants =
            RefractionConstants::new(cfg.optics.n1, cfg.optics.n2).map_err(|e| bad("optics", e))?;
        cfg.surface.validate().map_err(|e| bad("surface", e))?;
        let pattern = match &cfg.pattern {
            PatternConfig::Checker {
                texels,
                cell,
                flip_probability,
                seed,
                extent,
            } => Pattern::jittered_checkerboard(*texels, *cell, *flip_probability, *seed, *extent),
            PatternConfig::Image { path, extent } => {
                let img = read_png(&base_dir.join(path)).map_err(|e| bad("pattern.path", e.to_string()))?;
                Pattern::new(img, *extent, [0.5; 3])
            }
        }
        .map_err(|e| bad("pattern", e))?;

        let list = cfg.camera_list();
        if list.is_empty() {
            return Err(bad("cameras", "scene defines no cameras".into()));
        }
        let top = cfg.surface.max_height();
        let mut cameras = Vec::with_capacity(list.len());
        for c in &list {
            if cameras.iter().any(|s: &SceneCamera| s.name == c.name) {
                return Err(bad("cameras", format!("duplicate camera name '{}'", c.name)));
            }
            if !(c.position[2] > top) {
                return Err(bad(
                    "cameras",
                    format!(
                        "camera '{}' at z = {} m is not above the water surface (max height {top} m)",
                        c.name, c.position[2]
                    ),
                ));
            }
            if !(c.fov_deg > 0.0 && c.fov_deg < 180.0) {
                return Err(bad("cameras", format!("camera '{}' has an invalid field of view", c.name)));
            }
            let camera = PinholeCamera::look_at(
                Vec3::from(c.position),
                Vec3::from(c.look_at),
                Vec3::from(c.up),
                c.fov_deg,
                (c.width, c.height),
            )
            .map_err(|e| bad("cameras", format!("camera '{}': {e}", c.name)))?;
            cameras.push(SceneCamera {
                name: c.name.clone(),
                camera,
                held_out: c.held_out,
            });
        }
        if !cameras.iter().any(|c| !c.held_out) {
            return Err(bad("cameras", "scene needs at least one training camera".into()));
        }
        Ok(Self {
            name: cfg.name.clone(),
            cameras,
            surface: cfg.surface.clone(),
            pattern,
            plane: ReferencePlane::canonical(),
            constants,
        })
    }

    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&i| !self.cameras[i].held_out).collect()
    }

    pub fn held_out_indices(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&i| self.cameras[i].held_out).collect()
    }

    /// Training cameras ordered center-first: by distance of the camera
    /// center from the rig centroid, each camera followed by its mirror
    /// image through the centroid when one exists, so every prefix is a
    /// nested, balanced subset.
    pub fn centered_training_order(&self) -> Vec<usize> {
        let train = self.training_indices();
        let centers: Vec<Vec3> = train.iter().map(|&i| self.cameras[i].camera.center()).collect();
        let centroid = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
        let mut idx: Vec<usize> = (0..train.len()).collect();
        let dist = |k: usize| (centers[k] - centroid).xy().norm();
        idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        let mut order = Vec::with_capacity(idx.len());
        let mut used = vec![false; train.len()];
        for &k in &idx {
            if used[k] {
                continue;
            }
            used[k] = true;
            order.push(train[k]);
            let mirror = 2.0 * centroid - centers[k];
            if let Some(&m) = idx
                .iter()
                .find(|&&m| !used[m] && (centers[m] - mirror).xy().norm() < 1e-9)
            {
                used[m] = true;
                order.push(train[m]);
            }
        }
        order
    }
}

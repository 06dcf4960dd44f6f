use serde::{Deserialize, Serialize};

use crate::field::{Architecture, InitOptions, SamplingSchedule};
use crate::io::{parse_toml, ConfigError};
use crate::optim::AdamConfig;

pub const TRAIN_CONFIG_VERSION: u32 = 1;

/// Every hyperparameter of a reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    /// Rays per optimization step; a multiple of 4 (whole 2×2 patches).
    pub batch_rays: usize,
    pub coarse_samples: usize,
    pub fine_samples: usize,
    /// Jitter coarse samples inside their bins.
    pub stratified: bool,
    /// Weight of the depth-smoothness term.
    pub lambda_ds: f64,
    /// Smooth-L1 transition for both loss terms.
    pub huber_delta: f64,
    /// Pixel spacing used in the depth finite differences.
    pub pixel_pitch: f64,
    /// Relative margin added above and below the water column when bounding
    /// the sampled volume.
    pub slab_margin: f64,
    /// Rays per recorded tape; bounds peak memory.
    pub chunk_rays: usize,
    pub workers: usize,
    pub arch: Architecture,
    pub init: InitOptions,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: TRAIN_CONFIG_VERSION,
            seed: 0,
            epochs: 10,
            batch_rays: 2048,
            coarse_samples: 96,
            fine_samples: 192,
            stratified: true,
            lambda_ds: 0.15,
            huber_delta: 0.01,
            pixel_pitch: 1.0,
            slab_margin: 0.2,
            chunk_rays: 32,
            workers: 1,
            arch: Architecture {
                density_scale: 100.0,
                ..Architecture::default()
            },
            init: InitOptions::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parses TOML; `version` must be present and current.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = parse_toml(text, origin)?;
        match raw.get("version").and_then(|v| v.as_integer()) {
            Some(v) if v == TRAIN_CONFIG_VERSION as i64 => {}
            Some(v) => {
                return Err(ConfigError::Version {
                    path: origin.to_string(),
                    found: v as u32,
                    expected: TRAIN_CONFIG_VERSION,
                })
            }
            None => return Err(ConfigError::invalid(origin, "version", "missing integer `version` key")),
        }
        let cfg: TrainConfig = parse_toml(text, origin)?;
        cfg.validate().map_err(|(field, msg)| ConfigError::invalid(origin, field, msg))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = |name: &'static str, v: usize| {
            if v == 0 {
                Err((name, "must be positive".to_string()))
            } else {
                Ok(())
            }
        };
        positive("batch_rays", self.batch_rays)?;
        positive("chunk_rays", self.chunk_rays)?;
        positive("workers", self.workers)?;
        if self.batch_rays % 4 != 0 || self.chunk_rays % 4 != 0 {
            return Err(("batch_rays", "batch_rays and chunk_rays must be multiples of 4".into()));
        }
        if self.coarse_samples < 2 {
            return Err(("coarse_samples", "at least 2 coarse samples are required".into()));
        }
        if self.fine_samples == 1 {
            return Err(("fine_samples", "must be 0 or at least 2".into()));
        }
        if !(self.lambda_ds >= 0.0 && self.lambda_ds.is_finite()) {
            return Err(("lambda_ds", "must be non-negative".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(("huber_delta", "must be positive".into()));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(("pixel_pitch", "must be positive".into()));
        }
        if !(self.slab_margin >= 0.0) {
            return Err(("slab_margin", "must be non-negative".into()));
        }
        self.arch.validate().map_err(|e| ("arch", e))?;
        self.adam.validate().map_err(|e| ("adam", e))?;
        Ok(())
    }

    /// Sampling schedule shared by training and inference; bounds are set
    /// per ray.
    pub fn schedule(&self) -> SamplingSchedule {
        SamplingSchedule {
            coarse_count: self.coarse_samples,
            fine_count: self.fine_samples,
            near: 0.0,
            far: 1.0,
            stratified: self.stratified,
        }
    }

    /// Small network and sampling budget that trains the desk-scale scenes
    /// on a single core in about twenty seconds per epoch.
    pub fn desk() -> Self {
        Self {
            epochs: 1,
            batch_rays: 256,
            coarse_samples: 16,
            fine_samples: 32,
            chunk_rays: 32,
            arch: Architecture {
                depth: 4,
                width: 32,
                head_depth: 2,
                encoding_freqs: 4,
                skip_layer: 0,
                density_scale: 100.0,
            },
            adam: AdamConfig {
                lr: 5e-3,
                decay: 1e-3,
                decay_interval: 200,
                lr_floor: 2e-4,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }
}

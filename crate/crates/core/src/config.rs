//! Keyed run configuration: `section.key = value` lines, `#` comments.
//!
//! Every key has a default, unknown keys are rejected, and the canonical
//! rendering lists every key in a fixed order so its hash identifies a run.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::labels::{DynamicMode, VoxelGridSpec};
use crate::net::model::ModelConfig;
use crate::net::FocalLossParams;
use crate::scene::{LidarSpec, SceneConfig};
use crate::view::{CameraIntrinsics, CameraRig, FrustumSpec};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "UNISCENE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(format!("unknown optimizer `{s}` (sgd | adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// How the synthetic benchmark is generated.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub keyframe_stride: usize,
    pub dt: f64,
    pub ego_speed: f64,
    pub sensor_height: f64,
    pub held_out: f64,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigConfig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_range: f64,
}

impl RigConfig {
    pub fn build(&self) -> Result<CameraRig> {
        let intr = CameraIntrinsics::from_fov(
            self.width,
            self.height,
            self.hfov_deg.to_radians(),
            self.vfov_deg.to_radians(),
        )?;
        CameraRig::surround(self.views, intr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarConfig {
    pub channels: usize,
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
}

impl LidarConfig {
    pub fn spec(&self) -> LidarSpec {
        LidarSpec {
            elevation_channels: self.channels,
            azimuth_steps: self.azimuth_steps,
            max_range: self.max_range,
            elevation_range: (self.elevation_min_deg.to_radians(), self.elevation_max_deg.to_radians()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    pub pretext_frames: usize,
    pub pretext_mode: DynamicMode,
    pub finetune_frames: usize,
    pub finetune_mode: DynamicMode,
    pub eval_frames: usize,
    pub eval_mode: DynamicMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub label_fraction: f64,
    pub focal: FocalLossParams,
    pub class_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bench: BenchmarkConfig,
    pub rig: RigConfig,
    pub lidar: LidarConfig,
    pub grid: VoxelGridSpec,
    pub frustum: FrustumSpec,
    pub model: ModelConfig,
    pub labels: LabelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sensor_height = 1.6;
        Self {
            bench: BenchmarkConfig {
                seed: 2024,
                sequences: 40,
                frames: 5,
                keyframe_stride: 1,
                dt: 0.5,
                ego_speed: 2.0,
                sensor_height,
                held_out: 0.2,
                scene: SceneConfig::default(),
            },
            rig: RigConfig {
                views: 6,
                width: 8,
                height: 6,
                hfov_deg: 60.0,
                vfov_deg: 60.0,
                max_range: 20.0,
            },
            lidar: LidarConfig {
                channels: 8,
                azimuth_steps: 120,
                max_range: 20.0,
                elevation_min_deg: -30.0,
                elevation_max_deg: 10.0,
            },
            grid: VoxelGridSpec {
                origin: Vec3::new(-8.0, -8.0, -sensor_height - 0.25),
                voxel_size: [0.5, 1.0, 1.0],
                dims: [4, 16, 16],
            },
            frustum: FrustumSpec {
                depth_bins: 16,
                depth_min: 1.0,
                depth_max: 12.0,
            },
            model: ModelConfig::default(),
            labels: LabelConfig {
                pretext_frames: 3,
                pretext_mode: DynamicMode::KeepAll,
                finetune_frames: 3,
                finetune_mode: DynamicMode::DropDynamic,
                eval_frames: 3,
                eval_mode: DynamicMode::DropDynamic,
            },
            train: TrainConfig {
                seed: 0,
                batch: 2,
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                pretrain_epochs: 24,
                finetune_epochs: 12,
                label_fraction: 1.0,
                focal: FocalLossParams::default(),
                class_weights: vec![1.0; crate::labels::NUM_CLASSES],
            },
        }
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value.split(',').map(|v| parse::<f64>(v.trim())).collect()
}

fn render_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! keys {
    ($c:ident; $( $key:literal => $field:expr, $kind:ident; )*) => {
        /// Every recognized key, in canonical order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                let $c = self;
                match key {
                    $($key => keys!(@set $field, $kind, value),)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                let $c = self;
                vec![$(($key, keys!(@get $field, $kind))),*]
            }
        }
    };
    (@set $field:expr, list, $v:ident) => { $field = parse_list($v)? };
    (@set $field:expr, $kind:ident, $v:ident) => { $field = parse::<$kind>($v)? };
    (@get $field:expr, list) => { render_list(&$field) };
    (@get $field:expr, $kind:ident) => { $field.to_string() };
}

keys! {
    c;
    "scene.seed" => c.bench.seed, u64;
    "scene.sequences" => c.bench.sequences, usize;
    "scene.frames" => c.bench.frames, usize;
    "scene.keyframe_stride" => c.bench.keyframe_stride, usize;
    "scene.dt" => c.bench.dt, f64;
    "scene.ego_speed" => c.bench.ego_speed, f64;
    "scene.sensor_height" => c.bench.sensor_height, f64;
    "scene.held_out" => c.bench.held_out, f64;
    "scene.static_boxes" => c.bench.scene.static_boxes, usize;
    "scene.dynamic_boxes" => c.bench.scene.dynamic_boxes, usize;
    "scene.max_objects" => c.bench.scene.max_objects, usize;
    "scene.ground_height" => c.bench.scene.ground_height, f64;
    "scene.radius_min" => c.bench.scene.placement_radius.0, f64;
    "scene.radius_max" => c.bench.scene.placement_radius.1, f64;
    "scene.corridor_half_width" => c.bench.scene.corridor_half_width, f64;
    "scene.half_xy_min" => c.bench.scene.half_extent_xy.0, f64;
    "scene.half_xy_max" => c.bench.scene.half_extent_xy.1, f64;
    "scene.half_z_min" => c.bench.scene.half_extent_z.0, f64;
    "scene.half_z_max" => c.bench.scene.half_extent_z.1, f64;
    "scene.speed_min" => c.bench.scene.speed.0, f64;
    "scene.speed_max" => c.bench.scene.speed.1, f64;
    "scene.max_retries" => c.bench.scene.max_retries, usize;
    "rig.views" => c.rig.views, usize;
    "rig.width" => c.rig.width, usize;
    "rig.height" => c.rig.height, usize;
    "rig.hfov_deg" => c.rig.hfov_deg, f64;
    "rig.vfov_deg" => c.rig.vfov_deg, f64;
    "rig.max_range" => c.rig.max_range, f64;
    "lidar.channels" => c.lidar.channels, usize;
    "lidar.azimuth_steps" => c.lidar.azimuth_steps, usize;
    "lidar.max_range" => c.lidar.max_range, f64;
    "lidar.elevation_min_deg" => c.lidar.elevation_min_deg, f64;
    "lidar.elevation_max_deg" => c.lidar.elevation_max_deg, f64;
    "grid.depth" => c.grid.dims[0], usize;
    "grid.height" => c.grid.dims[1], usize;
    "grid.width" => c.grid.dims[2], usize;
    "grid.voxel_z" => c.grid.voxel_size[0], f64;
    "grid.voxel_y" => c.grid.voxel_size[1], f64;
    "grid.voxel_x" => c.grid.voxel_size[2], f64;
    "grid.origin_x" => c.grid.origin.x, f64;
    "grid.origin_y" => c.grid.origin.y, f64;
    "grid.origin_z" => c.grid.origin.z, f64;
    "frustum.bins" => c.frustum.depth_bins, usize;
    "frustum.depth_min" => c.frustum.depth_min, f64;
    "frustum.depth_max" => c.frustum.depth_max, f64;
    "model.encoder_width" => c.model.encoder_width, usize;
    "model.voxel_channels" => c.model.voxel_channels, usize;
    "model.decoder_width" => c.model.decoder_width, usize;
    "model.kernel" => c.model.kernel, usize;
    "labels.pretext_frames" => c.labels.pretext_frames, usize;
    "labels.pretext_mode" => c.labels.pretext_mode, DynamicMode;
    "labels.finetune_frames" => c.labels.finetune_frames, usize;
    "labels.finetune_mode" => c.labels.finetune_mode, DynamicMode;
    "labels.eval_frames" => c.labels.eval_frames, usize;
    "labels.eval_mode" => c.labels.eval_mode, DynamicMode;
    "train.seed" => c.train.seed, u64;
    "train.batch" => c.train.batch, usize;
    "train.optimizer" => c.train.optimizer, OptimizerKind;
    "train.lr" => c.train.learning_rate, f64;
    "train.beta1" => c.train.beta1, f64;
    "train.beta2" => c.train.beta2, f64;
    "train.eps" => c.train.eps, f64;
    "train.pretrain_epochs" => c.train.pretrain_epochs, usize;
    "train.finetune_epochs" => c.train.finetune_epochs, usize;
    "train.label_fraction" => c.train.label_fraction, f64;
    "train.focal_alpha_pos" => c.train.focal.alpha_pos, f64;
    "train.focal_alpha_neg" => c.train.focal.alpha_neg, f64;
    "train.focal_gamma" => c.train.focal.gamma, f64;
    "train.class_weights" => c.train.class_weights, list;
}

impl RunConfig {
    /// Parses config text over the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `section.key = value` lines on top of `self` without
    /// validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    reason: format!("expected `section.key = value`, got `{line}`"),
                });
            };
            self.set(key.trim(), value.trim())
                .map_err(|reason| Error::Config { line: i + 1, reason })?;
        }
        Ok(())
    }

    /// Applies one `key=value` override (command-line `--set`).
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::Config {
                line: 0,
                reason: format!("override `{kv}` is not key=value"),
            });
        };
        self.set(key.trim(), value.trim())
            .map_err(|reason| Error::Config { line: 0, reason })
    }

    /// `UNISCENE_SEED`, when set, replaces the training seed.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v.trim().parse().map_err(|_| Error::Config {
                line: 0,
                reason: format!("{SEED_ENV}=`{v}` is not an unsigned integer"),
            })?;
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bench;
        if b.sequences < 2 || b.frames < 1 || b.keyframe_stride < 1 {
            return Err(Error::invalid(
                "scene",
                "need >= 2 sequences, >= 1 frame and stride >= 1",
            ));
        }
        if !(b.held_out > 0.0 && b.held_out < 1.0) {
            return Err(Error::invalid("scene.held_out", "must lie in (0, 1)"));
        }
        self.rig.build()?;
        self.lidar.spec().validate()?;
        self.grid.validate()?;
        self.frustum.validate()?;
        self.model_config().validate()?;
        let t = &self.train;
        if t.batch < 1 || t.pretrain_epochs < 1 || t.finetune_epochs < 1 {
            return Err(Error::invalid("train", "batch and epochs must be at least 1"));
        }
        if !(t.label_fraction > 0.0 && t.label_fraction <= 1.0) {
            return Err(Error::invalid("train.label_fraction", "must lie in (0, 1]"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::invalid("train.lr", "must be positive"));
        }
        t.focal.validate()?;
        if t.class_weights.len() != self.model.num_classes || t.class_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid(
                "train.class_weights",
                format!("need {} non-negative weights", self.model.num_classes),
            ));
        }
        for (name, n) in [
            ("labels.pretext_frames", self.labels.pretext_frames),
            ("labels.finetune_frames", self.labels.finetune_frames),
            ("labels.eval_frames", self.labels.eval_frames),
        ] {
            if n == 0 || n % 2 == 0 {
                return Err(Error::invalid(name, "must be odd and positive"));
            }
        }
        Ok(())
    }

    /// Model hyper-parameters with the grid- and frustum-derived fields
    /// filled in.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            grid_depth: self.grid.dims[0],
            depth_bins: self.frustum.depth_bins,
            ..self.model
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

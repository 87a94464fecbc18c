//! The run configuration: one JSON document with a section per command.
//!
//! Every field has a default, so `{}` is a valid config; unknown keys at any
//! level are rejected. Command-line flags override file values.

use std::path::Path;

use longtail_core::anchor_sampler::{AnchorGridConfig, SamplerConfig};
use longtail_core::augment::{DuckFillConfig, PhotometricConfig, DEFAULT_MIXUP_BETA};
use longtail_core::dataset::DEFAULT_SHOT_THRESHOLD;
use longtail_core::gre_fpn::RoiAlignConfig;
use longtail_core::train_utils::LrConfig;
use longtail_core::tta::FusionMode;
use serde::{Deserialize, Serialize};

use crate::{read_file, CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Used when `--seed` is not given; 0 if neither is set.
    pub seed: Option<u64>,
    pub stats: StatsConfig,
    pub augment: AugmentConfig,
    pub sample: SampleConfig,
    pub swa: SwaConfig,
    pub fuse: FuseConfig,
    pub gre_demo: GreDemoConfig,
    pub lr: LrConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_file(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Classes with fewer boxes than this are few-shot.
    pub shot_threshold: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            shot_threshold: DEFAULT_SHOT_THRESHOLD,
        }
    }
}

/// Which images receive duck-filled copies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillTargets {
    /// Images without any annotation.
    #[default]
    Unannotated,
    /// Images without a few-shot annotation, including unannotated ones.
    NoFewShot,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub shot_threshold: usize,
    pub fill_targets: FillTargets,
    pub duck_fill: DuckFillConfig,
    /// Mix each image holding a few-shot box with one random partner.
    pub mixup: bool,
    pub mixup_beta: f64,
    /// Photometric jitter for generated images; off when absent.
    pub photometric: Option<PhotometricConfig>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shot_threshold: DEFAULT_SHOT_THRESHOLD,
            fill_targets: FillTargets::default(),
            duck_fill: DuckFillConfig::default(),
            mixup: true,
            mixup_beta: DEFAULT_MIXUP_BETA,
            photometric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Images drawn in balance mode.
    pub draws: usize,
    /// Batches drawn in anchors mode.
    pub batches: usize,
    /// `image_size` is taken from the target file.
    pub anchors: AnchorGridConfig,
    pub sampler: SamplerConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            draws: 1000,
            batches: 1,
            anchors: AnchorGridConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwaConfig {
    /// Write values inline instead of a manifest plus binary payload.
    pub inline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseConfig {
    pub iou_thresh: f64,
    pub mode: FusionMode,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            iou_thresh: 0.5,
            mode: FusionMode::Nms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreDemoConfig {
    pub roi_align: RoiAlignConfig,
    /// Finite-difference step.
    pub eps: f64,
    /// Largest accepted relative gradient error.
    pub tolerance: f64,
    /// Largest accepted selector-versus-baseline difference.
    pub reduction_tolerance: f64,
}

impl Default for GreDemoConfig {
    fn default() -> Self {
        GreDemoConfig {
            roi_align: RoiAlignConfig::default(),
            eps: 1e-5,
            tolerance: 1e-5,
            reduction_tolerance: 1e-12,
        }
    }
}

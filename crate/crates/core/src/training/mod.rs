//! Desk-scale training and evaluation.
//!
//! Images go through saliency, top-m selection and Inception normalization
//! before reaching the model. Optimization is AdamW under a linear warmup
//! and cosine decay schedule with global-norm gradient clipping and
//! gradient accumulation over micro-batches.

mod data;
mod metrics;
mod optim;
mod pipeline;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use self::data::{
    denormalize_inception, make_synthetic_dataset, normalize_inception, DataItem, Dataset, ImageSource, ShapeInfo,
    ShapeKind,
};
pub use self::metrics::{EpochRecord, MetricsLog, StepRecord};
pub use self::optim::{adamw_step, clip_grad_norm, lr_schedule, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use self::pipeline::{
    accuracy, evaluate, fit, predict, train, Prepared, Preprocessor, RunSettings, SaliencyCache, TrainOutcome,
};

use crate::error::{param_err, Result};
use crate::model::ModelConfig;
use crate::patching::FeedOrder;
use crate::saliency::SaliencyParams;

/// Optimizer and loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Examples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step; the effective batch is
    /// `batch_size * grad_accum_steps`.
    pub grad_accum_steps: usize,
    pub seed: u64,
    /// Dropout rate used while training; overrides `model.dropout_rate`.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 2e-3,
            warmup_steps: 20,
            weight_decay: 0.05,
            clip_norm: 1.0,
            batch_size: 16,
            grad_accum_steps: 1,
            seed: 0,
            dropout: 0.0,
        }
    }
}

impl TrainConfig {
    /// Large-scale schedule (effective batch 4096). Constructible, not meant to be run here.
    pub fn large_scale() -> Self {
        Self {
            epochs: 300,
            base_lr: 0.003,
            warmup_steps: 20,
            weight_decay: 0.3,
            clip_norm: 1.0,
            batch_size: 1,
            grad_accum_steps: 4096,
            seed: 0,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum_steps == 0 {
            return param_err("train.epochs, train.batch_size and train.grad_accum_steps must be positive");
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return param_err(format!("train.base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return param_err(format!("train.clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return param_err(format!("train.weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return param_err(format!("train.dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }
}

/// How many patches to keep and in which order to feed them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Fraction of the patch grid kept; ignored when `m` is set.
    pub fraction: f64,
    pub m: Option<usize>,
    pub order: FeedOrder,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            fraction: 1.0,
            m: None,
            order: FeedOrder::ScoreDescending,
        }
    }
}

impl SelectionConfig {
    pub fn with_m(m: usize) -> Self {
        Self {
            m: Some(m),
            ..Self::default()
        }
    }

    /// Patch count for a grid of `num_patches` cells.
    pub fn resolve_m(&self, num_patches: usize) -> Result<usize> {
        let m = match self.m {
            Some(m) => m,
            None => {
                if !(self.fraction > 0.0 && self.fraction <= 1.0) {
                    return param_err(format!("selection.fraction must be in (0, 1], got {}", self.fraction));
                }
                (self.fraction * num_patches as f64).round() as usize
            }
        };
        if m == 0 || m > num_patches {
            return param_err(format!("selection.m = {m} outside [1, {num_patches}]"));
        }
        Ok(m)
    }
}

/// Synthetic data generated on the fly when no folder is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_per_class: 300,
            eval_per_class: 100,
            seed: 0,
        }
    }
}

/// Where images come from and where saliency maps are cached.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Folder dataset (`<root>/<class>/*.png`); synthetic data when absent.
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    /// Defaults to `<train>/.saliency_cache` for folder datasets; no caching
    /// for synthetic data unless set.
    pub cache_dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub saliency: SaliencyParams,
    pub selection: SelectionConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(3),
            train: TrainConfig::default(),
            saliency: SaliencyParams::default(),
            selection: SelectionConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.saliency.rog.validate()?;
        self.saliency.curvature.validate()?;
        self.selection.resolve_m(self.model.num_patches())?;
        Ok(())
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.data
            .cache_dir
            .clone()
            .or_else(|| self.data.train.as_ref().map(|t| t.join(".saliency_cache")))
    }
}

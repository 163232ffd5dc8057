//! Desk-scale contrastive training: ground-truth patch correspondences from rendered geometry,
//! focal InfoNCE in both matching directions, AdamW with warmup and cosine annealing.

mod data;
mod optim;
mod run;
mod sampling;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BackboneKind, ModelConfig, ModelError};
use crate::net::{NetConfig, NetError};
use crate::render::RenderError;

pub use data::{
    image_patch_points, load_objects, nearest_templates, sample_training_view, template_token_points,
    TrainingObject, TrainingView,
};
pub use optim::{learning_rate, AdamW};
pub use run::{
    batch_loss, evaluate_top1, read_loss_csv, train_loop, train_step, write_loss_csv, BatchLoss, LossRecord,
    TopOneReport, TrainOutcome, TrainState,
};
pub use sampling::{ground_truth_positives, nearest_positive, sample_batch, AnchorBatch, Direction};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("loss became non-finite at step {0}")]
    NonFiniteLoss(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Similarity temperature.
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// N, anchors per direction and step.
    pub anchors_per_step: usize,
    /// M, negatives per anchor.
    pub negatives_per_anchor: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: 1.0,
            anchors_per_step: 256,
            negatives_per_anchor: 256,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.tau > 0.0) || !(self.gamma >= 0.0) || self.anchors_per_step == 0 || self.negatives_per_anchor == 0
        {
            return Err(TrainError::Config(format!("invalid loss settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Learning rate reached at the final step.
    pub final_lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_steps: 200,
            final_lr: 1e-6,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A training object: one of the built-in synthetic meshes or a mesh file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObjectSource {
    Builtin { builtin: usize },
    Mesh { mesh: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub objects: Vec<ObjectSource>,
    /// Template sphere frequency.
    pub frequency: u32,
    /// Template and training image side in pixels.
    pub resolution: u32,
    /// Templates encoded together per step (nearest to the training view).
    pub templates_per_step: usize,
    /// Positive radius in normalized object units.
    pub epsilon: f64,
    /// Training camera roll about the optical axis, degrees.
    pub max_roll_deg: f64,
    /// Relative jitter of the training camera distance around the template radius.
    pub distance_jitter: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            objects: (0..3).map(|builtin| ObjectSource::Builtin { builtin }).collect(),
            frequency: 2,
            resolution: 420,
            templates_per_step: 8,
            epsilon: 0.05,
            max_roll_deg: 30.0,
            distance_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    /// 1-based decoder layers whose outputs enter the loss (averaged).
    pub loss_layers: Vec<usize>,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            model: ModelConfig {
                net: NetConfig::default(),
                backbone: BackboneKind::Toy { channels: 64 },
            },
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            loss_layers: vec![2, 3, 4],
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.loss.validate()?;
        if !matches!(self.model.backbone, BackboneKind::Toy { .. }) {
            return Err(TrainError::Config("training renders RGB views and needs the toy backbone".into()));
        }
        if self.data.objects.is_empty() || self.data.templates_per_step == 0 {
            return Err(TrainError::Config("need at least one object and one template per step".into()));
        }
        if !(self.data.epsilon > 0.0) {
            return Err(TrainError::Config("epsilon must be positive".into()));
        }
        let layers = self.model.net.decoder_layers;
        if self.loss_layers.is_empty() || self.loss_layers.iter().any(|&l| l == 0 || l > layers) {
            return Err(TrainError::Config(format!(
                "loss layers {:?} outside 1..={layers}",
                self.loss_layers
            )));
        }
        let o = &self.optimizer;
        if !(o.peak_lr >= 0.0 && o.final_lr >= 0.0 && o.beta1 < 1.0 && o.beta2 < 1.0 && o.eps > 0.0) {
            return Err(TrainError::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

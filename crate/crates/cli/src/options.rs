//! Pipeline flags shared by `estimate` and `diagnose`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use posekit_core::backbone::{read_stack, DescriptorStack};
use posekit_core::net::load_checkpoint;
use posekit_core::pipeline::{Backend, PreparedObject};
use posekit_core::pnp::PnpSolver;
use posekit_core::{BackboneKind, Estimator, MatcherConfig, Model, PipelineConfig, RansacConfig};

use crate::failure::{Failure, ResultExt};
use crate::inputs::load_templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneChoice {
    /// Ground-truth NOCS descriptors (needs NOCS and mask images).
    Oracle,
    /// Trained network with the small convolutional backbone.
    Toy,
    /// Trained network on exported descriptor stacks (PDSK files).
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    Sqpnp,
    Epnp,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Template set directory, or a directory of template sets (one per object).
    #[arg(long)]
    pub templates: PathBuf,
    /// Network checkpoint (OPFW). Required for the toy and imported backbones.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Descriptor source [default: from the checkpoint, oracle without one].
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneChoice>,
    /// Directory of template descriptor stacks `rgb_NNN.pdsk` for the imported backbone
    /// [default: <template set>/features].
    #[arg(long)]
    pub template_features: Option<PathBuf>,
    /// Dual-softmax temperature [toolkit choice].
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Minimum dual-softmax confidence [toolkit choice].
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Crop side relative to the longer box side [toolkit choice].
    #[arg(long, default_value_t = 1.2)]
    pub padding: f64,
    /// RANSAC iterations [published value].
    #[arg(long, default_value_t = 800)]
    pub ransac_iterations: usize,
    /// RANSAC inlier reprojection threshold in pixels [published value].
    #[arg(long, default_value_t = 14.0)]
    pub reproj_px: f64,
    /// Minimal PnP solver inside RANSAC [published value: sqpnp].
    #[arg(long, value_enum, default_value_t = SolverChoice::Sqpnp)]
    pub solver: SolverChoice,
    /// Decoder layers matched for correspondences [published value: 2,3,4].
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4])]
    pub layers: Vec<usize>,
    /// Oracle descriptor width [toolkit choice].
    #[arg(long, default_value_t = 192)]
    pub oracle_dim: usize,
    /// Seed for RANSAC and the oracle descriptors [toolkit choice].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub struct Prepared {
    pub estimator: Estimator,
    pub objects: BTreeMap<String, PreparedObject>,
    pub backbone: BackboneChoice,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            matcher: MatcherConfig {
                temperature: self.temperature,
                threshold: self.threshold,
                padding: self.padding,
                ..MatcherConfig::default()
            },
            ransac: RansacConfig {
                iterations: self.ransac_iterations,
                reproj_px: self.reproj_px,
                solver: match self.solver {
                    SolverChoice::Sqpnp => PnpSolver::Sqpnp,
                    SolverChoice::Epnp => PnpSolver::Epnp,
                },
                seed: self.seed,
                ..RansacConfig::default()
            },
            match_layers: self.layers.clone(),
            oracle_dim: self.oracle_dim,
            oracle_seed: self.seed,
        }
    }

    fn load_model(&self) -> Result<Option<Model>, Failure> {
        let Some(path) = &self.checkpoint else { return Ok(None) };
        let ckpt = load_checkpoint(path).usage_ctx(format!("cannot read checkpoint {}", path.display()))?;
        let (model, _) = Model::from_checkpoint(&ckpt).usage_ctx(format!("invalid checkpoint {}", path.display()))?;
        Ok(Some(model))
    }

    /// Builds the estimator and describes the templates of every object.
    pub fn prepare(&self) -> Result<Prepared, Failure> {
        if !(self.temperature > 0.0) || !(0.0..=1.0).contains(&self.threshold) || !(self.padding >= 1.0) {
            return Err(Failure::usage(anyhow!(
                "temperature must be positive, threshold in [0, 1] and padding at least 1"
            )));
        }
        let model = self.load_model()?;
        let backbone = match (self.backbone, &model) {
            (Some(b), _) => b,
            (None, None) => BackboneChoice::Oracle,
            (None, Some(m)) => match m.cfg.backbone {
                BackboneKind::Toy { .. } => BackboneChoice::Toy,
                BackboneKind::Imported { .. } => BackboneChoice::Imported,
            },
        };
        let cfg = self.config();
        let estimator = match (backbone, model) {
            (BackboneChoice::Oracle, _) => Estimator::oracle(cfg).usage()?,
            (_, None) => return Err(Failure::usage(anyhow!("the {backbone:?} backbone needs --checkpoint"))),
            (b, Some(m)) => {
                let matches = matches!(
                    (b, m.cfg.backbone),
                    (BackboneChoice::Toy, BackboneKind::Toy { .. }) | (BackboneChoice::Imported, BackboneKind::Imported { .. })
                );
                if !matches {
                    return Err(Failure::usage(anyhow!(
                        "checkpoint was trained with {:?}, not the {b:?} backbone",
                        m.cfg.backbone
                    )));
                }
                Estimator::new(cfg, Backend::Learned(m)).usage()?
            }
        };
        let sets = load_templates(&self.templates)?;
        let mut objects = BTreeMap::new();
        for (id, (dir, set)) in sets {
            let stacks = if backbone == BackboneChoice::Imported {
                let fdir = self.template_features.clone().unwrap_or_else(|| dir.join("features"));
                Some(read_template_stacks(&fdir, set.len())?)
            } else {
                None
            };
            let prepared = estimator.prepare(set, stacks.as_deref()).pipeline()?;
            log::info!("object {id}: {} template tokens", prepared.token_count());
            objects.insert(id, prepared);
        }
        Ok(Prepared {
            estimator,
            objects,
            backbone,
        })
    }
}

fn read_template_stacks(dir: &Path, n: usize) -> Result<Vec<DescriptorStack>, Failure> {
    (0..n)
        .map(|i| {
            let p = dir.join(format!("rgb_{i:03}.pdsk"));
            read_stack(&p).usage_ctx(format!("cannot read template stack {}", p.display()))
        })
        .collect()
}

/// Crop stack of detection `index` in `image` for the imported backbone.
pub fn crop_stack_path(features: &Path, image: &Path, index: usize) -> PathBuf {
    features.join(format!("{}.pdsk", crop_stem(image, index)))
}

/// File stem shared by saved crops and their exported stacks.
pub fn crop_stem(image: &Path, index: usize) -> String {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    format!("{stem}_det{index}")
}

//! Pose estimation for one detection: crop → descriptors → template vote → neighbour views →
//! dual-softmax correspondences over decoder layers → RANSAC-PnP.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::kernels::dot;
use crate::autodiff::{Graph, Tensor};
use crate::backbone::{DescriptorStack, OracleBackbone};
use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3};
use crate::matcher::{
    crop_bilinear, crop_nearest, crop_region, gather_correspondences, vote_primary_template, Correspondence,
    CropTransform, Image, LayerTokens, MatchError, MatcherConfig, Vote,
};
use crate::model::{describe, encode_templates, BackboneInput, BackboneKind, Model, ModelError, TemplateSelection};
use crate::net::{decoder_forward, NetError, TemplateTokens, TokenOrigin};
use crate::pnp::{ransac_pnp, PnpError, PoseEstimate, RansacConfig};
use crate::render::{TemplateImage, TemplateSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid input: {0}")]
    Input(String),
}

impl PipelineError {
    /// Failures that end in the flagged default pose rather than an error: too few
    /// correspondences or no RANSAC consensus.
    pub fn is_no_pose(&self) -> bool {
        matches!(
            self,
            PipelineError::Match(MatchError::TooFewCorrespondences(_))
                | PipelineError::Pnp(
                    PnpError::NoConsensus(_)
                        | PnpError::TooFewCorrespondences(_)
                        | PnpError::InsufficientPoints { .. }
                        | PnpError::DegenerateConfiguration(_)
                )
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub matcher: MatcherConfig,
    pub ransac: RansacConfig,
    /// 1-based decoder layers matched for correspondences.
    pub match_layers: Vec<usize>,
    /// Oracle descriptor width and seed.
    pub oracle_dim: usize,
    pub oracle_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            matcher: MatcherConfig::default(),
            ransac: RansacConfig::default(),
            match_layers: vec![2, 3, 4],
            oracle_dim: 192,
            oracle_seed: 0,
        }
    }
}

/// A test image. `nocs` and `mask` are only read by the oracle backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
    pub nocs: Option<Vec<[f32; 3]>>,
    pub mask: Option<Vec<bool>>,
}

impl SceneImage {
    pub fn from_render(t: &TemplateImage) -> Self {
        Self {
            width: t.width as usize,
            height: t.height as usize,
            rgb: t.rgb.clone(),
            nocs: Some(t.nocs.clone()),
            mask: Some(t.mask.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let n = self.width * self.height;
        let ok = self.rgb.len() == n
            && self.nocs.as_ref().is_none_or(|v| v.len() == n)
            && self.mask.as_ref().is_none_or(|v| v.len() == n);
        if n == 0 || !ok {
            return Err(PipelineError::Input(format!("{}x{} image buffers have inconsistent sizes", self.width, self.height)));
        }
        Ok(())
    }
}

/// Wall time per stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub crop: f64,
    pub descriptors: f64,
    pub matching: f64,
    pub pnp: f64,
}

/// Output of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseResult {
    pub estimate: PoseEstimate,
    pub vote: Vote,
    pub selected: Vec<usize>,
    pub correspondences: Vec<Correspondence>,
    pub crop: CropTransform,
    pub timings: StageTimings,
}

/// Everything before PnP, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub vote: Vote,
    pub selected: Vec<usize>,
    pub correspondences: Vec<Correspondence>,
    pub crop: CropTransform,
    /// Image patch grid `(rows, cols)`.
    pub grid: (usize, usize),
    /// Per image patch, best cosine similarity to the primary template.
    pub similarity: Vec<f32>,
    pub timings: StageTimings,
}

/// Template-side descriptors for one object, computed once and reused across detections.
#[derive(Debug, Clone)]
pub struct PreparedObject {
    pub set: TemplateSet,
    tokens: Tensor<f32>,
    origins: Vec<TokenOrigin>,
}

impl PreparedObject {
    pub fn token_count(&self) -> usize {
        self.origins.len()
    }
}

/// Where descriptors come from.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Ground-truth NOCS lifted by a fixed random map; the transformer is bypassed and the
    /// same tokens stand in for every matched layer.
    Oracle(OracleBackbone),
    /// Trained network (toy or imported backbone).
    Learned(Model),
}

/// Per-detection input beyond the scene: an imported backbone needs the crop's stack.
#[derive(Debug, Clone, Copy, Default)]
pub struct CropFeatures<'a> {
    pub stack: Option<&'a DescriptorStack>,
}

pub struct Estimator {
    pub cfg: PipelineConfig,
    pub backend: Backend,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Estimator {
    pub fn new(cfg: PipelineConfig, backend: Backend) -> Result<Self, PipelineError> {
        if cfg.match_layers.is_empty() || cfg.match_layers.contains(&0) {
            return Err(PipelineError::Input(format!("invalid match layers {:?}", cfg.match_layers)));
        }
        if let Backend::Learned(m) = &backend {
            let n = m.cfg.net.decoder_layers;
            if let Some(&l) = cfg.match_layers.iter().find(|&&l| l > n) {
                return Err(PipelineError::Input(format!("match layer {l} exceeds the {n} decoder layers")));
            }
        }
        Ok(Self { cfg, backend })
    }

    pub fn oracle(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        if cfg.oracle_dim == 0 || cfg.oracle_dim % 2 != 0 {
            return Err(PipelineError::Input(format!("oracle width {} must be even", cfg.oracle_dim)));
        }
        let backbone = OracleBackbone::new(cfg.oracle_dim, cfg.oracle_seed);
        Self::new(cfg, Backend::Oracle(backbone))
    }

    /// Describes every template. An imported backbone needs one stack per template, in order.
    pub fn prepare(&self, set: TemplateSet, stacks: Option<&[DescriptorStack]>) -> Result<PreparedObject, PipelineError> {
        if set.is_empty() {
            return Err(PipelineError::Input("template set is empty".into()));
        }
        let ids: Vec<usize> = (0..set.len()).collect();
        let refs: Vec<&TemplateImage> = set.templates.iter().collect();
        let (tokens, origins) = match &self.backend {
            Backend::Oracle(o) => {
                let grids: Vec<Tensor<f32>> = set
                    .templates
                    .iter()
                    .map(|t| o.describe(t.width as usize, t.height as usize, &t.nocs, &t.mask).tokens)
                    .collect();
                let grid_refs: Vec<&Tensor<f32>> = grids.iter().collect();
                let tt = TemplateTokens::gather(&grid_refs, &refs, &ids)?;
                (tt.tokens, tt.origins)
            }
            Backend::Learned(m) => {
                let inputs: Vec<BackboneInput<'_>> = match (m.cfg.backbone, stacks) {
                    (BackboneKind::Toy { .. }, _) => set.templates.iter().map(BackboneInput::rgb_of).collect(),
                    (BackboneKind::Imported { .. }, Some(s)) if s.len() == set.len() => {
                        s.iter().map(BackboneInput::Stack).collect()
                    }
                    (BackboneKind::Imported { .. }, s) => {
                        return Err(PipelineError::Input(format!(
                            "imported backbone needs {} template stacks, got {}",
                            set.len(),
                            s.map_or(0, |s| s.len())
                        )))
                    }
                };
                let selection = TemplateSelection::new(&refs, &ids);
                let mut g = Graph::new();
                let enc = encode_templates(&mut g, &m.params, &m.cfg, &inputs, &selection)?;
                (g.value(enc).clone(), selection.origins)
            }
        };
        if origins.is_empty() {
            return Err(MatchError::NoForegroundTokens.into());
        }
        Ok(PreparedObject { set, tokens, origins })
    }

    /// Runs everything before PnP: crop, descriptors, vote, view selection and matching. No
    /// minimum correspondence count is enforced.
    pub fn analyze(
        &self,
        object: &PreparedObject,
        scene: &SceneImage,
        bbox: [f64; 4],
        features: CropFeatures<'_>,
    ) -> Result<Analysis, PipelineError> {
        scene.validate()?;
        let res = object.set.resolution as usize;
        let t0 = Instant::now();
        let crop = crop_region(bbox, scene.width, scene.height, res, self.cfg.matcher.padding)?;
        let crop_time = ms(t0);

        let t1 = Instant::now();
        let set = &object.set;
        // Per matched layer image/template tokens, then the tokens voted on.
        let (layer_tokens, cols): (Vec<(usize, Tensor<f32>, Tensor<f32>)>, usize) = match &self.backend {
            Backend::Oracle(o) => {
                let (Some(nocs), Some(mask)) = (&scene.nocs, &scene.mask) else {
                    return Err(PipelineError::Input("the oracle backbone needs NOCS and mask images".into()));
                };
                let nocs = crop_nearest(&Image::new(scene.width, scene.height, nocs.clone()), &crop, [0.0; 3]);
                let mask = crop_nearest(&Image::new(scene.width, scene.height, mask.clone()), &crop, false);
                let grid = o.describe(res, res, &nocs.data, &mask.data);
                let layers = self
                    .cfg
                    .match_layers
                    .iter()
                    .map(|&l| (l, grid.tokens.clone(), object.tokens.clone()))
                    .collect();
                (layers, grid.cols)
            }
            Backend::Learned(m) => {
                let rgb;
                let input = match m.cfg.backbone {
                    BackboneKind::Toy { .. } => {
                        rgb = crop_bilinear(&Image::new(scene.width, scene.height, scene.rgb.clone()), &crop);
                        BackboneInput::Rgb {
                            width: res,
                            height: res,
                            rgb: &rgb.data,
                        }
                    }
                    BackboneKind::Imported { .. } => {
                        let s = features
                            .stack
                            .ok_or_else(|| PipelineError::Input("imported backbone needs the crop's stack".into()))?;
                        BackboneInput::Stack(s)
                    }
                };
                let (rows, cols) = input.grid();
                let mut g = Graph::new();
                let img = describe(&mut g, &m.params, &m.cfg, &input)?;
                let enc = g.constant(object.tokens.clone());
                let outs = decoder_forward(&mut g, &m.params, &m.cfg.net, img, rows, cols, enc)?;
                let mut wanted = self.cfg.match_layers.clone();
                wanted.push(outs.len());
                let layers = wanted
                    .iter()
                    .map(|&l| (l, g.value(outs[l - 1].image).clone(), g.value(outs[l - 1].templates).clone()))
                    .collect();
                (layers, cols)
            }
        };
        let descriptor_time = ms(t1);

        let t2 = Instant::now();
        // The oracle votes on its only token set; the network votes on its last layer.
        let (_, vote_img, vote_tmpl) = layer_tokens.last().expect("at least one layer");
        let vote = vote_primary_template(vote_img, vote_tmpl, &object.origins, set.len())?;
        let similarity = best_similarity(vote_img, vote_tmpl, &object.origins, vote.primary);
        let selected = set.graph.select_views(vote.primary);
        let layers: Vec<LayerTokens<'_>> = layer_tokens[..self.cfg.match_layers.len()]
            .iter()
            .map(|(l, img, tmpl)| LayerTokens {
                layer: *l,
                image: img,
                templates: tmpl,
                origins: &object.origins,
            })
            .collect();
        let matcher = MatcherConfig {
            min_correspondences: 0,
            ..self.cfg.matcher
        };
        let correspondences = gather_correspondences(&layers, &selected, cols, &crop, set, &matcher)?;
        let matching_time = ms(t2);

        Ok(Analysis {
            vote,
            selected,
            correspondences,
            crop,
            grid: (vote_img.rows / cols.max(1), cols),
            similarity,
            timings: StageTimings {
                crop: crop_time,
                descriptors: descriptor_time,
                matching: matching_time,
                pnp: 0.0,
            },
        })
    }

    /// Estimates the pose of `object` inside `bbox` (`[x, y, w, h]` in `scene` pixels).
    pub fn estimate(
        &self,
        object: &PreparedObject,
        scene: &SceneImage,
        k: &CameraIntrinsics,
        bbox: [f64; 4],
        features: CropFeatures<'_>,
    ) -> Result<PoseResult, PipelineError> {
        let a = self.analyze(object, scene, bbox, features)?;
        if a.correspondences.len() < self.cfg.matcher.min_correspondences {
            return Err(MatchError::TooFewCorrespondences(a.correspondences.len()).into());
        }
        let t3 = Instant::now();
        let points: Vec<Vec3> = a.correspondences.iter().map(|c| Vec3::from(c.point)).collect();
        let pixels: Vec<Vec2> = a.correspondences.iter().map(|c| Vec2::from(c.pixel)).collect();
        let conf: Vec<f64> = a.correspondences.iter().map(|c| c.confidence).collect();
        let estimate = ransac_pnp(&points, &pixels, &conf, k, &self.cfg.ransac)?;
        Ok(PoseResult {
            estimate,
            vote: a.vote,
            selected: a.selected,
            correspondences: a.correspondences,
            crop: a.crop,
            timings: StageTimings {
                pnp: ms(t3),
                ..a.timings
            },
        })
    }
}

/// Per image token, the highest cosine similarity to any token of `template`; 0 for
/// all-zero tokens.
fn best_similarity(image: &Tensor<f32>, templates: &Tensor<f32>, origins: &[TokenOrigin], template: usize) -> Vec<f32> {
    let norm = |v: &[f32]| dot(v, v).sqrt();
    let rows: Vec<usize> = (0..origins.len()).filter(|&i| origins[i].template == template).collect();
    (0..image.rows)
        .map(|r| {
            let a = image.row(r);
            let na = norm(a);
            if na == 0.0 {
                return 0.0;
            }
            rows.iter()
                .map(|&t| {
                    let b = templates.row(t);
                    dot(a, b) / (na * norm(b)).max(f32::MIN_POSITIVE)
                })
                .fold(f32::NEG_INFINITY, f32::max)
                .max(-1.0)
        })
        .collect()
}

/// The default prediction reported when no pose could be estimated.
pub fn fallback_pose() -> Pose {
    Pose::identity()
}

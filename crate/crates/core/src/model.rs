//! The trainable network end to end: backbone (toy or imported stacks) → weight adapter →
//! template encoder → two-way decoder, with checkpoint conversion.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::backbone::{
    adapter_forward, init_adapter, init_toy, patch_mean_nocs, patchify, toy_forward, AdapterConfig,
    BackboneError, DescriptorStack, ToyConfig, PATCH, TOY_LAYERS,
};
use crate::net::{
    decoder_forward, encoder_forward, init_decoder, init_encoder, Checkpoint, DecoderLayerOutput, NetConfig,
    NetError, TokenOrigin,
};
use crate::real::Real;
use crate::render::TemplateImage;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("input does not match the model: {0}")]
    Input(String),
}

/// Source of the per-patch stacks fed to the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneKind {
    /// RGB through the trainable toy backbone.
    Toy { channels: usize },
    /// Exported descriptor stacks with `layers × channels` values per patch.
    Imported { layers: usize, channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub net: NetConfig,
    pub backbone: BackboneKind,
}

impl ModelConfig {
    pub fn adapter(&self) -> AdapterConfig {
        let (layers, channels) = match self.backbone {
            BackboneKind::Toy { channels } => (TOY_LAYERS, channels),
            BackboneKind::Imported { layers, channels } => (layers, channels),
        };
        AdapterConfig {
            layers,
            channels,
            dim: self.net.dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.net.validate()?;
        let a = self.adapter();
        if a.layers == 0 || a.channels == 0 {
            return Err(ModelError::Input("backbone needs at least one layer and channel".into()));
        }
        Ok(())
    }
}

/// One image as the backbone sees it.
#[derive(Debug, Clone, Copy)]
pub enum BackboneInput<'a> {
    Rgb {
        width: usize,
        height: usize,
        rgb: &'a [[f32; 3]],
    },
    Stack(&'a DescriptorStack),
}

impl BackboneInput<'_> {
    pub fn rgb_of(t: &TemplateImage) -> BackboneInput<'_> {
        BackboneInput::Rgb {
            width: t.width as usize,
            height: t.height as usize,
            rgb: &t.rgb,
        }
    }

    /// Patch grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        match self {
            BackboneInput::Rgb { width, height, .. } => (height / PATCH, width / PATCH),
            BackboneInput::Stack(s) => (s.rows, s.cols),
        }
    }
}

/// Foreground template tokens of a template batch: which rows of the stacked grids to keep,
/// their NOCS coordinates and origins.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSelection {
    pub rows: Rc<Vec<Option<u32>>>,
    pub coords: Vec<[f64; 3]>,
    pub origins: Vec<TokenOrigin>,
}

impl TemplateSelection {
    /// `templates[i]` is recorded with origin id `ids[i]`; row offsets assume the grids are
    /// stacked in the same order.
    pub fn new(templates: &[&TemplateImage], ids: &[usize]) -> Self {
        let mut rows = Vec::new();
        let mut coords = Vec::new();
        let mut origins = Vec::new();
        let mut offset = 0usize;
        for (t, &id) in templates.iter().zip(ids) {
            let nocs = patch_mean_nocs(t.width as usize, t.height as usize, &t.nocs, &t.mask);
            for (patch, c) in nocs.iter().enumerate() {
                if let Some(c) = c {
                    rows.push(Some((offset + patch) as u32));
                    coords.push(*c);
                    origins.push(TokenOrigin { template: id, patch });
                }
            }
            offset += nocs.len();
        }
        Self {
            rows: Rc::new(rows),
            coords,
            origins,
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub rows: usize,
    pub cols: usize,
    /// Per decoder layer, L2-normalized image and template tokens.
    pub layers: Vec<DecoderLayerOutput>,
}

/// Adapter descriptors (`P × d`) for one image.
pub fn describe<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    input: &BackboneInput<'_>,
) -> Result<Var, ModelError> {
    let (rows, cols) = input.grid();
    let stack = match (cfg.backbone, input) {
        (BackboneKind::Toy { .. }, BackboneInput::Rgb { width, height, rgb }) => {
            let patches = g.constant(patchify(*width, *height, rgb)?);
            toy_forward(g, store, patches, rows, cols)?
        }
        (BackboneKind::Imported { layers, channels }, BackboneInput::Stack(s)) => {
            if s.layers != layers || s.channels != channels {
                return Err(ModelError::Input(format!(
                    "stack has {}x{} layers x channels, model expects {layers}x{channels}",
                    s.layers, s.channels
                )));
            }
            g.constant(s.patch_matrix())
        }
        (BackboneKind::Toy { .. }, BackboneInput::Stack(_)) => {
            return Err(ModelError::Input("toy backbone needs RGB input".into()))
        }
        (BackboneKind::Imported { .. }, BackboneInput::Rgb { .. }) => {
            return Err(ModelError::Input("imported backbone needs descriptor stacks".into()))
        }
    };
    Ok(adapter_forward(g, store, stack, rows, cols)?)
}

/// Describes and encodes a template batch; returns the encoded tokens in selection order.
pub fn encode_templates<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    inputs: &[BackboneInput<'_>],
    selection: &TemplateSelection,
) -> Result<Var, ModelError> {
    if selection.is_empty() {
        return Err(ModelError::Input("templates have no foreground patches".into()));
    }
    let grids = inputs
        .iter()
        .map(|i| describe(g, store, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = g.concat_rows(&grids);
    let tokens = g.gather_rows(stacked, selection.rows.clone());
    Ok(encoder_forward(g, store, &cfg.net, tokens, &selection.coords)?)
}

/// Full forward pass of one image against a template batch.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    image: &BackboneInput<'_>,
    templates: &[BackboneInput<'_>],
    selection: &TemplateSelection,
) -> Result<ForwardOutput, ModelError> {
    let encoded = encode_templates(g, store, cfg, templates, selection)?;
    let (rows, cols) = image.grid();
    let img = describe(g, store, cfg, image)?;
    let layers = decoder_forward(g, store, &cfg.net, img, rows, cols, encoded)?;
    Ok(ForwardOutput { rows, cols, layers })
}

/// Network parameters with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore<f32>,
}

const KIND_TOY: u32 = 0;
const KIND_IMPORTED: u32 = 1;

impl Model {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        if let BackboneKind::Toy { channels } = cfg.backbone {
            init_toy(&mut params, &ToyConfig { channels }, &mut rng);
        }
        init_adapter(&mut params, &cfg.adapter(), &mut rng);
        init_encoder(&mut params, &cfg.net, &mut rng);
        init_decoder(&mut params, &cfg.net, &mut rng);
        Ok(Self { cfg, params })
    }

    pub fn header(&self) -> BTreeMap<String, u32> {
        let a = self.cfg.adapter();
        let kind = match self.cfg.backbone {
            BackboneKind::Toy { .. } => KIND_TOY,
            BackboneKind::Imported { .. } => KIND_IMPORTED,
        };
        [
            ("dim", self.cfg.net.dim),
            ("heads", self.cfg.net.heads),
            ("encoder_blocks", self.cfg.net.encoder_blocks),
            ("decoder_layers", self.cfg.net.decoder_layers),
            ("backbone_layers", a.layers),
            ("backbone_channels", a.channels),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v as u32))
        .chain(std::iter::once(("backbone_kind".to_string(), kind)))
        .collect()
    }

    /// Checkpoint holding these parameters plus any `extra` tensors (optimizer state).
    pub fn to_checkpoint(&self, extra: Option<&ParamStore<f32>>) -> Checkpoint {
        let mut params = self.params.clone();
        if let Some(e) = extra {
            params.extend(e.clone());
        }
        Checkpoint {
            header: self.header(),
            params,
        }
    }

    /// Rebuilds a model from a checkpoint; tensors not belonging to the network are returned
    /// separately.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, ParamStore<f32>), ModelError> {
        let net = NetConfig {
            dim: ckpt.dim("dim")?,
            heads: ckpt.dim("heads")?,
            encoder_blocks: ckpt.dim("encoder_blocks")?,
            decoder_layers: ckpt.dim("decoder_layers")?,
        };
        let layers = ckpt.dim("backbone_layers")?;
        let channels = ckpt.dim("backbone_channels")?;
        let backbone = match ckpt.dim("backbone_kind")? as u32 {
            KIND_TOY if layers == TOY_LAYERS => BackboneKind::Toy { channels },
            KIND_IMPORTED => BackboneKind::Imported { layers, channels },
            k => {
                return Err(ModelError::Input(format!(
                    "unknown backbone kind {k} with {layers} layers"
                )))
            }
        };
        let cfg = ModelConfig { net, backbone };
        cfg.validate()?;
        let template = Model::init(cfg, 0)?;
        let mut params = ParamStore::new();
        for (name, want) in template.params.iter() {
            let got = ckpt.params.get(name).ok_or_else(|| {
                NetError::Checkpoint(format!("checkpoint is missing parameter {name:?}"))
            })?;
            if got.shape() != want.shape() {
                return Err(NetError::Checkpoint(format!(
                    "parameter {name:?} is {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                ))
                .into());
            }
            params.insert(name.clone(), got.clone());
        }
        let mut rest = ParamStore::new();
        for (name, t) in ckpt.params.iter().filter(|(n, _)| !template.params.contains(n)) {
            rest.insert(name.clone(), t.clone());
        }
        Ok((Self { cfg, params }, rest))
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }
}

/// Tensor values of a forward output layer, detached from the graph.
pub fn layer_values(g: &Graph<f32>, out: &DecoderLayerOutput) -> (Tensor<f32>, Tensor<f32>) {
    (g.value(out.image).clone(), g.value(out.templates).clone())
}

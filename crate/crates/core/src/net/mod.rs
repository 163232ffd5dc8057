//! Transformer core: rotary embeddings, attention, the template encoder and the two-way
//! decoder, plus parameter checkpoints.

mod attention;
mod checkpoint;
mod decoder;
mod encoder;
mod rope;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::backbone::patch_mean_nocs;
use crate::real::Real;
use crate::render::TemplateImage;

pub use attention::{attention, ffn_hidden, init_attention, init_layer_norm, init_swiglu, layer_norm, swiglu};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use decoder::{decoder_forward, decoder_layer, init_decoder, DecoderLayerOutput};
pub use encoder::{encoder_block, encoder_forward, init_encoder};
pub use rope::{rope2d_apply, rope2d_table, rope3d_apply, rope3d_table};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("an attention row has no finite score")]
    NonFiniteAttention,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_layers: usize,
}

impl Default for NetConfig {
    /// 576 wide, 8 heads of 72, four encoder blocks and four decoder layers.
    fn default() -> Self {
        Self {
            dim: 576,
            heads: 8,
            encoder_blocks: 4,
            decoder_layers: 4,
        }
    }
}

impl NetConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.dim == 0 || self.dim % 6 != 0 {
            return Err(NetError::Dimension(format!("width {} is not a multiple of 6", self.dim)));
        }
        if self.heads == 0 || self.dim % self.heads != 0 || self.head_dim() % 4 != 0 {
            return Err(NetError::Dimension(format!(
                "width {} does not split into {} heads of a multiple of 4",
                self.dim, self.heads
            )));
        }
        if self.encoder_blocks == 0 || self.decoder_layers == 0 {
            return Err(NetError::Dimension("encoder and decoder need at least one layer".into()));
        }
        Ok(())
    }
}

/// Where a template token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenOrigin {
    pub template: usize,
    /// Row-major patch index within the template grid.
    pub patch: usize,
}

/// Foreground template tokens flattened across templates, with their patch-mean NOCS values.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateTokens<T> {
    pub tokens: Tensor<T>,
    pub coords: Vec<[f64; 3]>,
    pub origins: Vec<TokenOrigin>,
}

impl<T: Real> TemplateTokens<T> {
    /// Keeps the patches of each descriptor grid that contain foreground in the matching
    /// template. `grids[i]` describes `templates[i]`; `ids[i]` is recorded as its origin.
    pub fn gather(grids: &[&Tensor<T>], templates: &[&TemplateImage], ids: &[usize]) -> Result<Self, NetError> {
        if grids.len() != templates.len() || ids.len() != templates.len() {
            return Err(NetError::Dimension("grid, template and id counts differ".into()));
        }
        let dim = grids.first().map_or(0, |g| g.cols);
        let mut data = Vec::new();
        let mut coords = Vec::new();
        let mut origins = Vec::new();
        for ((grid, t), &id) in grids.iter().zip(templates).zip(ids) {
            let nocs = patch_mean_nocs(t.width as usize, t.height as usize, &t.nocs, &t.mask);
            if grid.rows != nocs.len() || grid.cols != dim {
                return Err(NetError::Dimension(format!(
                    "template {id}: {}x{} descriptors for {} patches",
                    grid.rows,
                    grid.cols,
                    nocs.len()
                )));
            }
            for (patch, c) in nocs.into_iter().enumerate() {
                if let Some(c) = c {
                    data.extend_from_slice(grid.row(patch));
                    coords.push(c);
                    origins.push(TokenOrigin { template: id, patch });
                }
            }
        }
        let n = coords.len();
        Ok(Self {
            tokens: Tensor::from_vec(n, dim, data),
            coords,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

#[cfg(test)]
mod tests;

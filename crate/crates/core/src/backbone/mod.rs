//! Patch descriptor sources: imported multi-layer stacks, the weight adapter that fuses them,
//! a small trainable convolutional backbone, and a geometry-derived oracle.

mod adapter;
mod oracle;
mod pdsk;
mod toy;

use std::rc::Rc;

use thiserror::Error;

use crate::autodiff::{Graph, Tensor, Var};
use crate::real::Real;

pub use adapter::{adapter_forward, init_adapter, AdapterConfig, ADAPTER_DILATIONS};
pub use oracle::{OracleBackbone, ORACLE_BANDWIDTH};
pub use pdsk::{read_stack, read_stack_from, write_stack, write_stack_to, PDSK_MAGIC, PDSK_VERSION};
pub use toy::{init_toy, patchify, toy_forward, ToyConfig, TOY_LAYERS};

/// Side length of one square patch in pixels.
pub const PATCH: usize = 14;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("descriptor stack format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-layer patch descriptors, stored `[layer][row][col][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStack {
    pub layers: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl DescriptorStack {
    pub fn new(layers: usize, rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self, BackboneError> {
        if layers == 0 || rows == 0 || cols == 0 || channels == 0 {
            return Err(BackboneError::DimensionMismatch(format!(
                "empty stack {layers}x{rows}x{cols}x{channels}"
            )));
        }
        if data.len() != layers * rows * cols * channels {
            return Err(BackboneError::DimensionMismatch(format!(
                "{} values for a {layers}x{rows}x{cols}x{channels} stack",
                data.len()
            )));
        }
        Ok(Self {
            layers,
            rows,
            cols,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, layer: usize, row: usize, col: usize, ch: usize) -> f32 {
        self.data[((layer * self.rows + row) * self.cols + col) * self.channels + ch]
    }

    /// One row per patch, holding the layers' channels side by side (`layer * c + ch`).
    pub fn patch_matrix<T: Real>(&self) -> Tensor<T> {
        let (p, lc) = (self.rows * self.cols, self.layers * self.channels);
        let mut out = Tensor::zeros(p, lc);
        for l in 0..self.layers {
            for patch in 0..p {
                let src = &self.data[(l * p + patch) * self.channels..(l * p + patch + 1) * self.channels];
                for (ch, &v) in src.iter().enumerate() {
                    out.data[patch * lc + l * self.channels + ch] = T::from_f64(v as f64);
                }
            }
        }
        out
    }

    /// Inverse of [`patch_matrix`](Self::patch_matrix).
    pub fn from_patch_matrix<T: Real>(m: &Tensor<T>, rows: usize, cols: usize, layers: usize) -> Result<Self, BackboneError> {
        if m.rows != rows * cols || layers == 0 || m.cols % layers != 0 {
            return Err(BackboneError::DimensionMismatch(format!(
                "{}x{} matrix is not a {rows}x{cols} grid of {layers} layers",
                m.rows, m.cols
            )));
        }
        let c = m.cols / layers;
        let p = rows * cols;
        let mut data = vec![0.0f32; layers * p * c];
        for patch in 0..p {
            for l in 0..layers {
                for ch in 0..c {
                    data[(l * p + patch) * c + ch] = m.get(patch, l * c + ch).as_f64() as f32;
                }
            }
        }
        Self::new(layers, rows, cols, c, data)
    }
}

/// `rows × cols` grid of `dim`-dimensional descriptors; token `r * cols + c` is patch `(r, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Tensor<T>,
}

impl<T: Real> PatchGrid<T> {
    pub fn dim(&self) -> usize {
        self.tokens.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Continuous coordinates of the patch's center pixel.
    pub fn patch_center(&self, index: usize) -> (f64, f64) {
        patch_center(index, self.cols)
    }
}

/// Integer pixel `(x, y)` at the center of patch `index` on a grid `cols` patches wide.
pub fn patch_center_pixel(index: usize, cols: usize) -> (usize, usize) {
    let (r, c) = (index / cols, index % cols);
    (c * PATCH + PATCH / 2, r * PATCH + PATCH / 2)
}

/// Continuous coordinates of the center of [`patch_center_pixel`].
pub fn patch_center(index: usize, cols: usize) -> (f64, f64) {
    let (x, y) = patch_center_pixel(index, cols);
    (x as f64 + 0.5, y as f64 + 0.5)
}

/// Mean foreground value of each 14×14 patch of a NOCS image, `None` where the patch has no
/// foreground pixel. Patches are in row-major grid order.
pub fn patch_mean_nocs(width: usize, height: usize, nocs: &[[f32; 3]], mask: &[bool]) -> Vec<Option<[f64; 3]>> {
    assert_eq!(nocs.len(), width * height);
    assert_eq!(mask.len(), width * height);
    let (rows, cols) = (height / PATCH, width / PATCH);
    let mut out = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut sum = [0.0f64; 3];
            let mut n = 0usize;
            for y in pr * PATCH..(pr + 1) * PATCH {
                for x in pc * PATCH..(pc + 1) * PATCH {
                    let i = y * width + x;
                    if mask[i] {
                        for ch in 0..3 {
                            sum[ch] += nocs[i][ch] as f64;
                        }
                        n += 1;
                    }
                }
            }
            out.push((n > 0).then(|| sum.map(|s| s / n as f64)));
        }
    }
    out
}

/// Row-gather index for a zero-padded 3×3 convolution with the given dilation: entry
/// `p * 9 + tap` names the input patch read by tap `(ky, kx)` of output patch `p`.
pub(crate) fn conv_index(rows: usize, cols: usize, dilation: usize) -> Vec<Option<u32>> {
    let d = dilation as isize;
    let mut index = Vec::with_capacity(rows * cols * 9);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for ky in -1..=1isize {
                for kx in -1..=1isize {
                    let (rr, cc) = (r + ky * d, c + kx * d);
                    let inside = rr >= 0 && cc >= 0 && rr < rows as isize && cc < cols as isize;
                    index.push(inside.then(|| (rr as usize * cols + cc as usize) as u32));
                }
            }
        }
    }
    index
}

/// Zero-padded 3×3 convolution over a patch grid. `w` is `9·c_in × c_out` with taps in
/// row-major `(ky, kx)` order, `b` is `1 × c_out`.
pub(crate) fn conv3x3<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    rows: usize,
    cols: usize,
    dilation: usize,
    w: Var,
    b: Var,
) -> Var {
    let c_in = g.shape(x).1;
    let gathered = g.gather_rows(x, Rc::new(conv_index(rows, cols, dilation)));
    let cols_mat = g.reshape(gathered, rows * cols, 9 * c_in);
    let y = g.matmul(cols_mat, w);
    g.add_row(y, b)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::real::Real;

use super::{conv3x3, BackboneError};

pub const ADAPTER_DILATIONS: [usize; 4] = [1, 2, 3, 4];
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Backbone layers concatenated per patch.
    pub layers: usize,
    /// Channels per backbone layer.
    pub channels: usize,
    /// Output descriptor width.
    pub dim: usize,
}

impl AdapterConfig {
    pub fn input_width(&self) -> usize {
        self.layers * self.channels
    }
}

/// Parameters: `adapter.reduce.{w,b}`, `adapter.conv{i}.{w,b}` for each dilation,
/// `adapter.norm.{g,b}`.
pub fn init_adapter<T: Real>(store: &mut ParamStore<T>, cfg: &AdapterConfig, rng: &mut impl Rng) {
    let d = cfg.dim;
    store.init_glorot("adapter.reduce.w", cfg.input_width(), d, rng);
    store.init_const("adapter.reduce.b", 1, d, 0.0);
    for i in 0..ADAPTER_DILATIONS.len() {
        store.init_glorot(&format!("adapter.conv{i}.w"), 9 * d, d, rng);
        store.init_const(&format!("adapter.conv{i}.b"), 1, d, 0.0);
    }
    store.init_const("adapter.norm.g", 1, d, 1.0);
    store.init_const("adapter.norm.b", 1, d, 0.0);
}

/// Fuses a `rows·cols × L·c` patch matrix into `rows·cols × d` descriptors: linear reduction,
/// four parallel dilated 3×3 convolutions, their sum, then layer norm per patch.
pub fn adapter_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    stack: Var,
    rows: usize,
    cols: usize,
) -> Result<Var, BackboneError> {
    let (p, width) = g.shape(stack);
    let w = g.param(store, "adapter.reduce.w");
    let (expect, d) = g.shape(w);
    if p != rows * cols || width != expect {
        return Err(BackboneError::DimensionMismatch(format!(
            "adapter expects {}x{expect}, got {p}x{width}",
            rows * cols
        )));
    }
    let b = g.param(store, "adapter.reduce.b");
    let x = g.matmul(stack, w);
    let x = g.add_row(x, b);
    let mut sum: Option<Var> = None;
    for (i, &dil) in ADAPTER_DILATIONS.iter().enumerate() {
        let cw = g.param(store, &format!("adapter.conv{i}.w"));
        let cb = g.param(store, &format!("adapter.conv{i}.b"));
        let y = conv3x3(g, x, rows, cols, dil, cw, cb);
        sum = Some(match sum {
            Some(s) => g.add(s, y),
            None => y,
        });
    }
    let gain = g.param(store, "adapter.norm.g");
    let bias = g.param(store, "adapter.norm.b");
    debug_assert_eq!(g.shape(gain).1, d);
    Ok(g.layer_norm(sum.expect("four branches"), gain, bias, T::from_f64(LN_EPS)))
}

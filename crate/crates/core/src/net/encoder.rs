use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::real::Real;

use super::attention::{attention, init_attention, init_layer_norm, init_swiglu, layer_norm, swiglu};
use super::rope::rope3d_table;
use super::{NetConfig, NetError};

/// Per block `b`: `enc.{b}.attn`, `enc.{b}.ln1`, `enc.{b}.ffn`, `enc.{b}.ln2`.
pub fn init_encoder<T: Real>(store: &mut ParamStore<T>, cfg: &NetConfig, rng: &mut impl Rng) {
    for b in 0..cfg.encoder_blocks {
        init_encoder_block(store, &format!("enc.{b}"), cfg.dim, rng);
    }
}

fn init_encoder_block<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, rng: &mut impl Rng) {
    init_attention(store, &format!("{prefix}.attn"), d, rng);
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    init_swiglu(store, &format!("{prefix}.ffn"), d, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
}

/// One encoder block: 3D-rotary self-attention and SwiGLU, each wrapped in a residual and
/// followed by layer norm.
pub fn encoder_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    heads: usize,
    x: Var,
    rope: &Rc<crate::autodiff::RotaryTable<T>>,
) -> Result<Var, NetError> {
    let a = attention(g, store, &format!("{prefix}.attn"), x, x, heads, Some(rope), Some(rope))?;
    let x = g.add(x, a);
    let x = layer_norm(g, store, &format!("{prefix}.ln1"), x);
    let f = swiglu(g, store, &format!("{prefix}.ffn"), x);
    let x = g.add(x, f);
    Ok(layer_norm(g, store, &format!("{prefix}.ln2"), x))
}

/// Runs the template encoder over one sequence of foreground template tokens whose NOCS
/// coordinates are `coords`.
pub fn encoder_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &NetConfig,
    tokens: Var,
    coords: &[[f64; 3]],
) -> Result<Var, NetError> {
    let (m, d) = g.shape(tokens);
    if d != cfg.dim || m != coords.len() {
        return Err(NetError::Dimension(format!(
            "encoder expects {} coordinates of width {}, got {m}x{d} tokens and {} coordinates",
            m,
            cfg.dim,
            coords.len()
        )));
    }
    if m == 0 {
        return Err(NetError::Dimension("encoder input has no foreground tokens".into()));
    }
    let rope = Rc::new(rope3d_table(coords, d)?);
    let mut x = tokens;
    for b in 0..cfg.encoder_blocks {
        x = encoder_block(g, store, &format!("enc.{b}"), cfg.heads, x, &rope)?;
    }
    Ok(x)
}

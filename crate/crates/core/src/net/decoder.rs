use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::real::Real;

use super::attention::{attention, init_attention, init_layer_norm, init_swiglu, layer_norm, swiglu};
use super::rope::rope2d_table;
use super::{NetConfig, NetError};

/// Per layer `l` under `dec.{l}`: image self-attention `sa`/`ln_sa`, image→template
/// cross-attention `ca_it`/`ln_it`, image feed-forward `ffn_i`/`ln_fi`, template→image
/// cross-attention `ca_ti`/`ln_ti`, template feed-forward `ffn_t`/`ln_ft`.
pub fn init_decoder<T: Real>(store: &mut ParamStore<T>, cfg: &NetConfig, rng: &mut impl Rng) {
    for l in 0..cfg.decoder_layers {
        init_decoder_layer(store, &format!("dec.{l}"), cfg.dim, rng);
    }
}

fn init_decoder_layer<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, rng: &mut impl Rng) {
    for (attn, ln) in [("sa", "ln_sa"), ("ca_it", "ln_it"), ("ca_ti", "ln_ti")] {
        init_attention(store, &format!("{prefix}.{attn}"), d, rng);
        init_layer_norm(store, &format!("{prefix}.{ln}"), d);
    }
    for (ffn, ln) in [("ffn_i", "ln_fi"), ("ffn_t", "ln_ft")] {
        init_swiglu(store, &format!("{prefix}.{ffn}"), d, rng);
        init_layer_norm(store, &format!("{prefix}.{ln}"), d);
    }
}

/// Image and template tokens after one decoder layer, both L2-normalized per row.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerOutput {
    pub image: Var,
    pub templates: Var,
}

/// One decoder layer on un-normalized streams; returns the updated streams.
pub fn decoder_layer<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    heads: usize,
    image: Var,
    templates: Var,
    rope: &Rc<crate::autodiff::RotaryTable<T>>,
) -> Result<(Var, Var), NetError> {
    let p = |s: &str| format!("{prefix}.{s}");
    let a = attention(g, store, &p("sa"), image, image, heads, Some(rope), Some(rope))?;
    let x = g.add(image, a);
    let x = layer_norm(g, store, &p("ln_sa"), x);
    let a = attention(g, store, &p("ca_it"), x, templates, heads, None, None)?;
    let x = g.add(x, a);
    let x = layer_norm(g, store, &p("ln_it"), x);
    let f = swiglu(g, store, &p("ffn_i"), x);
    let x = g.add(x, f);
    let image = layer_norm(g, store, &p("ln_fi"), x);

    let a = attention(g, store, &p("ca_ti"), templates, image, heads, None, None)?;
    let t = g.add(templates, a);
    let t = layer_norm(g, store, &p("ln_ti"), t);
    let f = swiglu(g, store, &p("ffn_t"), t);
    let t = g.add(t, f);
    let templates = layer_norm(g, store, &p("ln_ft"), t);
    Ok((image, templates))
}

/// Runs every decoder layer over a `rows × cols` image grid and the encoded template tokens.
/// Returns one L2-normalized output pair per layer; each layer feeds its un-normalized updated
/// streams to the next.
pub fn decoder_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &NetConfig,
    image: Var,
    rows: usize,
    cols: usize,
    templates: Var,
) -> Result<Vec<DecoderLayerOutput>, NetError> {
    let (p, d) = g.shape(image);
    if p != rows * cols || d != cfg.dim || g.shape(templates).1 != cfg.dim {
        return Err(NetError::Dimension(format!(
            "decoder expects {}x{} image tokens and width-{} templates, got {p}x{d} and {:?}",
            rows * cols,
            cfg.dim,
            cfg.dim,
            g.shape(templates)
        )));
    }
    let coords: Vec<[f64; 2]> = (0..p).map(|i| [(i / cols) as f64, (i % cols) as f64]).collect();
    let rope = Rc::new(rope2d_table(&coords, d, cfg.heads)?);
    let (mut x, mut t) = (image, templates);
    let mut out = Vec::with_capacity(cfg.decoder_layers);
    for l in 0..cfg.decoder_layers {
        (x, t) = decoder_layer(g, store, &format!("dec.{l}"), cfg.heads, x, t, &rope)?;
        out.push(DecoderLayerOutput {
            image: g.l2_normalize_rows(x),
            templates: g.l2_normalize_rows(t),
        });
    }
    Ok(out)
}

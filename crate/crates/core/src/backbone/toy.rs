use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::real::Real;

use super::{conv3x3, BackboneError, PATCH};

/// Stages of the toy backbone, one stack layer each.
pub const TOY_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub channels: usize,
}

/// Parameters: `toy.embed.{w,b}` and `toy.stage{i}.{w,b}`.
pub fn init_toy<T: Real>(store: &mut ParamStore<T>, cfg: &ToyConfig, rng: &mut impl Rng) {
    let c = cfg.channels;
    store.init_glorot("toy.embed.w", PATCH * PATCH * 3, c, rng);
    store.init_const("toy.embed.b", 1, c, 0.0);
    for i in 0..TOY_LAYERS {
        store.init_glorot(&format!("toy.stage{i}.w"), 9 * c, c, rng);
        store.init_const(&format!("toy.stage{i}.b"), 1, c, 0.0);
    }
}

/// Cuts an RGB image into 14×14 patches, one row of `14·14·3` centered values per patch.
pub fn patchify<T: Real>(width: usize, height: usize, rgb: &[[f32; 3]]) -> Result<Tensor<T>, BackboneError> {
    if width % PATCH != 0 || height % PATCH != 0 || width == 0 || height == 0 || rgb.len() != width * height {
        return Err(BackboneError::DimensionMismatch(format!(
            "{width}x{height} image with {} pixels is not a grid of 14-pixel patches",
            rgb.len()
        )));
    }
    let (rows, cols) = (height / PATCH, width / PATCH);
    let mut out = Tensor::zeros(rows * cols, PATCH * PATCH * 3);
    for pr in 0..rows {
        for pc in 0..cols {
            let row = out.row_mut(pr * cols + pc);
            for y in 0..PATCH {
                for x in 0..PATCH {
                    let px = rgb[(pr * PATCH + y) * width + pc * PATCH + x];
                    for ch in 0..3 {
                        row[(y * PATCH + x) * 3 + ch] = T::from_f64(px[ch] as f64 - 0.5);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch embedding followed by four 3×3 conv + SiLU stages. Returns the stages' outputs side by
/// side, `rows·cols × 4c`, in the layout of [`DescriptorStack::patch_matrix`](super::DescriptorStack::patch_matrix).
pub fn toy_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    patches: Var,
    rows: usize,
    cols: usize,
) -> Result<Var, BackboneError> {
    let (p, w) = g.shape(patches);
    if p != rows * cols || w != PATCH * PATCH * 3 {
        return Err(BackboneError::DimensionMismatch(format!(
            "toy backbone expects {}x{}, got {p}x{w}",
            rows * cols,
            PATCH * PATCH * 3
        )));
    }
    let ew = g.param(store, "toy.embed.w");
    let eb = g.param(store, "toy.embed.b");
    let x = g.matmul(patches, ew);
    let mut x = g.add_row(x, eb);
    let mut outs = Vec::with_capacity(TOY_LAYERS);
    for i in 0..TOY_LAYERS {
        let w = g.param(store, &format!("toy.stage{i}.w"));
        let b = g.param(store, &format!("toy.stage{i}.b"));
        let y = conv3x3(g, x, rows, cols, 1, w, b);
        x = g.silu(y);
        outs.push(x);
    }
    Ok(g.concat_cols(&outs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(c: usize) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        init_toy(&mut s, &ToyConfig { channels: c }, &mut ChaCha8Rng::seed_from_u64(3));
        s
    }

    #[test]
    fn grid_shape_follows_image() {
        let s = store(4);
        let rgb = vec![[0.2f32, 0.4, 0.6]; 28 * 42];
        let patches = patchify::<f64>(42, 28, &rgb).unwrap();
        let mut g = Graph::new();
        let pv = g.constant(patches);
        let out = toy_forward(&mut g, &s, pv, 2, 3).unwrap();
        assert_eq!(g.shape(out), (6, 16));
        assert!(patchify::<f64>(40, 28, &vec![[0.0; 3]; 40 * 28]).is_err());
    }

    #[test]
    fn patch_layout() {
        let (w, h) = (28, 14);
        let rgb: Vec<[f32; 3]> = (0..w * h).map(|i| [(i % w) as f32 / 100.0, (i / w) as f32 / 100.0, 0.5]).collect();
        let t = patchify::<f64>(w, h, &rgb).unwrap();
        // Patch 1, local pixel (y=2, x=3) is image pixel (17, 2).
        let off = (2 * PATCH + 3) * 3;
        assert!((t.get(1, off) - (0.17 - 0.5)).abs() < 1e-6);
        assert!((t.get(1, off + 1) - (0.02 - 0.5)).abs() < 1e-6);
    }

    #[test]
    fn constant_image_gives_constant_interior() {
        let s = store(5);
        let (rows, cols) = (10, 10);
        let rgb = vec![[0.9f32, 0.1, 0.3]; rows * cols * PATCH * PATCH];
        let patches = patchify::<f64>(cols * PATCH, rows * PATCH, &rgb).unwrap();
        let mut g = Graph::new();
        let pv = g.constant(patches);
        let out = toy_forward(&mut g, &s, pv, rows, cols).unwrap();
        let v = g.value(out);
        // Stage l is unaffected by zero padding at patches at least l+1 away from the border.
        for l in 0..TOY_LAYERS {
            let m = l + 1;
            let reference = &v.row(m * cols + m)[l * 5..(l + 1) * 5].to_vec();
            for r in m..rows - m {
                for c in m..cols - m {
                    assert_eq!(&v.row(r * cols + c)[l * 5..(l + 1) * 5], &reference[..]);
                }
            }
        }
    }
}

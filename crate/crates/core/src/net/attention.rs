use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, RotaryTable, Var};
use crate::real::Real;

use super::NetError;

/// SwiGLU hidden width: `4d/1.5` rounded up to a multiple of 8.
pub fn ffn_hidden(d: usize) -> usize {
    (8 * d).div_ceil(3).div_ceil(8) * 8
}

/// Projections `{prefix}.{wq,wk,wv,wo}`, each `d × d`, without bias.
pub fn init_attention<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, rng: &mut impl Rng) {
    for p in ["wq", "wk", "wv", "wo"] {
        store.init_glorot(&format!("{prefix}.{p}"), d, d, rng);
    }
}

/// Weights `{prefix}.{w1,w2}` (`d × h`) and `{prefix}.w3` (`h × d`).
pub fn init_swiglu<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, rng: &mut impl Rng) {
    let h = ffn_hidden(d);
    store.init_glorot(&format!("{prefix}.w1"), d, h, rng);
    store.init_glorot(&format!("{prefix}.w2"), d, h, rng);
    store.init_glorot(&format!("{prefix}.w3"), h, d, rng);
}

/// Gain and shift `{prefix}.{g,b}`.
pub fn init_layer_norm<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize) {
    store.init_const(&format!("{prefix}.g"), 1, d, 1.0);
    store.init_const(&format!("{prefix}.b"), 1, d, 0.0);
}

pub fn layer_norm<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Var {
    let gain = g.param(store, &format!("{prefix}.g"));
    let bias = g.param(store, &format!("{prefix}.b"));
    g.layer_norm(x, gain, bias, T::from_f64(1e-5))
}

/// Multi-head attention of `queries` over `context`. Rotary tables, when given, rotate the
/// projected queries and keys over the full width before the split into heads; values are never
/// rotated. Scores are scaled by `1/sqrt(head width)`.
pub fn attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    queries: Var,
    context: Var,
    heads: usize,
    rope_q: Option<&Rc<RotaryTable<T>>>,
    rope_k: Option<&Rc<RotaryTable<T>>>,
) -> Result<Var, NetError> {
    let d = g.shape(queries).1;
    if g.shape(context).1 != d || heads == 0 || d % heads != 0 {
        return Err(NetError::Dimension(format!(
            "attention over widths {d} and {} with {heads} heads",
            g.shape(context).1
        )));
    }
    if g.shape(context).0 == 0 {
        return Err(NetError::Dimension("attention over an empty context".into()));
    }
    let hd = d / heads;
    let wq = g.param(store, &format!("{prefix}.wq"));
    let wk = g.param(store, &format!("{prefix}.wk"));
    let wv = g.param(store, &format!("{prefix}.wv"));
    let wo = g.param(store, &format!("{prefix}.wo"));
    let mut q = g.matmul(queries, wq);
    let mut k = g.matmul(context, wk);
    let v = g.matmul(context, wv);
    if let Some(t) = rope_q {
        q = g.rotary(q, t.clone());
    }
    if let Some(t) = rope_k {
        k = g.rotary(k, t.clone());
    }
    let scale = T::one() / T::from_usize(hd).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * hd, hd), g.slice_cols(k, h * hd, hd), g.slice_cols(v, h * hd, hd))
        };
        let s = g.matmul_nt(qh, kh);
        let s = g.scale(s, scale);
        if !g.value(s).is_finite() {
            return Err(NetError::NonFiniteAttention);
        }
        let a = g.softmax_rows(s);
        outs.push(g.matmul(a, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    Ok(g.matmul(o, wo))
}

/// `(silu(x·W1) ⊙ (x·W2))·W3`.
pub fn swiglu<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Var {
    let w1 = g.param(store, &format!("{prefix}.w1"));
    let w2 = g.param(store, &format!("{prefix}.w2"));
    let w3 = g.param(store, &format!("{prefix}.w3"));
    let a = g.matmul(x, w1);
    let a = g.silu(a);
    let b = g.matmul(x, w2);
    let h = g.mul(a, b);
    g.matmul(h, w3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn identity_store(d: usize) -> ParamStore<f64> {
        let mut s = ParamStore::<f64>::new();
        for p in ["wq", "wk", "wv", "wo"] {
            s.insert(format!("a.{p}"), Tensor::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 }));
        }
        s
    }

    #[test]
    fn hidden_width() {
        assert_eq!(ffn_hidden(576), 1536);
        assert_eq!(ffn_hidden(48), 128);
        assert_eq!(ffn_hidden(24), 64);
        assert_eq!(ffn_hidden(12), 32);
        assert_eq!(ffn_hidden(6), 16);
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = identity_store(8);
        let mut g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 3, 8));
        let x = rand_t(&mut rng, 1, 8);
        let c = g.constant(x.clone());
        let out = attention(&mut g, &s, "a", q, c, 2, None, None).unwrap();
        for r in 0..3 {
            for (a, b) in g.value(out).row(r).iter().zip(&x.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_keys_share_weight_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = identity_store(4);
        // Keys read only the first two columns, where both context rows agree.
        s.insert("a.wk", Tensor::from_fn(4, 4, |r, c| if r == c && r < 2 { 1.0 } else { 0.0 }));
        let ctx = Tensor::from_vec(2, 4, vec![0.3, -0.2, 1.0, 2.0, 0.3, -0.2, -4.0, 6.0]);
        let mut g = Graph::new();
        let q = g.constant(rand_t(&mut rng, 3, 4));
        let c = g.constant(ctx);
        let out = attention(&mut g, &s, "a", q, c, 1, None, None).unwrap();
        for r in 0..3 {
            let row = g.value(out).row(r);
            assert!((row[2] + 1.5).abs() < 1e-12);
            assert!((row[3] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_explicit_summation() {
        let (m, n, d, heads) = (8, 5, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        init_attention(&mut s, "a", d, &mut rng);
        let xq = rand_t(&mut rng, m, d);
        let xc = rand_t(&mut rng, n, d);
        let mut g = Graph::new();
        let (qv, cv) = (g.constant(xq.clone()), g.constant(xc.clone()));
        let out = attention(&mut g, &s, "a", qv, cv, heads, None, None).unwrap();
        let got = g.value(out).clone();

        let proj = |x: &Tensor<f64>, w: &Tensor<f64>| {
            Tensor::<f64>::from_fn(x.rows, d, |r, c| (0..d).map(|k| x.get(r, k) * w.get(k, c)).sum())
        };
        let q = proj(&xq, s.get("a.wq").unwrap());
        let k = proj(&xc, s.get("a.wk").unwrap());
        let v = proj(&xc, s.get("a.wv").unwrap());
        let hd = d / heads;
        let mut o = Tensor::zeros(m, d);
        for i in 0..m {
            for h in 0..heads {
                let r = h * hd..(h + 1) * hd;
                let sims: Vec<f64> = (0..n)
                    .map(|j| {
                        let qk: f64 = r.clone().map(|c| q.get(i, c) * k.get(j, c)).sum();
                        (qk / (hd as f64).sqrt()).exp()
                    })
                    .collect();
                let z: f64 = sims.iter().sum();
                for c in r {
                    o.set(i, c, (0..n).map(|j| sims[j] * v.get(j, c)).sum::<f64>() / z);
                }
            }
        }
        let want = proj(&o, s.get("a.wo").unwrap());
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let s = g.constant(rand_t(&mut rng, 6, 9).map(|x| x * 50.0));
        let a = g.softmax_rows(s);
        for r in 0..6 {
            assert!((g.value(a).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_scores_are_reported() {
        let s = identity_store(4);
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_vec(1, 4, vec![f64::INFINITY, 0.0, 0.0, 0.0]));
        let c = g.constant(Tensor::from_vec(1, 4, vec![-1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            attention(&mut g, &s, "a", q, c, 1, None, None),
            Err(NetError::NonFiniteAttention)
        ));
    }

    #[test]
    fn swiglu_zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::<f64>::new();
        init_swiglu(&mut s, "f", 12, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(3, 12));
        let y = swiglu(&mut g, &s, "f", x);
        assert_eq!(g.shape(y), (3, 12));
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }
}

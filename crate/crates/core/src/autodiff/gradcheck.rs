//! Central finite-difference checks of parameter gradients.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};

pub fn rand_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Reduces `v` to a scalar with fixed random weights so no gradient cancels by symmetry.
pub fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let (r, c) = g.shape(v);
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), r, c, 1.0);
    let wv = g.constant(w);
    let p = g.mul(v, wv);
    g.sum(p)
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per parameter, with
/// central differences of step `1e-4`, over at most 24 evenly spaced entries per tensor.
pub fn param_grad_errors(
    store: &ParamStore<f64>,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
) -> BTreeMap<String, f64> {
    const MAX_ENTRIES: usize = 24;
    let h = 1e-4;
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let analytic = g.backward(out).params(&g);
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let out = f(&mut g, s);
        g.value(out).data[0]
    };
    let mut errors = BTreeMap::new();
    let mut work = store.clone();
    for (name, a) in &analytic {
        let stride = a.len().div_ceil(MAX_ENTRIES);
        let picked: Vec<usize> = (0..a.len()).step_by(stride).collect();
        let mut num = vec![0.0; picked.len()];
        for (&i, n) in picked.iter().zip(num.iter_mut()) {
            let orig = work.get(name).unwrap().data[i];
            work.get_mut(name).unwrap().data[i] = orig + h;
            let plus = eval(&work);
            work.get_mut(name).unwrap().data[i] = orig - h;
            let minus = eval(&work);
            work.get_mut(name).unwrap().data[i] = orig;
            *n = (plus - minus) / (2.0 * h);
        }
        let a: Vec<f64> = picked.iter().map(|&i| a.data[i]).collect();
        let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        errors.insert(name.clone(), if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) });
    }
    errors
}

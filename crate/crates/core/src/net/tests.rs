use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, ParamStore};
use crate::backbone::{adapter_forward, init_adapter, AdapterConfig};
use crate::testutil::{assert_grads_close, param_grad_errors, rand_tensor, weighted_sum};

fn mini() -> NetConfig {
    NetConfig {
        dim: 24,
        heads: 2,
        encoder_blocks: 2,
        decoder_layers: 4,
    }
}

fn coords(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    use rand::Rng;
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect()
}

fn net_store(cfg: &NetConfig, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_encoder(&mut s, cfg, &mut rng);
    init_decoder(&mut s, cfg, &mut rng);
    // Perturb norm parameters away from their identity initialization.
    for (name, t) in s.iter_mut() {
        if name.ends_with(".g") || name.ends_with(".b") {
            let noise = rand_tensor(&mut rng, t.rows, t.cols, 0.3);
            for (v, n) in t.data.iter_mut().zip(&noise.data) {
                *v += n;
            }
        }
    }
    s
}

fn run_encoder(s: &ParamStore<f64>, cfg: &NetConfig, x: &Tensor<f64>, c: &[[f64; 3]]) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = encoder_forward(&mut g, s, cfg, xv, c).unwrap();
    g.value(out).clone()
}

#[test]
fn config_validation() {
    assert!(NetConfig::default().validate().is_ok());
    assert_eq!(NetConfig::default().head_dim(), 72);
    assert!(mini().validate().is_ok());
    assert!(NetConfig { dim: 12, heads: 2, ..mini() }.validate().is_err());
    assert!(NetConfig { dim: 20, heads: 1, ..mini() }.validate().is_err());
}

#[test]
fn encoder_shape_and_permutation_equivariance() {
    let cfg = mini();
    let s = net_store(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 12;
    let x = rand_tensor(&mut rng, n, 24, 1.0);
    let c = coords(&mut rng, n);
    let out = run_encoder(&s, &cfg, &x, &c);
    assert_eq!(out.shape(), (n, 24));

    let perm: Vec<usize> = vec![5, 3, 11, 0, 1, 2, 4, 6, 10, 9, 8, 7];
    let xp = x.select_rows(&perm);
    let cp: Vec<[f64; 3]> = perm.iter().map(|&i| c[i]).collect();
    let outp = run_encoder(&s, &cfg, &xp, &cp);
    let want = out.select_rows(&perm);
    for (a, b) in outp.data.iter().zip(&want.data) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn encoder_attends_across_templates() {
    let cfg = mini();
    let s = net_store(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, 10, 24, 1.0);
    let c = coords(&mut rng, 10);
    let full = run_encoder(&s, &cfg, &x, &c);
    // Only the first template's five tokens.
    let alone = run_encoder(&s, &cfg, &x.select_rows(&[0, 1, 2, 3, 4]), &c[..5]);
    let diff = (0..5 * 24).map(|i| (full.data[i] - alone.data[i]).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3);
}

#[test]
fn forward_passes_stay_finite_on_large_inputs() {
    let cfg = mini();
    let s = net_store(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, 8, 24, 1e3);
    let c = coords(&mut rng, 8);
    assert!(run_encoder(&s, &cfg, &x, &c).is_finite());
    let mut g = Graph::new();
    let img = g.constant(rand_tensor(&mut rng, 6, 24, 1e3));
    let t = g.constant(x);
    let outs = decoder_forward(&mut g, &s, &cfg, img, 2, 3, t).unwrap();
    for o in outs {
        assert!(g.value(o.image).is_finite() && g.value(o.templates).is_finite());
    }
}

#[test]
fn decoder_outputs_are_unit_norm_and_deterministic() {
    let cfg = mini();
    let s = net_store(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = rand_tensor(&mut rng, 12, 24, 1.0);
    let tmpl = rand_tensor(&mut rng, 9, 24, 1.0);
    let run = || {
        let mut g = Graph::new();
        let (i, t) = (g.constant(img.clone()), g.constant(tmpl.clone()));
        let outs = decoder_forward(&mut g, &s, &cfg, i, 3, 4, t).unwrap();
        outs.iter().map(|o| (g.value(o.image).clone(), g.value(o.templates).clone())).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 4);
    for (i, t) in &a {
        for m in [i, t] {
            for r in 0..m.rows {
                let n: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }
    assert_eq!(a, run());
}

#[test]
fn decoder_rejects_bad_grid() {
    let cfg = mini();
    let s = net_store(&cfg, 9);
    let mut g = Graph::new();
    let i = g.constant(Tensor::zeros(5, 24));
    let t = g.constant(Tensor::zeros(2, 24));
    assert!(decoder_forward(&mut g, &s, &cfg, i, 2, 3, t).is_err());
}

#[test]
fn gradcheck_swiglu() {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    init_swiglu(&mut s, "f", 24, &mut rng);
    let x = rand_tensor(&mut rng, 6, 24, 1.0);
    let e = param_grad_errors(&s, |g, s| {
        let xv = g.constant(x.clone());
        let y = swiglu(g, s, "f", xv);
        weighted_sum(g, y, 1)
    });
    assert_grads_close(&e, 1e-6);
}

#[test]
fn gradcheck_encoder_blocks() {
    let cfg = mini();
    let s = net_store(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, 6, 24, 1.0);
    let c = coords(&mut rng, 6);
    let enc_only = {
        let mut s2 = s.clone();
        let _ = s2.split_prefix("dec.");
        s2
    };
    let e = param_grad_errors(&enc_only, |g, s| {
        let xv = g.constant(x.clone());
        let y = encoder_forward(g, s, &cfg, xv, &c).unwrap();
        weighted_sum(g, y, 2)
    });
    assert_eq!(e.len(), enc_only.len());
    assert_grads_close(&e, 1e-5);
}

#[test]
fn gradcheck_decoder_layers() {
    let cfg = mini();
    let mut s = net_store(&cfg, 13);
    let _ = s.split_prefix("enc.");
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let img = rand_tensor(&mut rng, 4, 24, 1.0);
    let tmpl = rand_tensor(&mut rng, 4, 24, 1.0);
    let e = param_grad_errors(&s, |g, s| {
        let (i, t) = (g.constant(img.clone()), g.constant(tmpl.clone()));
        let outs = decoder_forward(g, s, &cfg, i, 2, 2, t).unwrap();
        let parts: Vec<_> = outs.iter().flat_map(|o| [o.image, o.templates]).collect();
        let all = g.concat_rows(&parts);
        weighted_sum(g, all, 3)
    });
    assert_eq!(e.len(), s.len());
    assert_grads_close(&e, 1e-5);
}

#[test]
fn gradcheck_adapter() {
    let cfg = AdapterConfig { layers: 2, channels: 6, dim: 24 };
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    init_adapter(&mut s, &cfg, &mut rng);
    let x = rand_tensor(&mut rng, 9, 12, 1.0);
    let e = param_grad_errors(&s, |g, s| {
        let xv = g.constant(x.clone());
        let y = adapter_forward(g, s, xv, 3, 3).unwrap();
        weighted_sum(g, y, 4)
    });
    assert_grads_close(&e, 1e-5);
}

#[test]
fn template_tokens_skip_background() {
    use crate::geometry::{CameraIntrinsics, Pose};
    let k = CameraIntrinsics::new(20.0, 20.0, 14.0, 7.0, 28, 14).unwrap();
    let mut t = TemplateImage::blank(k, Pose::identity());
    t.mask[3] = true;
    t.nocs[3] = [0.5, 0.25, 0.75];
    let grid = Tensor::from_fn(2, 6, |r, c| (r * 6 + c) as f64);
    let tok = TemplateTokens::gather(&[&grid], &[&t], &[4]).unwrap();
    assert_eq!(tok.len(), 1);
    assert_eq!(tok.origins[0], TokenOrigin { template: 4, patch: 0 });
    assert_eq!(tok.coords[0], [0.5, 0.25, 0.75]);
    assert_eq!(tok.tokens.row(0), grid.row(0));
    let _ = Rc::new(());
}

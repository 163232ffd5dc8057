use std::collections::BTreeMap;

use crate::real::Real;

use super::graph::{Op, Var};
use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::{Graph, Tensor};

/// Gradients of one scalar with respect to every node that needs them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every bound parameter, by name. Parameters that did not influence the
    /// output get zeros.
    pub fn params(&self, graph: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        graph
            .bound_params()
            .iter()
            .filter(|(_, v)| graph.needs_grad[v.0])
            .map(|(name, &v)| {
                let g = self.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = graph.shape(v);
                    Tensor::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: (usize, usize)) -> &mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

impl<T: Real> Graph<T> {
    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for node in (0..=output.0).rev() {
            if !self.needs_grad[node] {
                continue;
            }
            let Some(g) = grads[node].take() else { continue };
            let ng = |v: Var| self.needs_grad[v.0];
            let shape = |v: Var| self.values[v.0].shape();
            match &self.ops[node] {
                Op::Input => {
                    grads[node] = Some(g);
                    continue;
                }
                &Op::MatMul(a, b) => {
                    let (m, k) = shape(a);
                    let n = shape(b).1;
                    if ng(a) {
                        // dA = dC · Bᵀ
                        let ga = acc(&mut grads, a, (m, k));
                        gemm_nt(&g.data, &self.values[b.0].data, &mut ga.data, m, n, k);
                    }
                    if ng(b) {
                        // dB = Aᵀ · dC
                        let gb = acc(&mut grads, b, (k, n));
                        gemm_tn(&self.values[a.0].data, &g.data, &mut gb.data, m, k, n);
                    }
                }
                &Op::MatMulNT(a, b) => {
                    let (m, k) = shape(a);
                    let n = shape(b).0;
                    if ng(a) {
                        // dA = dC · B
                        let ga = acc(&mut grads, a, (m, k));
                        gemm_nn(&g.data, &self.values[b.0].data, &mut ga.data, m, n, k);
                    }
                    if ng(b) {
                        // dB = dCᵀ · A
                        let gb = acc(&mut grads, b, (n, k));
                        gemm_tn(&g.data, &self.values[a.0].data, &mut gb.data, m, n, k);
                    }
                }
                &Op::Add(a, b) => {
                    for v in [a, b] {
                        if ng(v) {
                            let gv = acc(&mut grads, v, shape(v));
                            axpy(T::one(), &g.data, &mut gv.data);
                        }
                    }
                }
                &Op::Sub(a, b) => {
                    if ng(a) {
                        axpy(T::one(), &g.data, &mut acc(&mut grads, a, shape(a)).data);
                    }
                    if ng(b) {
                        axpy(-T::one(), &g.data, &mut acc(&mut grads, b, shape(b)).data);
                    }
                }
                &Op::Mul(a, b) => {
                    for (v, other) in [(a, b), (b, a)] {
                        if ng(v) {
                            let o = &self.values[other.0].data;
                            let gv = acc(&mut grads, v, shape(v));
                            for ((d, &gi), &oi) in gv.data.iter_mut().zip(&g.data).zip(o) {
                                *d += gi * oi;
                            }
                        }
                    }
                }
                &Op::Scale(a, s) => {
                    if ng(a) {
                        axpy(s, &g.data, &mut acc(&mut grads, a, shape(a)).data);
                    }
                }
                &Op::AddRow(a, row) => {
                    if ng(a) {
                        axpy(T::one(), &g.data, &mut acc(&mut grads, a, shape(a)).data);
                    }
                    if ng(row) {
                        let gr = acc(&mut grads, row, shape(row));
                        for r in 0..g.rows {
                            axpy(T::one(), g.row(r), &mut gr.data);
                        }
                    }
                }
                &Op::MulRow(a, row) => {
                    let c = g.cols;
                    if ng(a) {
                        let w = self.values[row.0].data.clone();
                        let ga = acc(&mut grads, a, shape(a));
                        for r in 0..g.rows {
                            for j in 0..c {
                                ga.data[r * c + j] += g.data[r * c + j] * w[j];
                            }
                        }
                    }
                    if ng(row) {
                        let x = &self.values[a.0];
                        let gr = acc(&mut grads, row, shape(row));
                        for r in 0..g.rows {
                            for j in 0..c {
                                gr.data[j] += g.data[r * c + j] * x.data[r * c + j];
                            }
                        }
                    }
                }
                &Op::Silu(a) => {
                    if ng(a) {
                        let x = &self.values[a.0].data;
                        let ga = acc(&mut grads, a, shape(a));
                        for ((d, &gi), &xi) in ga.data.iter_mut().zip(&g.data).zip(x) {
                            let s = T::one() / (T::one() + (-xi).exp());
                            *d += gi * s * (T::one() + xi * (T::one() - s));
                        }
                    }
                }
                &Op::SoftmaxRows(a) => {
                    if ng(a) {
                        let y = &self.values[node];
                        let ga = acc(&mut grads, a, shape(a));
                        for r in 0..y.rows {
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let inner = dot(yr, gr);
                            for ((d, &yi), &gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *d += yi * (gi - inner);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (r, c) = shape(*x);
                    if ng(*gain) {
                        let gg = acc(&mut grads, *gain, (1, c));
                        for i in 0..r {
                            for j in 0..c {
                                gg.data[j] += g.data[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if ng(*bias) {
                        let gb = acc(&mut grads, *bias, (1, c));
                        for i in 0..r {
                            axpy(T::one(), g.row(i), &mut gb.data);
                        }
                    }
                    if ng(*x) {
                        let w = self.values[gain.0].data.clone();
                        let n = T::from_usize(c);
                        let gx = acc(&mut grads, *x, (r, c));
                        let mut dh = vec![T::zero(); c];
                        for i in 0..r {
                            let h = &xhat[i * c..(i + 1) * c];
                            for j in 0..c {
                                dh[j] = g.data[i * c + j] * w[j];
                            }
                            let mean_dh = dh.iter().copied().sum::<T>() / n;
                            let mean_dh_h = dot(&dh, h) / n;
                            for j in 0..c {
                                gx.data[i * c + j] += inv_std[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                            }
                        }
                    }
                }
                Op::Rotary(x, table) => {
                    if ng(*x) {
                        let mut back = g.clone();
                        table.apply(&mut back, true);
                        axpy(T::one(), &back.data, &mut acc(&mut grads, *x, shape(*x)).data);
                    }
                }
                Op::L2Normalize { x, inv_norm } => {
                    if ng(*x) {
                        let y = &self.values[node];
                        let gx = acc(&mut grads, *x, shape(*x));
                        for r in 0..y.rows {
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let inner = dot(yr, gr);
                            let inv = inv_norm[r];
                            for ((d, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *d += (gi - yi * inner) * inv;
                            }
                        }
                    }
                }
                Op::GatherRows(x, index) => {
                    if ng(*x) {
                        let gx = acc(&mut grads, *x, shape(*x));
                        for (i, ix) in index.iter().enumerate() {
                            if let Some(j) = ix {
                                axpy(T::one(), g.row(i), gx.row_mut(*j as usize));
                            }
                        }
                    }
                }
                &Op::Reshape(x) => {
                    if ng(x) {
                        axpy(T::one(), &g.data, &mut acc(&mut grads, x, shape(x)).data);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (pr, pc) = shape(p);
                        if ng(p) {
                            let gp = acc(&mut grads, p, (pr, pc));
                            for r in 0..pr {
                                axpy(T::one(), &g.row(r)[off..off + pc], gp.row_mut(r));
                            }
                        }
                        off += pc;
                    }
                }
                &Op::SliceCols { x, start } => {
                    if ng(x) {
                        let len = g.cols;
                        let gx = acc(&mut grads, x, shape(x));
                        for r in 0..g.rows {
                            axpy(T::one(), g.row(r), &mut gx.row_mut(r)[start..start + len]);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.values[p.0].len();
                        if ng(p) {
                            axpy(T::one(), &g.data[off..off + n], &mut acc(&mut grads, p, shape(p)).data);
                        }
                        off += n;
                    }
                }
                &Op::Sum(x) => {
                    if ng(x) {
                        let s = g.data[0];
                        for d in acc(&mut grads, x, shape(x)).data.iter_mut() {
                            *d += s;
                        }
                    }
                }
                Op::FocalNce {
                    anchors,
                    candidates,
                    index,
                    tau,
                    dlogits,
                } => {
                    let scale = g.data[0] / *tau;
                    let m = index.negatives_per_anchor;
                    let a = &self.values[anchors.0];
                    let c = &self.values[candidates.0];
                    if ng(*anchors) {
                        let ga = acc(&mut grads, *anchors, a.shape());
                        for i in 0..index.anchors.len() {
                            let d = &dlogits[i * (1 + m)..(i + 1) * (1 + m)];
                            let row = ga.row_mut(index.anchors[i]);
                            axpy(d[0] * scale, c.row(index.positives[i]), row);
                            for j in 0..m {
                                axpy(d[1 + j] * scale, c.row(index.negatives[i * m + j]), row);
                            }
                        }
                    }
                    if ng(*candidates) {
                        let gc = acc(&mut grads, *candidates, c.shape());
                        for i in 0..index.anchors.len() {
                            let d = &dlogits[i * (1 + m)..(i + 1) * (1 + m)];
                            let arow = a.row(index.anchors[i]);
                            axpy(d[0] * scale, arow, gc.row_mut(index.positives[i]));
                            for j in 0..m {
                                axpy(d[1 + j] * scale, arow, gc.row_mut(index.negatives[i * m + j]));
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }
}

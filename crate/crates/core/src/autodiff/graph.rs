use std::collections::BTreeMap;
use std::rc::Rc;

use crate::real::Real;

use super::kernels::{dot, gemm_nn, gemm_nt};
use super::{ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

/// Per-row planar rotations: for every row `r` and pair `p`, columns `pairs[p] = (i, j)` are
/// rotated by the angle whose cosine/sine are stored at `r * pairs.len() + p`.
#[derive(Debug, Clone)]
pub struct RotaryTable<T> {
    pub pairs: Vec<(usize, usize)>,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
    pub rows: usize,
}

impl<T: Real> RotaryTable<T> {
    /// Builds a table from per-row angles (`angles[r * pairs.len() + p]`).
    pub fn from_angles(pairs: Vec<(usize, usize)>, rows: usize, angles: &[f64]) -> Self {
        assert_eq!(angles.len(), rows * pairs.len());
        Self {
            pairs,
            cos: angles.iter().map(|a| T::from_f64(a.cos())).collect(),
            sin: angles.iter().map(|a| T::from_f64(a.sin())).collect(),
            rows,
        }
    }

    /// Rotates `x` in place, or by the inverse rotation when `inverse` is set.
    pub fn apply(&self, x: &mut Tensor<T>, inverse: bool) {
        assert_eq!(x.rows, self.rows, "rotary table built for {} rows, got {}", self.rows, x.rows);
        let np = self.pairs.len();
        for r in 0..x.rows {
            let row = x.row_mut(r);
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                let c = self.cos[r * np + p];
                let s = if inverse { -self.sin[r * np + p] } else { self.sin[r * np + p] };
                let (a, b) = (row[i], row[j]);
                row[i] = a * c - b * s;
                row[j] = a * s + b * c;
            }
        }
    }
}

/// Index set for the fused contrastive loss: per anchor, one positive and `M` negatives, all
/// indexing rows of the candidate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NceIndex {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    /// `anchors.len() × negatives_per_anchor`, row-major.
    pub negatives: Vec<usize>,
    pub negatives_per_anchor: usize,
}

pub(super) enum Op<T> {
    Input,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Silu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Rotary(Var, Rc<RotaryTable<T>>),
    L2Normalize {
        x: Var,
        inv_norm: Vec<T>,
    },
    GatherRows(Var, Rc<Vec<Option<u32>>>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
    FocalNce {
        anchors: Var,
        candidates: Var,
        index: Rc<NceIndex>,
        tau: T,
        /// dLoss/dlogit, `anchors × (1 + M)`.
        dlogits: Vec<T>,
    },
}

/// Eagerly evaluated computation tape.
pub struct Graph<T: Real> {
    pub(super) values: Vec<Tensor<T>>,
    pub(super) ops: Vec<Op<T>>,
    pub(super) needs_grad: Vec<bool>,
    pub(super) params: BTreeMap<String, Var>,
    /// Focal-loss anchors whose probability underflowed and was clamped.
    pub clamped_probabilities: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            params: BTreeMap::new(),
            clamped_probabilities: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A free leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Binds a named parameter; repeated calls return the same node.
    ///
    /// # Panics
    /// If the store has no tensor with that name.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"))
            .clone();
        let trainable = store.is_trainable(name);
        let v = self.push(t, Op::Input, trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul {m}x{k} · {k2}x{n}");
        let mut out = Tensor::zeros(m, n);
        gemm_nn(&self.values[a.0].data, &self.values[b.0].data, &mut out.data, m, k, n);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt {m}x{k} · ({n}x{k2})ᵀ");
        let mut out = Tensor::zeros(m, n);
        gemm_nt(&self.values[a.0].data, &self.values[b.0].data, &mut out.data, m, k, n);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let data = self.values[a.0]
            .data
            .iter()
            .zip(&self.values[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::from_vec(r, c, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.values[a.0].map(|x| x * s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1x{c} row");
        let mut out = self.values[a.0].clone();
        let b = &self.values[row.0].data;
        for i in 0..r {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
                *o += bj;
            }
        }
        let ng = self.ng(&[a, row]);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row expects a 1x{c} row");
        let mut out = self.values[a.0].clone();
        let b = &self.values[row.0].data;
        for i in 0..r {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
                *o *= bj;
            }
        }
        let ng = self.ng(&[a, row]);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|x| x / (T::one() + (-x).exp()));
        let ng = self.ng(&[a]);
        self.push(out, Op::Silu(a), ng)
    }

    /// Row-wise softmax. Rows that are entirely `-inf` produce NaN; callers guard against them.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row layer norm with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c));
        assert_eq!(self.shape(bias), (1, c));
        let src = &self.values[x.0];
        let g = &self.values[gain.0].data;
        let b = &self.values[bias.0].data;
        let n = T::from_usize(c);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = src.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out.data[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn rotary(&mut self, x: Var, table: Rc<RotaryTable<T>>) -> Var {
        let mut out = self.values[x.0].clone();
        table.apply(&mut out, false);
        let ng = self.ng(&[x]);
        self.push(out, Op::Rotary(x, table), ng)
    }

    /// Scales every row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.values[x.0].clone();
        let mut inv_norm = vec![T::zero(); out.rows];
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = dot(row, row).sqrt();
            let inv = if n > T::zero() { T::one() / n } else { T::zero() };
            inv_norm[r] = inv;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::L2Normalize { x, inv_norm }, ng)
    }

    /// Output row `i` is input row `index[i]`, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<Vec<Option<u32>>>) -> Var {
        let src = &self.values[x.0];
        let c = src.cols;
        let mut out = Tensor::zeros(index.len(), c);
        for (i, ix) in index.iter().enumerate() {
            if let Some(j) = ix {
                out.row_mut(i).copy_from_slice(src.row(*j as usize));
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::GatherRows(x, index), ng)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let src = &self.values[x.0];
        assert_eq!(src.len(), rows * cols, "reshape {}x{} -> {rows}x{cols}", src.rows, src.cols);
        let out = Tensor::from_vec(rows, cols, src.data.clone());
        let ng = self.ng(&[x]);
        self.push(out, Op::Reshape(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == rows), "concat_cols row mismatch");
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.values[p.0].row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = self.ng(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert!(start + len <= cols, "slice_cols {start}+{len} > {cols}");
        let mut out = Tensor::zeros(rows, len);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&self.values[x.0].row(r)[start..start + len]);
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == cols), "concat_rows col mismatch");
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.values[p.0].data);
        }
        let rows = data.len() / cols.max(1);
        let ng = self.ng(parts);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.values[x.0].data.iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Focal InfoNCE over unit descriptors.
    ///
    /// For anchor `i` with logits `l_0 = a·p/τ`, `l_j = a·n_j/τ`, the positive probability is
    /// `s_i = softmax(l)_0` and the loss is `Σ_i (1 − s_i)^γ · (−ln s_i)`. Probabilities below
    /// 1e-12 are clamped (counted in [`Graph::clamped_probabilities`]).
    pub fn focal_nce(&mut self, anchors: Var, candidates: Var, index: Rc<NceIndex>, tau: T, gamma: T) -> Var {
        let m = index.negatives_per_anchor;
        let n = index.anchors.len();
        assert_eq!(index.positives.len(), n);
        assert_eq!(index.negatives.len(), n * m);
        let a = &self.values[anchors.0];
        let c = &self.values[candidates.0];
        assert_eq!(a.cols, c.cols, "anchor/candidate dims differ");
        let floor = T::from_f64(1e-12);
        let mut total = T::zero();
        let mut dlogits = vec![T::zero(); n * (1 + m)];
        let mut clamped = 0;
        let mut logits = vec![T::zero(); 1 + m];
        for i in 0..n {
            let arow = a.row(index.anchors[i]);
            logits[0] = dot(arow, c.row(index.positives[i])) / tau;
            for j in 0..m {
                logits[1 + j] = dot(arow, c.row(index.negatives[i * m + j])) / tau;
            }
            softmax_in_place(&mut logits);
            let mut s = logits[0];
            let was_clamped = s < floor;
            if was_clamped {
                s = floor;
                clamped += 1;
            }
            let one_minus = T::one() - s;
            let nll = -s.ln();
            total += one_minus.powf(gamma) * nll;
            // dL/ds = −γ(1−s)^(γ−1)(−ln s) − (1−s)^γ / s
            let focal_term = if gamma == T::zero() || one_minus <= T::zero() {
                T::zero()
            } else {
                gamma * one_minus.powf(gamma - T::one()) * nll
            };
            let dl_ds = -focal_term - one_minus.powf(gamma) / s;
            let d = &mut dlogits[i * (1 + m)..(i + 1) * (1 + m)];
            if was_clamped {
                continue;
            }
            // ds/dl_0 = s(1 − s), ds/dl_j = −s q_j, using the unclamped softmax.
            let s_raw = logits[0];
            d[0] = dl_ds * s_raw * (T::one() - s_raw);
            for j in 0..m {
                d[1 + j] = -dl_ds * s_raw * logits[1 + j];
            }
        }
        self.clamped_probabilities += clamped;
        let ng = self.ng(&[anchors, candidates]);
        self.push(
            Tensor::scalar(total),
            Op::FocalNce {
                anchors,
                candidates,
                index,
                tau,
                dlogits,
            },
            ng,
        )
    }
}

/// Numerically stable in-place softmax.
pub(super) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

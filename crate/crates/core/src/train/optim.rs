use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::autodiff::{ParamStore, Tensor};

use super::{OptimizerConfig, TrainError};

/// Learning rate at `step` of a `steps`-long run: linear warmup from 0 to the peak over
/// `warmup_steps`, then cosine annealing reaching `final_lr` at step `steps - 1`.
pub fn learning_rate(step: usize, steps: usize, cfg: &OptimizerConfig) -> f64 {
    let last = steps.saturating_sub(1);
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    if last <= cfg.warmup_steps {
        return if step >= last && last > 0 { cfg.final_lr } else { cfg.peak_lr };
    }
    let progress = ((step - cfg.warmup_steps) as f64 / (last - cfg.warmup_steps) as f64).min(1.0);
    cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + (PI * progress).cos())
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";
const STEP_KEY: &str = "adam.step";

/// Adaptive-moment optimizer with decoupled weight decay and global-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: OptimizerConfig,
    /// Updates applied so far.
    pub t: u64,
    m: BTreeMap<String, Tensor<f32>>,
    v: BTreeMap<String, Tensor<f32>>,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) -> f64 {
        let norm = grads
            .values()
            .map(|g| g.data.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let decay = 1.0 - lr * self.cfg.weight_decay;
        for (name, g) in grads {
            if !params.is_trainable(name) {
                continue;
            }
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                let gi = f64::from(gi) * clip;
                let mn = b1 * f64::from(*mi) + (1.0 - b1) * gi;
                let vn = b2 * f64::from(*vi) + (1.0 - b2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = (mn / c1) / ((vn / c2).sqrt() + self.cfg.eps);
                *pi = (f64::from(*pi) * decay - lr * update) as f32;
            }
        }
        norm
    }

    /// Moments and step count as named tensors for checkpointing.
    pub fn to_store(&self) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (n, t) in &self.m {
            s.insert(format!("{M_PREFIX}{n}"), t.clone());
        }
        for (n, t) in &self.v {
            s.insert(format!("{V_PREFIX}{n}"), t.clone());
        }
        // Stored as two 24-bit halves so any u48 count is exact in f32.
        let lo = (self.t & 0xFF_FFFF) as f32;
        let hi = (self.t >> 24) as f32;
        s.insert(STEP_KEY, Tensor::from_vec(1, 2, vec![lo, hi]));
        s
    }

    pub fn from_store(cfg: OptimizerConfig, store: &ParamStore<f32>) -> Result<Self, TrainError> {
        let step = store
            .get(STEP_KEY)
            .filter(|t| t.len() == 2)
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
        let t = step.data[0] as u64 | ((step.data[1] as u64) << 24);
        let mut out = Self::new(cfg);
        out.t = t;
        for (n, v) in store.iter() {
            if let Some(rest) = n.strip_prefix(M_PREFIX) {
                out.m.insert(rest.to_string(), v.clone());
            } else if let Some(rest) = n.strip_prefix(V_PREFIX) {
                out.v.insert(rest.to_string(), v.clone());
            }
        }
        Ok(out)
    }
}

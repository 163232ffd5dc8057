use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;

use super::{patch_mean_nocs, PatchGrid, PATCH};

/// Standard deviation of the random frequencies, in radians per NOCS unit. Adjacent 14 px
/// template patches lie about 0.04 NOCS apart and keep a cosine near 0.5.
pub const ORACLE_BANDWIDTH: f64 = 30.0;

/// Descriptors computed from ground-truth NOCS: a fixed, seeded random Fourier lift of each
/// patch's mean foreground NOCS value. Unit norm on foreground, zero on background.
#[derive(Debug, Clone)]
pub struct OracleBackbone {
    dim: usize,
    freqs: Vec<[f64; 3]>,
}

impl OracleBackbone {
    /// # Panics
    /// If `dim` is odd or zero.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_bandwidth(dim, seed, ORACLE_BANDWIDTH)
    }

    pub fn with_bandwidth(dim: usize, seed: u64, bandwidth: f64) -> Self {
        assert!(dim > 0 && dim % 2 == 0, "oracle descriptor width must be even");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, bandwidth).expect("finite bandwidth");
        let freqs = (0..dim / 2)
            .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        Self { dim, freqs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit-norm descriptor of one NOCS value: `[cos(Bx), sin(Bx)] / sqrt(d/2)`.
    pub fn lift(&self, nocs: [f64; 3]) -> Vec<f64> {
        let h = self.freqs.len();
        let s = 1.0 / (h as f64).sqrt();
        let mut out = vec![0.0; self.dim];
        for (k, f) in self.freqs.iter().enumerate() {
            let a = f[0] * nocs[0] + f[1] * nocs[1] + f[2] * nocs[2];
            out[k] = a.cos() * s;
            out[h + k] = a.sin() * s;
        }
        out
    }

    /// Describes every 14×14 patch of a NOCS image.
    pub fn describe(&self, width: usize, height: usize, nocs: &[[f32; 3]], mask: &[bool]) -> PatchGrid<f32> {
        let (rows, cols) = (height / PATCH, width / PATCH);
        let mut tokens = Tensor::zeros(rows * cols, self.dim);
        for (i, mean) in patch_mean_nocs(width, height, nocs, mask).into_iter().enumerate() {
            if let Some(mean) = mean {
                for (dst, v) in tokens.row_mut(i).iter_mut().zip(self.lift(mean)) {
                    *dst = v as f32;
                }
            }
        }
        PatchGrid { rows, cols, tokens }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn lift_is_unit_norm_and_deterministic() {
        let o = OracleBackbone::new(64, 3);
        let a = o.lift([0.2, 0.4, 0.9]);
        assert!((cos(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(a, OracleBackbone::new(64, 3).lift([0.2, 0.4, 0.9]));
    }

    #[test]
    fn nearby_points_stay_similar() {
        let o = OracleBackbone::new(576, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
            let step = rng.random_range(0.0..0.004);
            let q: [f64; 3] = std::array::from_fn(|i| p[i] + dir[i] / n * step);
            assert!(cos(&o.lift(p), &o.lift(q)) > 0.97);
        }
    }

    #[test]
    fn distant_points_are_dissimilar() {
        let o = OracleBackbone::new(576, 11);
        let c = cos(&o.lift([0.2, 0.2, 0.2]), &o.lift([0.7, 0.5, 0.3]));
        assert!(c.abs() < 0.2, "{c}");
    }

    #[test]
    fn describe_zeroes_background_and_matches_equal_means() {
        let o = OracleBackbone::new(32, 1);
        let (w, h) = (28, 14);
        let mut nocs = vec![[0.0f32; 3]; w * h];
        let mut mask = vec![false; w * h];
        // Patch 0 is uniform; patch 1 is empty.
        for y in 0..14 {
            for x in 0..14 {
                nocs[y * w + x] = [0.3, 0.6, 0.1];
                mask[y * w + x] = true;
            }
        }
        let grid = o.describe(w, h, &nocs, &mask);
        assert_eq!((grid.rows, grid.cols), (1, 2));
        assert!(grid.tokens.row(1).iter().all(|&v| v == 0.0));
        let direct = o.lift([0.3f32 as f64, 0.6f32 as f64, 0.1f32 as f64]);
        for (a, b) in grid.tokens.row(0).iter().zip(&direct) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }
}

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3};

use super::{refine_reprojection, reprojection_error, PnpError, PnpSolver, PoseEstimate};

/// Hypotheses evaluated between early-termination checks.
const BATCH: usize = 32;
/// Floor on the Cauchy scale of the final polish, pixels.
const MIN_ROBUST_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on reprojection error, pixels.
    pub reproj_px: f64,
    pub sample_size: usize,
    pub solver: PnpSolver,
    /// Sample proportionally to confidence instead of uniformly.
    pub weighted: bool,
    /// Stop once this inlier ratio is reached.
    pub early_stop_ratio: f64,
    /// Levenberg-Marquardt iterations on the final inliers; 0 disables.
    pub polish_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            reproj_px: 14.0,
            sample_size: 6,
            solver: PnpSolver::Sqpnp,
            weighted: true,
            early_stop_ratio: 0.9,
            polish_iterations: 10,
            seed: 0,
        }
    }
}

struct Hypothesis {
    pose: Pose,
    inliers: Vec<usize>,
    mean_error: f64,
    iteration: usize,
}

impl Hypothesis {
    fn beats(&self, other: &Hypothesis) -> bool {
        (self.inliers.len(), other.mean_error, other.iteration) > (other.inliers.len(), self.mean_error, self.iteration)
    }
}

fn score(pose: Pose, points: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics, thr: f64, iteration: usize) -> Hypothesis {
    let mut inliers = Vec::new();
    let mut total = 0.0;
    for (i, (p, px)) in points.iter().zip(pixels).enumerate() {
        let e = reprojection_error(&pose, k, p, px);
        if e <= thr {
            inliers.push(i);
            total += e;
        }
    }
    let mean_error = if inliers.is_empty() {
        f64::INFINITY
    } else {
        total / inliers.len() as f64
    };
    Hypothesis {
        pose,
        inliers,
        mean_error,
        iteration,
    }
}

fn subset<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i]).collect()
}

/// Hypothesize-and-verify around the chosen solver. Every hypothesis draws from its own
/// stream of the seed, so the result does not depend on thread count.
pub fn ransac_pnp(
    points: &[Vec3],
    pixels: &[Vec2],
    confidences: &[f64],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate, PnpError> {
    let n = points.len();
    if pixels.len() != n || confidences.len() != n {
        return Err(PnpError::LengthMismatch {
            points: n,
            pixels: pixels.len(),
        });
    }
    if n < 4 {
        return Err(PnpError::TooFewCorrespondences(n));
    }
    let amount = cfg.sample_size.clamp(4, n);
    let weights: Vec<f64> = confidences.iter().map(|c| if c.is_finite() { c.max(1e-6) } else { 1e-6 }).collect();

    let hypothesis = |it: usize| -> Option<Hypothesis> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(it as u64);
        let sample = if cfg.weighted {
            index::sample_weighted(&mut rng, n, |i| weights[i], amount).ok()?.into_vec()
        } else {
            index::sample(&mut rng, n, amount).into_vec()
        };
        let pose = cfg.solver.solve(&subset(points, &sample), &subset(pixels, &sample), k).ok()?;
        Some(score(pose, points, pixels, k, cfg.reproj_px, it))
    };

    let mut best: Option<Hypothesis> = None;
    let mut start = 0;
    while start < cfg.iterations {
        let end = (start + BATCH).min(cfg.iterations);
        let batch: Vec<Option<Hypothesis>> = (start..end).into_par_iter().map(hypothesis).collect();
        for h in batch.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| h.beats(b)) {
                best = Some(h);
            }
        }
        start = end;
        if best
            .as_ref()
            .is_some_and(|b| b.inliers.len() as f64 >= cfg.early_stop_ratio * n as f64)
        {
            break;
        }
    }

    let best = best.ok_or(PnpError::NoConsensus(0))?;
    if best.inliers.len() < 4 {
        return Err(PnpError::NoConsensus(best.inliers.len()));
    }
    let refit = cfg
        .solver
        .solve(&subset(points, &best.inliers), &subset(pixels, &best.inliers), k)
        .ok()
        .map(|pose| score(pose, points, pixels, k, cfg.reproj_px, best.iteration));
    let mut chosen = match refit {
        Some(r) if r.inliers.len() >= best.inliers.len() => r,
        _ => best,
    };
    if cfg.polish_iterations > 0 {
        let mut residuals: Vec<f64> = chosen
            .inliers
            .iter()
            .map(|&i| reprojection_error(&chosen.pose, k, &points[i], &pixels[i]))
            .collect();
        residuals.sort_by(f64::total_cmp);
        let scale = (1.4826 * residuals[residuals.len() / 2]).max(MIN_ROBUST_SCALE);
        let pose = refine_reprojection(
            &chosen.pose,
            &subset(points, &chosen.inliers),
            &subset(pixels, &chosen.inliers),
            k,
            cfg.polish_iterations,
            Some(scale),
        );
        let polished = score(pose, points, pixels, k, cfg.reproj_px, chosen.iteration);
        // The robust polish may legitimately shed points that only sat inside the threshold.
        if polished.inliers.len() >= 4 {
            chosen = polished;
        }
    }
    Ok(PoseEstimate {
        pose: chosen.pose,
        score: chosen.inliers.len() as f64 / n as f64,
        mean_reprojection_error: chosen.mean_error,
        inlier_indices: chosen.inliers,
    })
}

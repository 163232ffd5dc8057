//! Pose from 2D–3D correspondences: SQPnP, EPnP and a RANSAC wrapper.

mod epnp;
mod ransac;
mod refine;
mod sqpnp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3, MIN_DEPTH};

pub use epnp::epnp;
pub use ransac::{ransac_pnp, RansacConfig};
pub use refine::refine_reprojection;
pub use sqpnp::{sqpnp, SQP_MAX_ITERATIONS, SQP_STEP_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("RANSAC needs at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no consensus: best hypothesis has {0} inliers")]
    NoConsensus(usize),
    #[error("{points} 3D points but {pixels} pixels")]
    LengthMismatch { points: usize, pixels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PnpSolver {
    #[default]
    Sqpnp,
    Epnp,
}

impl PnpSolver {
    /// Best pose from the chosen solver.
    pub fn solve(self, points: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
        match self {
            PnpSolver::Sqpnp => Ok(sqpnp(points, pixels, k)?[0].0),
            PnpSolver::Epnp => epnp(points, pixels, k),
        }
    }
}

/// Robust pose with its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_indices: Vec<usize>,
    /// Mean reprojection error over inliers, pixels.
    pub mean_reprojection_error: f64,
    /// Inlier ratio.
    pub score: f64,
}

/// Reprojection error in pixels; infinite for points at or behind the camera.
pub fn reprojection_error(pose: &Pose, k: &CameraIntrinsics, point: &Vec3, pixel: &Vec2) -> f64 {
    let p = pose.transform_point(point);
    if p.z <= MIN_DEPTH {
        return f64::INFINITY;
    }
    (k.project_point(&p) - pixel).norm()
}

fn check_lengths(points: &[Vec3], pixels: &[Vec2], needed: usize) -> Result<(), PnpError> {
    if points.len() != pixels.len() {
        return Err(PnpError::LengthMismatch {
            points: points.len(),
            pixels: pixels.len(),
        });
    }
    if points.len() < needed {
        return Err(PnpError::InsufficientPoints {
            needed,
            got: points.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;

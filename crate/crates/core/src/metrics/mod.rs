//! Pose error functions, recall/precision aggregation and BOP result files.

mod aggregate;
mod bop_csv;
mod vsd;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, ObjectModel, Pose, Vec3, MIN_DEPTH};
use crate::render::RenderError;

pub use aggregate::{
    aggregate_ap, aggregate_ar, ApEstimate, ApReport, ArReport, EstimateErrors, MetricReport, ThresholdRecall,
    AP_PROTOCOL, THRESHOLD_FRACTIONS,
};
pub use bop_csv::{format_sig9, read_results, read_results_from, write_results, write_results_to, BopResult, BOP_HEADER};
pub use vsd::{e_vsd, e_vsd_maps, distance_map, VsdResult, VSD_DELTA};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("vertex {index} projects from behind the camera")]
    BehindCamera { index: usize },
    #[error("depth map has {got} pixels, expected {expected}")]
    DepthSize { got: usize, expected: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Maximum symmetry-aware surface distance over `vertices` (original frame, meters).
pub fn mssd(est: &Pose, gt: &Pose, vertices: &[Vec3], symmetries: &[Pose]) -> f64 {
    let est_pts: Vec<Vec3> = vertices.iter().map(|x| est.transform_point(x)).collect();
    symmetries
        .iter()
        .map(|s| {
            est_pts
                .iter()
                .zip(vertices)
                .map(|(e, x)| (e - gt.transform_point(&s.transform_point(x))).norm())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// MSSD on an onboarded model's original-frame vertices and symmetries.
pub fn e_mssd(est: &Pose, gt: &Pose, model: &ObjectModel) -> f64 {
    mssd(est, gt, &model.original_vertices(), &model.symmetries)
}

/// Maximum symmetry-aware projection distance in pixels. Estimated vertices behind the camera
/// count as infinitely far.
pub fn mspd(
    est: &Pose,
    gt: &Pose,
    vertices: &[Vec3],
    symmetries: &[Pose],
    k: &CameraIntrinsics,
) -> Result<f64, MetricsError> {
    let est_px: Vec<Option<_>> = vertices
        .iter()
        .map(|x| {
            let c = est.transform_point(x);
            (c.z > MIN_DEPTH).then(|| k.project_point(&c))
        })
        .collect();
    let mut best = f64::INFINITY;
    for s in symmetries {
        let mut worst: f64 = 0.0;
        for (index, (x, e)) in vertices.iter().zip(&est_px).enumerate() {
            let c = gt.transform_point(&s.transform_point(x));
            if c.z <= MIN_DEPTH {
                return Err(MetricsError::BehindCamera { index });
            }
            worst = worst.max(e.map_or(f64::INFINITY, |e| (e - k.project_point(&c)).norm()));
        }
        best = best.min(worst);
    }
    Ok(best)
}

pub fn e_mspd(est: &Pose, gt: &Pose, model: &ObjectModel, k: &CameraIntrinsics) -> Result<f64, MetricsError> {
    mspd(est, gt, &model.original_vertices(), &model.symmetries, k)
}

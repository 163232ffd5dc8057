use crate::geometry::{CameraIntrinsics, ObjectModel, Pose};
use crate::render::{rasterize_model, RenderError, Shading};

use super::MetricsError;

/// Visibility tolerance, meters.
pub const VSD_DELTA: f64 = 0.015;

#[derive(Debug, Clone, PartialEq)]
pub struct VsdResult {
    /// One error per misalignment tolerance, in `[0, 1]`.
    pub errors: Vec<f64>,
    /// Neither silhouette is visible; errors are reported as 1.
    pub empty_visibility: bool,
}

/// Converts a depth map (z) into distances from the camera centre. Zero stays zero.
pub fn distance_map(depth: &[f32], k: &CameraIntrinsics) -> Vec<f64> {
    let w = k.width as usize;
    depth
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if z <= 0.0 {
                return 0.0;
            }
            let xn = ((i % w) as f64 + 0.5 - k.cx) / k.fx;
            let yn = ((i / w) as f64 + 0.5 - k.cy) / k.fy;
            f64::from(z) * (1.0 + xn * xn + yn * yn).sqrt()
        })
        .collect()
}

/// VSD from distance maps. A rendered pixel is visible when it is not behind the scene surface
/// by more than `delta`; pixels without scene depth count as visible.
pub fn e_vsd_maps(d_est: &[f64], d_gt: &[f64], d_scene: &[f64], taus: &[f64], delta: f64) -> VsdResult {
    let visible = |d: f64, s: f64| d > 0.0 && (s <= 0.0 || d <= s + delta);
    let mut union = 0usize;
    let mut inter_diffs = Vec::new();
    for ((&e, &g), &s) in d_est.iter().zip(d_gt).zip(d_scene) {
        let (ve, vg) = (visible(e, s), visible(g, s));
        if ve || vg {
            union += 1;
        }
        if ve && vg {
            inter_diffs.push((e - g).abs());
        }
    }
    if union == 0 {
        return VsdResult {
            errors: vec![1.0; taus.len()],
            empty_visibility: true,
        };
    }
    let errors = taus
        .iter()
        .map(|&tau| {
            let ok = inter_diffs.iter().filter(|&&d| d < tau).count();
            (union - ok) as f64 / union as f64
        })
        .collect();
    VsdResult {
        errors,
        empty_visibility: false,
    }
}

/// Visible surface discrepancy for one estimate against a scene depth map (z, meters).
pub fn e_vsd(
    est: &Pose,
    gt: &Pose,
    model: &ObjectModel,
    k: &CameraIntrinsics,
    scene_depth: &[f32],
    taus: &[f64],
    delta: f64,
) -> Result<VsdResult, MetricsError> {
    let expected = (k.width * k.height) as usize;
    if scene_depth.len() != expected {
        return Err(MetricsError::DepthSize {
            got: scene_depth.len(),
            expected,
        });
    }
    let render = |pose: &Pose| match rasterize_model(model, pose, k, Shading::Lambertian) {
        Ok(img) => Ok(distance_map(&img.depth, k)),
        Err(RenderError::ObjectBehindCamera) => Ok(vec![0.0; expected]),
        Err(e) => Err(MetricsError::Render(e)),
    };
    let d_est = render(est)?;
    let d_gt = render(gt)?;
    Ok(e_vsd_maps(&d_est, &d_gt, &distance_map(scene_depth, k), taus, delta))
}

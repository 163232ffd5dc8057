use nalgebra::{Rotation3, SMatrix, SVector};

use crate::geometry::{CameraIntrinsics, Mat3, Pose, Vec2, Vec3, MIN_DEPTH};

/// Cauchy loss `s² ln(1 + r²/s²)`, or plain `r²` without a scale.
fn rho(r2: f64, scale: Option<f64>) -> f64 {
    match scale {
        Some(s) => s * s * (r2 / (s * s)).ln_1p(),
        None => r2,
    }
}

fn cost(pose: &Pose, points: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics, scale: Option<f64>) -> f64 {
    points
        .iter()
        .zip(pixels)
        .map(|(p, px)| {
            let c = pose.transform_point(p);
            if c.z <= MIN_DEPTH {
                f64::INFINITY
            } else {
                rho((k.project_point(&c) - px).norm_squared(), scale)
            }
        })
        .sum()
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Levenberg-Marquardt on reprojection error, with rotation updated on the left by an
/// axis-angle increment. With a `robust_scale` (pixels) residuals go through a Cauchy loss via
/// reweighting. Never returns a pose with higher cost than the input.
pub fn refine_reprojection(
    pose: &Pose,
    points: &[Vec3],
    pixels: &[Vec2],
    k: &CameraIntrinsics,
    iterations: usize,
    robust_scale: Option<f64>,
) -> Pose {
    let mut current = *pose;
    let mut current_cost = cost(&current, points, pixels, k, robust_scale);
    if !current_cost.is_finite() {
        return current;
    }
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        for (p, px) in points.iter().zip(pixels) {
            let rp = current.rotation * p;
            let c = rp + current.translation;
            let (iz, x, y) = (1.0 / c.z, c.x, c.y);
            let proj = SMatrix::<f64, 2, 3>::new(k.fx * iz, 0.0, -k.fx * x * iz * iz, 0.0, k.fy * iz, -k.fy * y * iz * iz);
            let mut dp = SMatrix::<f64, 3, 6>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
            let j = proj * dp;
            let r = k.project_point(&c) - px;
            let w = robust_scale.map_or(1.0, |s| 1.0 / (1.0 + r.norm_squared() / (s * s)));
            jtj += j.transpose() * j * w;
            jtr += j.transpose() * r * w;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vec3::new(step[0], step[1], step[2]);
            let candidate = Pose {
                rotation: Rotation3::new(w).into_inner() * current.rotation,
                translation: current.translation + Vec3::new(step[3], step[4], step[5]),
            };
            let c = cost(&candidate, points, pixels, k, robust_scale);
            if c < current_cost {
                let done = step.norm() < 1e-12;
                current = candidate;
                current_cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current.orthonormalized()
}

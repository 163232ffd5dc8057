use nalgebra::{SMatrix, SVector, SymmetricEigen};

use crate::geometry::{nearest_rotation, CameraIntrinsics, Mat3, Pose, Vec2, Vec3};

use super::{check_lengths, PnpError};

type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;
type Mat39 = SMatrix<f64, 3, 9>;

pub const SQP_MAX_ITERATIONS: usize = 15;
pub const SQP_STEP_TOLERANCE: f64 = 1e-10;
/// Eigenvectors of Ω seeding the SQP, smallest eigenvalues first.
const SEED_EIGENVECTORS: usize = 4;

fn to_mat(r: &Vec9) -> Mat3 {
    Mat3::from_row_slice(r.as_slice())
}

fn to_vec(m: &Mat3) -> Vec9 {
    Vec9::from_iterator(m.transpose().iter().copied())
}

/// `R·m` as a linear map of the row-major rotation vector.
fn lift_matrix(m: &Vec3) -> Mat39 {
    let mut a = Mat39::zeros();
    for k in 0..3 {
        for j in 0..3 {
            a[(k, 3 * k + j)] = m[j];
        }
    }
    a
}

/// Row-orthonormality residuals of `R` and their Jacobian.
fn constraints(r: &Vec9) -> (SVector<f64, 6>, SMatrix<f64, 6, 9>) {
    let row = |i: usize| Vec3::new(r[3 * i], r[3 * i + 1], r[3 * i + 2]);
    let rows = [row(0), row(1), row(2)];
    let mut h = SVector::<f64, 6>::zeros();
    let mut jac = SMatrix::<f64, 6, 9>::zeros();
    for i in 0..3 {
        h[i] = rows[i].norm_squared() - 1.0;
        for j in 0..3 {
            jac[(i, 3 * i + j)] = 2.0 * rows[i][j];
        }
    }
    for (c, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        h[3 + c] = rows[a].dot(&rows[b]);
        for j in 0..3 {
            jac[(3 + c, 3 * a + j)] = rows[b][j];
            jac[(3 + c, 3 * b + j)] = rows[a][j];
        }
    }
    (h, jac)
}

/// Sequential quadratic programming on `rᵀΩr` subject to `RRᵀ = I`.
fn refine(omega: &Mat9, seed: &Mat3) -> Mat3 {
    let mut r = to_vec(seed);
    for _ in 0..SQP_MAX_ITERATIONS {
        let (h, jac) = constraints(&r);
        let mut kkt = SMatrix::<f64, 15, 15>::zeros();
        kkt.fixed_view_mut::<9, 9>(0, 0).copy_from(&(omega * 2.0));
        kkt.fixed_view_mut::<6, 9>(9, 0).copy_from(&jac);
        kkt.fixed_view_mut::<9, 6>(0, 9).copy_from(&jac.transpose());
        let mut rhs = SVector::<f64, 15>::zeros();
        rhs.fixed_rows_mut::<9>(0).copy_from(&(-(omega * r) * 2.0));
        rhs.fixed_rows_mut::<6>(9).copy_from(&(-h));
        let Some(sol) = kkt.lu().solve(&rhs) else { break };
        let step = sol.fixed_rows::<9>(0).into_owned();
        r += step;
        if step.norm() < SQP_STEP_TOLERANCE {
            break;
        }
    }
    nearest_rotation(&to_mat(&r))
}

/// SQPnP. Returns every distinct candidate with all points in front of the camera, sorted by
/// summed squared reprojection error in pixels.
pub fn sqpnp(points: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics) -> Result<Vec<(Pose, f64)>, PnpError> {
    check_lengths(points, pixels, 3)?;
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let centred: Vec<Vec3> = points.iter().map(|p| p - mean).collect();

    let cov = centred.iter().map(|p| p * p.transpose()).sum::<Mat3>();
    let spread = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = (spread.min(), spread.max());
    let mid = spread.sum() - lo - hi;
    if hi <= 0.0 || mid <= 1e-12 * hi {
        return Err(PnpError::DegenerateConfiguration("points are collinear"));
    }

    let projectors: Vec<Mat3> = pixels
        .iter()
        .map(|px| {
            let x = k.normalize_pixel(px);
            let b = Vec3::new(x.x, x.y, 1.0).normalize();
            Mat3::identity() - b * b.transpose()
        })
        .collect();
    let q_sum: Mat3 = projectors.iter().sum();
    let q_inv = q_sum
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(PnpError::DegenerateConfiguration("all bearings are parallel"))?;
    let lifts: Vec<Mat39> = centred.iter().map(lift_matrix).collect();
    let s: Mat39 = projectors.iter().zip(&lifts).map(|(q, a)| q * a).sum();
    // Optimal translation for a given rotation: t = P·r.
    let p = -(q_inv * s);
    let omega: Mat9 = projectors
        .iter()
        .zip(&lifts)
        .map(|(q, a)| {
            let b = a + p;
            b.transpose() * q * b
        })
        .sum();
    let omega = (omega + omega.transpose()) * 0.5;

    let eig = SymmetricEigen::new(omega);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut out: Vec<(Pose, f64)> = Vec::new();
    for &e in order.iter().take(SEED_EIGENVECTORS) {
        let v: Vec9 = eig.eigenvectors.column(e).into_owned() * 3f64.sqrt();
        for sign in [1.0, -1.0] {
            let seed = nearest_rotation(&to_mat(&(v * sign)));
            let rot = refine(&omega, &seed);
            if out.iter().any(|(q, _)| (q.rotation - rot).norm() < 1e-9) {
                continue;
            }
            let t = p * to_vec(&rot) - rot * mean;
            let pose = Pose {
                rotation: rot,
                translation: t,
            };
            let mut err = 0.0;
            let mut in_front = true;
            for (m, px) in points.iter().zip(pixels) {
                let c = pose.transform_point(m);
                if c.z <= 0.0 {
                    in_front = false;
                    break;
                }
                err += (k.project_point(&c) - px).norm_squared();
            }
            if in_front {
                out.push((pose, err));
            }
        }
    }
    if out.is_empty() {
        return Err(PnpError::DegenerateConfiguration("no candidate keeps the points in front of the camera"));
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::geometry::{nearest_rotation, CameraIntrinsics, Mat3, Pose, Vec2, Vec3};

use super::{check_lengths, PnpError};

const GAUSS_NEWTON_ITERATIONS: usize = 10;

/// Rigid alignment taking `world` onto `camera` in least squares.
fn procrustes(world: &[Vec3], camera: &[Vec3]) -> Pose {
    let n = world.len() as f64;
    let mw = world.iter().sum::<Vec3>() / n;
    let mc = camera.iter().sum::<Vec3>() / n;
    let h: Mat3 = world.iter().zip(camera).map(|(w, c)| (c - mc) * (w - mw).transpose()).sum();
    let rotation = nearest_rotation(&h);
    Pose {
        rotation,
        translation: mc - rotation * mw,
    }
}

/// EPnP with Gauss-Newton refinement of the null-space coefficients. Planar point sets use
/// three control points.
pub fn epnp(points: &[Vec3], pixels: &[Vec2], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
    check_lengths(points, pixels, 4)?;
    let n = points.len();
    let centroid = points.iter().sum::<Vec3>() / n as f64;
    let cov: Mat3 = points.iter().map(|p| (p - centroid) * (p - centroid).transpose()).sum();
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, Vec3)> = (0..3).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    if axes[0].0 <= 0.0 || axes[1].0 <= 1e-12 * axes[0].0 {
        return Err(PnpError::DegenerateConfiguration("points are collinear"));
    }
    let planar = axes[2].0 <= 1e-10 * axes[0].0;
    let nc = if planar { 3 } else { 4 };

    let mut controls = vec![centroid];
    let mut basis = Vec::new();
    for (lambda, axis) in axes.iter().take(nc - 1) {
        let scale = (lambda / n as f64).sqrt();
        controls.push(centroid + axis * scale);
        basis.push((axis, scale));
    }
    let alphas: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            let mut a = vec![0.0; nc];
            for (j, (axis, scale)) in basis.iter().enumerate() {
                a[j + 1] = axis.dot(&d) / scale;
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();

    let cols = 3 * nc;
    let mut m = DMatrix::<f64>::zeros(2 * n, cols);
    for (i, (a, px)) in alphas.iter().zip(pixels).enumerate() {
        for j in 0..nc {
            m[(2 * i, 3 * j)] = a[j] * k.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (k.cx - px.x);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (k.cy - px.y);
        }
    }
    let mtm = m.transpose() * &m;
    let null = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| null.eigenvalues[a].total_cmp(&null.eigenvalues[b]));
    let kernel: Vec<DVector<f64>> = order.iter().map(|&i| null.eigenvectors.column(i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|a| (a + 1..nc).map(move |b| (a, b))).collect();
    let dist2: Vec<f64> = pairs.iter().map(|&(a, b)| (controls[a] - controls[b]).norm_squared()).collect();
    let diff = |v: &DVector<f64>, (a, b): (usize, usize)| {
        Vec3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    };

    let max_dims = if planar { 2 } else { 3 };
    let mut best: Option<(Pose, f64)> = None;
    for dims in 1..=max_dims {
        let s: Vec<Vec<Vec3>> = pairs.iter().map(|&p| (0..dims).map(|d| diff(&kernel[d], p)).collect()).collect();
        // Linearized distance constraints in the products β_a β_b.
        let products: Vec<(usize, usize)> = (0..dims).flat_map(|a| (a..dims).map(move |b| (a, b))).collect();
        let l = DMatrix::from_fn(pairs.len(), products.len(), |r, c| {
            let (a, b) = products[c];
            let dot = s[r][a].dot(&s[r][b]);
            if a == b {
                dot
            } else {
                2.0 * dot
            }
        });
        let rho = DVector::from_column_slice(&dist2);
        let Ok(prod) = l.svd(true, true).solve(&rho, 1e-12) else { continue };
        let mut beta = vec![0.0; dims];
        let b0 = prod[0].abs().sqrt();
        if b0 == 0.0 {
            continue;
        }
        beta[0] = b0;
        for (b, slot) in beta.iter_mut().enumerate().skip(1) {
            *slot = prod[b] / b0;
        }

        for _ in 0..GAUSS_NEWTON_ITERATIONS {
            let mut jac = DMatrix::<f64>::zeros(pairs.len(), dims);
            let mut res = DVector::<f64>::zeros(pairs.len());
            for r in 0..pairs.len() {
                let v: Vec3 = (0..dims).map(|d| s[r][d] * beta[d]).sum();
                res[r] = v.norm_squared() - dist2[r];
                for d in 0..dims {
                    jac[(r, d)] = 2.0 * v.dot(&s[r][d]);
                }
            }
            let Ok(step) = jac.svd(true, true).solve(&res, 1e-14) else { break };
            for d in 0..dims {
                beta[d] -= step[d];
            }
            if step.norm() < 1e-15 {
                break;
            }
        }

        let cam_controls: Vec<Vec3> = (0..nc)
            .map(|j| {
                (0..dims)
                    .map(|d| Vec3::new(kernel[d][3 * j], kernel[d][3 * j + 1], kernel[d][3 * j + 2]) * beta[d])
                    .sum()
            })
            .collect();
        let mut camera: Vec<Vec3> = alphas
            .iter()
            .map(|a| (0..nc).map(|j| cam_controls[j] * a[j]).sum())
            .collect();
        if camera.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            camera.iter_mut().for_each(|c| *c = -*c);
        }
        let pose = procrustes(points, &camera);
        let err: f64 = points
            .iter()
            .zip(pixels)
            .map(|(p, px)| {
                let c = pose.transform_point(p);
                if c.z <= 0.0 {
                    f64::INFINITY
                } else {
                    (k.project_point(&c) - px).norm_squared()
                }
            })
            .sum();
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((pose, err));
        }
    }
    best.map(|b| b.0)
        .ok_or(PnpError::DegenerateConfiguration("no null-space combination satisfies the distance constraints"))
}

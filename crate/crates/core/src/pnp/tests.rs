use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::geometry::{rotation_geodesic_deg, Mat3};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(572.4, 573.6, 325.3, 242.0, 640, 480).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let t = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.6..1.5));
    Pose::from_quaternion(q, t)
}

struct Scene {
    pose: Pose,
    points: Vec<Vec3>,
    pixels: Vec<Vec2>,
}

fn scene(rng: &mut ChaCha8Rng, n: usize, noise_px: f64) -> Scene {
    let pose = random_pose(rng);
    let noise = Normal::new(0.0, noise_px.max(1e-300)).unwrap();
    let points: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let pixels = points
        .iter()
        .map(|p| {
            let px = camera().project_point(&pose.transform_point(p));
            if noise_px > 0.0 {
                px + Vec2::new(noise.sample(rng), noise.sample(rng))
            } else {
                px
            }
        })
        .collect();
    Scene { pose, points, pixels }
}

fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm() / b.translation.norm()
}

#[test]
fn sqpnp_recovers_exact_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let s = scene(&mut rng, 20, 0.0);
        let sols = sqpnp(&s.points, &s.pixels, &camera()).unwrap();
        let (pose, _) = &sols[0];
        assert!(rotation_geodesic_deg(pose, &s.pose) < 0.01);
        assert!(translation_error(pose, &s.pose) < 1e-5);
        assert!(pose.is_valid(1e-8));
        assert!(sols.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn sqpnp_identity_on_unit_plane() {
    let k = camera();
    let points: Vec<Vec3> = [(-0.2, -0.1), (0.3, -0.2), (0.1, 0.25), (-0.15, 0.2), (0.0, 0.05), (0.22, 0.1)]
        .iter()
        .map(|&(x, y)| Vec3::new(x, y, 1.0))
        .collect();
    let pixels: Vec<Vec2> = points.iter().map(|p| k.project_point(p)).collect();
    let (pose, _) = sqpnp(&points, &pixels, &k).unwrap()[0];
    assert!((pose.rotation - Mat3::identity()).abs().max() < 1e-8);
    assert!(pose.translation.norm() < 1e-8);
}

#[test]
fn sqpnp_handles_four_coplanar_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = camera();
    for _ in 0..50 {
        let pose = random_pose(&mut rng);
        let points: Vec<Vec3> =
            (0..4).map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0)).collect();
        let pixels: Vec<Vec2> = points.iter().map(|p| k.project_point(&pose.transform_point(p))).collect();
        let (found, _) = sqpnp(&points, &pixels, &k).unwrap()[0];
        for (p, px) in points.iter().zip(&pixels) {
            assert!(reprojection_error(&found, &k, p, px) < 1e-6);
        }
    }
}

#[test]
fn sqpnp_rejects_degenerate_input() {
    let k = camera();
    let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 1.0)).collect();
    let px: Vec<Vec2> = line.iter().map(|p| k.project_point(p)).collect();
    assert!(matches!(sqpnp(&line, &px, &k), Err(PnpError::DegenerateConfiguration(_))));
    assert!(matches!(
        sqpnp(&line[..2], &px[..2], &k),
        Err(PnpError::InsufficientPoints { needed: 3, got: 2 })
    ));
}

#[test]
fn more_exact_points_never_hurt() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let s = scene(&mut rng, 30, 0.0);
        let err = |n: usize| {
            let (p, _) = sqpnp(&s.points[..n], &s.pixels[..n], &camera()).unwrap()[0];
            rotation_geodesic_deg(&p, &s.pose)
        };
        let mut prev = err(6);
        for n in 7..=30 {
            let e = err(n);
            assert!(e <= prev.max(1e-6) + 1e-6, "{n}: {e} after {prev}");
            prev = e;
        }
    }
}

#[test]
fn epnp_recovers_exact_poses_and_agrees_with_sqpnp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let s = scene(&mut rng, 20, 0.0);
        let e = epnp(&s.points, &s.pixels, &camera()).unwrap();
        let (q, _) = sqpnp(&s.points, &s.pixels, &camera()).unwrap()[0];
        assert!(rotation_geodesic_deg(&e, &s.pose) < 0.1);
        assert!(rotation_geodesic_deg(&e, &q) < 0.1);
        assert!(translation_error(&e, &q) < 1e-4);
        assert!(e.is_valid(1e-8));
    }
}

#[test]
fn epnp_planar_and_small_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = camera();
    for _ in 0..50 {
        let pose = random_pose(&mut rng);
        let points: Vec<Vec3> =
            (0..10).map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0)).collect();
        let pixels: Vec<Vec2> = points.iter().map(|p| k.project_point(&pose.transform_point(p))).collect();
        let found = epnp(&points, &pixels, &k).unwrap();
        assert!(rotation_geodesic_deg(&found, &pose) < 0.1);
    }
    let s = scene(&mut rng, 3, 0.0);
    assert!(matches!(
        epnp(&s.points, &s.pixels, &k),
        Err(PnpError::InsufficientPoints { needed: 4, got: 3 })
    ));
}

fn with_outliers(rng: &mut ChaCha8Rng, s: &mut Scene, ratio: f64) {
    let n = s.points.len();
    let k = camera();
    for px in s.pixels.iter_mut().take((ratio * n as f64).round() as usize) {
        *px = Vec2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
    }
}

#[test]
fn ransac_exact_data_keeps_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = scene(&mut rng, 50, 0.0);
    let est = ransac_pnp(&s.points, &s.pixels, &[1.0; 50], &camera(), &RansacConfig::default()).unwrap();
    assert_eq!(est.inlier_indices.len(), 50);
    assert!(est.mean_reprojection_error < 1e-6);
    assert_eq!(est.score, 1.0);
}

#[test]
fn ransac_survives_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = camera();
    let mut good = 0;
    for trial in 0..30 {
        let mut s = scene(&mut rng, 100, 1.0);
        with_outliers(&mut rng, &mut s, 0.3);
        let cfg = RansacConfig {
            seed: trial,
            ..Default::default()
        };
        let est = ransac_pnp(&s.points, &s.pixels, &[1.0; 100], &k, &cfg).unwrap();
        if rotation_geodesic_deg(&est.pose, &s.pose) < 1.0 && translation_error(&est.pose, &s.pose) < 0.02 {
            good += 1;
        }
        // Reported inliers are exactly the points within threshold.
        let expect: Vec<usize> = (0..100)
            .filter(|&i| reprojection_error(&est.pose, &k, &s.points[i], &s.pixels[i]) <= cfg.reproj_px)
            .collect();
        assert_eq!(est.inlier_indices, expect);
        assert!(est.pose.is_valid(1e-8));
    }
    assert!(good >= 29, "{good}/30");
}

#[test]
fn ransac_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = scene(&mut rng, 80, 1.0);
    with_outliers(&mut rng, &mut s, 0.5);
    let conf: Vec<f64> = (0..80).map(|i| 0.2 + (i % 7) as f64 * 0.1).collect();
    let cfg = RansacConfig {
        seed: 42,
        early_stop_ratio: 1.1,
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ransac_pnp(&s.points, &s.pixels, &conf, &camera(), &cfg).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.pose.rotation.as_slice(), b.pose.rotation.as_slice());
    assert_eq!(a.pose.translation.as_slice(), b.pose.translation.as_slice());
    assert_eq!(a, b);
}

#[test]
fn ransac_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = scene(&mut rng, 3, 0.0);
    assert_eq!(
        ransac_pnp(&s.points, &s.pixels, &[1.0; 3], &camera(), &RansacConfig::default()),
        Err(PnpError::TooFewCorrespondences(3))
    );
    let mut s = scene(&mut rng, 40, 0.0);
    with_outliers(&mut rng, &mut s, 1.0);
    let cfg = RansacConfig {
        reproj_px: 1e-3,
        iterations: 50,
        ..Default::default()
    };
    assert!(matches!(
        ransac_pnp(&s.points, &s.pixels, &[1.0; 40], &camera(), &cfg),
        Err(PnpError::NoConsensus(_))
    ));
}

#[test]
fn epnp_solver_inside_ransac() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut s = scene(&mut rng, 60, 0.5);
    with_outliers(&mut rng, &mut s, 0.2);
    let cfg = RansacConfig {
        solver: PnpSolver::Epnp,
        ..Default::default()
    };
    let est = ransac_pnp(&s.points, &s.pixels, &[1.0; 60], &camera(), &cfg).unwrap();
    assert!(rotation_geodesic_deg(&est.pose, &s.pose) < 1.0);
}

#[test]
fn reprojection_polish_converges_on_exact_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = camera();
    for _ in 0..20 {
        let s = scene(&mut rng, 20, 0.0);
        let start = s.pose.compose(&Pose::from_axis_angle(Vec3::new(0.02, -0.01, 0.015), Vec3::new(0.003, 0.0, -0.01)));
        for scale in [None, Some(2.0)] {
            let p = refine_reprojection(&start, &s.points, &s.pixels, &k, 20, scale);
            assert!((p.rotation - s.pose.rotation).norm() < 1e-9);
            assert!(translation_error(&p, &s.pose) < 1e-8);
        }
    }
}

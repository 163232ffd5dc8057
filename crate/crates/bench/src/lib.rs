//! Shared fixtures for the posekit benchmarks.

use posekit_core::geometry::synth;
use posekit_core::render::render_template_set;
use posekit_core::{CameraIntrinsics, ObjectModel, Pose, TemplateSet, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid camera")
}

/// Exact 2D-3D correspondences of `n` random points, the first `outliers` replaced by
/// random pixels.
pub fn correspondences(n: usize, outliers: usize, seed: u64) -> (Pose, Vec<Vec3>, Vec<Vec2>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = camera();
    let pose = Pose::from_axis_angle(Vec3::new(0.3, -0.5, 0.2), Vec3::new(0.02, -0.01, 0.8));
    let points: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let pixels = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i < outliers {
                Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            } else {
                k.project_point(&pose.transform_point(p))
            }
        })
        .collect();
    (pose, points, pixels)
}

pub fn toy_templates(frequency: u32, resolution: u32) -> (ObjectModel, TemplateSet) {
    let model = ObjectModel::from_mesh(&synth::asymmetric_toy(), vec![]).expect("toy mesh");
    let set = render_template_set(&model, "toy", frequency, resolution).expect("templates");
    (model, set)
}

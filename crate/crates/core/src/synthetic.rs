//! Random posed views of onboarded objects, for training data and synthetic evaluation.

use nalgebra::UnitQuaternion;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{look_at_pose, CameraIntrinsics, ObjectModel, Pose, Vec3};
use crate::render::{rasterize, rasterize_model, RenderError, Shading, TemplateImage};

/// Uniformly distributed unit vector.
pub fn random_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = v.try_normalize(1e-9) {
            return u;
        }
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    UnitQuaternion::try_new(q, 1e-9).unwrap_or_else(UnitQuaternion::identity)
}

/// Light direction in the camera frame, pointing from the surface towards a light in front of
/// the object (negative z hemisphere, within 60° of the optical axis).
pub fn random_light(rng: &mut impl Rng) -> Vec3 {
    loop {
        let d = random_direction(rng);
        if -d.z >= 0.5 {
            return d;
        }
    }
}

/// Normalized-frame view looking at the origin from a random direction at `radius`, rolled
/// about the optical axis by up to `max_roll_deg`.
pub fn random_view_pose(rng: &mut impl Rng, radius: f64, max_roll_deg: f64) -> Pose {
    let dir = random_direction(rng);
    let up = if dir.z.abs() > 0.999 { Vec3::x() } else { Vec3::z() };
    let pose = look_at_pose(dir * radius, Vec3::zeros(), up).expect("direction is non-zero");
    let roll = if max_roll_deg > 0.0 {
        rng.random_range(-max_roll_deg..=max_roll_deg).to_radians()
    } else {
        0.0
    };
    Pose::from_axis_angle(Vec3::new(0.0, 0.0, roll), Vec3::zeros()).compose(&pose)
}

/// Renders a normalized-frame training view with directional lighting.
pub fn render_training_view(
    model: &ObjectModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    light: Vec3,
) -> Result<TemplateImage, RenderError> {
    rasterize(&model.mesh, pose, k, Shading::Directional(light))
}

/// A metric test image with its ground truth.
#[derive(Debug, Clone)]
pub struct TestView {
    /// Rendered with metric depth; NOCS in the normalized frame.
    pub image: TemplateImage,
    /// Camera-from-object in the original metric frame.
    pub pose: Pose,
    /// Tight mask box `[x, y, w, h]`.
    pub bbox: [f64; 4],
}

/// Random object pose in front of `k`: uniform rotation, centre at a depth giving a projected
/// diameter between `min_px` and `max_px`, kept fully inside the image.
pub fn random_test_view(
    model: &ObjectModel,
    k: &CameraIntrinsics,
    rng: &mut impl Rng,
    min_px: f64,
    max_px: f64,
) -> Result<TestView, RenderError> {
    let centre = model.normalization.invert(&Vec3::zeros());
    let radius = model.diameter / 2.0;
    loop {
        let size = rng.random_range(min_px..=max_px);
        let z = k.fx * model.diameter / size;
        let margin = 0.5 * size + 2.0;
        let (w, h) = (f64::from(k.width), f64::from(k.height));
        if 2.0 * margin >= w.min(h) {
            return Err(RenderError::Format(format!("object of {size:.0} px does not fit the image")));
        }
        let u = rng.random_range(margin..w - margin);
        let v = rng.random_range(margin..h - margin);
        let target = k.back_project(&crate::geometry::Vec2::new(u, v), z);
        let rotation = random_rotation(rng);
        let r = rotation.to_rotation_matrix().into_inner();
        let pose = Pose {
            rotation: r,
            translation: target - r * centre,
        };
        if z - radius <= 0.0 {
            continue;
        }
        let light = random_light(rng);
        let image = rasterize_model(model, &pose, k, Shading::Directional(light))?;
        let Some(b) = image.mask_bbox() else { continue };
        return Ok(TestView {
            image,
            pose,
            bbox: [
                f64::from(b[0]),
                f64::from(b[1]),
                f64::from(b[2] - b[0]),
                f64::from(b[3] - b[1]),
            ],
        });
    }
}

//! Rigid transforms, pinhole cameras, meshes and viewpoint sampling.
//!
//! Every pose in the crate is camera-from-object: `p_cam = R * p_obj + t`.

mod icosphere;
mod io;
mod mesh;
pub mod synth;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use icosphere::{build_viewpoint_graph, icosphere_vertices, look_at_pose, ViewpointGraph};
pub use io::{
    load_mesh, load_symmetries, parse_symmetries, save_ply, ContinuousSymmetry, DiscreteSymmetry, SymmetrySpec,
    CONTINUOUS_SYMMETRY_STEPS,
};
pub use mesh::{normalize_mesh, ObjectModel, Similarity, TriangleMesh};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh is degenerate: {0}")]
    DegenerateMesh(&'static str),
    #[error("camera position coincides with the look-at target")]
    CoincidentPoints,
    #[error("point {index} lies behind the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rotation (orthogonality error {0:.3e})")]
    InvalidRotation(f64),
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("mesh format error in {path}: {message}")]
    MeshFormat { path: String, message: String },
    #[error("symmetry sidecar error: {0}")]
    Symmetry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rigid transform taking object-frame points into the camera frame.
///
/// Serialized as `{"R": [9 row-major], "t": [3]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", from = "PoseRecord")]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = p.rotation[(i, j)];
            }
        }
        Self {
            r,
            t: p.translation.into(),
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(p: PoseRecord) -> Self {
        Self {
            rotation: Mat3::from_row_slice(&p.r),
            translation: Vec3::from(p.t),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting matrices that are not proper rotations within 1e-6.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let err = orthogonality_error(&rotation);
        if err > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidRotation(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera centre expressed in the object frame.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Re-orthonormalizes the rotation through its nearest rotation matrix.
    pub fn orthonormalized(&self) -> Self {
        Self {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        orthogonality_error(&self.rotation) <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Max-abs entry of `RᵀR − I`.
pub fn orthogonality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Closest proper rotation in Frobenius norm.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// Geodesic distance between the rotations of two poses, in degrees.
pub fn rotation_geodesic_deg(a: &Pose, b: &Pose) -> f64 {
    let cos = ((a.rotation * b.rotation.transpose()).trace() - 1.0) / 2.0;
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Pinhole camera. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)` so its centre is at `u + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width < 14 || self.height < 14 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image must be at least 14x14, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Square template camera: focal length equal to the resolution, principal point centred.
    pub fn template(resolution: u32) -> Self {
        let r = f64::from(resolution);
        Self {
            fx: r,
            fy: r,
            cx: r / 2.0,
            cy: r / 2.0,
            width: resolution,
            height: resolution,
        }
    }

    /// Smaller of the horizontal and vertical field of view, radians.
    pub fn min_fov(&self) -> f64 {
        let fov_x = 2.0 * (f64::from(self.width) / (2.0 * self.fx)).atan();
        let fov_y = 2.0 * (f64::from(self.height) / (2.0 * self.fy)).atan();
        fov_x.min(fov_y)
    }

    #[inline]
    pub fn project_point(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    pub fn back_project(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        Vec3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Normalized image coordinates (bearing with unit z).
    #[inline]
    pub fn normalize_pixel(&self, pixel: &Vec2) -> Vec2 {
        Vec2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }
}

/// Projects camera-frame points to pixels.
pub fn project(points: &[Vec3], intrinsics: &CameraIntrinsics) -> Result<Vec<Vec2>, GeometryError> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if p.z <= MIN_DEPTH {
                Err(GeometryError::BehindCamera { index, z: p.z })
            } else {
                Ok(intrinsics.project_point(p))
            }
        })
        .collect()
}

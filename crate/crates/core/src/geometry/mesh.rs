use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Mat3, Pose, Vec3};

/// Indexed triangle mesh. Construction drops zero-area faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Optional per-vertex RGB in `[0, 1]`.
    pub colors: Option<Vec<[f32; 3]>>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        colors: Option<Vec<[f32; 3]>>,
    ) -> Result<Self, GeometryError> {
        let count = vertices.len();
        for (face, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= count) {
                return Err(GeometryError::FaceIndexOutOfRange {
                    face,
                    index: bad as usize,
                    count,
                });
            }
        }
        if let Some(c) = &colors {
            if c.len() != count {
                return Err(GeometryError::DegenerateMesh("color count differs from vertex count"));
            }
        }
        let faces = faces
            .into_iter()
            .filter(|f| {
                let [a, b, c] = f.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm() > 1e-15
            })
            .collect();
        Ok(Self {
            vertices,
            faces,
            colors,
        })
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Applies `p ↦ f(p)` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }

    /// Diagonal length of the PCA-aligned bounding box.
    pub fn obb_diagonal(&self) -> f64 {
        let c = self.centroid();
        let mut cov = Mat3::zeros();
        for v in &self.vertices {
            let d = v - c;
            cov += d * d.transpose();
        }
        let axes = SymmetricEigen::new(cov).eigenvectors;
        let mut extent = Vec3::zeros();
        for k in 0..3 {
            let axis = axes.column(k);
            let (lo, hi) = self
                .vertices
                .iter()
                .map(|v| axis.dot(&(v - c)))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            extent[k] = hi - lo;
        }
        extent.norm()
    }
}

/// `p_normalized = scale · (p_original − center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub center: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            center: [0.0; 3],
        }
    }

    fn center_vec(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center_vec()) * self.scale
    }

    #[inline]
    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center_vec()
    }

    /// `self ∘ first`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        // s2·(s1·(p − c1) − c2) = s1·s2·(p − (c1 + c2/s1))
        let c = first.center_vec() + self.center_vec() / first.scale;
        Similarity {
            scale: self.scale * first.scale,
            center: c.into(),
        }
    }

    /// Camera-from-normalized transform for a camera-from-original pose, as `(A, b)` with
    /// `p_cam = A · p_normalized + b` where `A = R / scale`.
    pub fn pose_on_normalized(&self, pose: &Pose) -> (Mat3, Vec3) {
        let a = pose.rotation / self.scale;
        let b = pose.rotation * self.center_vec() + pose.translation;
        (a, b)
    }
}

/// Centres the mesh on its vertex centroid and scales it into the unit sphere.
///
/// Returns the normalized mesh, the original→normalized similarity and the diameter of the
/// input (its oriented bounding-box diagonal, original units).
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, Similarity, f64), GeometryError> {
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let c = mesh.centroid();
    let radius = mesh.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
    if radius <= 1e-12 {
        return Err(GeometryError::DegenerateMesh("all vertices coincide"));
    }
    let sim = Similarity {
        scale: 1.0 / radius,
        center: c.into(),
    };
    let normalized = mesh.map_vertices(|v| sim.apply(v));
    Ok((normalized, sim, mesh.obb_diagonal()))
}

/// An onboarded object: normalized mesh plus what is needed to return to metric units.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    /// Mesh in the normalized (unit-sphere) frame.
    pub mesh: TriangleMesh,
    pub normalization: Similarity,
    /// Diameter in original units.
    pub diameter: f64,
    /// Symmetry transforms in the original frame; always contains the identity first.
    pub symmetries: Vec<Pose>,
}

impl ObjectModel {
    pub fn from_mesh(mesh: &TriangleMesh, symmetries: Vec<Pose>) -> Result<Self, GeometryError> {
        let (normalized, normalization, diameter) = normalize_mesh(mesh)?;
        let mut syms = vec![Pose::identity()];
        syms.extend(symmetries.into_iter().filter(|s| {
            (s.rotation - Mat3::identity()).abs().max() > 1e-12 || s.translation.norm() > 1e-12
        }));
        Ok(Self {
            mesh: normalized,
            normalization,
            diameter,
            symmetries: syms,
        })
    }

    /// Vertices in the original (metric) frame.
    pub fn original_vertices(&self) -> Vec<Vec3> {
        self.mesh.vertices.iter().map(|v| self.normalization.invert(v)).collect()
    }

    pub fn to_original(&self, p_normalized: &Vec3) -> Vec3 {
        self.normalization.invert(p_normalized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synth;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_off_origin_is_centred_and_scaled() {
        let cube = synth::cube(1.0).map_vertices(|v| v + Vec3::new(5.0, 5.0, 5.0));
        let (n, sim, diameter) = normalize_mesh(&cube).unwrap();
        assert!(n.centroid().norm() < 1e-9);
        assert_relative_eq!(n.max_norm(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(diameter, 3f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(sim.invert(&n.vertices[0]), cube.vertices[0], epsilon = 1e-9);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let verts: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.random_range(-3.0..7.0), rng.random_range(-1.0..2.0), rng.random_range(0.0..0.4)))
            .collect();
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [3, 4, 5]], None).unwrap();
        let (n1, s1, _) = normalize_mesh(&mesh).unwrap();
        let (n2, s2, _) = normalize_mesh(&n1).unwrap();
        assert!((s2.scale - 1.0).abs() < 1e-6);
        assert!(Vec3::from(s2.center).norm() < 1e-6);
        // Composed transform equals the first one.
        let composed = s2.compose(&s1);
        assert!((composed.scale - s1.scale).abs() < 1e-9);
        assert!((Vec3::from(composed.center) - Vec3::from(s1.center)).norm() < 1e-9);
        for (a, b) in n1.vertices.iter().zip(&n2.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn errors_for_empty_and_collapsed() {
        let empty = TriangleMesh::new(vec![], vec![], None).unwrap();
        assert!(matches!(normalize_mesh(&empty), Err(GeometryError::EmptyMesh)));
        let dot = TriangleMesh::new(vec![Vec3::new(1.0, 1.0, 1.0); 4], vec![], None).unwrap();
        assert!(matches!(normalize_mesh(&dot), Err(GeometryError::DegenerateMesh(_))));
    }

    #[test]
    fn construction_checks_indices_and_drops_degenerate_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], None).is_err());
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 0, 1]], None).unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn identity_symmetry_always_first() {
        let m = ObjectModel::from_mesh(&synth::cube(0.1), vec![Pose::identity()]).unwrap();
        assert_eq!(m.symmetries.len(), 1);
        assert_eq!(m.symmetries[0], Pose::identity());
    }
}

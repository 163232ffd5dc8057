//! Geodesic viewpoint sampling on an icosahedron subdivided with Class-I frequency `f`.

use super::{GeometryError, Mat3, Pose, Vec3};

/// Neighbour count kept per view.
pub const VIEW_NEIGHBORS: usize = 6;

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v = Vec::with_capacity(12);
    for &a in &[-1.0, 1.0] {
        for &b in &[-phi, phi] {
            v.push(Vec3::new(0.0, a, b));
            v.push(Vec3::new(a, b, 0.0));
            v.push(Vec3::new(b, 0.0, a));
        }
    }
    // Edges have length 2; faces are the mutually adjacent triples.
    let adjacent = |i: usize, j: usize| ((v[i] - v[j]).norm() - 2.0).abs() < 1e-9;
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                if adjacent(i, j) && adjacent(j, k) && adjacent(i, k) {
                    faces.push([i, j, k]);
                }
            }
        }
    }
    debug_assert_eq!(faces.len(), 20);
    (v.into_iter().map(|p| p.normalize()).collect(), faces)
}

/// Vertices of the frequency-`f` geodesic sphere: `10 f² + 2` unit vectors.
///
/// Edge and face-interior points are generated once each from a canonical vertex ordering, so
/// no floating-point deduplication is needed.
///
/// # Panics
/// If `frequency == 0`.
pub fn icosphere_vertices(frequency: u32) -> Vec<Vec3> {
    assert!(frequency >= 1, "icosphere frequency must be at least 1");
    let f = frequency as usize;
    let ff = f as f64;
    let (base, faces) = icosahedron();
    let mut out = base.clone();

    let mut edges = Vec::new();
    for face in &faces {
        for (a, b) in [(face[0], face[1]), (face[1], face[2]), (face[0], face[2])] {
            let e = (a.min(b), a.max(b));
            if !edges.contains(&e) {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    for &(a, b) in &edges {
        for s in 1..f {
            let t = s as f64 / ff;
            out.push((base[a] * (1.0 - t) + base[b] * t).normalize());
        }
    }
    for face in &faces {
        let [a, b, c] = face.map(|i| base[i]);
        for i in 1..f {
            for j in 1..f - i {
                let k = f - i - j;
                out.push(((a * i as f64 + b * j as f64 + c * k as f64) / ff).normalize());
            }
        }
    }
    out
}

/// Camera pose looking from `camera_position` at `target`.
///
/// The camera's +z axis points at the target and its −y axis follows `up_hint`. If the hint is
/// parallel to the viewing axis, global +x is used instead (and +z if that is parallel too).
pub fn look_at_pose(camera_position: Vec3, target: Vec3, up_hint: Vec3) -> Result<Pose, GeometryError> {
    let forward = target - camera_position;
    if forward.norm() <= 1e-12 {
        return Err(GeometryError::CoincidentPoints);
    }
    let z = forward.normalize();
    let pick_up = |up: Vec3| {
        let n = up.norm();
        if n <= 1e-12 {
            return None;
        }
        let ortho = up - z * z.dot(&up);
        (ortho.norm() > 1e-6 * n).then(|| ortho.normalize())
    };
    let up = pick_up(up_hint)
        .or_else(|| pick_up(Vec3::x()))
        .or_else(|| pick_up(Vec3::z()))
        .expect("x and z cannot both be parallel to the view axis");
    let y = -up;
    let x = y.cross(&z);
    let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(Pose {
        rotation,
        translation: -(rotation * camera_position),
    })
}

/// Template viewpoints on a sphere around the object, with angular neighbourhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointGraph {
    /// Camera-from-object pose per view.
    pub view_poses: Vec<Pose>,
    /// Per view: the nearest other views, ascending by angular distance.
    pub neighbors: Vec<Vec<usize>>,
    /// Unit direction from the object centre to each camera.
    pub directions: Vec<Vec3>,
    pub frequency: u32,
    pub radius: f64,
}

impl ViewpointGraph {
    pub fn len(&self) -> usize {
        self.view_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_poses.is_empty()
    }

    /// Angle between two view directions, radians.
    pub fn angular_distance(&self, a: usize, b: usize) -> f64 {
        self.directions[a].dot(&self.directions[b]).clamp(-1.0, 1.0).acos()
    }

    /// The primary view followed by its neighbours, duplicates removed.
    pub fn select_views(&self, primary: usize) -> Vec<usize> {
        let mut out = vec![primary];
        for &n in &self.neighbors[primary] {
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    /// Rebuilds neighbourhoods from directions (used after loading poses from disk).
    pub fn from_poses(view_poses: Vec<Pose>, frequency: u32) -> Self {
        let directions: Vec<Vec3> = view_poses.iter().map(|p| p.camera_center().normalize()).collect();
        let radius = view_poses.first().map_or(0.0, |p| p.camera_center().norm());
        let neighbors = nearest_views(&directions);
        Self {
            view_poses,
            neighbors,
            directions,
            frequency,
            radius,
        }
    }
}

fn nearest_views(directions: &[Vec3]) -> Vec<Vec<usize>> {
    let n = directions.len();
    let keep = VIEW_NEIGHBORS.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (directions[i].dot(&directions[j]).clamp(-1.0, 1.0).acos(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(keep).map(|(_, j)| j).collect()
        })
        .collect()
}

/// One look-at camera per geodesic vertex at distance `radius`, plus 6-nearest neighbourhoods.
///
/// Base icosahedron vertices only have five geometric neighbours; they still receive six
/// entries (the sixth nearest view).
pub fn build_viewpoint_graph(frequency: u32, radius: f64) -> Result<ViewpointGraph, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::InvalidIntrinsics(format!("view radius must be positive, got {radius}")));
    }
    let directions = icosphere_vertices(frequency);
    let view_poses = directions
        .iter()
        .map(|d| look_at_pose(d * radius, Vec3::zeros(), Vec3::z()))
        .collect::<Result<Vec<_>, _>>()?;
    let neighbors = nearest_views(&directions);
    Ok(ViewpointGraph {
        view_poses,
        neighbors,
        directions,
        frequency,
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orthogonality_error, CameraIntrinsics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vertex_counts_follow_class_one_formula() {
        for f in 1..=6u32 {
            let v = icosphere_vertices(f);
            assert_eq!(v.len() as u32, 10 * f * f + 2);
            assert!(v.iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
            let mut min_angle = f64::INFINITY;
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    min_angle = min_angle.min(v[i].dot(&v[j]).clamp(-1.0, 1.0).acos());
                }
            }
            assert!(min_angle > 1e-6, "duplicate vertex at frequency {f}");
        }
        assert_eq!(icosphere_vertices(1).len(), 12);
        assert_eq!(icosphere_vertices(2).len(), 42);
        assert_eq!(icosphere_vertices(4).len(), 162);
    }

    #[test]
    fn look_at_axis_aligned() {
        let p = look_at_pose(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert!((p.rotation.row(2).transpose() - Vec3::z()).norm() < 1e-12);
        assert!((p.transform_point(&Vec3::zeros()) - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_degenerate_up_falls_back() {
        let p = look_at_pose(Vec3::new(0.0, 2.0, 0.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert!(orthogonality_error(&p.rotation) < 1e-9);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(matches!(
            look_at_pose(Vec3::x(), Vec3::x(), Vec3::y()),
            Err(GeometryError::CoincidentPoints)
        ));
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let pos = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let target = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let up = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let p = look_at_pose(pos, target, up).unwrap();
            assert!(orthogonality_error(&p.rotation) < 1e-9);
            let px = k.project_point(&p.transform_point(&target));
            assert!((px.x - 320.0).abs() < 1e-4 && (px.y - 240.0).abs() < 1e-4);
        }
    }

    #[test]
    fn graph_neighbours() {
        let g = build_viewpoint_graph(2, 3.0).unwrap();
        assert_eq!(g.len(), 42);
        assert!(g.neighbors.iter().all(|n| n.len() == 6));
        for (i, n) in g.neighbors.iter().enumerate() {
            let d: Vec<f64> = n.iter().map(|&j| g.angular_distance(i, j)).collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            assert!((g.view_poses[i].camera_center().norm() - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn frequency_one_neighbours_equidistant() {
        let g = build_viewpoint_graph(1, 1.0).unwrap();
        assert_eq!(g.len(), 12);
        // The five true neighbours are equidistant; the sixth is the next ring.
        for i in 0..12 {
            let d: Vec<f64> = g.neighbors[i].iter().map(|&j| g.angular_distance(i, j)).collect();
            assert!(d[..5].iter().all(|x| (x - d[0]).abs() < 1e-9));
            assert_eq!(g.select_views(i).len(), 7);
        }
    }

    #[test]
    fn base_vertices_have_five_mutual_pairs() {
        for f in 1..=3 {
            let g = build_viewpoint_graph(f, 1.0).unwrap();
            // Brute-force: angularly sort every other view for base vertex i.
            for i in 0..12 {
                let mut all: Vec<(f64, usize)> =
                    (0..g.len()).filter(|&j| j != i).map(|j| (g.angular_distance(i, j), j)).collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mutual = g.neighbors[i]
                    .iter()
                    .filter(|&&j| g.neighbors[j].contains(&i))
                    .count();
                assert!(mutual >= 5, "base vertex {i} at f={f} has {mutual} mutual pairs");
                assert_eq!(all[0].1, g.neighbors[i][0]);
            }
        }
    }
}

use crate::geometry::{CameraIntrinsics, ObjectModel, Pose, TriangleMesh, Vec3};

use super::{nocs_encode, RenderError, TemplateImage};

/// Ambient term added to every lit surface.
pub const AMBIENT: f32 = 0.3;

/// Triangles with a vertex closer than this to the camera plane are skipped.
const NEAR: f64 = 1e-6;

const GREY: [f32; 3] = [0.8, 0.8, 0.8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shading {
    /// Grey surface, Lambertian, lit along the camera axis.
    Lambertian,
    /// Interpolated vertex colours (grey if the mesh has none), lit along the camera axis.
    VertexColor,
    /// Interpolated vertex colours lit from a camera-frame direction pointing towards the light.
    Directional(Vec3),
}

/// Renders a normalized-frame mesh seen from `pose`.
pub fn rasterize(
    mesh: &TriangleMesh,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    shading: Shading,
) -> Result<TemplateImage, RenderError> {
    rasterize_transformed(mesh, |v| pose.transform_point(v), *pose, intrinsics, shading)
}

/// Renders an onboarded object at a pose given in its original (metric) frame. Depth is metric;
/// NOCS still encodes the normalized frame.
pub fn rasterize_model(
    model: &ObjectModel,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    shading: Shading,
) -> Result<TemplateImage, RenderError> {
    let sim = model.normalization;
    rasterize_transformed(
        &model.mesh,
        |v| pose.transform_point(&sim.invert(v)),
        *pose,
        intrinsics,
        shading,
    )
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left rule: a pixel centre exactly on an edge belongs to the triangle only for one of the
/// two traversal directions, so shared edges are drawn once.
#[inline]
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Renders a normalized-frame mesh with an arbitrary mesh→camera map.
///
/// `view_pose` is stored on the output as-is. NOCS is computed from the mesh's own vertex
/// coordinates, which must therefore lie in the unit sphere.
pub fn rasterize_transformed(
    mesh: &TriangleMesh,
    to_camera: impl Fn(&Vec3) -> Vec3,
    view_pose: Pose,
    intrinsics: &CameraIntrinsics,
    shading: Shading,
) -> Result<TemplateImage, RenderError> {
    intrinsics.validate()?;
    let cam: Vec<Vec3> = mesh.vertices.iter().map(to_camera).collect();
    if cam.iter().all(|p| p.z <= 0.0) {
        return Err(RenderError::ObjectBehindCamera);
    }
    let k = intrinsics;
    let screen: Vec<[f64; 2]> = cam
        .iter()
        .map(|p| {
            if p.z > NEAR {
                [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy]
            } else {
                [f64::NAN; 2]
            }
        })
        .collect();

    let (light, use_colors) = match shading {
        Shading::Lambertian => (Vec3::new(0.0, 0.0, -1.0), false),
        Shading::VertexColor => (Vec3::new(0.0, 0.0, -1.0), true),
        Shading::Directional(d) => (d.try_normalize(1e-12).unwrap_or(Vec3::new(0.0, 0.0, -1.0)), true),
    };
    let colors = mesh.colors.as_ref().filter(|_| use_colors);

    let mut out = TemplateImage::blank(*intrinsics, view_pose);
    let (w, h) = (k.width as i64, k.height as i64);
    let mut zbuf = vec![f64::INFINITY; (w * h) as usize];

    for face in &mesh.faces {
        let mut idx = face.map(|i| i as usize);
        if idx.iter().any(|&i| cam[i].z <= NEAR) {
            continue;
        }
        let mut s = idx.map(|i| screen[i]);
        let mut area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            idx.swap(1, 2);
            s.swap(1, 2);
            area = -area;
        }
        let c = idx.map(|i| cam[i]);
        let mut normal = (c[1] - c[0]).cross(&(c[2] - c[0])).normalize();
        if normal.dot(&c[0]) > 0.0 {
            normal = -normal;
        }
        let intensity = AMBIENT + (1.0 - AMBIENT) * normal.dot(&light).max(0.0) as f32;
        let inv_z = idx.map(|i| 1.0 / cam[i].z);
        let nv = idx.map(|i| mesh.vertices[i]);
        let col = idx.map(|i| colors.map_or(GREY, |cs| cs[i]));
        let own = [owns_edge(s[1], s[2]), owns_edge(s[2], s[0]), owns_edge(s[0], s[1])];

        let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = ((min_x - 0.5).floor() as i64).max(0);
        let x1 = ((max_x - 0.5).ceil() as i64).min(w - 1);
        let y0 = ((min_y - 0.5).floor() as i64).max(0);
        let y1 = ((max_y - 0.5).ceil() as i64).min(h - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }

        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, py];
                let e = [edge(s[1], s[2], p), edge(s[2], s[0], p), edge(s[0], s[1], p)];
                if (0..3).any(|i| e[i] < 0.0 || (e[i] == 0.0 && !own[i])) {
                    continue;
                }
                let q = [e[0] / area * inv_z[0], e[1] / area * inv_z[1], e[2] / area * inv_z[2]];
                let z = 1.0 / (q[0] + q[1] + q[2]);
                let pix = (y * w + x) as usize;
                if z >= zbuf[pix] {
                    continue;
                }
                zbuf[pix] = z;
                let b = [q[0] * z, q[1] * z, q[2] * z];
                let pn = nv[0] * b[0] + nv[1] * b[1] + nv[2] * b[2];
                let mut nocs = nocs_encode(&pn);
                for v in &mut nocs {
                    *v = v.clamp(0.0, 1.0);
                }
                let mut rgb = [0.0f32; 3];
                for ch in 0..3 {
                    let albedo = col[0][ch] * b[0] as f32 + col[1][ch] * b[1] as f32 + col[2][ch] * b[2] as f32;
                    rgb[ch] = (albedo * intensity).clamp(0.0, 1.0);
                }
                out.depth[pix] = z as f32;
                out.nocs[pix] = nocs;
                out.rgb[pix] = rgb;
                out.mask[pix] = true;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{synth, Vec2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k(size: u32, f: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(f, f, size as f64 / 2.0, size as f64 / 2.0, size, size).unwrap()
    }

    fn at(z: f64) -> Pose {
        Pose {
            rotation: crate::geometry::Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, z),
        }
    }

    #[test]
    fn sphere_disc_and_centre_depth() {
        let sphere = synth::uv_sphere(1.0, 64, 128);
        let kk = k(200, 200.0);
        let img = rasterize(&sphere, &at(3.0), &kk, Shading::Lambertian).unwrap();
        // Analytic silhouette: rays with tan(angle) < 1/sqrt(8) hit the sphere.
        let limb = 1.0 / 8f64.sqrt();
        let mut mismatches = 0;
        for y in 0..200 {
            for x in 0..200 {
                let r = Vec2::new(x as f64 + 0.5 - 100.0, y as f64 + 0.5 - 100.0).norm() / 200.0;
                let inside = r < limb;
                // Ignore a 1.5 px band around the limb.
                if (r - limb).abs() * 200.0 > 1.5 && inside != img.mask[img.index(x, y)] {
                    mismatches += 1;
                }
            }
        }
        assert_eq!(mismatches, 0);
        // Centre pixel: ray-sphere intersection at depth ~2, within the facet sag of the mesh.
        let d = img.depth[img.index(100, 100)] as f64;
        let dir = Vec3::new(0.5, 0.5, 200.0).normalize();
        let b = dir.z * 3.0;
        let t = b - (b * b - 8.0).sqrt();
        assert!((d - t * dir.z).abs() < 2e-3, "depth {d}");
    }

    #[test]
    fn cube_front_face_nocs_linear() {
        let cube = synth::cube(1.0);
        let kk = k(140, 140.0);
        let img = rasterize(&cube, &at(3.0), &kk, Shading::Lambertian).unwrap();
        // Front face z = -0.5 has NOCS z = 0.25 everywhere, x/y linear in the pixel.
        let mut pts = Vec::new();
        for y in 50..90u32 {
            for x in 50..90u32 {
                let i = img.index(x, y);
                assert!(img.mask[i]);
                assert!((img.nocs[i][2] - 0.25).abs() < 1e-6);
                assert!((img.depth[i] - 2.5).abs() < 1e-5);
                pts.push((x, y, img.nocs[i]));
            }
        }
        // Constant step along rows and columns (the face is fronto-parallel).
        let step_x = pts[1].2[0] - pts[0].2[0];
        for w in pts.windows(2).filter(|w| w[0].1 == w[1].1) {
            assert!((w[1].2[0] - w[0].2[0] - step_x).abs() < 1e-5);
        }
    }

    #[test]
    fn background_contract() {
        let img = rasterize(&synth::cube(0.2), &at(3.0), &k(140, 140.0), Shading::Lambertian).unwrap();
        let i = img.index(0, 0);
        assert!(!img.mask[i]);
        assert_eq!(img.depth[i], 0.0);
        assert_eq!(img.nocs[i], [0.0; 3]);
        for i in 0..img.mask.len() {
            assert_eq!(img.mask[i], img.depth[i] > 0.0);
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let r = rasterize(&synth::cube(0.5), &at(-3.0), &k(140, 140.0), Shading::Lambertian);
        assert!(matches!(r, Err(RenderError::ObjectBehindCamera)));
    }

    #[test]
    fn nearer_plane_wins() {
        let quad = |z: f64, half: f64| {
            TriangleMesh::new(
                vec![
                    Vec3::new(-half, -half, z),
                    Vec3::new(half, -half, z),
                    Vec3::new(half, half, z),
                    Vec3::new(-half, half, z),
                ],
                vec![[0, 1, 2], [0, 2, 3]],
                None,
            )
            .unwrap()
        };
        let kk = k(100, 100.0);
        for order in [[0.0, 0.5], [0.5, 0.0]] {
            let mut planes = quad(order[0], 0.6);
            let other = quad(order[1], 0.6);
            let base = planes.vertices.len() as u32;
            planes.vertices.extend(other.vertices);
            planes.faces.extend(other.faces.iter().map(|f| f.map(|i| i + base)));
            let img = rasterize(&planes, &at(3.0), &kk, Shading::Lambertian).unwrap();
            for i in 0..img.mask.len() {
                if img.mask[i] {
                    assert!((img.depth[i] - 3.0).abs() < 1e-5, "far plane leaked through");
                }
            }
        }
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // Quad split along its diagonal: coverage must equal the union with no holes.
        let mesh = TriangleMesh::new(
            vec![
                Vec3::new(-0.25, -0.25, 0.0),
                Vec3::new(0.25, -0.25, 0.0),
                Vec3::new(0.25, 0.25, 0.0),
                Vec3::new(-0.25, 0.25, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        let img = rasterize(&mesh, &at(1.0), &k(100, 100.0), Shading::Lambertian).unwrap();
        // Square spans x, y in [25, 75]; the diagonal passes exactly through pixel centres.
        assert_eq!(img.foreground_count(), 50 * 50);
    }

    #[test]
    fn nocs_matches_back_projection() {
        let model = ObjectModel::from_mesh(&synth::asymmetric_toy(), vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kk = k(160, 200.0);
        let pose = crate::geometry::look_at_pose(Vec3::new(1.5, -1.8, 1.1), Vec3::zeros(), Vec3::z()).unwrap();
        let img = rasterize(&model.mesh, &pose, &kk, Shading::VertexColor).unwrap();
        let fg: Vec<(u32, u32)> = (0..160u32)
            .flat_map(|y| (0..160u32).map(move |x| (x, y)))
            .filter(|&(x, y)| img.mask[img.index(x, y)])
            .collect();
        assert!(fg.len() > 1000);
        for _ in 0..1000 {
            let (x, y) = fg[rng.random_range(0..fg.len())];
            let p = img.lift_pixel(x, y).unwrap();
            let enc = nocs_encode(&p);
            let stored = img.nocs[img.index(x, y)];
            for c in 0..3 {
                assert!((enc[c] - stored[c]).abs() < 2.0 / 255.0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mesh = synth::asymmetric_toy();
        let model = ObjectModel::from_mesh(&mesh, vec![]).unwrap();
        let pose = crate::geometry::look_at_pose(Vec3::new(0.2, 2.0, 1.0), Vec3::zeros(), Vec3::z()).unwrap();
        let a = rasterize(&model.mesh, &pose, &k(140, 140.0), Shading::VertexColor).unwrap();
        let b = rasterize(&model.mesh, &pose, &k(140, 140.0), Shading::VertexColor).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_render_matches_normalized_render() {
        let model = ObjectModel::from_mesh(&synth::asymmetric_toy(), vec![]).unwrap();
        let pose = Pose::from_axis_angle(Vec3::new(0.4, -0.3, 0.2), Vec3::new(0.01, -0.02, 0.5));
        let kk = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap();
        let img = rasterize_model(&model, &pose, &kk, Shading::VertexColor).unwrap();
        assert!(img.foreground_count() > 2000);
        // Lifted pixels land on original-frame points whose normalized image matches NOCS.
        for y in (0..480).step_by(7) {
            for x in (0..640).step_by(7) {
                if let Some(p) = img.lift_pixel(x, y) {
                    let enc = nocs_encode(&model.normalization.apply(&p));
                    let stored = img.nocs[img.index(x, y)];
                    for c in 0..3 {
                        assert!((enc[c] - stored[c]).abs() < 2.0 / 255.0);
                    }
                }
            }
        }
    }
}

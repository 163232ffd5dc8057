//! Mesh files (PLY, OBJ) and symmetry sidecars.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use serde::{Deserialize, Serialize};

use super::{nearest_rotation, GeometryError, Mat3, Pose, TriangleMesh, Vec3};

/// Steps per full turn when discretizing a continuous symmetry.
pub const CONTINUOUS_SYMMETRY_STEPS: usize = 36;

fn format_err(path: &Path, message: impl Into<String>) -> GeometryError {
    GeometryError::MeshFormat {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Loads a PLY (ASCII or binary) or OBJ mesh, chosen by extension.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh, GeometryError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ply" => load_ply(path),
        "obj" => load_obj(path),
        _ => Err(format_err(path, "unsupported extension (expected .ply or .obj)")),
    }
}

/// Writes an ASCII PLY with double-precision vertices and, when present, 8-bit colors.
pub fn save_ply(path: &Path, mesh: &TriangleMesh) -> Result<(), GeometryError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(out, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.faces.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(out, "{} {} {}", v.x, v.y, v.z);
        if let Some(c) = &mesh.colors {
            let [r, g, b] = c[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
            let _ = write!(out, " {r} {g} {b}");
        }
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&x| x as i64).collect(),
        _ => return None,
    })
}

/// Fan-triangulates a polygon.
fn fan(path: &Path, poly: &[i64], out: &mut Vec<[u32; 3]>) -> Result<(), GeometryError> {
    if poly.len() < 3 {
        return Err(format_err(path, format!("face with {} vertices", poly.len())));
    }
    let idx = |i: i64| u32::try_from(i).map_err(|_| format_err(path, format!("negative vertex index {i}")));
    for k in 1..poly.len() - 1 {
        out.push([idx(poly[0])?, idx(poly[k])?, idx(poly[k + 1])?]);
    }
    Ok(())
}

fn load_ply(path: &Path) -> Result<TriangleMesh, GeometryError> {
    let mut reader = BufReader::new(File::open(path)?);
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut reader)
        .map_err(|e| format_err(path, e.to_string()))?;
    let vertices_el = ply
        .payload
        .get("vertex")
        .ok_or_else(|| format_err(path, "no vertex element"))?;

    let mut vertices = Vec::with_capacity(vertices_el.len());
    let mut colors = Vec::with_capacity(vertices_el.len());
    let mut has_color = true;
    for v in vertices_el {
        let get = |k: &str| v.get(k).and_then(scalar);
        let (Some(x), Some(y), Some(z)) = (get("x"), get("y"), get("z")) else {
            return Err(format_err(path, "vertex without x/y/z"));
        };
        vertices.push(Vec3::new(x, y, z));
        // Integer channels are 0..255, float channels already 0..1.
        let channel = |k: &str| {
            v.get(k).and_then(|p| {
                let s = scalar(p)?;
                Some(match p {
                    Property::Float(_) | Property::Double(_) => s as f32,
                    _ => (s / 255.0) as f32,
                })
            })
        };
        match (channel("red"), channel("green"), channel("blue")) {
            (Some(r), Some(g), Some(b)) => colors.push([r, g, b]),
            _ => has_color = false,
        }
    }

    let mut faces = Vec::new();
    if let Some(face_el) = ply.payload.get("face") {
        for f in face_el {
            let list = f
                .get("vertex_indices")
                .or_else(|| f.get("vertex_index"))
                .and_then(index_list)
                .ok_or_else(|| format_err(path, "face without vertex_indices list"))?;
            fan(path, &list, &mut faces)?;
        }
    }
    TriangleMesh::new(vertices, faces, has_color.then_some(colors))
}

fn load_obj(path: &Path) -> Result<TriangleMesh, GeometryError> {
    let options = tobj::LoadOptions {
        triangulate: true,
        single_index: true,
        ..Default::default()
    };
    let (models, _materials) = tobj::load_obj(path, &options).map_err(|e| match e {
        tobj::LoadError::OpenFileFailed => GeometryError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cannot open {}", path.display()),
        )),
        other => format_err(path, other.to_string()),
    })?;

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut has_color = true;
    let mut faces = Vec::new();
    for model in &models {
        let m = &model.mesh;
        let base = vertices.len() as u32;
        for p in m.positions.chunks_exact(3) {
            vertices.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64));
        }
        if m.vertex_color.len() == m.positions.len() && !m.positions.is_empty() {
            colors.extend(m.vertex_color.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        } else {
            has_color = false;
        }
        faces.extend(m.indices.chunks_exact(3).map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
    TriangleMesh::new(vertices, faces, has_color.then_some(colors))
}

/// One discrete symmetry: `p ↦ R p + t` in the original object frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscreteSymmetry {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(default)]
    pub t: [f64; 3],
}

/// Rotation symmetry about `axis` through the point `offset`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContinuousSymmetry {
    pub axis: [f64; 3],
    #[serde(default)]
    pub offset: [f64; 3],
}

/// Symmetry sidecar contents.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SymmetrySpec {
    #[serde(default)]
    pub discrete: Vec<DiscreteSymmetry>,
    #[serde(default)]
    pub continuous: Vec<ContinuousSymmetry>,
}

impl SymmetrySpec {
    /// Expands to a transform list (identity first).
    ///
    /// Each discrete symmetry (and the identity) is combined with every step of every continuous
    /// symmetry, `steps` per full turn.
    pub fn expand(&self, steps: usize) -> Result<Vec<Pose>, GeometryError> {
        let mut discrete = vec![Pose::identity()];
        for d in &self.discrete {
            let r = Mat3::from_row_slice(&d.rotation);
            let pose = Pose::new(r, Vec3::from(d.t))
                .map_err(|e| GeometryError::Symmetry(format!("discrete symmetry: {e}")))?;
            discrete.push(Pose {
                rotation: nearest_rotation(&pose.rotation),
                ..pose
            });
        }
        let mut continuous = Vec::new();
        for c in &self.continuous {
            let axis = Vec3::from(c.axis);
            if axis.norm() < 1e-12 {
                return Err(GeometryError::Symmetry("continuous symmetry axis is zero".into()));
            }
            let axis = axis.normalize();
            let offset = Vec3::from(c.offset);
            for k in 0..steps.max(1) {
                let angle = std::f64::consts::TAU * k as f64 / steps.max(1) as f64;
                let r = Pose::from_axis_angle(axis * angle, Vec3::zeros()).rotation;
                continuous.push(Pose {
                    rotation: r,
                    translation: offset - r * offset,
                });
            }
        }
        if continuous.is_empty() {
            return Ok(discrete);
        }
        let mut out = Vec::with_capacity(discrete.len() * continuous.len());
        for d in &discrete {
            for c in &continuous {
                out.push(c.compose(d));
            }
        }
        Ok(out)
    }
}

pub fn parse_symmetries(json: &str) -> Result<SymmetrySpec, GeometryError> {
    serde_json::from_str(json).map_err(|e| GeometryError::Symmetry(e.to_string()))
}

/// Reads a sidecar and expands it with [`CONTINUOUS_SYMMETRY_STEPS`] per turn.
pub fn load_symmetries(path: &Path) -> Result<Vec<Pose>, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    parse_symmetries(&text)?.expand(CONTINUOUS_SYMMETRY_STEPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn ascii_ply_with_quad_and_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.ply");
        let mut f = File::create(&path).unwrap();
        write!(
            f,
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0 255 0 0\n1 0 0 0 255 0\n1 1 0 0 0 255\n0 1 0 255 255 255\n4 0 1 2 3\n"
        )
        .unwrap();
        drop(f);
        let m = load_mesh(&path).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.colors.unwrap()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn obj_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tet.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n").unwrap();
        let m = load_mesh(&path).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert!(m.colors.is_none());
    }

    #[test]
    fn missing_and_unknown_files() {
        assert!(matches!(load_mesh(Path::new("/nonexistent/x.ply")), Err(GeometryError::Io(_))));
        assert!(matches!(load_mesh(Path::new("a.stl")), Err(GeometryError::MeshFormat { .. })));
    }

    #[test]
    fn symmetry_expansion() {
        let spec = parse_symmetries(
            r#"{"discrete":[{"R":[-1,0,0,0,-1,0,0,0,1],"t":[0,0,0]}],
                "continuous":[{"axis":[0,0,1],"offset":[0,0,0]}]}"#,
        )
        .unwrap();
        let s = spec.expand(36).unwrap();
        assert_eq!(s.len(), 72);
        assert_eq!(s[0], Pose::identity());
        assert!(s.iter().all(|p| p.is_valid(1e-9)));

        let flip = parse_symmetries(r#"{"discrete":[{"R":[1,0,0,0,-1,0,0,0,-1]}]}"#).unwrap();
        assert_eq!(flip.expand(36).unwrap().len(), 2);
        assert!(parse_symmetries(r#"{"discrete":[{"R":[2,0,0,0,1,0,0,0,1]}]}"#)
            .unwrap()
            .expand(36)
            .is_err());
    }

    #[test]
    fn continuous_offset_axis_fixes_axis_points() {
        let spec = SymmetrySpec {
            discrete: vec![],
            continuous: vec![ContinuousSymmetry {
                axis: [0.0, 1.0, 0.0],
                offset: [0.5, 0.0, 0.5],
            }],
        };
        for s in spec.expand(12).unwrap() {
            let p = Vec3::new(0.5, 3.0, 0.5);
            assert!((s.transform_point(&p) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn ply_writer_round_trips() {
        let mesh = crate::geometry::synth::asymmetric_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ply");
        save_ply(&path, &mesh).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.faces, mesh.faces);
        let (a, b) = (back.colors.unwrap(), mesh.colors.unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (0..3).all(|c| (x[c] - y[c]).abs() <= 0.5 / 255.0 + 1e-6)));
    }
}

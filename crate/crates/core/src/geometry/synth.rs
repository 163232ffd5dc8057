//! Procedural meshes for tests, benchmarks and synthetic training data.

use super::{TriangleMesh, Vec3};

/// Axis-aligned cube of edge `size` centred at the origin, outward-facing triangles.
pub fn cube(size: f64) -> TriangleMesh {
    let h = size / 2.0;
    box_mesh(Vec3::new(-h, -h, -h), Vec3::new(h, h, h), 1, None)
}

/// Axis-aligned box with every face split into `subdiv × subdiv` quads.
///
/// With `color` set, every vertex is coloured by evaluating it at the vertex position.
pub fn box_mesh(min: Vec3, max: Vec3, subdiv: usize, color: Option<&dyn Fn(&Vec3) -> [f32; 3]>) -> TriangleMesh {
    let n = subdiv.max(1);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, side) for the six faces; u/v axes chosen so u × v points outward.
    for axis in 0..3 {
        for &positive in &[false, true] {
            let (ua, va) = if positive {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let base = vertices.len() as u32;
            for j in 0..=n {
                for i in 0..=n {
                    let mut p = Vec3::zeros();
                    p[axis] = if positive { max[axis] } else { min[axis] };
                    p[ua] = min[ua] + (max[ua] - min[ua]) * i as f64 / n as f64;
                    p[va] = min[va] + (max[va] - min[va]) * j as f64 / n as f64;
                    vertices.push(p);
                }
            }
            let stride = n as u32 + 1;
            for j in 0..n as u32 {
                for i in 0..n as u32 {
                    let a = base + j * stride + i;
                    faces.push([a, a + 1, a + stride + 1]);
                    faces.push([a, a + stride + 1, a + stride]);
                }
            }
        }
    }
    let colors = color.map(|f| vertices.iter().map(f).collect());
    TriangleMesh::new(vertices, faces, colors).expect("box mesh is well-formed")
}

/// UV sphere with `rings` latitude bands and `segments` longitude slices.
pub fn uv_sphere(radius: f64, rings: usize, segments: usize) -> TriangleMesh {
    let rings = rings.max(2);
    let segments = segments.max(3);
    let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(radius * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -radius));
    let south = vertices.len() as u32 - 1;
    let seg = segments as u32;
    let ring = |r: u32, s: u32| 1 + r * seg + s % seg;
    let mut faces = Vec::new();
    for s in 0..seg {
        faces.push([0, ring(0, s), ring(0, s + 1)]);
    }
    for r in 0..rings as u32 - 2 {
        for s in 0..seg {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    let last = rings as u32 - 2;
    for s in 0..seg {
        faces.push([south, ring(last, s + 1), ring(last, s)]);
    }
    TriangleMesh::new(vertices, faces, None).expect("sphere mesh is well-formed")
}

/// Smooth pseudo-random colour field: three sinusoids of the position.
pub fn texture_color(p: &Vec3, frequency: f64, phase: f64) -> [f32; 3] {
    let dirs = [
        Vec3::new(0.9, 0.3, -0.5),
        Vec3::new(-0.2, 1.0, 0.6),
        Vec3::new(0.4, -0.7, 0.8),
    ];
    let mut out = [0.0f32; 3];
    for (k, d) in dirs.iter().enumerate() {
        let s = (frequency * d.dot(p) + phase + 2.1 * k as f64).sin();
        out[k] = (0.15 + 0.7 * (0.5 + 0.5 * s)) as f32;
    }
    out
}

fn union(parts: Vec<TriangleMesh>) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut colors = Vec::new();
    for part in parts {
        let base = vertices.len() as u32;
        faces.extend(part.faces.iter().map(|f| f.map(|i| i + base)));
        match &part.colors {
            Some(c) => colors.extend_from_slice(c),
            None => colors.extend(std::iter::repeat([0.7f32; 3]).take(part.vertices.len())),
        }
        vertices.extend(part.vertices);
    }
    TriangleMesh::new(vertices, faces, Some(colors)).expect("union of valid meshes")
}

/// Union of coloured boxes given as `(min, max)` pairs in meters.
pub fn box_assembly(boxes: &[(Vec3, Vec3)], subdiv: usize, frequency: f64, phase: f64) -> TriangleMesh {
    let color = move |p: &Vec3| texture_color(p, frequency, phase);
    union(
        boxes
            .iter()
            .map(|(lo, hi)| box_mesh(*lo, *hi, subdiv, Some(&color)))
            .collect(),
    )
}

/// Asymmetric, vertex-coloured toy object about 0.2 m across: an L-shaped body with an
/// off-centre post. It has no non-trivial rotational symmetry.
pub fn asymmetric_toy() -> TriangleMesh {
    box_assembly(
        &[
            (Vec3::new(-0.10, -0.05, -0.03), Vec3::new(0.08, 0.05, 0.03)),
            (Vec3::new(0.02, 0.05, -0.03), Vec3::new(0.08, 0.12, 0.03)),
            (Vec3::new(-0.09, -0.04, 0.03), Vec3::new(-0.05, 0.00, 0.11)),
        ],
        6,
        40.0,
        0.0,
    )
}

/// Three distinct asymmetric objects for synthetic training.
pub fn training_objects() -> Vec<TriangleMesh> {
    vec![
        asymmetric_toy(),
        // T-shape with a side block.
        box_assembly(
            &[
                (Vec3::new(-0.09, -0.02, -0.02), Vec3::new(0.09, 0.02, 0.02)),
                (Vec3::new(-0.02, 0.02, -0.02), Vec3::new(0.02, 0.13, 0.02)),
                (Vec3::new(0.03, -0.06, -0.02), Vec3::new(0.07, -0.02, 0.05)),
            ],
            6,
            45.0,
            1.3,
        ),
        // Staircase of three steps.
        box_assembly(
            &[
                (Vec3::new(-0.08, -0.04, -0.04), Vec3::new(0.08, 0.04, 0.00)),
                (Vec3::new(-0.08, -0.04, 0.00), Vec3::new(0.03, 0.04, 0.04)),
                (Vec3::new(-0.08, -0.04, 0.04), Vec3::new(-0.03, 0.04, 0.09)),
            ],
            6,
            50.0,
            2.6,
        ),
    ]
}

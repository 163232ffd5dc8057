use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{build_viewpoint_graph, CameraIntrinsics, ObjectModel, Pose, Similarity, ViewpointGraph};

use super::{rasterize, RenderError, Shading, TemplateImage};

/// Side of a square image patch in pixels.
pub const PATCH_SIZE: u32 = 14;

const DEPTH_UNITS_PER_METER: f64 = 10_000.0;
const META_VERSION: u32 = 1;

/// Rendered views of one object on a geodesic viewpoint sphere.
///
/// Templates are rendered in the normalized object frame, so depths and view poses are in
/// normalized units.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub object_id: String,
    pub templates: Vec<TemplateImage>,
    pub graph: ViewpointGraph,
    pub normalization: Similarity,
    /// Object diameter in original units.
    pub diameter: f64,
    pub resolution: u32,
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Patch grid side (`resolution / 14`).
    pub fn grid(&self) -> usize {
        (self.resolution / PATCH_SIZE) as usize
    }
}

/// Camera distance that makes the unit sphere fill about 80 % of the narrower field of view.
pub fn template_radius(intrinsics: &CameraIntrinsics) -> f64 {
    1.25 / (intrinsics.min_fov() / 2.0).tan()
}

/// Renders one template per viewpoint of a frequency-`frequency` geodesic sphere.
pub fn render_template_set(
    model: &ObjectModel,
    object_id: &str,
    frequency: u32,
    resolution: u32,
) -> Result<TemplateSet, RenderError> {
    if resolution == 0 || resolution % PATCH_SIZE != 0 {
        return Err(RenderError::BadResolution(resolution));
    }
    if frequency == 0 {
        return Err(RenderError::Format("frequency must be at least 1".into()));
    }
    let intrinsics = CameraIntrinsics::template(resolution);
    let graph = build_viewpoint_graph(frequency, template_radius(&intrinsics))?;
    let templates = graph
        .view_poses
        .par_iter()
        .map(|pose| rasterize(&model.mesh, pose, &intrinsics, Shading::VertexColor))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(i) = templates.iter().position(|t| t.foreground_count() == 0) {
        return Err(RenderError::EmptyTemplate(i));
    }
    Ok(TemplateSet {
        object_id: object_id.to_string(),
        templates,
        graph,
        normalization: model.normalization,
        diameter: model.diameter,
        resolution,
    })
}

#[derive(Serialize, Deserialize)]
struct ViewMeta {
    pose: Pose,
    intrinsics: CameraIntrinsics,
    neighbors: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SetMeta {
    version: u32,
    object_id: String,
    frequency: u32,
    resolution: u32,
    diameter: f64,
    normalization: Similarity,
    views: Vec<ViewMeta>,
}

fn image_err(e: image::ImageError) -> RenderError {
    match e {
        image::ImageError::IoError(io) => RenderError::Io(io),
        other => RenderError::Format(other.to_string()),
    }
}

/// Writes `meta.json` plus `rgb_%03d.png`, `depth_%03d.png` (16-bit, 0.1 mm units) and
/// `nocs_%03d.png` (16-bit per channel) for every template.
pub fn save_template_set(set: &TemplateSet, dir: &Path) -> Result<(), RenderError> {
    std::fs::create_dir_all(dir)?;
    let meta = SetMeta {
        version: META_VERSION,
        object_id: set.object_id.clone(),
        frequency: set.graph.frequency,
        resolution: set.resolution,
        diameter: set.diameter,
        normalization: set.normalization,
        views: set
            .templates
            .iter()
            .zip(&set.graph.neighbors)
            .map(|(t, n)| ViewMeta {
                pose: t.view_pose,
                intrinsics: t.intrinsics,
                neighbors: n.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| RenderError::Format(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), json)?;

    set.templates
        .par_iter()
        .enumerate()
        .try_for_each(|(i, t)| -> Result<(), RenderError> {
            let (w, h) = (t.width, t.height);
            let rgb: Vec<u8> = t
                .rgb
                .iter()
                .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
                .collect();
            let mut depth = Vec::with_capacity(t.depth.len());
            for &d in &t.depth {
                let q = (d as f64 * DEPTH_UNITS_PER_METER).round();
                if q > u16::MAX as f64 {
                    return Err(RenderError::Format(format!("template {i}: depth {d} exceeds the 16-bit range")));
                }
                depth.push(q as u16);
            }
            let nocs: Vec<u16> = t
                .nocs
                .iter()
                .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16))
                .collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, rgb)
                .expect("buffer size")
                .save(dir.join(format!("rgb_{i:03}.png")))
                .map_err(image_err)?;
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, depth)
                .expect("buffer size")
                .save(dir.join(format!("depth_{i:03}.png")))
                .map_err(image_err)?;
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, nocs)
                .expect("buffer size")
                .save(dir.join(format!("nocs_{i:03}.png")))
                .map_err(image_err)?;
            Ok(())
        })
}

fn open_png(path: &Path) -> Result<image::DynamicImage, RenderError> {
    if !path.exists() {
        return Err(RenderError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing {}", path.display()),
        )));
    }
    image::open(path).map_err(|e| RenderError::Format(format!("{}: {e}", path.display())))
}

pub fn load_template_set(dir: &Path) -> Result<TemplateSet, RenderError> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: SetMeta = serde_json::from_str(&text).map_err(|e| RenderError::Format(format!("meta.json: {e}")))?;
    if meta.version != META_VERSION {
        return Err(RenderError::Format(format!("unsupported meta version {}", meta.version)));
    }
    let expected = 10 * (meta.frequency as usize).pow(2) + 2;
    if meta.views.len() != expected {
        return Err(RenderError::Format(format!(
            "frequency {} needs {expected} views, meta lists {}",
            meta.frequency,
            meta.views.len()
        )));
    }
    let templates = meta
        .views
        .par_iter()
        .enumerate()
        .map(|(i, v)| -> Result<TemplateImage, RenderError> {
            let mut t = TemplateImage::blank(v.intrinsics, v.pose);
            let (w, h) = (t.width, t.height);
            let check = |img: &image::DynamicImage, name: &str| {
                if img.width() != w || img.height() != h {
                    Err(RenderError::Format(format!("{name}_{i:03}.png is {}x{}, expected {w}x{h}", img.width(), img.height())))
                } else {
                    Ok(())
                }
            };
            let rgb = open_png(&dir.join(format!("rgb_{i:03}.png")))?;
            check(&rgb, "rgb")?;
            let depth = open_png(&dir.join(format!("depth_{i:03}.png")))?;
            check(&depth, "depth")?;
            let nocs = open_png(&dir.join(format!("nocs_{i:03}.png")))?;
            check(&nocs, "nocs")?;
            let (rgb, depth, nocs) = (rgb.to_rgb8(), depth.to_luma16(), nocs.to_rgb16());
            for (p, px) in rgb.pixels().enumerate() {
                t.rgb[p] = px.0.map(|v| v as f32 / 255.0);
            }
            for (p, px) in depth.pixels().enumerate() {
                t.depth[p] = (px.0[0] as f64 / DEPTH_UNITS_PER_METER) as f32;
                t.mask[p] = px.0[0] > 0;
            }
            for (p, px) in nocs.pixels().enumerate() {
                if t.mask[p] {
                    t.nocs[p] = px.0.map(|v| (v as f64 / 65535.0) as f32);
                }
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let view_poses: Vec<Pose> = meta.views.iter().map(|v| v.pose).collect();
    let mut graph = ViewpointGraph::from_poses(view_poses, meta.frequency);
    graph.neighbors = meta.views.iter().map(|v| v.neighbors.clone()).collect();
    if graph.neighbors.iter().flatten().any(|&n| n >= expected) {
        return Err(RenderError::Format("neighbor index out of range".into()));
    }
    Ok(TemplateSet {
        object_id: meta.object_id,
        templates,
        graph,
        normalization: meta.normalization,
        diameter: meta.diameter,
        resolution: meta.resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synth;

    fn toy_model() -> ObjectModel {
        ObjectModel::from_mesh(&synth::asymmetric_toy(), vec![]).unwrap()
    }

    #[test]
    fn radius_for_template_camera() {
        let k = CameraIntrinsics::template(420);
        assert!((template_radius(&k) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn frequency_one_set() {
        let set = render_template_set(&toy_model(), "toy", 1, 140).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(set.grid(), 10);
        for (t, p) in set.templates.iter().zip(&set.graph.view_poses) {
            assert_eq!(&t.view_pose, p);
            assert!(t.foreground_count() > 0);
        }
        // NOCS coverage over the whole set, on an object with comparable extent on every axis.
        let cube = ObjectModel::from_mesh(&synth::cube(0.1), vec![]).unwrap();
        let set = render_template_set(&cube, "cube", 1, 140).unwrap();
        for c in 0..3 {
            let vals = set
                .templates
                .iter()
                .flat_map(|t| t.nocs.iter().zip(&t.mask).filter(|(_, &m)| m).map(move |(n, _)| n[c]));
            let (lo, hi) = vals.fold((f32::MAX, f32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            assert!(hi - lo >= 0.5, "channel {c} spans {lo}..{hi}");
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(matches!(
            render_template_set(&toy_model(), "toy", 1, 100),
            Err(RenderError::BadResolution(100))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let set = render_template_set(&toy_model(), "toy", 1, 56).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_template_set(&set, dir.path()).unwrap();
        let back = load_template_set(dir.path()).unwrap();
        assert_eq!(back.object_id, "toy");
        assert_eq!(back.diameter, set.diameter);
        assert_eq!(back.normalization, set.normalization);
        assert_eq!(back.graph.neighbors, set.graph.neighbors);
        for (a, b) in set.templates.iter().zip(&back.templates) {
            assert_eq!(a.view_pose, b.view_pose);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert_eq!(a.mask, b.mask);
            for i in 0..a.depth.len() {
                assert!((a.depth[i] - b.depth[i]).abs() <= 0.5e-4 + 1e-6);
                for c in 0..3 {
                    assert!((a.nocs[i][c] - b.nocs[i][c]).abs() <= 1.0 / 65535.0);
                    assert!((a.rgb[i][c] - b.rgb[i][c]).abs() <= 0.5 / 255.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn depth_quantization_contract() {
        let set = render_template_set(&toy_model(), "toy", 1, 28).unwrap();
        let mut set = set;
        let i = set.templates[0].mask.iter().position(|&m| m).unwrap();
        set.templates[0].depth[i] = 1.23456;
        let dir = tempfile::tempdir().unwrap();
        save_template_set(&set, dir.path()).unwrap();
        let back = load_template_set(dir.path()).unwrap();
        assert!((back.templates[0].depth[i] - 1.2346).abs() < 1e-6);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let set = render_template_set(&toy_model(), "toy", 1, 28).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_template_set(&set, dir.path()).unwrap();
        std::fs::write(dir.path().join("nocs_003.png"), b"not a png").unwrap();
        assert!(matches!(load_template_set(dir.path()), Err(RenderError::Format(_))));
        std::fs::write(dir.path().join("meta.json"), b"{").unwrap();
        assert!(matches!(load_template_set(dir.path()), Err(RenderError::Format(_))));
        assert!(matches!(
            load_template_set(&dir.path().join("missing")),
            Err(RenderError::Io(_))
        ));
    }
}

use rand::Rng;

use crate::backbone::{patch_center_pixel, PATCH};
use crate::geometry::{load_mesh, synth, CameraIntrinsics, ObjectModel, Vec3, ViewpointGraph};
use crate::matcher::lift_patch_to_3d;
use crate::net::TokenOrigin;
use crate::render::{render_template_set, TemplateImage, TemplateSet};
use crate::synthetic::{random_light, random_view_pose, render_training_view};

use super::{DataConfig, ObjectSource, TrainError};

/// An onboarded training object.
#[derive(Debug, Clone)]
pub struct TrainingObject {
    pub id: String,
    pub model: ObjectModel,
    pub set: TemplateSet,
}

/// Loads every configured object and renders its templates.
pub fn load_objects(cfg: &DataConfig) -> Result<Vec<TrainingObject>, TrainError> {
    let builtins = synth::training_objects();
    cfg.objects
        .iter()
        .map(|src| {
            let (id, mesh) = match src {
                ObjectSource::Builtin { builtin } => {
                    let mesh = builtins.get(*builtin).ok_or_else(|| {
                        TrainError::Config(format!("no built-in object {builtin}, have {}", builtins.len()))
                    })?;
                    (format!("builtin{builtin}"), mesh.clone())
                }
                ObjectSource::Mesh { mesh } => {
                    let id = mesh.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned());
                    (id, load_mesh(mesh)?)
                }
            };
            let model = ObjectModel::from_mesh(&mesh, vec![])?;
            let set = render_template_set(&model, &id, cfg.frequency, cfg.resolution)?;
            Ok(TrainingObject { id, model, set })
        })
        .collect()
}

/// One posed training image with the templates encoded alongside it.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub object: usize,
    /// Rendered in the normalized object frame.
    pub image: TemplateImage,
    pub templates: Vec<usize>,
}

/// The `k` template views closest in angle to `direction`, nearest first.
pub fn nearest_templates(graph: &ViewpointGraph, direction: &Vec3, k: usize) -> Vec<usize> {
    let d = direction.normalize();
    let mut order: Vec<(f64, usize)> = graph
        .directions
        .iter()
        .enumerate()
        .map(|(i, v)| (v.dot(&d).clamp(-1.0, 1.0).acos(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

const MAX_VIEW_ATTEMPTS: usize = 32;

/// Picks an object uniformly, renders it from a random viewpoint off the template grid under a
/// random light, and selects its nearest templates.
pub fn sample_training_view(
    objects: &[TrainingObject],
    cfg: &DataConfig,
    rng: &mut impl Rng,
) -> Result<TrainingView, TrainError> {
    if objects.is_empty() {
        return Err(TrainError::InsufficientData("no training objects".into()));
    }
    let k = CameraIntrinsics::template(cfg.resolution);
    for _ in 0..MAX_VIEW_ATTEMPTS {
        let object = rng.random_range(0..objects.len());
        let o = &objects[object];
        let jitter = if cfg.distance_jitter > 0.0 {
            rng.random_range(-cfg.distance_jitter..=cfg.distance_jitter)
        } else {
            0.0
        };
        let pose = random_view_pose(rng, o.set.graph.radius * (1.0 + jitter), cfg.max_roll_deg);
        let light = random_light(rng);
        let image = render_training_view(&o.model, &pose, &k, light)?;
        if image.foreground_count() == 0 {
            continue;
        }
        let templates = nearest_templates(&o.set.graph, &pose.camera_center(), cfg.templates_per_step);
        return Ok(TrainingView {
            object,
            image,
            templates,
        });
    }
    Err(TrainError::InsufficientData("could not render a non-empty training view".into()))
}

/// Normalized-frame point under each image patch centre; `None` on background.
pub fn image_patch_points(image: &TemplateImage) -> Vec<Option<Vec3>> {
    let cols = image.width as usize / PATCH;
    let rows = image.height as usize / PATCH;
    (0..rows * cols)
        .map(|i| {
            let (x, y) = patch_center_pixel(i, cols);
            image.lift_pixel(x as u32, y as u32)
        })
        .collect()
}

/// Normalized-frame point of each template token.
pub fn template_token_points(set: &TemplateSet, origins: &[TokenOrigin]) -> Vec<Option<Vec3>> {
    origins
        .iter()
        .map(|o| lift_patch_to_3d(&set.templates[o.template], o.patch))
        .collect()
}

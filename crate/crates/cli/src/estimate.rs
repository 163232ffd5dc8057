use std::path::{Path, PathBuf};

use anyhow::anyhow;
use posekit_core::backbone::read_stack;
use posekit_core::matcher::{crop_bilinear, crop_region, write_correspondences_jsonl, Image};
use posekit_core::metrics::{write_results_to, BopResult};
use posekit_core::pipeline::{fallback_pose, CropFeatures, StageTimings};
use posekit_core::{CameraIntrinsics, Pose, SceneImage};
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::{Failure, ResultExt};
use crate::inputs::{read_camera, read_detections, read_mask, read_nocs, read_rgb, write_json, write_rgb, ImageEntry};
use crate::options::{crop_stack_path, crop_stem, BackboneChoice, PipelineArgs, Prepared};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Detections JSON: a list of {bbox, score, object_id} for --image, or a list of image
    /// entries {scene_id, im_id, image, nocs, mask, camera, detections}.
    #[arg(long)]
    pub detections: PathBuf,
    /// Test image (RGB PNG) for a plain detection list.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// NOCS image of --image (oracle backbone).
    #[arg(long)]
    pub nocs: Option<PathBuf>,
    /// Mask image of --image (oracle backbone).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Camera intrinsics JSON {fx, fy, cx, cy, width, height}; image entries may override it.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// BOP scene id of --image.
    #[arg(long, default_value_t = 0)]
    pub scene_id: u32,
    /// BOP image id of --image.
    #[arg(long, default_value_t = 0)]
    pub im_id: u32,
    /// Directory of per-detection crop stacks `<image stem>_det<k>.pdsk` (imported backbone).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Write each detection crop as `<image stem>_det<k>.png` for descriptor export.
    #[arg(long)]
    pub save_crops: Option<PathBuf>,
    /// BOP results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-detection pose JSON with inliers, scores and status.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Directory for per-detection correspondence dumps (JSON lines).
    #[arg(long)]
    pub dump_correspondences: Option<PathBuf>,
    /// Record wall time in the CSV and pose JSON (otherwise -1 and omitted, so reruns are
    /// byte-identical).
    #[arg(long)]
    pub record_time: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// No pose could be estimated; the row carries the identity fallback.
    NoPose,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    pub detection: usize,
    pub bbox: [f64; 4],
    pub detection_score: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub pose: Pose,
    pub score: f64,
    pub inliers: usize,
    pub correspondences: usize,
    pub mean_reprojection_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary_template: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<StageTimings>,
}

#[derive(Serialize)]
struct PosesFile<'a> {
    estimates: &'a [EstimateRecord],
}

fn scene_for(entry: &ImageEntry, oracle: bool) -> Result<SceneImage, Failure> {
    let (width, height, rgb) = read_rgb(&entry.image)?;
    let (nocs, mask) = if oracle {
        let (Some(n), Some(m)) = (&entry.nocs, &entry.mask) else {
            return Err(Failure::usage(anyhow!(
                "the oracle backbone needs NOCS and mask images for {}",
                entry.image.display()
            )));
        };
        (Some(read_nocs(n, width, height)?), Some(read_mask(m, width, height)?))
    } else {
        (None, None)
    };
    Ok(SceneImage {
        width,
        height,
        rgb,
        nocs,
        mask,
    })
}

fn camera_for(entry: &ImageEntry, default: Option<&CameraIntrinsics>, scene: &SceneImage) -> Result<CameraIntrinsics, Failure> {
    let k = match (&entry.camera, default) {
        (Some(p), _) => read_camera(p)?,
        (None, Some(k)) => *k,
        (None, None) => {
            return Err(Failure::usage(anyhow!("no camera for {}; pass --camera", entry.image.display())));
        }
    };
    if k.width as usize != scene.width || k.height as usize != scene.height {
        return Err(Failure::usage(anyhow!(
            "camera is {}x{} but {} is {}x{}",
            k.width,
            k.height,
            entry.image.display(),
            scene.width,
            scene.height
        )));
    }
    Ok(k)
}

fn run_image(a: &Args, p: &Prepared, entry: &ImageEntry, default_k: Option<&CameraIntrinsics>) -> Result<Vec<EstimateRecord>, Failure> {
    if entry.detections.is_empty() {
        return Ok(Vec::new());
    }
    let scene = scene_for(entry, p.backbone == BackboneChoice::Oracle)?;
    let k = camera_for(entry, default_k, &scene)?;
    let mut out = Vec::with_capacity(entry.detections.len());
    for (i, det) in entry.detections.iter().enumerate() {
        let object = p
            .objects
            .get(&det.object_id.to_string())
            .ok_or_else(|| Failure::usage(anyhow!("no templates for object {}", det.object_id)))?;
        if let Some(dir) = &a.save_crops {
            let res = object.set.resolution as usize;
            let crop = crop_region(det.bbox, scene.width, scene.height, res, a.pipeline.padding).pipeline()?;
            let img = crop_bilinear(&Image::new(scene.width, scene.height, scene.rgb.clone()), &crop);
            write_rgb(&dir.join(format!("{}.png", crop_stem(&entry.image, i))), res, res, &img.data)?;
        }
        let stack = match (p.backbone, &a.features) {
            (BackboneChoice::Imported, Some(f)) => {
                let path = crop_stack_path(f, &entry.image, i);
                Some(read_stack(&path).usage_ctx(format!("cannot read crop stack {}", path.display()))?)
            }
            (BackboneChoice::Imported, None) => {
                return Err(Failure::usage(anyhow!("the imported backbone needs --features")));
            }
            _ => None,
        };
        let features = CropFeatures { stack: stack.as_ref() };
        let base = EstimateRecord {
            scene_id: entry.scene_id,
            im_id: entry.im_id,
            obj_id: det.object_id,
            detection: i,
            bbox: det.bbox,
            detection_score: det.score,
            status: Status::NoPose,
            message: None,
            pose: fallback_pose(),
            score: 0.0,
            inliers: 0,
            correspondences: 0,
            mean_reprojection_error: -1.0,
            primary_template: None,
            timings_ms: None,
        };
        let record = match p.estimator.estimate(object, &scene, &k, det.bbox, features) {
            Ok(r) => {
                if let Some(dir) = &a.dump_correspondences {
                    dump(dir, &entry.image, i, &r.correspondences)?;
                }
                EstimateRecord {
                    status: Status::Ok,
                    pose: r.estimate.pose,
                    score: r.estimate.score,
                    inliers: r.estimate.inlier_indices.len(),
                    correspondences: r.correspondences.len(),
                    mean_reprojection_error: r.estimate.mean_reprojection_error,
                    primary_template: Some(r.vote.primary),
                    timings_ms: a.record_time.then_some(r.timings),
                    ..base
                }
            }
            Err(e) if e.is_no_pose() => {
                log::warn!(
                    "{} detection {i} (object {}): {e}; reporting the default pose",
                    entry.image.display(),
                    det.object_id
                );
                EstimateRecord {
                    message: Some(e.to_string()),
                    ..base
                }
            }
            Err(e) => {
                return Err(Failure::pipeline(
                    anyhow::Error::from(e).context(format!("{} detection {i}", entry.image.display())),
                ))
            }
        };
        if let Some(t) = &record.timings_ms {
            log::info!(
                "{} detection {i}: crop {:.1} ms, descriptors {:.1} ms, matching {:.1} ms, pnp {:.1} ms",
                entry.image.display(),
                t.crop,
                t.descriptors,
                t.matching,
                t.pnp
            );
        }
        out.push(record);
    }
    Ok(out)
}

fn dump(dir: &Path, image: &Path, index: usize, corrs: &[posekit_core::Correspondence]) -> Result<(), Failure> {
    let path = dir.join(format!("{}.jsonl", crop_stem(image, index)));
    let mut buf = Vec::new();
    write_correspondences_jsonl(&mut buf, corrs).usage()?;
    std::fs::write(&path, buf).usage_ctx(format!("cannot write {}", path.display()))
}

fn bop_rows(records: &[EstimateRecord]) -> Vec<BopResult> {
    records
        .iter()
        .map(|r| BopResult {
            scene_id: r.scene_id,
            im_id: r.im_id,
            obj_id: r.obj_id,
            score: r.score,
            pose: r.pose,
            time: r
                .timings_ms
                .map_or(-1.0, |t| (t.crop + t.descriptors + t.matching + t.pnp) / 1e3),
        })
        .collect()
}

pub fn run(a: Args) -> Result<(), Failure> {
    let single = a.image.as_ref().map(|image| ImageEntry {
        scene_id: a.scene_id,
        im_id: a.im_id,
        image: image.clone(),
        nocs: a.nocs.clone(),
        mask: a.mask.clone(),
        camera: None,
        detections: Vec::new(),
    });
    let entries = read_detections(&a.detections, single)?;
    let default_k = a.camera.as_deref().map(read_camera).transpose()?;
    for dir in [&a.save_crops, &a.dump_correspondences].into_iter().flatten() {
        std::fs::create_dir_all(dir).usage_ctx(format!("cannot create {}", dir.display()))?;
    }
    let records: Vec<EstimateRecord> = if entries.iter().all(|e| e.detections.is_empty()) {
        Vec::new()
    } else {
        let prepared = a.pipeline.prepare()?;
        let per_image: Vec<Vec<EstimateRecord>> = entries
            .par_iter()
            .map(|e| run_image(&a, &prepared, e, default_k.as_ref()))
            .collect::<Result<_, _>>()?;
        per_image.into_iter().flatten().collect()
    };

    let mut csv = Vec::new();
    write_results_to(&mut csv, &bop_rows(&records)).usage()?;
    std::fs::write(&a.out, csv).usage_ctx(format!("cannot write {}", a.out.display()))?;
    if let Some(p) = &a.poses {
        write_json(p, &PosesFile { estimates: &records })?;
    }
    let ok = records.iter().filter(|r| matches!(r.status, Status::Ok)).count();
    println!("estimates {} (poses {ok}, defaults {})", records.len(), records.len() - ok);
    Ok(())
}

//! File formats shared by the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use image::{ImageBuffer, Luma, Rgb};
use posekit_core::render::load_template_set;
use posekit_core::{CameraIntrinsics, Pose, TemplateSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, ResultExt};

fn open(path: &Path) -> Result<image::DynamicImage, Failure> {
    image::open(path).usage_ctx(format!("cannot read image {}", path.display()))
}

/// 8-bit (or wider) RGB as `[0, 1]` floats.
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<[f32; 3]>), Failure> {
    let img = open(path)?.to_rgb32f();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0).collect()))
}

/// NOCS image, stored like the template NOCS maps (16-bit per channel).
pub fn read_nocs(path: &Path, width: usize, height: usize) -> Result<Vec<[f32; 3]>, Failure> {
    let img = open(path)?.to_rgb16();
    check_size(path, img.dimensions(), width, height)?;
    Ok(img.pixels().map(|p| p.0.map(|v| (f64::from(v) / 65535.0) as f32)).collect())
}

/// Foreground where the gray value is nonzero.
pub fn read_mask(path: &Path, width: usize, height: usize) -> Result<Vec<bool>, Failure> {
    let img = open(path)?.to_luma16();
    check_size(path, img.dimensions(), width, height)?;
    Ok(img.pixels().map(|p| p.0[0] > 0).collect())
}

/// 16-bit depth times `scale` meters per unit.
pub fn read_depth(path: &Path, scale: f64, width: usize, height: usize) -> Result<Vec<f32>, Failure> {
    let img = open(path)?.to_luma16();
    check_size(path, img.dimensions(), width, height)?;
    Ok(img.pixels().map(|p| (f64::from(p.0[0]) * scale) as f32).collect())
}

fn check_size(path: &Path, (w, h): (u32, u32), width: usize, height: usize) -> Result<(), Failure> {
    if w as usize != width || h as usize != height {
        return Err(Failure::usage(anyhow!(
            "{} is {w}x{h}, expected {width}x{height}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[[f32; 3]]) -> Result<(), Failure> {
    let data: Vec<u8> = rgb
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(width as u32, height as u32, data)
        .expect("buffer size")
        .save(path)
        .usage_ctx(format!("cannot write {}", path.display()))
}

pub fn write_nocs(path: &Path, width: usize, height: usize, nocs: &[[f32; 3]]) -> Result<(), Failure> {
    let data: Vec<u16> = nocs
        .iter()
        .flat_map(|c| c.map(|v| (f64::from(v.clamp(0.0, 1.0)) * 65535.0).round() as u16))
        .collect();
    ImageBuffer::<Rgb<u16>, _>::from_raw(width as u32, height as u32, data)
        .expect("buffer size")
        .save(path)
        .usage_ctx(format!("cannot write {}", path.display()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), Failure> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, data)
        .expect("buffer size")
        .save(path)
        .usage_ctx(format!("cannot write {}", path.display()))
}

pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f32], scale: f64) -> Result<(), Failure> {
    let data: Vec<u16> = depth
        .iter()
        .map(|&d| (f64::from(d) / scale).round().clamp(0.0, f64::from(u16::MAX)) as u16)
        .collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, data)
        .expect("buffer size")
        .save(path)
        .usage_ctx(format!("cannot write {}", path.display()))
}

pub fn read_camera(path: &Path) -> Result<CameraIntrinsics, Failure> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate().usage_ctx(format!("invalid camera in {}", path.display()))?;
    Ok(k)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).usage_ctx(format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).usage_ctx(format!("cannot parse {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).usage()?;
    text.push('\n');
    std::fs::write(path, text).usage_ctx(format!("cannot write {}", path.display()))
}

/// JSON or TOML, chosen by extension.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).usage_ctx(format!("cannot read config {}", path.display()))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(anyhow::Error::from),
        _ => serde_json::from_str(&text).map_err(anyhow::Error::from),
    };
    parsed.usage_ctx(format!("cannot parse config {}", path.display()))
}

/// A single template set (`dir/meta.json`) or one per subdirectory, keyed by object id.
pub fn load_templates(dir: &Path) -> Result<BTreeMap<String, (PathBuf, TemplateSet)>, Failure> {
    let read = |d: &Path| load_template_set(d).usage_ctx(format!("cannot load templates from {}", d.display()));
    let mut out = BTreeMap::new();
    if dir.join("meta.json").is_file() {
        let set = read(dir)?;
        out.insert(set.object_id.clone(), (dir.to_path_buf(), set));
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).usage_ctx(format!("cannot read template directory {}", dir.display()))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let set = read(&d)?;
        if out.contains_key(&set.object_id) {
            return Err(Failure::usage(anyhow!("object id {} appears twice under {}", set.object_id, dir.display())));
        }
        out.insert(set.object_id.clone(), (d, set));
    }
    if out.is_empty() {
        return Err(Failure::usage(anyhow!("no template set (meta.json) under {}", dir.display())));
    }
    Ok(out)
}

/// One detection from an external detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default = "one")]
    pub score: f64,
    pub object_id: u32,
}

fn one() -> f64 {
    1.0
}

/// An image with its detections. Paths are relative to the detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    #[serde(default)]
    pub scene_id: u32,
    #[serde(default)]
    pub im_id: u32,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nocs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DetectionsFile {
    Single(Vec<Detection>),
    Batch(Vec<ImageEntry>),
}

/// Reads either a plain detection list for `single` or a list of image entries.
pub fn read_detections(path: &Path, single: Option<ImageEntry>) -> Result<Vec<ImageEntry>, Failure> {
    let file: DetectionsFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    match (file, single) {
        (DetectionsFile::Single(d), Some(mut entry)) => {
            entry.detections = d;
            Ok(vec![entry])
        }
        (DetectionsFile::Single(d), None) if d.is_empty() => Ok(Vec::new()),
        (DetectionsFile::Single(_), None) => Err(Failure::usage(anyhow!(
            "{} lists bare detections; pass --image",
            path.display()
        ))),
        (DetectionsFile::Batch(entries), None) => Ok(entries
            .into_iter()
            .map(|mut e| {
                let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
                e.image = rel(e.image);
                e.nocs = e.nocs.map(rel);
                e.mask = e.mask.map(rel);
                e.camera = e.camera.map(rel);
                e
            })
            .collect()),
        (DetectionsFile::Batch(_), Some(_)) => Err(Failure::usage(anyhow!(
            "{} lists images itself; drop --image",
            path.display()
        ))),
    }
}

/// Ground-truth instance: original-frame pose in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub obj_id: u32,
    pub pose: Pose,
}

/// Ground truth of one image. `depth` is a 16-bit PNG, `depth_scale` meters per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtImage {
    pub scene_id: u32,
    pub im_id: u32,
    pub camera: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    pub instances: Vec<GtInstance>,
}

pub fn default_depth_scale() -> f64 {
    1e-4
}

/// Finds `obj_<id:06>.ply` or `.obj` in `dir`, plus an optional `obj_<id:06>.symmetries.json`.
pub fn find_model_files(dir: &Path, obj_id: u32) -> anyhow::Result<(PathBuf, Option<PathBuf>)> {
    let stem = format!("obj_{obj_id:06}");
    let mesh = ["ply", "obj"]
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
        .with_context(|| format!("no {stem}.ply or {stem}.obj in {}", dir.display()))?;
    let sym = dir.join(format!("{stem}.symmetries.json"));
    Ok((mesh, sym.is_file().then_some(sym)))
}

pub fn parse_bbox(s: &str) -> anyhow::Result<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bbox {s:?} is not four comma-separated numbers"))?;
    let Ok(b) = <[f64; 4]>::try_from(v) else {
        bail!("bbox {s:?} needs exactly four values x,y,w,h");
    };
    Ok(b)
}

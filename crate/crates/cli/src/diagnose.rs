use std::path::{Path, PathBuf};

use anyhow::anyhow;
use image::{Rgb, RgbImage};
use posekit_core::backbone::{patch_center_pixel, read_stack};
use posekit_core::matcher::{crop_bilinear, write_correspondences_jsonl, Image};
use posekit_core::pipeline::{Analysis, CropFeatures};
use posekit_core::render::PATCH_SIZE;
use posekit_core::{SceneImage, TemplateImage};
use serde::Serialize;

use crate::failure::{Failure, ResultExt};
use crate::inputs::{parse_bbox, read_mask, read_nocs, read_rgb, write_json};
use crate::options::{BackboneChoice, PipelineArgs};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Test image (RGB PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// NOCS image (oracle backbone).
    #[arg(long)]
    pub nocs: Option<PathBuf>,
    /// Mask image (oracle backbone).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Detection box `x,y,w,h` in pixels.
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    pub bbox: [f64; 4],
    /// Object to match; may be omitted when the template directory holds one object.
    #[arg(long)]
    pub object_id: Option<u32>,
    /// Crop descriptor stack (imported backbone).
    #[arg(long)]
    pub crop_features: Option<PathBuf>,
    /// Output directory for correspondences.jsonl, overlay.png, heatmap.png, votes.png and
    /// summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Serialize)]
struct Summary {
    object_id: String,
    primary_template: usize,
    votes: Vec<usize>,
    selected_templates: Vec<usize>,
    correspondences: usize,
    overlay_template: usize,
    /// Viewing direction of the primary template camera, object frame.
    primary_direction: [f64; 3],
    max_similarity: f32,
}

const BACKGROUND: Rgb<u8> = Rgb([40, 40, 40]);

fn to_rgb_image(w: usize, h: usize, rgb: &[[f32; 3]]) -> RgbImage {
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(rgb[y as usize * w + x as usize].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Blue → green → red ramp over `[0, 1]`.
fn ramp(t: f32) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        (0.0, 2.0 * t, 1.0 - 2.0 * t)
    } else {
        (2.0 * t - 1.0, 2.0 - 2.0 * t, 0.0)
    };
    Rgb([r, g, b].map(|v| (v * 255.0).round() as u8))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn outline(img: &mut RgbImage, x0: i64, y0: i64, size: i64, c: Rgb<u8>) {
    for d in 0..size {
        put(img, x0 + d, y0, c);
        put(img, x0 + d, y0 + size - 1, c);
        put(img, x0, y0 + d, c);
        put(img, x0 + size - 1, y0 + d, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Template shown next to the crop: the primary one when it has correspondences, otherwise
/// the selected template with the most.
fn overlay_template(a: &Analysis) -> usize {
    let count = |t: usize| a.correspondences.iter().filter(|c| c.template_index == t).count();
    if count(a.vote.primary) > 0 {
        return a.vote.primary;
    }
    a.selected
        .iter()
        .copied()
        .max_by(|&x, &y| count(x).cmp(&count(y)).then(y.cmp(&x)))
        .unwrap_or(a.vote.primary)
}

/// Crop on the left, template `index` on the right; matched patches outlined and joined,
/// coloured by confidence.
fn overlay(crop: &RgbImage, template: &TemplateImage, index: usize, a: &Analysis) -> RgbImage {
    let res = crop.width();
    let mut img = RgbImage::from_pixel(2 * res, res, BACKGROUND);
    image::imageops::replace(&mut img, crop, 0, 0);
    let t = to_rgb_image(template.width as usize, template.height as usize, &template.rgb);
    image::imageops::replace(&mut img, &t, i64::from(res), 0);
    let cols = a.grid.1;
    let tcols = (template.width / PATCH_SIZE) as usize;
    let p = i64::from(PATCH_SIZE);
    for c in a.correspondences.iter().rev().filter(|c| c.template_index == index) {
        let colour = ramp(c.confidence as f32);
        let (ix, iy) = patch_center_pixel(c.image_patch, cols);
        let (tx, ty) = patch_center_pixel(c.template_patch, tcols);
        let (ix, iy, tx, ty) = (ix as i64, iy as i64, tx as i64 + i64::from(res), ty as i64);
        outline(&mut img, ix - p / 2, iy - p / 2, p, colour);
        outline(&mut img, tx - p / 2, ty - p / 2, p, colour);
        line(&mut img, (ix, iy), (tx, ty), colour);
    }
    img
}

/// Crop blended with the per-patch similarity to the primary template.
fn heatmap(crop: &RgbImage, a: &Analysis) -> RgbImage {
    let cols = a.grid.1.max(1);
    let p = PATCH_SIZE;
    RgbImage::from_fn(crop.width(), crop.height(), |x, y| {
        let idx = (y / p) as usize * cols + (x / p) as usize;
        let base = crop.get_pixel(x, y).0;
        // Background tokens abstain and stay uncoloured.
        let Some(&s) = a.similarity.get(idx).filter(|&&s| s != 0.0 && ((x / p) as usize) < cols) else {
            return Rgb(base);
        };
        let c = ramp((s + 1.0) / 2.0).0;
        Rgb([0, 1, 2].map(|i| ((u16::from(base[i]) + u16::from(c[i]) * 2) / 3) as u8))
    })
}

/// One bar per template, tallest scaled to the plot height; the primary bar in red.
fn vote_histogram(counts: &[usize], primary: usize) -> RgbImage {
    const BAR: u32 = 6;
    const HEIGHT: u32 = 160;
    let n = counts.len().max(1) as u32;
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut img = RgbImage::from_pixel(n * BAR + 2, HEIGHT + 2, Rgb([255, 255, 255]));
    for (i, &c) in counts.iter().enumerate() {
        let h = (c as u64 * u64::from(HEIGHT) / max as u64) as u32;
        let colour = if i == primary { Rgb([200, 30, 30]) } else { Rgb([90, 90, 90]) };
        for x in 0..BAR - 1 {
            for y in 0..h {
                img.put_pixel(1 + i as u32 * BAR + x, HEIGHT - y, colour);
            }
        }
    }
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<(), Failure> {
    img.save(path).usage_ctx(format!("cannot write {}", path.display()))
}

pub fn run(a: Args) -> Result<(), Failure> {
    let prepared = a.pipeline.prepare()?;
    let id = match a.object_id {
        Some(id) => id.to_string(),
        None if prepared.objects.len() == 1 => prepared.objects.keys().next().cloned().expect("one object"),
        None => return Err(Failure::usage(anyhow!("several objects in the template directory; pass --object-id"))),
    };
    let object = prepared
        .objects
        .get(&id)
        .ok_or_else(|| Failure::usage(anyhow!("no templates for object {id}")))?;
    let (width, height, rgb) = read_rgb(&a.image)?;
    let (nocs, mask) = match (prepared.backbone, &a.nocs, &a.mask) {
        (BackboneChoice::Oracle, Some(n), Some(m)) => (Some(read_nocs(n, width, height)?), Some(read_mask(m, width, height)?)),
        (BackboneChoice::Oracle, _, _) => {
            return Err(Failure::usage(anyhow!("the oracle backbone needs --nocs and --mask")));
        }
        _ => (None, None),
    };
    let stack = match (prepared.backbone, &a.crop_features) {
        (BackboneChoice::Imported, Some(p)) => {
            Some(read_stack(p).usage_ctx(format!("cannot read crop stack {}", p.display()))?)
        }
        (BackboneChoice::Imported, None) => {
            return Err(Failure::usage(anyhow!("the imported backbone needs --crop-features")));
        }
        _ => None,
    };
    let scene = SceneImage {
        width,
        height,
        rgb,
        nocs,
        mask,
    };
    let analysis = prepared
        .estimator
        .analyze(object, &scene, a.bbox, CropFeatures { stack: stack.as_ref() })
        .pipeline()?;

    std::fs::create_dir_all(&a.out).usage_ctx(format!("cannot create {}", a.out.display()))?;
    let mut dump = Vec::new();
    write_correspondences_jsonl(&mut dump, &analysis.correspondences).usage()?;
    let dump_path = a.out.join("correspondences.jsonl");
    std::fs::write(&dump_path, dump).usage_ctx(format!("cannot write {}", dump_path.display()))?;

    let res = analysis.crop.resolution;
    let crop = crop_bilinear(&Image::new(scene.width, scene.height, scene.rgb.clone()), &analysis.crop);
    let crop = to_rgb_image(res, res, &crop.data);
    let primary = &object.set.templates[analysis.vote.primary];
    if analysis.correspondences.is_empty() {
        log::warn!("no correspondences survived matching; overlay.png shows the crop and primary template only");
    }
    let shown = overlay_template(&analysis);
    save(
        &overlay(&crop, &object.set.templates[shown], shown, &analysis),
        &a.out.join("overlay.png"),
    )?;
    save(&heatmap(&crop, &analysis), &a.out.join("heatmap.png"))?;
    save(&vote_histogram(&analysis.vote.counts, analysis.vote.primary), &a.out.join("votes.png"))?;

    let direction = primary.view_pose.inverse().rotation.column(2).into_owned();
    let summary = Summary {
        object_id: id,
        primary_template: analysis.vote.primary,
        votes: analysis.vote.counts.clone(),
        selected_templates: analysis.selected.clone(),
        correspondences: analysis.correspondences.len(),
        overlay_template: shown,
        primary_direction: [direction.x, direction.y, direction.z],
        max_similarity: analysis.similarity.iter().copied().fold(-1.0, f32::max),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "primary template {} ({} votes), {} correspondences",
        summary.primary_template, summary.votes[summary.primary_template], summary.correspondences
    );
    Ok(())
}

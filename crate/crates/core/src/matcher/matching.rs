use rayon::prelude::*;

use crate::autodiff::kernels::gemm_nt;
use crate::autodiff::Tensor;
use crate::backbone::{patch_center, patch_center_pixel, PATCH};
use crate::geometry::Vec3;
use crate::net::TokenOrigin;
use crate::render::{TemplateImage, TemplateSet};

use super::{CropTransform, Correspondence, MatchError, MatcherConfig};

/// Rows of `a` scaled to unit length; zero rows stay zero.
fn unit_rows(a: &Tensor<f32>) -> Tensor<f32> {
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

fn is_zero_row(t: &Tensor<f32>, r: usize) -> bool {
    t.row(r).iter().all(|&v| v == 0.0)
}

/// Outcome of template voting.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub primary: usize,
    /// Votes per template.
    pub counts: Vec<usize>,
}

/// Each image token votes for the template owning its most similar template token (cosine);
/// the template with most votes wins, ties to the lower index. All-zero image tokens abstain.
pub fn vote_primary_template(
    image: &Tensor<f32>,
    templates: &Tensor<f32>,
    origins: &[TokenOrigin],
    n_templates: usize,
) -> Result<Vote, MatchError> {
    if templates.rows == 0 {
        return Err(MatchError::NoForegroundTokens);
    }
    if origins.len() != templates.rows || image.cols != templates.cols {
        return Err(MatchError::Dimension(format!(
            "{} origins for {} template tokens; widths {} and {}",
            origins.len(),
            templates.rows,
            image.cols,
            templates.cols
        )));
    }
    let t = unit_rows(templates);
    let voters: Vec<usize> = (0..image.rows).filter(|&r| !is_zero_row(image, r)).collect();
    let (m, d) = (t.rows, t.cols);
    const BLOCK: usize = 32;
    let winners: Vec<usize> = voters
        .par_chunks(BLOCK)
        .flat_map_iter(|rows| {
            let q = image.select_rows(rows);
            let mut s = vec![0.0f32; rows.len() * m];
            gemm_nt(&q.data, &t.data, &mut s, rows.len(), d, m);
            (0..rows.len())
                .map(|i| {
                    let row = &s[i * m..(i + 1) * m];
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    origins[best].template
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut counts = vec![0usize; n_templates];
    for w in winners {
        if w >= n_templates {
            return Err(MatchError::Dimension(format!("token origin names template {w} of {n_templates}")));
        }
        counts[w] += 1;
    }
    let mut primary = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[primary] {
            primary = i;
        }
    }
    Ok(Vote { primary, counts })
}

/// A mutual match between row `a` of one token set and row `b` of another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub confidence: f64,
}

/// Dual-softmax mutual nearest neighbours. With cosine similarities `S`, the confidence is
/// `softmax_j(S_i·/T)_j · softmax_i(S_·j/T)_i`; pairs that are mutual argmaxes of the confidence
/// and reach `threshold` are kept. All-zero rows on either side never match.
pub fn dual_softmax_match(a: &Tensor<f32>, b: &Tensor<f32>, temperature: f64, threshold: f64) -> Vec<Match> {
    let (n, m, d) = (a.rows, b.rows, a.cols);
    assert_eq!(d, b.cols, "token widths differ");
    let live_a: Vec<usize> = (0..n).filter(|&r| !is_zero_row(a, r)).collect();
    let live_b: Vec<usize> = (0..m).filter(|&r| !is_zero_row(b, r)).collect();
    let (n, m) = (live_a.len(), live_b.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let (aa, bb) = (a.select_rows(&live_a), b.select_rows(&live_b));
    let mut s32 = vec![0.0f32; n * m];
    gemm_nt(&aa.data, &bb.data, &mut s32, n, d, m);
    let s: Vec<f64> = s32.iter().map(|&v| v as f64 / temperature).collect();

    let mut row_max = vec![f64::NEG_INFINITY; n];
    let mut col_max = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            let v = s[i * m + j];
            row_max[i] = row_max[i].max(v);
            col_max[j] = col_max[j].max(v);
        }
    }
    let mut row_sum = vec![0.0; n];
    let mut col_sum = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let v = s[i * m + j];
            row_sum[i] += (v - row_max[i]).exp();
            col_sum[j] += (v - col_max[j]).exp();
        }
    }
    let mut conf = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let v = s[i * m + j];
            conf[i * m + j] = (v - row_max[i]).exp() / row_sum[i] * ((v - col_max[j]).exp() / col_sum[j]);
        }
    }
    let mut col_best = vec![0usize; m];
    for j in 0..m {
        for i in 1..n {
            if conf[i * m + j] > conf[col_best[j] * m + j] {
                col_best[j] = i;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let row = &conf[i * m..(i + 1) * m];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if col_best[best] == i && row[best] >= threshold {
            out.push(Match {
                a: live_a[i],
                b: live_b[best],
                confidence: row[best],
            });
        }
    }
    out
}

/// Normalized-frame object point under a template patch: the center pixel if it is foreground,
/// else the foreground pixel of the patch nearest to it; `None` for an all-background patch.
pub fn lift_patch_to_3d(template: &TemplateImage, patch: usize) -> Option<Vec3> {
    let cols = template.width as usize / PATCH;
    let (cx, cy) = patch_center_pixel(patch, cols);
    if cy >= template.height as usize {
        return None;
    }
    if let Some(p) = template.lift_pixel(cx as u32, cy as u32) {
        return Some(p);
    }
    let (x0, y0) = ((patch % cols) * PATCH, (patch / cols) * PATCH);
    let mut best: Option<(usize, usize, usize)> = None;
    for y in y0..y0 + PATCH {
        for x in x0..x0 + PATCH {
            if template.mask[template.index(x as u32, y as u32)] {
                let d2 = x.abs_diff(cx).pow(2) + y.abs_diff(cy).pow(2);
                if best.is_none_or(|b| d2 < b.0) {
                    best = Some((d2, x, y));
                }
            }
        }
    }
    best.and_then(|(_, x, y)| template.lift_pixel(x as u32, y as u32))
}

/// Descriptors of one decoder layer: the image grid tokens and the template tokens with their
/// origins.
#[derive(Debug, Clone, Copy)]
pub struct LayerTokens<'a> {
    /// 1-based decoder layer.
    pub layer: usize,
    pub image: &'a Tensor<f32>,
    pub templates: &'a Tensor<f32>,
    pub origins: &'a [TokenOrigin],
}

/// Deduplicates candidates: for each image patch keep the most confident candidate and drop
/// any other within `merge_distance` of a kept one. Output is sorted by descending confidence.
pub fn merge_correspondences(mut cands: Vec<Correspondence>, merge_distance: f64) -> Vec<Correspondence> {
    let key = |c: &Correspondence| (c.image_patch, c.layer, c.template_index, c.template_patch);
    cands.sort_by(|a, b| {
        a.image_patch
            .cmp(&b.image_patch)
            .then(b.confidence.total_cmp(&a.confidence))
            .then(key(a).cmp(&key(b)))
    });
    let mut kept: Vec<Correspondence> = Vec::new();
    let mut group_start = 0;
    for c in cands {
        if kept.get(group_start).is_some_and(|k| k.image_patch != c.image_patch) {
            group_start = kept.len();
        }
        let p = Vec3::from(c.point_normalized);
        let dup = kept[group_start..]
            .iter()
            .any(|k| (Vec3::from(k.point_normalized) - p).norm() < merge_distance);
        if !dup {
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(key(a).cmp(&key(b))));
    kept
}

/// Matches the image against each selected template independently on every given layer, lifts
/// the template side to 3D, maps image patches back to original pixels and merges duplicates.
pub fn gather_correspondences(
    layers: &[LayerTokens<'_>],
    selected: &[usize],
    image_cols: usize,
    crop: &CropTransform,
    set: &TemplateSet,
    cfg: &MatcherConfig,
) -> Result<Vec<Correspondence>, MatchError> {
    let jobs: Vec<(LayerTokens<'_>, usize)> =
        layers.iter().flat_map(|l| selected.iter().map(move |&t| (*l, t))).collect();
    let per_job: Vec<Vec<Correspondence>> = jobs
        .par_iter()
        .map(|(l, t)| {
            let rows: Vec<usize> = (0..l.origins.len()).filter(|&i| l.origins[i].template == *t).collect();
            if rows.is_empty() {
                return Vec::new();
            }
            let sub = l.templates.select_rows(&rows);
            let template = &set.templates[*t];
            dual_softmax_match(l.image, &sub, cfg.temperature, cfg.threshold)
                .into_iter()
                .filter_map(|m| {
                    let tpatch = l.origins[rows[m.b]].patch;
                    let pn = lift_patch_to_3d(template, tpatch)?;
                    let (u, v) = patch_center(m.a, image_cols);
                    let po = set.normalization.invert(&pn);
                    Some(Correspondence {
                        pixel: crop.to_original([u, v]),
                        point_normalized: pn.into(),
                        point: po.into(),
                        confidence: m.confidence,
                        template_index: *t,
                        layer: l.layer,
                        image_patch: m.a,
                        template_patch: tpatch,
                    })
                })
                .collect()
        })
        .collect();
    let merged = merge_correspondences(per_job.into_iter().flatten().collect(), cfg.merge_distance);
    if merged.len() < cfg.min_correspondences {
        return Err(MatchError::TooFewCorrespondences(merged.len()));
    }
    Ok(merged)
}

#[cfg(test)]
mod tests;

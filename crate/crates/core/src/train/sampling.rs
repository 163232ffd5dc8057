use rand::seq::index;
use rand::Rng;

use crate::autodiff::NceIndex;
use crate::geometry::Vec3;

use super::TrainError;

/// Which side supplies the anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Template anchors, image candidates (first loss term).
    TemplateToImage,
    /// Image anchors, template candidates (second loss term).
    ImageToTemplate,
}

/// Anchors with one positive and `negatives_per_anchor` negatives each. Anchor indices refer
/// to the anchor side, positives and negatives to the candidate side.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBatch {
    pub direction: Direction,
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    /// `anchors.len() × negatives_per_anchor`, row-major.
    pub negatives: Vec<usize>,
    pub negatives_per_anchor: usize,
}

impl AnchorBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn nce_index(&self) -> NceIndex {
        NceIndex {
            anchors: self.anchors.clone(),
            positives: self.positives.clone(),
            negatives: self.negatives.clone(),
            negatives_per_anchor: self.negatives_per_anchor,
        }
    }

    pub fn negatives_of(&self, i: usize) -> &[usize] {
        let m = self.negatives_per_anchor;
        &self.negatives[i * m..(i + 1) * m]
    }
}

/// Per image patch, the template tokens whose points lie within `epsilon` of the patch's
/// point, ascending. Background patches and unlifted tokens get no positives.
pub fn ground_truth_positives(
    image_points: &[Option<Vec3>],
    template_points: &[Option<Vec3>],
    epsilon: f64,
) -> Vec<Vec<usize>> {
    let eps2 = epsilon * epsilon;
    image_points
        .iter()
        .map(|p| match p {
            None => Vec::new(),
            Some(p) => template_points
                .iter()
                .enumerate()
                .filter_map(|(j, t)| t.filter(|t| (t - p).norm_squared() <= eps2).map(|_| j))
                .collect(),
        })
        .collect()
}

/// Per template token, the nearest image patch within `epsilon`, ties to the lower index.
pub fn nearest_positive(
    template_points: &[Option<Vec3>],
    image_points: &[Option<Vec3>],
    epsilon: f64,
) -> Vec<Option<usize>> {
    let eps2 = epsilon * epsilon;
    template_points
        .iter()
        .map(|t| {
            let t = (*t)?;
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in image_points.iter().enumerate() {
                if let Some(p) = p {
                    let d = (p - t).norm_squared();
                    if d <= eps2 && best.is_none_or(|b| d < b.0) {
                        best = Some((d, i));
                    }
                }
            }
            best.map(|b| b.1)
        })
        .collect()
}

/// `m` distinct values drawn uniformly from `0..pool` minus the ascending `excluded` set.
fn sample_excluding(rng: &mut impl Rng, pool: usize, excluded: &[usize], m: usize) -> Vec<usize> {
    index::sample(rng, pool - excluded.len(), m)
        .into_iter()
        .map(|r| {
            let mut x = r;
            for &e in excluded {
                if e <= x {
                    x += 1;
                } else {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Draws `n` anchors for one direction.
///
/// `image_positives[i]` lists the template tokens corresponding to image patch `i`;
/// `template_positive[j]` is the image patch matched to template token `j`. Direction
/// [`Direction::TemplateToImage`] takes anchors among matched template tokens, their single
/// image positive, and negatives uniformly from the other image patches. Direction
/// [`Direction::ImageToTemplate`] takes anchors among image patches with positives, one
/// positive uniformly from the set, and negatives uniformly from the remaining template tokens.
pub fn sample_batch(
    direction: Direction,
    image_positives: &[Vec<usize>],
    template_positive: &[Option<usize>],
    n: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<AnchorBatch, TrainError> {
    let image_count = image_positives.len();
    let template_count = template_positive.len();
    let usable: Vec<usize> = match direction {
        Direction::TemplateToImage => (0..template_count).filter(|&j| template_positive[j].is_some()).collect(),
        Direction::ImageToTemplate => (0..image_count).filter(|&i| !image_positives[i].is_empty()).collect(),
    };
    if usable.len() < n || n == 0 {
        return Err(TrainError::InsufficientData(format!(
            "{} usable anchors, {n} requested",
            usable.len()
        )));
    }
    let chosen: Vec<usize> = index::sample(rng, usable.len(), n).into_iter().map(|k| usable[k]).collect();
    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n * m);
    for &a in &chosen {
        match direction {
            Direction::TemplateToImage => {
                let p = template_positive[a].expect("usable anchor");
                if m + 1 > image_count {
                    return Err(TrainError::InsufficientData(format!(
                        "{m} negatives requested from {} image patches",
                        image_count - 1
                    )));
                }
                positives.push(p);
                negatives.extend(sample_excluding(rng, image_count, &[p], m));
            }
            Direction::ImageToTemplate => {
                let set = &image_positives[a];
                if m + set.len() > template_count {
                    return Err(TrainError::InsufficientData(format!(
                        "{m} negatives requested from {} template tokens",
                        template_count - set.len()
                    )));
                }
                positives.push(set[rng.random_range(0..set.len())]);
                negatives.extend(sample_excluding(rng, template_count, set, m));
            }
        }
    }
    Ok(AnchorBatch {
        direction,
        anchors: chosen,
        positives,
        negatives,
        negatives_per_anchor: m,
    })
}

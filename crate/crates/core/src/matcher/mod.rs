//! From descriptors to 2D–3D correspondences: crops, template voting, dual-softmax mutual
//! matching and lifting template patches to object points.

mod crop;
mod matching;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crop::{crop_bilinear, crop_nearest, crop_region, CropTransform, Image};
pub use matching::{
    dual_softmax_match, gather_correspondences, lift_patch_to_3d, merge_correspondences, vote_primary_template,
    LayerTokens, Match, Vote,
};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("bounding box has zero area")]
    EmptyBox,
    #[error("no foreground template tokens to match against")]
    NoForegroundTokens,
    #[error("only {0} correspondences survived filtering, at least 4 are needed")]
    TooFewCorrespondences(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Dual-softmax temperature.
    pub temperature: f64,
    /// Minimum dual-softmax confidence.
    pub threshold: f64,
    /// Crop side relative to the longer bounding-box side.
    pub padding: f64,
    /// Two candidates for one image patch closer than this (normalized units) are duplicates.
    pub merge_distance: f64,
    /// Minimum number of surviving correspondences.
    pub min_correspondences: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            threshold: 0.2,
            padding: 1.2,
            merge_distance: 0.02,
            min_correspondences: 4,
        }
    }
}

/// One 2D–3D correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Pixel in original test-image coordinates.
    pub pixel: [f64; 2],
    /// Object point in the normalized frame.
    #[serde(rename = "point3d")]
    pub point_normalized: [f64; 3],
    /// Object point in the original (metric) frame.
    #[serde(rename = "point3d_original")]
    pub point: [f64; 3],
    pub confidence: f64,
    pub template_index: usize,
    /// Decoder layer, 1-based.
    pub layer: usize,
    pub image_patch: usize,
    pub template_patch: usize,
}

/// Writes one JSON object per line.
pub fn write_correspondences_jsonl(w: &mut impl Write, corrs: &[Correspondence]) -> Result<(), MatchError> {
    for c in corrs {
        serde_json::to_writer(&mut *w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_correspondences_jsonl(text: &str) -> Result<Vec<Correspondence>, MatchError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(MatchError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let c = Correspondence {
            pixel: [10.5, 20.25],
            point_normalized: [0.1, -0.2, 0.3],
            point: [0.01, -0.02, 0.03],
            confidence: 0.75,
            template_index: 3,
            layer: 2,
            image_patch: 17,
            template_patch: 40,
        };
        let mut buf = Vec::new();
        write_correspondences_jsonl(&mut buf, &[c.clone(), c.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"pixel\":[10.5,20.25],\"point3d\":[0.1,-0.2,0.3]"));
        assert_eq!(read_correspondences_jsonl(&text).unwrap(), vec![c.clone(), c]);
    }
}

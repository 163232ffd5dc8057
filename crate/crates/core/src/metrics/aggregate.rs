use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Shared grid: MSSD thresholds and VSD tolerances as fractions of the diameter, VSD error
/// thresholds, and MSPD thresholds in units of 100 px at 640 px width.
pub const THRESHOLD_FRACTIONS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];

pub const AP_PROTOCOL: &str = "simplified: greedy score-ordered matching, 11-point interpolated precision";

/// JSON writes non-finite numbers as `null`; read them back as infinite errors.
fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Errors of one ground-truth instance's estimate. Missing estimates use infinite errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateErrors {
    /// VSD error at each tolerance in `THRESHOLD_FRACTIONS × diameter`.
    pub vsd: Vec<f64>,
    /// Meters.
    #[serde(deserialize_with = "null_as_infinity")]
    pub mssd: f64,
    /// Pixels.
    #[serde(deserialize_with = "null_as_infinity")]
    pub mspd: f64,
    pub diameter: f64,
    pub image_width: u32,
}

impl EstimateErrors {
    pub fn missing(diameter: f64, image_width: u32) -> Self {
        Self {
            vsd: vec![1.0; THRESHOLD_FRACTIONS.len()],
            mssd: f64::INFINITY,
            mspd: f64::INFINITY,
            diameter,
            image_width,
        }
    }

    fn mspd_threshold(&self, fraction: f64) -> f64 {
        fraction * 100.0 * f64::from(self.image_width) / 640.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecall {
    /// VSD misalignment tolerance (fraction of diameter); absent for MSSD/MSPD.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArReport {
    pub count: usize,
    pub ar_vsd: f64,
    pub ar_mssd: f64,
    pub ar_mspd: f64,
    pub ar: f64,
    pub vsd_recalls: Vec<ThresholdRecall>,
    pub mssd_recalls: Vec<ThresholdRecall>,
    pub mspd_recalls: Vec<ThresholdRecall>,
}

fn recall(errors: &[EstimateErrors], pass: impl Fn(&EstimateErrors) -> bool) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| pass(e)).count() as f64 / errors.len() as f64
}

fn mean(xs: &[ThresholdRecall]) -> f64 {
    xs.iter().map(|r| r.value).sum::<f64>() / xs.len() as f64
}

/// Average recall over one entry per ground-truth instance. An empty set scores 0.
pub fn aggregate_ar(errors: &[EstimateErrors]) -> ArReport {
    let mssd_recalls: Vec<ThresholdRecall> = THRESHOLD_FRACTIONS
        .iter()
        .map(|&f| ThresholdRecall {
            tau: None,
            threshold: f,
            value: recall(errors, |e| e.mssd < f * e.diameter),
        })
        .collect();
    let mspd_recalls: Vec<ThresholdRecall> = THRESHOLD_FRACTIONS
        .iter()
        .map(|&f| ThresholdRecall {
            tau: None,
            threshold: f * 100.0,
            value: recall(errors, |e| e.mspd < e.mspd_threshold(f)),
        })
        .collect();
    let vsd_recalls: Vec<ThresholdRecall> = THRESHOLD_FRACTIONS
        .iter()
        .enumerate()
        .flat_map(|(ti, &tau)| {
            THRESHOLD_FRACTIONS.iter().map(move |&theta| ThresholdRecall {
                tau: Some(tau),
                threshold: theta,
                value: recall(errors, |e| e.vsd.get(ti).is_some_and(|&v| v < theta)),
            })
        })
        .collect();
    let (ar_vsd, ar_mssd, ar_mspd) = (mean(&vsd_recalls), mean(&mssd_recalls), mean(&mspd_recalls));
    ArReport {
        count: errors.len(),
        ar_vsd,
        ar_mssd,
        ar_mspd,
        ar: (ar_vsd + ar_mspd + ar_mssd) / 3.0,
        vsd_recalls,
        mssd_recalls,
        mspd_recalls,
    }
}

/// A scored estimate with its errors against every ground-truth instance of the same
/// `(scene, image, object)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEstimate {
    pub group: [u32; 3],
    pub score: f64,
    /// `(mssd, mspd)` per ground-truth instance of the group.
    pub gt_errors: Vec<(f64, f64)>,
    pub diameter: f64,
    pub image_width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub protocol: String,
    pub ap_mssd: f64,
    pub ap_mspd: f64,
    pub ap: f64,
    pub mssd_precisions: Vec<ThresholdRecall>,
    pub mspd_precisions: Vec<ThresholdRecall>,
}

fn interpolated_ap(tp: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        points.push((hits as f64 / total_gt as f64, hits as f64 / (i + 1) as f64));
    }
    (0..=10)
        .map(|r| {
            let r = f64::from(r) / 10.0;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Greedy matching in descending score order: each estimate takes the unmatched ground truth
/// of its group with the smallest error below threshold.
fn true_positives(order: &[usize], estimates: &[ApEstimate], error: impl Fn(&ApEstimate, usize) -> Option<f64>) -> Vec<bool> {
    let mut taken: BTreeSet<([u32; 3], usize)> = BTreeSet::new();
    order
        .iter()
        .map(|&i| {
            let e = &estimates[i];
            let pick = (0..e.gt_errors.len())
                .filter(|&g| !taken.contains(&(e.group, g)))
                .filter_map(|g| error(e, g).map(|v| (v, g)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match pick {
                Some((_, g)) => {
                    taken.insert((e.group, g));
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Simplified average precision; `gt_counts` holds the number of ground-truth instances per group.
pub fn aggregate_ap(estimates: &[ApEstimate], gt_counts: &BTreeMap<[u32; 3], usize>) -> ApReport {
    let total_gt: usize = gt_counts.values().sum();
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| estimates[b].score.total_cmp(&estimates[a].score).then(a.cmp(&b)));
    let per_threshold = |metric: usize| -> Vec<ThresholdRecall> {
        THRESHOLD_FRACTIONS
            .iter()
            .map(|&f| {
                let tp = true_positives(&order, estimates, |e, g| {
                    let (v, th) = if metric == 0 {
                        (e.gt_errors[g].0, f * e.diameter)
                    } else {
                        (e.gt_errors[g].1, f * 100.0 * f64::from(e.image_width) / 640.0)
                    };
                    (v < th).then_some(v)
                });
                ThresholdRecall {
                    tau: None,
                    threshold: if metric == 0 { f } else { f * 100.0 },
                    value: interpolated_ap(&tp, total_gt),
                }
            })
            .collect()
    };
    let mssd_precisions = per_threshold(0);
    let mspd_precisions = per_threshold(1);
    let (ap_mssd, ap_mspd) = (mean(&mssd_precisions), mean(&mspd_precisions));
    ApReport {
        protocol: AP_PROTOCOL.to_string(),
        ap_mssd,
        ap_mspd,
        ap: (ap_mspd + ap_mssd) / 2.0,
        mssd_precisions,
        mspd_precisions,
    }
}

/// Evaluation report written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub recall: ArReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<ApReport>,
    pub per_estimate: Vec<EstimateErrors>,
}

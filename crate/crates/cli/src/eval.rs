use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::anyhow;
use posekit_core::geometry::{load_mesh, load_symmetries};
use posekit_core::metrics::{
    aggregate_ap, aggregate_ar, e_mspd, e_mssd, e_vsd, read_results, ApEstimate, ApReport, ArReport, EstimateErrors,
    THRESHOLD_FRACTIONS, VSD_DELTA,
};
use posekit_core::{BopResult, ObjectModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::{Failure, ResultExt};
use crate::inputs::{find_model_files, read_depth, read_json, write_json, GtImage};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// BOP results CSV.
    #[arg(long)]
    pub results: PathBuf,
    /// Ground-truth JSON: a list of {scene_id, im_id, camera, depth?, depth_scale?, instances}.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory with obj_NNNNNN.ply (or .obj) and optional obj_NNNNNN.symmetries.json.
    #[arg(long)]
    pub models: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-estimate error dump (JSON lines).
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ObjectReport {
    pub recall: ArReport,
    pub precision: ApReport,
}

#[derive(Debug, Serialize)]
pub struct MeanReport {
    pub ar_vsd: f64,
    pub ar_mssd: f64,
    pub ar_mspd: f64,
    pub ar: f64,
    pub ap: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub objects: BTreeMap<u32, ObjectReport>,
    /// Unweighted mean over objects.
    pub mean: MeanReport,
    /// Pooled over all ground-truth instances.
    pub overall: ObjectReport,
}

/// Errors of one ground-truth instance, as dumped with `--errors`.
#[derive(Debug, Serialize)]
struct ErrorRow {
    scene_id: u32,
    im_id: u32,
    obj_id: u32,
    gt_index: usize,
    /// Row of the assigned estimate in the results file.
    estimate: Option<usize>,
    #[serde(flatten)]
    errors: EstimateErrors,
}

type Group = [u32; 3];

struct Evaluated {
    rows: Vec<ErrorRow>,
    ap: Vec<(u32, ApEstimate)>,
}

fn evaluate_image(
    gt: &GtImage,
    estimates: &BTreeMap<Group, Vec<(usize, &BopResult)>>,
    models: &BTreeMap<u32, ObjectModel>,
    base: &std::path::Path,
) -> Result<Evaluated, Failure> {
    let k = gt.camera;
    k.validate().usage_ctx(format!("invalid camera for scene {} image {}", gt.scene_id, gt.im_id))?;
    let (w, h) = (k.width as usize, k.height as usize);
    // Without a depth image every rendered pixel counts as visible.
    let scene_depth = match &gt.depth {
        Some(p) => {
            let p = if p.is_absolute() { p.clone() } else { base.join(p) };
            read_depth(&p, gt.depth_scale, w, h)?
        }
        None => vec![0.0; w * h],
    };
    let mut by_obj: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, inst) in gt.instances.iter().enumerate() {
        by_obj.entry(inst.obj_id).or_default().push(i);
    }
    let mut out = Evaluated {
        rows: Vec::new(),
        ap: Vec::new(),
    };
    for (&obj, gts) in &by_obj {
        let model = &models[&obj];
        let group = [gt.scene_id, gt.im_id, obj];
        let mut ests: Vec<(usize, &BopResult)> = estimates.get(&group).cloned().unwrap_or_default();
        ests.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        let pair_errors: Vec<Vec<(f64, f64)>> = ests
            .iter()
            .map(|(_, e)| {
                gts.iter()
                    .map(|&g| {
                        let gp = &gt.instances[g].pose;
                        let mspd = e_mspd(&e.pose, gp, model, &k).unwrap_or(f64::INFINITY);
                        (e_mssd(&e.pose, gp, model), mspd)
                    })
                    .collect()
            })
            .collect();
        // Score order; each estimate takes the free instance with the lowest MSSD.
        let mut assigned: Vec<Option<usize>> = vec![None; gts.len()];
        for (ei, errs) in pair_errors.iter().enumerate() {
            let pick = (0..gts.len())
                .filter(|&g| assigned[g].is_none())
                .min_by(|&a, &b| errs[a].0.total_cmp(&errs[b].0).then(a.cmp(&b)));
            if let Some(g) = pick {
                assigned[g] = Some(ei);
            }
        }
        for (gi, &g) in gts.iter().enumerate() {
            let errors = match assigned[gi] {
                Some(ei) => {
                    let e = ests[ei].1;
                    let taus: Vec<f64> = THRESHOLD_FRACTIONS.iter().map(|f| f * model.diameter).collect();
                    let vsd = e_vsd(&e.pose, &gt.instances[g].pose, model, &k, &scene_depth, &taus, VSD_DELTA)
                        .pipeline()?;
                    EstimateErrors {
                        vsd: vsd.errors,
                        mssd: pair_errors[ei][gi].0,
                        mspd: pair_errors[ei][gi].1,
                        diameter: model.diameter,
                        image_width: k.width,
                    }
                }
                None => EstimateErrors::missing(model.diameter, k.width),
            };
            out.rows.push(ErrorRow {
                scene_id: gt.scene_id,
                im_id: gt.im_id,
                obj_id: obj,
                gt_index: g,
                estimate: assigned[gi].map(|ei| ests[ei].0),
                errors,
            });
        }
        for (ei, (_, e)) in ests.iter().enumerate() {
            out.ap.push((
                obj,
                ApEstimate {
                    group,
                    score: e.score,
                    gt_errors: pair_errors[ei].clone(),
                    diameter: model.diameter,
                    image_width: k.width,
                },
            ));
        }
    }
    Ok(out)
}

fn report(errors: &[EstimateErrors], ap: &[ApEstimate], gt_counts: &BTreeMap<Group, usize>) -> ObjectReport {
    ObjectReport {
        recall: aggregate_ar(errors),
        precision: aggregate_ap(ap, gt_counts),
    }
}

pub fn table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>8} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}", "object", "gt", "AR_VSD", "AR_MSSD", "AR_MSPD", "AR", "AP");
    for (id, o) in &r.objects {
        let a = &o.recall;
        let _ = writeln!(
            s,
            "{id:>8} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            a.count, a.ar_vsd, a.ar_mssd, a.ar_mspd, a.ar, o.precision.ap
        );
    }
    let m = &r.mean;
    let _ = writeln!(
        s,
        "{:>8} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
        "mean", r.overall.recall.count, m.ar_vsd, m.ar_mssd, m.ar_mspd, m.ar, m.ap
    );
    s
}

pub fn run(a: Args) -> Result<(), Failure> {
    let results = read_results(&a.results).usage_ctx(format!("cannot read results {}", a.results.display()))?;
    let gt: Vec<GtImage> = read_json(&a.gt)?;
    let base = a.gt.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();

    let mut models = BTreeMap::new();
    for id in gt.iter().flat_map(|g| g.instances.iter().map(|i| i.obj_id)) {
        if models.contains_key(&id) {
            continue;
        }
        let (mesh, sym) = find_model_files(&a.models, id).usage()?;
        let mesh = load_mesh(&mesh).usage_ctx(format!("cannot load {}", mesh.display()))?;
        let syms = match sym {
            Some(p) => load_symmetries(&p).usage_ctx(format!("cannot load {}", p.display()))?,
            None => Vec::new(),
        };
        models.insert(id, ObjectModel::from_mesh(&mesh, syms).pipeline()?);
    }

    let mut estimates: BTreeMap<Group, Vec<(usize, &BopResult)>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        estimates.entry([r.scene_id, r.im_id, r.obj_id]).or_default().push((i, r));
    }
    let known: std::collections::BTreeSet<[u32; 2]> = gt.iter().map(|g| [g.scene_id, g.im_id]).collect();
    let stray = results.iter().filter(|r| !known.contains(&[r.scene_id, r.im_id])).count();
    if stray > 0 {
        log::warn!("{stray} estimates refer to images without ground truth; they are ignored");
    }

    let evaluated: Vec<Evaluated> = gt
        .par_iter()
        .map(|g| evaluate_image(g, &estimates, &models, &base))
        .collect::<Result<_, _>>()?;

    let mut gt_counts: BTreeMap<Group, usize> = BTreeMap::new();
    for g in &gt {
        for inst in &g.instances {
            *gt_counts.entry([g.scene_id, g.im_id, inst.obj_id]).or_default() += 1;
        }
    }
    let rows: Vec<&ErrorRow> = evaluated.iter().flat_map(|e| &e.rows).collect();
    let ap: Vec<&(u32, ApEstimate)> = evaluated.iter().flat_map(|e| &e.ap).collect();
    if rows.is_empty() {
        return Err(Failure::usage(anyhow!("{} has no ground-truth instances", a.gt.display())));
    }

    let mut objects = BTreeMap::new();
    for &id in models.keys() {
        let errs: Vec<EstimateErrors> = rows.iter().filter(|r| r.obj_id == id).map(|r| r.errors.clone()).collect();
        let aps: Vec<ApEstimate> = ap.iter().filter(|(o, _)| *o == id).map(|(_, e)| e.clone()).collect();
        let counts: BTreeMap<Group, usize> = gt_counts.iter().filter(|(g, _)| g[2] == id).map(|(g, &c)| (*g, c)).collect();
        objects.insert(id, report(&errs, &aps, &counts));
    }
    let all_errs: Vec<EstimateErrors> = rows.iter().map(|r| r.errors.clone()).collect();
    let all_ap: Vec<ApEstimate> = ap.iter().map(|(_, e)| e.clone()).collect();
    let n = objects.len() as f64;
    let avg = |f: &dyn Fn(&ObjectReport) -> f64| objects.values().map(f).sum::<f64>() / n;
    let mean = MeanReport {
        ar_vsd: avg(&|o| o.recall.ar_vsd),
        ar_mssd: avg(&|o| o.recall.ar_mssd),
        ar_mspd: avg(&|o| o.recall.ar_mspd),
        ar: avg(&|o| o.recall.ar),
        ap: avg(&|o| o.precision.ap),
    };
    let report = EvalReport {
        overall: report(&all_errs, &all_ap, &gt_counts),
        objects,
        mean,
    };
    write_json(&a.out, &report)?;
    if let Some(p) = &a.errors {
        let mut text = String::new();
        for r in &rows {
            text.push_str(&serde_json::to_string(r).usage()?);
            text.push('\n');
        }
        std::fs::write(p, text).usage_ctx(format!("cannot write {}", p.display()))?;
    }
    print!("{}", table(&report));
    Ok(())
}

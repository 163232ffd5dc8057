use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use posekit_core::net::{load_checkpoint, save_checkpoint};
use posekit_core::train::{
    evaluate_top1, load_objects, read_loss_csv, train_loop, write_loss_csv, LossRecord, ObjectSource, TopOneReport,
    TrainError, TrainState,
};
use posekit_core::TrainConfig;
use serde::Serialize;

use crate::failure::{Failure, ResultExt};
use crate::inputs::{read_config, write_json};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Training config (.toml or .json); omitted keys take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory: model.opfw, loss.csv, report.json and periodic checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out views for the patch retrieval report; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub eval_views: usize,
}

/// Training summary. The smoothed loss compares window means at both ends of the run.
#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    pub parameters: usize,
    pub window: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1: Option<TopOneReport>,
}

/// Smoothing window for the loss summary.
pub const LOSS_WINDOW: usize = 25;

fn summarize(records: &[LossRecord]) -> (usize, f64, f64) {
    let w = LOSS_WINDOW.min(records.len() / 2).max(1).min(records.len());
    if records.is_empty() {
        return (0, f64::NAN, f64::NAN);
    }
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    (w, mean(&records[..w]), mean(&records[records.len() - w..]))
}

fn resolve_paths(cfg: &mut TrainConfig, base: &Path) {
    for o in &mut cfg.data.objects {
        if let ObjectSource::Mesh { mesh } = o {
            if mesh.is_relative() {
                *mesh = base.join(&*mesh);
            }
        }
    }
}

fn write_losses(path: &Path, records: &[LossRecord]) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, records).usage()?;
    std::fs::write(path, buf).usage_ctx(format!("cannot write {}", path.display()))
}

pub fn run(a: Args) -> Result<(), Failure> {
    let mut cfg: TrainConfig = read_config(&a.config)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    resolve_paths(&mut cfg, a.config.parent().unwrap_or(Path::new(".")));
    cfg.validate().usage_ctx(format!("invalid config {}", a.config.display()))?;
    std::fs::create_dir_all(&a.out).usage_ctx(format!("cannot create {}", a.out.display()))?;

    let start = Instant::now();
    let objects = load_objects(&cfg.data).usage_ctx("cannot load training objects")?;
    let loss_path = a.out.join("loss.csv");
    let (state, mut history) = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).usage_ctx(format!("cannot read checkpoint {}", p.display()))?;
            let state = TrainState::from_checkpoint(&cfg, &ckpt).usage_ctx(format!("cannot resume from {}", p.display()))?;
            let done = state.step();
            let previous = match std::fs::File::open(&loss_path) {
                Ok(f) => read_loss_csv(f).usage_ctx(format!("cannot read {}", loss_path.display()))?,
                Err(_) => Vec::new(),
            };
            log::info!("resuming at step {done}");
            (state, previous.into_iter().filter(|r| r.step < done).collect::<Vec<_>>())
        }
        None => (TrainState::new(&cfg).usage()?, Vec::new()),
    };
    let parameters = state.model.param_count();
    log::info!("{} objects, {parameters} parameters, {} steps", objects.len(), cfg.steps);

    let fresh = RefCell::new(Vec::new());
    let mut on_record = |r: &LossRecord| -> Result<(), TrainError> {
        if r.step % 50 == 0 {
            log::info!("step {} loss {:.4} (l1 {:.4}, l2 {:.4}) lr {:.2e}", r.step, r.total, r.l1, r.l2, r.lr);
        }
        fresh.borrow_mut().push(*r);
        Ok(())
    };
    let final_step = cfg.steps;
    let out = a.out.clone();
    let mut on_checkpoint = |step: usize, ckpt: &posekit_core::net::Checkpoint| -> Result<(), TrainError> {
        let name = if step == final_step {
            "model.opfw".to_string()
        } else {
            format!("checkpoint_{step:06}.opfw")
        };
        save_checkpoint(out.join(name), ckpt).map_err(|e| TrainError::Io(std::io::Error::other(e)))
    };
    let result = train_loop(&cfg, &objects, state, &mut on_record, &mut on_checkpoint);
    history.extend(fresh.into_inner());
    write_losses(&loss_path, &history)?;
    let outcome = match result {
        Ok(o) => o,
        Err(e @ TrainError::Io(_)) => return Err(Failure::usage(e)),
        Err(e) => return Err(Failure::pipeline(e)),
    };
    if outcome.records.is_empty() && a.resume.is_some() {
        log::warn!("checkpoint already at step {}; nothing to train", outcome.state.step());
    }

    let top1 = if a.eval_views > 0 {
        let r = evaluate_top1(&outcome.state.model, &objects, &cfg.data, a.eval_views, cfg.seed).pipeline()?;
        log::info!(
            "top-1 {:.3} over {} anchors (chance {:.4}, {:.1}x)",
            r.accuracy,
            r.anchors,
            r.chance,
            r.accuracy / r.chance
        );
        Some(r)
    } else {
        None
    };
    let (window, initial_loss, final_loss) = summarize(&history);
    let report = TrainReport {
        steps: history.len(),
        parameters,
        window,
        initial_loss,
        final_loss,
        loss_ratio: final_loss / initial_loss,
        top1,
    };
    write_json(&a.out.join("report.json"), &report)?;
    if !report.loss_ratio.is_finite() && !history.is_empty() {
        return Err(Failure::pipeline(anyhow!("loss summary is not finite")));
    }
    println!(
        "trained {} steps; smoothed loss {:.4} -> {:.4} (ratio {:.3}); {:.1} s",
        report.steps,
        initial_loss,
        final_loss,
        report.loss_ratio,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

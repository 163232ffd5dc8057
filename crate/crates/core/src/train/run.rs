use std::io::{Read, Write};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels::dot, Graph, Var};
use crate::model::{forward, BackboneInput, ForwardOutput, Model, TemplateSelection};
use crate::net::Checkpoint;
use crate::real::Real;
use crate::render::TemplateImage;

use super::data::{image_patch_points, sample_training_view, template_token_points, TrainingObject, TrainingView};
use super::optim::{learning_rate, AdamW};
use super::sampling::{ground_truth_positives, nearest_positive, sample_batch, AnchorBatch, Direction};
use super::{DataConfig, LossConfig, TrainConfig, TrainError};

/// Loss components averaged over the loss layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

/// Builds `λ₁L₁ + λ₂L₂` for every listed (1-based) decoder layer and averages over layers.
pub fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    layers: &[usize],
    template_to_image: &AnchorBatch,
    image_to_template: &AnchorBatch,
    cfg: &LossConfig,
) -> (Var, BatchLoss) {
    let i1 = Rc::new(template_to_image.nce_index());
    let i2 = Rc::new(image_to_template.nce_index());
    let (tau, gamma) = (T::from_f64(cfg.tau), T::from_f64(cfg.gamma));
    let mut terms = Vec::with_capacity(layers.len());
    let (mut l1, mut l2) = (0.0, 0.0);
    for &l in layers {
        let o = out.layers[l - 1];
        let a = g.focal_nce(o.templates, o.image, i1.clone(), tau, gamma);
        let b = g.focal_nce(o.image, o.templates, i2.clone(), tau, gamma);
        l1 += g.value(a).data[0].as_f64();
        l2 += g.value(b).data[0].as_f64();
        let a = g.scale(a, T::from_f64(cfg.lambda1));
        let b = g.scale(b, T::from_f64(cfg.lambda2));
        terms.push(g.add(a, b));
    }
    let k = layers.len() as f64;
    let stacked = g.concat_rows(&terms);
    let sum = g.sum(stacked);
    let total = g.scale(sum, T::from_f64(1.0 / k));
    let loss = BatchLoss {
        l1: l1 / k,
        l2: l2 / k,
        total: g.value(total).data[0].as_f64(),
    };
    (total, loss)
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn write_loss_csv(w: impl Write, records: &[LossRecord]) -> Result<(), TrainError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_loss_csv(r: impl Read) -> Result<Vec<LossRecord>, TrainError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Into::into)
}

/// Parameters and optimizer state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: AdamW,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self, TrainError> {
        Ok(Self {
            model: Model::init(cfg.model, cfg.seed)?,
            optimizer: AdamW::new(cfg.optimizer),
        })
    }

    /// Steps completed so far.
    pub fn step(&self) -> usize {
        self.optimizer.t as usize
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(Some(&self.optimizer.to_store()))
    }

    pub fn from_checkpoint(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let (model, rest) = Model::from_checkpoint(ckpt)?;
        if model.cfg != cfg.model {
            return Err(TrainError::Config("checkpoint architecture differs from the configuration".into()));
        }
        Ok(Self {
            model,
            optimizer: AdamW::from_store(cfg.optimizer, &rest)?,
        })
    }
}

/// Ground truth of one view against its template batch.
struct ViewTruth {
    selection: TemplateSelection,
    image_positives: Vec<Vec<usize>>,
    template_positive: Vec<Option<usize>>,
}

fn view_truth(objects: &[TrainingObject], view: &TrainingView, epsilon: f64) -> ViewTruth {
    let set = &objects[view.object].set;
    let refs: Vec<&TemplateImage> = view.templates.iter().map(|&t| &set.templates[t]).collect();
    let selection = TemplateSelection::new(&refs, &view.templates);
    let img = image_patch_points(&view.image);
    let tmpl = template_token_points(set, &selection.origins);
    ViewTruth {
        image_positives: ground_truth_positives(&img, &tmpl, epsilon),
        template_positive: nearest_positive(&tmpl, &img, epsilon),
        selection,
    }
}

fn run_forward(
    g: &mut Graph<f32>,
    model: &Model,
    objects: &[TrainingObject],
    view: &TrainingView,
    selection: &TemplateSelection,
) -> Result<ForwardOutput, TrainError> {
    let set = &objects[view.object].set;
    let inputs: Vec<BackboneInput<'_>> =
        view.templates.iter().map(|&t| BackboneInput::rgb_of(&set.templates[t])).collect();
    Ok(forward(
        g,
        &model.params,
        &model.cfg,
        &BackboneInput::rgb_of(&view.image),
        &inputs,
        selection,
    )?)
}

const MAX_DRAWS: usize = 8;

/// Per-step random stream: independent of how the run was split into resumed segments.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Draws the view and both anchor batches of one step. Anchor and negative counts are clamped
/// to what the view offers; views without any usable anchor are redrawn.
fn draw_step(
    objects: &[TrainingObject],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrainingView, ViewTruth, AnchorBatch, AnchorBatch), TrainError> {
    for _ in 0..MAX_DRAWS {
        let view = sample_training_view(objects, &cfg.data, rng)?;
        let truth = view_truth(objects, &view, cfg.data.epsilon);
        let images = truth.image_positives.len();
        let tokens = truth.template_positive.len();
        let usable_t = truth.template_positive.iter().filter(|p| p.is_some()).count();
        let usable_i = truth.image_positives.iter().filter(|p| !p.is_empty()).count();
        let widest = truth.image_positives.iter().map(Vec::len).max().unwrap_or(0);
        let n1 = cfg.loss.anchors_per_step.min(usable_t);
        let n2 = cfg.loss.anchors_per_step.min(usable_i);
        let m1 = cfg.loss.negatives_per_anchor.min(images.saturating_sub(1));
        let m2 = cfg.loss.negatives_per_anchor.min(tokens.saturating_sub(widest));
        if n1 == 0 || n2 == 0 || m1 == 0 || m2 == 0 {
            continue;
        }
        let b1 = sample_batch(Direction::TemplateToImage, &truth.image_positives, &truth.template_positive, n1, m1, rng)?;
        let b2 = sample_batch(Direction::ImageToTemplate, &truth.image_positives, &truth.template_positive, n2, m2, rng)?;
        return Ok((view, truth, b1, b2));
    }
    Err(TrainError::InsufficientData(format!(
        "{MAX_DRAWS} consecutive views without usable anchors"
    )))
}

/// Runs one optimization step; `state.step()` is the step index.
pub fn train_step(
    state: &mut TrainState,
    objects: &[TrainingObject],
    cfg: &TrainConfig,
) -> Result<LossRecord, TrainError> {
    let step = state.step();
    let mut rng = step_rng(cfg.seed, step);
    let (view, truth, b1, b2) = draw_step(objects, cfg, &mut rng)?;
    let mut g = Graph::new();
    let out = run_forward(&mut g, &state.model, objects, &view, &truth.selection)?;
    let (loss_var, loss) = batch_loss(&mut g, &out, &cfg.loss_layers, &b1, &b2, &cfg.loss);
    if !loss.total.is_finite() {
        return Err(TrainError::NonFiniteLoss(step));
    }
    if g.clamped_probabilities > 0 {
        log::warn!("step {step}: {} anchor probabilities clamped at 1e-12", g.clamped_probabilities);
    }
    let grads = g.backward(loss_var).params(&g);
    if grads.values().any(|t| !t.is_finite()) {
        return Err(TrainError::NonFiniteLoss(step));
    }
    let lr = learning_rate(step, cfg.steps, &cfg.optimizer);
    state.optimizer.step(&mut state.model.params, &grads, lr);
    Ok(LossRecord {
        step,
        l1: loss.l1,
        l2: loss.l2,
        total: loss.total,
        lr,
    })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Records of the steps run in this call.
    pub records: Vec<LossRecord>,
}

/// Trains from `state` (fresh or resumed) up to `cfg.steps`. `on_record` sees every loss
/// record; `on_checkpoint` is called every `checkpoint_every` steps and after the last step.
pub fn train_loop(
    cfg: &TrainConfig,
    objects: &[TrainingObject],
    mut state: TrainState,
    on_record: &mut dyn FnMut(&LossRecord) -> Result<(), TrainError>,
    on_checkpoint: &mut dyn FnMut(usize, &Checkpoint) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(TrainError::InsufficientData("no training objects".into()));
    }
    let mut records = Vec::new();
    while state.step() < cfg.steps {
        let r = train_step(&mut state, objects, cfg)?;
        log::debug!("step {} total {:.4} l1 {:.4} l2 {:.4} lr {:.3e}", r.step, r.total, r.l1, r.l2, r.lr);
        on_record(&r)?;
        records.push(r);
        let done = state.step();
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.steps {
            on_checkpoint(done, &state.to_checkpoint())?;
        }
    }
    Ok(TrainOutcome { state, records })
}

/// Patch-level retrieval on held-out views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopOneReport {
    pub views: usize,
    /// Image patches with at least one positive template token.
    pub anchors: usize,
    pub hits: usize,
    pub accuracy: f64,
    /// Expected accuracy of a uniformly random pick: mean of |P| / template tokens.
    pub chance: f64,
}

const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// For every image patch with positives, picks the most similar template token on the last
/// decoder layer and counts a hit when it is a positive. Views come from a seed stream
/// disjoint from training.
pub fn evaluate_top1(model: &Model, objects: &[TrainingObject], data: &DataConfig, views: usize, seed: u64) -> Result<TopOneReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_OFFSET);
    let (mut anchors, mut hits, mut chance) = (0usize, 0usize, 0.0f64);
    for _ in 0..views {
        let view = sample_training_view(objects, data, &mut rng)?;
        let truth = view_truth(objects, &view, data.epsilon);
        if truth.selection.is_empty() {
            continue;
        }
        let mut g = Graph::new();
        let out = run_forward(&mut g, model, objects, &view, &truth.selection)?;
        let last = *out.layers.last().expect("at least one decoder layer");
        let (img, tmpl) = (g.value(last.image), g.value(last.templates));
        for (i, pos) in truth.image_positives.iter().enumerate() {
            if pos.is_empty() {
                continue;
            }
            let row = img.row(i);
            let mut best = (f32::NEG_INFINITY, 0usize);
            for j in 0..tmpl.rows {
                let s = dot(row, tmpl.row(j));
                if s > best.0 {
                    best = (s, j);
                }
            }
            anchors += 1;
            hits += usize::from(pos.binary_search(&best.1).is_ok());
            chance += pos.len() as f64 / tmpl.rows as f64;
        }
    }
    let denom = anchors.max(1) as f64;
    Ok(TopOneReport {
        views,
        anchors,
        hits,
        accuracy: hits as f64 / denom,
        chance: chance / denom,
    })
}

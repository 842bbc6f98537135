//! Self-supervised pretraining: mask a subset of each subject's tokens,
//! encode the rest with the context encoder, predict the representations the
//! EMA target encoder assigns to the masked tokens, and regress on them.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nets, token_count, Model, ModelConfig, QueryLayout, TokenBatch, TokenFilter};
use crate::numerics::{Adam, Graph, LrSchedule, ParamStore, Scalar, Segment, Tensor, Var};
use crate::rng::{self, Rng};
use crate::synthcohort::Subject;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JepaConfig {
    pub mask_ratio: f64,
    pub ema_momentum: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Standardize each target row before the loss.
    pub normalize_targets: bool,
}

impl Default for JepaConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            ema_momentum: 0.996,
            lr_max: 1e-3,
            lr_min: 0.0,
            batch_size: 256,
            total_steps: 10_000,
            checkpoint_every: 1_000,
            seed: 0,
            normalize_targets: false,
        }
    }
}

impl JepaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad("ema_momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("batch_size and checkpoint_every must be positive");
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr_max, self.lr_min, self.total_steps)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Mean per-dimension std of pooled target representations over the batch.
    pub rep_std: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMark {
    /// Number of completed steps.
    pub step: u64,
    pub rep_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
    pub checkpoints: Vec<CheckpointMark>,
    /// Subjects left out because they have fewer than two tokens.
    pub skipped_subjects: usize,
}

/// Number of masked tokens out of `n`.
pub fn mask_count(n: usize, mask_ratio: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::Contract(format!("cannot mask a sequence of {n} tokens")));
    }
    let k = libm::round(mask_ratio * n as f64) as usize;
    Ok(k.clamp(1, n - 1))
}

/// Splits `0..n` into sorted `(context, masked)` index sets.
pub fn mask_tokens(n: usize, mask_ratio: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = mask_count(n, mask_ratio)?;
    let mut masked = rand::seq::index::sample(rng, n, k).into_vec();
    masked.sort_unstable();
    let context = (0..n).filter(|i| masked.binary_search(i).is_err()).collect();
    Ok((context, masked))
}

/// `target <- m * target + (1 - m) * context`, per scalar.
pub fn ema_update<S: Scalar>(target: &mut ParamStore<S>, context: &ParamStore<S>, momentum: f64) -> Result<()> {
    target.check_same_structure(context)?;
    let m = S::c(momentum);
    let one_m = S::one() - m;
    for ((_, t), (_, c)) in target.iter_mut().zip(context.iter()) {
        for (x, &y) in t.value.data_mut().iter_mut().zip(c.value.data()) {
            *x = m * *x + one_m * y;
        }
    }
    Ok(())
}

/// Dataset positions of the batch consumed at `step`: epochs are fixed
/// shuffles of `0..n` and the trailing partial batch is dropped.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let b = batch_size.min(n);
    let per_epoch = (n / b) as u64;
    let epoch = step / per_epoch;
    let j = (step % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive(seed, b"shuffle"), epoch));
    order[j * b..(j + 1) * b].to_vec()
}

/// Mean per-dimension population std over the rows of `reps`.
pub fn rep_std<S: Scalar>(reps: &Tensor<S>) -> f64 {
    let (n, d) = (reps.rows(), reps.cols());
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..d {
        let mean = (0..n).map(|r| reps.row(r)[c].as_f64()).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (reps.row(r)[c].as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        total += libm::sqrt(var);
    }
    total / d as f64
}

/// Singular values of `reps` above `rel` times the largest.
pub fn rank_proxy<S: Scalar>(reps: &Tensor<S>, rel: f64) -> usize {
    let (n, d) = (reps.rows(), reps.cols());
    if n == 0 || d == 0 {
        return 0;
    }
    let m = DMatrix::from_row_iterator(n, d, reps.data().iter().map(|v| v.as_f64()));
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Collapsed,
    NotCollapsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub rep_std: f64,
    pub rep_rank_proxy: usize,
    pub verdict: Verdict,
}

pub const COLLAPSE_TAU: f64 = 1e-3;
const RANK_REL: f64 = 0.01;

/// Collapse statistics of a representation matrix, one row per sample.
pub fn collapse_stats<S: Scalar>(reps: &Tensor<S>, tau: f64) -> CollapseReport {
    let s = rep_std(reps);
    CollapseReport {
        rep_std: s,
        rep_rank_proxy: rank_proxy(reps, RANK_REL),
        verdict: if s < tau { Verdict::Collapsed } else { Verdict::NotCollapsed },
    }
}

/// Mean-pooled representations `[subjects, d]` of `subjects` under `encoder`.
pub fn pooled_representations<S: Scalar>(
    model: &Model<S>,
    encoder: &ParamStore<S>,
    subjects: &[&Subject],
) -> Result<Tensor<S>> {
    encoder.check_same_structure(&model.encoder)?;
    let cfg = model.config();
    let batch = TokenBatch::build(subjects, TokenFilter::All, cfg.image_size, cfg.expression_dim)?;
    let mut g = Graph::new();
    let x = nets::embed(&mut g, encoder, model.enc_ids(), cfg, &batch)?;
    let r = nets::encode(&mut g, encoder, model.enc_ids(), cfg, x, &batch.segments)?;
    let p = g.segment_mean(r, &batch.segments)?;
    Ok(g.value(p)?.clone())
}

/// Collapse diagnostics of `encoder` (typically a target encoder) on a sample.
pub fn collapse_report<S: Scalar>(
    model: &Model<S>,
    encoder: &ParamStore<S>,
    sample: &[&Subject],
    tau: f64,
) -> Result<CollapseReport> {
    Ok(collapse_stats(&pooled_representations(model, encoder, sample)?, tau))
}

/// Trainable context encoder and predictor (inside `model`), the EMA target
/// encoder, and the number of completed steps.
#[derive(Debug, Clone)]
pub struct JepaState<S: Scalar> {
    pub model: Model<S>,
    pub target: ParamStore<S>,
    pub step: u64,
}

impl<S: Scalar> JepaState<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let model = Model::new(cfg, seed)?;
        let target = model.encoder.clone();
        Ok(Self { model, target, step: 0 })
    }

    pub fn from_parts(model: Model<S>, target: ParamStore<S>, step: u64) -> Result<Self> {
        target.check_same_structure(&model.encoder)?;
        Ok(Self { model, target, step })
    }
}

/// Masked positions of one batch, per subject, as local token indices.
pub type Masks = Vec<(Vec<usize>, Vec<usize>)>;

/// Draws masks for every subject of a batch from `rng`.
pub fn draw_masks(batch_sizes: &[usize], mask_ratio: f64, rng: &mut Rng) -> Result<Masks> {
    batch_sizes.iter().map(|&n| mask_tokens(n, mask_ratio, rng)).collect()
}

struct Targets<S> {
    /// `[masked rows, d]`, subject by subject.
    rows: Tensor<S>,
    pooled: Tensor<S>,
}

fn target_forward<S: Scalar>(
    model: &Model<S>,
    target: &ParamStore<S>,
    batch: &TokenBatch<S>,
    masks: &Masks,
    normalize: bool,
) -> Result<Targets<S>> {
    let cfg = model.config();
    let mut g = Graph::new();
    let x = nets::embed(&mut g, target, model.enc_ids(), cfg, batch)?;
    let r = nets::encode(&mut g, target, model.enc_ids(), cfg, x, &batch.segments)?;
    let pooled = g.segment_mean(r, &batch.segments)?;
    let idx: Vec<usize> =
        batch.segments.iter().zip(masks).flat_map(|(s, (_, m))| m.iter().map(move |&i| s.start + i)).collect();
    let t = g.gather_rows(r, &idx)?;
    let mut rows = g.value(t)?.clone();
    if normalize {
        standardize_rows(&mut rows);
    }
    Ok(Targets { rows, pooled: g.value(pooled)?.clone() })
}

fn standardize_rows<S: Scalar>(t: &mut Tensor<S>) {
    let d = t.cols();
    for row in t.data_mut().chunks_mut(d) {
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + 1e-5);
        for v in row.iter_mut() {
            *v = S::c((v.as_f64() - mean) * inv);
        }
    }
}

/// Per-subject latent MSE, averaged over subjects, recorded on `g`, and the
/// predictions it compares.
fn context_loss<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &TokenBatch<S>,
    masks: &Masks,
    targets: &Tensor<S>,
) -> Result<(Var, Var)> {
    let cfg = model.config();
    let d = cfg.d_model;
    let x = nets::embed(g, &model.encoder, model.enc_ids(), cfg, batch)?;

    let mut ctx_idx = Vec::new();
    let mut ctx_segs = Vec::with_capacity(masks.len());
    let mut queries = QueryLayout::default();
    let mut weights = Vec::new();
    let b = masks.len() as f64;
    for (seg, (ctx, masked)) in batch.segments.iter().zip(masks) {
        if ctx.len() + masked.len() != seg.len || ctx.is_empty() || masked.is_empty() {
            return Err(Error::Contract("mask does not partition the subject's tokens".into()));
        }
        ctx_segs.push(Segment::new(ctx_idx.len(), ctx.len()));
        ctx_idx.extend(ctx.iter().map(|&i| seg.start + i));
        queries.segments.push(Segment::new(queries.times.len(), masked.len()));
        for &i in masked {
            queries.times.push(batch.times[seg.start + i]);
            queries.modalities.push(batch.modalities[seg.start + i]);
        }
        let w = S::c(1.0 / (masked.len() * d) as f64 / b);
        weights.extend(core::iter::repeat_n(w, masked.len()));
    }
    let cx = g.gather_rows(x, &ctx_idx)?;
    let reps = nets::encode(g, &model.encoder, model.enc_ids(), cfg, cx, &ctx_segs)?;
    let pred = nets::predict(g, &model.predictor, model.pred_ids(), cfg, reps, &ctx_segs, &queries)?;
    let t = g.constant(targets.clone());
    Ok((g.weighted_sq_err(pred, t, weights)?, pred))
}

fn per_subject_losses<S: Scalar>(pred: &Tensor<S>, targets: &Tensor<S>, masks: &Masks) -> Vec<f64> {
    let mut out = Vec::with_capacity(masks.len());
    let mut r = 0;
    for (_, m) in masks {
        let mut sum = 0.0;
        for row in r..r + m.len() {
            sum +=
                pred.row(row).iter().zip(targets.row(row)).map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2)).sum::<f64>();
        }
        out.push(sum / (m.len() * pred.cols()) as f64);
        r += m.len();
    }
    out
}

/// Loss of a batch under given masks, without updating anything.
pub fn jepa_loss<S: Scalar>(
    state: &JepaState<S>,
    subjects: &[&Subject],
    masks: &Masks,
    cfg: &JepaConfig,
) -> Result<f64> {
    let mc = state.model.config();
    let batch = TokenBatch::build(subjects, TokenFilter::All, mc.image_size, mc.expression_dim)?;
    let targets = target_forward(&state.model, &state.target, &batch, masks, cfg.normalize_targets)?;
    let mut g = Graph::new();
    let (l, _) = context_loss(&mut g, &state.model, &batch, masks, &targets.rows)?;
    Ok(g.value(l)?.item()?.as_f64())
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub row: TrainRow,
    /// Norm of any gradient that reached the target encoder; always zero.
    pub target_grad_norm: f64,
}

/// One JEPA update on `subjects` with the given masks: Adam on the context
/// encoder and predictor, then the EMA update of the target encoder.
pub fn jepa_step<S: Scalar>(
    state: &mut JepaState<S>,
    subjects: &[&Subject],
    masks: &Masks,
    cfg: &JepaConfig,
    adam: &Adam,
) -> Result<StepOutput> {
    let mc = state.model.config().clone();
    let batch = TokenBatch::build(subjects, TokenFilter::All, mc.image_size, mc.expression_dim)?;
    let targets = target_forward(&state.model, &state.target, &batch, masks, cfg.normalize_targets)?;

    let mut g = Graph::new();
    let (l, pred) = context_loss(&mut g, &state.model, &batch, masks, &targets.rows)?;
    let loss = g.value(l)?.item()?.as_f64();
    if !loss.is_finite() {
        let losses = per_subject_losses(g.value(pred)?, &targets.rows, masks);
        let subject_index = losses.iter().position(|l| !l.is_finite()).unwrap_or(0);
        return Err(Error::NonFiniteLoss { subject_index, losses });
    }
    let grads = g.backward(l)?;

    let model = &mut state.model;
    model.encoder.zero_grads();
    model.predictor.zero_grads();
    state.target.zero_grads();
    model.encoder.accumulate(&grads);
    model.predictor.accumulate(&grads);
    state.target.accumulate(&grads);
    let target_grad_norm = state.target.grad_norm();
    let grad_norm = libm::sqrt(model.encoder.grad_norm().powi(2) + model.predictor.grad_norm().powi(2));

    let lr = cfg.schedule()?.lr_at(state.step);
    adam.step(&mut model.encoder, lr)?;
    adam.step(&mut model.predictor, lr)?;
    model.encoder.zero_grads();
    model.predictor.zero_grads();
    ema_update(&mut state.target, &model.encoder, cfg.ema_momentum)?;

    let row = TrainRow { step: state.step, loss, lr, rep_std: rep_std(&targets.pooled), grad_norm };
    state.step += 1;
    Ok(StepOutput { row, target_grad_norm })
}

/// Subjects with at least two tokens, as positions into `subjects`.
pub fn maskable(subjects: &[Subject]) -> Vec<usize> {
    (0..subjects.len()).filter(|&i| token_count(&subjects[i], TokenFilter::All) >= 2).collect()
}

/// Runs `jepa_step` from `state.step` up to `cfg.total_steps`. `on_checkpoint`
/// is called every `checkpoint_every` steps and after the final one.
pub fn pretrain<S: Scalar>(
    subjects: &[Subject],
    mut state: JepaState<S>,
    cfg: &JepaConfig,
    mut on_checkpoint: impl FnMut(&JepaState<S>, &CheckpointMark) -> Result<()>,
) -> Result<(JepaState<S>, TrainLog)> {
    cfg.validate()?;
    let eligible = maskable(subjects);
    let mut log = TrainLog { skipped_subjects: subjects.len() - eligible.len(), ..TrainLog::default() };
    if log.skipped_subjects > 0 {
        log::info!("pretraining skips {} single-token subjects", log.skipped_subjects);
    }
    if eligible.is_empty() {
        return Err(Error::Empty("no subject has two or more tokens".into()));
    }
    let adam = Adam::default();
    let mask_seed = rng::derive(cfg.seed, b"mask");
    while state.step < cfg.total_steps {
        let pos = batch_indices(eligible.len(), cfg.batch_size, cfg.seed, state.step);
        let batch: Vec<&Subject> = pos.iter().map(|&p| &subjects[eligible[p]]).collect();
        let sizes: Vec<usize> = batch.iter().map(|s| token_count(s, TokenFilter::All)).collect();
        let masks = draw_masks(&sizes, cfg.mask_ratio, &mut rng::stream(mask_seed, state.step))?;
        let out = jepa_step(&mut state, &batch, &masks, cfg, &adam).map_err(|e| match e {
            Error::NonFiniteLoss { subject_index, losses } => {
                log::error!("non-finite loss on dataset subject {}", eligible[pos[subject_index]]);
                Error::NonFiniteLoss { subject_index: eligible[pos[subject_index]], losses }
            }
            e => e,
        })?;
        log::debug!("jepa step {} loss {:.6} rep_std {:.4}", out.row.step, out.row.loss, out.row.rep_std);
        log.rows.push(out.row);
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps {
            let mark = CheckpointMark { step: state.step, rep_std: out.row.rep_std };
            log.checkpoints.push(mark);
            on_checkpoint(&state, &mark)?;
        }
    }
    Ok((state, log))
}

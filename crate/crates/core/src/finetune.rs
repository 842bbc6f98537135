//! Supervised training: classifiers trained from scratch, and pretrained
//! encoders finetuned under a fresh head. By default runs hold out subjects with
//! `index % 10 == 9` and returns the weights with the lowest validation BCE.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jepa::batch_indices;
use crate::model::{nets, token_count, Model, ModelConfig, TokenBatch, TokenFilter};
use crate::numerics::{sigmoid, Adam, Graph, LrSchedule, ParamStore, Scalar};
use crate::rng;
use crate::synthcohort::{Dataset, Subject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyKind {
    SupervisedSThenF,
    JepaUThenF,
    SupervisedFOnly,
    ImagingOnly,
    ExpressionOnly,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::SupervisedSThenF,
        StrategyKind::JepaUThenF,
        StrategyKind::SupervisedFOnly,
        StrategyKind::ImagingOnly,
        StrategyKind::ExpressionOnly,
    ];

    pub fn filter(self) -> TokenFilter {
        match self {
            StrategyKind::ImagingOnly => TokenFilter::ImagingOnly,
            StrategyKind::ExpressionOnly => TokenFilter::ExpressionOnly,
            _ => TokenFilter::All,
        }
    }

    /// Whether the encoder starts from supplied weights.
    pub fn needs_init(self) -> bool {
        matches!(self, StrategyKind::SupervisedSThenF | StrategyKind::JepaUThenF)
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SupervisedSThenF => "SUPERVISED_S_THEN_F",
            StrategyKind::JepaUThenF => "JEPA_U_THEN_F",
            StrategyKind::SupervisedFOnly => "SUPERVISED_F_ONLY",
            StrategyKind::ImagingOnly => "IMAGING_ONLY",
            StrategyKind::ExpressionOnly => "EXPRESSION_ONLY",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub f_size: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
}

/// Optimization budget shared by every supervised run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub min_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Final rate as a fraction of each group's peak rate.
    pub lr_min_ratio: f64,
    pub eval_every: u64,
    /// Loss weight of positive subjects; 1 is plain BCE.
    pub pos_weight: f64,
    /// Hold out every tenth subject for weight selection.
    pub holdout: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            min_steps: 200,
            batch_size: 64,
            lr: 1e-3,
            lr_min_ratio: 0.0,
            eval_every: 50,
            pos_weight: 1.0,
            holdout: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..=1.0).contains(&self.lr_min_ratio) || !(self.pos_weight > 0.0) {
            return Err(Error::Config("invalid lr, lr_min_ratio or pos_weight".into()));
        }
        Ok(())
    }

    /// `max(min_steps, epochs * ceil(n / batch_size))`.
    pub fn total_steps(&self, n: usize) -> u64 {
        let per_epoch = n.div_ceil(self.batch_size.max(1)) as u64;
        (self.epochs as u64 * per_epoch).max(self.min_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub step: u64,
    pub loss: f64,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    /// Number of completed steps.
    pub step: u64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub rows: Vec<FitRow>,
    pub validation: Vec<ValRow>,
    /// Completed steps of the returned weights.
    pub best_step: u64,
}

#[derive(Debug, Clone)]
pub struct FitResult<S: Scalar> {
    pub model: Model<S>,
    pub log: FitLog,
    pub f_size: usize,
    pub strategy: Option<StrategyKind>,
    pub seed: u64,
}

/// Train/validation split of the first `n` subjects.
pub fn holdout_split(subjects: &[Subject], n: usize, holdout: bool) -> (Vec<&Subject>, Vec<&Subject>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in subjects.iter().take(n).enumerate() {
        if holdout && i % 10 == 9 {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    (train, val)
}

fn require_labeled(ds: &Dataset) -> Result<()> {
    if ds.spec.labeled() {
        Ok(())
    } else {
        Err(Error::Unlabeled(ds.spec.name.clone()))
    }
}

/// Trains a randomly initialized model on the whole `dataset` with BCE.
pub fn supervised_train<S: Scalar>(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    filter: TokenFilter,
    cfg: &TrainConfig,
) -> Result<FitResult<S>> {
    require_labeled(dataset)?;
    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    let (train, val) = holdout_split(&dataset.subjects, dataset.len(), cfg.holdout);
    let (model, log) = train_classifier(model, &train, &val, filter, cfg, cfg.lr, cfg.lr)?;
    Ok(FitResult { model, log, f_size: dataset.len(), strategy: None, seed: cfg.seed })
}

/// Trains `strategy` on the first `strategy.f_size` subjects of `dataset`.
/// Strategies that need an initial encoder take it from `init`; the head
/// is always freshly drawn.
pub fn finetune_from<S: Scalar>(
    init: Option<&ParamStore<S>>,
    dataset: &Dataset,
    strategy: &Strategy,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FitResult<S>> {
    require_labeled(dataset)?;
    let mut model = Model::new(model_cfg.clone(), cfg.seed)?;
    if strategy.kind.needs_init() {
        let init =
            init.ok_or_else(|| Error::Config(format!("{} needs initial encoder weights", strategy.kind.name())))?;
        let mut enc = init.clone();
        enc.reset_optimizer_state();
        model.set_encoder(enc)?;
        model.reinit_head(cfg.seed);
    }
    if strategy.f_size == 0 || strategy.f_size > dataset.len() {
        return Err(Error::Config(format!("f_size {} outside 1..={}", strategy.f_size, dataset.len())));
    }
    let (train, val) = holdout_split(&dataset.subjects, strategy.f_size, cfg.holdout);
    let (model, log) =
        train_classifier(model, &train, &val, strategy.kind.filter(), cfg, strategy.encoder_lr, strategy.head_lr)?;
    Ok(FitResult { model, log, f_size: strategy.f_size, strategy: Some(strategy.kind), seed: cfg.seed })
}

fn schedule(lr: f64, cfg: &TrainConfig, total: u64) -> Result<Option<LrSchedule>> {
    if lr == 0.0 {
        return Ok(None);
    }
    LrSchedule::new(lr, lr * cfg.lr_min_ratio, total).map(Some)
}

fn train_classifier<S: Scalar>(
    mut model: Model<S>,
    train: &[&Subject],
    val: &[&Subject],
    filter: TokenFilter,
    cfg: &TrainConfig,
    encoder_lr: f64,
    head_lr: f64,
) -> Result<(Model<S>, FitLog)> {
    cfg.validate()?;
    let train: Vec<&Subject> = train.iter().copied().filter(|s| token_count(s, filter) > 0).collect();
    let val: Vec<&Subject> = val.iter().copied().filter(|s| token_count(s, filter) > 0).collect();
    if train.is_empty() {
        return Err(Error::Empty("no training subject has tokens under the filter".into()));
    }
    let total = cfg.total_steps(train.len());
    let enc_sched = schedule(encoder_lr, cfg, total)?;
    let head_sched = schedule(head_lr, cfg, total)?;
    let adam = Adam::default();
    let shuffle_seed = rng::derive(cfg.seed, b"finetune");
    let mc = model.config().clone();
    let mut log = FitLog::default();
    let mut best: Option<(f64, Model<S>)> = None;

    for step in 0..total {
        let idx = batch_indices(train.len(), cfg.batch_size, shuffle_seed, step);
        let batch: Vec<&Subject> = idx.iter().map(|&i| train[i]).collect();
        let tb = TokenBatch::build(&batch, filter, mc.image_size, mc.expression_dim)?;
        let targets: Vec<S> = batch.iter().map(|s| S::c(s.label as f64)).collect();
        let weights: Vec<S> = batch.iter().map(|s| S::c(if s.label == 1 { cfg.pos_weight } else { 1.0 })).collect();

        let mut g = Graph::new();
        let x = nets::embed(&mut g, &model.encoder, model.enc_ids(), &mc, &tb)?;
        let r = nets::encode(&mut g, &model.encoder, model.enc_ids(), &mc, x, &tb.segments)?;
        let z = nets::classify(&mut g, &model.head, model.head_ids(), r, &tb.segments)?;
        let l = g.weighted_bce_with_logits(z, &targets, &weights)?;
        let loss = g.value(l)?.item()?.as_f64();
        if !loss.is_finite() {
            let z = g.value(z)?;
            let subject_index = z.data().iter().position(|v| !v.as_f64().is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteLoss { subject_index: idx[subject_index], losses: alloc::vec![loss] });
        }
        let grads = g.backward(l)?;
        model.encoder.zero_grads();
        model.head.zero_grads();
        model.encoder.accumulate(&grads);
        model.head.accumulate(&grads);
        let grad_norm = libm::sqrt(model.encoder.grad_norm().powi(2) + model.head.grad_norm().powi(2));

        let elr = enc_sched.map_or(0.0, |s| s.lr_at(step));
        let hlr = head_sched.map_or(0.0, |s| s.lr_at(step));
        if enc_sched.is_some() {
            adam.step(&mut model.encoder, elr)?;
        }
        if head_sched.is_some() {
            adam.step(&mut model.head, hlr)?;
        }
        model.encoder.zero_grads();
        model.head.zero_grads();
        log.rows.push(FitRow { step, loss, encoder_lr: elr, head_lr: hlr, grad_norm });

        let done = step + 1;
        if !val.is_empty() && (done % cfg.eval_every == 0 || done == total) {
            let val_loss = bce(&model, &val, filter)?;
            log.validation.push(ValRow { step: done, val_loss });
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                log.best_step = done;
                best = Some((val_loss, model.clone()));
            }
        }
    }
    match best {
        Some((_, m)) => Ok((m, log)),
        None => {
            log.best_step = total;
            Ok((model, log))
        }
    }
}

const EVAL_CHUNK: usize = 256;

/// Mean BCE of `subjects`, each of which must have tokens under `filter`.
pub fn bce<S: Scalar>(model: &Model<S>, subjects: &[&Subject], filter: TokenFilter) -> Result<f64> {
    let mut total = 0.0;
    for chunk in subjects.chunks(EVAL_CHUNK) {
        let z = model.logits(chunk, filter)?;
        for (s, z) in chunk.iter().zip(z) {
            let (z, y) = (z.as_f64(), s.label as f64);
            total += z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()));
        }
    }
    Ok(total / subjects.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    /// The subject had no tokens under the filter and received 0.5.
    pub fallback: bool,
}

pub const FALLBACK_SCORE: f64 = 0.5;

/// Scores of `subjects`. Subjects with no expression under
/// [`TokenFilter::ExpressionOnly`] get [`FALLBACK_SCORE`].
pub fn predict_all<S: Scalar>(model: &Model<S>, subjects: &[&Subject], filter: TokenFilter) -> Result<Vec<Prediction>> {
    let mut out = alloc::vec![Prediction { score: FALLBACK_SCORE, fallback: true }; subjects.len()];
    let mut scored = Vec::with_capacity(subjects.len());
    for (i, s) in subjects.iter().enumerate() {
        if token_count(s, filter) > 0 {
            scored.push(i);
        } else if filter != TokenFilter::ExpressionOnly {
            return Err(Error::Empty(format!("subject at position {i} has no tokens under {filter:?}")));
        }
    }
    for chunk in scored.chunks(EVAL_CHUNK) {
        let refs: Vec<&Subject> = chunk.iter().map(|&i| subjects[i]).collect();
        for (&i, z) in chunk.iter().zip(model.logits(&refs, filter)?) {
            out[i] = Prediction { score: sigmoid(z.as_f64()), fallback: false };
        }
    }
    Ok(out)
}

pub fn predict<S: Scalar>(model: &Model<S>, subject: &Subject, filter: TokenFilter) -> Result<Prediction> {
    Ok(predict_all(model, &[subject], filter)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use crate::synthcohort::{
        generate_dataset, CohortParams, DatasetKind, DatasetSpec, MixingMatrix, ProceduralBackground,
    };

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 24,
            image_channels: alloc::vec![4, 8],
            expression_dim: 16,
            head_hidden: 8,
            image_size: 16,
            ..ModelConfig::default()
        }
    }

    fn data(kind: DatasetKind, n: usize) -> Dataset {
        let params = CohortParams { m: 16, image_size: 16, ..CohortParams::default() };
        let spec = DatasetSpec::new("d", kind, n, 21, params);
        generate_dataset(&spec, &MixingMatrix::sample(16, 4), &ProceduralBackground::default()).unwrap()
    }

    #[test]
    fn step_budget() {
        let cfg = TrainConfig { epochs: 3, min_steps: 10, batch_size: 64, ..TrainConfig::default() };
        assert_eq!(cfg.total_steps(100), 10);
        assert_eq!(cfg.total_steps(1000), 48);
    }

    #[test]
    fn unlabeled_rejected() {
        let u = data(DatasetKind::U, 4);
        let r = supervised_train::<f32>(&u, &tiny_cfg(), TokenFilter::All, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Unlabeled(_))));
    }

    #[test]
    fn jepa_strategy_requires_init() {
        let f = data(DatasetKind::F, 10);
        let s = Strategy { kind: StrategyKind::JepaUThenF, f_size: 10, encoder_lr: 1e-3, head_lr: 1e-3 };
        assert!(matches!(
            finetune_from::<f32>(None, &f, &s, &tiny_cfg(), &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frozen_encoder_stays_put() {
        let f = data(DatasetKind::F, 20);
        let init: Model<f32> = Model::new(tiny_cfg(), 5).unwrap();
        let s = Strategy { kind: StrategyKind::JepaUThenF, f_size: 20, encoder_lr: 0.0, head_lr: 1e-2 };
        let cfg = TrainConfig { min_steps: 5, epochs: 1, batch_size: 8, eval_every: 2, ..TrainConfig::default() };
        let fit = finetune_from(Some(&init.encoder), &f, &s, &tiny_cfg(), &cfg).unwrap();
        assert!(fit.model.encoder.values_equal(&init.encoder));
        assert!(!fit.model.head.values_equal(&init.head));
    }

    #[test]
    fn imaging_only_ignores_expression() {
        let model: Model<f64> = Model::new(tiny_cfg(), 2).unwrap();
        let mut s = data(DatasetKind::T, 1).subjects.remove(0);
        let a = predict(&model, &s, TokenFilter::ImagingOnly).unwrap();
        s.expression.as_mut().unwrap().iter_mut().for_each(|v| *v += 3.0);
        let b = predict(&model, &s, TokenFilter::ImagingOnly).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        s.expression = None;
        let c = predict(&model, &s, TokenFilter::ExpressionOnly).unwrap();
        assert_eq!(c, Prediction { score: 0.5, fallback: true });
    }

    #[test]
    fn memorizes_a_small_set() {
        let f = data(DatasetKind::F, 50);
        let cfg = TrainConfig { min_steps: 400, batch_size: 50, lr: 3e-3, holdout: false, ..TrainConfig::default() };
        let fit = supervised_train::<f32>(&f, &tiny_cfg(), TokenFilter::All, &cfg).unwrap();
        assert_eq!(fit.log.best_step, 400);
        let refs: Vec<&Subject> = f.subjects.iter().collect();
        let scores: Vec<f64> =
            predict_all(&fit.model, &refs, TokenFilter::All).unwrap().iter().map(|p| p.score).collect();
        assert!(auc(&scores, &f.labels()).unwrap() >= 0.99);
    }
}

//! Multimodal encoder stack.
//!
//! Frames pass through a small strided CNN and expressions through a linear
//! map; both land in a shared `d_model` token space where a sinusoidal
//! encoding of the scan time and a learned modality embedding are added.
//! A pre-norm transformer encodes each subject's tokens. The predictor
//! completes masked positions from context for JEPA pretraining, and a
//! mean-pooled MLP head produces the classification logit.
//!
//! Weights are kept in three [`ParamStore`]s (encoder, predictor, head) so
//! optimizers, EMA updates and checkpoints can address each separately.

mod batch;
mod layout;
pub mod nets;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Segment, Tensor};
use crate::rng;
use crate::synthcohort::Subject;

pub use batch::{token_count, token_plan, Modality, TokenBatch, TokenFilter, TokenSource};
pub use layout::{
    encoder_ids, head_ids, predictor_ids, BlockIds, EncoderIds, HeadIds, LinearIds, NormIds, PredictorIds,
};
pub use nets::QueryLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub predictor_layers: usize,
    pub image_channels: Vec<usize>,
    pub expression_dim: usize,
    pub max_tokens: usize,
    pub image_size: usize,
    /// Multiplies timestamps before the sinusoidal encoding.
    pub time_scale: f64,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            predictor_layers: 1,
            image_channels: vec![8, 16, 32],
            expression_dim: 128,
            max_tokens: 16,
            image_size: 32,
            time_scale: 10.0,
            head_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad("d_model must be positive and even");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_layers == 0 || self.predictor_layers == 0 || self.d_ff == 0 || self.head_hidden == 0 {
            return bad("layer counts and widths must be positive");
        }
        if self.image_channels.is_empty() || self.image_channels.contains(&0) {
            return bad("image_channels must be non-empty and positive");
        }
        if self.expression_dim == 0 || self.max_tokens == 0 || self.image_size == 0 {
            return bad("expression_dim, max_tokens and image_size must be positive");
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return bad("time_scale must be positive");
        }
        Ok(())
    }
}

/// Continuous sinusoidal encoding: pairs `(sin, cos)` of `t·scale·ω_i` with
/// `ω_i = 10000^(−2i/d)`.
pub fn time_encoding(t: f64, d: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let w = libm::pow(10000.0, -(2.0 * i as f64) / d as f64);
        let (s, c) = libm::sincos(t * scale * w);
        out.push(s);
        out.push(c);
    }
    out
}

/// A subject as encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<S> {
    /// `[n, d_model]`.
    pub tokens: Tensor<S>,
    pub timestamps: Vec<f32>,
    pub modalities: Vec<Modality>,
    pub mask_flags: Vec<bool>,
}

impl<S: Scalar> TokenSequence<S> {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.timestamps.len();
        if self.tokens.rows() != n || self.modalities.len() != n || self.mask_flags.len() != n {
            return Err(Error::Shape("token sequence fields differ in length".into()));
        }
        if self.tokens.cols() != cfg.d_model {
            return Err(Error::Shape(format!("tokens of width {}, expected {}", self.tokens.cols(), cfg.d_model)));
        }
        if n > cfg.max_tokens {
            return Err(Error::Contract(format!("{n} tokens exceed max_tokens {}", cfg.max_tokens)));
        }
        if self.mask_flags.iter().all(|&m| m) {
            return Err(Error::Empty("token sequence with no unmasked token".into()));
        }
        Ok(())
    }

    pub fn unmasked(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.mask_flags[i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    cfg: ModelConfig,
    pub encoder: ParamStore<S>,
    pub predictor: ParamStore<S>,
    pub head: ParamStore<S>,
    enc_ids: EncoderIds,
    pred_ids: PredictorIds,
    head_ids: HeadIds,
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let base = rng::derive(seed, b"init");
        let encoder = layout::encoder_layout(&cfg).init(&mut rng::stream(base, 0));
        let predictor = layout::predictor_layout(&cfg).init(&mut rng::stream(base, 1));
        let head = layout::head_layout(&cfg).init(&mut rng::stream(base, 2));
        Self::from_stores(cfg, encoder, predictor, head)
    }

    pub fn from_stores(
        cfg: ModelConfig,
        encoder: ParamStore<S>,
        predictor: ParamStore<S>,
        head: ParamStore<S>,
    ) -> Result<Self> {
        cfg.validate()?;
        let enc_ids = encoder_ids(&encoder, &cfg)?;
        let pred_ids = predictor_ids(&predictor, &cfg)?;
        let head_ids = head_ids(&head, &cfg)?;
        Ok(Self { cfg, encoder, predictor, head, enc_ids, pred_ids, head_ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn enc_ids(&self) -> &EncoderIds {
        &self.enc_ids
    }

    pub fn pred_ids(&self) -> &PredictorIds {
        &self.pred_ids
    }

    pub fn head_ids(&self) -> &HeadIds {
        &self.head_ids
    }

    /// Fresh classifier head drawn from `seed`.
    pub fn reinit_head(&mut self, seed: u64) {
        self.head = layout::head_layout(&self.cfg).init(&mut rng::stream(rng::derive(seed, b"head"), 0));
    }

    /// Replaces the encoder weights; the structure must match.
    pub fn set_encoder(&mut self, encoder: ParamStore<S>) -> Result<()> {
        encoder_ids(&encoder, &self.cfg)?;
        self.encoder = encoder;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            cfg: self.cfg.clone(),
            encoder: self.encoder.cast(),
            predictor: self.predictor.cast(),
            head: self.head.cast(),
            enc_ids: self.enc_ids.clone(),
            pred_ids: self.pred_ids.clone(),
            head_ids: self.head_ids,
        }
    }

    /// CNN feature vector of one `image_size²` frame.
    pub fn encode_image(&self, frame: &[f32]) -> Result<Vec<S>> {
        let n = self.cfg.image_size;
        if frame.len() != n * n {
            return Err(Error::Shape(format!("frame of {} pixels, expected {}", frame.len(), n * n)));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, n, n], frame.iter().map(|&v| S::c(v as f64)).collect())?);
        let y = nets::cnn(&mut g, &self.encoder, &self.enc_ids, x)?;
        Ok(g.value(y)?.data().to_vec())
    }

    pub fn tokenize(&self, subject: &Subject, filter: TokenFilter) -> Result<TokenSequence<S>> {
        let batch = TokenBatch::build(&[subject], filter, self.cfg.image_size, self.cfg.expression_dim)?;
        let mut g = Graph::new();
        let x = nets::embed(&mut g, &self.encoder, &self.enc_ids, &self.cfg, &batch)?;
        let seq = TokenSequence {
            tokens: g.value(x)?.clone(),
            mask_flags: vec![false; batch.n_tokens()],
            timestamps: batch.times,
            modalities: batch.modalities,
        };
        seq.validate(&self.cfg)?;
        Ok(seq)
    }

    /// Encodes `seq` with `weights` (the context encoder or a target copy).
    /// With `use_only_unmasked`, masked rows are dropped from input and output.
    pub fn forward_encoder(
        &self,
        weights: &ParamStore<S>,
        seq: &TokenSequence<S>,
        use_only_unmasked: bool,
    ) -> Result<Tensor<S>> {
        weights.check_same_structure(&self.encoder)?;
        let keep: Vec<usize> = if use_only_unmasked { seq.unmasked() } else { (0..seq.len()).collect() };
        if keep.is_empty() {
            return Err(Error::Empty("no tokens retained for the encoder".into()));
        }
        let mut g = Graph::new();
        let all = g.constant(seq.tokens.clone());
        let x = g.gather_rows(all, &keep)?;
        let y = nets::encode(&mut g, weights, &self.enc_ids, &self.cfg, x, &[Segment::new(0, keep.len())])?;
        Ok(g.value(y)?.clone())
    }

    /// Predictions for mask queries `(timestamp, modality)` given one
    /// subject's context representations.
    pub fn predict_masked(&self, context: &Tensor<S>, queries: &[(f32, Modality)]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let c = g.constant(context.clone());
        let layout = QueryLayout {
            times: queries.iter().map(|q| q.0).collect(),
            modalities: queries.iter().map(|q| q.1).collect(),
            segments: vec![Segment::new(0, queries.len())],
        };
        let y = nets::predict(
            &mut g,
            &self.predictor,
            &self.pred_ids,
            &self.cfg,
            c,
            &[Segment::new(0, context.rows())],
            &layout,
        )?;
        Ok(g.value(y)?.clone())
    }

    /// Logit of one subject's representations.
    pub fn classify(&self, reps: &Tensor<S>) -> Result<S> {
        let mut g = Graph::new();
        let r = g.constant(reps.clone());
        let z = nets::classify(&mut g, &self.head, &self.head_ids, r, &[Segment::new(0, reps.rows())])?;
        g.value(z)?.item()
    }

    /// Batched logits; every subject must have at least one token under
    /// `filter`.
    pub fn logits(&self, subjects: &[&Subject], filter: TokenFilter) -> Result<Vec<S>> {
        let batch = TokenBatch::build(subjects, filter, self.cfg.image_size, self.cfg.expression_dim)?;
        let mut g = Graph::new();
        let x = nets::embed(&mut g, &self.encoder, &self.enc_ids, &self.cfg, &batch)?;
        let r = nets::encode(&mut g, &self.encoder, &self.enc_ids, &self.cfg, x, &batch.segments)?;
        let z = nets::classify(&mut g, &self.head, &self.head_ids, r, &batch.segments)?;
        Ok(g.value(z)?.data().to_vec())
    }
}

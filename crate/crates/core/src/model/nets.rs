//! Graph-building forward passes. Every function records onto a caller-owned
//! [`Graph`], so the same code serves training, evaluation and gradient
//! checks.

use alloc::vec;
use alloc::vec::Vec;

use super::batch::{Modality, TokenBatch, TokenSource};
use super::layout::{BlockIds, EncoderIds, HeadIds, LinearIds, NormIds, PredictorIds};
use super::{time_encoding, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Segment, Tensor, Var};

pub fn linear<S: Scalar>(g: &mut Graph<S>, st: &ParamStore<S>, ids: LinearIds, x: Var) -> Result<Var> {
    let w = g.param(st, ids.w);
    let b = g.param(st, ids.b);
    g.linear(x, w, b)
}

pub fn norm<S: Scalar>(g: &mut Graph<S>, st: &ParamStore<S>, ids: NormIds, x: Var) -> Result<Var> {
    let gamma = g.param(st, ids.g);
    let beta = g.param(st, ids.b);
    g.layer_norm(x, gamma, beta)
}

/// Pre-norm transformer block over segment-packed rows.
pub fn block<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    b: &BlockIds,
    x: Var,
    segments: &[Segment],
    heads: usize,
) -> Result<Var> {
    let h = norm(g, st, b.ln1, x)?;
    let q = linear(g, st, b.q, h)?;
    let wk = g.param(st, b.k);
    let k = g.matmul(h, wk)?;
    let v = linear(g, st, b.v, h)?;
    let a = g.attention(q, k, v, segments, heads)?;
    let a = linear(g, st, b.o, a)?;
    let x = g.add(x, a)?;
    let h = norm(g, st, b.ln2, x)?;
    let f = linear(g, st, b.ff1, h)?;
    let f = g.gelu(f)?;
    let f = linear(g, st, b.ff2, f)?;
    g.add(x, f)
}

/// `[n, 1, h, w] -> [n, channels.last()]`.
pub fn cnn<S: Scalar>(g: &mut Graph<S>, st: &ParamStore<S>, ids: &EncoderIds, frames: Var) -> Result<Var> {
    let mut x = frames;
    for c in &ids.convs {
        let w = g.param(st, c.w);
        let b = g.param(st, c.b);
        x = g.conv2d(x, w, b, 2, 1)?;
        x = g.relu(x)?;
    }
    g.global_avg_pool(x)
}

fn time_rows<S: Scalar>(times: &[f32], cfg: &ModelConfig) -> Tensor<S> {
    let d = cfg.d_model;
    let mut data = Vec::with_capacity(times.len() * d);
    for &t in times {
        data.extend(time_encoding(t as f64, d, cfg.time_scale).into_iter().map(S::c));
    }
    Tensor::from_vec(&[times.len(), d], data).expect("finite encodings")
}

/// `time encoding + modality embedding` for each row, `[t, d]`.
fn position_rows<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    modality_table: crate::numerics::ParamId,
    times: &[f32],
    modalities: &[Modality],
    cfg: &ModelConfig,
) -> Result<Var> {
    let te = g.constant(time_rows(times, cfg));
    let table = g.param(st, modality_table);
    let idx: Vec<usize> = modalities.iter().map(|m| m.index()).collect();
    let me = g.gather_rows(table, &idx)?;
    g.add(te, me)
}

/// Projected tokens with time and modality encodings, `[tokens, d]`.
pub fn embed<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    ids: &EncoderIds,
    cfg: &ModelConfig,
    batch: &TokenBatch<S>,
) -> Result<Var> {
    let img = match &batch.frames {
        Some(f) => {
            let x = g.constant(f.clone());
            let feats = cnn(g, st, ids, x)?;
            Some(linear(g, st, ids.img_proj, feats)?)
        }
        None => None,
    };
    let expr = match &batch.expressions {
        Some(e) => {
            let x = g.constant(e.clone());
            Some(linear(g, st, ids.expr_proj, x)?)
        }
        None => None,
    };
    let nf = batch.frames.as_ref().map_or(0, |f| f.shape()[0]);
    let rows = match (img, expr) {
        (Some(a), Some(b)) => g.concat_rows(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::Empty("batch without tokens".into())),
    };
    let idx: Vec<usize> = batch
        .sources
        .iter()
        .map(|s| match *s {
            TokenSource::Frame(i) => i,
            TokenSource::Expression(j) => nf + j,
        })
        .collect();
    let tokens = g.gather_rows(rows, &idx)?;
    let pos = position_rows(g, st, ids.modality, &batch.times, &batch.modalities, cfg)?;
    g.add(tokens, pos)
}

/// Transformer stack plus final norm over already-embedded rows.
pub fn encode<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    ids: &EncoderIds,
    cfg: &ModelConfig,
    x: Var,
    segments: &[Segment],
) -> Result<Var> {
    let mut x = x;
    for b in &ids.blocks {
        x = block(g, st, b, x, segments, cfg.n_heads)?;
    }
    norm(g, st, ids.ln_f, x)
}

/// Mask queries of one batch, laid out subject by subject in the same order
/// as the context segments.
#[derive(Debug, Clone, Default)]
pub struct QueryLayout {
    pub times: Vec<f32>,
    pub modalities: Vec<Modality>,
    pub segments: Vec<Segment>,
}

/// Predicted representations of every mask query, `[queries, d]`.
pub fn predict<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    ids: &PredictorIds,
    cfg: &ModelConfig,
    context: Var,
    context_segments: &[Segment],
    queries: &QueryLayout,
) -> Result<Var> {
    let nq = queries.times.len();
    if nq == 0 {
        return Err(Error::Empty("predictor called without masked positions".into()));
    }
    if context_segments.len() != queries.segments.len() {
        return Err(Error::Shape("context and query segment counts differ".into()));
    }
    let nc = g.shape(context)?[0];
    let ctx = linear(g, st, ids.ctx_proj, context)?;
    let mask = g.param(st, ids.mask);
    let q = g.gather_rows(mask, &vec![0; nq])?;
    let pos = position_rows(g, st, ids.modality, &queries.times, &queries.modalities, cfg)?;
    let q = g.add(q, pos)?;
    let all = g.concat_rows(ctx, q)?;

    let mut order = Vec::with_capacity(nc + nq);
    let mut segments = Vec::with_capacity(context_segments.len());
    let mut query_rows = Vec::with_capacity(nq);
    for (cs, qs) in context_segments.iter().zip(&queries.segments) {
        let start = order.len();
        order.extend(cs.range());
        query_rows.extend(order.len()..order.len() + qs.len);
        order.extend(qs.range().map(|r| nc + r));
        segments.push(Segment::new(start, order.len() - start));
    }
    let mut x = g.gather_rows(all, &order)?;
    for b in &ids.blocks {
        x = block(g, st, b, x, &segments, cfg.n_heads)?;
    }
    let x = norm(g, st, ids.ln_f, x)?;
    let x = g.gather_rows(x, &query_rows)?;
    linear(g, st, ids.out_proj, x)
}

/// Mean-pooled two-layer classifier, one logit per segment, `[segments]`.
pub fn classify<S: Scalar>(
    g: &mut Graph<S>,
    st: &ParamStore<S>,
    ids: &HeadIds,
    reps: Var,
    segments: &[Segment],
) -> Result<Var> {
    let pooled = g.segment_mean(reps, segments)?;
    let h = linear(g, st, ids.fc1, pooled)?;
    let h = g.gelu(h)?;
    let z = linear(g, st, ids.fc2, h)?;
    g.reshape(z, &[segments.len()])
}

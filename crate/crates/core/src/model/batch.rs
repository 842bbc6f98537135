use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Segment, Tensor};
use crate::synthcohort::Subject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Expression,
}

impl Modality {
    pub fn index(self) -> usize {
        match self {
            Modality::Image => 0,
            Modality::Expression => 1,
        }
    }
}

/// Which modalities a subject contributes as tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFilter {
    #[default]
    All,
    ImagingOnly,
    ExpressionOnly,
}

impl TokenFilter {
    pub fn keeps(self, m: Modality) -> bool {
        match self {
            TokenFilter::All => true,
            TokenFilter::ImagingOnly => m == Modality::Image,
            TokenFilter::ExpressionOnly => m == Modality::Expression,
        }
    }
}

/// Tokens of `subject`: one per frame, then one for the expression if
/// present. Expression tokens carry the first scan's timestamp.
pub fn token_plan(subject: &Subject, filter: TokenFilter) -> Vec<(TokenSource, f32, Modality)> {
    let mut out = Vec::with_capacity(subject.frames.len() + 1);
    if filter.keeps(Modality::Image) {
        for (i, &t) in subject.timestamps.iter().enumerate() {
            out.push((TokenSource::Frame(i), t, Modality::Image));
        }
    }
    if filter.keeps(Modality::Expression) && subject.expression.is_some() {
        out.push((TokenSource::Expression(0), subject.timestamps[0], Modality::Expression));
    }
    out
}

pub fn token_count(subject: &Subject, filter: TokenFilter) -> usize {
    let frames = if filter.keeps(Modality::Image) { subject.frames.len() } else { 0 };
    let expr = (filter.keeps(Modality::Expression) && subject.expression.is_some()) as usize;
    frames + expr
}

/// Where a token's content comes from, indexed within its batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    Frame(usize),
    Expression(usize),
}

/// Subjects packed for one forward pass: all frames stacked for the CNN,
/// all expressions stacked for their projection, and the token rows of
/// every subject laid out contiguously.
#[derive(Debug, Clone)]
pub struct TokenBatch<S> {
    /// `[n_frames, 1, h, w]`.
    pub frames: Option<Tensor<S>>,
    /// `[n_expressions, m]`.
    pub expressions: Option<Tensor<S>>,
    pub sources: Vec<TokenSource>,
    pub times: Vec<f32>,
    pub modalities: Vec<Modality>,
    pub segments: Vec<Segment>,
}

impl<S: Scalar> TokenBatch<S> {
    /// Every subject must yield at least one token under `filter`.
    pub fn build(subjects: &[&Subject], filter: TokenFilter, image_size: usize, m: usize) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Empty("token batch with no subjects".into()));
        }
        let px = image_size * image_size;
        let mut frames: Vec<S> = Vec::new();
        let mut exprs: Vec<S> = Vec::new();
        let (mut nf, mut ne) = (0usize, 0usize);
        let mut sources = Vec::new();
        let mut times = Vec::new();
        let mut modalities = Vec::new();
        let mut segments = Vec::with_capacity(subjects.len());
        for (si, s) in subjects.iter().enumerate() {
            let plan = token_plan(s, filter);
            if plan.is_empty() {
                return Err(Error::Empty(format!("subject at batch position {si} has no tokens")));
            }
            segments.push(Segment::new(sources.len(), plan.len()));
            for (src, t, modality) in plan {
                let src = match src {
                    TokenSource::Frame(i) => {
                        let f = &s.frames[i];
                        if f.len() != px {
                            return Err(Error::Shape(format!("frame of {} pixels, expected {px}", f.len())));
                        }
                        frames.extend(f.iter().map(|&v| S::c(v as f64)));
                        nf += 1;
                        TokenSource::Frame(nf - 1)
                    }
                    TokenSource::Expression(_) => {
                        let e = s.expression.as_ref().expect("planned expression");
                        if e.len() != m {
                            return Err(Error::Shape(format!("expression of length {}, expected {m}", e.len())));
                        }
                        exprs.extend(e.iter().map(|&v| S::c(v as f64)));
                        ne += 1;
                        TokenSource::Expression(ne - 1)
                    }
                };
                sources.push(src);
                times.push(t);
                modalities.push(modality);
            }
        }
        let frames = if nf > 0 { Some(Tensor::from_vec(&[nf, 1, image_size, image_size], frames)?) } else { None };
        let expressions = if ne > 0 { Some(Tensor::from_vec(&[ne, m], exprs)?) } else { None };
        Ok(Self { frames, expressions, sources, times, modalities, segments })
    }

    pub fn n_tokens(&self) -> usize {
        self.sources.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.segments.len()
    }
}

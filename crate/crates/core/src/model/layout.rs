//! Parameter layouts. Each sub-network is described once as a list of named
//! shapes; the same list initializes fresh stores and validates loaded ones.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{init, ParamId, ParamStore, Scalar, Tensor};
use crate::rng::Rng;

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Embedding,
    Zeros,
    Ones,
}

pub(crate) struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
pub(crate) struct Layout(pub Vec<Entry>);

impl Layout {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(Entry { name, shape: shape.to_vec(), init });
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.w"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out });
        self.push(format!("{prefix}.b"), &[fan_out], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.g"), &[d], Init::Ones);
        self.push(format!("{prefix}.b"), &[d], Init::Zeros);
    }

    fn block(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.norm(&format!("{prefix}.ln1"), d);
        self.linear(&format!("{prefix}.q"), d, d);
        // Keys carry no bias: softmax is invariant to it.
        self.push(format!("{prefix}.k.w"), &[d, d], Init::Xavier { fan_in: d, fan_out: d });
        self.linear(&format!("{prefix}.v"), d, d);
        self.linear(&format!("{prefix}.o"), d, d);
        self.norm(&format!("{prefix}.ln2"), d);
        self.linear(&format!("{prefix}.ff1"), d, d_ff);
        self.linear(&format!("{prefix}.ff2"), d_ff, d);
    }

    pub fn init<S: Scalar>(&self, rng: &mut Rng) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for e in &self.0 {
            let t = match e.init {
                Init::Xavier { fan_in, fan_out } => init::xavier_uniform(rng, &e.shape, fan_in, fan_out),
                Init::Embedding => init::normal(rng, &e.shape, init::EMBEDDING_STD),
                Init::Zeros => Tensor::zeros(&e.shape),
                Init::Ones => Tensor::full(&e.shape, S::one()),
            };
            store.add(&e.name, t);
        }
        store
    }

    /// Checks that `store` holds exactly these names and shapes, in order.
    pub fn check<S: Scalar>(&self, store: &ParamStore<S>, what: &str) -> Result<()> {
        if store.len() != self.0.len() {
            return Err(Error::Structure(format!("{what}: {} parameters, expected {}", store.len(), self.0.len())));
        }
        for (id, e) in store.ids().zip(&self.0) {
            if store.name(id) != e.name || store.value(id).shape() != e.shape.as_slice() {
                return Err(Error::Structure(format!(
                    "{what}: `{}` {:?}, expected `{}` {:?}",
                    store.name(id),
                    store.value(id).shape(),
                    e.name,
                    e.shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1: NormIds,
    pub q: LinearIds,
    pub k: ParamId,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ln2: NormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderIds {
    pub convs: Vec<LinearIds>,
    pub img_proj: LinearIds,
    pub expr_proj: LinearIds,
    pub modality: ParamId,
    pub blocks: Vec<BlockIds>,
    pub ln_f: NormIds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorIds {
    pub ctx_proj: LinearIds,
    pub mask: ParamId,
    pub modality: ParamId,
    pub blocks: Vec<BlockIds>,
    pub ln_f: NormIds,
    pub out_proj: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIds {
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

struct Finder<'a, S> {
    store: &'a ParamStore<S>,
}

impl<S: Scalar> Finder<'_, S> {
    fn id(&self, name: &str) -> Result<ParamId> {
        self.store.find(name).ok_or_else(|| Error::Structure(format!("missing parameter `{name}`")))
    }

    fn linear(&self, p: &str) -> Result<LinearIds> {
        Ok(LinearIds { w: self.id(&format!("{p}.w"))?, b: self.id(&format!("{p}.b"))? })
    }

    fn norm(&self, p: &str) -> Result<NormIds> {
        Ok(NormIds { g: self.id(&format!("{p}.g"))?, b: self.id(&format!("{p}.b"))? })
    }

    fn block(&self, p: &str) -> Result<BlockIds> {
        Ok(BlockIds {
            ln1: self.norm(&format!("{p}.ln1"))?,
            q: self.linear(&format!("{p}.q"))?,
            k: self.id(&format!("{p}.k.w"))?,
            v: self.linear(&format!("{p}.v"))?,
            o: self.linear(&format!("{p}.o"))?,
            ln2: self.norm(&format!("{p}.ln2"))?,
            ff1: self.linear(&format!("{p}.ff1"))?,
            ff2: self.linear(&format!("{p}.ff2"))?,
        })
    }
}

pub(crate) fn encoder_layout(cfg: &ModelConfig) -> Layout {
    let mut l = Layout::default();
    let mut c_in = 1;
    for (i, &c) in cfg.image_channels.iter().enumerate() {
        l.push(format!("cnn.{i}.w"), &[c, c_in, 3, 3], Init::Xavier { fan_in: c_in * 9, fan_out: c * 9 });
        l.push(format!("cnn.{i}.b"), &[c], Init::Zeros);
        c_in = c;
    }
    let d = cfg.d_model;
    l.linear("img_proj", c_in, d);
    l.linear("expr_proj", cfg.expression_dim, d);
    l.push("modality".into(), &[2, d], Init::Embedding);
    for i in 0..cfg.n_layers {
        l.block(&format!("block.{i}"), d, cfg.d_ff);
    }
    l.norm("ln_f", d);
    l
}

pub(crate) fn predictor_layout(cfg: &ModelConfig) -> Layout {
    let d = cfg.d_model;
    let mut l = Layout::default();
    l.linear("ctx_proj", d, d);
    l.push("mask".into(), &[1, d], Init::Embedding);
    l.push("modality".into(), &[2, d], Init::Embedding);
    for i in 0..cfg.predictor_layers {
        l.block(&format!("block.{i}"), d, cfg.d_ff);
    }
    l.norm("ln_f", d);
    l.linear("out_proj", d, d);
    l
}

pub(crate) fn head_layout(cfg: &ModelConfig) -> Layout {
    let mut l = Layout::default();
    l.linear("fc1", cfg.d_model, cfg.head_hidden);
    l.linear("fc2", cfg.head_hidden, 1);
    l
}

pub fn encoder_ids<S: Scalar>(store: &ParamStore<S>, cfg: &ModelConfig) -> Result<EncoderIds> {
    encoder_layout(cfg).check(store, "encoder")?;
    let f = Finder { store };
    Ok(EncoderIds {
        convs: (0..cfg.image_channels.len()).map(|i| f.linear(&format!("cnn.{i}"))).collect::<Result<_>>()?,
        img_proj: f.linear("img_proj")?,
        expr_proj: f.linear("expr_proj")?,
        modality: f.id("modality")?,
        blocks: (0..cfg.n_layers).map(|i| f.block(&format!("block.{i}"))).collect::<Result<_>>()?,
        ln_f: f.norm("ln_f")?,
    })
}

pub fn predictor_ids<S: Scalar>(store: &ParamStore<S>, cfg: &ModelConfig) -> Result<PredictorIds> {
    predictor_layout(cfg).check(store, "predictor")?;
    let f = Finder { store };
    Ok(PredictorIds {
        ctx_proj: f.linear("ctx_proj")?,
        mask: f.id("mask")?,
        modality: f.id("modality")?,
        blocks: (0..cfg.predictor_layers).map(|i| f.block(&format!("block.{i}"))).collect::<Result<_>>()?,
        ln_f: f.norm("ln_f")?,
        out_proj: f.linear("out_proj")?,
    })
}

pub fn head_ids<S: Scalar>(store: &ParamStore<S>, cfg: &ModelConfig) -> Result<HeadIds> {
    head_layout(cfg).check(store, "head")?;
    let f = Finder { store };
    Ok(HeadIds { fc1: f.linear("fc1")?, fc2: f.linear("fc2")? })
}

//! Weight files: `"MJPK"`, a `u16` format version, a `u32` header length,
//! a JSON header, then little-endian tensor payloads. The header maps each
//! tensor name to its dtype, shape and payload byte offset. Names are
//! `group/parameter`, with `#adam_m` / `#adam_v` suffixes for optimizer
//! moments, so training resumes bit-identically.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use synthjepa_core::jepa::{JepaConfig, JepaState};
use synthjepa_core::model::{Model, ModelConfig};
use synthjepa_core::numerics::{DType, ParamStore, Scalar, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MJPK";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step_count: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Map<String, Value>,
}

/// Named parameter groups plus free-form metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<S: Scalar> {
    pub meta: Value,
    pub groups: Vec<(String, ParamStore<S>)>,
}

const SUFFIXES: [&str; 2] = ["#adam_m", "#adam_v"];

impl<S: Scalar> Checkpoint<S> {
    pub fn group(&self, name: &str) -> Option<&ParamStore<S>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Map::new();
        let mut payload: Vec<u8> = Vec::new();
        for (group, store) in &self.groups {
            for (name, p) in store.iter() {
                let full = format!("{group}/{name}");
                let parts = [(&p.value, Some(p.step_count)), (&p.adam_m, None), (&p.adam_v, None)];
                for (i, (t, steps)) in parts.into_iter().enumerate() {
                    let key = if i == 0 { full.clone() } else { format!("{full}{}", SUFFIXES[i - 1]) };
                    let e = Entry {
                        dtype: S::DTYPE,
                        shape: t.shape().to_vec(),
                        offset: payload.len() as u64,
                        step_count: steps,
                    };
                    push_le(&mut payload, t.data());
                    tensors.insert(key, serde_json::to_value(e)?);
                }
            }
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), tensors })?;
        let mut out = Vec::with_capacity(10 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses a checkpoint whose tensors are stored as `S`; `path` only
    /// labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (missing MJPK magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = 10 + hlen;
        if bytes.len() < body {
            return Err(bad(format!("header of {hlen} bytes runs past end of file")));
        }
        let header: Header = serde_json::from_slice(&bytes[10..body]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[body..];
        let mut groups: Vec<(String, ParamStore<S>)> = Vec::new();
        for (key, v) in &header.tensors {
            let e: Entry = serde_json::from_value(v.clone()).map_err(|err| bad(format!("entry `{key}`: {err}")))?;
            if e.dtype != S::DTYPE {
                return Err(bad(format!("`{key}` is {}, expected {}", e.dtype.name(), S::DTYPE.name())));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * S::DTYPE.size_of();
            if end > payload.len() {
                return Err(bad(format!("`{key}` payload at byte offset {} runs past end of file", body + start)));
            }
            let t = Tensor::from_vec(&e.shape, read_le::<S>(&payload[start..end]))
                .map_err(|err| bad(format!("`{key}`: {err}")))?;
            let (full, suffix) = match SUFFIXES.iter().find(|s| key.ends_with(*s)) {
                Some(s) => (&key[..key.len() - s.len()], Some(*s)),
                None => (key.as_str(), None),
            };
            let (group, name) = full.split_once('/').ok_or_else(|| bad(format!("tensor `{key}` has no group")))?;
            if groups.last().is_none_or(|(g, _)| g != group) {
                if groups.iter().any(|(g, _)| g == group) {
                    return Err(bad(format!("group `{group}` is not contiguous")));
                }
                groups.push((group.to_string(), ParamStore::new()));
            }
            let store = &mut groups.last_mut().expect("pushed above").1;
            match suffix {
                None => {
                    let id = store.add(name, t);
                    store.param_mut(id).step_count = e.step_count.unwrap_or(0);
                }
                Some(sfx) => {
                    let id = store.find(name).ok_or_else(|| bad(format!("`{key}` precedes its parameter")))?;
                    let p = store.param_mut(id);
                    if t.shape() != p.value.shape() {
                        return Err(bad(format!("`{key}` shape differs from its parameter")));
                    }
                    if sfx == SUFFIXES[0] {
                        p.adam_m = t;
                    } else {
                        p.adam_v = t;
                    }
                }
            }
        }
        Ok(Self { meta: header.meta, groups })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        crate::reports::ensure_parent(path)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn push_le<S: Scalar>(out: &mut Vec<u8>, data: &[S]) {
    match S::DTYPE {
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        DType::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

fn read_le<S: Scalar>(bytes: &[u8]) -> Vec<S> {
    match S::DTYPE {
        DType::F32 => {
            bytes.chunks_exact(4).map(|c| S::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect()
        }
        DType::F64 => bytes.chunks_exact(8).map(|c| S::c(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect(),
    }
}

fn model_config(meta: &Value, path: &Path) -> Result<ModelConfig> {
    let v = meta.get("model_config").ok_or_else(|| Error::format(path, "metadata lacks model_config"))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::format(path, format!("model_config: {e}")))
}

fn take<S: Scalar>(ck: &mut Checkpoint<S>, group: &str, path: &Path) -> Result<ParamStore<S>> {
    let i = ck
        .groups
        .iter()
        .position(|(g, _)| g == group)
        .ok_or_else(|| Error::format(path, format!("missing parameter group `{group}`")))?;
    Ok(ck.groups.remove(i).1)
}

/// Saves a full model: encoder, predictor and head.
pub fn save_model<S: Scalar>(path: &Path, model: &Model<S>, extra: Value) -> Result<()> {
    let meta = serde_json::json!({ "kind": "model", "model_config": model.config(), "extra": extra });
    let groups = vec![
        ("encoder".to_string(), model.encoder.clone()),
        ("predictor".to_string(), model.predictor.clone()),
        ("head".to_string(), model.head.clone()),
    ];
    Checkpoint { meta, groups }.save(path)
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<(Model<S>, Value)> {
    let mut ck = Checkpoint::<S>::load(path)?;
    let cfg = model_config(&ck.meta, path)?;
    let enc = take(&mut ck, "encoder", path)?;
    let pred = take(&mut ck, "predictor", path)?;
    let head = take(&mut ck, "head", path)?;
    let model = Model::from_stores(cfg, enc, pred, head)?;
    Ok((model, ck.meta.get("extra").cloned().unwrap_or(Value::Null)))
}

/// Saves pretraining state, including the target encoder and step count.
pub fn save_jepa<S: Scalar>(path: &Path, state: &JepaState<S>, cfg: &JepaConfig) -> Result<()> {
    let meta = serde_json::json!({
        "kind": "jepa",
        "model_config": state.model.config(),
        "jepa_config": cfg,
        "step": state.step,
    });
    let groups = vec![
        ("encoder".to_string(), state.model.encoder.clone()),
        ("predictor".to_string(), state.model.predictor.clone()),
        ("head".to_string(), state.model.head.clone()),
        ("target".to_string(), state.target.clone()),
    ];
    Checkpoint { meta, groups }.save(path)
}

pub fn load_jepa<S: Scalar>(path: &Path) -> Result<JepaState<S>> {
    let mut ck = Checkpoint::<S>::load(path)?;
    if ck.meta.get("kind").and_then(Value::as_str) != Some("jepa") {
        return Err(Error::format(path, "not a pretraining checkpoint"));
    }
    let cfg = model_config(&ck.meta, path)?;
    let step = ck.meta.get("step").and_then(Value::as_u64).ok_or_else(|| Error::format(path, "metadata lacks step"))?;
    let enc = take(&mut ck, "encoder", path)?;
    let pred = take(&mut ck, "predictor", path)?;
    let head = take(&mut ck, "head", path)?;
    let target = take(&mut ck, "target", path)?;
    Ok(JepaState::from_parts(Model::from_stores(cfg, enc, pred, head)?, target, step)?)
}

/// The context encoder of a pretraining or model checkpoint, used to
/// initialize finetuning.
pub fn load_init_encoder<S: Scalar>(path: &Path) -> Result<(ParamStore<S>, ModelConfig)> {
    let mut ck = Checkpoint::<S>::load(path)?;
    let cfg = model_config(&ck.meta, path)?;
    Ok((take(&mut ck, "encoder", path)?, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]).unwrap());
        s.add("b", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        let p = s.param_mut(a);
        p.adam_m = Tensor::from_vec(&[2, 2], vec![0.5; 4]).unwrap();
        p.adam_v = Tensor::from_vec(&[2, 2], vec![0.25; 4]).unwrap();
        p.step_count = 7;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint {
            meta: serde_json::json!({"x": 1}),
            groups: vec![("g".into(), store()), ("h".into(), store())],
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"MJPK");
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.groups.len(), 2);
        for ((_, a), (_, b)) in ck.groups.iter().zip(&back.groups) {
            for ((na, pa), (nb, pb)) in a.iter().zip(b.iter()) {
                assert_eq!(na, nb);
                assert_eq!(pa.value, pb.value);
                assert_eq!(pa.adam_m, pb.adam_m);
                assert_eq!(pa.adam_v, pb.adam_v);
                assert_eq!(pa.step_count, pb.step_count);
            }
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let ck = Checkpoint { meta: Value::Null, groups: vec![("g".into(), store())] };
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes, Path::new("x")), Err(Error::Format { .. })));
        let e = Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(e.to_string().contains("byte offset"), "{e}");
        assert!(Checkpoint::<f32>::from_bytes(b"NOPE0000000", Path::new("x")).is_err());
    }
}

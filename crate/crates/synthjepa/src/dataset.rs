//! Dataset directories: `manifest.json` plus `subjects.bin`.
//!
//! Each record of `subjects.bin` holds, in order: `u8` completeness, `u8`
//! label, `u8` frame count, the timestamps as `f32` LE, the frames as `f32`
//! LE row-major, a `u8` expression-present flag, the expression as `f32` LE,
//! then two trailing bytes: the causal profile bits and the clipped flag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use synthjepa_core::synthcohort::{
    BackgroundSource, CausalProfile, CifarBackgrounds, Dataset, DatasetSpec, MixingMatrix, ProceduralBackground,
    Subject,
};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SUBJECTS: &str = "subjects.bin";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Where lesion backgrounds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSpec {
    Procedural {
        sigma: f64,
        max: f64,
    },
    /// A CIFAR-10 binary batch file.
    Cifar {
        path: String,
    },
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        let p = ProceduralBackground::default();
        BackgroundSpec::Procedural { sigma: p.sigma, max: p.max }
    }
}

impl BackgroundSpec {
    pub fn load(&self) -> Result<Box<dyn BackgroundSource>> {
        Ok(match self {
            BackgroundSpec::Procedural { sigma, max } => Box::new(ProceduralBackground { sigma: *sigma, max: *max }),
            BackgroundSpec::Cifar { path } => Box::new(load_cifar(Path::new(path))?),
        })
    }
}

pub fn load_cifar(path: &Path) -> Result<CifarBackgrounds> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CifarBackgrounds::parse(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub mixing_seed: u64,
    pub mixing_checksum: String,
    pub background: BackgroundSpec,
    pub count: usize,
    /// Byte offset of each record in `subjects.bin`.
    pub offsets: Vec<u64>,
}

pub fn encode_subject(s: &Subject, out: &mut Vec<u8>) {
    out.push(s.complete as u8);
    out.push(s.label);
    out.push(s.frames.len() as u8);
    s.timestamps.iter().for_each(|t| out.extend_from_slice(&t.to_le_bytes()));
    s.frames.iter().flatten().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    match &s.expression {
        Some(e) => {
            out.push(1);
            e.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        None => out.push(0),
    }
    out.push(s.profile.bits());
    out.push(s.clipped as u8);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(4 * n)?;
        Some(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Decodes the record at `offset`; `None` if it runs past the end.
fn decode_subject(bytes: &[u8], offset: usize, image_size: usize, m: usize) -> Option<Subject> {
    let mut c = Cursor { bytes, pos: offset };
    let complete = c.u8()? != 0;
    let label = c.u8()?;
    let n = c.u8()? as usize;
    let timestamps = c.f32s(n)?;
    let px = image_size * image_size;
    let flat = c.f32s(n * px)?;
    let frames = flat.chunks_exact(px.max(1)).map(<[f32]>::to_vec).collect();
    let expression = if c.u8()? != 0 { Some(c.f32s(m)?) } else { None };
    let profile = CausalProfile::from_bits(c.u8()?);
    let clipped = c.u8()? != 0;
    Some(Subject { profile, image_size, frames, timestamps, expression, label, complete, clipped })
}

/// Writes `dataset` under `dir`, creating it if needed.
pub fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    mixing: &MixingMatrix,
    background: &BackgroundSpec,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bin = Vec::new();
    let mut offsets = Vec::with_capacity(dataset.len());
    for s in &dataset.subjects {
        offsets.push(bin.len() as u64);
        encode_subject(s, &mut bin);
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        spec: dataset.spec.clone(),
        mixing_seed: mixing.seed(),
        mixing_checksum: dataset.mixing_checksum.clone(),
        background: background.clone(),
        count: dataset.len(),
        offsets,
    };
    let bin_path = dir.join(SUBJECTS);
    fs::write(&bin_path, &bin).map_err(|e| Error::io(&bin_path, e))?;
    let man_path = dir.join(MANIFEST);
    fs::write(&man_path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let m: Manifest = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: path.clone(),
        pointer: crate::config::pointer(e.path()),
        msg: e.inner().to_string(),
    })?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported dataset format version {}", m.format_version)));
    }
    if m.offsets.len() != m.count {
        return Err(Error::format(&path, format!("{} offsets for {} subjects", m.offsets.len(), m.count)));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let bin_path = dir.join(SUBJECTS);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let p = &manifest.spec.params;
    let mut subjects = Vec::with_capacity(manifest.count);
    for (i, &off) in manifest.offsets.iter().enumerate() {
        let s = decode_subject(&bytes, off as usize, p.image_size, p.m)
            .ok_or_else(|| Error::format(&bin_path, format!("record {i} at byte offset {off} is truncated")))?;
        s.check().map_err(|e| Error::format(&bin_path, format!("record {i} at byte offset {off}: {e}")))?;
        subjects.push(s);
    }
    Ok(Dataset { spec: manifest.spec, mixing_checksum: manifest.mixing_checksum, subjects })
}

/// Binary PGM (`P5`, maxval ≤ 255) as an image in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<synthjepa_core::image::Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<synthjepa_core::image::Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PGM header")?.to_string());
    }
    if fields[0] != "P5" {
        return Err(format!("expected binary PGM magic P5, found {}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field `{s}`"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported, maxval {maxval}"));
    }
    pos += 1;
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| format!("expected {} pixel bytes after header", w * h))?;
    let data = pixels.iter().map(|&b| b as f64 / maxval as f64).collect();
    synthjepa_core::image::Image::new(h, w, data).map_err(|e| e.to_string())
}

//! Synthetic multimodal cohorts driven by four binary latent variables.
//!
//! Each subject draws `(G1, G2, D1, D2)`. `G1` sets the initial nodule size and
//! `G2` its growth rate, so they are visible in a series of frames; `D1` and
//! `D2` are mixed into a sparse expression vector. The label fires for exactly
//! two of the sixteen profiles. Incomplete cohorts pin `G2 = D2 = 0` and
//! carry a single frame.

mod background;
mod render;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use background::{BackgroundSource, CifarBackgrounds, ProceduralBackground, CIFAR_RECORD_LEN, CIFAR_SIDE};
pub use render::{lesion_mask, render_series, RenderConfig, RenderedSeries, Transform};

/// The four latent causes of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CausalProfile {
    pub g1: u8,
    pub g2: u8,
    pub d1: u8,
    pub d2: u8,
}

impl CausalProfile {
    pub fn new(g1: u8, g2: u8, d1: u8, d2: u8) -> Self {
        Self { g1: g1 & 1, g2: g2 & 1, d1: d1 & 1, d2: d2 & 1 }
    }

    /// All sixteen profiles in binary order `(g1 g2 d1 d2)`.
    pub fn all() -> impl Iterator<Item = CausalProfile> {
        (0u8..16).map(Self::from_bits)
    }

    pub fn bits(&self) -> u8 {
        (self.g1 << 3) | (self.g2 << 2) | (self.d1 << 1) | self.d2
    }

    pub fn from_bits(b: u8) -> Self {
        Self::new((b >> 3) & 1, (b >> 2) & 1, (b >> 1) & 1, b & 1)
    }

    pub fn as_tuple(&self) -> (u8, u8, u8, u8) {
        (self.g1, self.g2, self.d1, self.d2)
    }
}

pub fn sample_profile<R: rand::Rng>(rng: &mut R, complete: bool) -> CausalProfile {
    let mut bit = || rng.random::<bool>() as u8;
    let g1 = bit();
    let g2 = bit();
    let d1 = bit();
    let d2 = bit();
    if complete {
        CausalProfile::new(g1, g2, d1, d2)
    } else {
        CausalProfile::new(g1, 0, d1, 0)
    }
}

/// Label rule: positive iff the profile is `(1,0,1,0)` or `(0,1,0,1)`.
pub fn label(p: &CausalProfile) -> u8 {
    matches!(p.as_tuple(), (1, 0, 1, 0) | (0, 1, 0, 1)) as u8
}

/// Initial nodule size and growth rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoduleParams {
    pub s: f64,
    pub g: f64,
}

pub const SIZE_SD: f64 = 0.06;

pub fn sample_nodule_params<R: rand::Rng>(profile: &CausalProfile, rng: &mut R) -> NoduleParams {
    let s_mean = if profile.g1 == 1 { 3.0 } else { 1.0 };
    let g_mean = if profile.g2 == 1 { 1.5 } else { 0.5 };
    NoduleParams { s: positive_normal(rng, s_mean, SIZE_SD), g: positive_normal(rng, g_mean, SIZE_SD) }
}

fn positive_normal<R: rand::Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal");
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Binary `m × 2` matrix mixing `(D1, D2)` into expression space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingMatrix {
    m: usize,
    /// Row-major `m × 2`.
    a: Vec<u8>,
    seed: u64,
}

pub const MIXING_DENSITY: f64 = 0.01;

impl MixingMatrix {
    /// Bernoulli(0.01) entries. Each column is redrawn until it has a
    /// non-zero entry, otherwise that latent would be invisible in every
    /// expression of the cohort.
    pub fn sample(m: usize, seed: u64) -> Self {
        Self::sample_with(m, seed, MIXING_DENSITY, true)
    }

    pub fn sample_with(m: usize, seed: u64, density: f64, nonempty_columns: bool) -> Self {
        let mut r = rng::seeded(rng::derive(seed, b"mixing"));
        let mut a = alloc::vec![0u8; m * 2];
        for col in 0..2 {
            loop {
                for row in 0..m {
                    a[row * 2 + col] = (r.random::<f64>() < density) as u8;
                }
                if !nonempty_columns || m == 0 || (0..m).any(|row| a[row * 2 + col] == 1) {
                    break;
                }
            }
        }
        Self { m, a, seed }
    }

    pub fn from_entries(m: usize, a: Vec<u8>, seed: u64) -> Result<Self> {
        if a.len() != m * 2 || a.iter().any(|&v| v > 1) {
            return Err(Error::Shape(format!("mixing matrix needs {} binary entries", m * 2)));
        }
        Ok(Self { m, a, seed })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.a[row * 2 + col]
    }

    pub fn entries(&self) -> &[u8] {
        &self.a
    }

    pub fn density(&self) -> f64 {
        self.a.iter().map(|&v| v as f64).sum::<f64>() / self.a.len().max(1) as f64
    }

    /// FNV-1a over `m` and the entries, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Fnv::new();
        h.write(&(self.m as u64).to_le_bytes());
        h.write(&self.a);
        format!("{:016x}", h.finish())
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// How signal and noise are combined in an expression vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionWeighting {
    /// `β·signal + (1−β)·ε`.
    SignalWeighted,
    /// `(1−β)·signal + β·ε`: the noise term carries the weight `β`.
    #[default]
    NoiseWeighted,
}

/// Generation parameters shared by every dataset of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortParams {
    pub beta: f64,
    pub m: usize,
    pub image_size: usize,
    pub n_frames: usize,
    pub noise_sd: f64,
    pub weighting: ExpressionWeighting,
    pub p_snp: f64,
    pub t_max: f64,
    /// Pixels per size unit.
    pub px_per_unit: f64,
    pub max_shift: f64,
    pub lesion_intensity: f64,
    /// Fraction of subjects whose expression is withheld.
    pub p_missing_expression: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            beta: 0.01,
            m: 128,
            image_size: 32,
            n_frames: 5,
            noise_sd: 0.5,
            weighting: ExpressionWeighting::NoiseWeighted,
            p_snp: 0.02,
            t_max: 2.0,
            px_per_unit: 1.5,
            max_shift: 4.0,
            lesion_intensity: 0.9,
            p_missing_expression: 0.0,
        }
    }
}

impl CohortParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if self.m == 0 || self.n_frames == 0 {
            return bad("m and n_frames must be positive");
        }
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_snp) || !(0.0..=1.0).contains(&self.p_missing_expression) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive");
        }
        if !(self.px_per_unit > 0.0 && self.max_shift >= 0.0 && (0.0..=1.0).contains(&self.lesion_intensity)) {
            return bad("invalid lesion geometry");
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            image_size: self.image_size,
            t_max: self.t_max,
            p_snp: self.p_snp,
            px_per_unit: self.px_per_unit,
            max_shift: self.max_shift,
            intensity: self.lesion_intensity,
        }
    }
}

/// Expression vector of one subject. For incomplete subjects the centered
/// `D2` entry is the fill-in value 0.
pub fn gen_expression<R: rand::Rng>(
    profile: &CausalProfile,
    complete: bool,
    mixing: &MixingMatrix,
    params: &CohortParams,
    rng: &mut R,
) -> Vec<f32> {
    let c1 = profile.d1 as f64 - 0.5;
    let c2 = if complete { profile.d2 as f64 - 0.5 } else { 0.0 };
    let (ws, wn) = match params.weighting {
        ExpressionWeighting::SignalWeighted => (params.beta, 1.0 - params.beta),
        ExpressionWeighting::NoiseWeighted => (1.0 - params.beta, params.beta),
    };
    (0..mixing.m())
        .map(|i| {
            let signal = mixing.get(i, 0) as f64 * c1 + mixing.get(i, 1) as f64 * c2;
            let z: f64 = StandardNormal.sample(rng);
            (ws * signal + wn * params.noise_sd * z) as f32
        })
        .collect()
}

/// One generated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub profile: CausalProfile,
    pub image_size: usize,
    /// Row-major `image_size²` frames in `[0, 1]`.
    pub frames: Vec<Vec<f32>>,
    pub timestamps: Vec<f32>,
    pub expression: Option<Vec<f32>>,
    pub label: u8,
    pub complete: bool,
    /// The lesion outgrew the frame and was clipped.
    pub clipped: bool,
}

impl Subject {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.into()));
        if self.frames.is_empty() || self.frames.len() != self.timestamps.len() {
            return bad("frame/timestamp count mismatch");
        }
        if self.timestamps[0] != 0.0 || self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return bad("timestamps must start at 0 and increase strictly");
        }
        let px = self.image_size * self.image_size;
        if self.frames.iter().any(|f| f.len() != px || f.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return bad("frames must be image_size² pixels in [0,1]");
        }
        if self.label != label(&self.profile) {
            return bad("label disagrees with profile");
        }
        if !self.complete && (self.profile.g2 != 0 || self.profile.d2 != 0) {
            return bad("incomplete subject with non-zero G2/D2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetKind {
    U,
    S,
    F,
    T,
}

impl DatasetKind {
    pub fn complete(self) -> bool {
        !matches!(self, DatasetKind::S)
    }

    pub fn labeled(self) -> bool {
        !matches!(self, DatasetKind::U)
    }
}

/// What to generate: the kind fixes completeness and labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Display name, e.g. `S-test`.
    pub name: String,
    pub kind: DatasetKind,
    pub n: usize,
    pub cohort_seed: u64,
    #[serde(default)]
    pub params: CohortParams,
}

impl DatasetSpec {
    pub fn new(name: &str, kind: DatasetKind, n: usize, cohort_seed: u64, params: CohortParams) -> Self {
        Self { name: name.into(), kind, n, cohort_seed, params }
    }

    pub fn complete(&self) -> bool {
        self.kind.complete()
    }

    pub fn labeled(&self) -> bool {
        self.kind.labeled()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config(format!("dataset `{}` has n = 0", self.name)));
        }
        self.params.validate()
    }
}

/// Subject `index` of `spec`. A pure function of its arguments, so datasets
/// can be generated in any order or in parallel.
pub fn make_subject(
    spec: &DatasetSpec,
    mixing: &MixingMatrix,
    bg: &dyn BackgroundSource,
    index: u64,
) -> Result<Subject> {
    let p = &spec.params;
    if mixing.m() != p.m {
        return Err(Error::Shape(format!("mixing has m = {}, spec wants {}", mixing.m(), p.m)));
    }
    let complete = spec.complete();
    let mut r: Rng = rng::stream(spec.cohort_seed, index);
    let profile = sample_profile(&mut r, complete);
    let nodule = sample_nodule_params(&profile, &mut r);
    let n_frames = if complete { p.n_frames } else { 1 };
    let series = render_series(&nodule, bg, &mut r, n_frames, &p.render_config())?;
    let expression = gen_expression(&profile, complete, mixing, p, &mut r);
    let missing = p.p_missing_expression > 0.0 && r.random::<f64>() < p.p_missing_expression;
    Ok(Subject {
        profile,
        image_size: p.image_size,
        frames: series.frames,
        timestamps: series.timestamps,
        expression: if missing { None } else { Some(expression) },
        label: label(&profile),
        complete,
        clipped: series.clipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub mixing_checksum: String,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn prevalence(&self) -> f64 {
        self.subjects.iter().map(|s| s.label as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// The first `n` subjects, used for nested finetune subsets.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let mut spec = self.spec.clone();
        spec.n = n;
        Dataset { spec, mixing_checksum: self.mixing_checksum.clone(), subjects: self.subjects[..n].to_vec() }
    }

    /// Splits by `index % modulus == residue` into (rest, selected).
    pub fn split_modulo(&self, modulus: usize, residue: usize) -> (Vec<&Subject>, Vec<&Subject>) {
        let mut rest = Vec::new();
        let mut sel = Vec::new();
        for (i, s) in self.subjects.iter().enumerate() {
            if i % modulus == residue {
                sel.push(s);
            } else {
                rest.push(s);
            }
        }
        (rest, sel)
    }
}

pub fn generate_dataset(spec: &DatasetSpec, mixing: &MixingMatrix, bg: &dyn BackgroundSource) -> Result<Dataset> {
    spec.validate()?;
    let subjects = (0..spec.n as u64).map(|i| make_subject(spec, mixing, bg, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: spec.clone(), mixing_checksum: mixing.checksum(), subjects })
}

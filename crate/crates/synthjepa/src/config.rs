//! Versioned JSON run configuration and its presets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthjepa_core::eval::Alternative;
use synthjepa_core::finetune::{Strategy, StrategyKind, TrainConfig};
use synthjepa_core::jepa::JepaConfig;
use synthjepa_core::model::ModelConfig;
use synthjepa_core::synthcohort::{CohortParams, DatasetKind, DatasetSpec};

use crate::dataset::BackgroundSpec;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Names of the datasets playing each experimental role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetRoles {
    pub u: String,
    pub s: String,
    pub f: String,
    pub t: String,
    pub s_test: String,
}

impl Default for DatasetRoles {
    fn default() -> Self {
        Self { u: "U".into(), s: "S".into(), f: "F".into(), t: "T".into(), s_test: "S-test".into() }
    }
}

impl DatasetRoles {
    fn expected(&self) -> [(&str, &str, DatasetKind); 5] {
        [
            ("u", &self.u, DatasetKind::U),
            ("s", &self.s, DatasetKind::S),
            ("f", &self.f, DatasetKind::F),
            ("t", &self.t, DatasetKind::T),
            ("s_test", &self.s_test, DatasetKind::S),
        ]
    }
}

/// A finetuning arm; `f_size` defaults to the whole F dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    pub encoder_lr: f64,
    pub head_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_size: Option<usize>,
    /// Encoder weights to start from; defaults to this run's pretraining
    /// output for the same seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

impl StrategyEntry {
    pub fn new(kind: StrategyKind, encoder_lr: f64, head_lr: f64) -> Self {
        Self { kind, encoder_lr, head_lr, f_size: None, init_checkpoint: None }
    }

    pub fn strategy(&self, f_size: usize) -> Strategy {
        Strategy { kind: self.kind, f_size, encoder_lr: self.encoder_lr, head_lr: self.head_lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub f_sizes: Vec<usize>,
    pub strategy_a: StrategyKind,
    pub strategy_b: StrategyKind,
    pub alternative: Alternative,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            f_sizes: vec![50, 100, 250, 500, 1000, 2000, 4000, 8000],
            strategy_a: StrategyKind::JepaUThenF,
            strategy_b: StrategyKind::SupervisedSThenF,
            alternative: Alternative::TwoSided,
        }
    }
}

/// Finetuning grid over encoder rates and pretraining checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub encoder_lrs: Vec<f64>,
    /// Fractions of the pretraining run, rounded to the nearest saved
    /// checkpoint.
    pub checkpoint_fractions: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { encoder_lrs: vec![0.0, 1e-4, 1e-3], checkpoint_fractions: vec![0.25, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub mixing_seed: u64,
    #[serde(default)]
    pub background: BackgroundSpec,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub roles: DatasetRoles,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub jepa: JepaConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    pub out_dir: PathBuf,
}

/// Dataset sizes in role order U, S, F, T, S-test.
pub const FULL_SIZES: [usize; 5] = [40_000, 40_000, 8_000, 2_000, 1_000];
pub const DESK_SIZES: [usize; 5] = [8_000, 8_000, 4_000, 2_000, 1_000];

pub fn default_strategies() -> Vec<StrategyEntry> {
    vec![
        StrategyEntry::new(StrategyKind::SupervisedSThenF, 1e-3, 1e-3),
        StrategyEntry::new(StrategyKind::JepaUThenF, 1e-3, 1e-3),
        StrategyEntry::new(StrategyKind::SupervisedFOnly, 1e-3, 1e-3),
        StrategyEntry::new(StrategyKind::ImagingOnly, 1e-3, 1e-3),
        StrategyEntry::new(StrategyKind::ExpressionOnly, 1e-3, 1e-3),
    ]
}

impl RunConfig {
    /// Full-size experiment.
    pub fn full() -> Self {
        let roles = DatasetRoles::default();
        let params = CohortParams::default();
        let names = [&roles.u, &roles.s, &roles.f, &roles.t, &roles.s_test];
        let kinds = [DatasetKind::U, DatasetKind::S, DatasetKind::F, DatasetKind::T, DatasetKind::S];
        let datasets = (0..5)
            .map(|i| DatasetSpec::new(names[i], kinds[i], FULL_SIZES[i], 1000 + i as u64, params.clone()))
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: "synthetic-jepa".into(),
            seeds: vec![0, 1, 2],
            mixing_seed: 7,
            background: BackgroundSpec::default(),
            datasets,
            roles,
            model: ModelConfig::default(),
            jepa: JepaConfig { total_steps: 10_000, checkpoint_every: 1_000, ..JepaConfig::default() },
            train: TrainConfig::default(),
            strategies: default_strategies(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
            out_dir: PathBuf::from("runs/synthetic-jepa"),
        }
    }

    /// CPU-sized experiment.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.experiment = "synthetic-jepa-desk".into();
        c.out_dir = PathBuf::from("runs/synthetic-jepa-desk");
        c.apply_desk();
        c
    }

    /// Scales dataset sizes, the pretraining budget and the sweep grid to
    /// the desk preset.
    pub fn apply_desk(&mut self) {
        let roles = self.roles.clone();
        for (i, (_, name, _)) in roles.expected().iter().enumerate() {
            if let Some(d) = self.datasets.iter_mut().find(|d| d.name == *name) {
                d.n = DESK_SIZES[i];
            }
        }
        self.jepa.total_steps = DESK_JEPA_STEPS;
        self.jepa.checkpoint_every = DESK_JEPA_STEPS / 4;
        let f_max = DESK_SIZES[2];
        self.sweep.f_sizes.retain(|&f| f <= f_max);
        if !self.sweep.f_sizes.contains(&f_max) {
            self.sweep.f_sizes.push(f_max);
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            pointer: pointer(e.path()),
            msg: e.inner().to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Schema { pointer, msg, .. } => Error::Schema { path: path.to_path_buf(), pointer, msg },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |pointer: &str, msg: String| Error::Schema { path: PathBuf::new(), pointer: pointer.into(), msg };
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "/schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(schema("/seeds", "at least one seed is required".into()));
        }
        let mut names = BTreeSet::new();
        let mut seeds = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if !names.insert(d.name.as_str()) {
                return Err(schema(&format!("/datasets/{i}/name"), format!("duplicate dataset name `{}`", d.name)));
            }
            if !seeds.insert(d.cohort_seed) {
                return Err(schema(
                    &format!("/datasets/{i}/cohort_seed"),
                    format!("cohort seed {} is shared with another dataset", d.cohort_seed),
                ));
            }
            d.validate().map_err(|e| schema(&format!("/datasets/{i}"), e.to_string()))?;
            if d.params.m != self.model.expression_dim || d.params.image_size != self.model.image_size {
                return Err(schema(
                    &format!("/datasets/{i}/params"),
                    "m and image_size must match model.expression_dim and model.image_size".into(),
                ));
            }
        }
        for (role, name, kind) in self.roles.expected() {
            let d = self
                .dataset(name)
                .ok_or_else(|| schema(&format!("/roles/{role}"), format!("dataset `{name}` is not defined")))?;
            if d.kind != kind {
                return Err(schema(&format!("/roles/{role}"), format!("dataset `{name}` must be of kind {kind:?}")));
            }
        }
        self.model.validate().map_err(|e| schema("/model", e.to_string()))?;
        self.jepa.validate().map_err(|e| schema("/jepa", e.to_string()))?;
        self.train.validate().map_err(|e| schema("/train", e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(schema("/strategies", "at least one strategy is required".into()));
        }
        let f_n = self.dataset(&self.roles.f).map_or(0, |d| d.n);
        for (i, s) in self.strategies.iter().enumerate() {
            if s.f_size.is_some_and(|f| f == 0 || f > f_n) {
                return Err(schema(&format!("/strategies/{i}/f_size"), format!("f_size must lie in 1..={f_n}")));
            }
            if !(s.encoder_lr >= 0.0 && s.head_lr >= 0.0) {
                return Err(schema(&format!("/strategies/{i}"), "learning rates must be non-negative".into()));
            }
        }
        if self.sweep.f_sizes.is_empty() {
            return Err(schema("/sweep/f_sizes", "at least one f_size is required".into()));
        }
        if let Some(j) = self.sweep.f_sizes.iter().position(|&f| f == 0 || f > f_n) {
            return Err(schema(&format!("/sweep/f_sizes/{j}"), format!("f_size must lie in 1..={f_n}")));
        }
        for (pointer, k) in [("/sweep/strategy_a", self.sweep.strategy_a), ("/sweep/strategy_b", self.sweep.strategy_b)]
        {
            if self.strategy(k).is_none() {
                return Err(schema(pointer, format!("{} has no entry in /strategies", k.name())));
            }
        }
        if self.ablation.checkpoint_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(schema("/ablation/checkpoint_fractions", "fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn strategy(&self, kind: StrategyKind) -> Option<&StrategyEntry> {
        self.strategies.iter().find(|s| s.kind == kind)
    }

    /// Replaces the seed list with a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

/// Pretraining steps of the desk preset.
pub const DESK_JEPA_STEPS: u64 = 1_000;

/// RFC 6901 pointer for a serde path.
pub fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

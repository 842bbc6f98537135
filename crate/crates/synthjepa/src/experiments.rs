//! Experiment orchestration: dataset generation, pretraining, finetuning,
//! the results table, the finetune-size sweep and the ablation grid.
//!
//! Every run is `f32` and single-threaded. Parallel commands fan out whole
//! runs; results are aggregated by key, so they do not depend on the worker
//! count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthjepa_core::eval::{auc, median, EvalReport, PairedPoint, TableRow};
use synthjepa_core::finetune::{
    finetune_from, predict_all, supervised_train, FitResult, FitRow, StrategyKind, TrainConfig, ValRow,
};
use synthjepa_core::jepa::{
    collapse_report, maskable, pretrain, CheckpointMark, JepaState, TrainLog, TrainRow, Verdict, COLLAPSE_TAU,
};
use synthjepa_core::model::{Model, TokenFilter};
use synthjepa_core::numerics::ParamStore;
use synthjepa_core::synthcohort::{make_subject, Dataset, Fnv, MixingMatrix, Subject};

use crate::checkpoint::{load_init_encoder, load_jepa, load_model, save_jepa, save_model};
use crate::config::{RunConfig, StrategyEntry};
use crate::dataset::{read_dataset, write_dataset, SUBJECTS};
use crate::error::{Error, Result};
use crate::reports::{read_csv, write_csv, write_json, ScoreRow};

/// Scalar type of every run.
pub type F = f32;

/// Subjects of U used for collapse diagnostics at each checkpoint.
pub const COLLAPSE_SAMPLE: usize = 256;

/// Artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn jepa(&self, seed: u64) -> PathBuf {
        self.root.join("pretrain/jepa").join(format!("seed-{seed}"))
    }

    pub fn jepa_checkpoint(&self, seed: u64, step: u64) -> PathBuf {
        self.jepa(seed).join(format!("step-{step:06}.mjpk"))
    }

    pub fn supervised(&self, seed: u64) -> PathBuf {
        self.root.join("pretrain/supervised").join(format!("seed-{seed}"))
    }

    pub fn finetune(&self, kind: StrategyKind, f_size: usize, seed: u64) -> PathBuf {
        self.root.join("finetune").join(kind.name()).join(format!("f-{f_size}")).join(format!("seed-{seed}"))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation")
    }
}

/// Datasets of one experiment by role.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub u: Dataset,
    pub s: Dataset,
    pub f: Dataset,
    pub t: Dataset,
    pub s_test: Dataset,
}

pub fn mixing(cfg: &RunConfig) -> MixingMatrix {
    MixingMatrix::sample(cfg.model.expression_dim, cfg.mixing_seed)
}

/// Generates every configured dataset with one shared mixing matrix.
pub fn generate(cfg: &RunConfig) -> Result<(MixingMatrix, Vec<Dataset>)> {
    let mix = mixing(cfg);
    let bg = cfg.background.load()?;
    let mut out = Vec::with_capacity(cfg.datasets.len());
    for spec in &cfg.datasets {
        spec.validate()?;
        let subjects = (0..spec.n as u64)
            .into_par_iter()
            .map(|i| make_subject(spec, &mix, bg.as_ref(), i))
            .collect::<Result<Vec<Subject>, _>>()?;
        out.push(Dataset { spec: spec.clone(), mixing_checksum: mix.checksum(), subjects });
    }
    Ok((mix, out))
}

pub fn cohort_from(cfg: &RunConfig, datasets: Vec<Dataset>) -> Result<Cohort> {
    let take = |name: &str| {
        datasets
            .iter()
            .find(|d| d.spec.name == name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("dataset `{name}` is not defined")))
    };
    let r = &cfg.roles;
    Ok(Cohort { u: take(&r.u)?, s: take(&r.s)?, f: take(&r.f)?, t: take(&r.t)?, s_test: take(&r.s_test)? })
}

/// Checksum of one dataset's manifest and records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub name: String,
    pub n: usize,
    pub mixing_checksum: String,
    pub subjects_checksum: String,
}

/// Writes every dataset under `layout`.
pub fn write_cohort(cfg: &RunConfig, layout: &Layout) -> Result<Vec<GenSummary>> {
    let (mix, datasets) = generate(cfg)?;
    let mut out = Vec::new();
    for d in &datasets {
        let dir = layout.data(&d.spec.name);
        write_dataset(&dir, d, &mix, &cfg.background)?;
        let bin = dir.join(SUBJECTS);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut h = Fnv::new();
        h.write(&bytes);
        out.push(GenSummary {
            name: d.spec.name.clone(),
            n: d.len(),
            mixing_checksum: d.mixing_checksum.clone(),
            subjects_checksum: format!("{:016x}", h.finish()),
        });
    }
    Ok(out)
}

/// Reads dataset `name`, checking it was generated from this config.
pub fn load_dataset(cfg: &RunConfig, layout: &Layout, name: &str) -> Result<Dataset> {
    let dir = layout.data(name);
    let ds = read_dataset(&dir)?;
    let spec = cfg.dataset(name).ok_or_else(|| Error::Config(format!("dataset `{name}` is not defined")))?;
    if &ds.spec != spec || ds.mixing_checksum != mixing(cfg).checksum() {
        return Err(Error::format(&dir, "dataset was generated from a different configuration; rerun `gen`"));
    }
    Ok(ds)
}

pub fn load_cohort(cfg: &RunConfig, layout: &Layout) -> Result<Cohort> {
    let r = &cfg.roles;
    Ok(Cohort {
        u: load_dataset(cfg, layout, &r.u)?,
        s: load_dataset(cfg, layout, &r.s)?,
        f: load_dataset(cfg, layout, &r.f)?,
        t: load_dataset(cfg, layout, &r.t)?,
        s_test: load_dataset(cfg, layout, &r.s_test)?,
    })
}

/// Collapse diagnostics recorded at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub step: u64,
    /// `rep_std` of the batch that completed this checkpoint.
    pub batch_rep_std: f64,
    /// Diagnostics of the target encoder on a fixed sample of U.
    pub sample_rep_std: f64,
    pub rank_proxy: usize,
    pub verdict: Verdict,
}

/// JEPA pretraining of one seed.
pub struct PretrainOutcome {
    pub state: JepaState<F>,
    pub log: TrainLog,
    pub checkpoints: Vec<CheckpointRow>,
}

/// Pretrains from `state` (fresh when `None`) on U, calling `save` at each
/// checkpoint.
pub fn pretrain_jepa(
    cfg: &RunConfig,
    u: &Dataset,
    seed: u64,
    state: Option<JepaState<F>>,
    mut save: impl FnMut(&JepaState<F>, &CheckpointMark) -> Result<()>,
) -> Result<PretrainOutcome> {
    let jc = synthjepa_core::jepa::JepaConfig { seed, ..cfg.jepa.clone() };
    let state = match state {
        Some(s) => s,
        None => JepaState::new(cfg.model.clone(), seed)?,
    };
    let sample: Vec<&Subject> =
        maskable(&u.subjects).into_iter().take(COLLAPSE_SAMPLE).map(|i| &u.subjects[i]).collect();
    let mut checkpoints = Vec::new();
    let mut failure: Option<Error> = None;
    let (state, log) = pretrain(&u.subjects, state, &jc, |st, mark| {
        let rep = collapse_report(&st.model, &st.target, &sample, COLLAPSE_TAU)?;
        log::info!("seed {seed} checkpoint {} rep_std {:.4} rank {}", mark.step, rep.rep_std, rep.rep_rank_proxy);
        checkpoints.push(CheckpointRow {
            step: mark.step,
            batch_rep_std: mark.rep_std,
            sample_rep_std: rep.rep_std,
            rank_proxy: rep.rep_rank_proxy,
            verdict: rep.verdict,
        });
        save(st, mark).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            synthjepa_core::Error::Config(msg)
        })
    })
    .map_err(|e| failure.take().unwrap_or(Error::Core(e)))?;
    Ok(PretrainOutcome { state, log, checkpoints })
}

/// Pretrains seed `seed` and writes its checkpoints, train log and
/// collapse diagnostics. With `resume`, continues from that checkpoint and
/// keeps the earlier rows of an existing train log.
pub fn run_pretrain_jepa(
    cfg: &RunConfig,
    layout: &Layout,
    u: &Dataset,
    seed: u64,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let dir = layout.jepa(seed);
    let (state, mut prior, mut prior_ck) = match resume {
        Some(p) => {
            let st = load_jepa::<F>(p)?;
            let keep = st.step;
            let rows: Vec<TrainRow> = read_csv(&dir.join("train_log.csv")).unwrap_or_default();
            let ck: Vec<CheckpointRow> = read_csv(&dir.join("checkpoints.csv")).unwrap_or_default();
            let rows = rows.into_iter().filter(|r| r.step < keep).collect();
            let ck = ck.into_iter().filter(|r| r.step <= keep).collect();
            (Some(st), rows, ck)
        }
        None => (None, Vec::new(), Vec::new()),
    };
    let jc = synthjepa_core::jepa::JepaConfig { seed, ..cfg.jepa.clone() };
    let out =
        pretrain_jepa(cfg, u, seed, state, |st, mark| save_jepa(&layout.jepa_checkpoint(seed, mark.step), st, &jc))?;
    prior.extend(out.log.rows);
    prior_ck.extend(out.checkpoints);
    write_csv(&dir.join("train_log.csv"), &prior)?;
    write_csv(&dir.join("checkpoints.csv"), &prior_ck)?;
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "seed": seed,
            "steps": out.state.step,
            "skipped_subjects": out.log.skipped_subjects,
            "jepa_config": jc,
        }),
    )?;
    Ok(layout.jepa_checkpoint(seed, cfg.jepa.total_steps))
}

fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.train.clone() }
}

/// Supervised training on S from random weights.
pub fn supervised_s(cfg: &RunConfig, s: &Dataset, seed: u64) -> Result<FitResult<F>> {
    Ok(supervised_train(s, &cfg.model, TokenFilter::All, &train_config(cfg, seed))?)
}

pub fn write_fit(dir: &Path, fit: &FitResult<F>, extra: serde_json::Value) -> Result<()> {
    save_model(&dir.join("model.mjpk"), &fit.model, extra)?;
    write_csv::<FitRow>(&dir.join("fit_log.csv"), &fit.log.rows)?;
    write_csv::<ValRow>(&dir.join("validation.csv"), &fit.log.validation)
}

pub fn run_supervised_s(cfg: &RunConfig, layout: &Layout, s: &Dataset, seed: u64) -> Result<PathBuf> {
    let fit = supervised_s(cfg, s, seed)?;
    let dir = layout.supervised(seed);
    write_fit(
        &dir,
        &fit,
        serde_json::json!({ "stage": "supervised_s", "seed": seed, "best_step": fit.log.best_step }),
    )?;
    Ok(dir.join("model.mjpk"))
}

/// Encoder that `kind` starts from for `seed`, read from this run's
/// pretraining outputs unless `entry` names a checkpoint.
pub fn init_encoder(
    cfg: &RunConfig,
    layout: &Layout,
    entry: &StrategyEntry,
    seed: u64,
) -> Result<Option<ParamStore<F>>> {
    let path = match (&entry.init_checkpoint, entry.kind) {
        (Some(p), k) if k.needs_init() => p.clone(),
        (_, StrategyKind::JepaUThenF) => layout.jepa_checkpoint(seed, cfg.jepa.total_steps),
        (_, StrategyKind::SupervisedSThenF) => layout.supervised(seed).join("model.mjpk"),
        _ => return Ok(None),
    };
    let (enc, mc) = load_init_encoder::<F>(&path)?;
    if mc != cfg.model {
        return Err(Error::format(&path, "checkpoint model_config differs from the run configuration"));
    }
    Ok(Some(enc))
}

pub fn finetune(
    cfg: &RunConfig,
    entry: &StrategyEntry,
    f: &Dataset,
    f_size: usize,
    seed: u64,
    init: Option<&ParamStore<F>>,
) -> Result<FitResult<F>> {
    Ok(finetune_from(init, f, &entry.strategy(f_size), &cfg.model, &train_config(cfg, seed))?)
}

/// Scores of every subject of `ds`.
pub fn score(model: &Model<F>, ds: &Dataset, filter: TokenFilter) -> Result<Vec<f64>> {
    let refs: Vec<&Subject> = ds.subjects.iter().collect();
    Ok(predict_all(model, &refs, filter)?.into_iter().map(|p| p.score).collect())
}

pub fn dataset_auc(model: &Model<F>, ds: &Dataset, filter: TokenFilter) -> Result<f64> {
    Ok(auc(&score(model, ds, filter)?, &ds.labels())?)
}

pub fn score_rows(scores: &[f64], ds: &Dataset, strategy: &str, f_size: usize, seed: u64) -> Vec<ScoreRow> {
    scores
        .iter()
        .zip(&ds.subjects)
        .enumerate()
        .map(|(i, (&score, s))| ScoreRow {
            subject_id: i,
            label: s.label,
            score,
            strategy: strategy.into(),
            f_size,
            seed,
        })
        .collect()
}

/// Table row of one model.
pub fn evaluate(
    model: &Model<F>,
    strategy: &str,
    filter: TokenFilter,
    cohort_t: &Dataset,
    s_test: &Dataset,
) -> Result<TableRow> {
    Ok(TableRow {
        strategy: strategy.into(),
        auc_s_test: Some(dataset_auc(model, s_test, filter)?),
        auc_t: dataset_auc(model, cohort_t, filter)?,
    })
}

/// Name of the supervised-on-S row of the results table.
pub const SUPERVISED_S: &str = "SUPERVISED_S";

/// Results-table row of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub strategy: String,
    pub seed: u64,
    pub f_size: usize,
    pub auc_s_test: f64,
    pub auc_t: f64,
}

/// Median over seeds per strategy, in first-appearance order.
pub fn median_rows(rows: &[SeedRow]) -> Vec<TableRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.strategy.as_str()) {
            names.push(&r.strategy);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let sel: Vec<&SeedRow> = rows.iter().filter(|r| r.strategy == n).collect();
            TableRow {
                strategy: n.into(),
                auc_s_test: Some(median(sel.iter().map(|r| r.auc_s_test).collect())),
                auc_t: median(sel.iter().map(|r| r.auc_t).collect()),
            }
        })
        .collect()
}

/// Finetune job for one strategy, size and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub kind: StrategyKind,
    pub f_size: usize,
    pub seed: u64,
}

/// Outcome of a finetune job.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub job: Job,
    pub auc_t: f64,
    pub auc_s_test: f64,
    pub scores_t: Vec<f64>,
    pub best_step: u64,
}

/// Encoder lookup by strategy and seed.
pub type InitFn<'a> = dyn Fn(StrategyKind, u64) -> Result<Option<ParamStore<F>>> + Sync + 'a;

/// Pretrained encoders per seed for the strategies that need one.
pub struct Inits<'a> {
    pub get: Box<InitFn<'a>>,
}

/// Runs `jobs` on a pool of `workers` threads; results come back in job
/// order. `on_done` sees each result as it completes.
pub fn run_jobs(
    cfg: &RunConfig,
    cohort: &Cohort,
    jobs: &[Job],
    inits: &Inits,
    workers: usize,
    on_done: &(dyn Fn(&JobResult, &FitResult<F>) -> Result<()> + Sync),
) -> Result<Vec<JobResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&job| {
                let entry = cfg
                    .strategy(job.kind)
                    .ok_or_else(|| Error::Config(format!("{} has no entry in /strategies", job.kind.name())))?;
                let init = (inits.get)(job.kind, job.seed)?;
                let fit = finetune(cfg, entry, &cohort.f, job.f_size, job.seed, init.as_ref())?;
                let filter = job.kind.filter();
                let scores_t = score(&fit.model, &cohort.t, filter)?;
                let res = JobResult {
                    job,
                    auc_t: auc(&scores_t, &cohort.t.labels())?,
                    auc_s_test: dataset_auc(&fit.model, &cohort.s_test, filter)?,
                    scores_t,
                    best_step: fit.log.best_step,
                };
                log::info!("{} f={} seed={} AUC(T)={:.4}", job.kind.name(), job.f_size, job.seed, res.auc_t);
                on_done(&res, &fit)?;
                Ok(res)
            })
            .collect()
    })
}

/// Encoders read from this run's pretraining outputs.
pub fn disk_inits<'a>(cfg: &'a RunConfig, layout: &'a Layout) -> Inits<'a> {
    Inits {
        get: Box::new(move |kind, seed| match cfg.strategy(kind) {
            Some(entry) => init_encoder(cfg, layout, entry, seed),
            None => Ok(None),
        }),
    }
}

/// Writes a finetuned model, its logs and its scores on T.
pub fn write_job(cfg: &RunConfig, layout: &Layout, cohort: &Cohort, res: &JobResult, fit: &FitResult<F>) -> Result<()> {
    let Job { kind, f_size, seed } = res.job;
    let dir = layout.finetune(kind, f_size, seed);
    let extra = serde_json::json!({
        "strategy": cfg.strategy(kind).map(|e| e.strategy(f_size)),
        "seed": seed,
        "best_step": fit.log.best_step,
    });
    write_fit(&dir, fit, extra)?;
    write_csv(&dir.join("scores.csv"), &score_rows(&res.scores_t, &cohort.t, kind.name(), f_size, seed))
}

/// Results table: supervised-on-S models plus every configured strategy at
/// its `f_size`, for every seed. `supervised` supplies the S-trained model
/// of each seed.
pub fn results_table(
    cfg: &RunConfig,
    cohort: &Cohort,
    supervised: &dyn Fn(u64) -> Result<Model<F>>,
    inits: &Inits,
    workers: usize,
    on_done: &(dyn Fn(&JobResult, &FitResult<F>) -> Result<()> + Sync),
) -> Result<(Vec<SeedRow>, Vec<TableRow>)> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let m = supervised(seed)?;
        let r = evaluate(&m, SUPERVISED_S, TokenFilter::All, &cohort.t, &cohort.s_test)?;
        rows.push(SeedRow {
            strategy: SUPERVISED_S.into(),
            seed,
            f_size: 0,
            auc_s_test: r.auc_s_test.unwrap_or(f64::NAN),
            auc_t: r.auc_t,
        });
    }
    let mut jobs = Vec::new();
    for e in &cfg.strategies {
        for &seed in &cfg.seeds {
            jobs.push(Job { kind: e.kind, f_size: e.f_size.unwrap_or(cohort.f.len()), seed });
        }
    }
    for r in run_jobs(cfg, cohort, &jobs, inits, workers, on_done)? {
        rows.push(SeedRow {
            strategy: r.job.kind.name().into(),
            seed: r.job.seed,
            f_size: r.job.f_size,
            auc_s_test: r.auc_s_test,
            auc_t: r.auc_t,
        });
    }
    let table = median_rows(&rows);
    Ok((rows, table))
}

/// Sweep of the configured strategy pair over `sweep.f_sizes` and seeds.
pub fn sweep(
    cfg: &RunConfig,
    cohort: &Cohort,
    inits: &Inits,
    workers: usize,
    on_done: &(dyn Fn(&JobResult, &FitResult<F>) -> Result<()> + Sync),
) -> Result<(EvalReport, Vec<JobResult>)> {
    let (a, b) = (cfg.sweep.strategy_a, cfg.sweep.strategy_b);
    let mut jobs = Vec::new();
    for &f_size in &cfg.sweep.f_sizes {
        for &seed in &cfg.seeds {
            jobs.push(Job { kind: a, f_size, seed });
            jobs.push(Job { kind: b, f_size, seed });
        }
    }
    let results = run_jobs(cfg, cohort, &jobs, inits, workers, on_done)?;
    let find = |k: StrategyKind, f: usize, s: u64| {
        results.iter().find(|r| r.job.kind == k && r.job.f_size == f && r.job.seed == s).map(|r| r.auc_t)
    };
    let mut points = Vec::new();
    for &f_size in &cfg.sweep.f_sizes {
        for &seed in &cfg.seeds {
            let (auc_a, auc_b) = (find(a, f_size, seed), find(b, f_size, seed));
            if let (Some(auc_a), Some(auc_b)) = (auc_a, auc_b) {
                points.push(PairedPoint { f_size, seed, auc_a, auc_b });
            }
        }
    }
    let report =
        EvalReport::from_points(a.name(), b.name(), &cfg.sweep.f_sizes, &cfg.seeds, points, cfg.sweep.alternative)?;
    Ok((report, results))
}

/// Writes the sweep report, its flat CSVs and the pooled scores.
pub fn write_sweep(layout: &Layout, report: &EvalReport, results: &[JobResult], cohort_t: &Dataset) -> Result<()> {
    let dir = layout.sweep();
    write_json(&dir.join("report.json"), report)?;
    write_csv(&dir.join("points.csv"), &report.points)?;
    write_csv(&dir.join("curve.csv"), &report.curve)?;
    let mut scores = Vec::new();
    for r in results {
        scores.extend(score_rows(&r.scores_t, cohort_t, r.job.kind.name(), r.job.f_size, r.job.seed));
    }
    write_csv(&dir.join("scores.csv"), &scores)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub encoder_lr: f64,
    pub checkpoint_step: u64,
    pub seed: u64,
    pub auc_t: f64,
}

/// Saved checkpoint step closest to `fraction` of the pretraining budget.
pub fn checkpoint_step(cfg: &RunConfig, fraction: f64) -> u64 {
    let total = cfg.jepa.total_steps;
    let every = cfg.jepa.checkpoint_every;
    let mut steps: Vec<u64> = (1..=total / every).map(|k| k * every).collect();
    if steps.last() != Some(&total) {
        steps.push(total);
    }
    let want = fraction * total as f64;
    *steps
        .iter()
        .min_by(|a, b| ((**a as f64 - want).abs()).total_cmp(&((**b as f64 - want).abs())))
        .expect("at least one checkpoint")
}

/// JEPA finetuning at full F over encoder rates and pretraining checkpoints.
pub fn ablation(cfg: &RunConfig, layout: &Layout, cohort: &Cohort, workers: usize) -> Result<Vec<AblationRow>> {
    let base = cfg
        .strategy(StrategyKind::JepaUThenF)
        .cloned()
        .unwrap_or_else(|| StrategyEntry::new(StrategyKind::JepaUThenF, 1e-3, 1e-3));
    let mut cells = Vec::new();
    for &lr in &cfg.ablation.encoder_lrs {
        for &fr in &cfg.ablation.checkpoint_fractions {
            for &seed in &cfg.seeds {
                cells.push((lr, checkpoint_step(cfg, fr), seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(lr, step, seed)| {
                let path = layout.jepa_checkpoint(seed, step);
                let (enc, _) = load_init_encoder::<F>(&path)?;
                let entry = StrategyEntry { encoder_lr: lr, ..base.clone() };
                let fit = finetune(cfg, &entry, &cohort.f, cohort.f.len(), seed, Some(&enc))?;
                let auc_t = dataset_auc(&fit.model, &cohort.t, TokenFilter::All)?;
                log::info!("ablation lr={lr} step={step} seed={seed} AUC(T)={auc_t:.4}");
                Ok(AblationRow { encoder_lr: lr, checkpoint_step: step, seed, auc_t })
            })
            .collect()
    })
}

/// Loads a model checkpoint written by this crate.
pub fn load_fit_model(path: &Path) -> Result<Model<F>> {
    Ok(load_model::<F>(path)?.0)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use synthjepa::config::RunConfig;
use synthjepa::core::eval::{classify_outcomes, expected_auc, idealized_scorer};
use synthjepa::core::finetune::StrategyKind;
use synthjepa::core::kernelscore::{select_softest_with, softness_score_with, SoftnessConfig};
use synthjepa::core::model::TokenFilter;
use synthjepa::core::synthcohort::{label, CausalProfile};
use synthjepa::dataset::read_pgm;
use synthjepa::experiments::{self as exp, Cohort, Layout};
use synthjepa::reports::{write_csv, write_json};
use synthjepa::Error;

#[derive(Parser)]
#[command(name = "synthjepa", version, about = "Synthetic multimodal JEPA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON); defaults to the full-size preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel commands.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Scale datasets and budgets to the desk preset.
    #[arg(long)]
    desk: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate every dataset of the configuration.
    Gen(Common),
    /// JEPA pretraining on U, one run per seed.
    PretrainJepa {
        #[command(flatten)]
        common: Common,
        /// Continue from a pretraining checkpoint (requires --seed).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Supervised training on S, one run per seed.
    PretrainSup(Common),
    /// Finetune every configured strategy on F, one run per seed.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Restrict to one strategy, e.g. JEPA_U_THEN_F.
        #[arg(long, value_parser = parse_kind)]
        strategy: Option<StrategyKind>,
    },
    /// Results table from trained models, or one row for `--model`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A model checkpoint to evaluate on S-test and T.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Token filter strategy of `--model`.
        #[arg(long, value_parser = parse_kind)]
        strategy: Option<StrategyKind>,
    },
    /// Paired finetune-size sweep of two strategies with a Wilcoxon test.
    Sweep(Common),
    /// Encoder learning rate and pretraining checkpoint grid.
    Ablate(Common),
    /// Exact expected AUC of a truth-table scorer over the 16 causal profiles.
    Oracle {
        /// 16 scores in profile bit order (g1 g2 d1 d2, g1 most significant);
        /// defaults to 1 iff G1 = 1 and D1 = 1.
        #[arg(long, value_delimiter = ',')]
        table: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Kernel-softness scores of binary PGM images.
    KernelScore {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = SoftnessConfig::default().n_theta)]
        n_theta: usize,
    },
}

fn parse_kind(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::ALL
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown strategy `{s}`"))
}

struct Ctx {
    cfg: RunConfig,
    layout: Layout,
    workers: usize,
}

fn context(c: &Common) -> Result<Ctx, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None if c.desk => RunConfig::desk(),
        None => RunConfig::full(),
    };
    if c.desk && c.config.is_some() {
        cfg.apply_desk();
    }
    if let Some(s) = c.seed {
        cfg.override_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    let layout = Layout::new(cfg.out_dir.clone());
    write_json(&layout.root.join("config.json"), &cfg)?;
    Ok(Ctx { cfg, layout, workers: c.workers.max(1) })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_meta(ctx: &Ctx, command: &str, started: Instant) -> Result<(), Error> {
    let path = ctx.layout.root.join(format!("{command}.meta.json"));
    write_json(
        &path,
        &serde_json::json!({
            "command": command,
            "workers": ctx.workers,
            "threads_per_run": 1,
            "dtype": "f32",
            "wall_clock_seconds": started.elapsed().as_secs_f64(),
        }),
    )
}

fn cohort(ctx: &Ctx) -> Result<Cohort, Error> {
    exp::load_cohort(&ctx.cfg, &ctx.layout)
}

fn run(cli: Cli) -> Result<(), Error> {
    let started = Instant::now();
    match cli.command {
        Command::Gen(c) => {
            let ctx = context(&c)?;
            let summary = exp::write_cohort(&ctx.cfg, &ctx.layout)?;
            print_json(&serde_json::to_value(&summary)?);
            write_json(&ctx.layout.root.join("data/checksums.json"), &summary)?;
            write_meta(&ctx, "gen", started)
        }
        Command::PretrainJepa { common, resume } => {
            let ctx = context(&common)?;
            if resume.is_some() && ctx.cfg.seeds.len() != 1 {
                return Err(Error::Config("--resume needs --seed".into()));
            }
            let u = exp::load_dataset(&ctx.cfg, &ctx.layout, &ctx.cfg.roles.u)?;
            for &seed in &ctx.cfg.seeds {
                let path = exp::run_pretrain_jepa(&ctx.cfg, &ctx.layout, &u, seed, resume.as_deref())?;
                println!("{}", path.display());
            }
            write_meta(&ctx, "pretrain-jepa", started)
        }
        Command::PretrainSup(c) => {
            let ctx = context(&c)?;
            let s = exp::load_dataset(&ctx.cfg, &ctx.layout, &ctx.cfg.roles.s)?;
            for &seed in &ctx.cfg.seeds {
                let path = exp::run_supervised_s(&ctx.cfg, &ctx.layout, &s, seed)?;
                println!("{}", path.display());
            }
            write_meta(&ctx, "pretrain-sup", started)
        }
        Command::Finetune { common, strategy } => {
            let ctx = context(&common)?;
            let co = cohort(&ctx)?;
            let mut jobs = Vec::new();
            for e in ctx.cfg.strategies.iter().filter(|e| strategy.is_none_or(|k| k == e.kind)) {
                for &seed in &ctx.cfg.seeds {
                    jobs.push(exp::Job { kind: e.kind, f_size: e.f_size.unwrap_or(co.f.len()), seed });
                }
            }
            if jobs.is_empty() {
                return Err(Error::Config("no configured strategy matches --strategy".into()));
            }
            let inits = exp::disk_inits(&ctx.cfg, &ctx.layout);
            let on_done = |r: &exp::JobResult, fit: &_| exp::write_job(&ctx.cfg, &ctx.layout, &co, r, fit);
            for r in exp::run_jobs(&ctx.cfg, &co, &jobs, &inits, ctx.workers, &on_done)? {
                println!("{} f={} seed={} AUC(T)={:.4}", r.job.kind.name(), r.job.f_size, r.job.seed, r.auc_t);
            }
            write_meta(&ctx, "finetune", started)
        }
        Command::Eval { common, model, strategy } => {
            let ctx = context(&common)?;
            let t = exp::load_dataset(&ctx.cfg, &ctx.layout, &ctx.cfg.roles.t)?;
            let s_test = exp::load_dataset(&ctx.cfg, &ctx.layout, &ctx.cfg.roles.s_test)?;
            if let Some(path) = model {
                let m = exp::load_fit_model(&path)?;
                let (name, filter) = match strategy {
                    Some(k) => (k.name(), k.filter()),
                    None => (exp::SUPERVISED_S, TokenFilter::All),
                };
                let row = exp::evaluate(&m, name, filter, &t, &s_test)?;
                print_json(&serde_json::to_value(&row)?);
                return write_json(&ctx.layout.eval().join("row.json"), &row);
            }
            let mut rows = Vec::new();
            for &seed in &ctx.cfg.seeds {
                let m = exp::load_fit_model(&ctx.layout.supervised(seed).join("model.mjpk"))?;
                let r = exp::evaluate(&m, exp::SUPERVISED_S, TokenFilter::All, &t, &s_test)?;
                rows.push(exp::SeedRow {
                    strategy: r.strategy,
                    seed,
                    f_size: 0,
                    auc_s_test: r.auc_s_test.unwrap_or(f64::NAN),
                    auc_t: r.auc_t,
                });
            }
            for e in &ctx.cfg.strategies {
                let f_size = e.f_size.unwrap_or(ctx.cfg.dataset(&ctx.cfg.roles.f).map_or(0, |d| d.n));
                for &seed in &ctx.cfg.seeds {
                    let m = exp::load_fit_model(&ctx.layout.finetune(e.kind, f_size, seed).join("model.mjpk"))?;
                    let r = exp::evaluate(&m, e.kind.name(), e.kind.filter(), &t, &s_test)?;
                    rows.push(exp::SeedRow {
                        strategy: r.strategy,
                        seed,
                        f_size,
                        auc_s_test: r.auc_s_test.unwrap_or(f64::NAN),
                        auc_t: r.auc_t,
                    });
                }
            }
            let table = exp::median_rows(&rows);
            write_csv(&ctx.layout.eval().join("results_seeds.csv"), &rows)?;
            write_csv(&ctx.layout.eval().join("results.csv"), &table)?;
            write_json(&ctx.layout.eval().join("results.json"), &table)?;
            print_json(&serde_json::to_value(&table)?);
            write_meta(&ctx, "eval", started)
        }
        Command::Sweep(c) => {
            let ctx = context(&c)?;
            let co = cohort(&ctx)?;
            let inits = exp::disk_inits(&ctx.cfg, &ctx.layout);
            let on_done = |r: &exp::JobResult, fit: &_| exp::write_job(&ctx.cfg, &ctx.layout, &co, r, fit);
            let (report, results) = exp::sweep(&ctx.cfg, &co, &inits, ctx.workers, &on_done)?;
            exp::write_sweep(&ctx.layout, &report, &results, &co.t)?;
            print_json(&serde_json::json!({
                "curve": report.curve,
                "wilcoxon_p_two_sided": report.wilcoxon.p_two_sided,
                "p_value": report.wilcoxon.p_value,
                "alternative": report.wilcoxon.alternative,
                "spearman_a": report.spearman_a,
                "spearman_b": report.spearman_b,
            }));
            write_meta(&ctx, "sweep", started)
        }
        Command::Ablate(c) => {
            let ctx = context(&c)?;
            let co = cohort(&ctx)?;
            let rows = exp::ablation(&ctx.cfg, &ctx.layout, &co, ctx.workers)?;
            write_csv(&ctx.layout.ablation().join("grid.csv"), &rows)?;
            print_json(&serde_json::to_value(&rows)?);
            write_meta(&ctx, "ablate", started)
        }
        Command::Oracle { table, threshold } => oracle(table, threshold),
        Command::KernelScore { images, n_theta } => kernel_score(&images, n_theta),
    }
}

fn oracle(table: Option<Vec<f64>>, threshold: f64) -> Result<(), Error> {
    let scores: Vec<f64> = match table {
        Some(t) if t.len() == 16 => t,
        Some(t) => return Err(Error::Config(format!("--table needs 16 scores, got {}", t.len()))),
        None => CausalProfile::all().map(|p| idealized_scorer(&p)).collect(),
    };
    let score = |p: &CausalProfile| scores[p.bits() as usize];
    let r = expected_auc(score, label)?;
    let profiles: Vec<CausalProfile> = CausalProfile::all().collect();
    let outcomes = classify_outcomes(&profiles, score, label, threshold);
    println!("{}/{} = {:.6}", r.numer(), r.denom(), *r.numer() as f64 / *r.denom() as f64);
    let rows: Vec<serde_json::Value> = profiles
        .iter()
        .map(|p| {
            serde_json::json!({
                "g1": p.g1, "g2": p.g2, "d1": p.d1, "d2": p.d2,
                "label": label(p),
                "score": score(p),
                "outcome": outcomes.profile_outcome(p),
            })
        })
        .collect();
    print_json(&serde_json::json!({
        "expected_auc": { "numerator": r.numer(), "denominator": r.denom() },
        "profiles_per_outcome": outcomes.profiles_per_outcome(),
        "profiles": rows,
    }));
    Ok(())
}

fn kernel_score(images: &[PathBuf], n_theta: usize) -> Result<(), Error> {
    let cfg = SoftnessConfig { n_theta, ..SoftnessConfig::default() };
    let mut loaded = Vec::new();
    let mut scores = Vec::new();
    for p in images {
        let img = read_pgm(p)?;
        let s = softness_score_with(&img, &cfg).map_err(|e| Error::format(p, e.to_string()))?;
        scores.push(serde_json::json!({ "path": p, "score": s.value, "radius": s.radius }));
        loaded.push(img);
    }
    let softest = select_softest_with(&loaded, &cfg)?;
    print_json(&serde_json::json!({ "scores": scores, "softest": images[softest] }));
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    serde_json::json!({
        "error": {
            "kind": e.kind(),
            "message": e.to_string(),
            "path": e.path().map(Path::to_path_buf),
            "pointer": match e { Error::Schema { pointer, .. } => Some(pointer.as_str()), _ => None },
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}

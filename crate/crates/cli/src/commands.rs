//! Subcommand definitions and their implementations.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypergeo_core::ball::CurvatureMag;
use hypergeo_core::ghdm::{GeneratorParams, GhdmConfig};
use hypergeo_core::gradcheck::{check_random, GradCheckConfig};
use hypergeo_core::hyperbolicity::{
    delta_rel_trial, mean_report, HyperbolicityReport, Metric, SamplingConfig,
};
use hypergeo_core::lowrank::{loglog_slope, lowrank_error_experiment, ErrorRow, ExperimentConfig};
use hypergeo_core::mining::{rank_queries, select_hard};
use hypergeo_core::trainer::{
    eval_episode, gaussian_control, generate_tree_dataset, sample_episode, split_classes,
    summarize, train_from, EpisodeShape, EvalConfig, EvalReport, SyntheticDataset, TrainConfig,
    TreeConfig,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::bench::{time_evaluation, time_pairs, PairTimingConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    read_checkpoint, read_dataset, read_json, write_checkpoint, write_dataset, TrainConfigFile,
    TreeConfigFile,
};
use crate::manifest::RunManifest;

pub const SEED_ENV: &str = "HYPERGEO_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "hypergeo",
    version,
    about = "Hyperbolic metric learning experiments"
)]
pub struct Cli {
    /// Worker threads for evaluation and sampling trials. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hierarchical dataset.
    GenData(GenDataArgs),
    /// Sampled δ-hyperbolicity of a dataset.
    Delta(DeltaArgs),
    /// Episodic training of the generators.
    Train(TrainArgs),
    /// Few-shot evaluation on held-out classes.
    Eval(EvalArgs),
    /// Per-query distance ratios of one held-out episode.
    Mine(MineArgs),
    /// Finite-difference check of the distance gradients.
    Gradcheck(GradcheckArgs),
    /// Low-rank approximation error and per-pair cost across ranks.
    BenchLowrank(BenchLowrankArgs),
    /// Evaluation time with and without hard-pair mining.
    BenchMining(BenchMiningArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub nuisance_dims: Option<usize>,
    #[arg(long)]
    pub nuisance_scale: Option<f64>,
    #[arg(long)]
    pub root_offset: Option<f64>,
    #[arg(long)]
    pub level_decay: Option<f64>,
    #[arg(long)]
    pub radial_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write an isotropic Gaussian cloud of matching scale instead of the tree data.
    #[arg(long)]
    pub control: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Poincare,
}

#[derive(Debug, Args)]
pub struct DeltaArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "poincare")]
    pub metric: MetricArg,
    /// Defaults to the dataset curvature.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; missing fields use the benchmark defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_metrics: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.96)]
    pub threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    #[arg(long, default_value_t = 15)]
    pub queries: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Summary CSV; stdout when absent.
    #[arg(long)]
    pub out_metrics: Option<PathBuf>,
    /// Optional per-episode CSV.
    #[arg(long)]
    pub out_episodes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.96)]
    pub threshold: f64,
    /// Index of the held-out episode to inspect.
    #[arg(long, default_value_t = 0)]
    pub episode: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    /// Defaults to `4 * dim`.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchLowrankArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    pub dims: Vec<usize>,
    /// Ranks above a dimension are skipped for it; `k = n` is always added.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 4)]
    pub points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub residual_scale: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Error quantiles CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log-log slope of the median error against `n`, one row per `k / n`.
    #[arg(long)]
    pub out_slopes: Option<PathBuf>,
    /// Per-pair adapted-distance wall time across `timing_ranks`.
    #[arg(long)]
    pub out_timing: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub timing_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    pub timing_ranks: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub timing_hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub timing_pairs: usize,
    #[arg(long, default_value_t = 5)]
    pub timing_repeats: usize,
}

#[derive(Debug, Args)]
pub struct BenchMiningArgs {
    /// Defaults to a freshly generated benchmark dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defaults to random benchmark-shaped parameters.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.96,0")]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `HYPERGEO_SEED` wins over `--seed`, which wins over the default.
pub fn resolve_seed(flag: Option<u64>, default: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Format(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(flag.unwrap_or(default)),
        Err(e) => Err(CliError::Format(format!("{SEED_ENV}: {e}"))),
    }
}

type Sink = csv::Writer<Box<dyn Write>>;

fn csv_sink(out: Option<&Path>) -> CliResult<Sink> {
    let w: Box<dyn Write> = match out {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).map_err(|e| CliError::io(p, e))?,
        )),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(w))
}

fn write_rows<T: Serialize>(
    out: Option<&Path>,
    rows: &[T],
    manifest: &mut RunManifest,
) -> CliResult<()> {
    let mut w = csv_sink(out)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))?;
    if let Some(p) = out {
        manifest.output(p);
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Format("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Format(format!("thread pool: {e}")))?;
    let threads = cli.threads;
    pool.install(|| match cli.command {
        Command::GenData(a) => gen_data(a, threads),
        Command::Delta(a) => delta(a, threads),
        Command::Train(a) => train(a, threads),
        Command::Eval(a) => eval(a, threads),
        Command::Mine(a) => mine(a, threads),
        Command::Gradcheck(a) => gradcheck(a, threads),
        Command::BenchLowrank(a) => bench_lowrank(a, threads),
        Command::BenchMining(a) => bench_mining(a, threads),
    })
}

#[derive(Serialize)]
struct DeltaRow {
    delta: f64,
    diam: f64,
    delta_rel: f64,
    sample_size: usize,
    trials: usize,
    seed: u64,
}

/// Trials run on the current rayon pool; the mean is taken in trial order.
pub fn sampled_delta(
    data: &SyntheticDataset,
    cfg: &SamplingConfig,
) -> CliResult<HyperbolicityReport> {
    let coords: Vec<&[f64]> = data.points.iter().map(|p| p.coords()).collect();
    let reports = (0..cfg.trials)
        .into_par_iter()
        .map(|t| delta_rel_trial(&coords, cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_report(&reports)?)
}

fn gen_data(a: GenDataArgs, threads: usize) -> CliResult<()> {
    let d = TreeConfig::default();
    let seed = resolve_seed(a.seed, d.seed)?;
    let cfg = TreeConfig {
        depth: a.depth.unwrap_or(d.depth),
        branching: a.branching.unwrap_or(d.branching),
        classes: a.classes.unwrap_or(d.classes),
        dim: a.dim.unwrap_or(d.dim),
        noise_scale: a.noise.unwrap_or(d.noise_scale),
        per_class: a.per_class.unwrap_or(d.per_class),
        seed,
        kappa: a.kappa.unwrap_or(d.kappa),
        nuisance_dims: a.nuisance_dims.unwrap_or(d.nuisance_dims),
        nuisance_scale: a.nuisance_scale.unwrap_or(d.nuisance_scale),
        root_offset: a.root_offset.unwrap_or(d.root_offset),
        level_decay: a.level_decay.unwrap_or(d.level_decay),
        radial_weight: a.radial_weight.unwrap_or(d.radial_weight),
    };
    let mut m = RunManifest::new(
        "gen-data",
        Some(seed),
        threads,
        json!({ "tree": TreeConfigFile::from(cfg), "control": a.control }),
    );
    let mut data = m.time("generate", || generate_tree_dataset(&cfg))?;
    if a.control {
        data = m.time("control", || gaussian_control(&data, seed ^ 0x636f_6e74))?;
    }
    m.time("write", || write_dataset(&a.out, &data))?;
    m.output(&a.out);

    let quick = SamplingConfig {
        metric: Metric::Poincare(data.kappa()),
        sample_size: data.len().min(100),
        trials: 10,
        seed,
    };
    let report = m.time("delta", || sampled_delta(&data, &quick))?;
    m.record("delta_rel_quick", report.delta_rel);
    println!("points,classes,delta_rel");
    println!("{},{},{}", data.len(), data.num_classes(), report.delta_rel);
    m.finish()
}

fn delta(a: DeltaArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    let mut m = RunManifest::new(
        "delta",
        Some(seed),
        threads,
        json!({
            "in": a.input, "metric": format!("{:?}", a.metric).to_lowercase(), "kappa": a.kappa,
            "samples": a.samples, "trials": a.trials,
        }),
    );
    let data = m.time("read", || read_dataset(&a.input))?;
    let metric = match a.metric {
        MetricArg::Euclidean => Metric::Euclidean,
        MetricArg::Poincare => Metric::Poincare(match a.kappa {
            Some(k) => CurvatureMag::new(k)?,
            None => data.kappa(),
        }),
    };
    let cfg = SamplingConfig {
        metric,
        sample_size: a.samples,
        trials: a.trials,
        seed,
    };
    let r = m.time("sample", || sampled_delta(&data, &cfg))?;
    let row = DeltaRow {
        delta: r.delta,
        diam: r.diam,
        delta_rel: r.delta_rel,
        sample_size: a.samples,
        trials: a.trials,
        seed,
    };
    write_rows(a.out.as_deref(), &[row], &mut m)?;
    m.finish()
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: Option<f64>,
    hard_queries: usize,
}

fn train(a: TrainArgs, threads: usize) -> CliResult<()> {
    let mut file = match &a.config {
        Some(p) => read_json::<TrainConfigFile>(p)?,
        None => TrainConfigFile::default(),
    };
    if let Some(s) = a.steps {
        file.steps = s;
    }
    file.seed = resolve_seed(a.seed, file.seed)?;
    let mut m = RunManifest::new(
        "train",
        Some(file.seed),
        threads,
        json!({ "data": a.data, "train": file }),
    );
    let data = m.time("read", || read_dataset(&a.data))?;
    let cfg: TrainConfig = file.resolve(&data);
    m.config["resolved_ghdm"] =
        serde_json::to_value(crate::formats::GhdmConfigFile::from(cfg.ghdm))
            .expect("config serializes");
    let init = GeneratorParams::random(cfg.ghdm, cfg.seed)?;
    let (pool, _) = split_classes(data.num_classes());
    let outcome = m.time("train", || train_from(init, &data, &pool, &cfg))?;

    write_checkpoint(&a.out_checkpoint, &outcome.params)?;
    m.output(&a.out_checkpoint);
    let rows: Vec<LossRow> = outcome
        .losses
        .iter()
        .zip(&outcome.hard_counts)
        .enumerate()
        .map(|(step, (&loss, &hard_queries))| LossRow {
            step,
            loss,
            hard_queries,
        })
        .collect();
    write_rows(Some(&a.out_metrics), &rows, &mut m)?;
    let smoothed = outcome.smoothed_final_loss(50);
    m.record("smoothed_final_loss", smoothed);
    eprintln!(
        "trained {} steps, smoothed final loss {}",
        cfg.steps,
        smoothed.map_or("n/a".to_string(), |l| format!("{l:.4}"))
    );
    m.finish()
}

fn check_compatible(params: &GeneratorParams, data: &SyntheticDataset) -> CliResult<()> {
    let c = params.config();
    if c.dim != data.dim() || c.base_kappa != data.config.kappa {
        return Err(CliError::Format(format!(
            "checkpoint expects dim {} and curvature {}, dataset has dim {} and curvature {}",
            c.dim,
            c.base_kappa,
            data.dim(),
            data.config.kappa
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    episodes: usize,
    threshold: f64,
    adapted_accuracy: f64,
    adapted_ci95: f64,
    fixed_accuracy: f64,
    fixed_ci95: f64,
    fixed_easy_accuracy: f64,
    fixed_hard_accuracy: f64,
    hard_fraction: f64,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    queries: usize,
    hard: usize,
    correct: usize,
    fixed_correct: usize,
    fixed_correct_easy: usize,
    fixed_correct_hard: usize,
}

/// Held-out evaluation with episodes spread over the current rayon pool.
pub fn parallel_evaluate(
    params: &GeneratorParams,
    data: &SyntheticDataset,
    cfg: &EvalConfig,
) -> CliResult<(EvalReport, Vec<hypergeo_core::trainer::EpisodeScore>)> {
    check_compatible(params, data)?;
    cfg.shape.validate()?;
    let (_, held_out) = split_classes(data.num_classes());
    let members = data.class_members();
    let scores = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| eval_episode(params, data, &members, &held_out, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((summarize(&scores), scores))
}

fn eval(a: EvalArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    let cfg = EvalConfig {
        shape: EpisodeShape {
            ways: a.ways,
            shots: a.shots,
            queries: a.queries,
        },
        threshold: a.threshold,
        episodes: a.episodes,
        seed,
    };
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(CliError::Format("--threshold must lie in [0, 1]".into()));
    }
    let mut m = RunManifest::new(
        "eval",
        Some(seed),
        threads,
        json!({
            "data": a.data, "checkpoint": a.checkpoint, "episodes": a.episodes, "threshold": a.threshold,
            "ways": a.ways, "shots": a.shots, "queries": a.queries,
        }),
    );
    let data = m.time("read", || read_dataset(&a.data))?;
    let params = read_checkpoint(&a.checkpoint)?;
    let (r, scores) = m.time("evaluate", || parallel_evaluate(&params, &data, &cfg))?;
    let row = EvalRow {
        episodes: r.episodes,
        threshold: cfg.threshold,
        adapted_accuracy: r.adapted.mean,
        adapted_ci95: r.adapted.ci95,
        fixed_accuracy: r.fixed.mean,
        fixed_ci95: r.fixed.ci95,
        fixed_easy_accuracy: r.fixed_easy_accuracy,
        fixed_hard_accuracy: r.fixed_hard_accuracy,
        hard_fraction: r.hard_fraction,
    };
    write_rows(a.out_metrics.as_deref(), &[row], &mut m)?;
    if let Some(p) = &a.out_episodes {
        let rows: Vec<EpisodeRow> = scores
            .iter()
            .enumerate()
            .map(|(episode, s)| EpisodeRow {
                episode,
                queries: s.queries,
                hard: s.hard,
                correct: s.correct,
                fixed_correct: s.fixed_correct,
                fixed_correct_easy: s.fixed_correct_easy,
                fixed_correct_hard: s.fixed_correct_hard,
            })
            .collect();
        write_rows(Some(p), &rows, &mut m)?;
    }
    m.finish()
}

#[derive(Serialize)]
struct MineRow {
    query_index: usize,
    d1: f64,
    d2: f64,
    ratio: f64,
    selected: bool,
}

fn mine(a: MineArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Format("--threshold must lie in [0, 1]".into()));
    }
    let mut m = RunManifest::new(
        "mine",
        Some(seed),
        threads,
        json!({ "data": a.data, "checkpoint": a.checkpoint, "threshold": a.threshold, "episode": a.episode }),
    );
    let data = read_dataset(&a.data)?;
    let params = read_checkpoint(&a.checkpoint)?;
    check_compatible(&params, &data)?;
    let (_, held_out) = split_classes(data.num_classes());
    let members = data.class_members();
    let ep = sample_episode(
        &data,
        &members,
        &held_out,
        EpisodeShape::default(),
        seed,
        a.episode,
    )?;
    let ranked = m.time("rank", || rank_queries(&ep.query, &ep.prototypes()?))?;
    let hard = select_hard(&ranked, a.threshold);
    m.record("hard_queries", hard.len());
    let rows: Vec<MineRow> = ranked
        .iter()
        .map(|r| MineRow {
            query_index: r.query,
            d1: r.d1,
            d2: r.d2,
            ratio: r.ratio,
            selected: r.is_hard(a.threshold),
        })
        .collect();
    write_rows(a.out.as_deref(), &rows, &mut m)?;
    m.finish()
}

#[derive(Serialize)]
struct ProbeRow {
    param: &'static str,
    index: usize,
    analytic: f64,
    numeric: f64,
    rel_error: f64,
}

fn gradcheck(a: GradcheckArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    let ghdm = GhdmConfig {
        hidden: a.hidden.unwrap_or(4 * a.dim),
        ..GhdmConfig::new(a.dim, a.rank)
    };
    let check = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut m = RunManifest::new(
        "gradcheck",
        Some(seed),
        threads,
        json!({ "ghdm": crate::formats::GhdmConfigFile::from(ghdm), "step": check.step, "tolerance": a.tolerance }),
    );
    let report = m.time("check", || check_random(ghdm, &check))?;
    let rows: Vec<ProbeRow> = report
        .probes
        .iter()
        .map(|p| ProbeRow {
            param: p.param.name(),
            index: p.index,
            analytic: p.analytic,
            numeric: p.numeric,
            rel_error: p.rel_error,
        })
        .collect();
    write_rows(a.out.as_deref(), &rows, &mut m)?;
    m.record("max_rel_error", report.max_rel_error);
    m.finish()?;
    eprintln!("max relative error {:e}", report.max_rel_error);
    if report.max_rel_error.is_nan() || report.max_rel_error >= a.tolerance {
        return Err(CliError::Check(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeRow {
    pub ratio: f64,
    pub points: usize,
    pub slope: Option<f64>,
}

/// One fit per `k / n` that occurs at two or more dimensions with non-zero error.
pub fn error_slopes(rows: &[ErrorRow]) -> Vec<SlopeRow> {
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.rank as f64 / r.dim as f64).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    ratios
        .into_iter()
        .filter_map(|ratio| {
            let (ns, es): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.rank as f64 / r.dim as f64 == ratio && r.median > 0.0)
                .map(|r| (r.dim as f64, r.median))
                .unzip();
            (ns.len() >= 2).then(|| SlopeRow {
                ratio,
                points: ns.len(),
                slope: loglog_slope(&ns, &es),
            })
        })
        .collect()
}

/// Error rows for every dimension, `k = n` appended and ranks above `n` dropped.
pub fn lowrank_table(
    dims: &[usize],
    ranks: &[usize],
    cfg: &ExperimentConfig,
) -> CliResult<Vec<ErrorRow>> {
    let per_dim = dims
        .par_iter()
        .map(|&n| {
            let mut ks: Vec<usize> = ranks.iter().copied().filter(|&k| k <= n).collect();
            ks.push(n);
            ks.sort_unstable();
            ks.dedup();
            lowrank_error_experiment(n, &ks, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_dim.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct ErrorCsvRow {
    dim: usize,
    rank: usize,
    median: f64,
    q25: f64,
    q75: f64,
    q90: f64,
    max: f64,
    samples: usize,
}

fn bench_lowrank(a: BenchLowrankArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    if a.dims.is_empty() || a.ranks.is_empty() {
        return Err(CliError::Format(
            "--dims and --ranks must not be empty".into(),
        ));
    }
    let cfg = ExperimentConfig {
        trials: a.trials,
        points_per_trial: a.points,
        residual_scale: a.residual_scale,
        seed,
        ..ExperimentConfig::default()
    };
    let timing = PairTimingConfig {
        dim: a.timing_dim,
        hidden: a.timing_hidden,
        pairs: a.timing_pairs,
        repeats: a.timing_repeats,
        seed,
    };
    let mut m = RunManifest::new(
        "bench-lowrank",
        Some(seed),
        threads,
        json!({
            "dims": a.dims, "ranks": a.ranks, "trials": a.trials, "points": a.points,
            "residual_scale": a.residual_scale, "kappa": cfg.kappa, "power_iters": cfg.power_iters,
            "timing_dim": a.timing_dim, "timing_ranks": a.timing_ranks, "timing_hidden": a.timing_hidden,
            "timing_pairs": a.timing_pairs, "timing_repeats": a.timing_repeats,
        }),
    );
    let rows = m.time("errors", || lowrank_table(&a.dims, &a.ranks, &cfg))?;
    let csv_rows: Vec<ErrorCsvRow> = rows
        .iter()
        .map(|r| ErrorCsvRow {
            dim: r.dim,
            rank: r.rank,
            median: r.median,
            q25: r.q25,
            q75: r.q75,
            q90: r.q90,
            max: r.max,
            samples: r.samples,
        })
        .collect();
    write_rows(a.out.as_deref(), &csv_rows, &mut m)?;

    let slopes = error_slopes(&rows);
    m.record(
        "slopes",
        serde_json::to_value(&slopes).expect("slopes serialize"),
    );
    for s in &slopes {
        eprintln!(
            "k/n = {}: log-log slope {:?} over {} dims",
            s.ratio, s.slope, s.points
        );
    }
    if let Some(p) = &a.out_slopes {
        write_rows(Some(p), &slopes, &mut m)?;
    }

    if let Some(p) = &a.out_timing {
        // timing runs sequentially so measurements do not compete for cores
        let times = m.time("timing", || {
            a.timing_ranks
                .iter()
                .map(|&k| time_pairs(k, &timing))
                .collect::<Result<Vec<_>, _>>()
        })?;
        write_rows(Some(p), &times, &mut m)?;
    }
    m.finish()
}

fn bench_mining(a: BenchMiningArgs, threads: usize) -> CliResult<()> {
    let seed = resolve_seed(a.seed, 0)?;
    if a.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::Format("thresholds must lie in [0, 1]".into()));
    }
    let mut m = RunManifest::new(
        "bench-mining",
        Some(seed),
        threads,
        json!({
            "data": a.data, "checkpoint": a.checkpoint, "thresholds": a.thresholds,
            "episodes": a.episodes, "repeats": a.repeats,
        }),
    );
    let data = match &a.data {
        Some(p) => read_dataset(p)?,
        None => generate_tree_dataset(&TreeConfig {
            seed,
            ..TreeConfig::default()
        })?,
    };
    let params = match &a.checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => {
            let file = TrainConfigFile::default();
            GeneratorParams::random(file.resolve(&data).ghdm, seed)?
        }
    };
    check_compatible(&params, &data)?;
    let times = m.time("timing", || {
        time_evaluation(&params, &data, &a.thresholds, a.episodes, a.repeats, seed)
    })?;
    write_rows(a.out.as_deref(), &times, &mut m)?;
    m.finish()
}

//! The `msp` command line: train, sensitivity, search, prune, eval, oracle,
//! analyze.
//!
//! Exit codes: 0 success, 2 usage error (including a bad `N:M` target),
//! 3 input or format error, 4 numerical or search failure.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{curves_csv, summarize_search, LabeledRun};
use crate::corpus::{split_corpus, CorpusSplits, DEFAULT_CALIB_SIZE, DEFAULT_SPLITS};
use crate::error::{Error, Result};
use crate::evo::{
    exhaustive_oracle, run_search, EvoConfig, InitMode, SearchTrace, SparsityIndividual, Target,
    DEFAULT_ORACLE_CAP,
};
use crate::io::{read, write_atomic};
use crate::masks::{build_maskset, masks_to_json, metric_scores, Metric};
use crate::model::{
    apply_masks, init_model, load_checkpoint, perplexity, save_checkpoint, train_model,
    ModelConfig, ModelParams, TrainHyper,
};
use crate::sensitivity::{fim_layer_traces, loss_landscape, LayerSensitivityReport};

pub use config::{parse_splits, parse_target, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;

/// Bytes of the calibration split used as search fitness text.
pub const DEFAULT_FITNESS_BYTES: usize = 8192;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Target(_) => EXIT_USAGE,
        Error::Config(_) | Error::Input(_) | Error::Format { .. } | Error::Io { .. } => EXIT_INPUT,
        Error::Search(_) | Error::Numerical(_) => EXIT_FAILURE,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "msp",
    version,
    about = "Mixed N:M sparsity search for a byte-level MLP language model"
)]
pub struct Cli {
    /// JSON run configuration; explicit flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from scratch on the train split
    Train(TrainArgs),
    /// Per-layer FIM traces on the calibration set
    Sensitivity(SensitivityArgs),
    /// Evolutionary search for per-layer sparsity levels
    Search(SearchArgs),
    /// Prune a model with one sparsity assignment
    Prune(PruneArgs),
    /// Perplexity of a model on a corpus split
    Eval(EvalArgs),
    /// Exhaustive search over every feasible assignment
    Oracle(OracleArgs),
    /// Summaries and plot data from search traces
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// train,calib,eval fractions, e.g. 0.8,0.1,0.1
    #[arg(long)]
    splits: Option<String>,
    /// Seed for the calibration window draw
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    calib_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON model configuration (default: the desk preset)
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Use the tiny preset instead of the desk preset
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-layer loss landscapes here
    #[arg(long)]
    landscape_out: Option<PathBuf>,
    /// Comma-separated perturbation sizes for the landscapes
    #[arg(long, default_value = "0,0.005,0.01,0.02,0.05")]
    epsilons: String,
    #[arg(long, default_value_t = 16)]
    directions: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Average sparsity "N:M" (N pruned of every M)
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init: Option<InitMode>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    mutation_retries: Option<usize>,
    /// Bytes of calibration text used for fitness
    #[arg(long)]
    fitness_bytes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    metric: Option<Metric>,
    /// Comma-separated pruned-per-group counts, one per layer
    #[arg(long, conflicts_with = "trace")]
    genes: Option<String>,
    /// Take the best individual of a search trace
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pruned checkpoint
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    masks_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// train, calib or eval
    #[arg(long, default_value = "eval")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    fitness_bytes: Option<usize>,
    /// Refuse spaces with more feasible individuals than this
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    cap: u128,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Search trace, optionally labelled with its group: `[GROUP=]PATH`
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    /// Sensitivity report used for trace–sparsity correlations
    #[arg(long)]
    sensitivity: PathBuf,
    /// Group size M of the traced individuals
    #[arg(long, default_value_t = 4)]
    m: u32,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::input("--threads must be >= 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Train(a) => train(a, &cfg),
        Command::Sensitivity(a) => sensitivity(a, &cfg),
        Command::Search(a) => search(a, &cfg),
        Command::Prune(a) => prune(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Oracle(a) => oracle(a, &cfg),
        Command::Analyze(a) => analyze(a),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MSP_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::input(format!("MSP_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// MSP_SEED, then the flag, then the config file, then 0.
fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    Ok(env_seed()?.or(flag).or(cfg.seed).unwrap_or(0))
}

fn require<'a>(
    flag: &'a Option<PathBuf>,
    cfg: &'a Option<PathBuf>,
    name: &str,
) -> Result<&'a Path> {
    flag.as_deref()
        .or(cfg.as_deref())
        .ok_or_else(|| Error::input(format!("--{name} is required")))
}

fn resolve_target(flag: &Option<String>, cfg: &RunConfig) -> Result<Target> {
    match flag.as_ref().or(cfg.target.as_ref()) {
        Some(t) => parse_target(t),
        None => Err(Error::input("--target is required")),
    }
}

fn load_splits(data: &DataArgs, cfg: &RunConfig, window: usize) -> Result<CorpusSplits> {
    let path = require(&data.corpus, &cfg.corpus, "corpus")?;
    let fractions = match &data.splits {
        Some(s) => parse_splits(s)?,
        None => cfg.splits.unwrap_or(DEFAULT_SPLITS),
    };
    let n_calib = data
        .calib_size
        .or(cfg.calib_size)
        .unwrap_or(DEFAULT_CALIB_SIZE);
    let seed = data.split_seed.or(cfg.split_seed).unwrap_or(0);
    let bytes = read(path)?;
    split_corpus(&bytes, fractions, window, n_calib, seed)
}

fn load_model(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<(ModelParams, ModelConfig)> {
    load_checkpoint(require(flag, &cfg.model, "model")?)
}

fn json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn fitness_text(splits: &CorpusSplits, bytes: usize) -> Result<&[u8]> {
    if bytes == 0 {
        return Err(Error::input("--fitness-bytes must be >= 1"));
    }
    Ok(&splits.calib[..bytes.min(splits.calib.len())])
}

fn train(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let config = match a.model_config.as_ref().or(cfg.model_config.as_ref()) {
        Some(p) => {
            let c: ModelConfig =
                serde_json::from_slice(&read(p)?).map_err(|e| Error::format(p, e.to_string()))?;
            c.validate()?;
            c
        }
        None if a.tiny => ModelConfig::tiny(),
        None => ModelConfig::desk(),
    };
    let seed = resolve_seed(a.seed, cfg)?;
    let defaults = TrainHyper::default();
    let hyper = TrainHyper {
        lr: a.lr.or(cfg.lr).unwrap_or(defaults.lr),
        epochs: a.epochs.or(cfg.epochs).unwrap_or(defaults.epochs),
        batch_size: a
            .batch_size
            .or(cfg.batch_size)
            .unwrap_or(defaults.batch_size),
        seed,
    };
    let splits = load_splits(&a.data, cfg, config.window)?;
    let init = init_model(&config, seed)?;
    let (params, curve) = train_model(&init, &splits.train, &hyper)?;
    for (epoch, loss) in curve.iter().enumerate() {
        log::info!("epoch {epoch}: train loss {loss:.4}");
    }
    let ppl = perplexity(&params, &splits.eval, None)?;
    save_checkpoint(&params, &config, &a.out)?;
    println!("eval ppl {ppl:.4}");
    Ok(())
}

fn parse_epsilons(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|e| e.is_finite())
                .ok_or_else(|| Error::input(format!("bad epsilon {p:?}")))
        })
        .collect()
}

fn sensitivity(a: SensitivityArgs, cfg: &RunConfig) -> Result<()> {
    let (params, config) = load_model(&a.model, cfg)?;
    let splits = load_splits(&a.data, cfg, config.window)?;
    let report = fim_layer_traces(&params, &splits.calib_set)?;
    write_atomic(&a.out, &report.to_json())?;
    if let Some(path) = &a.landscape_out {
        let epsilons = parse_epsilons(&a.epsilons)?;
        let seed = resolve_seed(a.seed, cfg)?;
        let curves = (0..params.num_prunable())
            .map(|l| loss_landscape(&params, &splits.calib_set, l, &epsilons, a.directions, seed))
            .collect::<Result<Vec<_>>>()?;
        write_atomic(path, &json_pretty(&curves))?;
    }
    for (name, trace) in report.layers.iter().map(|l| (&l.name, l.trace)) {
        println!("{name}\t{trace:.6}");
    }
    Ok(())
}

fn search(a: SearchArgs, cfg: &RunConfig) -> Result<()> {
    let target = resolve_target(&a.target, cfg)?;
    let (params, config) = load_model(&a.model, cfg)?;
    let defaults = EvoConfig::default();
    let evo = EvoConfig {
        population_size: a
            .pop
            .or(cfg.population_size)
            .unwrap_or(defaults.population_size),
        generations: a.gens.or(cfg.generations).unwrap_or(defaults.generations),
        mutation_rate: a
            .mutation_rate
            .or(cfg.mutation_rate)
            .unwrap_or(defaults.mutation_rate),
        seed: resolve_seed(a.seed, cfg)?,
        init_mode: a.init.or(cfg.init_mode).unwrap_or(defaults.init_mode),
        metric: a.metric.or(cfg.metric).unwrap_or(defaults.metric),
        max_retries: a
            .max_retries
            .or(cfg.max_retries)
            .unwrap_or(defaults.max_retries),
        mutation_retries: a
            .mutation_retries
            .or(cfg.mutation_retries)
            .unwrap_or(defaults.mutation_retries),
    };
    if target.m as usize != config.group_size {
        return Err(Error::input(format!(
            "target {target} does not match the model's group size {}",
            config.group_size
        )));
    }
    let splits = load_splits(&a.data, cfg, config.window)?;
    let scores = metric_scores(evo.metric, &params, &splits.calib_set)?;
    let text = fitness_text(
        &splits,
        a.fitness_bytes
            .or(cfg.fitness_bytes)
            .unwrap_or(DEFAULT_FITNESS_BYTES),
    )?;
    let trace = run_search(&params, &scores, text, target, &evo)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(|d| d.join("search.jsonl")));
    emit(out.as_deref(), trace.to_jsonl().as_bytes())?;
    log::info!(
        "best ppl {:.4} with {:?} ({} cache hits)",
        trace.best_ppl,
        trace.best_individual,
        trace.cache_hits
    );
    Ok(())
}

fn parse_genes(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|g| {
            g.trim()
                .parse::<u32>()
                .map_err(|_| Error::input(format!("bad gene {g:?}")))
        })
        .collect()
}

fn load_trace(path: &Path) -> Result<SearchTrace> {
    let text = String::from_utf8(read(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    SearchTrace::from_jsonl(&text).map_err(|reason| Error::format(path, reason))
}

fn prune(a: PruneArgs, cfg: &RunConfig) -> Result<()> {
    let (params, config) = load_model(&a.model, cfg)?;
    let layers = params.num_prunable();
    let m = config.group_size as u32;
    let genes = match (&a.genes, &a.trace) {
        (Some(g), _) => parse_genes(g)?,
        (None, Some(p)) => load_trace(p)?.best_individual,
        (None, None) => vec![resolve_target(&a.target, cfg)?.n; layers],
    };
    if genes.len() != layers {
        return Err(Error::input(format!(
            "{} genes for a model with {layers} prunable layers",
            genes.len()
        )));
    }
    let total: u32 = genes.iter().sum();
    let n = total / layers as u32;
    let individual = SparsityIndividual::new(genes, m, n)
        .map_err(|e| Error::input(format!("{e} (gene sum must be a multiple of {layers})")))?;
    if let Some(t) = a.target.as_ref().or(cfg.target.as_ref()) {
        let t = parse_target(t)?;
        if t != individual.target() {
            return Err(Error::input(format!(
                "individual averages {}, not the requested {t}",
                individual.target()
            )));
        }
    }
    let metric = a.metric.or(cfg.metric).unwrap_or(Metric::Wanda);
    let splits = load_splits(&a.data, cfg, config.window)?;
    let scores = metric_scores(metric, &params, &splits.calib_set)?;
    let masks = build_maskset(&scores, &individual)?;
    let pruned = apply_masks(&params, &masks)?;
    save_checkpoint(&pruned, &config, &a.out)?;
    if let Some(p) = &a.masks_out {
        write_atomic(p, &masks_to_json(&masks, &params.layer_names()))?;
    }
    let ppl = perplexity(&pruned, &splits.eval, None)?;
    println!("eval ppl {ppl:.4}");
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    split: &'a str,
    bytes: usize,
    ppl: f64,
}

fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let (params, config) = load_model(&a.model, cfg)?;
    let splits = load_splits(&a.data, cfg, config.window)?;
    let text = match a.split.as_str() {
        "train" => &splits.train,
        "calib" => &splits.calib,
        "eval" => &splits.eval,
        other => {
            return Err(Error::input(format!(
                "unknown split {other:?} (expected train, calib or eval)"
            )))
        }
    };
    let ppl = perplexity(&params, text, None)?;
    let report = EvalReport {
        split: &a.split,
        bytes: text.len(),
        ppl,
    };
    emit(a.out.as_deref(), &json_pretty(&report))
}

#[derive(Serialize)]
struct OracleReport {
    target: String,
    feasible: String,
    genes: Vec<u32>,
    ppl: f64,
}

fn oracle(a: OracleArgs, cfg: &RunConfig) -> Result<()> {
    let target = resolve_target(&a.target, cfg)?;
    let (params, config) = load_model(&a.model, cfg)?;
    if target.m as usize != config.group_size {
        return Err(Error::input(format!(
            "target {target} does not match the model's group size {}",
            config.group_size
        )));
    }
    let metric = a.metric.or(cfg.metric).unwrap_or(Metric::Wanda);
    let splits = load_splits(&a.data, cfg, config.window)?;
    let scores = metric_scores(metric, &params, &splits.calib_set)?;
    let text = fitness_text(
        &splits,
        a.fitness_bytes
            .or(cfg.fitness_bytes)
            .unwrap_or(DEFAULT_FITNESS_BYTES),
    )?;
    let res = exhaustive_oracle(&params, &scores, text, target, a.cap)?;
    let report = OracleReport {
        target: target.to_string(),
        feasible: res.feasible.to_string(),
        genes: res.best.individual.genes,
        ppl: res.best.ppl,
    };
    emit(a.out.as_deref(), &json_pretty(&report))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let bytes = read(&a.sensitivity)?;
    let report: LayerSensitivityReport =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&a.sensitivity, e.to_string()))?;
    let mut runs = Vec::with_capacity(a.runs.len());
    for spec in &a.runs {
        let (group, path) = match spec.split_once('=') {
            Some((g, p)) => (g.to_string(), PathBuf::from(p)),
            None => ("all".to_string(), PathBuf::from(spec)),
        };
        let run_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.clone());
        runs.push(LabeledRun {
            run_id,
            group,
            trace: load_trace(&path)?,
        });
    }
    let summary = summarize_search(&runs, &report, a.m)?;
    match &a.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_atomic(&dir.join("summary.json"), &summary.to_json())?;
            write_atomic(&dir.join("curves.csv"), curves_csv(&runs).as_bytes())?;
            write_atomic(
                &dir.join("correlation.csv"),
                summary.correlation_csv().as_bytes(),
            )?;
        }
        None => emit(None, &summary.to_json())?,
    }
    for g in &summary.groups {
        eprintln!(
            "{}: {} runs, median best ppl {:.4}, median gen-0 best {:.4}, median plateau {}",
            g.key, g.runs, g.median_best_ppl, g.median_gen0_best_ppl, g.median_plateau_generation
        );
    }
    Ok(())
}

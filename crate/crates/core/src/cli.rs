//! The `sparse-cf` command line.
//!
//! Every subcommand resolves one [`RunConfig`] from defaults, an optional
//! TOML file (`--config`) and flags, in that order, and writes it as
//! `<command>.config.toml` next to its outputs.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    read_catalog, read_schema, read_transactions, write_catalog, write_schema, write_transactions, CatalogRecord,
    CorpusError, FeatureSchema, ItemCatalog, ItemFeatures, TransactionLog,
};
use crate::eval::{
    evaluate_ranking, nearest_neighbors, ranking_task_from_logs, write_neighbors_tsv, EvalError, ModelRanker,
    RandomRanker, RankingReport,
};
use crate::nn::{load_model, save_model, Activation, Architecture, ModelBundle, ModelSpec, NnError};
use crate::synth::{
    generate_content_corpus, generate_feedback, matrix_to_stats, run_convergence_experiment, run_ratio_sweep,
    summarize, ContentCorpusConfig, ConvergenceConfig, RatioSweepConfig, SynthError, SyntheticConfig,
};
use crate::train::{train_content, LossMode, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Table positions reported by `neighbors` unless `--positions` is given.
pub const DEFAULT_POSITIONS: [usize; 8] = [0, 10, 100, 1000, 10_000, 20_000, 50_000, 100_000];

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const SCHEMA_FILE: &str = "schema.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs; exit code 2.
    Config(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => CliError::Config(m),
            SynthError::Train(t) => t.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidK | EvalError::InsufficientItems { .. } | EvalError::UnknownItem(_) => {
                CliError::Config(e.to_string())
            }
            EvalError::Model(m) => m.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Config(format!("{}: not found", path.display())),
        _ => CliError::Runtime(format!("{}: {e}", path.display())),
    }
}

fn corpus_err(path: &Path) -> impl FnOnce(CorpusError) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "sparse-cf",
    version,
    about = "Log-cosine collaborative filtering experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Evaluation threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic feedback matrix summary, or a content corpus.
    SynthGen(SynthGenArgs),
    /// Train the indicator model on the full objective and compare to the cosine oracle.
    ValidateObjective(ValidateArgs),
    /// Monte Carlo training at several sampling ratios.
    RatioSweep(SweepArgs),
    /// Train a content model on a corpus directory.
    Train(TrainArgs),
    /// Rank held-out co-purchases against a sampled pool.
    Evaluate(EvaluateArgs),
    /// Items at fixed positions of the embedding-distance ordering.
    Neighbors(NeighborArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::ValidateObjective(_) => "validate-objective",
            Command::RatioSweep(_) => "ratio-sweep",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Neighbors(_) => "neighbors",
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub p_low: Option<f64>,
    #[arg(long)]
    pub p_high: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthGenArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Write a content corpus instead of a matrix summary.
    #[arg(long)]
    pub corpus: bool,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub items_per_cluster: Option<usize>,
    #[arg(long)]
    pub test_items_per_cluster: Option<usize>,
    #[arg(long)]
    pub corpus_users: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Exit 1 unless the final metrics meet the thresholds.
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub max_rmse: Option<f64>,
    #[arg(long)]
    pub min_spearman: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long)]
    pub k_cp: Option<usize>,
    /// Fixed candidates per seed; `0` sets `k_s = k_r`.
    #[arg(long)]
    pub k_r: Option<usize>,
    /// Multiples of `|CP|/Z²`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Corpus directory with catalog.jsonl, schema.tsv and train.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long)]
    pub k_cp: Option<usize>,
    #[arg(long)]
    pub k_s: Option<usize>,
    #[arg(long)]
    pub k_r: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d_emb: Option<usize>,
    #[arg(long)]
    pub d_item: Option<usize>,
    #[arg(long)]
    pub d_head: Option<usize>,
    #[arg(long)]
    pub d_rnn: Option<usize>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Share the seed and candidate embedders.
    #[arg(long)]
    pub tied: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvaluateArgs {
    /// Corpus directory with catalog.jsonl, schema.tsv, train.tsv and test.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `random` scores candidates uniformly at random and needs no model.
    #[arg(long)]
    pub arch: Option<String>,
    /// Recall cutoffs, comma separated. 30 is always reported.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct NeighborArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Anchor item id.
    #[arg(long)]
    pub item: String,
    /// Positions in the distance ordering, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub full_weight_scale: f64,
    pub max_rmse: f64,
    pub min_spearman: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        let c = ConvergenceConfig::default();
        ConvergenceSection {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            full_weight_scale: c.full_weight_scale,
            max_rmse: 1e-3,
            min_spearman: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_items: usize,
    pub k_cp: usize,
    pub multipliers: Vec<f64>,
    /// `0` sets `k_s = k_r`.
    pub k_r: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub spearman_target: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let c = RatioSweepConfig::default();
        SweepSection {
            n_items: c.synthetic.n_items,
            k_cp: c.k_cp,
            multipliers: c.multipliers,
            k_r: c.k_r.unwrap_or(0),
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            spearman_target: c.spearman_target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub ks: Vec<usize>,
    pub pool_size: usize,
    pub n_seeds: usize,
    pub positions: Vec<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            ks: vec![1, 10, 30],
            pool_size: 5000,
            n_seeds: 100,
            positions: DEFAULT_POSITIONS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

/// Everything a run depends on. The master `seed` is copied into every
/// section that has its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub synthetic: SyntheticConfig,
    pub corpus: ContentCorpusConfig,
    pub convergence: ConvergenceSection,
    pub sweep: SweepSection,
    pub training: TrainConfig,
    pub model: ModelSpec,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("out"),
            workers: 1,
            synthetic: SyntheticConfig::default(),
            corpus: ContentCorpusConfig::default(),
            convergence: ConvergenceSection::default(),
            sweep: SweepSection::default(),
            training: TrainConfig::default(),
            model: ModelSpec::default(),
            evaluation: EvaluationSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    fn propagate_seed(&mut self) {
        self.synthetic.seed = self.seed;
        self.corpus.seed = self.seed;
        self.training.seed = self.seed;
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_synthetic(c: &mut SyntheticConfig, a: &SyntheticArgs) {
    set(&mut c.n_items, a.items);
    set(&mut c.n_users, a.users);
    set(&mut c.p_low, a.p_low);
    set(&mut c.p_high, a.p_high);
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => toml::from_str(&fs::read_to_string(path).map_err(io_err(path))?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.global.seed);
    set(&mut cfg.out, cli.global.out.clone());
    set(&mut cfg.workers, cli.global.workers);
    match &cli.command {
        Command::SynthGen(a) => {
            apply_synthetic(&mut cfg.synthetic, &a.synthetic);
            set(&mut cfg.corpus.n_clusters, a.clusters);
            set(&mut cfg.corpus.items_per_cluster, a.items_per_cluster);
            set(&mut cfg.corpus.test_items_per_cluster, a.test_items_per_cluster);
            set(&mut cfg.corpus.n_users, a.corpus_users);
        }
        Command::ValidateObjective(a) => {
            apply_synthetic(&mut cfg.synthetic, &a.synthetic);
            set(&mut cfg.convergence.epochs, a.epochs);
            set(&mut cfg.convergence.learning_rate, a.lr);
            set(&mut cfg.convergence.max_rmse, a.max_rmse);
            set(&mut cfg.convergence.min_spearman, a.min_spearman);
        }
        Command::RatioSweep(a) => {
            apply_synthetic(&mut cfg.synthetic, &a.synthetic);
            set(&mut cfg.sweep.n_items, a.synthetic.items);
            set(&mut cfg.sweep.k_cp, a.k_cp);
            set(&mut cfg.sweep.k_r, a.k_r);
            set(&mut cfg.sweep.multipliers, a.multipliers.clone());
            set(&mut cfg.sweep.epochs, a.epochs);
            set(&mut cfg.sweep.learning_rate, a.lr);
        }
        Command::Train(a) => {
            set(&mut cfg.paths.data, a.data.clone().map(Some));
            set(&mut cfg.model.arch, a.arch);
            set(&mut cfg.training.loss_mode, a.loss);
            set(&mut cfg.training.k_cp, a.k_cp);
            set(&mut cfg.training.k_s, a.k_s);
            set(&mut cfg.training.k_r, a.k_r);
            set(&mut cfg.training.learning_rate, a.lr);
            set(&mut cfg.training.max_epochs, a.epochs);
            set(&mut cfg.training.patience, a.patience);
            set(&mut cfg.training.validation_fraction, a.validation_fraction);
            set(&mut cfg.training.batch_size, a.batch_size);
            set(&mut cfg.model.d_emb, a.d_emb);
            set(&mut cfg.model.d_item, a.d_item);
            set(&mut cfg.model.d_head, a.d_head);
            set(&mut cfg.model.d_rnn, a.d_rnn);
            set(&mut cfg.model.activation, a.activation);
            if a.tied {
                cfg.model.tied = true;
            }
        }
        Command::Evaluate(a) => {
            set(&mut cfg.paths.data, a.data.clone().map(Some));
            set(&mut cfg.paths.model, a.model.clone().map(Some));
            set(&mut cfg.evaluation.ks, a.k.clone());
            set(&mut cfg.evaluation.pool_size, a.pool_size);
            set(&mut cfg.evaluation.n_seeds, a.n_seeds);
        }
        Command::Neighbors(a) => {
            set(&mut cfg.paths.data, a.data.clone().map(Some));
            set(&mut cfg.paths.model, a.model.clone().map(Some));
            set(&mut cfg.evaluation.positions, a.positions.clone());
        }
    }
    cfg.propagate_seed();
    Ok(cfg)
}

/// Runs the binary with `std::env::args` and returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name), runs the command and maps
/// errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSE_CF_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the config and runs the command. `Ok` carries the exit code,
/// which is 1 when a `--check` fails.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = resolve_config(cli)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let path = cfg.out.join(format!("{}.config.toml", cli.command.name()));
    fs::write(&path, cfg.to_toml()?).map_err(io_err(&path))?;
    match &cli.command {
        Command::SynthGen(a) => synth_gen(&cfg, a.corpus),
        Command::ValidateObjective(a) => validate_objective(&cfg, a.check),
        Command::RatioSweep(_) => ratio_sweep(&cfg),
        Command::Train(_) => train(&cfg),
        Command::Evaluate(a) => evaluate(&cfg, a.arch.as_deref()),
        Command::Neighbors(a) => neighbors(&cfg, &a.item),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn synth_gen(cfg: &RunConfig, corpus: bool) -> Result<i32, CliError> {
    if corpus {
        let c = generate_content_corpus(&cfg.corpus)?;
        let out = &cfg.out;
        let p = out.join(SCHEMA_FILE);
        write_schema(create(&p)?, &c.schema).map_err(io_err(&p))?;
        let p = out.join(CATALOG_FILE);
        write_catalog(create(&p)?, &c.catalog).map_err(io_err(&p))?;
        let p = out.join(TRAIN_FILE);
        write_transactions(create(&p)?, &c.train).map_err(io_err(&p))?;
        let p = out.join(TEST_FILE);
        write_transactions(create(&p)?, &c.test).map_err(io_err(&p))?;
        let summary = serde_json::json!({
            "items": c.catalog.len(),
            "train_items": c.train_items.len(),
            "test_items": c.test_items.len(),
            "train_purchases": c.train.len(),
            "test_purchases": c.test.len(),
        });
        write_json(&out.join("corpus_summary.json"), &summary)?;
        println!(
            "wrote {} items, {} training and {} test purchases to {}",
            c.catalog.len(),
            c.train.len(),
            c.test.len(),
            out.display()
        );
        return Ok(EXIT_OK);
    }
    let m = generate_feedback(&cfg.synthetic)?;
    let stats = matrix_to_stats(&m);
    if stats.total_pairs() == 0 {
        warn!("the matrix has no co-purchase pairs; nothing to train on");
    }
    let summary = summarize(&m, &stats);
    write_json(&cfg.out.join("matrix_summary.json"), &summary)?;
    println!(
        "{} users x {} items: density {:.4}, |CP| = {}, Z = {:.3}, |CP|/Z^2 = {:.4}",
        summary.n_users, summary.n_items, summary.density, summary.total_pairs, summary.z, summary.matched_ratio
    );
    Ok(EXIT_OK)
}

fn validate_objective(cfg: &RunConfig, check: bool) -> Result<i32, CliError> {
    let c = &cfg.convergence;
    let config = ConvergenceConfig {
        synthetic: cfg.synthetic.clone(),
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        full_weight_scale: c.full_weight_scale,
    };
    let (_, report) = run_convergence_experiment(&config)?;
    let p = cfg.out.join("convergence_history.csv");
    report.history.write_csv(create(&p)?).map_err(io_err(&p))?;
    write_json(&cfg.out.join("convergence_summary.json"), &report)?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
    println!(
        "pairs with n_CP > 0: {}; final rmse {}; final spearman {}",
        report.n_pairs,
        show(report.final_rmse),
        show(report.final_spearman)
    );
    if check {
        let ok = report.final_rmse.is_some_and(|r| r <= c.max_rmse)
            && report.final_spearman.is_some_and(|s| s >= c.min_spearman);
        if !ok {
            eprintln!(
                "check failed: need rmse <= {} and spearman >= {}",
                c.max_rmse, c.min_spearman
            );
            return Ok(EXIT_FAILURE);
        }
        println!("check passed");
    }
    Ok(EXIT_OK)
}

fn ratio_sweep(cfg: &RunConfig) -> Result<i32, CliError> {
    let s = &cfg.sweep;
    let config = RatioSweepConfig {
        synthetic: SyntheticConfig {
            n_items: s.n_items,
            ..cfg.synthetic.clone()
        },
        k_cp: s.k_cp,
        multipliers: s.multipliers.clone(),
        k_r: (s.k_r > 0).then_some(s.k_r),
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        spearman_target: s.spearman_target,
    };
    let report = run_ratio_sweep(&config)?;
    for run in &report.runs {
        let p = cfg.out.join(format!("{}.csv", run.file_stem()));
        run.write_csv(create(&p)?).map_err(io_err(&p))?;
        println!(
            "{:>5}x  k_s {:>8} k_r {:>5}  shift {:+.4}  median offset {:+.4}  rmse {:.4e}  spearman {:.5}{}",
            run.multiplier,
            run.k_s,
            run.k_r,
            run.shift,
            run.median_offset,
            run.final_rmse,
            run.final_spearman,
            if run.best_rmse { "  best" } else { "" }
        );
    }
    write_json(&cfg.out.join("ratio_sweep_summary.json"), &report)?;
    Ok(EXIT_OK)
}

/// A corpus directory in the layout written by `synth-gen --corpus`.
pub struct CorpusDir {
    pub schema: FeatureSchema,
    pub records: Vec<CatalogRecord>,
    pub train: TransactionLog,
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.paths
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("no corpus directory (use --data)".into()))
}

pub fn load_corpus_dir(dir: &Path) -> Result<CorpusDir, CliError> {
    let p = dir.join(SCHEMA_FILE);
    let schema = read_schema(open(&p)?).map_err(corpus_err(&p))?;
    let p = dir.join(CATALOG_FILE);
    let records = read_catalog(open(&p)?).map_err(corpus_err(&p))?;
    let p = dir.join(TRAIN_FILE);
    let train = TransactionLog::ingest(read_transactions(open(&p)?).map_err(corpus_err(&p))?);
    Ok(CorpusDir { schema, records, train })
}

fn load_test_log(dir: &Path) -> Result<TransactionLog, CliError> {
    let p = dir.join(TEST_FILE);
    Ok(TransactionLog::ingest(
        read_transactions(open(&p)?).map_err(corpus_err(&p))?,
    ))
}

/// Catalog whose vocabularies come from the training items only.
pub fn training_catalog(data: &CorpusDir) -> Result<ItemCatalog, CliError> {
    ItemCatalog::build_with_vocab_from(data.schema.clone(), &data.records, |id| {
        data.train.item_id(id).is_some()
    })
    .map_err(|e| CliError::Config(e.to_string()))
}

/// Catalog tokenized with a saved model's vocabularies.
pub fn model_catalog(bundle: &ModelBundle, records: &[CatalogRecord]) -> Result<ItemCatalog, CliError> {
    let mut cat = ItemCatalog::with_vocabularies(bundle.schema.clone(), bundle.vocabularies.clone());
    for r in records {
        cat.insert(r).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(cat)
}

fn train(cfg: &RunConfig) -> Result<i32, CliError> {
    let data = load_corpus_dir(data_dir(cfg)?)?;
    if data.train.copurchases().is_empty() {
        return Err(CliError::Config("training transactions contain no co-purchases".into()));
    }
    let catalog = training_catalog(&data)?;
    let (model, history) = train_content(&catalog, &data.train, &cfg.model, &cfg.training)?;
    let bundle = ModelBundle {
        schema: catalog.schema().clone(),
        vocabularies: catalog.vocabularies().to_vec(),
        model,
    };
    let model_path = cfg.out.join(MODEL_FILE);
    save_model(&model_path, &bundle)?;
    let p = cfg.out.join("train_history.csv");
    history.write_csv(create(&p)?).map_err(io_err(&p))?;
    let summary = serde_json::json!({
        "arch": cfg.model.arch,
        "epochs": history.len(),
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
        "final_train_loss": history.last().map(|r| r.train_loss),
        "best_val_loss": history.records.iter().filter_map(|r| r.val_loss).reduce(f64::min),
        "n_items": data.train.n_items(),
        "n_copurchases": data.train.copurchases().len(),
    });
    write_json(&cfg.out.join("train_summary.json"), &summary)?;
    println!(
        "trained {} for {} epochs (best {}), model written to {}",
        cfg.model.arch,
        history.len(),
        history.best_epoch,
        model_path.display()
    );
    Ok(EXIT_OK)
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.model.clone().unwrap_or_else(|| cfg.out.join(MODEL_FILE))
}

fn load_bundle(cfg: &RunConfig) -> Result<ModelBundle, CliError> {
    let path = model_path(cfg);
    load_model(&path).map_err(|e| match e {
        NnError::Io(io) => io_err(&path)(io),
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

fn feature_table(catalog: &ItemCatalog) -> Vec<ItemFeatures> {
    (0..catalog.len()).map(|p| catalog.features(p).clone()).collect()
}

fn evaluate(cfg: &RunConfig, arch: Option<&str>) -> Result<i32, CliError> {
    let e = &cfg.evaluation;
    let mut ks = e.ks.clone();
    if !ks.contains(&30) {
        ks.push(30);
    }
    ks.sort_unstable();
    ks.dedup();
    if ks.contains(&0) {
        return Err(CliError::Config("recall cutoffs must be at least 1".into()));
    }
    let dir = data_dir(cfg)?;
    let data = load_corpus_dir(dir)?;
    let test = load_test_log(dir)?;
    let report: RankingReport = match arch {
        Some("random") => {
            let catalog = training_catalog(&data)?;
            let task = ranking_task_from_logs(&catalog, &data.train, &test, e.n_seeds, e.pool_size, cfg.seed)?;
            evaluate_ranking(&RandomRanker { seed: cfg.seed }, &task, &ks, cfg.workers)?
        }
        Some(other) if other.parse::<Architecture>().is_err() => {
            return Err(CliError::Config(format!(
                "unknown --arch {other:?} (expected random or a model architecture)"
            )));
        }
        _ => {
            let bundle = load_bundle(cfg)?;
            if let Some(a) = arch.and_then(|a| a.parse::<Architecture>().ok()) {
                if a != bundle.model.arch() {
                    return Err(CliError::Config(format!(
                        "--arch {a} does not match the model file ({})",
                        bundle.model.arch()
                    )));
                }
            }
            let catalog = model_catalog(&bundle, &data.records)?;
            let task = ranking_task_from_logs(&catalog, &data.train, &test, e.n_seeds, e.pool_size, cfg.seed)?;
            let features = feature_table(&catalog);
            let ranker = ModelRanker::new(&bundle.model, &features, &task)?;
            evaluate_ranking(&ranker, &task, &ks, cfg.workers)?
        }
    };
    let p = cfg.out.join("ranking_report.json");
    let mut w = create(&p)?;
    report.write_json(&mut w).and_then(|_| w.flush()).map_err(io_err(&p))?;
    for (k, v) in &report.recall {
        println!("recall@{k}: {v:.4}");
    }
    println!(
        "mrr: {:.5} over {} seeds, pool {}",
        report.mrr, report.n_seeds, report.pool_size
    );
    info!("ranking report written to {}", p.display());
    Ok(EXIT_OK)
}

fn neighbors(cfg: &RunConfig, item: &str) -> Result<i32, CliError> {
    let data = load_corpus_dir(data_dir(cfg)?)?;
    let bundle = load_bundle(cfg)?;
    let catalog = model_catalog(&bundle, &data.records)?;
    let anchor = catalog
        .position(item)
        .ok_or_else(|| CliError::Config(format!("unknown item id {item:?}")))?;
    let positions: Vec<usize> = cfg
        .evaluation
        .positions
        .iter()
        .copied()
        .filter(|&p| p < catalog.len())
        .collect();
    let features = feature_table(&catalog);
    let rows = nearest_neighbors(&bundle.model, anchor, &features, &positions)?;
    let p = cfg.out.join("neighbors.tsv");
    let mut w = create(&p)?;
    write_neighbors_tsv(
        &mut w,
        &rows,
        |i| catalog.name(i).to_string(),
        |i| catalog.title(i).to_string(),
    )
    .and_then(|_| w.flush())
    .map_err(io_err(&p))?;
    for r in &rows {
        println!(
            "{:>7}  {:<12} {:.6}  {}",
            r.position,
            catalog.name(r.item),
            r.distance,
            catalog.title(r.item)
        );
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_key_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(CliError::Config(_))));
        assert!(RunConfig::from_toml("[training]\nk_cp = 5\nnope = 2").is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\n[training]\nk_cp = 10\nk_r = 2\n").unwrap();
        let cli = Cli::try_parse_from([
            "sparse-cf",
            "--config",
            path.to_str().unwrap(),
            "train",
            "--k-r",
            "4",
            "--arch",
            "dcf-rnn",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.training.seed, 3);
        assert_eq!(cfg.training.k_cp, 10);
        assert_eq!(cfg.training.k_r, 4);
        assert_eq!(cfg.model.arch, Architecture::DcfRnn);
    }

    #[test]
    fn parses_lists_and_modes() {
        let cli = Cli::try_parse_from(["sparse-cf", "evaluate", "--k", "1,10,30", "--arch", "random"]).unwrap();
        let Command::Evaluate(a) = &cli.command else {
            unreachable!()
        };
        assert_eq!(a.k.as_deref(), Some(&[1, 10, 30][..]));
        let cli = Cli::try_parse_from(["sparse-cf", "train", "--loss", "per-seed", "--activation", "relu"]).unwrap();
        let Command::Train(a) = &cli.command else {
            unreachable!()
        };
        assert_eq!(a.loss, Some(LossMode::PerSeed));
        assert_eq!(a.activation, Some(Activation::Relu));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sparse-cf", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(run(["sparse-cf", "train", "--arch", "cnn"]), EXIT_CONFIG);
        assert_eq!(run(["sparse-cf", "--help"]), EXIT_OK);
    }
}

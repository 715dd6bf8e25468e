//! The `pietsp` command line.
//!
//! Every subcommand resolves its settings into one [`RunConfig`] (defaults,
//! then an optional `--config` file, then explicit flags) and writes that
//! resolved config next to its outputs as `effective_config.json`. Passing
//! the file back with `--config` reproduces the run.
//!
//! Exit codes: 0 on success, 1 on any module error, 2 on a usage error.
//! The worker thread count comes from the `PIETSP_THREADS` environment variable.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_inference, reports_table, synthetic_sample, BenchConfig, BenchReport, Precision};
use crate::checkpoint::Checkpoint;
use crate::dataset::{
    convert_interactions, gen_synthetic, load_corpus, prepare_corpus, split_users, ConvertOptions, Corpus, Pattern,
    SplitRatios, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::RankedPrediction;
use crate::model::{forward_sample, init_params, Dims, Variant};
use crate::seed::derive_seed;
use crate::trainer::{evaluate, history_jsonl, TrainConfig, TrainState};

pub const THREADS_ENV: &str = "PIETSP_THREADS";
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

/// Which users of the seeded split a command looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
    #[default]
    All,
}

/// One bench axis swept while the others stay at their base values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    K,
    E,
    D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub axis: Axis,
    pub values: Vec<usize>,
}

impl std::str::FromStr for GridAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, list) = s
            .split_once('=')
            .ok_or_else(|| format!("expected AXIS=v1,v2,..., got `{s}`"))?;
        let axis = match name.trim() {
            "N" | "n" => Axis::N,
            "K" | "k" => Axis::K,
            "E" | "e" => Axis::E,
            "D" | "d" => Axis::D,
            other => return Err(format!("unknown grid axis `{other}` (use N, K, E or D)")),
        };
        let values = parse_usize_list(list)?;
        Ok(Self { axis, values })
    }
}

fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let values: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if values.is_empty() || values.contains(&0) {
        return Err(format!("expected positive integers, got `{s}`"));
    }
    Ok(values)
}

fn parse_k_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_usize_list(s)
}

fn parse_ratios(s: &str) -> std::result::Result<SplitRatios, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [train, val, test] => Ok(SplitRatios { train, val, test }),
        _ => Err(format!("expected TRAIN,VAL,TEST ratios, got `{s}`")),
    }
}

fn parse_delimiter(s: &str) -> std::result::Result<u8, String> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one ASCII character or `tab`, got `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub runs: usize,
    pub batch_size: usize,
    pub precision: Precision,
    pub workers: usize,
    /// Base synthetic shape.
    pub n: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub density: f64,
    pub grid: Vec<GridAxis>,
    pub variant: Variant,
}

impl Default for BenchSettings {
    fn default() -> Self {
        let base = BenchConfig::default();
        Self {
            runs: base.runs,
            batch_size: base.batch_size,
            precision: base.precision,
            workers: base.workers,
            n: 64,
            max_len: 16,
            vocab_size: 4096,
            dim: 32,
            density: 0.3,
            grid: Vec::new(),
            variant: Variant::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSettings {
    pub users: usize,
    pub vocab_size: usize,
    pub history_len: usize,
    pub pattern: Pattern,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            users: 50,
            vocab_size: 100,
            history_len: 8,
            pattern: Pattern::Periodic,
        }
    }
}

/// Every resolved setting of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    /// Checkpoint holding optimizer state to continue training from.
    pub resume: Option<PathBuf>,
    /// Stop this invocation after this many epochs; the schedule still spans `train.max_epochs`.
    pub stop_after: Option<usize>,
    pub part: Part,
    /// Number of ids written per user by `predict`.
    pub top_k: usize,
    pub threads: Option<usize>,
    pub train: TrainConfig,
    pub bench: BenchSettings,
    pub synthetic: SyntheticSettings,
    pub convert: ConvertOptions,
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        if is_toml {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pietsp",
    version,
    about = "Temporal set prediction: train, evaluate, predict and benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model with early stopping; writes best, last and history.jsonl.
    Train(TrainArgs),
    /// Report Recall, nDCG and PHR for a checkpoint on one split part.
    Eval(EvalArgs),
    /// Write the top-k ids per user as JSON lines.
    Predict(PredictArgs),
    /// Time forward passes on synthetic shapes or a corpus.
    Bench(BenchArgs),
    /// Write a synthetic corpus with known structure.
    GenSynthetic(GenArgs),
    /// Turn a delimited interaction dump into a corpus plus vocab.json.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON or TOML run config; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a `last` checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run at most this many epochs now, keeping the schedule of --epochs.
    #[arg(long)]
    stop_after: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Cutoffs, e.g. 10,20,30,40.
    #[arg(long, value_parser = parse_k_list)]
    k: Option<Vec<usize>>,
    /// Train,val,test user ratios, e.g. 0.7,0.1,0.2.
    #[arg(long, value_parser = parse_ratios)]
    split: Option<SplitRatios>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<Part>,
    #[arg(long, value_parser = parse_k_list)]
    k: Option<Vec<usize>>,
    /// Directory for metrics.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<Part>,
    /// Ids per user.
    #[arg(long)]
    k: Option<usize>,
    /// JSON-lines file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Bench a trained model on a corpus instead of synthetic shapes.
    #[arg(long, requires = "data")]
    ckpt: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    data: Option<PathBuf>,
    /// Sweep one axis, e.g. N=64,128,256. Repeatable; axes are N, K, E, D.
    #[arg(long)]
    grid: Vec<GridAxis>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Worker threads per batch; 1 times the sequential path.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Directory for bench.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    pattern: Option<Pattern>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    history_len: Option<usize>,
    /// Corpus JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[command(flatten)]
    common: Common,
    /// Delimited interaction dump with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Corpus JSON path; vocab.json is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    user_column: Option<String>,
    #[arg(long)]
    set_column: Option<String>,
    #[arg(long)]
    item_column: Option<String>,
    /// One character, or `tab`.
    #[arg(long, value_parser = parse_delimiter)]
    delimiter: Option<u8>,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn base_config(common: &Common, command: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            top_k: 10,
            ..RunConfig::default()
        },
    };
    cfg.command = command.to_string();
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.threads = configure_threads()?;
    Ok(cfg)
}

fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    // a second call in the same process leaves the first pool in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Directory a file output lives in, for the effective config.
fn sibling_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => {
            let mut cfg = base_config(&a.common, "train")?;
            set_some(&mut cfg.data, a.data);
            set_some(&mut cfg.out, a.out);
            set_some(&mut cfg.resume, a.resume);
            set_some(&mut cfg.stop_after, a.stop_after);
            let t = &mut cfg.train;
            set(&mut t.max_epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.dim, a.dim);
            set(&mut t.base_lr, a.lr);
            set(&mut t.weight_decay, a.weight_decay);
            set(&mut t.patience, a.patience);
            set(&mut t.split, a.split);
            set(&mut t.variant, a.variant);
            if let Some(k) = a.k {
                if !k.contains(&t.early_stop_k) {
                    t.early_stop_k = k[0];
                }
                t.k_list = k;
            }
            cmd_train(&cfg)
        }
        Command::Eval(a) => {
            let mut cfg = base_config(&a.common, "eval")?;
            set_some(&mut cfg.ckpt, a.ckpt);
            set_some(&mut cfg.data, a.data);
            set_some(&mut cfg.out, a.out);
            set(&mut cfg.part, a.split);
            let k = a.k;
            cmd_eval(&cfg, k)
        }
        Command::Predict(a) => {
            let mut cfg = base_config(&a.common, "predict")?;
            set_some(&mut cfg.ckpt, a.ckpt);
            set_some(&mut cfg.data, a.data);
            set_some(&mut cfg.out, a.out);
            set(&mut cfg.part, a.split);
            set(&mut cfg.top_k, a.k);
            cmd_predict(&cfg)
        }
        Command::Bench(a) => {
            let mut cfg = base_config(&a.common, "bench")?;
            set_some(&mut cfg.ckpt, a.ckpt);
            set_some(&mut cfg.data, a.data);
            set_some(&mut cfg.out, a.out);
            let b = &mut cfg.bench;
            if !a.grid.is_empty() {
                b.grid = a.grid;
            }
            set(&mut b.runs, a.runs);
            set(&mut b.batch_size, a.batch_size);
            set(&mut b.precision, a.precision);
            set(&mut b.workers, a.workers);
            set(&mut b.n, a.n);
            set(&mut b.max_len, a.max_len);
            set(&mut b.vocab_size, a.vocab);
            set(&mut b.dim, a.dim);
            set(&mut b.variant, a.variant);
            cmd_bench(&cfg)
        }
        Command::GenSynthetic(a) => {
            let mut cfg = base_config(&a.common, "gen-synthetic")?;
            set_some(&mut cfg.out, a.out);
            let s = &mut cfg.synthetic;
            set(&mut s.pattern, a.pattern);
            set(&mut s.users, a.users);
            set(&mut s.vocab_size, a.vocab);
            set(&mut s.history_len, a.history_len);
            cmd_gen(&cfg)
        }
        Command::Convert(a) => {
            let mut cfg = base_config(&a.common, "convert")?;
            set_some(&mut cfg.data, a.data);
            set_some(&mut cfg.out, a.out);
            let c = &mut cfg.convert;
            set(&mut c.user_column, a.user_column);
            set(&mut c.set_column, a.set_column);
            set(&mut c.item_column, a.item_column);
            set(&mut c.delimiter, a.delimiter);
            cmd_convert(&cfg)
        }
    }
}

fn load_data(cfg: &RunConfig) -> Result<Corpus> {
    let path = required(&cfg.data, "data")?;
    let (corpus, report) = load_corpus(path)?;
    if report.duplicate_ids_removed + report.empty_sets_dropped + report.users_dropped > 0 {
        log::warn!(
            "{}: removed {} duplicate ids, {} empty sets, {} users",
            path.display(),
            report.duplicate_ids_removed,
            report.empty_sets_dropped,
            report.users_dropped
        );
    }
    Ok(corpus)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let corpus = load_data(cfg)?;
    let split = split_users(&corpus, cfg.train.split, cfg.train.seed)?;
    let max_len = split.train.max_history_len();
    let train = prepare_corpus(&split.train, max_len)?;
    let val = prepare_corpus(&split.val, max_len)?;
    let dims = Dims {
        vocab_size: corpus.vocab_size,
        dim: cfg.train.dim,
        max_len,
    };
    cfg.save(&out.join(EFFECTIVE_CONFIG))?;

    let mut state = match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.dims() != dims {
                return Err(Error::Config(format!(
                    "resume checkpoint has shape {:?} but the data needs {:?}",
                    ck.dims(),
                    dims
                )));
            }
            let mut state = ck.train_state()?;
            if state.config.seed != cfg.train.seed || state.config.split != cfg.train.split {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different seed or split".into(),
                ));
            }
            if state.config.max_epochs != cfg.train.max_epochs {
                log::warn!(
                    "resuming with max_epochs {} instead of {}; the learning-rate schedule changes",
                    cfg.train.max_epochs,
                    state.config.max_epochs
                );
                state.config.max_epochs = cfg.train.max_epochs;
            }
            state
        }
        None => TrainState::new(cfg.train.clone(), dims)?,
    };
    log::info!(
        "train: {} users, val: {} users, |E|={}, K={}, D={}",
        train.len(),
        val.len(),
        dims.vocab_size,
        dims.max_len,
        dims.dim
    );
    let early_k = state.config.early_stop_k;
    let history_path = out.join("history.jsonl");
    let mut history = if cfg.resume.is_some() {
        fs::read_to_string(&history_path).unwrap_or_default()
    } else {
        String::new()
    };
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train and validation parts".into(),
        ));
    }
    let mut ran = 0;
    while !state.finished() && cfg.stop_after.is_none_or(|n| ran < n) {
        let rec = state.step_epoch(&train, &val)?;
        ran += 1;
        log::info!(
            "epoch {:>3}  lr {:.6}  loss {:.6}  val nDCG@{early_k} {:.4}{}",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.val.ndcg_at(early_k).unwrap_or(0.0),
            if rec.improved { "  *" } else { "" }
        );
    }
    history.push_str(&history_jsonl(&state.history)?);
    write_text(&history_path, &history)?;
    Checkpoint::from_params(&state.best_params, &state.config).save(&out.join("best"))?;
    Checkpoint::from_state(&state).save(&out.join("last"))?;
    println!(
        "trained {} epochs; best epoch {} with val nDCG@{early_k} {:.4}; wrote {}",
        state.epochs_done,
        state.stopper.best_epoch.unwrap_or(0),
        state.stopper.best_metric,
        out.join("best").display()
    );
    Ok(())
}

/// The users a checkpoint-driven command works on, prepared for its shape.
fn checkpoint_users(cfg: &RunConfig) -> Result<(Checkpoint, Corpus)> {
    let ck = Checkpoint::load(required(&cfg.ckpt, "ckpt")?)?;
    let corpus = load_data(cfg)?;
    if corpus.vocab_size != ck.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary {} does not match checkpoint vocabulary {}",
            corpus.vocab_size, ck.vocab_size
        )));
    }
    let users = match cfg.part {
        Part::All => corpus,
        part => {
            let split = split_users(&corpus, ck.config.split, ck.config.seed)?;
            match part {
                Part::Train => split.train,
                Part::Val => split.val,
                _ => split.test,
            }
        }
    };
    Ok((ck, users))
}

fn part_label(part: Part) -> &'static str {
    match part {
        Part::Train => "train",
        Part::Val => "val",
        Part::Test => "test",
        Part::All => "all",
    }
}

fn cmd_eval(cfg: &RunConfig, k: Option<Vec<usize>>) -> Result<()> {
    let (ck, users) = checkpoint_users(cfg)?;
    let params = ck.params()?;
    let samples = prepare_corpus(&users, ck.max_len)?;
    let k_list = k.unwrap_or_else(|| ck.config.k_list.clone());
    let report = evaluate(&samples, &params, ck.config.variant, &k_list)?;
    let label = format!("PIETSP/{}", part_label(cfg.part));
    println!("{}", report.table(&label));
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &cfg.out {
        write_text(&out.join("metrics.json"), &json)?;
        cfg.save(&out.join(EFFECTIVE_CONFIG))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    user_id: &'a str,
    items: Vec<usize>,
    scores: Vec<f64>,
}

fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    if cfg.top_k == 0 {
        return Err(Error::Config("--k must be positive".into()));
    }
    let (ck, users) = checkpoint_users(cfg)?;
    let params = ck.params()?;
    let mut text = String::new();
    for user in &users.users {
        // every set counts as history here; the next set is unknown
        let sample = crate::dataset::PreparedSample::from_history(&user.sets, &[], ck.max_len, users.vocab_size)?;
        let trace = forward_sample(&sample, &params, ck.config.variant)?;
        let ranked = RankedPrediction::from_scores(&trace.logits, cfg.top_k);
        text.push_str(&serde_json::to_string(&PredictionLine {
            user_id: &user.user_id,
            items: ranked.ids,
            scores: ranked.scores,
        })?);
        text.push('\n');
    }
    match &cfg.out {
        Some(path) => {
            write_text(path, &text)?;
            cfg.save(&sibling_dir(path).join(EFFECTIVE_CONFIG))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

/// Shapes swept by `bench`: one point per grid value, or the base shape.
fn bench_shapes(b: &BenchSettings) -> Vec<(usize, usize, usize, usize)> {
    let base = (b.n, b.max_len, b.vocab_size, b.dim);
    if b.grid.is_empty() {
        return vec![base];
    }
    let mut shapes = Vec::new();
    for g in &b.grid {
        for &v in &g.values {
            let (mut n, mut k, mut e, mut d) = base;
            match g.axis {
                Axis::N => n = v,
                Axis::K => k = v,
                Axis::E => e = v,
                Axis::D => d = v,
            }
            shapes.push((n, k, e, d));
        }
    }
    shapes
}

fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let b = &cfg.bench;
    let bench_cfg = BenchConfig {
        runs: b.runs,
        batch_size: b.batch_size,
        precision: b.precision,
        workers: b.workers,
    };
    let mut reports: Vec<BenchReport> = Vec::new();
    if cfg.ckpt.is_some() {
        let (ck, users) = checkpoint_users(cfg)?;
        let samples = prepare_corpus(&users, ck.max_len)?;
        let label = cfg
            .data
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into());
        reports.push(bench_inference(
            &samples,
            &ck.params()?,
            ck.config.variant,
            &bench_cfg,
            &label,
        )?);
    } else {
        let root = cfg.train.seed;
        for (n, k, e, d) in bench_shapes(b) {
            let label = format!("N={n} K={k} D={d} |E|={e}");
            let params = init_params(e, d, k, derive_seed(root, "bench-params"))?;
            let samples: Vec<_> = (0..b.batch_size.min(16))
                .map(|i| synthetic_sample(n, k, e, b.density, crate::seed::derive_indexed(root, "bench", i as u64)))
                .collect::<Result<_>>()?;
            log::info!("bench {label}");
            reports.push(bench_inference(&samples, &params, b.variant, &bench_cfg, &label)?);
        }
    }
    print!("{}", reports_table(&reports));
    let json = serde_json::to_string_pretty(&reports)?;
    if let Some(out) = &cfg.out {
        write_text(&out.join("bench.json"), &json)?;
        cfg.save(&out.join(EFFECTIVE_CONFIG))?;
    } else {
        println!("{json}");
    }
    Ok(())
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let s = &cfg.synthetic;
    let corpus = gen_synthetic(&SyntheticSpec {
        users: s.users,
        vocab_size: s.vocab_size,
        history_len: s.history_len,
        pattern: s.pattern,
        seed: derive_seed(cfg.train.seed, "synthetic"),
    })?;
    corpus.save(out)?;
    cfg.save(&sibling_dir(out).join(EFFECTIVE_CONFIG))?;
    println!(
        "wrote {} users over {} elements to {}",
        corpus.len(),
        corpus.vocab_size,
        out.display()
    );
    Ok(())
}

fn cmd_convert(cfg: &RunConfig) -> Result<()> {
    let input = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let (corpus, vocab) = convert_interactions(std::io::BufReader::new(file), &cfg.convert)?;
    corpus.save(out)?;
    let dir = sibling_dir(out);
    write_text(&dir.join("vocab.json"), &serde_json::to_string_pretty(&vocab)?)?;
    cfg.save(&dir.join(EFFECTIVE_CONFIG))?;
    println!(
        "wrote {} users over {} elements to {}",
        corpus.len(),
        corpus.vocab_size,
        out.display()
    );
    Ok(())
}

//! The `gane` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::evaluator::{self, EvalReport};
use crate::experiments;
use crate::model::{self, ModelParams};
use crate::network_data::{load_dataset, split_edges, LabelMap, TextualNetwork};
use crate::trainer;

pub use config::RunConfig;
use config::{checkpoint_layer, parse_config_file, Layer};

#[derive(Debug, Parser)]
#[command(name = "gane", version, about = "Context-aware textual network embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a loss trace.
    Train(CommonArgs),
    /// Link-prediction AUC of a checkpoint on its held-out edges.
    EvalLink(CheckpointArgs),
    /// Macro-F1 of a linear classifier on static embeddings.
    EvalClassify(CheckpointArgs),
    /// Train and evaluate attention-parsing models per filter width.
    AblateNgram(AblateArgs),
    /// Dump the attention between two nodes.
    ExportAttention(AttentionArgs),
    /// Write one static embedding per node as TSV.
    ExportEmbeddings(CheckpointArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// gane-ot or gane-ap.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    ot_iters: Option<usize>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Fraction of edges used for training.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Comma-separated label fractions for classification.
    #[arg(long)]
    label_ratios: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

impl CommonArgs {
    fn layer(&self) -> Layer {
        let mut l = Layer::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                l.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("graph", path(&self.graph));
        put("text", path(&self.text));
        put("labels", path(&self.labels));
        put("out", path(&self.out));
        put("mode", self.mode.clone());
        put("dim", opt(&self.dim));
        put("word_dim", opt(&self.word_dim));
        put("lr", opt(&self.lr));
        put("neg", opt(&self.neg));
        put("beta", opt(&self.beta));
        put("ot_iters", opt(&self.ot_iters));
        put("ngram", opt(&self.ngram));
        put("max_len", opt(&self.max_len));
        put("ratio", opt(&self.ratio));
        put("epochs", opt(&self.epochs));
        put("batch", opt(&self.batch));
        put("seed", opt(&self.seed));
        put("runs", opt(&self.runs));
        put("threads", opt(&self.threads));
        put("min_count", opt(&self.min_count));
        put("label_ratios", self.label_ratios.clone());
        l
    }

    /// Resolves defaults < `base` < config file < flags.
    fn resolve(&self, base: &Layer) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => parse_config_file(p)?,
            None => Layer::new(),
        };
        RunConfig::resolve(&[base, &file, &self.layer()])
    }
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated odd filter widths.
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
}

#[derive(Debug, Args)]
struct AttentionArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long)]
    u: usize,
    #[arg(long)]
    v: usize,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve(&Layer::new())?;
            with_threads(&cfg, || cmd_train(&cfg))
        }
        Command::EvalLink(args) => {
            let (cfg, ckpt) = from_checkpoint(&args)?;
            with_threads(&cfg, || cmd_eval_link(&cfg, &ckpt))
        }
        Command::EvalClassify(args) => {
            let (cfg, ckpt) = from_checkpoint(&args)?;
            with_threads(&cfg, || cmd_eval_classify(&cfg, &ckpt))
        }
        Command::AblateNgram(args) => {
            let cfg = args.common.resolve(&Layer::new())?;
            with_threads(&cfg, || cmd_ablate_ngram(&cfg, &args.lengths))
        }
        Command::ExportAttention(args) => {
            let (cfg, ckpt) = from_checkpoint(&args.ckpt)?;
            with_threads(&cfg, || cmd_export_attention(&cfg, &ckpt, args.u, args.v))
        }
        Command::ExportEmbeddings(args) => {
            let (cfg, ckpt) = from_checkpoint(&args)?;
            with_threads(&cfg, || cmd_export_embeddings(&cfg, &ckpt))
        }
    }
}

fn from_checkpoint(args: &CheckpointArgs) -> Result<(RunConfig, Checkpoint)> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let mut cfg = args
        .common
        .resolve(&checkpoint_layer(&ckpt.meta, &ckpt.params.config))?;
    if cfg.train.model != ckpt.params.config {
        log::warn!("model settings come from the checkpoint; conflicting flags are ignored");
        cfg.train.model = ckpt.params.config.clone();
    }
    Ok((cfg, ckpt))
}

fn with_threads<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn load(cfg: &RunConfig) -> Result<(TextualNetwork, Option<LabelMap>)> {
    let (graph, text) = cfg.dataset_paths()?;
    load_dataset(graph, text, cfg.labels.as_deref(), cfg.min_count)
}

fn header(cfg: &RunConfig) -> String {
    let mut out = String::new();
    for (k, v) in cfg.to_pairs() {
        writeln!(out, "# {k} = {v}").unwrap();
    }
    out
}

fn write_output(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (network, _) = load(cfg)?;
    let split = split_edges(&network, cfg.ratio, cfg.train.seed)?;
    let train_net = network.with_edges(split.train.clone())?;
    let stats = train_net.stats();
    log::info!("training on {} nodes, {} edges", stats.nodes, stats.edges);
    let outcome = match trainer::train(&train_net, &cfg.train) {
        Ok(o) => o,
        Err(Error::Diverged { epoch, reason, last_good }) => {
            let path = cfg.out.join("model.diverged.ckpt");
            save_checkpoint(&path, cfg, *last_good.clone())?;
            eprintln!("last good parameters saved to {}", path.display());
            return Err(Error::Diverged { epoch, reason, last_good });
        }
        Err(e) => return Err(e),
    };
    let ckpt_path = cfg.out.join("model.ckpt");
    save_checkpoint(&ckpt_path, cfg, outcome.params)?;
    let mut trace = header(cfg);
    trace.push_str("epoch,mean_loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        writeln!(trace, "{i},{l}").unwrap();
    }
    write_output(&cfg.out.join("loss.csv"), &trace)?;
    if let Some(last) = outcome.loss_trace.last() {
        println!("final mean loss {last:.6}");
    }
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn save_checkpoint(path: &Path, cfg: &RunConfig, params: ModelParams) -> Result<()> {
    let mut ckpt = Checkpoint::new(params);
    ckpt.meta = cfg.settings().into_iter().collect();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint::save(path, &ckpt)
}

fn report_output(cfg: &RunConfig, report: &EvalReport) -> String {
    let mut out = header(cfg);
    out.push_str(&report.to_csv());
    writeln!(out, "# {}", report.summary()).unwrap();
    out
}

fn cmd_eval_link(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let (network, _) = load(cfg)?;
    ckpt.params.check_dataset(&network)?;
    let split = split_edges(&network, cfg.ratio, cfg.train.seed)?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "ratio {} leaves no test edges; train with --ratio below 1",
            cfg.ratio
        )));
    }
    let report = evaluator::repeated_eval("auc", cfg.runs, cfg.train.seed, |seed| {
        evaluator::auc_link_prediction(&ckpt.params, &split.test, &network, seed)
    })?;
    write_output(&cfg.out.join("auc.csv"), &report_output(cfg, &report))?;
    println!("{}", report.summary());
    Ok(())
}

fn cmd_eval_classify(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    if cfg.labels.is_none() {
        return Err(Error::InvalidArgument("eval-classify needs --labels".into()));
    }
    let (network, labels) = load(cfg)?;
    let labels = labels.expect("label path given");
    ckpt.params.check_dataset(&network)?;
    let embeddings = model::static_embeddings(&network, &ckpt.params)?;
    let reports = experiments::classification_reports(
        &embeddings,
        &labels,
        &cfg.label_ratios,
        cfg.runs,
        cfg.train.seed,
        &cfg.svm,
    )?;
    let mut out = header(cfg);
    out.push_str("label_ratio,run,macro_f1\n");
    for (ratio, report) in &reports {
        for (i, v) in report.values.iter().enumerate() {
            writeln!(out, "{ratio},{i},{v}").unwrap();
        }
    }
    for (ratio, report) in &reports {
        writeln!(out, "# label_ratio {ratio}: {}", report.summary()).unwrap();
        println!("label_ratio {ratio}: {}", report.summary());
    }
    write_output(&cfg.out.join("macro_f1.csv"), &out)
}

fn cmd_ablate_ngram(cfg: &RunConfig, lengths: &[usize]) -> Result<()> {
    let (network, _) = load(cfg)?;
    let rows = experiments::ngram_ablation(&network, &cfg.train, lengths, cfg.ratio, cfg.runs, cfg.train.seed)?;
    let mut out = header(cfg);
    out.push_str("ngram,mean_auc,std_auc\n");
    for (len, report) in &rows {
        writeln!(out, "{len},{},{}", report.mean, report.std).unwrap();
        println!("ngram {len}: {}", report.summary());
    }
    write_output(&cfg.out.join("ablation.csv"), &out)
}

fn cmd_export_attention(cfg: &RunConfig, ckpt: &Checkpoint, u: usize, v: usize) -> Result<()> {
    let (network, _) = load(cfg)?;
    ckpt.params.check_dataset(&network)?;
    for node in [u, v] {
        if node >= network.num_nodes() {
            return Err(Error::UnknownNode(node));
        }
    }
    let dump = experiments::attention_dump(u, v, &network, &ckpt.params)?;
    let path = cfg.out.join(format!("attention_{u}_{v}.txt"));
    write_output(&path, &dump.to_text(&cfg.to_pairs()))?;
    println!("attention written to {}", path.display());
    Ok(())
}

fn cmd_export_embeddings(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let (network, _) = load(cfg)?;
    ckpt.params.check_dataset(&network)?;
    let emb = model::static_embeddings(&network, &ckpt.params)?;
    let mut out = String::new();
    for (i, row) in emb.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for x in row {
            write!(out, "\t{x:.6}").unwrap();
        }
        out.push('\n');
    }
    write_output(&cfg.out.join("embeddings.tsv"), &out)?;
    write_output(&cfg.out.join("embeddings.config"), &header(cfg))?;
    println!("embeddings written to {}", cfg.out.join("embeddings.tsv").display());
    Ok(())
}

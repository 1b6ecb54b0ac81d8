//! Command-line interface: `hia synth | train | eval | gop | correlate | seeds`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hia_core::data::{correlation_matrix, synth_generate};
use hia_core::metrics::evaluate;
use hia_core::model::{Hia, ModelConfig};
use hia_core::train::fit;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{HiaError, Result, EXIT_VALIDATION};
use crate::experiment::{default_threads, run_seeds};
use crate::files::{write_json, write_json_pretty};
use crate::history::write_history;
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "hia", version, about = "Hierarchical interactive pronunciation scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint and the epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Extract GOP features from posteriors and an alignment.
    Gop(GopArgs),
    /// Correlation matrix of per-utterance score aggregates.
    Correlate(CorrelateArgs),
    /// Train and evaluate over several seeds; report mean and std per column.
    Seeds(SeedsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of utterances.
    #[arg(long)]
    n: Option<usize>,
}

/// Architecture overrides on top of the config file.
#[derive(Debug, Default, Args)]
struct ModelFlags {
    #[arg(long)]
    no_iam_phn: bool,
    #[arg(long)]
    no_iam_word: bool,
    #[arg(long)]
    no_iam_utt: bool,
    #[arg(long)]
    no_residual: bool,
    #[arg(long)]
    no_hierarchy: bool,
    #[arg(long)]
    conv_layers: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

impl ModelFlags {
    fn apply(&self, m: &mut ModelConfig) {
        m.use_iam_phn &= !self.no_iam_phn;
        m.use_iam_word &= !self.no_iam_word;
        m.use_iam_utt &= !self.no_iam_utt;
        m.use_residual &= !self.no_residual;
        m.use_hierarchy &= !self.no_hierarchy;
        if let Some(n) = self.conv_layers {
            m.conv_layers = n;
        }
        if let Some(d) = self.embed_dim {
            m.embed_dim = d;
        }
        if let Some(h) = self.heads {
            m.n_heads = h;
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out_ckpt: PathBuf,
    /// Defaults to the checkpoint path with a `.history.csv` suffix.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct GopArgs {
    #[arg(long)]
    posteriors: PathBuf,
    #[arg(long)]
    align: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SeedsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Model selection set; defaults to the test set.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_stem().unwrap_or_default().to_os_string();
    name.push(".history.csv");
    ckpt.with_file_name(name)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.synth.seed = seed;
    }
    if let Some(n) = a.n {
        cfg.synth.n_utterances = n;
    }
    cfg.validate()?;
    let data = synth_generate(&cfg.synth)?;
    save_dataset(&a.out, &data)?;
    log::info!("wrote {} utterances to {}", data.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    a.model.apply(&mut cfg.model);
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let train = load_dataset(&a.data)?;
    let dev = load_dataset(&a.dev)?;
    let model = Hia::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!("training {} parameters on {} utterances", model.num_parameters(), train.len());
    let out = fit(model, &train, &dev, &cfg.train)?;
    save_checkpoint(&a.out_ckpt, &out.best)?;
    write_history(&a.history.unwrap_or_else(|| history_path(&a.out_ckpt)), &out.history)?;
    match out.diverged {
        Some(why) => Err(HiaError::Diverged(why)),
        None => Ok(()),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let r = evaluate(&ckpt.model, &data, a.batch_size).map_err(|e| HiaError::data(&a.data, e))?;
    write_json_pretty(&a.out_report, &report::report_json(&r))?;
    print!("{}", report::report_table(&r));
    Ok(())
}

fn cmd_gop(a: GopArgs) -> Result<()> {
    let features = crate::gop_io::gop_features(&a.posteriors, &a.align)?;
    write_json(&a.out, &features)
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let m = correlation_matrix(&data).map_err(|e| HiaError::data(&a.data, e))?;
    write_json_pretty(&a.out, &report::correlation_json(&m))?;
    print!("{}", report::correlation_table(&m));
    Ok(())
}

fn cmd_seeds(a: SeedsArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    a.model.apply(&mut cfg.model);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let train = load_dataset(&a.data)?;
    let test = load_dataset(&a.test)?;
    let dev = match &a.dev {
        Some(p) => load_dataset(p)?,
        None => test.clone(),
    };
    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.base_seed + i).collect();
    let threads = a.threads.unwrap_or_else(default_threads);
    let sweep = run_seeds(&cfg.model, &cfg.train, &train, &dev, &test, &seeds, threads)?;
    write_json_pretty(&a.out_report, &report::summary_json(&seeds, &sweep.summary, &sweep.reports()))?;
    print!("{}", report::summary_table(&sweep.summary));
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIA_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gop(a) => cmd_gop(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Seeds(a) => cmd_seeds(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

const AFTER_HELP: &str = "Any configuration key can be overridden as `--section.key value` \
(or `--section.key=value`), e.g. `--train.episodes 0`.\n\
NOISY_RELEX_THREADS caps the number of worker threads.";

#[derive(Parser)]
#[command(name = "noisy-relex", version, about = "Relation classification with reinforced instance selection", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for corpus generation, TransE and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for every artifact.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its train/validation/test splits.
    GenSynth(Common),
    /// Train TransE entity and relation embeddings on the knowledge-base facts.
    PretrainTranse(Common),
    /// Pretrain the classifier on the noisy training split.
    PretrainCnn(Common),
    /// Pretrain the selection policy against the fixed classifier.
    PretrainPolicy(Common),
    /// Joint training of policy and classifier.
    Train(Common),
    /// Cleanse the training split with the trained policy.
    Select(Common),
    /// Evaluate a classifier on the test split.
    Eval(Common),
}

type Pairs = Vec<(String, String)>;

/// Pulls `--section.key value` and `--section.key=value` pairs out of the
/// arguments; everything else goes to clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Pairs)> {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = match arg.strip_prefix("--") {
            Some(k) if k.split('=').next().is_some_and(|k| k.contains('.')) || k == "split" || k.starts_with("split=") => k,
            _ => {
                rest.push(arg);
                continue;
            }
        };
        match key.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let value = it.next().with_context(|| format!("override `--{key}` needs a value"))?;
                pairs.push((key.to_string(), value));
            }
        }
    }
    Ok((rest, pairs))
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NOISY_RELEX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("NOISY_RELEX_THREADS=`{raw}` is not a count"))?;
    if n == 0 {
        bail!("NOISY_RELEX_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run() -> Result<()> {
    let (args, pairs) = split_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    init_threads()?;
    let (common, cmd): (Common, fn(&RunConfig) -> Result<()>) = match cli.command {
        Command::GenSynth(c) => (c, commands::gen_synth),
        Command::PretrainTranse(c) => (c, commands::pretrain_transe),
        Command::PretrainCnn(c) => (c, commands::pretrain_cnn),
        Command::PretrainPolicy(c) => (c, commands::pretrain_policy_cmd),
        Command::Train(c) => (c, commands::train),
        Command::Select(c) => (c, commands::select),
        Command::Eval(c) => (c, commands::eval),
    };
    let overrides = Overrides { seed: common.seed, out: common.out, pairs };
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

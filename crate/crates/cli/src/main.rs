use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hybrid_icd::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "hicd", version, about = "Train and audit hybrid interpretable models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize the dataset and draw the train/test split.
    Prepare(Common),
    /// Mine the rule universe on the training rows.
    Mine(Common),
    /// Train one reference model per (method, hyperparameter).
    Train(Common),
    /// Add the bootstrap resamples to every collection.
    Bootstrap(Common),
    /// Dedup, bin and filter collections; write metric tables and verdicts.
    Audit(Common),
    /// Aggregate the audit into plot-ready CSVs.
    Report(Common),
    /// Run every step in order.
    Run(Common),
    /// Train a single model with the base settings and write its search log.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "HICD_METHOD", default_value = "hybrid_pre")]
        method: String,
    },
    /// Write a synthetic dataset and manifest.
    Synth {
        #[arg(long, env = "HICD_DIR")]
        dir: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 500)]
        rows: usize,
        #[arg(long, env = "HICD_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, env = "HICD_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "HICD_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "HICD_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "HICD_SEED")]
    seed: Option<u64>,
    /// Per-search wall-clock budget in seconds.
    #[arg(long, env = "HICD_TIME_LIMIT")]
    time_limit: Option<f64>,
    /// Per-search memory budget in bytes.
    #[arg(long, env = "HICD_MEMORY_LIMIT")]
    memory_limit: Option<u64>,
    #[arg(long, env = "HICD_NODE_LIMIT")]
    node_limit: Option<u64>,
    /// ICD bound for mitigated runs (and for `fit`).
    #[arg(long, env = "HICD_ETA")]
    eta: Option<f64>,
    /// Audit a single Rashomon tolerance.
    #[arg(long, env = "HICD_EPSILON")]
    epsilon: Option<f64>,
    /// Audit and mitigate a single sensitive attribute.
    #[arg(long, env = "HICD_ATTRIBUTE")]
    attribute: Option<String>,
    #[arg(long, env = "HICD_LAMBDA")]
    lambda: Option<f64>,
    #[arg(long, env = "HICD_BETA")]
    beta: Option<f64>,
    #[arg(long, env = "HICD_C_MIN")]
    c_min: Option<f64>,
    #[arg(long, env = "HICD_MAX_PREFIX_LEN")]
    max_prefix_len: Option<usize>,
    #[arg(long, env = "HICD_N_BOOTSTRAP")]
    n_bootstrap: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)
            .with_context(|| format!("loading run config {}", self.config.display()))?;
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(t) = self.time_limit {
            c.search.time_limit = Some(t);
        }
        if let Some(m) = self.memory_limit {
            c.search.memory_limit = Some(m);
        }
        if let Some(n) = self.node_limit {
            c.search.node_limit = Some(n);
        }
        if let Some(e) = self.eta {
            c.mitigation.eta = e;
            c.search.eta = e;
        }
        if let Some(e) = self.epsilon {
            c.epsilons = vec![e];
        }
        if let Some(a) = &self.attribute {
            c.attributes = Some(vec![a.clone()]);
            c.mitigation.attributes = Some(vec![a.clone()]);
            c.search.attribute = Some(a.clone());
        }
        if let Some(l) = self.lambda {
            c.search.lambda = l;
        }
        if let Some(b) = self.beta {
            c.search.beta = b;
        }
        if let Some(m) = self.c_min {
            c.search.c_min = m;
        }
        if let Some(m) = self.max_prefix_len {
            c.search.max_prefix_len = m;
        }
        if let Some(n) = self.n_bootstrap {
            c.n_bootstrap = n;
        }
        c.validate().context("invalid run config")?;
        Ok(c)
    }

    fn out(&self) -> &Path {
        &self.out
    }
}

fn run(cli: Cli) -> Result<()> {
    let step = |common: &Common, f: fn(&RunConfig, &Path) -> hybrid_icd::Result<()>| -> Result<()> {
        let cfg = common.load()?;
        f(&cfg, common.out())?;
        Ok(())
    };
    match cli.command {
        Command::Prepare(c) => step(&c, pipeline::cmd_prepare),
        Command::Mine(c) => step(&c, pipeline::cmd_mine),
        Command::Train(c) => step(&c, pipeline::cmd_train),
        Command::Bootstrap(c) => step(&c, pipeline::cmd_bootstrap),
        Command::Audit(c) => step(&c, pipeline::cmd_audit),
        Command::Report(c) => step(&c, pipeline::cmd_report),
        Command::Run(c) => step(&c, pipeline::run_all),
        Command::Fit { common, method } => {
            let cfg = common.load()?;
            pipeline::cmd_fit(&cfg, common.out(), &method)?;
            Ok(())
        }
        Command::Synth { dir, name, rows, seed } => {
            let path = hybrid_icd::synth::write_synthetic(&dir, &name, rows, seed)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

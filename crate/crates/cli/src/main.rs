//! `brar`: exact operating characteristics of BRAR designs with a burn-in.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "brar", version, about = "Exact evaluation of response-adaptive designs with a burn-in")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Calibrated, UX and CX-S critical values per burn-in.
    Critvals,
    /// Rejection rates and other OCs across burn-in lengths.
    Sweep,
    /// Power-optimal burn-in over a grid of success rates.
    Pobp,
    /// OC panels under several symmetric priors.
    Priors,
    /// Blocked design with optional stopping.
    Arrest,
    /// Monte Carlo cross-checks of exact values.
    McCheck,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Burn-in lengths, comma separated.
    #[arg(long = "b", global = true, value_delimiter = ',', num_args = 0..)]
    burn_ins: Option<Vec<usize>>,
    #[arg(long, global = true)]
    stat: Option<String>,
    #[arg(long = "test", global = true, value_delimiter = ',')]
    tests: Option<Vec<String>>,
    #[arg(long = "metric", global = true, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long = "delta", global = true, value_delimiter = ',', allow_negative_numbers = true)]
    deltas: Option<Vec<f64>>,
    /// Symmetric prior `a,b` for both arms.
    #[arg(long, global = true, value_delimiter = ',', num_args = 2)]
    prior: Option<Vec<f64>>,
    /// Allocation clipping bounds `lo,hi`.
    #[arg(long, global = true, value_delimiter = ',', num_args = 2)]
    clip: Option<Vec<f64>>,
    #[arg(long, global = true)]
    phi: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Significant digits for grouping tied statistic values; 0 groups exact ties only.
    #[arg(long, global = true)]
    digits: Option<u32>,
    /// Totals reported by `critvals`, comma separated.
    #[arg(long = "totals", global = true, value_delimiter = ',')]
    totals: Option<Vec<usize>>,
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Policy cache directory (also read from BRAR_CACHE_DIR).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Allow trial sizes above the desk-scale limit.
    #[arg(long, global = true)]
    large: bool,
    #[arg(long, global = true)]
    replications: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of randomized Monte Carlo checks.
    #[arg(long, global = true)]
    checks: Option<usize>,
    /// Largest trial size drawn by the Monte Carlo checks.
    #[arg(long, global = true)]
    max_n: Option<usize>,
    #[arg(long, global = true)]
    ost: Option<f64>,
    #[arg(long, global = true)]
    block_rule: Option<String>,
    #[arg(long, global = true)]
    pniwd_scope: Option<String>,
    #[arg(long, global = true)]
    error_rule: Option<String>,
}

impl Common {
    fn apply(self, command: Command, cfg: &mut RunConfig) -> anyhow::Result<()> {
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.burn_ins {
            if command == Command::Arrest {
                cfg.arrest.burn_ins = v;
            } else {
                cfg.burn_ins = Some(v);
            }
        }
        if let Some(v) = self.stat {
            cfg.stat = v;
        }
        if self.tests.is_some() {
            cfg.tests = self.tests;
        }
        if self.metrics.is_some() {
            cfg.metrics = self.metrics;
        }
        if self.deltas.is_some() {
            cfg.deltas = self.deltas;
        }
        if let Some(p) = self.prior {
            cfg.prior = [p[0], p[1], p[0], p[1]];
        }
        if let Some(c) = self.clip {
            cfg.clip = Some([c[0], c[1]]);
        }
        if let Some(v) = self.phi {
            cfg.phi = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.digits {
            cfg.significant_digits = (v > 0).then_some(v);
        }
        if let Some(v) = self.totals {
            cfg.totals = v;
        }
        if let Some(v) = self.grid_step {
            cfg.grid_step = v;
        }
        if let Some(v) = self.out {
            cfg.out_dir = v;
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.large |= self.large;
        if let Some(v) = self.replications {
            cfg.mc.replications = v;
        }
        if let Some(v) = self.seed {
            cfg.mc.seed = v;
        }
        if let Some(v) = self.checks {
            cfg.mc.checks = v;
        }
        if let Some(v) = self.max_n {
            cfg.mc.max_n = v;
        }
        if let Some(v) = self.ost {
            cfg.arrest.ost = v;
        }
        if let Some(v) = self.block_rule {
            cfg.arrest.block_rule = v;
        }
        if let Some(v) = self.pniwd_scope {
            cfg.arrest.pniwd_scope = v;
        }
        if let Some(v) = self.error_rule {
            cfg.arrest.error_rule = v;
        }
        Ok(())
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<brar_exact::Error>() {
            use brar_exact::Error as E;
            return match e {
                E::Quadrature { .. } | E::Overflow { .. } => EXIT_NUMERIC,
                E::Io(_) | E::CorruptCache(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_IO
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let command = cli.command;
    cli.common.apply(command, &mut cfg)?;
    cfg.validate()?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    let files = match command {
        Command::Critvals => commands::critvals(&cfg)?,
        Command::Sweep => commands::sweep(&cfg)?,
        Command::Pobp => commands::pobp(&cfg)?,
        Command::Priors => commands::priors(&cfg)?,
        Command::Arrest => commands::arrest(&cfg)?,
        Command::McCheck => commands::mc_check(&cfg)?,
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

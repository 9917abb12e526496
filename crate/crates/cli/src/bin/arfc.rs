use std::path::PathBuf;
use std::process::ExitCode;

use arfc_cli::commands::{self, Cell};
use arfc_cli::{run_sweep, Context, ExperimentConfig, ExperimentKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arfc", about = "Analog RF computing experiments", version)]
struct Cli {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Shrinks replicates and evaluation sets, in (0, 1].
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Copy)]
struct CellArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long = "n-t", default_value_t = 256)]
    n_t: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

impl From<CellArgs> for Cell {
    fn from(a: CellArgs) -> Self {
        Cell { k: a.k, n_t: a.n_t, eps: a.eps, lambda: a.lambda, replicate: a.replicate }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one channel realisation.
    Channel(CellArgs),
    /// Solve the configured layer on one channel draw.
    SolveLayer(CellArgs),
    /// Solve all five layers and report energies.
    SolveNet(CellArgs),
    /// Noisy inference under designs solved for one channel draw.
    Infer(CellArgs),
    /// Optimise one mixed-precision profile.
    Mixed {
        #[arg(long = "eps-shared", default_value_t = 0.3)]
        eps_shared: f64,
    },
    /// Run a sweep: convergence, runtime, energy_accuracy, tradeoff or mixed_precision.
    Sweep { kind: String },
}

fn run(cli: Cli) -> arfc_core::Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(s) = cli.scale {
        cfg.apply_scale(s)?;
    }
    let ctx = Context::new(cfg)?;
    match cli.cmd {
        Cmd::Channel(a) => commands::channel(&ctx, &a.into(), &cli.out)?,
        Cmd::SolveLayer(a) => commands::solve_layer_cmd(&ctx, &a.into(), &cli.out)?,
        Cmd::SolveNet(a) => commands::solve_net(&ctx, &a.into(), &cli.out)?,
        Cmd::Infer(a) => commands::infer(&ctx, &a.into(), &cli.out)?,
        Cmd::Mixed { eps_shared } => commands::mixed(&ctx, eps_shared, &cli.out)?,
        Cmd::Sweep { kind } => {
            let out = run_sweep(ExperimentKind::parse(&kind)?, &ctx)?;
            out.write(&cli.out)?;
            eprintln!("{kind}: {} infeasible, {} failed cells; config {}", out.infeasible, out.errors, ctx.hash);
            return Ok(out.exit_code());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("ARFC_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

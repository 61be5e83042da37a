use clap::{Parser, Subcommand, ValueEnum};
use knudsen::cli::{emit_report, run_scenario, spectral_report, CliError, RunOptions, Scenario, Step, TransportMode};
use knudsen::geometry::verify_shape;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "knudsen", version, about = "Rarefied gas in a convex polygon with mixed wall reflection")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default `runs/<scenario name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs the plan of a TOML scenario.
    Run { config: PathBuf },
    /// Aggregates a run directory into report.json.
    Report { dir: PathBuf },
    /// Forward and optionally backward solve of the nonlinear equation.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        omega: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, allow_hyphen_values = true)]
        backward_to: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        checkpoint_every: f64,
    },
    /// Spectral constants, `‖X_μ‖` and the group lower bound.
    Spectral {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        omega: f64,
        #[arg(long, default_value_t = 2)]
        k0: u32,
        /// Writes the JSON here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Free transport by the reflection series or Monte Carlo.
    Transport {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Series)]
        mode: ModeArg,
        #[arg(long, default_value_t = 100_000)]
        particles: usize,
        #[arg(long, default_value_t = 16)]
        depth: usize,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
    },
    /// Shape diagnostics of the scenario polygon.
    Shape {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Series,
    Mc,
}

fn scenario(config: &Option<PathBuf>, omega: f64) -> Result<Scenario, CliError> {
    match config {
        Some(p) => Scenario::load(p),
        None => Ok(Scenario::minimal(omega, 0.0)),
    }
}

fn write_out(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn execute(sc: &Scenario, cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(&sc.name));
    let m = run_scenario(sc, &RunOptions { out: out.clone(), seed: cli.seed })?;
    eprintln!("{}: {} step(s) done, output in {}", m.name, m.steps.len(), out.display());
    Ok(())
}

fn main_inner(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.cmd {
        Cmd::Run { config } => execute(&Scenario::load(config)?, cli),
        Cmd::Report { dir } => {
            let r = emit_report(dir)?;
            eprintln!("{} measurement(s), {} failed", r.measurements.len(), r.failed);
            Ok(())
        }
        Cmd::Solve { config, omega, lambda, t_end, backward_to, checkpoint_every } => {
            let mut sc = scenario(config, *omega)?;
            if let Some(l) = lambda {
                sc.model.lambda = *l;
            }
            sc.plan.t_end = *t_end;
            sc.plan.checkpoint_every = *checkpoint_every;
            sc.plan.steps = vec![Step::Forward];
            if let Some(b) = backward_to {
                sc.plan.backward_to = *b;
                sc.plan.steps.push(Step::Backward);
            }
            sc.validate()?;
            execute(&sc, cli)
        }
        Cmd::Spectral { config, omega, k0, report } => {
            let mut sc = scenario(config, *omega)?;
            if config.is_none() {
                sc.domain.k0 = *k0;
            }
            let (rep, err) = spectral_report(&sc, cli.seed.unwrap_or(sc.seed));
            write_out(report, &rep)?;
            err.map_or(Ok(()), Err)
        }
        Cmd::Transport { config, mode, particles, depth, t } => {
            let mut sc = scenario(config, 0.9)?;
            sc.transport.mode = match mode {
                ModeArg::Series => TransportMode::Series,
                ModeArg::Mc => TransportMode::Mc,
            };
            sc.transport.particles = *particles;
            sc.transport.depth = *depth;
            sc.transport.t = *t;
            sc.plan.steps = vec![Step::Transport];
            sc.validate()?;
            execute(&sc, cli)
        }
        Cmd::Shape { config, samples, steps, report } => {
            let sc = scenario(config, 0.9)?;
            let rep = verify_shape(&sc.polygon()?, sc.domain.k0 as usize, *samples, *steps, cli.seed.unwrap_or(sc.seed))?;
            write_out(report, &rep)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = main_inner(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

//! Batch front end: wires TOML model configs to the experiment runners
//! and persists deterministic artifacts.

use anderson_lab::experiment::{run, ExperimentSpec, ModelSpec};
use anderson_lab::Error;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "anderson-lab", version, about = "Random block operator laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML model file ([profile]/[law]/[v0] tables); default model when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact root (falls back to $ANDERSON_LAB_OUT, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Realization / step budget
    #[arg(long)]
    samples: Option<usize>,
    /// Energy-grid points
    #[arg(long)]
    grid: Option<usize>,
    /// Quadrature cells per kernel dimension
    #[arg(long = "quad-n")]
    quad_n: Option<usize>,
    /// Period budget in blocks (exceptional: the order N)
    #[arg(long)]
    period: Option<usize>,
    /// Box half-length L in blocks
    #[arg(long)]
    length: Option<usize>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged eigenfunction correlator profile and decay fit
    Correlator(Common),
    /// Lyapunov exponent sweep across Σ₀
    Lyapunov(Common),
    /// Fürstenberg criteria battery for atomic laws
    Furstenberg(Common),
    /// Exceptional-energy battery for block order N
    Exceptional(Common),
    /// Almost-sure spectrum from periodic-word bands
    Spectrum(Common),
    /// Contraction-norm scan of the transfer operator
    Opnorm(Common),
    /// Prüfer derivative and Jacobian identity battery
    #[command(name = "prufer-verify")]
    PruferVerify(Common),
    /// End-to-end: correlator fit + contraction q̂ + chain comparison
    Localize(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Correlator(_) => "correlator",
            Command::Lyapunov(_) => "lyapunov",
            Command::Furstenberg(_) => "furstenberg",
            Command::Exceptional(_) => "exceptional",
            Command::Spectrum(_) => "spectrum",
            Command::Opnorm(_) => "opnorm",
            Command::PruferVerify(_) => "prufer-verify",
            Command::Localize(_) => "localize",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Correlator(c)
            | Command::Lyapunov(c)
            | Command::Furstenberg(c)
            | Command::Exceptional(c)
            | Command::Spectrum(c)
            | Command::Opnorm(c)
            | Command::PruferVerify(c)
            | Command::Localize(c) => c,
        }
    }
}

fn execute(cli: &Cli) -> Result<PathBuf, Error> {
    let common = cli.command.common();
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidRequest(e.to_string()))?;
    }
    let model = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ModelSpec::from_toml(&text)?
        }
        None => ModelSpec::default(),
    };
    let mut spec = ExperimentSpec::new(cli.command.name(), model);
    if let Some(v) = common.seed {
        spec.seed = v;
    }
    if let Some(v) = common.samples {
        spec.samples = v;
    }
    if let Some(v) = common.grid {
        spec.grid = v;
    }
    if let Some(v) = common.quad_n {
        spec.quad_n = v;
    }
    if let Some(v) = common.period {
        spec.period = v;
    }
    if let Some(v) = common.length {
        spec.length = v;
    }
    let out_root = common
        .out
        .clone()
        .or_else(|| std::env::var_os("ANDERSON_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let artifacts = run(&spec, &out_root)?;
    Ok(artifacts.dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (code, kind) = match &err {
                Error::ConfigParse(_) | Error::InvalidModel(_) | Error::InvalidRequest(_) => {
                    (2, "config")
                }
                _ => (3, "numerical"),
            };
            let diag = serde_json::json!({
                "error": err.to_string(),
                "kind": kind,
                "exit_code": code,
            });
            eprintln!("{diag}");
            ExitCode::from(code)
        }
    }
}

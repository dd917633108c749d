use std::path::PathBuf;
use std::process::ExitCode;

use chiralwave_core::analysis::Engine;
use chiralwave_core::stability::StencilVariant;
use chiralwave_core::{Boundary, Error};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Overrides the worker count of the parallel engines.
const THREADS_ENV: &str = "CHIRALWAVE_THREADS";
/// Directory for outputs whose path was not given explicitly.
const SCRATCH_ENV: &str = "CHIRALWAVE_SCRATCH";

#[derive(Parser, Debug)]
#[command(name = "chiralwave", version, about = "Nonreciprocal driven-dissipative lattice: mean field, stability, truncated Wigner, Goldstone modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the deterministic mean-field equation.
    Meanfield {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Steps between recorded profiles.
        #[arg(long)]
        sample_every: Option<usize>,
        /// CSV of y,z-averaged profiles: t, x, re_a, im_a.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final state as a one-trajectory checkpoint, usable as a Goldstone background.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Truncated-Wigner ensemble.
    Twa {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Steps between recorded observables.
        #[arg(long)]
        record_every: Option<usize>,
        /// Where the final ensemble is written.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from this checkpoint instead of sampling a fresh ensemble.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// CSV of y,z-averaged observables: t, x, re_a, im_a, n and standard errors.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-trajectory y,z-averaged Re(alpha) records for `autocorr`.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Eigenvalues of the linear stability matrix around a = 0.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        /// Boundary along x; defaults to the configured one.
        #[arg(long, value_enum)]
        bc: Option<Bc>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value_t = Method::Numeric)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Phase diagram over (kappa1, Kx).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        /// start:stop:step
        #[arg(long)]
        k1_range: Option<String>,
        /// start:stop:step
        #[arg(long)]
        kx_range: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG heatmap with the analytic boundary line.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Autocorrelation of recorded trajectories and its envelope fit.
    Autocorr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t_start: f64,
        #[arg(long)]
        tau_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Goldstone-mode analysis of a periodic mean-field background.
    Goldstone {
        /// Checkpoint written by `meanfield --checkpoint`.
        #[arg(long)]
        background: PathBuf,
        #[arg(long, value_enum, default_value_t = GoldstoneMode::Residual)]
        mode: GoldstoneMode,
        /// Time integrated before the period is measured.
        #[arg(long, default_value_t = 200.0)]
        transient: f64,
        #[arg(long, default_value_t = 200)]
        substeps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Bc {
    Open,
    Periodic,
}

impl From<Bc> for Boundary {
    fn from(b: Bc) -> Self {
        match b {
            Bc::Open => Boundary::Open,
            Bc::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    BondSummed,
    UniformDiagonal,
}

impl From<Variant> for StencilVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::BondSummed => StencilVariant::BondSummed,
            Variant::UniformDiagonal => StencilVariant::UniformDiagonal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Dense eigensolver on the full lattice.
    Numeric,
    /// Dense x-chain plus transverse Laplacian shifts.
    Separable,
    /// Closed-form spectrum.
    Analytic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    #[value(alias = "mean-field")]
    Meanfield,
    Twa,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Meanfield => Engine::MeanField,
            EngineArg::Twa => Engine::Twa,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GoldstoneMode {
    /// Return error of the time-translation mode and the Floquet multiplier nearest 1.
    Residual,
    /// Uniform-rate phase dispersion on the lattice wavevectors.
    Dispersion,
    /// Eigenvalues of the period-averaged phase operator.
    Spectrum,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Checkpoint { .. } => 4,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `labs` command-line front end.
//!
//! Exit codes: 0 success, 2 argument or input error, 3 resource limit,
//! 1 anything else.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use labs::LabsError;

#[derive(Debug, Parser, Serialize)]
#[command(name = "labs", version, about = "LABS: exact QAOA simulation, classical baselines, compilation and scaling fits")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Sequence length.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// QAOA depth.
    #[arg(long, global = true)]
    pub p: Option<usize>,
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for result files and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Sizes(pub Vec<usize>);

/// `10..20` (inclusive), `10-20`, or `10,12,14`.
fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    let sizes = if let Some((a, b)) = range {
        let a: usize = a.trim().parse().map_err(|e| format!("bad range start {a:?}: {e}"))?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|e| format!("bad range end {b:?}: {e}"))?;
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad size {t:?}: {e}"))).collect::<Result<Vec<_>, _>>()?
    };
    if sizes.is_empty() {
        return Err("no sizes given".into());
    }
    Ok(Sizes(sizes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Floats(pub Vec<f64>);

fn parse_floats(s: &str) -> Result<Floats, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"))).collect::<Result<_, _>>().map(Floats)
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Energy and merit factor of one sequence.
    Energy {
        /// Sequence as a `+`/`-` string.
        #[arg(long, conflicts_with = "hex")]
        seq: Option<String>,
        /// Sequence as a hex bitstring (bit j is spin j+1, set bit = -1); needs --n.
        #[arg(long)]
        hex: Option<String>,
    },
    /// Exhaustive energy table: summary, level degeneracies, binary dump.
    Table {
        /// Enumerate in parallel.
        #[arg(long)]
        parallel: bool,
    },
    /// Exact optimum and the full optimal set.
    Optimal {
        /// Enumerate sequences starting `++` only and expand by symmetry.
        #[arg(long)]
        symmetry_reduced: bool,
    },
    /// Run QAOA with a schedule or fixed-parameter file (default: bundled fixed parameters).
    Qaoa {
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// FOURIER ladder from a multi-start depth-1 optimum up to --p.
    Optimize {
        #[arg(long, default_value = "p_opt")]
        objective: String,
        #[arg(long, default_value_t = labs::schedules::P1_RESTARTS)]
        restarts: usize,
    },
    /// Fixed parameters averaged over optimized schedules at the source sizes.
    FixedParams {
        #[arg(long, value_parser = parse_sizes, default_value = "12..17")]
        sources: Sizes,
        #[arg(long, default_value = "p_opt")]
        objective: String,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
    },
    /// Monte-Carlo quantum minimum finding over the QAOA (or uniform, --p 0) distribution.
    Qmf {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Budget parameter M (default 1/sqrt(p_opt)).
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        failure_injection: bool,
        #[arg(long)]
        keep_trials: bool,
    },
    /// Amplitude-amplification success curve; with --n, optionally against QAOA layers.
    Aa {
        /// Initial success probability (default |optimal| / 2^N from --n).
        #[arg(long)]
        p0: Option<f64>,
        #[arg(long, default_value_t = 12)]
        steps: u32,
        /// Also report QAOA per-layer gains with the bundled fixed parameters.
        #[arg(long)]
        qaoa: bool,
    },
    /// Run one classical solver.
    Solve {
        #[arg(long, default_value = "memetic-tabu")]
        solver: String,
        #[arg(long)]
        budget: Option<u64>,
        /// Stop at this energy (default: exact optimum for N <= 20, none above).
        #[arg(long)]
        target: Option<i64>,
        #[arg(long)]
        skew: bool,
        #[arg(long)]
        symmetry_reduced: bool,
        #[arg(long)]
        audit: bool,
    },
    /// Time-to-solution sweep over sizes and seeds (resumable with --out).
    TtsSweep {
        /// exhaustive, tabu, memetic-tabu or qaoa.
        #[arg(long, default_value = "memetic-tabu")]
        solver: String,
        #[arg(long, value_parser = parse_sizes)]
        sizes: Sizes,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long)]
        budget: Option<u64>,
        /// Fixed-parameter file for qaoa sweeps (default: bundled).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = labs::analysis::DEFAULT_N_MIN)]
        nmin: usize,
    },
    /// Exponential fit of a TTS CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = labs::analysis::DEFAULT_N_MIN)]
        nmin: usize,
        /// TTS column (default: first of tts, mean_evaluations, qaoa_tts, evaluations_to_best).
        #[arg(long)]
        column: Option<String>,
        /// Also sweep the cutoff over this range.
        #[arg(long, value_parser = parse_sizes)]
        sweep: Option<Sizes>,
    },
    /// Pearson correlation of Hamming distance to the optimal set with energy.
    Correlate {
        #[arg(long, value_parser = parse_sizes)]
        sizes: Option<Sizes>,
    },
    /// Compile a QAOA circuit (or one phase operator with --gamma) to gates.
    Compile {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "greedy")]
        ordering: String,
        /// Compile only exp(-i gamma H_C).
        #[arg(long)]
        gamma: Option<f64>,
        /// Compile each phase operator in this many independently cancelled chunks.
        #[arg(long, default_value_t = 1)]
        chunks: usize,
    },
    /// Two-qubit gate counts, greedy against random term orders.
    GateCount {
        #[arg(long, value_parser = parse_sizes, default_value = "8..18")]
        sizes: Sizes,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Insert parity checks into a compiled QAOA circuit.
    Checks {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Splits per phase operator.
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// Run this many single-Pauli detection trials.
        #[arg(long)]
        verify: Option<u64>,
    },
    /// Noisy simulation with post-selection on the parity checks.
    NoisySim {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 2e-3)]
        p2: f64,
        #[arg(long, default_value_t = 5000)]
        shots: u64,
        /// Pauli weights `x,y,z`.
        #[arg(long, value_parser = parse_floats)]
        channel: Option<Floats>,
        #[arg(long)]
        noisy_checks: bool,
        /// Write shot-level records to shots.csv under --out.
        #[arg(long)]
        shots_csv: bool,
    },
    /// Average time to an all-clear shot without and with early stopping.
    TimeModel {
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        /// Per-split no-error probabilities `p1,p2,...`.
        #[arg(long, value_parser = parse_floats)]
        p_list: Floats,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Energy { .. } => "energy",
            Command::Table { .. } => "table",
            Command::Optimal { .. } => "optimal",
            Command::Qaoa { .. } => "qaoa",
            Command::Optimize { .. } => "optimize",
            Command::FixedParams { .. } => "fixed-params",
            Command::Qmf { .. } => "qmf",
            Command::Aa { .. } => "aa",
            Command::Solve { .. } => "solve",
            Command::TtsSweep { .. } => "tts-sweep",
            Command::Fit { .. } => "fit",
            Command::Correlate { .. } => "correlate",
            Command::Compile { .. } => "compile",
            Command::GateCount { .. } => "gate-count",
            Command::Checks { .. } => "checks",
            Command::NoisySim { .. } => "noisy-sim",
            Command::TimeModel { .. } => "time-model",
        }
    }
}

/// Argument problems detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<LabsError>() {
        Some(LabsError::InvalidArgument(_) | LabsError::Format(_) | LabsError::SizeMismatch { .. } | LabsError::Json(_)) => 2,
        Some(LabsError::Resource(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.global.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli).and_then(|out| output::emit(&cli, out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

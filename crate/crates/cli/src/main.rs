//! `dyncfg` command-line entry point.
//!
//! Exit codes: 0 success, 1 analysis error, 2 validation failure, 3 bad usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dyncfg::bench::generate_suite;
use dyncfg::cfg::to_dot;
use dyncfg::engine::ManagerConfig;
use dyncfg::evalpipe::{
    analyze, evaluate_suite, read_witness, render, render_report, run_pipeline, Format, PipelineConfig, Validation,
};
use dyncfg::tracker::CFF_THRESHOLD;

const EXIT_ANALYSIS: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dyncfg", version, about = "Dynamic-loading aware CFG recovery for SBF binaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Tuning {
    /// Library search directory (repeatable).
    #[arg(long = "lib-path", value_name = "P")]
    lib_path: Vec<PathBuf>,
    /// Bound on simultaneously active states.
    #[arg(long, default_value_t = 32)]
    max_states: usize,
    /// Exploration step budget.
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    /// Solver seed; DYNCFG_SEED overrides it.
    #[arg(long, value_parser = parse_seed, default_value = "0x5BF1")]
    seed: u64,
    /// Distinct-target threshold for dispatcher detection.
    #[arg(long, default_value_t = CFF_THRESHOLD)]
    cff_threshold: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    Table,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Phase {
    Static,
    Module,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the benchmark suite and fixtures to DIR.
    GenBench { dir: PathBuf },
    /// Run the four-phase pipeline on one binary.
    Analyze {
        binary: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        /// Concrete inputs for the replay phase.
        #[arg(long)]
        witness: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: OutFormat,
    },
    /// Run every benchmark under DIR and print the summary.
    Eval {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: OutFormat,
    },
    /// Emit a CFG in DOT form.
    Dot {
        binary: PathBuf,
        #[arg(long, value_enum, default_value = "static")]
        phase: Phase,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|e| format!("bad seed {s:?}: {e}"))
}

enum Failure {
    Usage(String),
    Analysis(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Analysis(_) => EXIT_ANALYSIS,
            Failure::Validation(_) => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Analysis(m) | Failure::Validation(m) => m,
        }
    }
}

fn config(t: &Tuning) -> Result<PipelineConfig, Failure> {
    if t.max_states == 0 {
        return Err(Failure::Usage("--max-states must be at least 1".into()));
    }
    if t.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    let seed = match std::env::var("DYNCFG_SEED") {
        Ok(v) => parse_seed(&v).map_err(|e| Failure::Usage(format!("DYNCFG_SEED: {e}")))?,
        Err(_) => t.seed,
    };
    let mut cfg = PipelineConfig::new(t.lib_path.clone());
    cfg.manager = ManagerConfig {
        max_active: t.max_states,
        step_budget: t.steps,
        ..ManagerConfig::default()
    };
    cfg.seed = seed;
    cfg.cff_threshold = t.cff_threshold;
    Ok(cfg)
}

fn format_of(f: OutFormat) -> Format {
    match f {
        OutFormat::Json => Format::Json,
        OutFormat::Table => Format::Table,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Analysis(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analysis<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Analysis(e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenBench { dir } => {
            let m = generate_suite(&dir).map_err(analysis)?;
            eprintln!(
                "wrote {} benchmarks and {} fixtures to {}",
                m.benchmarks.len(),
                m.fixtures.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Analyze {
            binary,
            tuning,
            witness,
            out,
            format,
        } => {
            let cfg = config(&tuning)?;
            let w = match &witness {
                Some(p) => Some(
                    read_witness(p).ok_or_else(|| Failure::Analysis(format!("cannot read witness {}", p.display())))?,
                ),
                None => None,
            };
            let report = run_pipeline(&binary, &cfg, None, w.as_ref()).map_err(analysis)?;
            emit(out.as_deref(), &render_report(&report, format_of(format)))?;
            if report.validation == Validation::Fail {
                return Err(Failure::Validation(format!("{}: concrete validation failed", binary.display())));
            }
            Ok(())
        }
        Command::Eval {
            dir,
            jobs,
            tuning,
            out,
            format,
        } => {
            if jobs == 0 {
                return Err(Failure::Usage("--jobs must be at least 1".into()));
            }
            let cfg = config(&tuning)?;
            let summary = evaluate_suite(&dir, &cfg, jobs).map_err(analysis)?;
            emit(out.as_deref(), &render(&summary, format_of(format)))?;
            let failed: Vec<&str> = summary
                .benchmarks
                .iter()
                .filter(|r| r.validation == Validation::Fail)
                .map(|r| r.benchmark.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Validation(format!("validation failed: {}", failed.join(", "))));
            }
            Ok(())
        }
        Command::Dot {
            binary,
            phase,
            tuning,
            out,
        } => {
            let cfg = config(&tuning)?;
            let a = analyze(&binary, &cfg, None, None).map_err(analysis)?;
            let graph = match phase {
                Phase::Static => &a.static_cfg,
                Phase::Module => &a.module_cfg,
            };
            emit(out.as_deref(), &to_dot(graph))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dyncfg: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

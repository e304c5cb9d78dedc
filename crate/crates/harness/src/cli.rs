use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{ConfigError, HarnessError, Result};
use crate::runner::{run_experiment, Bundle};

#[derive(Debug, Parser)]
#[command(name = "samlab", version, about = "Edge-of-stability experiments for SAM on quadratic models and small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quadratic-model trajectories (QUAD_TRAJECTORY, SAM_SCHEDULE).
    Simulate(RunArgs),
    /// SAM radius sweep on the quadratic model (QUAD_RHO_SWEEP).
    Sweep(RunArgs),
    /// Monte Carlo check of the one-step expectations (THEOREM_VERIFY).
    Verify(RunArgs),
    /// Empirical convergent/divergent check (REGIME_CHECK).
    Regime(RunArgs),
    /// MLP testbed runs (MLP_TRAJECTORY).
    Mlp(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Command {
    fn parts(&self) -> (&'static str, &'static [ExperimentKind], &RunArgs) {
        use ExperimentKind::*;
        match self {
            Self::Simulate(a) => ("simulate", &[QuadTrajectory, SamSchedule], a),
            Self::Sweep(a) => ("sweep", &[QuadRhoSweep], a),
            Self::Verify(a) => ("verify", &[TheoremVerify], a),
            Self::Regime(a) => ("regime", &[RegimeCheck], a),
            Self::Mlp(a) => ("mlp", &[MlpTrajectory], a),
        }
    }
}

fn prepare(command: &Command) -> Result<(ExperimentConfig, PathBuf, usize)> {
    let (name, kinds, args) = command.parts();
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if !kinds.contains(&cfg.kind) {
        let expected: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
        return Err(ConfigError::new(
            "kind",
            format!("`{name}` runs {}, got {}", expected.join(" or "), cfg.kind.as_str()),
        )
        .into());
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| ConfigError::new("output_dir", "no output directory: pass --out or set output_dir"))?;
    Ok((cfg, out, args.threads))
}

fn print_bundle(b: &Bundle) {
    // a closed pipe on stdout is not worth a panic
    let mut out = std::io::stdout().lock();
    for r in &b.report.runs {
        let verdict = match (&r.summary, r.segments.is_empty()) {
            (Some(s), _) => format!("{:?}", s.verdict),
            (None, false) => r
                .segments
                .iter()
                .map(|s| s.summary.as_ref().map_or("-".to_string(), |x| format!("{:?}", x.verdict)))
                .collect::<Vec<_>>()
                .join(" -> "),
            (None, true) => "-".to_string(),
        };
        let _ = writeln!(out, "{}: {}", r.name, verdict);
    }
    if let Some(p) = b.report.passed {
        let _ = writeln!(out, "checks: {}", if p { "passed" } else { "FAILED" });
    }
    let _ = writeln!(out, "bundle written to {}", b.dir.display());
}

/// Parses `args`, runs the experiment and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = prepare(&cli.command).and_then(|(cfg, out, threads)| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::from(ConfigError::new("--threads", e.to_string())))?;
        pool.install(|| run_experiment(&cfg, &out))
    });
    match result {
        Ok(bundle) => {
            print_bundle(&bundle);
            if bundle.report.passed == Some(false) {
                eprintln!("error: {}", HarnessError::Acceptance("see the report in the bundle".into()));
                4
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Experiment orchestration. Runs fan out to the rayon pool and return their
//! traces; only the calling thread writes files, in job order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use samlab_core::mlp::{make_blobs, train, Dataset};
use samlab_core::quad::trajectory::{run_trajectory_with, RunOptions};
use samlab_core::quad::{QuadraticModel, UpdateRule};
use samlab_core::spectral::{ntk_top_eigs, TrackerConfig};
use samlab_core::tensor::{RngStream, Vector};
use samlab_core::theory::EosQuery;

use crate::checks::{run_regime, run_theorem, RegimeOutcome, TheoremOutcome};
use crate::config::{ExperimentConfig, ExperimentKind, MlpConfig, ModelConfig, OptimizerConfig, SamSchedule};
use crate::error::{ConfigError, HarnessError, Result};
use crate::summary::{final_lambda_max, summarize_segments, summarize_trace, sweep_table, RunRecord, SweepTable};
use crate::svg::{emit_svg, render_sweep, render_traces, LabeledTrace, SvgRecipe, SweepPoint};
use crate::trace::{emit_csv, Trace};

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub runs: Vec<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
    /// Learning rate picked from `mlp.alpha_candidates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<TheoremOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeOutcome>,
    /// Outcome of the built-in checks (`THEOREM_VERIFY`, `REGIME_CHECK`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub git_describe: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub config: serde_json::Value,
}

/// `git describe` of the source tree this binary was built from.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// A finished run before anything is written.
struct RunOutput {
    record: RunRecord,
    trace: Trace,
}

fn numerical(run: &str, e: samlab_core::Error) -> HarnessError {
    HarnessError::numerical(run, e.step().unwrap_or(0), &e)
}

fn fmt_rho(rho: f64) -> String {
    crate::trace::fmt_float(rho)
}

#[allow(clippy::too_many_arguments)]
fn quad_run(
    name: String,
    model_cfg: &ModelConfig,
    opt: &OptimizerConfig,
    seed: u64,
    rho: f64,
    steps: usize,
    tracker: &TrackerConfig,
    schedule: Option<&SamSchedule>,
) -> Result<RunOutput> {
    let model = QuadraticModel::<f64>::init(model_cfg.d, model_cfg.p, model_cfg.scales(), &RngStream::new(seed, 0))
        .map_err(|e| numerical(&name, e))?;
    let s0 = model.state_from_theta(&vec![0.0; model_cfg.p]).map_err(|e| numerical(&name, e))?;
    let mut spec = opt.to_spec(seed);
    spec.rho = rho;
    let opts = RunOptions {
        steps,
        tracker: *tracker,
        rescaled_form: Default::default(),
    };
    let tr = match schedule {
        Some(sch) => run_trajectory_with(&model, &s0, &spec, &opts, |t| sch.rho_at(t)),
        None => run_trajectory_with(&model, &s0, &spec, &opts, |_| rho),
    }
    .map_err(|e| numerical(&name, e))?;
    let k = tr.records.first().map_or(tracker.k.min(model_cfg.d), |r| r.k());
    let trace = Trace::new(k, tr.records, tr.diverged_at);
    let effective_rho = spec.effective_rho();
    let (summary, segments) = match schedule {
        Some(sch) => (None, summarize_segments(&trace, spec.alpha, sch, tracker)),
        None => (summarize_trace(&trace, spec.alpha, effective_rho, tracker), vec![]),
    };
    Ok(RunOutput {
        record: RunRecord {
            csv: format!("{name}.csv"),
            name,
            seed,
            alpha: spec.alpha,
            rho: effective_rho,
            diverged_at: trace.diverged_at,
            final_lambda_max: final_lambda_max(&trace),
            summary,
            segments,
        },
        trace,
    })
}

fn mlp_data(cfg: &MlpConfig, seed: u64) -> Result<(Dataset<f64>, Vector<f64>)> {
    let run = format!("mlp seed {seed}");
    let spec = cfg.spec();
    let data = make_blobs(spec.input_dim(), cfg.n_points, cfg.separation, &mut RngStream::new(seed, 1))
        .map_err(|e| numerical(&run, e))?;
    let params = spec.init_params(&mut RngStream::new(seed, 2)).map_err(|e| numerical(&run, e))?;
    Ok((data, params))
}

/// Largest candidate `α` whose initial `α(λ + ρλ²)` is below 2 for every
/// seed and radius, so that no run starts past its threshold.
pub fn select_mlp_alpha(cfg: &MlpConfig, seeds: &[u64], rhos: &[f64], tracker: &TrackerConfig) -> Result<f64> {
    let lambdas: Result<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let (data, params) = mlp_data(cfg, seed)?;
            let run = format!("mlp seed {seed}");
            let (z, j) = samlab_core::mlp::forward_and_jacobian(&cfg.spec(), &params, &data)
                .map_err(|e| numerical(&run, e))?;
            let s = samlab_core::quad::DynState::new(z, j).map_err(|e| numerical(&run, e))?;
            Ok(ntk_top_eigs(&s, 1, tracker).map_err(|e| numerical(&run, e))?[0])
        })
        .collect();
    let lambda = lambdas?.into_iter().fold(0.0, f64::max);
    let mut candidates = cfg.alpha_candidates.clone();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates
        .into_iter()
        .find(|&a| rhos.iter().all(|&r| EosQuery::new(a, r).sam_normalized(lambda) < 2.0))
        .ok_or_else(|| {
            ConfigError::new(
                "mlp.alpha_candidates",
                format!("every candidate starts above the threshold (initial top eigenvalue {lambda})"),
            )
            .into()
        })
}

#[allow(clippy::too_many_arguments)]
fn mlp_run(
    name: String,
    cfg: &MlpConfig,
    opt: &OptimizerConfig,
    seed: u64,
    alpha: f64,
    rho: f64,
    steps: usize,
    tracker: &TrackerConfig,
) -> Result<RunOutput> {
    let (data, params) = mlp_data(cfg, seed)?;
    let mut spec = opt.to_spec(seed);
    spec.alpha = alpha;
    spec.rho = rho;
    if rho == 0.0 {
        spec.rule = UpdateRule::GdExact;
    }
    let tr = train(&cfg.spec(), &data, &params, &spec, steps, tracker).map_err(|e| numerical(&name, e))?;
    let k = tr.records.first().map_or(tracker.k.min(cfg.n_points), |r| r.k());
    let trace = Trace::new(k, tr.records, tr.diverged_at);
    let rho = spec.effective_rho();
    Ok(RunOutput {
        record: RunRecord {
            csv: format!("{name}.csv"),
            name,
            seed,
            alpha,
            rho,
            diverged_at: trace.diverged_at,
            final_lambda_max: final_lambda_max(&trace),
            summary: summarize_trace(&trace, alpha, rho, tracker),
            segments: vec![],
        },
        trace,
    })
}

fn run_name(seed: u64, rho: Option<f64>) -> String {
    match rho {
        Some(r) => format!("seed{seed}_rho{}", fmt_rho(r)),
        None => format!("seed{seed}"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize to JSON");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes the CSVs and the figures of a set of runs.
fn write_runs(out: &Path, cfg: &ExperimentConfig, runs: &[RunOutput], files: &mut Vec<String>) -> Result<()> {
    for r in runs {
        emit_csv(&out.join(&r.record.csv), &r.trace)?;
        files.push(r.record.csv.clone());
    }
    if cfg.plots && !runs.is_empty() {
        let labeled: Vec<LabeledTrace<'_>> = runs
            .iter()
            .map(|r| LabeledTrace {
                label: &r.record.name,
                trace: &r.trace,
            })
            .collect();
        let title = cfg.name.clone().unwrap_or_else(|| cfg.kind.as_str().to_string());
        for (recipe, file) in [
            (SvgRecipe::EigVsStep, "eig_vs_step.svg"),
            (SvgRecipe::NormalizedVsStep, "normalized_vs_step.svg"),
        ] {
            if let Ok(svg) = render_traces(recipe, &title, &labeled) {
                emit_svg(&out.join(file), &svg)?;
                files.push(file.to_string());
            }
        }
    }
    Ok(())
}

/// Result of [`run_experiment`]: the report, and the directory it went to.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub report: ExperimentReport,
}

/// Runs `cfg` on the current rayon pool and writes its bundle to `out`.
///
/// Divergence inside a trajectory is recorded, not raised. Failed checks of
/// `THEOREM_VERIFY` and `REGIME_CHECK` are reported through
/// [`ExperimentReport::passed`]; the bundle is written either way.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Bundle> {
    cfg.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut files = Vec::new();
    let mut report = ExperimentReport {
        kind: cfg.kind,
        runs: vec![],
        sweep: None,
        selected_alpha: None,
        theorem: None,
        regime: None,
        passed: None,
    };
    let mut deferred: Option<HarnessError> = None;
    match cfg.kind {
        ExperimentKind::QuadTrajectory | ExperimentKind::QuadRhoSweep | ExperimentKind::SamSchedule => {
            let model = cfg.model.as_ref().expect("validated");
            let opt = cfg.optimizer.as_ref().expect("validated");
            let grid: Option<&[f64]> = cfg.sweep.as_ref().map(|s| s.rho_grid.as_slice());
            let mut jobs = Vec::new();
            for &seed in &cfg.seeds {
                match grid {
                    Some(g) => jobs.extend(g.iter().map(|&r| (seed, r, Some(r)))),
                    None => jobs.push((seed, opt.rho, None)),
                }
            }
            let outputs: Result<Vec<RunOutput>> = jobs
                .par_iter()
                .map(|&(seed, rho, tag)| {
                    quad_run(run_name(seed, tag), model, opt, seed, rho, cfg.steps, &cfg.tracker, cfg.schedule.as_ref())
                })
                .collect();
            let outputs = outputs?;
            write_runs(out, cfg, &outputs, &mut files)?;
            report.runs = outputs.into_iter().map(|o| o.record).collect();
            if let Some(g) = grid {
                let table = sweep_table(opt.alpha, g, &report.runs, cfg.tracker.tol);
                if cfg.plots {
                    let pts: Vec<SweepPoint> = table
                        .rows
                        .iter()
                        .map(|r| SweepPoint {
                            rho: r.rho,
                            lambda_max: r.stabilized_lambda_max.filter(|_| r.diverged < r.runs),
                        })
                        .collect();
                    let title = cfg.name.clone().unwrap_or_else(|| "radius sweep".to_string());
                    if let Ok(svg) = render_sweep(&title, opt.alpha, &pts) {
                        emit_svg(&out.join("sweep_summary.svg"), &svg)?;
                        files.push("sweep_summary.svg".into());
                    }
                }
                if table.all_diverged() {
                    deferred = Some(
                        ConfigError::new(
                            "optimizer.alpha",
                            format!("every radius diverged at alpha = {}; the learning rate is too large", opt.alpha),
                        )
                        .into(),
                    );
                }
                report.sweep = Some(table);
            }
        }
        ExperimentKind::MlpTrajectory => {
            let mlp = cfg.mlp.as_ref().expect("validated");
            let opt = cfg.optimizer.as_ref().expect("validated");
            let grid: Vec<f64> = match &cfg.sweep {
                Some(s) => s.rho_grid.clone(),
                None => vec![if opt.rule.uses_rho() { opt.rho } else { 0.0 }],
            };
            let alpha = if mlp.alpha_candidates.is_empty() {
                opt.alpha
            } else {
                let a = select_mlp_alpha(mlp, &cfg.seeds, &grid, &cfg.tracker)?;
                report.selected_alpha = Some(a);
                a
            };
            let tagged = cfg.sweep.is_some();
            let jobs: Vec<(u64, f64)> = cfg
                .seeds
                .iter()
                .flat_map(|&s| grid.iter().map(move |&r| (s, r)))
                .collect();
            let outputs: Result<Vec<RunOutput>> = jobs
                .par_iter()
                .map(|&(seed, rho)| {
                    let name = run_name(seed, tagged.then_some(rho));
                    mlp_run(name, mlp, opt, seed, alpha, rho, cfg.steps, &cfg.tracker)
                })
                .collect();
            let outputs = outputs?;
            write_runs(out, cfg, &outputs, &mut files)?;
            report.runs = outputs.into_iter().map(|o| o.record).collect();
            if let Some(s) = &cfg.sweep {
                report.sweep = Some(sweep_table(alpha, &s.rho_grid, &report.runs, cfg.tracker.tol));
            }
        }
        ExperimentKind::TheoremVerify => {
            let outcome = run_theorem(cfg.theorem.as_ref().expect("validated"), &cfg.seeds)?;
            write_json(&out.join("theorem_report.json"), &outcome)?;
            files.push("theorem_report.json".into());
            report.passed = Some(outcome.passed);
            report.theorem = Some(outcome);
        }
        ExperimentKind::RegimeCheck => {
            let outcome = run_regime(
                cfg.model.as_ref().expect("validated"),
                cfg.regime.as_ref().expect("validated"),
                &cfg.seeds,
            )?;
            write_json(&out.join("regime_report.json"), &outcome)?;
            files.push("regime_report.json".into());
            report.passed = Some(outcome.passed);
            report.regime = Some(outcome);
        }
    }
    write_json(&out.join("summary.json"), &report)?;
    files.push("summary.json".into());
    let manifest = Manifest {
        kind: cfg.kind,
        name: cfg.name.clone(),
        seeds: cfg.seeds.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: git_describe(),
        threads: rayon::current_num_threads(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files,
        config: serde_json::to_value(cfg).expect("config serializes to JSON"),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    match deferred {
        Some(e) => Err(e),
        None => Ok(Bundle {
            dir: out.to_path_buf(),
            report,
        }),
    }
}

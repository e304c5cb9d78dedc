use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use samlab::config::ExperimentConfig;
use samlab::runner::{run_experiment, ExperimentReport};
use samlab::summary::{final_lambda_max, summarize_trace, sweep_table, RunRecord};
use samlab::svg::{render_sweep, render_traces, LabeledTrace, SvgRecipe, SweepPoint};
use samlab::trace::{parse_csv, read_csv, to_csv_bytes, Trace};
use samlab_core::spectral::SpectrumRecord;
use samlab_core::tensor::RngStream;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_samlab"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_SAM: &str = r#"
kind = "QUAD_TRAJECTORY"
seeds = [3, 4, 5]
steps = 120
[tracker]
k = 3
window = 40
[model]
d = 12
p = 24
var_q = 3e-3
[optimizer]
alpha = 0.1
rho = 0.05
beta = 0.5
rule = "sam_sgd_exact"
"#;

const SMALL_SWEEP: &str = r#"
kind = "QUAD_RHO_SWEEP"
seeds = [1, 2]
steps = 150
[tracker]
k = 2
window = 50
[model]
d = 20
p = 40
var_q = 2.795e-3
[optimizer]
alpha = 0.1
rule = "sam_exact"
[sweep]
rho_grid = [0.0, 0.01, 0.05, 0.2, 1.0, 5.0]
"#;

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn negative_corpus_is_rejected_with_field_names() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/bad_configs");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(files.len() >= 30);
    for f in files {
        let text = fs::read_to_string(&f).unwrap();
        let expected = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# expect: "))
            .unwrap_or_else(|| panic!("{} lacks an expect line", f.display()));
        let err = ExperimentConfig::from_toml_str(&text).expect_err(&f.display().to_string());
        assert_eq!(err.field, expected, "{}: {}", f.display(), err.message);
        assert!(!err.message.is_empty());
    }
}

#[test]
fn bad_config_exits_with_config_status() {
    let bad = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/bad_configs/negative_alpha.toml");
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = run_cli(&["simulate", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("optimizer.alpha"), "{err}");
}

#[test]
fn subcommand_must_match_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_SAM);
    let (code, _, err) = run_cli(&["verify", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("kind"), "{err}");
}

#[test]
fn malformed_arguments_exit_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_SAM);
    let (code, _, _) = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--seeds", "1,x"]);
    assert_eq!(code, 2);
    let (code, _, err) = run_cli(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "no output directory anywhere");
    assert!(err.contains("output_dir"), "{err}");
    let (code, _, err) = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "x", "--seeds", "1,1"]);
    assert_eq!(code, 2);
    assert!(err.contains("seeds"), "{err}");
}

#[test]
fn overflowing_model_exits_with_numerical_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "kind = \"QUAD_TRAJECTORY\"\nseeds = [1]\nsteps = 20\n[tracker]\nwindow = 5\n[model]\nd = 4\np = 6\nvar_g = 1e300\n[optimizer]\nalpha = 0.1\nrule = \"gd_exact\"\n",
    );
    let (code, _, err) = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("seed1") && err.contains("step 0"), "{err}");
}

#[test]
fn failed_check_exits_with_acceptance_status() {
    let tmp = tempfile::tempdir().unwrap();
    // a threshold no Monte Carlo estimate can meet
    let cfg = write(
        tmp.path(),
        "c.toml",
        "kind = \"THEOREM_VERIFY\"\nseeds = [1]\n[theorem]\nstatement = \"jacobian_drift\"\nshapes = [[2, 3]]\nalpha = 1e-3\nrho = 1e-3\ndraws = 20000\nthreshold = 1e-9\n",
    );
    let out = tmp.path().join("o");
    let (code, stdout, _) = run_cli(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert!(stdout.contains("FAILED"));
    assert!(out.join("theorem_report.json").exists(), "report is written even on failure");
}

#[test]
fn passing_check_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "kind = \"THEOREM_VERIFY\"\nseeds = [1, 2]\n[theorem]\nstatement = \"batch_means\"\nshapes = [[4, 6]]\nalpha = 1e-3\nrho = 1e-3\ndraws = 40000\nbetas = [0.5]\nsampling = \"bernoulli\"\n",
    );
    let (code, _, err) = run_cli(&["verify", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn bundle_has_manifest_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_SAM);
    let out = tmp.path().join("bundle");
    let (code, stdout, err) = run_cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "8,9",
        "--threads",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("seed8") && stdout.contains("seed9"));
    for f in ["seed8.csv", "seed9.csv", "eig_vs_step.svg", "normalized_vs_step.svg", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([8, 9]));
    assert_eq!(m["config"]["seeds"], serde_json::json!([8, 9]));
    assert_eq!(m["config"]["optimizer"]["rule"], "sam_sgd_exact");
    assert_eq!(m["threads"], 2);
    assert!(m["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(m["wall_time_seconds"].as_f64().is_some_and(|t| t >= 0.0));
    let csv = fs::read(out.join("seed8.csv")).unwrap();
    let text = std::str::from_utf8(&csv).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(
        text.lines().next().unwrap(),
        "step,loss,grad_norm,eig_1,eig_2,eig_3,gdnorm_1,gdnorm_2,gdnorm_3,samnorm_1,samnorm_2,samnorm_3"
    );
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn csvs_are_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text) in [("traj.toml", SMALL_SAM), ("sweep.toml", SMALL_SWEEP)] {
        let cfg = write(tmp.path(), name, text);
        let sub = if name == "sweep.toml" { "sweep" } else { "simulate" };
        let mut bundles = Vec::new();
        for threads in ["1", "3", "1"] {
            let out = tmp.path().join(format!("{name}-{threads}-{}", bundles.len()));
            let (code, _, err) = run_cli(&[sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
            assert_eq!(code, 0, "{err}");
            bundles.push(csvs(&out));
        }
        assert!(!bundles[0].is_empty());
        assert_eq!(bundles[0], bundles[1], "{name}: thread count changed the CSVs");
        assert_eq!(bundles[0], bundles[2], "{name}: rerun changed the CSVs");
    }
}

#[test]
fn sweep_summary_is_recomputable_from_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(SMALL_SWEEP).unwrap();
    let bundle = run_experiment(&cfg, tmp.path()).unwrap();
    let table = bundle.report.sweep.clone().unwrap();
    assert!(table.rows.iter().any(|r| r.diverged < r.runs), "grid should have stable radii");
    assert!(table.divergent_tail, "largest radius should diverge");

    let on_disk: ExperimentReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, bundle.report);

    // rebuild every record from nothing but the CSVs and the config
    let alpha = cfg.optimizer.as_ref().unwrap().alpha;
    let rebuilt: Vec<RunRecord> = bundle
        .report
        .runs
        .iter()
        .map(|r| {
            let trace = read_csv(&tmp.path().join(&r.csv)).unwrap();
            RunRecord {
                name: r.name.clone(),
                seed: r.seed,
                alpha,
                rho: r.rho,
                csv: r.csv.clone(),
                diverged_at: trace.diverged_at,
                final_lambda_max: final_lambda_max(&trace),
                summary: summarize_trace(&trace, alpha, r.rho, &cfg.tracker),
                segments: vec![],
            }
        })
        .collect();
    assert_eq!(rebuilt, bundle.report.runs);
    let grid = &cfg.sweep.as_ref().unwrap().rho_grid;
    assert_eq!(sweep_table(alpha, grid, &rebuilt, cfg.tracker.tol), table);
    let svg = fs::read_to_string(tmp.path().join("sweep_summary.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count() + svg.matches("class=\"diverged\"").count(), grid.len());
}

#[test]
fn shipped_configs_validate_and_round_trip() {
    let dir = repo_root().join("configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = ExperimentConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(cfg, again, "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 10);
}

fn random_trace(rows: usize, k: usize, seed: u64) -> Trace {
    let mut r = RngStream::new(seed, 0);
    let records = (0..rows)
        .map(|t| {
            let eigs: Vec<f64> = (0..k).map(|_| r.normal().abs() * 10f64.powi((t % 7) as i32 - 3)).collect();
            SpectrumRecord::from_eigs(t, r.normal().exp(), r.normal().abs(), eigs, 0.013, 0.0071)
        })
        .collect();
    Trace::new(k, records, None)
}

#[test]
fn ten_thousand_rows_round_trip_exactly() {
    let trace = random_trace(10_000, 4, 99);
    let bytes = to_csv_bytes(&trace).unwrap();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 10_001);
    let back = parse_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(back, trace);
    let tmp = tempfile::tempdir().unwrap();
    samlab::trace::emit_csv(&tmp.path().join("t.csv"), &trace).unwrap();
    assert_eq!(read_csv(&tmp.path().join("t.csv")).unwrap(), trace);
}

#[test]
fn single_record_round_trips() {
    let trace = random_trace(1, 1, 5);
    let back = parse_csv(std::str::from_utf8(&to_csv_bytes(&trace).unwrap()).unwrap()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn svg_recipes() {
    let t = random_trace(50, 2, 1);
    let one = [LabeledTrace { label: "a", trace: &t }];
    let eig = render_traces(SvgRecipe::EigVsStep, "t", &one).unwrap();
    assert_eq!(eig.matches("<polyline class=\"series\"").count(), 1);
    assert!(!eig.contains("class=\"reference\""));
    assert!(!eig.contains("href"), "no external assets");
    let norm = render_traces(SvgRecipe::NormalizedVsStep, "t", &one).unwrap();
    assert!(norm.contains("class=\"reference\""));
    assert!(render_traces(SvgRecipe::EigVsStep, "t", &[]).is_err());

    let pts: Vec<SweepPoint> = [0.01, 0.02, 0.04, 0.08, 0.16, 0.32]
        .iter()
        .map(|&rho| SweepPoint { rho, lambda_max: Some(5.0 / (1.0 + rho)) })
        .collect();
    let sweep = render_sweep("s", 0.1, &pts).unwrap();
    assert_eq!(sweep.matches("class=\"marker\"").count(), 6);
    assert!(sweep.contains("<title>threshold</title>"), "threshold curve overlay");
}

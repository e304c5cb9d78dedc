//! Experiment documents (TOML) and their validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use samlab_core::mlp::{Activation, MlpSpec};
use samlab_core::quad::{batch_size, BatchSampling, ModelScales, OptimizerSpec, UpdateRule};
use samlab_core::spectral::TrackerConfig;
use samlab_core::theory::{QDraw, MIN_DRAWS};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    QuadTrajectory,
    QuadRhoSweep,
    TheoremVerify,
    RegimeCheck,
    MlpTrajectory,
    SamSchedule,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::QuadTrajectory => "QUAD_TRAJECTORY",
            Self::QuadRhoSweep => "QUAD_RHO_SWEEP",
            Self::TheoremVerify => "THEOREM_VERIFY",
            Self::RegimeCheck => "REGIME_CHECK",
            Self::MlpTrajectory => "MLP_TRAJECTORY",
            Self::SamSchedule => "SAM_SCHEDULE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    /// Optimizer steps per run (trajectory kinds).
    #[serde(default)]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write SVG figures next to the CSVs.
    #[serde(default = "yes")]
    pub plots: bool,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SamSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<TheoremConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpConfig>,
}

/// Quadratic model dimensions and initialization variances. Omitted
/// variances take `var_g = 1/P`, `var_q = 1/(P √D)`, `var_y = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_y: Option<f64>,
}

impl ModelConfig {
    pub fn scales(&self) -> ModelScales {
        let base = ModelScales::default_for(self.d, self.p);
        ModelScales {
            var_q: self.var_q.unwrap_or(base.var_q),
            var_g: self.var_g.unwrap_or(base.var_g),
            var_y: self.var_y.unwrap_or(base.var_y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub alpha: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub rule: UpdateRule,
    #[serde(default)]
    pub sampling: BatchSampling,
}

fn one() -> f64 {
    1.0
}

impl OptimizerConfig {
    /// Optimizer for one run; batch draws use stream 1 of `seed`.
    pub fn to_spec(&self, seed: u64) -> OptimizerSpec {
        OptimizerSpec {
            alpha: self.alpha,
            rho: self.rho,
            beta: self.beta,
            rule: self.rule,
            sampling: self.sampling,
            seed,
            stream: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rho_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSegment {
    /// First step of the segment.
    pub start: usize,
    /// One past the last step.
    pub end: usize,
    pub rho: f64,
}

/// Piecewise-constant SAM radius over `[0, steps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamSchedule {
    pub segments: Vec<ScheduleSegment>,
}

impl SamSchedule {
    pub fn validate(&self, steps: usize) -> Result<(), ConfigError> {
        if self.segments.is_empty() {
            return Err(ConfigError::new("schedule.segments", "must contain at least one segment"));
        }
        let mut expected = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let field = format!("schedule.segments[{i}]");
            if seg.start != expected {
                return Err(ConfigError::new(
                    format!("{field}.start"),
                    format!("segments must be contiguous: expected start {expected}, got {}", seg.start),
                ));
            }
            if seg.end <= seg.start {
                return Err(ConfigError::new(
                    format!("{field}.end"),
                    format!("end {} must exceed start {}", seg.end, seg.start),
                ));
            }
            if !(seg.rho >= 0.0 && seg.rho.is_finite()) {
                return Err(ConfigError::new(format!("{field}.rho"), format!("must be non-negative, got {}", seg.rho)));
            }
            expected = seg.end;
        }
        if expected != steps {
            return Err(ConfigError::new(
                "schedule.segments",
                format!("segments cover [0, {expected}) but steps = {steps}"),
            ));
        }
        Ok(())
    }

    /// Radius in force at `step`; steps past the end keep the last value.
    pub fn rho_at(&self, step: usize) -> f64 {
        self.segments
            .iter()
            .find(|s| step < s.end)
            .or(self.segments.last())
            .map_or(0.0, |s| s.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremStatement {
    /// Mean Jacobian change of a full-batch SAM step.
    JacobianDrift,
    /// Means of `Δz` and `ΔJ` of a minibatch SAM step.
    BatchMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremConfig {
    pub statement: TheoremStatement,
    /// `(D, P)` pairs.
    pub shapes: Vec<[usize; 2]>,
    pub alpha: f64,
    pub rho: f64,
    pub draws: usize,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default = "bernoulli")]
    pub sampling: BatchSampling,
    #[serde(default)]
    pub q_draw: QDraw,
    #[serde(default = "yes")]
    pub antithetic: bool,
    /// Largest accepted element-wise `|z|`.
    #[serde(default = "four")]
    pub threshold: f64,
    /// Smallest `|z|` a sign-flipped prediction must reach.
    #[serde(default = "ten")]
    pub flip_threshold: f64,
    /// Relative tolerance on the recovered `1/β` factor of the one-hot test.
    #[serde(default = "tenth")]
    pub one_hot_tolerance: f64,
}

fn bernoulli() -> BatchSampling {
    BatchSampling::Bernoulli
}
fn yes() -> bool {
    true
}
fn four() -> f64 {
    4.0
}
fn ten() -> f64 {
    10.0
}
fn tenth() -> f64 {
    0.1
}

/// Interpolation-point instances: one per seed, and for each target value
/// the learning rate that puts the top SAM-normalized eigenvalue there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub rho: f64,
    pub targets: Vec<f64>,
    pub eps: f64,
    pub radius: f64,
    pub horizon: usize,
    pub perturbations: usize,
    /// Standard deviation of the entries of the interpolation point.
    #[serde(default = "theta_scale")]
    pub theta_scale: f64,
}

fn theta_scale() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "one")]
    pub init_scale: f64,
    pub n_points: usize,
    pub separation: f64,
    /// When non-empty, the run uses the largest candidate whose initial
    /// SAM-normalized top eigenvalue is below 2 for every seed and radius.
    #[serde(default)]
    pub alpha_candidates: Vec<f64>,
}

impl MlpConfig {
    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            init_scale: self.init_scale,
            ..MlpSpec::new(self.layer_widths.clone(), self.activation)
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be non-negative and finite, got {v}")))
    }
}

fn require<'a, S>(section: &'a Option<S>, name: &str, kind: ExperimentKind) -> Result<&'a S, ConfigError> {
    section
        .as_ref()
        .ok_or_else(|| ConfigError::new(name, format!("section is required for {}", kind.as_str())))
}

fn forbid<S>(section: &Option<S>, name: &str, kind: ExperimentKind) -> Result<(), ConfigError> {
    match section {
        Some(_) => Err(ConfigError::new(name, format!("section is not used by {}", kind.as_str()))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let field = match line {
                Some(l) => format!("document (line {l})"),
                None => "document".to_string(),
            };
            ConfigError::new(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("document", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Checks every parameter the kind will read and rejects sections it ignores.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use ExperimentKind::*;
        let kind = self.kind;
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "must list at least one seed"));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(ConfigError::new("seeds", "seeds must be distinct"));
        }
        let uses_steps = matches!(kind, QuadTrajectory | QuadRhoSweep | MlpTrajectory | SamSchedule);
        if uses_steps && self.steps == 0 {
            return Err(ConfigError::new("steps", format!("must be positive for {}", kind.as_str())));
        }
        if !uses_steps && self.steps != 0 {
            return Err(ConfigError::new("steps", format!("is not used by {}", kind.as_str())));
        }
        if uses_steps {
            self.validate_tracker()?;
        }
        match kind {
            QuadTrajectory | QuadRhoSweep | SamSchedule => {
                let model = require(&self.model, "model", kind)?;
                validate_model(model)?;
                let opt = require(&self.optimizer, "optimizer", kind)?;
                validate_optimizer(opt, model.d)?;
                forbid(&self.theorem, "theorem", kind)?;
                forbid(&self.regime, "regime", kind)?;
                forbid(&self.mlp, "mlp", kind)?;
                if kind == QuadRhoSweep {
                    validate_grid(require(&self.sweep, "sweep", kind)?)?;
                    if !opt.rule.uses_rho() {
                        return Err(ConfigError::new(
                            "optimizer.rule",
                            format!("{:?} has no SAM radius to sweep", opt.rule),
                        ));
                    }
                } else {
                    forbid(&self.sweep, "sweep", kind)?;
                }
                if kind == SamSchedule {
                    let schedule = require(&self.schedule, "schedule", kind)?;
                    schedule.validate(self.steps)?;
                    for (i, seg) in schedule.segments.iter().enumerate() {
                        if seg.end - seg.start < 2 * self.tracker.window {
                            return Err(ConfigError::new(
                                format!("schedule.segments[{i}]"),
                                format!(
                                    "segment of {} steps is shorter than two stabilization windows ({})",
                                    seg.end - seg.start,
                                    2 * self.tracker.window
                                ),
                            ));
                        }
                    }
                    if !opt.rule.uses_rho() {
                        return Err(ConfigError::new(
                            "optimizer.rule",
                            format!("{:?} has no SAM radius to schedule", opt.rule),
                        ));
                    }
                } else {
                    forbid(&self.schedule, "schedule", kind)?;
                }
            }
            TheoremVerify => {
                validate_theorem(require(&self.theorem, "theorem", kind)?)?;
                for (sec, name) in [
                    (self.model.is_some(), "model"),
                    (self.optimizer.is_some(), "optimizer"),
                    (self.sweep.is_some(), "sweep"),
                    (self.schedule.is_some(), "schedule"),
                    (self.regime.is_some(), "regime"),
                    (self.mlp.is_some(), "mlp"),
                ] {
                    if sec {
                        return Err(ConfigError::new(name, format!("section is not used by {}", kind.as_str())));
                    }
                }
            }
            RegimeCheck => {
                let model = require(&self.model, "model", kind)?;
                validate_model(model)?;
                validate_regime(require(&self.regime, "regime", kind)?)?;
                forbid(&self.optimizer, "optimizer", kind)?;
                forbid(&self.sweep, "sweep", kind)?;
                forbid(&self.schedule, "schedule", kind)?;
                forbid(&self.theorem, "theorem", kind)?;
                forbid(&self.mlp, "mlp", kind)?;
            }
            MlpTrajectory => {
                let mlp = require(&self.mlp, "mlp", kind)?;
                validate_mlp(mlp)?;
                let opt = require(&self.optimizer, "optimizer", kind)?;
                validate_optimizer(opt, mlp.n_points)?;
                if !matches!(opt.rule, UpdateRule::GdExact | UpdateRule::SamExact) {
                    return Err(ConfigError::new(
                        "optimizer.rule",
                        "the MLP testbed supports gd_exact and sam_exact",
                    ));
                }
                if let Some(sweep) = &self.sweep {
                    validate_grid(sweep)?;
                    if opt.rule != UpdateRule::SamExact {
                        return Err(ConfigError::new("optimizer.rule", "a radius sweep needs sam_exact"));
                    }
                }
                forbid(&self.model, "model", kind)?;
                forbid(&self.schedule, "schedule", kind)?;
                forbid(&self.theorem, "theorem", kind)?;
                forbid(&self.regime, "regime", kind)?;
            }
        }
        Ok(())
    }

    fn validate_tracker(&self) -> Result<(), ConfigError> {
        let t = &self.tracker;
        if t.k == 0 {
            return Err(ConfigError::new("tracker.k", "must be at least 1"));
        }
        if t.cadence == 0 {
            return Err(ConfigError::new("tracker.cadence", "must be at least 1"));
        }
        if t.window == 0 {
            return Err(ConfigError::new("tracker.window", "must be at least 1"));
        }
        if 2 * t.window > self.steps {
            return Err(ConfigError::new(
                "tracker.window",
                format!("window {} needs at least {} steps, got {}", t.window, 2 * t.window, self.steps),
            ));
        }
        positive("tracker.tol", t.tol)?;
        positive("tracker.lanczos_tol", t.lanczos_tol)
    }
}

fn validate_model(m: &ModelConfig) -> Result<(), ConfigError> {
    if m.d == 0 {
        return Err(ConfigError::new("model.d", "must be at least 1"));
    }
    if m.p == 0 {
        return Err(ConfigError::new("model.p", "must be at least 1"));
    }
    for (v, name) in [(m.var_q, "model.var_q"), (m.var_g, "model.var_g"), (m.var_y, "model.var_y")] {
        if let Some(v) = v {
            non_negative(name, v)?;
        }
    }
    Ok(())
}

fn validate_optimizer(o: &OptimizerConfig, d: usize) -> Result<(), ConfigError> {
    positive("optimizer.alpha", o.alpha)?;
    non_negative("optimizer.rho", o.rho)?;
    if !(o.beta > 0.0 && o.beta <= 1.0) {
        return Err(ConfigError::new("optimizer.beta", format!("must lie in (0, 1], got {}", o.beta)));
    }
    if o.rule.uses_batches() && o.sampling == BatchSampling::WithoutReplacement {
        batch_size(o.beta, d).map_err(|e| ConfigError::new("optimizer.beta", e.to_string()))?;
    }
    Ok(())
}

fn validate_grid(s: &SweepConfig) -> Result<(), ConfigError> {
    if s.rho_grid.is_empty() {
        return Err(ConfigError::new("sweep.rho_grid", "must not be empty"));
    }
    for (i, &r) in s.rho_grid.iter().enumerate() {
        non_negative(&format!("sweep.rho_grid[{i}]"), r)?;
    }
    if s.rho_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::new("sweep.rho_grid", "must be strictly ascending"));
    }
    Ok(())
}

fn validate_theorem(t: &TheoremConfig) -> Result<(), ConfigError> {
    if t.shapes.is_empty() {
        return Err(ConfigError::new("theorem.shapes", "must list at least one [D, P] pair"));
    }
    for (i, &[d, p]) in t.shapes.iter().enumerate() {
        if d == 0 || p == 0 {
            return Err(ConfigError::new(format!("theorem.shapes[{i}]"), "D and P must be positive"));
        }
    }
    positive("theorem.alpha", t.alpha)?;
    non_negative("theorem.rho", t.rho)?;
    if t.draws < MIN_DRAWS {
        return Err(ConfigError::new("theorem.draws", format!("need at least {MIN_DRAWS}, got {}", t.draws)));
    }
    positive("theorem.threshold", t.threshold)?;
    positive("theorem.flip_threshold", t.flip_threshold)?;
    positive("theorem.one_hot_tolerance", t.one_hot_tolerance)?;
    match t.statement {
        TheoremStatement::JacobianDrift => {
            if !t.betas.is_empty() {
                return Err(ConfigError::new("theorem.betas", "is only used by batch_means"));
            }
        }
        TheoremStatement::BatchMeans => {
            if t.betas.is_empty() {
                return Err(ConfigError::new("theorem.betas", "batch_means needs at least one batch fraction"));
            }
            for (i, &b) in t.betas.iter().enumerate() {
                let field = format!("theorem.betas[{i}]");
                if !(b > 0.0 && b <= 1.0) {
                    return Err(ConfigError::new(field, format!("must lie in (0, 1], got {b}")));
                }
                if t.sampling == BatchSampling::WithoutReplacement {
                    for &[d, _] in &t.shapes {
                        batch_size(b, d).map_err(|e| ConfigError::new(field.clone(), e.to_string()))?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn validate_regime(r: &RegimeConfig) -> Result<(), ConfigError> {
    non_negative("regime.rho", r.rho)?;
    positive("regime.eps", r.eps)?;
    positive("regime.radius", r.radius)?;
    positive("regime.theta_scale", r.theta_scale)?;
    if r.horizon == 0 {
        return Err(ConfigError::new("regime.horizon", "must be at least 1"));
    }
    if r.perturbations == 0 {
        return Err(ConfigError::new("regime.perturbations", "must be at least 1"));
    }
    if r.targets.is_empty() {
        return Err(ConfigError::new("regime.targets", "must list at least one target"));
    }
    for (i, &t) in r.targets.iter().enumerate() {
        let field = format!("regime.targets[{i}]");
        positive(&field, t)?;
        if (t - 2.0).abs() <= r.eps {
            return Err(ConfigError::new(field, format!("{t} lies in the marginal band 2 ± {}", r.eps)));
        }
    }
    Ok(())
}

fn validate_mlp(m: &MlpConfig) -> Result<(), ConfigError> {
    m.spec().validate().map_err(|e| ConfigError::new("mlp.layer_widths", e.to_string()))?;
    positive("mlp.init_scale", m.init_scale)?;
    if m.n_points < 2 || !m.n_points.is_multiple_of(2) {
        return Err(ConfigError::new("mlp.n_points", format!("must be even and at least 2, got {}", m.n_points)));
    }
    non_negative("mlp.separation", m.separation)?;
    for (i, &a) in m.alpha_candidates.iter().enumerate() {
        positive(&format!("mlp.alpha_candidates[{i}]"), a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAJECTORY: &str = r#"
kind = "QUAD_TRAJECTORY"
seeds = [0, 1]
steps = 50

[tracker]
k = 3
window = 10

[model]
d = 8
p = 12

[optimizer]
alpha = 0.05
rho = 0.01
rule = "sam_exact"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(TRAJECTORY).unwrap();
        assert_eq!(cfg.tracker.k, 3);
        assert_eq!(cfg.tracker.cadence, 1);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn default_scales_fill_missing_variances() {
        let m = ModelConfig {
            d: 4,
            p: 10,
            var_q: None,
            var_g: Some(0.5),
            var_y: None,
        };
        let s = m.scales();
        assert_eq!(s.var_g, 0.5);
        assert_eq!(s.var_q, 1.0 / (10.0 * 2.0));
    }

    #[test]
    fn unknown_field_names_line() {
        let bad = TRAJECTORY.replace("alpha = 0.05", "alhpa = 0.05");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.field.starts_with("document (line"), "{err}");
        assert!(err.message.contains("alhpa"), "{err}");
    }

    #[test]
    fn schedule_rules() {
        let seg = |start, end, rho| ScheduleSegment { start, end, rho };
        let ok = SamSchedule {
            segments: vec![seg(0, 5, 0.0), seg(5, 10, 0.1)],
        };
        ok.validate(10).unwrap();
        assert_eq!(ok.rho_at(4), 0.0);
        assert_eq!(ok.rho_at(5), 0.1);
        assert_eq!(ok.rho_at(10), 0.1);
        let gap = SamSchedule {
            segments: vec![seg(0, 5, 0.0), seg(6, 10, 0.1)],
        };
        assert_eq!(gap.validate(10).unwrap_err().field, "schedule.segments[1].start");
        assert_eq!(ok.validate(12).unwrap_err().field, "schedule.segments");
    }
}

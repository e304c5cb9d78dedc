//! Convergent/divergent classification near an interpolation point and its
//! empirical check.

use serde::{Deserialize, Serialize};

use super::eos::EosQuery;
use crate::error::{check_dim, Error, Result};
use crate::quad::QuadraticModel;
use crate::scalar::Real;
use crate::spectral::linear_fit;
use crate::tensor::{sym_eig, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    Convergent,
    Divergent,
    /// Within `eps` of 2 (`lower_bound = false`), or some value not above
    /// `eps` (`lower_bound = true`).
    Marginal { eps: f64, lower_bound: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    /// `αλ_i(1 + ρλ_i)` for each input eigenvalue.
    pub normalized: Vec<f64>,
    pub regime: Regime,
}

/// Any value above `2 + eps` makes the verdict divergent; otherwise all
/// values must lie in `(eps, 2 - eps)` for a convergent verdict.
pub fn classify_regime(eigs: &[f64], alpha: f64, rho: f64, eps: f64) -> Result<RegimeVerdict> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    if eigs.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be non-negative".into()));
    }
    let q = EosQuery::new(alpha, rho);
    let normalized: Vec<f64> = eigs.iter().map(|&l| q.sam_normalized(l)).collect();
    let regime = if normalized.iter().any(|&v| v > 2.0 + eps) {
        Regime::Divergent
    } else if normalized.iter().all(|&v| v < 2.0 - eps && v > eps) {
        Regime::Convergent
    } else {
        Regime::Marginal {
            eps,
            lower_bound: normalized.iter().any(|&v| v <= eps),
        }
    };
    Ok(RegimeVerdict { normalized, regime })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheckSpec {
    pub alpha: f64,
    pub rho: f64,
    pub eps: f64,
    /// Radius `q` of the ball around the interpolation point.
    pub radius: f64,
    pub horizon: usize,
    pub perturbations: usize,
}

/// Outcome of one perturbed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRun {
    /// `‖z_t‖` (convergent check) or `‖θ_t - θ*‖` (divergent check) per step.
    pub trace: Vec<f64>,
    /// Slope and `r²` of `log ‖z_t‖` against `t` (convergent check).
    pub log_slope: f64,
    pub r_squared: f64,
    /// First step outside the ball (divergent check).
    pub exit_step: Option<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub verdict: RegimeVerdict,
    pub runs: Vec<PerturbationRun>,
    pub verdict_match: bool,
}

/// Minimum `r²` of the log-linear fit for a run to count as exponentially convergent.
pub const MIN_R_SQUARED: f64 = 0.99;

/// Classifies the spectrum of `JJᵀ` at `θ*` and checks the verdict by
/// simulation with exact SAM steps (GD when `ρ = 0`).
///
/// Convergent: random perturbations of size `radius` must drive `‖z_t‖` to zero
/// along a log-linear decay with negative slope and `r² > 0.99`, fitted over
/// the whole horizon (or until `‖z_t‖` underflows). Divergent: a perturbation of size
/// `radius / 10` along `Jᵀv` for the top NTK eigenvector `v` must leave the
/// ball of size `radius` within the horizon. Marginal verdicts are rejected.
pub fn verify_regime_empirically<T: Real>(
    model: &QuadraticModel<T>,
    theta_star: &[T],
    spec: &RegimeCheckSpec,
    rng: &RngStream,
) -> Result<RegimeCheck> {
    check_dim("verify_regime_empirically", model.p(), theta_star.len())?;
    let s_star = model.state_from_theta(theta_star)?;
    let scale = s_star.j.max_abs().max(T::one());
    if s_star.z.max_abs() > T::of(1e-8) * scale {
        return Err(Error::InvalidInput("theta_star is not an interpolation point".into()));
    }
    let eig = sym_eig(&s_star.ntk())?;
    let eigs: Vec<f64> = eig.values.iter().map(|v| v.as_f64().max(0.0)).collect();
    let verdict = classify_regime(&eigs, spec.alpha, spec.rho, spec.eps)?;
    let (alpha, rho) = (T::of(spec.alpha), T::of(spec.rho));
    let theta_star = Vector::from_vec(theta_star.to_vec());
    let mut runs = Vec::with_capacity(spec.perturbations);
    for i in 0..spec.perturbations {
        let mut r = rng.split(i as u64);
        let run = match verdict.regime {
            Regime::Convergent => {
                let u: Vector<T> = r.unit_vector(model.p());
                let theta0 = theta_star.add_scaled(T::of(spec.radius), &u)?;
                convergent_run(model, &theta0, alpha, rho, spec.horizon)?
            }
            Regime::Divergent => {
                let v = eig.vector(0);
                let mut dir = s_star.j.t_matvec(&v)?;
                dir = dir.scaled(T::one() / dir.norm());
                if i > 0 {
                    // Later runs mix in a random component and flip sign.
                    let u: Vector<T> = r.unit_vector(model.p());
                    let sign = if i % 2 == 1 { -T::one() } else { T::one() };
                    dir = dir.scaled(sign).add_scaled(T::of(0.1), &u)?;
                    dir = dir.scaled(T::one() / dir.norm());
                }
                let theta0 = theta_star.add_scaled(T::of(spec.radius / 10.0), &dir)?;
                divergent_run(model, &theta_star, &theta0, alpha, rho, spec)?
            }
            Regime::Marginal { .. } => {
                return Err(Error::InvalidInput(
                    "marginal spectra are not checked empirically".into(),
                ))
            }
        };
        runs.push(run);
    }
    let verdict_match = runs.iter().all(|r| r.matched);
    Ok(RegimeCheck {
        verdict,
        runs,
        verdict_match,
    })
}

fn convergent_run<T: Real>(
    model: &QuadraticModel<T>,
    theta0: &Vector<T>,
    alpha: T,
    rho: T,
    horizon: usize,
) -> Result<PerturbationRun> {
    let mut s = model.state_from_theta(theta0)?;
    let z0 = s.z.norm().as_f64();
    // Exact steps shrink z multiplicatively, so there is no roundoff floor to stop at.
    let floor = f64::MIN_POSITIVE;
    let mut trace = vec![z0];
    let mut diverged = false;
    for _ in 0..horizon {
        match model.sam_advance_exact(&s, alpha, rho) {
            Ok(adv) => s = adv.state,
            Err(Error::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        let n = s.z.norm().as_f64();
        trace.push(n);
        if n < floor {
            break;
        }
    }
    let (ts, logs): (Vec<f64>, Vec<f64>) = trace
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= floor && n > 0.0)
        .map(|(t, &n)| (t as f64, n.ln()))
        .unzip();
    let (log_slope, _, r_squared) = if ts.len() >= 3 {
        linear_fit(&ts, &logs)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let matched = !diverged && log_slope < 0.0 && r_squared > MIN_R_SQUARED;
    Ok(PerturbationRun {
        trace,
        log_slope,
        r_squared,
        exit_step: None,
        matched,
    })
}

fn divergent_run<T: Real>(
    model: &QuadraticModel<T>,
    theta_star: &Vector<T>,
    theta0: &Vector<T>,
    alpha: T,
    rho: T,
    spec: &RegimeCheckSpec,
) -> Result<PerturbationRun> {
    let mut s = model.state_from_theta(theta0)?;
    let mut offset = theta0.sub(theta_star)?;
    let mut trace = vec![offset.norm().as_f64()];
    let mut exit_step = None;
    for t in 1..=spec.horizon {
        match model.sam_advance_exact(&s, alpha, rho) {
            Ok(adv) => {
                offset.axpy(T::one(), &adv.displacement)?;
                s = adv.state;
            }
            Err(Error::Diverged { .. }) => {
                exit_step = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
        let dist = offset.norm().as_f64();
        trace.push(dist);
        if dist > spec.radius {
            exit_step = Some(t);
            break;
        }
    }
    Ok(PerturbationRun {
        trace,
        log_slope: f64::NAN,
        r_squared: f64::NAN,
        exit_step,
        matched: exit_step.is_some(),
    })
}

//! Trajectory instrumentation: NTK spectra, normalized eigenvalues and
//! edge-of-stability detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::DynState;
use crate::scalar::Real;
use crate::tensor::{sym_eig, sym_eigvals, top_eigs_lanczos, LanczosOptions, RngStream, Vector};
use crate::theory::EosQuery;

/// Largest `D` for which the automatic method uses the dense eigensolver.
pub const DENSE_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigMethod {
    /// Dense solver for `D <= 512`, Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Number of tracked eigenvalues.
    pub k: usize,
    /// Record every `cadence` steps.
    pub cadence: usize,
    /// Stabilization window, in steps.
    pub window: usize,
    pub tol: f64,
    pub eig_method: EigMethod,
    pub lanczos_tol: f64,
    pub lanczos_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            k: 5,
            cadence: 1,
            window: 100,
            tol: 0.15,
            eig_method: EigMethod::Auto,
            lanczos_tol: 1e-10,
            lanczos_seed: 0x1a9c,
        }
    }
}

/// One row of a spectral trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub top_eigs: Vec<f64>,
    pub gd_normalized: Vec<f64>,
    pub sam_normalized: Vec<f64>,
}

impl SpectrumRecord {
    pub fn lambda_max(&self) -> f64 {
        self.top_eigs.first().copied().unwrap_or(f64::NAN)
    }

    pub fn k(&self) -> usize {
        self.top_eigs.len()
    }

    /// Fills the normalized arrays from `top_eigs` for the given `(α, ρ)`.
    pub fn from_eigs(step: usize, loss: f64, grad_norm: f64, top_eigs: Vec<f64>, alpha: f64, rho: f64) -> Self {
        let q = EosQuery::new(alpha, rho);
        let gd_normalized = top_eigs.iter().map(|&l| alpha * l).collect();
        let sam_normalized = top_eigs.iter().map(|&l| q.sam_normalized(l)).collect();
        Self {
            step,
            loss,
            grad_norm,
            top_eigs,
            gd_normalized,
            sam_normalized,
        }
    }
}

/// Top-`k` eigenvalues of `J Jᵀ`, descending.
pub fn ntk_top_eigs<T: Real>(s: &DynState<T>, k: usize, cfg: &TrackerConfig) -> Result<Vec<f64>> {
    let d = s.d();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("need 1 <= k <= D, got k = {k}, D = {d}")));
    }
    let dense = match cfg.eig_method {
        EigMethod::Auto => d <= DENSE_LIMIT,
        EigMethod::Dense => true,
        EigMethod::Lanczos => false,
    };
    if dense {
        let vals = sym_eigvals(&s.ntk())?;
        return Ok(vals.iter().take(k).map(|x| x.as_f64()).collect());
    }
    let j = &s.j;
    let mut buf = vec![T::zero(); j.cols()];
    let mut rng = RngStream::new(cfg.lanczos_seed, s.step as u64);
    let vals = top_eigs_lanczos(
        d,
        |u: &[T], out: &mut [T]| {
            buf.iter_mut().for_each(|b| *b = T::zero());
            for (r, &ur) in u.iter().enumerate() {
                crate::tensor::axpy(ur, j.row(r), &mut buf);
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o = crate::tensor::dot(j.row(r), &buf);
            }
        },
        k,
        LanczosOptions {
            tol: cfg.lanczos_tol,
            max_iter: None,
        },
        &mut rng,
    )?;
    Ok(vals.iter().map(|x| x.as_f64()).collect())
}

/// Spectrum of `J Jᵀ` at `s` with GD- and SAM-normalized values for `(α, ρ)`.
/// `grad_norm` defaults to the full-batch `‖Jᵀz‖`.
pub fn record<T: Real>(
    s: &DynState<T>,
    alpha: f64,
    rho: f64,
    cfg: &TrackerConfig,
    grad_norm: Option<f64>,
) -> Result<SpectrumRecord> {
    let k = cfg.k.min(s.d());
    let eigs = ntk_top_eigs(s, k, cfg)?;
    let grad_norm = grad_norm.unwrap_or_else(|| s.gradient().norm().as_f64());
    Ok(SpectrumRecord::from_eigs(
        s.step,
        s.loss().as_f64(),
        grad_norm,
        eigs,
        alpha,
        rho,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EosVerdict {
    GdEos,
    SamEos,
    BelowEos,
    /// Stable but with the normalized eigenvalue above `2 + tol`.
    AboveEos,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EosSummary {
    pub window_start: usize,
    pub window_end: usize,
    pub mean_lambda_max: f64,
    pub mean_gd_normalized: f64,
    pub mean_sam_normalized: f64,
    /// `|slope of λ_max| · window span / mean λ_max` over the window.
    pub relative_drift: f64,
    pub stabilized: bool,
    pub verdict: EosVerdict,
}

/// Summarizes the trailing `window` steps of a trace.
///
/// The window counts as stabilized when the least-squares drift of `λ_max`
/// across it, relative to its mean, is below `tol` (equivalently, a drift per
/// step below `tol / window`). The verdict compares the window mean of the
/// SAM-normalized eigenvalue (GD-normalized when `ρ = 0`) with the band
/// `[2 - tol, 2 + tol]`. The trace must cover at least two windows unless the
/// run diverged.
pub fn detect_stabilization(
    trace: &[SpectrumRecord],
    alpha: f64,
    rho: f64,
    window: usize,
    tol: f64,
    diverged: bool,
) -> Result<EosSummary> {
    if window == 0 {
        return Err(Error::InvalidInput("stabilization window must be positive".into()));
    }
    let spacing = match trace {
        [a, b, ..] => b.step.saturating_sub(a.step).max(1),
        _ => 1,
    };
    let per_window = window.div_ceil(spacing);
    if !diverged && trace.len() < 2 * per_window {
        return Err(Error::InvalidInput(format!(
            "trace has {} records {spacing} steps apart, need at least {} for a {window}-step window",
            trace.len(),
            2 * per_window
        )));
    }
    let finite: Vec<&SpectrumRecord> = trace.iter().filter(|r| r.lambda_max().is_finite()).collect();
    let w = per_window.min(finite.len());
    let tail = &finite[finite.len() - w..];
    let n = tail.len() as f64;
    let mean = |f: &dyn Fn(&SpectrumRecord) -> f64| tail.iter().map(|r| f(r)).sum::<f64>() / n;
    let q = EosQuery::new(alpha, rho);
    let mean_lambda_max = mean(&|r| r.lambda_max());
    let mean_gd_normalized = mean(&|r| alpha * r.lambda_max());
    let mean_sam_normalized = mean(&|r| q.sam_normalized(r.lambda_max()));
    let relative_drift = if tail.len() >= 2 {
        let ts: Vec<f64> = tail.iter().map(|r| r.step as f64).collect();
        let ls: Vec<f64> = tail.iter().map(|r| r.lambda_max()).collect();
        let slope = least_squares_slope(&ts, &ls);
        let span = ts[ts.len() - 1] - ts[0];
        (slope * span / mean_lambda_max).abs()
    } else {
        f64::INFINITY
    };
    let stabilized = relative_drift < tol;
    let verdict = if diverged {
        EosVerdict::Diverged
    } else {
        let value = if rho == 0.0 {
            mean_gd_normalized
        } else {
            mean_sam_normalized
        };
        if value < 2.0 - tol {
            EosVerdict::BelowEos
        } else if value > 2.0 + tol {
            EosVerdict::AboveEos
        } else if rho == 0.0 {
            EosVerdict::GdEos
        } else {
            EosVerdict::SamEos
        }
    };
    Ok(EosSummary {
        window_start: tail.first().map_or(0, |r| r.step),
        window_end: tail.last().map_or(0, |r| r.step),
        mean_lambda_max,
        mean_gd_normalized,
        mean_sam_normalized,
        relative_drift,
        stabilized,
        verdict,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    linear_fit(x, y).0
}

/// `(slope, intercept, r²)` of the least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, my - slope * mx, r2)
}

/// Squared projections `(v_i · z)²` of the residual onto the top-`k`
/// eigenvectors of the instantaneous `J Jᵀ`, one row per state.
pub fn eig_projection_trace<T: Real>(states: &[DynState<T>], k: usize) -> Result<Vec<Vec<f64>>> {
    states
        .iter()
        .map(|s| {
            if k == 0 || k > s.d() {
                return Err(Error::InvalidInput(format!("need 1 <= k <= D, got k = {k}")));
            }
            let eig = sym_eig(&s.ntk())?;
            Ok((0..k)
                .map(|i| {
                    let v: Vector<T> = eig.vector(i);
                    let c = v.dot(&s.z).expect("dimensions agree").as_f64();
                    c * c
                })
                .collect())
        })
        .collect()
}

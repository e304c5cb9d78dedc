//! Multi-step runs of the quadratic model with spectral recording.

use super::dynamics::{Advance, RescaledForm};
use super::model::{DynState, QuadraticModel};
use super::optimizer::{BatchMask, OptimizerSpec, UpdateRule};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{record, SpectrumRecord, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    pub tracker: TrackerConfig,
    pub rescaled_form: RescaledForm,
}

impl RunOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            tracker: TrackerConfig::default(),
            rescaled_form: RescaledForm::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub records: Vec<SpectrumRecord>,
    /// Step whose update produced a divergent state, if any.
    pub diverged_at: Option<usize>,
    /// Last finite state reached.
    pub final_state: DynState<T>,
}

impl<T> Trajectory<T> {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Runs `opts.steps` updates of `spec.rule` from `initial` with a constant `ρ`.
pub fn run_trajectory<T: Real>(
    model: &QuadraticModel<T>,
    initial: &DynState<T>,
    spec: &OptimizerSpec,
    opts: &RunOptions,
) -> Result<Trajectory<T>> {
    let rho = spec.rho;
    run_trajectory_with(model, initial, spec, opts, |_| rho)
}

/// Like [`run_trajectory`], with `ρ` taken from `rho_at(step)`.
///
/// The state at every `cadence`-th step (including the final one) is recorded
/// before the update of that step is applied. Divergence ends the run early
/// and is reported through `diverged_at` rather than as an error.
pub fn run_trajectory_with<T: Real, F: Fn(usize) -> f64>(
    model: &QuadraticModel<T>,
    initial: &DynState<T>,
    spec: &OptimizerSpec,
    opts: &RunOptions,
    rho_at: F,
) -> Result<Trajectory<T>> {
    spec.validate(model.d())?;
    if opts.tracker.cadence == 0 {
        return Err(Error::InvalidInput("record cadence must be positive".into()));
    }
    let alpha = T::of(spec.alpha);
    let mut rng = spec.rng();
    let mut records = Vec::new();
    let mut state = initial.clone();
    let mut diverged_at = None;
    let cadence = opts.tracker.cadence;

    // The rescaled rule carries (αz, √α J) internally; records use plain coordinates.
    let rescaled = spec.rule == UpdateRule::Rescaled;
    if rescaled {
        state = state.rescaled(alpha);
    }
    let plain = |s: &DynState<T>| if rescaled { s.unrescaled(alpha) } else { s.clone() };

    for t in 0..=opts.steps {
        let rho_t = if spec.rule.uses_rho() { rho_at(t) } else { 0.0 };
        if !(rho_t >= 0.0 && rho_t.is_finite()) {
            return Err(Error::InvalidInput(format!("rho at step {t} must be non-negative, got {rho_t}")));
        }
        if t == opts.steps {
            if t % cadence == 0 {
                records.push(record(&plain(&state), spec.alpha, rho_t, &opts.tracker, None).map_err(|e| e.at_step(t))?);
            }
            break;
        }
        let result = step_once(model, &state, spec, alpha, T::of(rho_t), opts.rescaled_form, &mut rng);
        let (next, grad) = match result {
            Ok(adv) => adv,
            Err(Error::Diverged { .. }) => {
                if t % cadence == 0 {
                    records.push(record(&plain(&state), spec.alpha, rho_t, &opts.tracker, None).map_err(|e| e.at_step(t))?);
                }
                diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e.at_step(t)),
        };
        if t % cadence == 0 {
            let grad_norm = if rescaled {
                // ‖J̃ᵀz̃‖ = α^{3/2} ‖Jᵀz‖
                grad.as_f64() / spec.alpha.powf(1.5)
            } else {
                grad.as_f64()
            };
            records.push(
                record(&plain(&state), spec.alpha, rho_t, &opts.tracker, Some(grad_norm)).map_err(|e| e.at_step(t))?,
            );
        }
        state = next;
    }
    Ok(Trajectory {
        records,
        diverged_at,
        final_state: plain(&state),
    })
}

/// One update plus the norm of the (batch) gradient used at its start.
fn step_once<T: Real>(
    model: &QuadraticModel<T>,
    s: &DynState<T>,
    spec: &OptimizerSpec,
    alpha: T,
    rho: T,
    form: RescaledForm,
    rng: &mut crate::tensor::RngStream,
) -> Result<(DynState<T>, T)> {
    let finish = |adv: Advance<T>| (adv.gradient.norm(), adv.state);
    let (grad, state) = match spec.rule {
        UpdateRule::GdExact => finish(model.gd_advance(s, alpha)?),
        UpdateRule::SamExact => finish(model.sam_advance_exact(s, alpha, rho)?),
        UpdateRule::SamTruncated => finish(model.sam_advance_truncated(s, alpha, rho)?),
        UpdateRule::SgdExact | UpdateRule::SamSgdExact => {
            let mask = BatchMask::draw(s.d(), spec.beta, spec.sampling, rng)?;
            let rho = if spec.rule == UpdateRule::SgdExact { T::zero() } else { rho };
            finish(model.sam_advance_masked(s, alpha, rho, Some(&mask))?)
        }
        UpdateRule::Rescaled => {
            let r = rho / alpha;
            let next = model.rescaled_step(s, r, form)?;
            (s.gradient().norm(), next)
        }
    };
    Ok((state, grad))
}

//! Update maps of the quadratic model in `(z, J)` coordinates.
//!
//! Because the model is exactly quadratic, moving `θ` by `δ` changes the state
//! by `z ← z + Jδ + ½Q(δ,δ)`, `J ← J + Q(δ,·)` with no remainder. Every exact
//! rule below is a composition of such displacements, so no `θ` needs to be
//! materialized.

use super::model::{DynState, QuadraticModel};
use super::optimizer::{BatchMask, BatchSampling};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Mat, RngStream, Vector};

/// `‖z‖` beyond which a trajectory is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Successor state plus the quantities that produced it.
#[derive(Debug, Clone)]
pub struct Advance<T> {
    pub state: DynState<T>,
    /// Parameter displacement `θ' - θ` applied by the step.
    pub displacement: Vector<T>,
    /// (Mini)batch gradient `Jᵀ P z` at the starting point.
    pub gradient: Vector<T>,
}

/// Which low-order map the rescaled dynamics apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RescaledForm {
    /// The lowest-order SAM map written in `(αz, √α J)` coordinates; exactly
    /// conjugate to [`QuadraticModel::sam_step_truncated`].
    #[default]
    Leading,
    /// Lowest-order map with the `(1 + rJJᵀ)` dressing kept on the residual in
    /// every Q-term and the extra `½r² Q(Jᵀ Q(Jᵀz, Jᵀz), ·)` Jacobian term.
    Extended,
}

fn check_divergence<T: Real>(state: &DynState<T>) -> Result<()> {
    if !state.is_finite() || state.z.norm().as_f64() > DIVERGENCE_NORM {
        Err(Error::Diverged { step: state.step })
    } else {
        Ok(())
    }
}

fn masked<T: Real>(z: &Vector<T>, mask: &BatchMask) -> Vector<T> {
    Vector::from_fn(z.len(), |i| if mask.contains(i) { z[i] } else { T::zero() })
}

impl<T: Real> QuadraticModel<T> {
    /// State after moving `θ` by `delta` (exact).
    pub fn displace(&self, s: &DynState<T>, delta: &[T]) -> Result<DynState<T>> {
        check_dim("QuadraticModel::displace", self.p(), delta.len())?;
        let m = self.q.contract_once(delta)?;
        let jd = s.j.matvec(delta)?;
        let qdd = m.matvec(delta)?;
        let z = Vector::from_fn(s.d(), |a| s.z[a] + jd[a] + T::half() * qdd[a]);
        let j = s.j.add(&m)?;
        Ok(DynState {
            z,
            j,
            step: s.step,
        })
    }

    fn finish(&self, s: &DynState<T>, displacement: Vector<T>, gradient: Vector<T>) -> Result<Advance<T>> {
        let mut state = self.displace(s, &displacement)?;
        state.step = s.step + 1;
        check_divergence(&state)?;
        Ok(Advance {
            state,
            displacement,
            gradient,
        })
    }

    /// Full-batch gradient descent, `θ' = θ - α Jᵀz`.
    pub fn gd_advance(&self, s: &DynState<T>, alpha: T) -> Result<Advance<T>> {
        let g = s.gradient();
        let delta = g.scaled(-alpha);
        self.finish(s, delta, g)
    }

    pub fn gd_step(&self, s: &DynState<T>, alpha: T) -> Result<DynState<T>> {
        Ok(self.gd_advance(s, alpha)?.state)
    }

    /// Unnormalized SAM, `θ' = θ - α ∇L(θ + ρ ∇L(θ))`, evaluated exactly.
    pub fn sam_advance_exact(&self, s: &DynState<T>, alpha: T, rho: T) -> Result<Advance<T>> {
        self.sam_advance_masked(s, alpha, rho, None)
    }

    pub fn sam_step_exact(&self, s: &DynState<T>, alpha: T, rho: T) -> Result<DynState<T>> {
        Ok(self.sam_advance_exact(s, alpha, rho)?.state)
    }

    /// SAM with the batch projection applied to both gradient evaluations.
    /// `mask = None` means the full batch.
    pub fn sam_advance_masked(
        &self,
        s: &DynState<T>,
        alpha: T,
        rho: T,
        mask: Option<&BatchMask>,
    ) -> Result<Advance<T>> {
        if let Some(m) = mask {
            check_dim("batch mask", s.d(), m.len())?;
        }
        let project = |z: &Vector<T>| match mask {
            Some(m) if !m.is_full() => masked(z, m),
            _ => z.clone(),
        };
        let g = s.j.t_matvec(&project(&s.z))?;
        if rho == T::zero() {
            let delta = g.scaled(-alpha);
            return self.finish(s, delta, g);
        }
        let ascent = self.displace(s, &g.scaled(rho))?;
        let g_ascent = ascent.j.t_matvec(&project(&ascent.z))?;
        let delta = g_ascent.scaled(-alpha);
        self.finish(s, delta, g)
    }

    /// Minibatch SGD (`rho = 0`) or SAM-SGD with a freshly drawn batch.
    pub fn sgd_step_exact(
        &self,
        s: &DynState<T>,
        alpha: T,
        rho: T,
        beta: f64,
        sampling: BatchSampling,
        rng: &mut RngStream,
    ) -> Result<(DynState<T>, BatchMask)> {
        let mask = BatchMask::draw(s.d(), beta, sampling, rng)?;
        let adv = self.sam_advance_masked(s, alpha, rho, Some(&mask))?;
        Ok((adv.state, mask))
    }

    /// Lowest-order SAM map in `α` and `ρ`:
    ///
    /// ```text
    /// z' = z - αJJᵀ(1+ρJJᵀ)z - αρ z·Q(Jᵀz, Jᵀ·) + ½α² Q(Jᵀz, Jᵀz)
    /// J' = J - α[Q((1+ρJᵀJ)Jᵀz, ·) + ρ Q(z·Q(Jᵀz, ·), ·)]
    /// ```
    pub fn sam_advance_truncated(&self, s: &DynState<T>, alpha: T, rho: T) -> Result<Advance<T>> {
        if rho == T::zero() {
            return self.gd_advance(s, alpha);
        }
        let g = s.gradient();
        let m = self.q.contract_once(&g)?;
        // h = (1 + ρJᵀJ) Jᵀz,  u = z·Q(Jᵀz, ·)
        let h = g.add_scaled(rho, &s.j.t_matvec(&s.j.matvec(&g)?)?)?;
        let u = m.t_matvec(&s.z)?;
        let v = h.add_scaled(rho, &u)?;
        let jv = s.j.matvec(&v)?;
        let qgg = m.matvec(&g)?;
        let half_a2 = T::half() * alpha * alpha;
        let z = Vector::from_fn(s.d(), |a| s.z[a] - alpha * jv[a] + half_a2 * qgg[a]);
        let j = s.j.add_scaled(-alpha, &self.q.contract_once(&v)?)?;
        let state = DynState {
            z,
            j,
            step: s.step + 1,
        };
        check_divergence(&state)?;
        Ok(Advance {
            state,
            displacement: v.scaled(-alpha),
            gradient: g,
        })
    }

    pub fn sam_step_truncated(&self, s: &DynState<T>, alpha: T, rho: T) -> Result<DynState<T>> {
        Ok(self.sam_advance_truncated(s, alpha, rho)?.state)
    }

    /// One step of the learning-rate-free dynamics on `(z̃, J̃) = (αz, √α J)`
    /// with rescaled radius `r = ρ/α`.
    pub fn rescaled_step(&self, s: &DynState<T>, r: T, form: RescaledForm) -> Result<DynState<T>> {
        match form {
            RescaledForm::Leading => self.sam_step_truncated(s, T::one(), r),
            RescaledForm::Extended => {
                let g = s.gradient();
                let m = self.q.contract_once(&g)?;
                // w = (1 + rJJᵀ) z
                let w = s.z.add_scaled(r, &s.j.matvec(&g)?)?;
                let h = s.j.t_matvec(&w)?;
                let uw = m.t_matvec(&w)?;
                let jt_qgg = s.j.t_matvec(&m.matvec(&g)?)?;
                let hu = h.add_scaled(r, &uw)?;
                let v = hu.add_scaled(T::half() * r * r, &jt_qgg)?;
                let jhu = s.j.matvec(&hu)?;
                let qhh = self.q.contract_twice(&h, &h)?;
                let z = Vector::from_fn(s.d(), |a| s.z[a] - jhu[a] + T::half() * qhh[a]);
                let j = s.j.sub(&self.q.contract_once(&v)?)?;
                let state = DynState {
                    z,
                    j,
                    step: s.step + 1,
                };
                check_divergence(&state)?;
                Ok(state)
            }
        }
    }
}

/// SAM on the quadratic loss `½ xᵀHx`: `x' = x - α(H + ρH²)x`.
pub fn quadratic_loss_sam_step<T: Real>(h: &Mat<T>, x: &Vector<T>, alpha: T, rho: T) -> Result<Vector<T>> {
    if !h.is_square() {
        return Err(Error::InvalidInput(format!("H must be square, got {:?}", h.shape())));
    }
    check_dim("quadratic_loss_sam_step", h.cols(), x.len())?;
    let hx = h.matvec(x)?;
    let hhx = h.matvec(&hx)?;
    Ok(Vector::from_fn(x.len(), |i| x[i] - alpha * (hx[i] + rho * hhx[i])))
}

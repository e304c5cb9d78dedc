use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::tensor::{gauss_fill, sym_eig, Mat, RngStream, SymTensor3, Vector};

/// `f(θ) = y + Gθ + ½ Q(θ, θ)` together with its training targets.
///
/// `g` is stored `D × P` so that it has the shape of the Jacobian.
#[derive(Debug, Clone)]
pub struct QuadraticModel<T> {
    pub y: Vector<T>,
    pub g: Mat<T>,
    pub q: SymTensor3<T>,
    pub y_tr: Vector<T>,
}

/// Residuals `z = f(θ) - y_tr` and Jacobian `J = G + Q(θ, ·)` at some `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynState<T> {
    pub z: Vector<T>,
    pub j: Mat<T>,
    pub step: usize,
}

impl<T: Real> DynState<T> {
    pub fn new(z: Vector<T>, j: Mat<T>) -> Result<Self> {
        check_dim("DynState::new", j.rows(), z.len())?;
        Ok(Self { z, j, step: 0 })
    }

    /// `½‖z‖²`
    pub fn loss(&self) -> T {
        self.z.norm_sq() * T::half()
    }

    pub fn d(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.j.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.z.is_finite() && self.j.is_finite()
    }

    /// The neural tangent kernel `J Jᵀ`.
    pub fn ntk(&self) -> Mat<T> {
        self.j.gram_rows()
    }

    /// Full-batch gradient `Jᵀ z`.
    pub fn gradient(&self) -> Vector<T> {
        self.j.t_matvec(&self.z).expect("state dimensions are consistent")
    }

    /// Maps `(z, J)` to the learning-rate-free coordinates `(αz, √α J)`.
    pub fn rescaled(&self, alpha: T) -> Self {
        Self {
            z: self.z.scaled(alpha),
            j: self.j.scaled(alpha.sqrt()),
            step: self.step,
        }
    }

    /// Inverse of [`DynState::rescaled`].
    pub fn unrescaled(&self, alpha: T) -> Self {
        Self {
            z: self.z.scaled(T::one() / alpha),
            j: self.j.scaled(T::one() / alpha.sqrt()),
            step: self.step,
        }
    }

    pub fn cast<U: Real>(&self) -> DynState<U> {
        DynState {
            z: self.z.cast(),
            j: self.j.cast(),
            step: self.step,
        }
    }
}

/// Variances of the Gaussian initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScales {
    pub var_q: f64,
    pub var_g: f64,
    pub var_y: f64,
}

impl ModelScales {
    /// `var_g = 1/P`, `var_q = 1/(P √D)`, `var_y = 1`.
    pub fn default_for(d: usize, p: usize) -> Self {
        let (d, p) = (d as f64, p as f64);
        Self {
            var_q: 1.0 / (p * d.sqrt()),
            var_g: 1.0 / p,
            var_y: 1.0,
        }
    }
}

impl<T: Real> QuadraticModel<T> {
    /// Random model with i.i.d. Gaussian `Q`, `G`, `y` and `y_tr`.
    ///
    /// Each component is drawn from its own child stream of `rng`, so changing
    /// one variance leaves the other draws untouched.
    pub fn init(d: usize, p: usize, scales: ModelScales, rng: &RngStream) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive, got D = {d}, P = {p}"
            )));
        }
        let q = gauss_fill((d, p), 0.0, scales.var_q, &mut rng.split(0))?;
        let g = gauss_fill((d, p), 0.0, scales.var_g, &mut rng.split(1))?;
        let y = gauss_fill(d, 0.0, scales.var_y, &mut rng.split(2))?;
        let y_tr = gauss_fill(d, 0.0, scales.var_y, &mut rng.split(3))?;
        Ok(Self { y, g, q, y_tr })
    }

    pub fn new(y: Vector<T>, g: Mat<T>, q: SymTensor3<T>, y_tr: Vector<T>) -> Result<Self> {
        let d = y.len();
        check_dim("QuadraticModel: y_tr", d, y_tr.len())?;
        check_dim("QuadraticModel: G rows", d, g.rows())?;
        check_dim("QuadraticModel: Q outputs", d, q.d_out())?;
        check_dim("QuadraticModel: Q params", g.cols(), q.p())?;
        Ok(Self { y, g, q, y_tr })
    }

    /// Model whose state at `θ = 0` is exactly `(z0, j0)`, with the given `Q`.
    pub fn from_initial_state(z0: &Vector<T>, j0: &Mat<T>, q: SymTensor3<T>) -> Result<Self> {
        Self::new(z0.clone(), j0.clone(), q, Vector::zeros(z0.len()))
    }

    pub fn d(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.g.cols()
    }

    pub fn is_linear(&self) -> bool {
        self.q.packed().iter().all(|&x| x == T::zero())
    }

    /// `f(θ)`
    pub fn output(&self, theta: &[T]) -> Result<Vector<T>> {
        check_dim("QuadraticModel::output", self.p(), theta.len())?;
        let lin = self.g.matvec(theta)?;
        let quad = self.q.contract_twice(theta, theta)?;
        Ok(Vector::from_fn(self.d(), |a| {
            self.y[a] + lin[a] + T::half() * quad[a]
        }))
    }

    /// `(z, J)` at `θ`.
    pub fn state_from_theta(&self, theta: &[T]) -> Result<DynState<T>> {
        check_dim("QuadraticModel::state_from_theta", self.p(), theta.len())?;
        let m = self.q.contract_once(theta)?;
        let lin = self.g.matvec(theta)?;
        let quad = m.matvec(theta)?;
        let z = Vector::from_fn(self.d(), |a| {
            self.y[a] + lin[a] + T::half() * quad[a] - self.y_tr[a]
        });
        let j = self.g.add(&m)?;
        Ok(DynState { z, j, step: 0 })
    }

    /// Copy of the model whose targets are `f(θ*)`, so that `z(θ*) = 0`.
    pub fn with_interpolation_point(&self, theta_star: &[T]) -> Result<Self> {
        let y_tr = self.output(theta_star)?;
        Ok(Self {
            y_tr,
            ..self.clone()
        })
    }

    /// Recovers `θ` from the Jacobian by least squares on `J - G = Q(θ, ·)`.
    ///
    /// Returns `None` when that linear map is rank deficient (e.g. `Q = 0`).
    pub fn reconstruct_theta(&self, s: &DynState<T>) -> Option<Vector<T>> {
        let (d, p) = (self.d(), self.p());
        if s.j.shape() != (d, p) {
            return None;
        }
        let resid = s.j.sub(&self.g).ok()?;
        let mut normal = Mat::zeros(p, p);
        let mut rhs = Vector::zeros(p);
        for a in 0..d {
            let qa = self.q.slice_matrix(a);
            let ra = qa.matvec(resid.row(a)).ok()?;
            rhs.axpy(T::one(), &ra).ok()?;
            normal = normal.add(&qa.matmul(&qa).ok()?).ok()?;
        }
        let eig = sym_eig(&normal).ok()?;
        let top = eig.values[0];
        let bottom = eig.values[p - 1];
        if !(top > T::zero()) || bottom <= top * T::of(1e-12) {
            return None;
        }
        let proj = eig.vectors.t_matvec(&rhs).ok()?;
        let scaled = Vector::from_fn(p, |k| proj[k] / eig.values[k]);
        eig.vectors.matvec(&scaled).ok()
    }
}

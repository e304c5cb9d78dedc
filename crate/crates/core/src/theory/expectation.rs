//! Leading-order one-step expectations over random `Q` (and random batches),
//! and the Monte Carlo harness that estimates them from exact steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::quad::{BatchMask, BatchSampling, DynState, QuadraticModel};
use crate::scalar::Real;
use crate::tensor::{Mat, RngStream, SymTensor3, Vector};

/// Mean Jacobian change over `Q` with unit-variance independent components:
/// `-ραP z zᵀ J`.
pub fn thm1_prediction<T: Real>(z0: &Vector<T>, j0: &Mat<T>, alpha: T, rho: T) -> Result<Mat<T>> {
    check_dim("thm1_prediction", j0.rows(), z0.len())?;
    let p = T::of(j0.cols() as f64);
    let zj = j0.t_matvec(z0)?;
    Ok(Mat::outer(z0, &zj).scaled(-rho * alpha * p))
}

/// Leading-order means of `Δz` and `ΔJ` for one minibatch SAM step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStepMeans<T> {
    pub dz_mean: Vector<T>,
    pub dj_mean: Mat<T>,
}

/// The batch-fraction formulas:
///
/// ```text
/// E[Δz] = -αβ JJᵀ(1 + ρ[β JJᵀ + (1-β) diag(JJᵀ)]) z
/// E[ΔJ] = -ραP (β² zzᵀ + β(1-β) diag(zzᵀ)) J
/// ```
pub fn thm3_prediction<T: Real>(
    z0: &Vector<T>,
    j0: &Mat<T>,
    alpha: T,
    rho: T,
    beta: T,
) -> Result<BatchStepMeans<T>> {
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {beta}")));
    }
    batch_means(z0, j0, alpha, rho, beta, beta * beta)
}

/// Same expectations with the pair-inclusion rate of a batch of exactly `b`
/// out of `d` points drawn without replacement, `E[P M P] = cM + (β - c) diag(M)`
/// with `β = b/d` and `c = β(b-1)/(d-1)`.
pub fn thm3_prediction_fixed_size<T: Real>(
    z0: &Vector<T>,
    j0: &Mat<T>,
    alpha: T,
    rho: T,
    b: usize,
) -> Result<BatchStepMeans<T>> {
    let d = z0.len();
    if b == 0 || b > d {
        return Err(Error::InvalidInput(format!("batch size {b} out of range for D = {d}")));
    }
    let beta = T::of(b as f64 / d as f64);
    let pair = if d == 1 {
        beta
    } else {
        beta * T::of((b as f64 - 1.0) / (d as f64 - 1.0))
    };
    batch_means(z0, j0, alpha, rho, beta, pair)
}

/// Means with `E[P] = βI` and `E[P M P] = c M + (β - c) diag(M)`.
fn batch_means<T: Real>(
    z0: &Vector<T>,
    j0: &Mat<T>,
    alpha: T,
    rho: T,
    beta: T,
    pair: T,
) -> Result<BatchStepMeans<T>> {
    check_dim("thm3_prediction", j0.rows(), z0.len())?;
    let d = z0.len();
    let p = T::of(j0.cols() as f64);
    let k = j0.gram_rows();
    let kz = k.matvec(z0)?;
    // E[PKP] z = c Kz + (β - c) diag(K) z
    let inner = Vector::from_fn(d, |a| pair * kz[a] + (beta - pair) * k[(a, a)] * z0[a]);
    let k_inner = k.matvec(&inner)?;
    let dz_mean = Vector::from_fn(d, |a| -alpha * (beta * kz[a] + rho * k_inner[a]));
    let zj = j0.t_matvec(z0)?;
    // E[P zzᵀ P] J = c zzᵀJ + (β - c) diag(zzᵀ) J
    let mut dj_mean = Mat::outer(z0, &zj).scaled(pair);
    for a in 0..d {
        let w = (beta - pair) * z0[a] * z0[a];
        for (dst, &src) in dj_mean.row_mut(a).iter_mut().zip(j0.row(a)) {
            *dst = *dst + w * src;
        }
    }
    Ok(BatchStepMeans {
        dz_mean,
        dj_mean: dj_mean.scaled(-rho * alpha * p),
    })
}

/// How the random `Q` of the expectation statements is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QDraw {
    /// Every independent component `Q[a,i,j]`, `i <= j`, is one `N(0, 1)` draw.
    #[default]
    SymmetricIid,
    /// `Q_a = (A + Aᵀ)/2` for a `P × P` matrix `A` of i.i.d. `N(0, 1)` entries.
    SymmetrizedFull,
}

impl QDraw {
    /// `Σ_j E[Q_aij Q_bjk]` per unit of `δ_ab δ_ik`: the factor that the
    /// predictions write as `P`.
    pub fn drift_factor(self, p: usize) -> f64 {
        match self {
            Self::SymmetricIid => p as f64,
            Self::SymmetrizedFull => (p as f64 + 1.0) / 2.0,
        }
    }
}

/// Fixed part of a one-step Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct OneStepTemplate {
    pub z0: Vector<f64>,
    pub j0: Mat<f64>,
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
    pub sampling: BatchSampling,
    pub q_draw: QDraw,
    /// Average each draw with its `Q → -Q` mirror (same batch). This removes
    /// every term odd in `Q` from the estimator without changing its mean.
    pub antithetic: bool,
}

impl OneStepTemplate {
    pub fn new(z0: Vector<f64>, j0: Mat<f64>, alpha: f64, rho: f64) -> Self {
        Self {
            z0,
            j0,
            alpha,
            rho,
            beta: 1.0,
            sampling: BatchSampling::Bernoulli,
            q_draw: QDraw::SymmetricIid,
            antithetic: true,
        }
    }

    pub fn d(&self) -> usize {
        self.z0.len()
    }

    pub fn p(&self) -> usize {
        self.j0.cols()
    }
}

/// Running element-wise mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(a: Self, b: Self) -> Self {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let n = a.n + b.n;
        let (na, nb, nf) = (a.n as f64, b.n as f64, n as f64);
        let mut out = Self::new(a.mean.len());
        out.n = n;
        for i in 0..a.mean.len() {
            let delta = b.mean[i] - a.mean[i];
            out.mean[i] = a.mean[i] + delta * nb / nf;
            out.m2[i] = a.m2[i] + b.m2[i] + delta * delta * na * nb / nf;
        }
        out
    }

    fn stderr(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|&s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Pairwise reduction in a fixed tree over the chunk order.
fn merge_tree(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => Moments::merge(a, b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one chunk")
}

pub const MIN_DRAWS: usize = 100;
const CHUNK: usize = 512;

/// Sample means of `Δz` and `ΔJ` with their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepEstimate {
    /// Number of `Q` draws (each antithetic pair counts twice).
    pub draws: usize,
    pub d: usize,
    pub p: usize,
    pub dz_mean: Vec<f64>,
    pub dz_stderr: Vec<f64>,
    pub dj_mean: Vec<f64>,
    pub dj_stderr: Vec<f64>,
}

impl OneStepEstimate {
    pub fn dz_report(&self, predicted: &Vector<f64>) -> Result<TheoremReport> {
        check_dim("dz prediction", self.d, predicted.len())?;
        Ok(TheoremReport::compare(
            (self.d, 1),
            predicted.to_vec(),
            self.dz_mean.clone(),
            self.dz_stderr.clone(),
            self.draws,
        ))
    }

    pub fn dj_report(&self, predicted: &Mat<f64>) -> Result<TheoremReport> {
        if predicted.shape() != (self.d, self.p) {
            return Err(Error::Dimension {
                context: "dJ prediction",
                expected: self.d * self.p,
                got: predicted.rows() * predicted.cols(),
            });
        }
        Ok(TheoremReport::compare(
            (self.d, self.p),
            predicted.as_slice().to_vec(),
            self.dj_mean.clone(),
            self.dj_stderr.clone(),
            self.draws,
        ))
    }

    pub fn dj_mean_mat(&self) -> Mat<f64> {
        Mat::from_vec(self.d, self.p, self.dj_mean.clone()).expect("shape recorded with data")
    }
}

pub fn draw_q(d: usize, p: usize, convention: QDraw, rng: &mut RngStream) -> SymTensor3<f64> {
    match convention {
        QDraw::SymmetricIid => SymTensor3::from_fn(d, p, |_, _, _| rng.normal()),
        QDraw::SymmetrizedFull => {
            let mut q = SymTensor3::zeros(d, p);
            let mut a = vec![0.0; p * p];
            for out in 0..d {
                a.iter_mut().for_each(|x| *x = rng.normal());
                for i in 0..p {
                    for j in i..p {
                        q.set(out, i, j, 0.5 * (a[i * p + j] + a[j * p + i]));
                    }
                }
            }
            q
        }
    }
}

/// `(Δz, ΔJ)` of one exact (minibatch) SAM step from the template state.
fn one_step(t: &OneStepTemplate, q: SymTensor3<f64>, mask: Option<&BatchMask>) -> Result<Vec<f64>> {
    let model = QuadraticModel::from_initial_state(&t.z0, &t.j0, q)?;
    let s0 = DynState::new(t.z0.clone(), t.j0.clone())?;
    let next = model.sam_advance_masked(&s0, t.alpha, t.rho, mask)?.state;
    let mut out = next.z.sub(&t.z0)?.into_vec();
    out.extend(next.j.sub(&t.j0)?.as_slice());
    Ok(out)
}

/// Estimates the one-step means of `Δz`, `ΔJ` by sampling `Q` (and a batch
/// when `β < 1`) and taking one exact step per sample.
///
/// Samples are split into fixed chunks, each with its own child stream of
/// `rng`, and the chunk statistics are merged in a fixed order, so the
/// result does not depend on the number of worker threads.
pub fn mc_estimate_one_step(t: &OneStepTemplate, draws: usize, rng: &RngStream) -> Result<OneStepEstimate> {
    if draws < MIN_DRAWS {
        return Err(Error::InvalidInput(format!("need at least {MIN_DRAWS} draws, got {draws}")));
    }
    check_dim("mc template", t.j0.rows(), t.z0.len())?;
    if !(t.beta > 0.0 && t.beta <= 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {}", t.beta)));
    }
    let (d, p) = (t.d(), t.p());
    let width = d + d * p;
    let samples = if t.antithetic { draws.div_ceil(2) } else { draws };
    let chunks = samples.div_ceil(CHUNK);
    let parts: Result<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng.split(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut m = Moments::new(width);
            for _ in 0..n {
                let q = draw_q(d, p, t.q_draw, &mut r);
                let mask = if t.beta < 1.0 {
                    Some(BatchMask::draw(d, t.beta, t.sampling, &mut r)?)
                } else {
                    None
                };
                let x = if t.antithetic {
                    let neg = q.scaled(-1.0);
                    let a = one_step(t, q, mask.as_ref())?;
                    let b = one_step(t, neg, mask.as_ref())?;
                    a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect()
                } else {
                    one_step(t, q, mask.as_ref())?
                };
                m.push(&x);
            }
            Ok(m)
        })
        .collect();
    let total = merge_tree(parts?);
    let stderr = total.stderr();
    Ok(OneStepEstimate {
        draws: if t.antithetic { 2 * samples } else { samples },
        d,
        p,
        dz_mean: total.mean[..d].to_vec(),
        dz_stderr: stderr[..d].to_vec(),
        dj_mean: total.mean[d..].to_vec(),
        dj_stderr: stderr[d..].to_vec(),
    })
}

/// Analytic prediction against a Monte Carlo estimate, element by element,
/// stored row-major with the given shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub shape: (usize, usize),
    pub predicted: Vec<f64>,
    pub estimated: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mc_draws: usize,
    pub max_z_score: f64,
}

impl TheoremReport {
    pub fn compare(
        shape: (usize, usize),
        predicted: Vec<f64>,
        estimated: Vec<f64>,
        stderr: Vec<f64>,
        mc_draws: usize,
    ) -> Self {
        let max_z_score = predicted
            .iter()
            .zip(&estimated)
            .zip(&stderr)
            .map(|((&p, &e), &s)| z_score(p, e, s))
            .fold(0.0, f64::max);
        Self {
            shape,
            predicted,
            estimated,
            stderr,
            mc_draws,
            max_z_score,
        }
    }

    /// The same estimate judged against `c ×` the prediction.
    pub fn with_prediction_scaled(&self, c: f64) -> Self {
        Self::compare(
            self.shape,
            self.predicted.iter().map(|&p| c * p).collect(),
            self.estimated.clone(),
            self.stderr.clone(),
            self.mc_draws,
        )
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_z_score < threshold
    }
}

fn z_score(predicted: f64, estimated: f64, stderr: f64) -> f64 {
    let gap = (estimated - predicted).abs();
    if stderr > 0.0 {
        gap / stderr
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(d: usize, p: usize, seed: u64) -> (Vector<f64>, Mat<f64>) {
        let mut r = RngStream::new(seed, 9);
        let z = Vector::from_fn(d, |_| r.normal());
        let j = Mat::from_fn(d, p, |_, _| r.normal() / (p as f64).sqrt());
        (z, j)
    }

    #[test]
    fn rho_zero_predictions_vanish() {
        let (z, j) = instance(3, 4, 1);
        assert!(thm1_prediction(&z, &j, 0.1, 0.0).unwrap().max_abs() == 0.0);
        let m = thm3_prediction(&z, &j, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(m.dj_mean.max_abs(), 0.0);
        let kz = j.gram_rows().matvec(&z).unwrap().scaled(-0.1 * 0.5);
        assert!(m.dz_mean.sub(&kz).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn full_batch_reduces_to_drift_prediction() {
        let (z, j) = instance(4, 5, 2);
        let m = thm3_prediction(&z, &j, 0.01, 0.02, 1.0).unwrap();
        assert_eq!(m.dj_mean, thm1_prediction(&z, &j, 0.01, 0.02).unwrap());
        let k = j.gram_rows();
        let kz = k.matvec(&z).unwrap();
        let kkz = k.matvec(&kz).unwrap();
        let expected = kz.add_scaled(0.02, &kkz).unwrap().scaled(-0.01);
        assert!(m.dz_mean.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn fixed_size_batches_match_formula_when_full() {
        let (z, j) = instance(4, 5, 3);
        let a = thm3_prediction_fixed_size(&z, &j, 0.01, 0.02, 4).unwrap();
        let b = thm3_prediction(&z, &j, 0.01, 0.02, 1.0).unwrap();
        assert!(a.dj_mean.sub(&b.dj_mean).unwrap().max_abs() < 1e-18);
    }

    #[test]
    fn orthogonal_residual_leaves_singular_value() {
        // J = diag-like with left singular vectors e_a; z ⟂ e_0.
        let j = Mat::from_fn(2, 3, |r, c| if r == c { 1.0 + r as f64 } else { 0.0 });
        let z = Vector::from_vec(vec![0.0, 1.0]);
        let m = thm1_prediction(&z, &j, 0.1, 0.1).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn moments_merge_matches_serial() {
        let xs: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut serial = Moments::new(1);
        xs.iter().for_each(|&x| serial.push(&[x]));
        let parts: Vec<Moments> = xs
            .chunks(5)
            .map(|c| {
                let mut m = Moments::new(1);
                c.iter().for_each(|&x| m.push(&[x]));
                m
            })
            .collect();
        let merged = merge_tree(parts);
        assert_eq!(merged.n, 37);
        assert!((merged.mean[0] - serial.mean[0]).abs() < 1e-14);
        assert!((merged.m2[0] - serial.m2[0]).abs() < 1e-12);
    }

    #[test]
    fn too_few_draws_rejected() {
        let (z, j) = instance(2, 3, 4);
        let t = OneStepTemplate::new(z, j, 1e-3, 1e-3);
        assert!(mc_estimate_one_step(&t, 10, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn gd_mean_drift_is_zero() {
        let (z, j) = instance(2, 3, 5);
        let t = OneStepTemplate::new(z.clone(), j.clone(), 1e-3, 0.0);
        let est = mc_estimate_one_step(&t, 4000, &RngStream::new(1, 0)).unwrap();
        let r = est.dj_report(&Mat::zeros(2, 3)).unwrap();
        assert!(r.max_z_score < 4.0, "{}", r.max_z_score);
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let (z, j) = instance(2, 3, 6);
        let t = OneStepTemplate::new(z, j, 1e-2, 1e-2);
        let rng = RngStream::new(2, 0);
        let a = mc_estimate_one_step(&t, 3000, &rng).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_estimate_one_step(&t, 3000, &rng).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn symmetrized_draw_has_half_off_diagonal_variance() {
        let mut r = RngStream::new(3, 3);
        let (mut diag, mut off, n) = (0.0, 0.0, 4000);
        for _ in 0..n {
            let q = draw_q(1, 2, QDraw::SymmetrizedFull, &mut r);
            diag += q.get(0, 0, 0).powi(2);
            off += q.get(0, 0, 1).powi(2);
        }
        let (diag, off) = (diag / n as f64, off / n as f64);
        assert!((diag - 1.0).abs() < 0.1 && (off - 0.5).abs() < 0.05, "{diag} {off}");
    }
}

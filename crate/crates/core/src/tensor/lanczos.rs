//! Matrix-free Lanczos iteration for the top of a symmetric spectrum.
//!
//! Full reorthogonalization (two Gram-Schmidt passes) is used every step. A
//! Ritz value is accepted once both its residual bound `β_m |s_{m,i}|` and its
//! change since the previous step fall below `tol · |θ_max|`.

use super::eig::tridiag_eig;
use super::rng::RngStream;
use super::vector::{axpy, dot, Vector};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub tol: f64,
    /// Iteration cap; `None` means `min(n, 300)`.
    pub max_iter: Option<usize>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

/// Estimates the `k` largest eigenvalues (descending) of the symmetric
/// operator `apply` acting on `n`-dimensional vectors.
///
/// `apply(x, y)` must overwrite `y` with `A x`.
pub fn top_eigs_lanczos<T, F>(
    n: usize,
    mut apply: F,
    k: usize,
    opts: LanczosOptions,
    rng: &mut RngStream,
) -> Result<Vector<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "lanczos: need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if opts.tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidInput(format!(
            "lanczos: tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let max_iter = opts.max_iter.unwrap_or(n.min(300)).min(n).max(k);
    let tol = T::of(opts.tol);

    let mut basis: Vec<Vector<T>> = Vec::with_capacity(max_iter);
    let mut alphas: Vec<T> = Vec::with_capacity(max_iter);
    let mut betas: Vec<T> = Vec::with_capacity(max_iter);
    let mut previous: Option<Vec<T>> = None;
    let mut scale = T::zero();

    let Some(start) = fresh_direction(n, &basis, rng) else {
        return Err(Error::InvalidInput("lanczos: empty space".into()));
    };
    basis.push(start);
    let mut w = vec![T::zero(); n];

    loop {
        let m = basis.len();
        let v = &basis[m - 1];
        apply(v, &mut w);
        let alpha = dot(v, &w);
        alphas.push(alpha);
        axpy(-alpha, v, &mut w);
        if m >= 2 {
            let b = betas[m - 2];
            axpy(-b, &basis[m - 2], &mut w);
        }
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let beta = dot(&w, &w).sqrt();
        scale = scale.max(alpha.abs()).max(beta);

        let check = m >= k && (m < 40 || m.is_multiple_of(4) || m == max_iter);
        if check || m == max_iter {
            let (theta, s) = tridiag_eig(&alphas, &betas)?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| theta[j].partial_cmp(&theta[i]).expect("finite Ritz values"));
            let top: Vec<T> = order.iter().take(k).map(|&i| theta[i]).collect();
            let lead = top[0].abs().max(T::min_positive_value());
            let residual_ok = order
                .iter()
                .take(k)
                .all(|&i| (beta * s[(m - 1, i)]).abs() <= tol * lead);
            let stable = previous
                .as_ref()
                .is_some_and(|prev| prev.iter().zip(&top).all(|(&p, &t)| (p - t).abs() <= tol * lead));
            if (residual_ok && stable) || m == n {
                return Ok(Vector::from_vec(top));
            }
            previous = Some(top);
        }
        if m == max_iter {
            return Err(Error::NoConvergence {
                method: "lanczos",
                iterations: m,
            });
        }

        let breakdown = beta <= T::epsilon().powf(T::of(0.75)) * scale.max(T::min_positive_value());
        if breakdown {
            // Invariant subspace found: continue in its orthogonal complement.
            match fresh_direction(n, &basis, rng) {
                Some(q) => {
                    betas.push(T::zero());
                    basis.push(q);
                }
                None => {
                    let (theta, _) = tridiag_eig(&alphas, &betas)?;
                    let mut theta = theta;
                    theta.sort_by(|a, b| b.partial_cmp(a).expect("finite Ritz values"));
                    theta.resize(k, T::zero());
                    return Ok(Vector::from_vec(theta));
                }
            }
        } else {
            betas.push(beta);
            let inv = T::one() / beta;
            basis.push(Vector::from_vec(w.iter().map(|&x| x * inv).collect()));
        }
    }
}

/// Random unit vector orthogonal to `basis`, or `None` if the basis spans the space.
fn fresh_direction<T: Real>(n: usize, basis: &[Vector<T>], rng: &mut RngStream) -> Option<Vector<T>> {
    if basis.len() >= n {
        return None;
    }
    for _ in 0..8 {
        let mut v: Vector<T> = rng.unit_vector(n);
        for _ in 0..2 {
            for q in basis {
                let c = dot(q, &v);
                axpy(-c, q, &mut v);
            }
        }
        let norm = v.norm();
        if norm > T::of(1e-6) {
            return Some(v.scaled(T::one() / norm));
        }
    }
    None
}

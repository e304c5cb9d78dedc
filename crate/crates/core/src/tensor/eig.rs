//! Dense symmetric eigensolvers.
//!
//! [`sym_eig`] uses cyclic Jacobi rotations, which is accurate to working
//! precision for the small dense spectra (n ≤ 512) used throughout the crate.
//! [`tridiag_eig`] is the implicit-shift QL iteration used on Lanczos
//! tridiagonal projections.

use super::matrix::Mat;
use super::vector::Vector;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition `A = V Λ Vᵀ` with eigenvalues sorted descending.
/// Column `i` of `vectors` is the eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct SymEig<T> {
    pub values: Vector<T>,
    pub vectors: Mat<T>,
}

impl<T: Real> SymEig<T> {
    pub fn vector(&self, i: usize) -> Vector<T> {
        self.vectors.column(i)
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> Mat<T> {
        let n = self.values.len();
        Mat::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }
}

fn validate_symmetric<T: Real>(a: &Mat<T>) -> Result<T> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "eigensolver needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let norm = a.frobenius_norm();
    if a.asymmetry() > T::of(1e-10) * norm {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (asymmetry {:e}, norm {:e})",
            a.asymmetry(),
            norm
        )));
    }
    Ok(norm)
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig<T: Real>(a: &Mat<T>) -> Result<SymEig<T>> {
    let (values, vectors) = jacobi(a, true)?;
    let vectors = vectors.expect("vectors requested");
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).expect("finite eigenvalues"));
    let sorted = Vector::from_fn(n, |k| values[order[k]]);
    let vecs = Mat::from_fn(n, n, |r, k| vectors[(r, order[k])]);
    Ok(SymEig {
        values: sorted,
        vectors: vecs,
    })
}

/// Eigenvalues only, sorted descending.
///
/// Uses Householder reduction to tridiagonal form followed by implicit QL,
/// which is far cheaper than Jacobi sweeps when no vectors are needed.
pub fn sym_eigvals<T: Real>(a: &Mat<T>) -> Result<Vector<T>> {
    validate_symmetric(a)?;
    let (diag, off) = householder_tridiagonal(a);
    let mut values = tridiag_eigvals(&diag, &off)?;
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(Vector::from_vec(values))
}

/// Jacobi eigenvalues, sorted descending (reference path for [`sym_eigvals`]).
pub fn sym_eigvals_jacobi<T: Real>(a: &Mat<T>) -> Result<Vector<T>> {
    let (mut values, _) = jacobi(a, false)?;
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(values)
}

/// Diagonal and off-diagonal of `QᵀAQ` for orthogonal `Q`, by successive
/// Householder reflections `B ← B - 2(v wᵀ + w vᵀ)`.
fn householder_tridiagonal<T: Real>(input: &Mat<T>) -> (Vec<T>, Vec<T>) {
    let n = input.rows();
    let mut a = Mat::from_fn(n, n, |i, j| (input[(i, j)] + input[(j, i)]) * T::half());
    let mut diag = vec![T::zero(); n];
    let mut off = vec![T::zero(); n.saturating_sub(1)];
    let mut v = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    for k in 0..n.saturating_sub(2) {
        diag[k] = a[(k, k)];
        let x = &a.row(k)[k + 1..];
        let norm = x.iter().map(|&t| t * t).sum::<T>().sqrt();
        if norm == T::zero() {
            off[k] = T::zero();
            continue;
        }
        let alpha = if x[0] > T::zero() { -norm } else { norm };
        let m = n - k - 1;
        let v = &mut v[..m];
        v.copy_from_slice(x);
        v[0] = v[0] - alpha;
        let vn = v.iter().map(|&t| t * t).sum::<T>().sqrt();
        off[k] = alpha;
        if vn == T::zero() {
            continue;
        }
        v.iter_mut().for_each(|t| *t = *t / vn);
        // u = B v, γ = vᵀu, w = u - γv on the trailing block B.
        let w = &mut w[..m];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = super::vector::dot(&a.row(k + 1 + i)[k + 1..], v);
        }
        let gamma = super::vector::dot(v, w);
        for (wi, &vi) in w.iter_mut().zip(v.iter()) {
            *wi = *wi - gamma * vi;
        }
        let two = T::of(2.0);
        for i in 0..m {
            let (vi, wi) = (v[i], w[i]);
            let row = &mut a.row_mut(k + 1 + i)[k + 1..];
            for ((r, &vj), &wj) in row.iter_mut().zip(v.iter()).zip(w.iter()) {
                *r = *r - two * (vi * wj + wi * vj);
            }
        }
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2, n - 2)];
        off[n - 2] = a[(n - 2, n - 1)];
    }
    if n >= 1 {
        diag[n - 1] = a[(n - 1, n - 1)];
    }
    (diag, off)
}

fn jacobi<T: Real>(input: &Mat<T>, want_vectors: bool) -> Result<(Vector<T>, Option<Mat<T>>)> {
    let norm = validate_symmetric(input)?;
    let n = input.rows();
    // Working copy with a padded row stride: the rotations write matrix
    // columns, and a power-of-two stride makes those writes collide in cache.
    let ld = n + 1;
    let mut a = vec![T::zero(); n * ld];
    for i in 0..n {
        for j in 0..n {
            // Symmetrize exactly so the rotation formulas see a symmetric matrix.
            a[i * ld + j] = (input[(i, j)] + input[(j, i)]) * T::half();
        }
    }
    // Rows of `vt` are the eigenvectors.
    let mut vt = want_vectors.then(|| {
        let mut m = vec![T::zero(); n * ld];
        (0..n).for_each(|i| m[i * ld + i] = T::one());
        m
    });
    let diagonal = |a: &[T]| Vector::from_fn(n, |i| a[i * ld + i]);
    let vectors = |vt: Option<Vec<T>>| vt.map(|m| Mat::from_fn(n, n, |r, k| m[k * ld + r]));
    if n <= 1 || norm == T::zero() {
        return Ok((diagonal(&a), vectors(vt)));
    }

    let eps = T::epsilon();
    let target = eps * norm;
    let skip = target * T::of(1e-3);

    for _sweep in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + a[i * ld + j] * a[i * ld + j];
            }
        }
        if off.sqrt() <= target {
            return Ok((diagonal(&a), vectors(vt)));
        }

        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * ld + q];
                if apq.abs() <= skip {
                    a[p * ld + q] = T::zero();
                    a[q * ld + p] = T::zero();
                    continue;
                }
                let theta = (a[q * ld + q] - a[p * ld + p]) / (T::of(2.0) * apq);
                let t = {
                    let mag = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -mag
                    } else {
                        mag
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                a[p * ld + p] = a[p * ld + p] - t * apq;
                a[q * ld + q] = a[q * ld + q] + t * apq;
                a[p * ld + q] = T::zero();
                a[q * ld + p] = T::zero();
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[p * ld + r];
                    let arq = a[q * ld + r];
                    let new_p = c * arp - s * arq;
                    let new_q = s * arp + c * arq;
                    a[p * ld + r] = new_p;
                    a[r * ld + p] = new_p;
                    a[q * ld + r] = new_q;
                    a[r * ld + q] = new_q;
                }
                if let Some(v) = vt.as_mut() {
                    let (head, tail) = v.split_at_mut(q * ld);
                    let vp = &mut head[p * ld..p * ld + n];
                    let vq = &mut tail[..n];
                    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                        let (xp, xq) = (*x, *y);
                        *x = c * xp - s * xq;
                        *y = s * xp + c * xq;
                    }
                }
            }
        }
    }
    Err(Error::NoConvergence {
        method: "jacobi",
        iterations: MAX_SWEEPS,
    })
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples rows `i` and `i+1`).
///
/// Returns eigenvalues (unsorted) and the orthogonal matrix whose columns are
/// the eigenvectors.
pub fn tridiag_eig<T: Real>(diag: &[T], off: &[T]) -> Result<(Vec<T>, Mat<T>)> {
    check_tridiag(diag, off)?;
    let mut z = Mat::identity(diag.len());
    let d = implicit_ql(diag, off, Some(&mut z))?;
    Ok((d, z))
}

/// Eigenvalues (unsorted) of a symmetric tridiagonal matrix.
pub fn tridiag_eigvals<T: Real>(diag: &[T], off: &[T]) -> Result<Vec<T>> {
    check_tridiag(diag, off)?;
    implicit_ql(diag, off, None)
}

fn check_tridiag<T>(diag: &[T], off: &[T]) -> Result<()> {
    let n = diag.len();
    if n > 0 && off.len() + 1 < n {
        return Err(Error::Dimension {
            context: "tridiag_eig",
            expected: n - 1,
            got: off.len(),
        });
    }
    Ok(())
}

fn implicit_ql<T: Real>(diag: &[T], off: &[T], mut z: Option<&mut Mat<T>>) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = diag.to_vec();
    let mut e = vec![T::zero(); n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    let eps = T::epsilon();
    let two = T::of(2.0);
    // Off-diagonals below eps·‖T‖ are dropped even next to tiny diagonal
    // entries; the purely relative test stalls on spectra spanning many decades.
    let anorm = (0..n).fold(T::zero(), |acc, i| acc.max(d[i].abs() + e[i].abs()));
    let floor = eps * anorm;

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence {
                    method: "tridiagonal QL",
                    iterations: iter,
                });
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            let signed_r = if g >= T::zero() { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + signed_r);
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_deref_mut() {
                    for k in 0..n {
                        let f = z[(k, i + 1)];
                        z[(k, i + 1)] = s * z[(k, i)] + c * f;
                        z[(k, i)] = c * z[(k, i)] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&Mat::<f64>::identity(4)).unwrap();
        assert!(e.values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_matrix_gives_axis_vectors() {
        let e = sym_eig(&Mat::<f64>::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonsymmetric_input_is_rejected() {
        let a = Mat::<f64>::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::InvalidInput(_))));
        let r = Mat::<f64>::zeros(2, 3);
        assert!(sym_eig(&r).is_err());
    }

    #[test]
    fn tridiagonal_ql_matches_jacobi() {
        let diag: [f64; 5] = [2.0, -1.0, 0.5, 3.0, 1.0];
        let off = [1.0, 0.3, -0.7, 0.2];
        let (mut vals, z) = tridiag_eig(&diag, &off).unwrap();
        let n = diag.len();
        let t = Mat::from_fn(n, n, |i, j| {
            if i == j {
                diag[i]
            } else if j == i + 1 {
                off[i]
            } else if i == j + 1 {
                off[j]
            } else {
                0.0
            }
        });
        for k in 0..n {
            let v = z.column(k);
            let tv = t.matvec(&v).unwrap();
            let resid = tv.add_scaled(-vals[k], &v).unwrap().norm();
            assert!(resid < 1e-12, "residual {resid}");
        }
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let dense = sym_eigvals(&t).unwrap();
        for (a, b) in vals.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_element_and_zero_matrices() {
        let e = sym_eig(&Mat::<f64>::diag(&[-2.0])).unwrap();
        assert_eq!(e.values[0], -2.0);
        let z = sym_eigvals(&Mat::<f64>::zeros(3, 3)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }
}

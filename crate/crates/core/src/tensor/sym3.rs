use super::matrix::Mat;
use super::vector::{axpy, dot, Vector};
use crate::error::{check_dim, Result};
use crate::scalar::Real;

/// A `d_out × p × p` tensor symmetric in its last two indices.
///
/// Only the entries with `i <= j` are stored (packed upper triangle per output
/// slice), so `Q[a,i,j] == Q[a,j,i]` holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3<T> {
    d_out: usize,
    p: usize,
    data: Vec<T>,
}

#[inline]
fn row_offset(p: usize, i: usize) -> usize {
    i * (2 * p - i + 1) / 2
}

impl<T: Real> SymTensor3<T> {
    pub fn zeros(d_out: usize, p: usize) -> Self {
        Self {
            d_out,
            p,
            data: vec![T::zero(); d_out * Self::packed_len(p)],
        }
    }

    /// Number of independent entries per output slice.
    pub fn packed_len(p: usize) -> usize {
        p * (p + 1) / 2
    }

    /// Builds the tensor from `f(a, i, j)` evaluated for `i <= j` only.
    pub fn from_fn(d_out: usize, p: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(d_out * Self::packed_len(p));
        for a in 0..d_out {
            for i in 0..p {
                for j in i..p {
                    data.push(f(a, i, j));
                }
            }
        }
        Self { d_out, p, data }
    }

    /// Wraps packed storage laid out as produced by [`SymTensor3::from_fn`].
    pub fn from_packed(d_out: usize, p: usize, data: Vec<T>) -> Result<Self> {
        check_dim("SymTensor3::from_packed", d_out * Self::packed_len(p), data.len())?;
        Ok(Self { d_out, p, data })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn packed(&self) -> &[T] {
        &self.data
    }

    pub fn packed_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn index(&self, a: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        a * Self::packed_len(self.p) + row_offset(self.p, i) + (j - i)
    }

    pub fn get(&self, a: usize, i: usize, j: usize) -> T {
        self.data[self.index(a, i, j)]
    }

    /// Sets both `Q[a,i,j]` and `Q[a,j,i]`.
    pub fn set(&mut self, a: usize, i: usize, j: usize, value: T) {
        let k = self.index(a, i, j);
        self.data[k] = value;
    }

    /// Full `p × p` slice `Q_a`.
    pub fn slice_matrix(&self, a: usize) -> Mat<T> {
        Mat::from_fn(self.p, self.p, |i, j| self.get(a, i, j))
    }

    fn slice(&self, a: usize) -> &[T] {
        let len = Self::packed_len(self.p);
        &self.data[a * len..(a + 1) * len]
    }

    /// `Q(u, ·)`: the `d_out × p` matrix with `M[a,j] = Σ_i Q[a,i,j] u[i]`.
    pub fn contract_once(&self, u: &[T]) -> Result<Mat<T>> {
        check_dim("SymTensor3::contract_once", self.p, u.len())?;
        let p = self.p;
        let mut out = Mat::zeros(self.d_out, p);
        for a in 0..self.d_out {
            let slice = self.slice(a);
            let m = out.row_mut(a);
            for i in 0..p {
                let off = row_offset(p, i);
                let row = &slice[off..off + (p - i)];
                m[i] = m[i] + dot(row, &u[i..]);
                let ui = u[i];
                if ui != T::zero() {
                    axpy(ui, &row[1..], &mut m[i + 1..]);
                }
            }
        }
        Ok(out)
    }

    /// `Q(u, v)`: the vector with `w[a] = uᵀ Q_a v`.
    pub fn contract_twice(&self, u: &[T], v: &[T]) -> Result<Vector<T>> {
        check_dim("SymTensor3::contract_twice", self.p, u.len())?;
        check_dim("SymTensor3::contract_twice", self.p, v.len())?;
        let p = self.p;
        Ok(Vector::from_fn(self.d_out, |a| {
            let slice = self.slice(a);
            let mut acc = T::zero();
            for i in 0..p {
                let off = row_offset(p, i);
                let row = &slice[off..off + (p - i)];
                acc = acc + u[i] * dot(row, &v[i..]) + v[i] * dot(&row[1..], &u[i + 1..]);
            }
            acc
        }))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            d_out: self.d_out,
            p: self.p,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> SymTensor3<U> {
        SymTensor3 {
            d_out: self.d_out,
            p: self.p,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }
}

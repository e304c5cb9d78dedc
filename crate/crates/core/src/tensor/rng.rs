//! Seeded, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Identical identifiers give
//! identical draw sequences regardless of how many threads are used, and
//! [`RngStream::split`] derives child streams deterministically so parallel
//! ensembles reproduce serial results.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::Mat;
use super::sym3::SymTensor3;
use super::vector::Vector;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream `child` of this stream. Does not advance `self`.
    pub fn split(&self, child: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(0x5EED)));
        Self::new(self.seed, id)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `k` distinct indices from `0..n`, uniformly at random, in ascending order.
    pub fn choose_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut v = index::sample(&mut self.rng, n, k).into_vec();
        v.sort_unstable();
        v
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn fill_normal<T: Real>(&mut self, buf: &mut [T], mean: f64, variance: f64) {
        let sd = variance.sqrt();
        for x in buf {
            *x = T::of(mean + sd * self.normal());
        }
    }

    /// Direction drawn uniformly from the unit sphere in `n` dimensions.
    pub fn unit_vector<T: Real>(&mut self, n: usize) -> Vector<T> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return Vector::from_vec(v.into_iter().map(|x| T::of(x / norm)).collect());
            }
        }
    }
}

/// Containers that can be filled with i.i.d. Gaussian entries.
pub trait GaussFill: Sized {
    type Shape;

    fn gauss_fill(shape: Self::Shape, mean: f64, variance: f64, rng: &mut RngStream) -> Result<Self>;
}

fn check_variance(variance: f64) -> Result<()> {
    if variance >= 0.0 && variance.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "variance must be finite and non-negative, got {variance}"
        )))
    }
}

impl<T: Real> GaussFill for Vector<T> {
    type Shape = usize;

    fn gauss_fill(len: usize, mean: f64, variance: f64, rng: &mut RngStream) -> Result<Self> {
        check_variance(variance)?;
        let mut v = Vector::zeros(len);
        rng.fill_normal(&mut v, mean, variance);
        Ok(v)
    }
}

impl<T: Real> GaussFill for Mat<T> {
    type Shape = (usize, usize);

    fn gauss_fill(
        (rows, cols): (usize, usize),
        mean: f64,
        variance: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_variance(variance)?;
        let mut m = Mat::zeros(rows, cols);
        rng.fill_normal(m.as_mut_slice(), mean, variance);
        Ok(m)
    }
}

impl<T: Real> GaussFill for SymTensor3<T> {
    type Shape = (usize, usize);

    /// Draws only the independent `i <= j` entries; the mirror shares the draw.
    fn gauss_fill(
        (d_out, p): (usize, usize),
        mean: f64,
        variance: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_variance(variance)?;
        let mut q = SymTensor3::zeros(d_out, p);
        rng.fill_normal(q.packed_mut(), mean, variance);
        Ok(q)
    }
}

pub fn gauss_fill<C: GaussFill>(
    shape: C::Shape,
    mean: f64,
    variance: f64,
    rng: &mut RngStream,
) -> Result<C> {
    C::gauss_fill(shape, mean, variance, rng)
}

//! A small fully-connected network with squared loss and exact per-example
//! Jacobians, trained by full-batch GD or SAM directly in parameter space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::quad::{DynState, OptimizerSpec, UpdateRule, DIVERGENCE_NORM};
use crate::scalar::Real;
use crate::spectral::{record, SpectrumRecord, TrackerConfig};
use crate::tensor::{Mat, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(T::zero()),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y = σ(x)`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Self::Tanh => T::one() - y * y,
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Layer widths from input to the scalar output, e.g. `[16, 32, 32, 1]`.
///
/// Weights are drawn `N(0, init_scale² / fan_in)` and biases start at zero.
/// The output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "unit")]
    pub init_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_widths,
            activation,
            init_scale: 1.0,
        }
    }

    /// The reference architecture: 16-32-32-1, tanh.
    pub fn reference() -> Self {
        Self::new(vec![16, 32, 32, 1], Activation::Tanh)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 2 || w.contains(&0) {
            return Err(Error::InvalidInput(format!("layer widths must be >= 2 positive entries, got {w:?}")));
        }
        if w[w.len() - 1] != 1 {
            return Err(Error::InvalidInput(format!("output width must be 1, got {}", w[w.len() - 1])));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("init_scale must be positive, got {}", self.init_scale)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offset of layer `l`'s weight block; its bias block follows the weights.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_widths[..=l].windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn init_params<T: Real>(&self, rng: &mut RngStream) -> Result<Vector<T>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.n_params());
        for w in self.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = self.init_scale / (fan_in as f64).sqrt();
            out.extend((0..fan_in * fan_out).map(|_| T::of(std * rng.normal())));
            out.extend((0..fan_out).map(|_| T::zero()));
        }
        Ok(Vector::from_vec(out))
    }
}

/// Inputs (`D × d_in`) and `±1` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Mat<T>,
    pub targets: Vector<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Mat<T>, targets: Vector<T>) -> Result<Self> {
        check_dim("Dataset targets", inputs.rows(), targets.len())?;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Two unit-variance Gaussian clusters centred at `±(separation/2) u` for a
/// random unit vector `u`; even rows are labelled `+1`, odd rows `-1`.
pub fn make_blobs<T: Real>(d_in: usize, n: usize, separation: f64, rng: &mut RngStream) -> Result<Dataset<T>> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("dataset size must be even and >= 2, got {n}")));
    }
    if d_in == 0 || !(separation >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need d_in >= 1 and separation >= 0, got {d_in}, {separation}"
        )));
    }
    let u: Vector<f64> = rng.unit_vector(d_in);
    let mut inputs = Mat::zeros(n, d_in);
    let mut targets = Vector::zeros(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        targets[i] = T::of(label);
        for (k, x) in inputs.row_mut(i).iter_mut().enumerate() {
            *x = T::of(label * 0.5 * separation * u[k] + rng.normal());
        }
    }
    Dataset::new(inputs, targets)
}

fn check_params<T>(spec: &MlpSpec, params: &[T]) -> Result<()> {
    spec.validate()?;
    check_dim("MLP parameters", spec.n_params(), params.len())
}

/// Network output for one input row.
pub fn forward<T: Real>(spec: &MlpSpec, params: &[T], x: &[T]) -> Result<T> {
    check_params(spec, params)?;
    check_dim("MLP input", spec.input_dim(), x.len())?;
    let mut h = x.to_vec();
    for l in 0..spec.n_layers() {
        let a = affine(spec, params, l, &h);
        h = if l + 1 < spec.n_layers() {
            a.iter().map(|&v| spec.activation.apply(v)).collect()
        } else {
            a
        };
    }
    Ok(h[0])
}

fn affine<T: Real>(spec: &MlpSpec, params: &[T], l: usize, h: &[T]) -> Vec<T> {
    let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
    let off = spec.layer_offset(l);
    let (w, b) = params[off..off + fan_out * (fan_in + 1)].split_at(fan_in * fan_out);
    (0..fan_out)
        .map(|o| crate::tensor::dot(&w[o * fan_in..(o + 1) * fan_in], h) + b[o])
        .collect()
}

/// Residuals `z = f(θ) - targets` and the exact Jacobian `∂f/∂θ` (`D × P`),
/// one reverse pass per example.
pub fn forward_and_jacobian<T: Real>(spec: &MlpSpec, params: &[T], data: &Dataset<T>) -> Result<(Vector<T>, Mat<T>)> {
    check_params(spec, params)?;
    check_dim("MLP input", spec.input_dim(), data.inputs.cols())?;
    let n_layers = spec.n_layers();
    let mut z = Vector::zeros(data.len());
    let mut jac = Mat::zeros(data.len(), spec.n_params());
    let mut pre: Vec<Vec<T>> = Vec::with_capacity(n_layers);
    let mut post: Vec<Vec<T>> = Vec::with_capacity(n_layers + 1);
    for e in 0..data.len() {
        pre.clear();
        post.clear();
        post.push(data.inputs.row(e).to_vec());
        for l in 0..n_layers {
            let a = affine(spec, params, l, &post[l]);
            let h = if l + 1 < n_layers {
                a.iter().map(|&v| spec.activation.apply(v)).collect()
            } else {
                a.clone()
            };
            pre.push(a);
            post.push(h);
        }
        let out = post[n_layers][0];
        if !out.is_finite() {
            return Err(Error::Diverged { step: 0 });
        }
        z[e] = out - data.targets[e];

        let row = jac.row_mut(e);
        let mut delta = vec![T::one()];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            let off = spec.layer_offset(l);
            let h = &post[l];
            for o in 0..fan_out {
                let dst = &mut row[off + o * fan_in..off + (o + 1) * fan_in];
                for (d, &hv) in dst.iter_mut().zip(h) {
                    *d = delta[o] * hv;
                }
                row[off + fan_in * fan_out + o] = delta[o];
            }
            if l > 0 {
                let w = &params[off..off + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|i| {
                        let back = (0..fan_out).fold(T::zero(), |acc, o| acc + w[o * fan_in + i] * delta[o]);
                        back * spec.activation.derivative(pre[l - 1][i], post[l][i])
                    })
                    .collect();
            }
        }
    }
    Ok((z, jac))
}

#[derive(Debug, Clone)]
pub struct MlpTrajectory<T> {
    pub records: Vec<SpectrumRecord>,
    pub diverged_at: Option<usize>,
    pub final_params: Vector<T>,
}

impl<T> MlpTrajectory<T> {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

fn diverged<T: Real>(z: &Vector<T>, j: &Mat<T>) -> bool {
    !z.is_finite() || !j.is_finite() || z.norm().as_f64() > DIVERGENCE_NORM
}

/// Full-batch GD (`rule = gd_exact`) or unnormalized SAM (`sam_exact`) in
/// parameter space, recording the NTK spectrum every `tracker.cadence` steps.
///
/// With `ρ = 0` SAM skips the ascent evaluation, so it reproduces GD bit for bit.
pub fn train<T: Real>(
    spec: &MlpSpec,
    data: &Dataset<T>,
    params0: &Vector<T>,
    opt: &OptimizerSpec,
    steps: usize,
    tracker: &TrackerConfig,
) -> Result<MlpTrajectory<T>> {
    opt.validate(data.len())?;
    let rho = match opt.rule {
        UpdateRule::GdExact => 0.0,
        UpdateRule::SamExact => opt.rho,
        other => {
            return Err(Error::InvalidInput(format!(
                "the MLP testbed supports gd_exact and sam_exact, got {other:?}"
            )))
        }
    };
    if tracker.cadence == 0 {
        return Err(Error::InvalidInput("record cadence must be positive".into()));
    }
    let (alpha_t, rho_t) = (T::of(opt.alpha), T::of(rho));
    let mut theta = params0.clone();
    let mut records = Vec::new();
    let mut diverged_at = None;
    for t in 0..=steps {
        let (z, j) = match forward_and_jacobian(spec, &theta, data) {
            Ok(v) => v,
            Err(Error::Diverged { .. }) => {
                diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e.at_step(t)),
        };
        if diverged(&z, &j) {
            diverged_at = Some(t);
            break;
        }
        let g = j.t_matvec(&z)?;
        if t % tracker.cadence == 0 {
            let s = DynState { z, j, step: t };
            records.push(record(&s, opt.alpha, rho, tracker, Some(g.norm().as_f64())).map_err(|e| e.at_step(t))?);
        }
        if t == steps {
            break;
        }
        let descent = if rho_t == T::zero() {
            g
        } else {
            let ascent = theta.add_scaled(rho_t, &g)?;
            match forward_and_jacobian(spec, &ascent, data) {
                Ok((za, ja)) => ja.t_matvec(&za)?,
                Err(Error::Diverged { .. }) => {
                    diverged_at = Some(t);
                    break;
                }
                Err(e) => return Err(e.at_step(t)),
            }
        };
        theta = theta.add_scaled(-alpha_t, &descent)?;
    }
    Ok(MlpTrajectory {
        records,
        diverged_at,
        final_params: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(MlpSpec::reference().n_params(), 16 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
    }

    #[test]
    fn zero_weights_give_negative_targets() {
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::Tanh);
        let data: Dataset<f64> = make_blobs(3, 6, 2.0, &mut RngStream::new(1, 0)).unwrap();
        let theta = Vector::zeros(spec.n_params());
        let (z, _) = forward_and_jacobian(&spec, &theta, &data).unwrap();
        assert_eq!(z, data.targets.scaled(-1.0));
    }

    #[test]
    fn linear_layer_jacobian_is_input_pattern() {
        let spec = MlpSpec::new(vec![3, 1], Activation::Tanh);
        let data: Dataset<f64> = make_blobs(3, 4, 1.0, &mut RngStream::new(2, 0)).unwrap();
        let theta = spec.init_params(&mut RngStream::new(2, 1)).unwrap();
        let (_, j) = forward_and_jacobian(&spec, &theta, &data).unwrap();
        for e in 0..4 {
            assert_eq!(&j.row(e)[..3], data.inputs.row(e));
            assert_eq!(j.row(e)[3], 1.0);
        }
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a: Dataset<f64> = make_blobs(4, 10, 3.0, &mut RngStream::new(7, 0)).unwrap();
        let b: Dataset<f64> = make_blobs(4, 10, 3.0, &mut RngStream::new(7, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.targets.iter().sum::<f64>(), 0.0);
        assert!(make_blobs::<f64>(4, 5, 1.0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn rejects_unsupported_rule_and_bad_spec() {
        let spec = MlpSpec::new(vec![2, 3, 2], Activation::Relu);
        assert!(spec.validate().is_err());
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu);
        let data: Dataset<f64> = make_blobs(2, 4, 1.0, &mut RngStream::new(0, 0)).unwrap();
        let theta = spec.init_params(&mut RngStream::new(0, 1)).unwrap();
        let mut opt = OptimizerSpec::gd(0.1);
        opt.rule = UpdateRule::SamTruncated;
        assert!(train(&spec, &data, &theta, &opt, 3, &TrackerConfig::default()).is_err());
    }
}

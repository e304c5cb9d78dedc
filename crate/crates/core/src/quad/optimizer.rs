use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Which update map a trajectory applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    GdExact,
    SamExact,
    SamTruncated,
    SgdExact,
    SamSgdExact,
    Rescaled,
}

impl UpdateRule {
    pub fn uses_batches(self) -> bool {
        matches!(self, Self::SgdExact | Self::SamSgdExact)
    }

    pub fn uses_rho(self) -> bool {
        !matches!(self, Self::GdExact | Self::SgdExact)
    }
}

/// How minibatch masks are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Exactly `B = round(βD)` distinct datapoints per step.
    #[default]
    WithoutReplacement,
    /// Each datapoint included independently with probability `β`.
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub alpha: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub rule: UpdateRule,
    #[serde(default)]
    pub sampling: BatchSampling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

fn one() -> f64 {
    1.0
}

impl OptimizerSpec {
    pub fn gd(alpha: f64) -> Self {
        Self {
            alpha,
            rho: 0.0,
            beta: 1.0,
            rule: UpdateRule::GdExact,
            sampling: BatchSampling::WithoutReplacement,
            seed: 0,
            stream: 0,
        }
    }

    pub fn sam(alpha: f64, rho: f64) -> Self {
        Self {
            rho,
            rule: UpdateRule::SamExact,
            ..Self::gd(alpha)
        }
    }

    pub fn rng(&self) -> RngStream {
        RngStream::new(self.seed, self.stream)
    }

    /// Effective SAM radius (zero for rules without an ascent step).
    pub fn effective_rho(&self) -> f64 {
        if self.rule.uses_rho() {
            self.rho
        } else {
            0.0
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be non-negative, got {}", self.rho)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.rule.uses_batches() {
            batch_size(self.beta, d)?;
        }
        Ok(())
    }
}

/// `B = round(β D)`, rejected when it is zero.
pub fn batch_size(beta: f64, d: usize) -> Result<usize> {
    let b = (beta * d as f64).round();
    if b < 1.0 || b > d as f64 {
        return Err(Error::InvalidInput(format!(
            "batch fraction {beta} with D = {d} gives batch size {b}"
        )));
    }
    Ok(b as usize)
}

/// Diagonal of the batch projection `P_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BatchMask {
    selected: Vec<bool>,
}

impl BatchMask {
    pub fn full(d: usize) -> Self {
        Self {
            selected: vec![true; d],
        }
    }

    pub fn from_indices(d: usize, idx: &[usize]) -> Self {
        let mut selected = vec![false; d];
        for &i in idx {
            selected[i] = true;
        }
        Self { selected }
    }

    pub fn draw(d: usize, beta: f64, sampling: BatchSampling, rng: &mut RngStream) -> Result<Self> {
        match sampling {
            BatchSampling::WithoutReplacement => {
                let b = batch_size(beta, d)?;
                if b == d {
                    return Ok(Self::full(d));
                }
                Ok(Self::from_indices(d, &rng.choose_without_replacement(d, b)))
            }
            BatchSampling::Bernoulli => {
                if beta >= 1.0 {
                    return Ok(Self::full(d));
                }
                Ok(Self {
                    selected: (0..d).map(|_| rng.bernoulli(beta)).collect(),
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn batch_len(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn is_full(&self) -> bool {
        self.selected.iter().all(|&s| s)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.selected[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.selected
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.selected[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_size_rounds_and_rejects_empty() {
        assert_eq!(batch_size(0.25, 8).unwrap(), 2);
        assert_eq!(batch_size(1.0, 8).unwrap(), 8);
        assert!(batch_size(0.01, 8).is_err());
    }

    #[test]
    fn without_replacement_has_exact_size() {
        let mut rng = RngStream::new(4, 2);
        for _ in 0..50 {
            let m = BatchMask::draw(10, 0.3, BatchSampling::WithoutReplacement, &mut rng).unwrap();
            assert_eq!(m.batch_len(), 3);
        }
    }

    #[test]
    fn full_batch_for_beta_one() {
        let mut rng = RngStream::new(4, 2);
        assert!(BatchMask::draw(7, 1.0, BatchSampling::WithoutReplacement, &mut rng).unwrap().is_full());
        assert!(BatchMask::draw(7, 1.0, BatchSampling::Bernoulli, &mut rng).unwrap().is_full());
    }

    #[test]
    fn validation() {
        assert!(OptimizerSpec::gd(0.0).validate(4).is_err());
        assert!(OptimizerSpec::sam(0.1, -1.0).validate(4).is_err());
        let mut s = OptimizerSpec::gd(0.1);
        s.rule = UpdateRule::SgdExact;
        s.beta = 0.1;
        assert!(s.validate(4).is_err());
        s.beta = 0.5;
        assert!(s.validate(4).is_ok());
    }
}

use serde::{Deserialize, Serialize};

/// A learning rate and SAM radius, for threshold queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosQuery {
    pub alpha: f64,
    pub rho: f64,
}

impl EosQuery {
    pub fn new(alpha: f64, rho: f64) -> Self {
        Self { alpha, rho }
    }

    /// `r = ρ/α`, the only parameter of the rescaled dynamics.
    pub fn ratio(&self) -> f64 {
        self.rho / self.alpha
    }

    /// Positive root `λ*` of `αλ(1 + ρλ) = 2`.
    pub fn sam_eos_lambda(&self) -> f64 {
        // Rationalized form of (-1 + √(1 + 8ρ/α)) / (2ρ); exact at ρ = 0 and
        // free of cancellation for small ρ/α.
        4.0 / (self.alpha * (1.0 + (1.0 + 8.0 * self.ratio()).sqrt()))
    }

    /// `α(λ + ρλ²)`; equals the GD normalized eigenvalue `αλ` when `ρ = 0`.
    pub fn sam_normalized(&self, lambda: f64) -> f64 {
        self.alpha * (lambda + self.rho * lambda * lambda)
    }

    pub fn gd_normalized(&self, lambda: f64) -> f64 {
        self.alpha * lambda
    }
}

pub fn sam_eos_lambda(q: EosQuery) -> f64 {
    q.sam_eos_lambda()
}

pub fn sam_normalized_eig(lambda: f64, q: EosQuery) -> f64 {
    q.sam_normalized(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(q: EosQuery) -> f64 {
        let (mut lo, mut hi) = (0.0, 10.0 / q.alpha);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q.sam_normalized(mid) < 2.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn gd_threshold() {
        let q = EosQuery::new(0.25, 0.0);
        assert_eq!(q.sam_eos_lambda(), 8.0);
        assert_eq!(q.sam_normalized(8.0), 2.0);
    }

    #[test]
    fn middle_panel_parameters() {
        let q = EosQuery::new(0.08, 0.04);
        let closed = (-1.0 + 5f64.sqrt()) / 0.08;
        assert!((q.sam_eos_lambda() - closed).abs() < 1e-12);
        assert!((q.sam_eos_lambda() - 15.450849718747371).abs() < 1e-10);
        assert!((q.sam_normalized(q.sam_eos_lambda()) - 2.0).abs() < 1e-12);
        assert!((q.sam_normalized(10.0) - 1.12).abs() < 1e-14);
    }

    #[test]
    fn closed_form_matches_bisection() {
        for &alpha in &[1e-3, 0.01, 0.08, 0.5, 1.0] {
            for &rho in &[0.0, 1e-3, 0.04, 0.3, 1.0] {
                let q = EosQuery::new(alpha, rho);
                let b = bisect(q);
                assert!((q.sam_eos_lambda() - b).abs() <= 1e-10 * b.max(1.0), "α={alpha} ρ={rho}");
            }
        }
    }
}

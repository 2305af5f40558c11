use crate::error::SaError;
use serde::{Deserialize, Serialize};

/// The learning rate sequence `gamma_n = gamma1 * n^(-gamma)`.
///
/// The exponent is restricted to `(1/2, 1]` so that the step sizes are not
/// summable while their squares are, the classic Robbins-Monro conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    gamma1: f64,
    gamma: f64,
}

impl LearningRate {
    /// Validate and build a schedule. Rejects `gamma1 <= 0`, `gamma <= 1/2`
    /// (squares not summable) and `gamma > 1` (steps summable).
    pub fn new(gamma1: f64, gamma: f64) -> Result<Self, SaError> {
        if !(gamma1 > 0.0) {
            return Err(SaError::NonpositiveScale(gamma1));
        }
        if !(gamma > 0.5) {
            return Err(SaError::SquareSummability(gamma));
        }
        if gamma > 1.0 {
            return Err(SaError::Summability(gamma));
        }
        Ok(LearningRate { gamma1, gamma })
    }

    /// `gamma_n` for step `n >= 1`.
    pub fn rate_at(&self, n: usize) -> f64 {
        assert!(n >= 1, "learning rate is defined for n >= 1");
        self.gamma1 * (n as f64).powf(-self.gamma)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rate_at_examples() {
        let r = LearningRate::new(1.0, 1.0).unwrap();
        assert_eq!(r.rate_at(1), 1.0);

        // gamma1 = 1/F'(theta_star) ~ 294 from the quantile study
        let r = LearningRate::new(294.0, 1.0).unwrap();
        assert_eq!(r.rate_at(2), 147.0);

        let r = LearningRate::new(10.0, 2.0 / 3.0).unwrap();
        assert_relative_eq!(r.rate_at(8), 2.5, max_relative = 1e-14);
    }

    #[test]
    fn validation_boundaries() {
        assert!(LearningRate::new(1.0, 1.0).is_ok());
        assert!(matches!(
            LearningRate::new(1.0, 0.5),
            Err(SaError::SquareSummability(_))
        ));
        assert!(matches!(
            LearningRate::new(-1.0, 0.9),
            Err(SaError::NonpositiveScale(_))
        ));
        assert!(matches!(
            LearningRate::new(1.0, 1.5),
            Err(SaError::Summability(_))
        ));
    }

    #[test]
    fn strictly_decreasing() {
        let r = LearningRate::new(3.0, 0.7).unwrap();
        for n in 1..200 {
            assert!(r.rate_at(n + 1) < r.rate_at(n));
            assert!(r.rate_at(n) > 0.0);
        }
    }
}

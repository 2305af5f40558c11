use crate::error::SaError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::sync::Arc;

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Covariate distribution of the normal linear stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum XDist {
    Fixed(f64),
    StandardNormal,
}

/// One-dimensional normal linear model `Y | X ~ N(X theta_star, noise_sd^2)`.
#[derive(Clone, Copy, Debug)]
pub struct NormalLinearStream {
    pub theta_star: f64,
    pub x_dist: XDist,
    pub noise_sd: f64,
}

impl NormalLinearStream {
    pub fn new(theta_star: f64, x_dist: XDist, noise_sd: f64) -> Self {
        assert!(noise_sd >= 0.0, "noise_sd must be nonnegative");
        NormalLinearStream {
            theta_star,
            x_dist,
            noise_sd,
        }
    }

    /// Draw the next `(x, y)` pair.
    pub fn next_point(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let x = match self.x_dist {
            XDist::Fixed(x) => x,
            XDist::StandardNormal => StandardNormal.sample(rng),
        };
        let eps: f64 = StandardNormal.sample(rng);
        (x, x * self.theta_star + self.noise_sd * eps)
    }
}

/// LMS step `(1 - gamma x^2) theta_prev + gamma y x`.
pub fn normal_linear_explicit_step(theta_prev: f64, gamma_n: f64, x: f64, y: f64) -> f64 {
    (1.0 - gamma_n * x * x) * theta_prev + gamma_n * y * x
}

/// NLMS step `theta_prev / (1 + gamma x^2) + gamma y x / (1 + gamma x^2)`.
pub fn normal_linear_implicit_step(theta_prev: f64, gamma_n: f64, x: f64, y: f64) -> f64 {
    let denom = 1.0 + gamma_n * x * x;
    theta_prev / denom + gamma_n * y * x / denom
}

/// Quantile-estimation oracle: the experimenter only sees
/// `W_theta = I{Z <= theta} - alpha`.
#[derive(Clone)]
pub struct QuantileOracle {
    pub cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub sampler: Arc<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>,
    pub alpha: f64,
    pub theta_star: f64,
}

impl QuantileOracle {
    pub fn new(
        cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        sampler: Arc<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>,
        alpha: f64,
        theta_star: f64,
    ) -> Result<Self, SaError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SaError::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if (cdf(theta_star) - alpha).abs() > 1e-9 {
            return Err(SaError::InvalidConfig(format!(
                "F(theta_star) != alpha (deviation {:e})",
                (cdf(theta_star) - alpha).abs()
            )));
        }
        Ok(QuantileOracle {
            cdf,
            sampler,
            alpha,
            theta_star,
        })
    }

    /// Standard normal `Z` with the target quantile at `F(theta_star) = alpha`.
    pub fn standard_normal(alpha: f64) -> Result<Self, SaError> {
        use statrs::distribution::{ContinuousCDF, Normal};
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let theta_star = normal.inverse_cdf(alpha);
        QuantileOracle::new(
            Arc::new(std_normal_cdf),
            Arc::new(|rng: &mut ChaCha8Rng| StandardNormal.sample(rng)),
            alpha,
            theta_star,
        )
    }

    /// Draw `Z` and return `1 - alpha` if `Z <= theta`, else `-alpha`.
    pub fn query(&self, theta: f64, rng: &mut ChaCha8Rng) -> f64 {
        let z = (self.sampler)(rng);
        if z <= theta {
            1.0 - self.alpha
        } else {
            -self.alpha
        }
    }

    /// The regression function `F(theta) - alpha`.
    pub fn mean_field(&self, theta: f64) -> f64 {
        (self.cdf)(theta) - self.alpha
    }
}

/// Mean map of the Bernoulli exponential family, `T(theta) = e^theta / (1 + e^theta)`.
pub fn expfam_mean(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Average of `k` independent Bernoulli sufficient statistics simulated at `theta`.
pub fn expfam_simulate_stat(theta: f64, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    assert!(k >= 1);
    let p = expfam_mean(theta);
    let mut sum = 0usize;
    for _ in 0..k {
        if rng.gen::<f64>() < p {
            sum += 1;
        }
    }
    sum as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn lms_step_examples() {
        assert_eq!(normal_linear_explicit_step(0.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(normal_linear_explicit_step(1.0, 1.0, 1.0, 1.0), 1.0);
        // oscillatory blow-up regime gamma1 x^2 >> 1
        let t1 = normal_linear_explicit_step(0.0, 10.0, 1.0, 1.0);
        assert_eq!(t1, 10.0);
        let t2 = normal_linear_explicit_step(t1, 5.0, 1.0, 1.0);
        assert_eq!(t2, -35.0);
    }

    #[test]
    fn nlms_step_examples() {
        assert_eq!(normal_linear_implicit_step(0.0, 1.0, 1.0, 1.0), 0.5);
        assert_eq!(normal_linear_implicit_step(1.0, 1000.0, 1.0, 1.0), 1.0);
        let big = normal_linear_implicit_step(0.0, 1e6, 1.0, 1.0);
        assert!((big - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nlms_is_a_convex_combination() {
        // theta_new = w theta_prev + (1-w) yx/x^2, w = 1/(1 + gamma x^2)
        let (prev, gamma, x, y) = (3.0, 0.7, -1.3, 2.1);
        let w = 1.0 / (1.0 + gamma * x * x);
        let target = y * x / (x * x);
        let got = normal_linear_implicit_step(prev, gamma, x, y);
        assert_relative_eq!(got, w * prev + (1.0 - w) * target, epsilon = 1e-12);
        assert!(got >= target.min(prev) - 1e-12 && got <= target.max(prev) + 1e-12);
    }

    #[test]
    fn explicit_and_implicit_steps_agree_to_first_order() {
        let (prev, x, y) = (2.0, 1.4, -0.6);
        let mut prev_ratio = f64::INFINITY;
        for gamma in [1e-2, 1e-3, 1e-4] {
            let diff = (normal_linear_explicit_step(prev, gamma, x, y)
                - normal_linear_implicit_step(prev, gamma, x, y))
            .abs();
            let ratio = diff / (gamma * gamma);
            // O(gamma^2): the gamma^2-normalized difference stays bounded
            assert!(ratio < 100.0);
            assert!(ratio < prev_ratio * 1.5);
            prev_ratio = ratio;
        }
    }

    #[test]
    fn zero_x_steps_are_identity() {
        assert_eq!(normal_linear_explicit_step(2.5, 3.0, 0.0, 7.0), 2.5);
        assert_eq!(normal_linear_implicit_step(2.5, 3.0, 0.0, 7.0), 2.5);
    }

    #[test]
    fn quantile_query_range_and_mean() {
        let oracle = QuantileOracle::standard_normal(0.999).unwrap();
        assert!((oracle.theta_star - 3.0902).abs() < 1e-3);

        let mut rng = RngStream::new(1, 0).rng();
        let n = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let w = oracle.query(3.09, &mut rng);
            assert!(w == 1.0 - 0.999 || w == -0.999);
            sum += w;
        }
        let mean = sum / n as f64;
        let exact = std_normal_cdf(3.09) - 0.999;
        // Bernoulli standard error at p ~ 0.999
        let se = (0.999f64 * 0.001 / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean}, exact {exact}");
    }

    #[test]
    fn quantile_indicator_forced_at_large_theta() {
        let oracle = QuantileOracle::standard_normal(0.5).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..100 {
            assert_eq!(oracle.query(1e9, &mut rng), 0.5);
        }
    }

    #[test]
    fn expfam_mean_values() {
        assert_eq!(expfam_mean(0.0), 0.5);
        assert!((expfam_mean(40.0) - 1.0).abs() < 1e-12);
        assert_relative_eq!(expfam_mean(3.0f64.ln()), 0.75, epsilon = 1e-14);
        // strictly increasing
        let mut prev = expfam_mean(-20.0);
        for i in -19..=20 {
            let cur = expfam_mean(i as f64);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn expfam_simulate_stat_behaviour() {
        let mut rng = RngStream::new(3, 0).rng();
        assert_eq!(expfam_simulate_stat(-40.0, 1000, &mut rng), 0.0);

        let mut rng = RngStream::new(3, 1).rng();
        let s = expfam_simulate_stat(0.0, 1_000_000, &mut rng);
        assert!((s - 0.5).abs() < 0.002, "s = {s}");

        let a = expfam_simulate_stat(0.3, 500, &mut RngStream::new(9, 4).rng());
        let b = expfam_simulate_stat(0.3, 500, &mut RngStream::new(9, 4).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn std_normal_cdf_reference_values() {
        assert_relative_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(std_normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-9);
        assert_relative_eq!(std_normal_cdf(3.09), 0.9989992175233859, epsilon = 1e-9);
    }
}

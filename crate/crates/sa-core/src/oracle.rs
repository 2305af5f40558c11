use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// A noisy query `theta -> W_theta` with `E[W_theta] = h(theta)`.
pub type DrawFn = Arc<dyn Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// The exact regression function, available in oracle mode and tests.
pub type ExactH = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A scalar function of the parameter, the `s(theta)` of the factorized
/// field `W_theta = s(theta) * U`.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One factorized draw: the data-dependent scalar map `s` plus the unit
/// direction `U` drawn for this step.
pub type FactorizedDraw = Arc<dyn Fn(&mut ChaCha8Rng) -> (ScalarFn, Vec<f64>) + Send + Sync>;

/// The stochastic field queried by every procedure.
///
/// `draw` must be deterministic given `(theta, rng state)`. When `exact_h`
/// is present, the sample mean of draws at fixed `theta` converges to
/// `exact_h(theta)`; ideal implicit steps require it. `factorized` exposes
/// the `W = s(theta) U` decomposition needed by the one-dimensional
/// shrinkage solver.
#[derive(Clone)]
pub struct StochasticOracle {
    dim: usize,
    draw: DrawFn,
    exact_h: Option<ExactH>,
    factorized: Option<FactorizedDraw>,
}

impl StochasticOracle {
    pub fn new(dim: usize, draw: DrawFn) -> Self {
        StochasticOracle {
            dim,
            draw,
            exact_h: None,
            factorized: None,
        }
    }

    /// A noise-free oracle whose draws equal the regression function itself.
    pub fn deterministic(dim: usize, h: ExactH) -> Self {
        let h_draw = h.clone();
        StochasticOracle {
            dim,
            draw: Arc::new(move |theta, _| h_draw(theta)),
            exact_h: Some(h),
            factorized: None,
        }
    }

    pub fn with_exact_h(mut self, h: ExactH) -> Self {
        self.exact_h = Some(h);
        self
    }

    pub fn with_factorized(mut self, f: FactorizedDraw) -> Self {
        self.factorized = Some(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        (self.draw)(theta, rng)
    }

    pub fn exact_h(&self) -> Option<&ExactH> {
        self.exact_h.as_ref()
    }

    pub fn factorized(&self) -> Option<&FactorizedDraw> {
        self.factorized.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sample_mean_converges_to_exact_h() {
        // h(theta) = theta, W = theta + N(0,1)
        let oracle = StochasticOracle::new(
            1,
            Arc::new(|theta, rng| {
                let z: f64 = StandardNormal.sample(rng);
                vec![theta[0] + z]
            }),
        )
        .with_exact_h(Arc::new(|theta| theta.to_vec()));

        let mut rng = RngStream::new(11, 0).rng();
        let theta = [2.5];
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| oracle.draw(&theta, &mut rng)[0]).sum::<f64>() / n as f64;
        let h = (oracle.exact_h().unwrap())(&theta)[0];
        // standard error 1/sqrt(n); allow 4 sigma
        assert!((mean - h).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn draw_is_deterministic_given_state() {
        let oracle = StochasticOracle::new(
            2,
            Arc::new(|theta, rng| {
                let z: f64 = StandardNormal.sample(rng);
                vec![theta[0] + z, theta[1] - z]
            }),
        );
        let a = oracle.draw(&[1.0, 2.0], &mut RngStream::new(3, 9).rng());
        let b = oracle.draw(&[1.0, 2.0], &mut RngStream::new(3, 9).rng());
        assert_eq!(a, b);
    }
}

use crate::error::SaError;
use crate::oracle::StochasticOracle;
use crate::procedure::norm;
use crate::rng::RngStream;
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Settings for the inner Robbins-Monro run approximating the implicit step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InnerRmConfig {
    /// Number of inner iterations.
    pub k: usize,
    /// Scale of the inner rate `a_k = a1 / k`.
    pub a1: f64,
}

impl Default for InnerRmConfig {
    // a_k = 10/k as in the quantile experiment. K must be large enough that
    // the final inner rate a_K * gamma_n is small next to the outer schedule;
    // at K = 50 the residual inner noise (a_K * gamma_1 ~ 59 for gamma_1 = 294)
    // strands the outer iterate in the flat region of the CDF, so the default
    // runs the inner chain longer.
    fn default() -> Self {
        InnerRmConfig { k: 500, a1: 10.0 }
    }
}

/// Result of a one-dimensional shrinkage solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolve {
    pub lambda: f64,
    /// `|lambda s(prev) - s(prev - gamma lambda s(prev) u)|` for the
    /// fixed-point method; the objective norm at the returned grid point for
    /// the grid method.
    pub residual: f64,
    pub iterations: usize,
    pub method: LambdaMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaMethod {
    Bisection,
    ClosedForm,
    Grid,
}

/// Approximate the implicit intermediate point with an inner Robbins-Monro
/// run: `x_k = x_{k-1} - a_k (gamma_n W_{x_{k-1}} + x_{k-1} - theta_prev)`,
/// fresh draws every inner step, returning `x_K`.
pub fn inner_rm(
    theta_prev: &[f64],
    gamma_n: f64,
    oracle: &StochasticOracle,
    cfg: &InnerRmConfig,
    stream: RngStream,
    guard_bound: f64,
) -> Vec<f64> {
    let mut rng = stream.rng();
    inner_rm_mut(theta_prev, gamma_n, oracle, cfg, &mut rng, guard_bound)
}

/// As [`inner_rm`] but advancing a caller-owned generator, so an outer
/// procedure can thread a single stream through all of its inner runs.
pub fn inner_rm_mut(
    theta_prev: &[f64],
    gamma_n: f64,
    oracle: &StochasticOracle,
    cfg: &InnerRmConfig,
    rng: &mut ChaCha8Rng,
    guard_bound: f64,
) -> Vec<f64> {
    assert!(cfg.k >= 1, "inner iteration count must be >= 1");
    let mut x = theta_prev.to_vec();
    for k in 1..=cfg.k {
        let a_k = cfg.a1 / k as f64;
        let w = oracle.draw(&x, rng);
        for i in 0..x.len() {
            x[i] -= a_k * (gamma_n * w[i] + x[i] - theta_prev[i]);
        }
        if norm(&x) > guard_bound {
            break;
        }
    }
    x
}

/// Solve `lambda s(theta_prev) = s(theta_prev - gamma_n lambda s(theta_prev) u)`.
///
/// The root of `g(lambda) = lambda s0 - s(theta_prev - gamma lambda s0 u)`
/// is bracketed starting from `[0, 1]` (the shrinkage range that holds under
/// strong convexity), expanding to `[-2, 4]` and then doubling.
pub fn solve_lambda<S>(
    theta_prev: &[f64],
    gamma_n: f64,
    s: S,
    u: &[f64],
    tol: f64,
) -> Result<LambdaSolve, SaError>
where
    S: Fn(&[f64]) -> f64,
{
    let u_norm = norm(u);
    if (u_norm - 1.0).abs() > 1e-12 {
        return Err(SaError::NonUnitDirection(u_norm));
    }

    let s0 = s(theta_prev);
    if s0 == 0.0 {
        // update is the zero vector for any lambda; identity-like convention
        return Ok(LambdaSolve {
            lambda: 1.0,
            residual: 0.0,
            iterations: 0,
            method: LambdaMethod::ClosedForm,
        });
    }

    let shifted = |lambda: f64| -> f64 {
        let step = gamma_n * lambda * s0;
        let theta: Vec<f64> = theta_prev.iter().zip(u).map(|(t, ui)| t - step * ui).collect();
        s(&theta)
    };
    let g = |lambda: f64| lambda * s0 - shifted(lambda);

    if gamma_n == 0.0 {
        // g(lambda) = (lambda - 1) s0
        return Ok(LambdaSolve {
            lambda: 1.0,
            residual: 0.0,
            iterations: 0,
            method: LambdaMethod::ClosedForm,
        });
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut g_lo = g(lo);
    let mut g_hi = g(hi);
    if g_lo == 0.0 {
        return Ok(LambdaSolve { lambda: lo, residual: 0.0, iterations: 0, method: LambdaMethod::Bisection });
    }
    if g_hi == 0.0 {
        return Ok(LambdaSolve { lambda: hi, residual: 0.0, iterations: 0, method: LambdaMethod::Bisection });
    }

    let mut expansions = 0;
    while g_lo * g_hi > 0.0 {
        if expansions == 0 {
            lo = -2.0;
            hi = 4.0;
        } else {
            if expansions > 60 {
                let residual = g_lo.abs().min(g_hi.abs());
                return Err(SaError::BracketFailure { residual });
            }
            let width = hi - lo;
            lo -= width;
            hi += width;
        }
        g_lo = g(lo);
        g_hi = g(hi);
        expansions += 1;
    }

    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid.abs() <= tol {
            return Ok(LambdaSolve {
                lambda: mid,
                residual: g_mid.abs(),
                iterations,
                method: LambdaMethod::Bisection,
            });
        }
        if g_mid * g_lo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    let residual = g(mid).abs();
    if residual <= tol {
        Ok(LambdaSolve { lambda: mid, residual, iterations, method: LambdaMethod::Bisection })
    } else {
        Err(SaError::NoConvergence { iterations, residual })
    }
}

/// Pick the shrinkage value on the grid `{0, 1/m, ..., 1}` minimizing
/// `|| lambda S_hat(prev; k) - S_hat(theta(lambda); k) ||^2` with
/// `theta(lambda) = theta_prev + gamma_n (s_obs - lambda S_hat(prev; k))`.
///
/// `S_hat(prev; k)` is simulated once and reused across the grid; every grid
/// point simulates from its own substream, so the result does not depend on
/// evaluation order. Ties break toward the smaller lambda.
pub fn grid_lambda<Sim>(
    theta_prev: &[f64],
    gamma_n: f64,
    s_obs: &[f64],
    simulator: Sim,
    k: usize,
    m: usize,
    stream: RngStream,
) -> LambdaSolve
where
    Sim: Fn(&[f64], usize, &mut ChaCha8Rng) -> Vec<f64>,
{
    assert!(m >= 1 && k >= 1);
    let mut rng_prev = stream.substream(0).rng();
    let s_hat_prev = simulator(theta_prev, k, &mut rng_prev);

    let mut best_lambda = 0.0;
    let mut best_obj = f64::INFINITY;
    for i in 0..=m {
        let lambda = i as f64 / m as f64;
        let theta_l: Vec<f64> = theta_prev
            .iter()
            .zip(s_obs)
            .zip(&s_hat_prev)
            .map(|((t, so), sp)| t + gamma_n * (so - lambda * sp))
            .collect();
        let mut rng_i = stream.substream(1 + i as u64).rng();
        let s_hat_l = simulator(&theta_l, k, &mut rng_i);
        let obj: f64 = s_hat_prev
            .iter()
            .zip(&s_hat_l)
            .map(|(sp, sl)| {
                let d = lambda * sp - sl;
                d * d
            })
            .sum();
        if obj < best_obj {
            best_obj = obj;
            best_lambda = lambda;
        }
    }

    LambdaSolve {
        lambda: best_lambda,
        residual: best_obj.sqrt(),
        iterations: m + 1,
        method: LambdaMethod::Grid,
    }
}

/// The asymptotic-covariance problem: Jacobian of `h` at the root, noise
/// covariance, and the learning rate scale.
#[derive(Clone, Debug)]
pub struct CovarianceProblem {
    pub j: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub gamma1: f64,
}

impl CovarianceProblem {
    pub fn new(j: DMatrix<f64>, xi: DMatrix<f64>, gamma1: f64) -> Result<Self, SaError> {
        let p = j.nrows();
        if !j.is_square() || !xi.is_square() || xi.nrows() != p {
            return Err(SaError::InvalidConfig(
                "J and Xi must be square matrices of equal size".into(),
            ));
        }
        let sym_dev = (&xi - xi.transpose()).abs().max();
        if sym_dev > 1e-10 {
            return Err(SaError::InvalidConfig("Xi must be symmetric".into()));
        }
        let eigs = xi.clone().symmetric_eigenvalues();
        if eigs.iter().any(|&e| e < -1e-10) {
            return Err(SaError::InvalidConfig("Xi must be positive semidefinite".into()));
        }
        let prob = CovarianceProblem { j, xi, gamma1 };
        if !prob.is_stable() {
            return Err(SaError::StabilityViolated);
        }
        Ok(prob)
    }

    /// Unique-solution condition: all eigenvalues of `gamma1 J - I/2` have
    /// positive real part.
    pub fn is_stable(&self) -> bool {
        self.drift()
            .complex_eigenvalues()
            .iter()
            .all(|e| e.re > 0.0)
    }

    fn drift(&self) -> DMatrix<f64> {
        let p = self.j.nrows();
        self.gamma1 * &self.j - 0.5 * DMatrix::identity(p, p)
    }
}

/// Solve the Lyapunov equation
/// `(gamma1 J - I/2) Sigma + Sigma (gamma1 J^T - I/2) = rhs`
/// by vectorizing to a dense `p^2 x p^2` linear system. O(p^6), fine for the
/// small `p` the diagnostics use.
pub fn lyapunov_sigma(prob: &CovarianceProblem, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SaError> {
    let a = prob.drift();
    let p = a.nrows();
    if rhs.nrows() != p || rhs.ncols() != p {
        return Err(SaError::DimensionMismatch { expected: p, got: rhs.nrows() });
    }

    // vec(A S) = (I (x) A) vec(S); vec(S A^T) = (A (x) I) vec(S)
    let eye = DMatrix::identity(p, p);
    let system = eye.kronecker(&a) + a.kronecker(&eye);
    let vec_rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let lu = system.lu();
    let solution = lu.solve(&vec_rhs).ok_or(SaError::StabilityViolated)?;
    let sigma = DMatrix::from_column_slice(p, p, solution.as_slice());
    // symmetrize: the exact solution is symmetric for symmetric rhs
    let sigma = 0.5 * (&sigma + sigma.transpose());

    let residual = (&a * &sigma + &sigma * a.transpose() - rhs).abs().max();
    if residual > 1e-10 {
        return Err(SaError::NoConvergence { iterations: 0, residual });
    }
    Ok(sigma)
}

/// Closed form `(2 gamma1 J - I)^{-1} rhs`, valid when `J` and `rhs` commute.
pub fn closed_form_sigma(
    prob: &CovarianceProblem,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SaError> {
    let commutator = (&prob.j * rhs - rhs * &prob.j).abs().max();
    if commutator > 1e-10 {
        return Err(SaError::NonCommuting(commutator));
    }
    let p = prob.j.nrows();
    let b = 2.0 * prob.gamma1 * &prob.j - DMatrix::identity(p, p);
    let inv = b.try_inverse().ok_or(SaError::StabilityViolated)?;
    Ok(inv * rhs)
}

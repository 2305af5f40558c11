use crate::error::SaError;
use crate::oracle::StochasticOracle;
use crate::rng::RngStream;
use crate::schedule::LearningRate;
use crate::solvers::{inner_rm_mut, solve_lambda, InnerRmConfig};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const DEFAULT_GUARD_BOUND: f64 = 1e8;
pub const DEFAULT_IMPLICIT_TOL: f64 = 1e-10;

/// How each step of `run_procedure` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Classic Robbins-Monro: `theta_n = theta_{n-1} - gamma_n W_{theta_{n-1}}`.
    Explicit,
    /// Oracle mode: solve `theta_bar = theta_prev - gamma_n h(theta_bar)`
    /// exactly, then draw the field at `theta_bar`.
    ImplicitIdeal,
    /// Factorized implicit update through the one-dimensional shrinkage
    /// fixed point `lambda s(theta_prev) = s(theta_prev - gamma lambda s U)`.
    ImplicitLambda,
    /// Approximate the intermediate point with an inner Robbins-Monro run.
    ImplicitInnerRm,
}

#[derive(Clone, Debug)]
pub struct ProcedureConfig {
    pub horizon: usize,
    pub theta0: Vec<f64>,
    pub rate: LearningRate,
    pub guard_bound: f64,
    pub mode: Mode,
    /// Inner-run settings, used by `ImplicitInnerRm`.
    pub inner: InnerRmConfig,
    /// Residual tolerance for implicit solves.
    pub implicit_tol: f64,
}

impl ProcedureConfig {
    pub fn new(horizon: usize, theta0: Vec<f64>, rate: LearningRate, mode: Mode) -> Self {
        ProcedureConfig {
            horizon,
            theta0,
            rate,
            guard_bound: DEFAULT_GUARD_BOUND,
            mode,
            inner: InnerRmConfig::default(),
            implicit_tol: DEFAULT_IMPLICIT_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), SaError> {
        if self.horizon < 1 {
            return Err(SaError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.guard_bound > 0.0) {
            return Err(SaError::InvalidConfig("guard_bound must be > 0".into()));
        }
        Ok(())
    }
}

/// The full iterate history of one procedure run.
///
/// Iterates are stored flat, `dim` values per step, `theta_0` first.
#[derive(Clone, Debug)]
pub struct Trace {
    dim: usize,
    data: Vec<f64>,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
    /// Implicit-solve failures that fell back to an explicit step.
    pub solver_failures: usize,
    pub wall_time: f64,
}

// wall_time is measurement metadata, not part of the run's identity
impl PartialEq for Trace {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.data == other.data
            && self.diverged == other.diverged
            && self.diverged_at == other.diverged_at
            && self.solver_failures == other.solver_failures
    }
}

impl Trace {
    pub fn with_capacity(dim: usize, steps: usize) -> Self {
        Trace {
            dim,
            data: Vec::with_capacity(dim * (steps + 1)),
            diverged: false,
            diverged_at: None,
            solver_failures: 0,
            wall_time: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored iterates, including `theta_0`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, theta: &[f64]) {
        debug_assert_eq!(theta.len(), self.dim);
        self.data.extend_from_slice(theta);
    }

    /// Iterate after `n` steps (`n = 0` is the starting point).
    pub fn iterate(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn iterates(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[f64] {
        self.iterate(self.len() - 1)
    }

    /// Final iterate of a one-dimensional run.
    pub fn final_scalar(&self) -> f64 {
        assert_eq!(self.dim, 1);
        *self.data.last().expect("empty trace")
    }

    pub fn scalar_iterates(&self) -> impl Iterator<Item = f64> + '_ {
        assert_eq!(self.dim, 1);
        self.data.iter().copied()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One explicit Robbins-Monro step `theta_prev - gamma_n * w`.
pub fn rm_step(theta_prev: &[f64], gamma_n: f64, w: &[f64]) -> Result<Vec<f64>, SaError> {
    if theta_prev.len() != w.len() {
        return Err(SaError::DimensionMismatch {
            expected: theta_prev.len(),
            got: w.len(),
        });
    }
    Ok(theta_prev
        .iter()
        .zip(w)
        .map(|(t, wi)| t - gamma_n * wi)
        .collect())
}

/// Solve the ideal implicit step `theta_bar = theta_prev - gamma_n h(theta_bar)`.
///
/// In one dimension `g(x) = x + gamma h(x) - theta_prev` is strictly
/// increasing whenever `h` is the gradient of a convex potential, so
/// bisection on an expanding bracket is globally safe. In higher dimensions
/// a damped fixed-point iteration is used, with the damping factor set from
/// an online estimate of the local Lipschitz constant of `h`.
pub fn ideal_implicit_step<H>(
    theta_prev: &[f64],
    gamma_n: f64,
    h: H,
    tol: f64,
) -> Result<Vec<f64>, SaError>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    assert!(tol > 0.0);
    if theta_prev.len() == 1 {
        implicit_1d(theta_prev[0], gamma_n, |x| h(&[x])[0], tol).map(|x| vec![x])
    } else {
        implicit_nd(theta_prev, gamma_n, h, tol)
    }
}

fn implicit_1d<H>(theta_prev: f64, gamma_n: f64, h: H, tol: f64) -> Result<f64, SaError>
where
    H: Fn(f64) -> f64,
{
    let g = |x: f64| x + gamma_n * h(x) - theta_prev;

    let half = gamma_n.abs() * h(theta_prev).abs() + 1.0;
    let mut lo = theta_prev - half;
    let mut hi = theta_prev + half;
    let mut g_lo = g(lo);
    let mut g_hi = g(hi);

    let mut expansions = 0;
    while g_lo * g_hi > 0.0 {
        if expansions >= 60 {
            let best = g_lo.abs().min(g_hi.abs());
            return Err(SaError::BracketFailure { residual: best });
        }
        let width = hi - lo;
        lo -= width;
        hi += width;
        g_lo = g(lo);
        g_hi = g(hi);
        expansions += 1;
    }

    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid.abs() <= tol {
            return Ok(mid);
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
        Ok(mid)
    } else {
        Err(SaError::NoConvergence {
            iterations: 200,
            residual,
        })
    }
}

fn implicit_nd<H>(theta_prev: &[f64], gamma_n: f64, h: H, tol: f64) -> Result<Vec<f64>, SaError>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let mut theta = theta_prev.to_vec();
    let mut h_val = h(&theta);
    let mut lipschitz = 0.0f64;
    let mut residual = f64::INFINITY;

    for _ in 0..500 {
        let next: Vec<f64> = theta_prev
            .iter()
            .zip(&h_val)
            .map(|(tp, hv)| tp - gamma_n * hv)
            .collect();
        let damping = 1.0 / (1.0 + gamma_n * lipschitz);
        let candidate: Vec<f64> = theta
            .iter()
            .zip(&next)
            .map(|(cur, nxt)| cur + damping * (nxt - cur))
            .collect();

        let h_candidate = h(&candidate);
        let step_norm = norm(&candidate
            .iter()
            .zip(&theta)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>());
        if step_norm > 0.0 {
            let dh = norm(&h_candidate
                .iter()
                .zip(&h_val)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>());
            lipschitz = lipschitz.max(dh / step_norm);
        }

        theta = candidate;
        h_val = h_candidate;

        let res_vec: Vec<f64> = theta
            .iter()
            .zip(theta_prev)
            .zip(&h_val)
            .map(|((t, tp), hv)| t + gamma_n * hv - tp)
            .collect();
        residual = norm(&res_vec);
        if residual <= tol {
            return Ok(theta);
        }
    }
    Err(SaError::NoConvergence {
        iterations: 500,
        residual,
    })
}

/// Run `horizon` steps of the selected mode, recording every iterate.
///
/// Divergence (an iterate norm above `guard_bound`) stops the run early and
/// is recorded on the trace, never raised as an error: the stability studies
/// deliberately provoke it. Implicit-solve failures fall back to an explicit
/// step with the same draw and increment `solver_failures`.
pub fn run_procedure(
    cfg: &ProcedureConfig,
    oracle: &StochasticOracle,
    stream: RngStream,
) -> Result<Trace, SaError> {
    cfg.validate()?;
    if oracle.dim() != cfg.theta0.len() {
        return Err(SaError::DimensionMismatch {
            expected: cfg.theta0.len(),
            got: oracle.dim(),
        });
    }
    if cfg.mode == Mode::ImplicitIdeal && oracle.exact_h().is_none() {
        return Err(SaError::MissingExactH);
    }
    if cfg.mode == Mode::ImplicitLambda && oracle.factorized().is_none() {
        return Err(SaError::MissingFactorization);
    }

    let start = Instant::now();
    let mut rng = stream.rng();
    let mut trace = Trace::with_capacity(cfg.theta0.len(), cfg.horizon);
    trace.push(&cfg.theta0);
    let mut theta = cfg.theta0.clone();

    for n in 1..=cfg.horizon {
        let gamma_n = cfg.rate.rate_at(n);
        theta = match cfg.mode {
            Mode::Explicit => {
                let w = oracle.draw(&theta, &mut rng);
                rm_step(&theta, gamma_n, &w)?
            }
            Mode::ImplicitIdeal => {
                let h = oracle.exact_h().expect("checked above").clone();
                match ideal_implicit_step(&theta, gamma_n, |t| h(t), cfg.implicit_tol) {
                    Ok(theta_bar) => {
                        let w = oracle.draw(&theta_bar, &mut rng);
                        rm_step(&theta, gamma_n, &w)?
                    }
                    Err(_) => {
                        trace.solver_failures += 1;
                        let w = oracle.draw(&theta, &mut rng);
                        rm_step(&theta, gamma_n, &w)?
                    }
                }
            }
            Mode::ImplicitLambda => {
                let (s, u) = (oracle.factorized().expect("checked above"))(&mut rng);
                match solve_lambda(&theta, gamma_n, |t| s(t), &u, cfg.implicit_tol) {
                    Ok(solve) => {
                        let scale = gamma_n * solve.lambda * s(&theta);
                        theta.iter().zip(&u).map(|(t, ui)| t - scale * ui).collect()
                    }
                    Err(_) => {
                        trace.solver_failures += 1;
                        let scale = gamma_n * s(&theta);
                        theta.iter().zip(&u).map(|(t, ui)| t - scale * ui).collect()
                    }
                }
            }
            Mode::ImplicitInnerRm => inner_rm_mut(
                &theta,
                gamma_n,
                oracle,
                &cfg.inner,
                &mut rng,
                cfg.guard_bound,
            ),
        };

        trace.push(&theta);
        if norm(&theta) > cfg.guard_bound {
            trace.diverged = true;
            trace.diverged_at = Some(n);
            break;
        }
    }

    trace.wall_time = start.elapsed().as_secs_f64();
    Ok(trace)
}

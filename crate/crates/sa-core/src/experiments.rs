//! Batch experiment driver behind the `sa` binary: config parsing with
//! defaults and flag overrides, replication studies with a deterministic
//! parallelism contract, and CSV/JSON report emission.

use crate::diagnostics::{fit_rate_slope, mse_curve, normality_check};
use crate::error::SaError;
use crate::estimators::{
    expfam_dataset, implicit_sgd, is_stuck_high, quantile_implicit, quantile_rm, sim_explicit,
    sim_implicit,
};
use crate::models::{
    expfam_simulate_stat, normal_linear_implicit_step, NormalLinearStream, QuantileOracle, XDist,
};
use crate::rng::RngStream;
use crate::schedule::LearningRate;
use crate::solvers::{CovarianceProblem, InnerRmConfig};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    QuantileFig,
    LmsCompare,
    Rates,
    Normality,
    SimExpfam,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Result<Self, SaError> {
        match name {
            "quantile-fig" => Ok(ExperimentKind::QuantileFig),
            "lms-compare" => Ok(ExperimentKind::LmsCompare),
            "rates" => Ok(ExperimentKind::Rates),
            "normality" => Ok(ExperimentKind::Normality),
            "sim-expfam" => Ok(ExperimentKind::SimExpfam),
            other => Err(SaError::UnknownExperiment(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::QuantileFig => "quantile-fig",
            ExperimentKind::LmsCompare => "lms-compare",
            ExperimentKind::Rates => "rates",
            ExperimentKind::Normality => "normality",
            ExperimentKind::SimExpfam => "sim-expfam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Fully resolved experiment settings.
///
/// In JSON config files the keys are the flat field names below; `K` is the
/// inner Robbins-Monro iteration count, `k` the per-simulation sample count,
/// and `m` the shrinkage grid resolution, mirroring the usual notation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub replications: usize,
    pub horizon: usize,
    pub gamma1_grid: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub theta0: f64,
    #[serde(rename = "K")]
    pub inner_k: usize,
    pub a1: f64,
    #[serde(rename = "k")]
    pub sim_k: usize,
    #[serde(rename = "m")]
    pub grid_m: usize,
    /// Worker threads for the replication pool; 0 means one per CPU.
    pub workers: usize,
    pub output_path: Option<String>,
    pub format: OutputFormat,
}

impl ExperimentConfig {
    /// Per-experiment defaults. The quantile study uses the classic
    /// setup: alpha = 0.999, theta0 = -10, 5000 iterations, 20 replications,
    /// a_k = 10/k, with a gamma1 grid spanning the slow, moderate, and
    /// overshoot regimes. The inner chain runs K = 500 steps; see
    /// [`InnerRmConfig`](crate::solvers::InnerRmConfig) for why shorter
    /// chains strand the implicit iterate at large gamma1.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            seed: 42,
            replications: 20,
            horizon: 5000,
            gamma1_grid: vec![1.0],
            gamma: 1.0,
            alpha: 0.999,
            theta0: 0.0,
            inner_k: 500,
            a1: 10.0,
            sim_k: 200,
            grid_m: 10,
            workers: 0,
            output_path: None,
            format: OutputFormat::Csv,
        };
        match kind {
            ExperimentKind::QuantileFig => ExperimentConfig {
                gamma1_grid: vec![0.1, 1.0, 5.0, 20.0, 294.0],
                theta0: -10.0,
                ..base
            },
            ExperimentKind::LmsCompare => ExperimentConfig {
                replications: 1,
                horizon: 10_000,
                ..base
            },
            ExperimentKind::Rates => ExperimentConfig {
                replications: 500,
                horizon: 100_000,
                ..base
            },
            ExperimentKind::Normality => ExperimentConfig {
                replications: 2000,
                horizon: 10_000,
                ..base
            },
            ExperimentKind::SimExpfam => ExperimentConfig {
                replications: 20,
                horizon: 1000,
                gamma1_grid: vec![2.0, 50.0],
                theta0: 0.5,
                sim_k: 50,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), SaError> {
        if self.replications < 1 {
            return Err(SaError::InvalidConfig("replications must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(SaError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.gamma1_grid.is_empty() {
            return Err(SaError::InvalidConfig("gamma1_grid must be nonempty".into()));
        }
        for &g1 in &self.gamma1_grid {
            LearningRate::new(g1, self.gamma)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SaError::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if self.inner_k < 1 || self.sim_k < 1 || self.grid_m < 1 {
            return Err(SaError::InvalidConfig("K, k, m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Unresolved overrides from flags or a config file; `None` means "not set".
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub horizon: Option<usize>,
    pub gamma1: Option<f64>,
    pub gamma1_grid: Option<Vec<f64>>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub theta0: Option<f64>,
    #[serde(rename = "K")]
    pub inner_k: Option<usize>,
    pub a1: Option<f64>,
    #[serde(rename = "k")]
    pub sim_k: Option<usize>,
    #[serde(rename = "m")]
    pub grid_m: Option<usize>,
    pub workers: Option<usize>,
    pub output_path: Option<String>,
    pub format: Option<OutputFormat>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(ref v) = self.gamma1_grid {
            cfg.gamma1_grid = v.clone();
        }
        if let Some(v) = self.gamma1 {
            cfg.gamma1_grid = vec![v];
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.theta0 {
            cfg.theta0 = v;
        }
        if let Some(v) = self.inner_k {
            cfg.inner_k = v;
        }
        if let Some(v) = self.a1 {
            cfg.a1 = v;
        }
        if let Some(v) = self.sim_k {
            cfg.sim_k = v;
        }
        if let Some(v) = self.grid_m {
            cfg.grid_m = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(ref v) = self.output_path {
            cfg.output_path = Some(v.clone());
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
    }
}

/// Resolve a full configuration from an optional JSON file plus flag
/// overrides. Flag values win over file values, which win over the
/// experiment's defaults.
pub fn parse_config(
    file: Option<&Path>,
    flags: &ConfigOverrides,
) -> Result<ExperimentConfig, SaError> {
    let file_overrides: ConfigOverrides = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| SaError::MalformedConfig {
                path: path.display().to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        }
        None => ConfigOverrides::default(),
    };

    let name = flags
        .experiment
        .as_deref()
        .or(file_overrides.experiment.as_deref())
        .ok_or_else(|| SaError::InvalidConfig("no experiment selected".into()))?;
    let kind = ExperimentKind::parse(name)?;

    let mut cfg = ExperimentConfig::defaults(kind);
    file_overrides.apply(&mut cfg);
    flags.apply(&mut cfg);
    if cfg.workers == 0 {
        if let Ok(env) = std::env::var("SA_WORKERS") {
            if let Ok(n) = env.parse::<usize>() {
                cfg.workers = n;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One typed cell of a report row.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Str(String),
    Bool(bool),
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportMeta {
    pub config: ExperimentConfig,
    pub version: String,
    /// Replication r always runs on `(seed, stream_id = r)`.
    pub stream_convention: String,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

fn fmt_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // integral values print exactly; keeps gamma1 = 294 readable
        format!("{}", v)
    } else {
        format!("{:.16e}", v)
    }
}

impl ExperimentReport {
    /// CSV with a header row; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                match cell {
                    Cell::Int(v) => {
                        let _ = write!(out, "{v}");
                    }
                    Cell::Float(v) => out.push_str(&fmt_float(*v)),
                    Cell::Str(v) => out.push_str(v),
                    Cell::Bool(v) => {
                        let _ = write!(out, "{v}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// JSON mirror of the CSV records plus the meta block.
    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|row| {
                self.header
                    .iter()
                    .zip(row)
                    .map(|(name, cell)| {
                        (name.clone(), serde_json::to_value(cell).expect("cell"))
                    })
                    .collect()
            })
            .collect();
        let doc = serde_json::json!({
            "meta": self.meta,
            "rows": rows,
        });
        serde_json::to_string_pretty(&doc).expect("report serialization")
    }
}

/// Run the configured experiment on a worker pool of `cfg.workers` threads.
/// Replication `r` draws from `(seed, stream_id = r)` and results are
/// reduced in replication order, so the report does not depend on the
/// worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, SaError> {
    cfg.validate()?;
    let start = Instant::now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SaError::InvalidConfig(format!("worker pool: {e}")))?;

    let (header, rows) = pool.install(|| match cfg.experiment {
        ExperimentKind::QuantileFig => quantile_fig(cfg),
        ExperimentKind::LmsCompare => lms_compare(cfg),
        ExperimentKind::Rates => rates(cfg),
        ExperimentKind::Normality => normality(cfg),
        ExperimentKind::SimExpfam => sim_expfam(cfg),
    })?;

    Ok(ExperimentReport {
        meta: ReportMeta {
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            stream_convention: "replication r uses (seed, stream_id = r)".to_string(),
            runtime_seconds: start.elapsed().as_secs_f64(),
        },
        header,
        rows,
    })
}

type Rows = (Vec<String>, Vec<Vec<Cell>>);

fn quantile_fig(cfg: &ExperimentConfig) -> Result<Rows, SaError> {
    let oracle = QuantileOracle::standard_normal(cfg.alpha)?;
    let theta_star = oracle.theta_star;
    let inner = InnerRmConfig {
        k: cfg.inner_k,
        a1: cfg.a1,
    };
    let header = vec![
        "gamma1".into(),
        "method".into(),
        "replication".into(),
        "final_theta".into(),
        "diverged".into(),
        "stuck".into(),
    ];
    let mut rows = Vec::new();
    for &gamma1 in &cfg.gamma1_grid {
        let rate = LearningRate::new(gamma1, cfg.gamma)?;
        for method in ["rm", "implicit"] {
            let per_rep: Vec<Vec<Cell>> = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let stream = RngStream::new(cfg.seed, r);
                    let trace = if method == "rm" {
                        quantile_rm(&oracle, rate, cfg.theta0, cfg.horizon, stream)
                    } else {
                        quantile_implicit(&oracle, rate, cfg.theta0, cfg.horizon, inner, stream)
                    };
                    vec![
                        Cell::Float(gamma1),
                        Cell::Str(method.to_string()),
                        Cell::Int(r),
                        Cell::Float(trace.final_scalar()),
                        Cell::Bool(trace.diverged),
                        Cell::Bool(is_stuck_high(&trace, theta_star)),
                    ]
                })
                .collect();
            rows.extend(per_rep);
        }
    }
    Ok((header, rows))
}

fn lms_compare(cfg: &ExperimentConfig) -> Result<Rows, SaError> {
    let gamma1 = cfg.gamma1_grid[0];
    let rate = LearningRate::new(gamma1, cfg.gamma)?;
    let stream = NormalLinearStream::new(1.0, XDist::StandardNormal, 1.0);

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| {
            let rng_stream = RngStream::new(cfg.seed, r);
            let trace = implicit_sgd(&stream, rate, cfg.theta0, cfg.horizon, rng_stream);
            // replay the identical draws through the closed-form recursion
            let mut rng = rng_stream.rng();
            let mut theta = cfg.theta0;
            trace
                .scalar_iterates()
                .skip(1)
                .enumerate()
                .map(|(i, got)| {
                    let (x, y) = stream.next_point(&mut rng);
                    theta = normal_linear_implicit_step(theta, rate.rate_at(i + 1), x, y);
                    (got - theta).abs()
                })
                .collect()
        })
        .collect();

    let header = vec!["step".into(), "max_abs_diff".into()];
    let rows = (0..cfg.horizon)
        .map(|i| {
            let max = per_rep
                .iter()
                .map(|diffs| diffs[i])
                .fold(0.0f64, f64::max);
            vec![Cell::Int(i as u64 + 1), Cell::Float(max)]
        })
        .collect();
    Ok((header, rows))
}

fn rates(cfg: &ExperimentConfig) -> Result<Rows, SaError> {
    let gamma1 = cfg.gamma1_grid[0];
    let rate = LearningRate::new(gamma1, cfg.gamma)?;
    let stream = NormalLinearStream::new(1.0, XDist::Fixed(1.0), 1.0);
    let checkpoints: Vec<usize> = [1000, 3000, 10_000, 30_000, 100_000]
        .into_iter()
        .filter(|&n| n <= cfg.horizon)
        .collect();
    let theta0 = cfg.theta0;
    let horizon = cfg.horizon;
    let seed = cfg.seed;
    let curve = mse_curve(
        |r| implicit_sgd(&stream, rate, theta0, horizon, RngStream::new(seed, r)),
        &[stream.theta_star],
        cfg.replications,
        &checkpoints,
        false,
    );
    let n_min = *checkpoints.first().unwrap();
    let n_max = *checkpoints.last().unwrap();
    let fit = fit_rate_slope(&curve.points, n_min, n_max)?;

    let header = vec![
        "model".into(),
        "gamma".into(),
        "slope".into(),
        "intercept".into(),
        "r_squared".into(),
        "n_min".into(),
        "n_max".into(),
    ];
    let rows = vec![vec![
        Cell::Str("normal_linear_implicit".into()),
        Cell::Float(cfg.gamma),
        Cell::Float(fit.slope),
        Cell::Float(fit.intercept),
        Cell::Float(fit.r_squared),
        Cell::Int(n_min as u64),
        Cell::Int(n_max as u64),
    ]];
    Ok((header, rows))
}

fn normality(cfg: &ExperimentConfig) -> Result<Rows, SaError> {
    let gamma1 = cfg.gamma1_grid[0];
    let rate = LearningRate::new(gamma1, cfg.gamma)?;
    let stream = NormalLinearStream::new(1.0, XDist::Fixed(1.0), 1.0);
    // h(theta) = (theta - theta*) x^2, so J = x^2 = 1; xi_n = -eps x^2,
    // so Xi = x^4 sigma^2 = 1
    let prob = CovarianceProblem::new(
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        gamma1,
    )?;
    let theta0 = cfg.theta0;
    let horizon = cfg.horizon;
    let seed = cfg.seed;
    let report = normality_check(
        |r| implicit_sgd(&stream, rate, theta0, horizon, RngStream::new(seed, r)),
        &prob,
        cfg.gamma,
        cfg.horizon,
        cfg.replications,
        &[stream.theta_star],
    )?;

    let header = vec![
        "scaling".into(),
        "rel_error".into(),
        "replications".into(),
        "horizon".into(),
    ];
    let rows = vec![
        vec![
            Cell::Str("unit".into()),
            Cell::Float(report.rel_error_unit),
            Cell::Int(report.replications as u64),
            Cell::Int(cfg.horizon as u64),
        ],
        vec![
            Cell::Str("gamma1_squared".into()),
            Cell::Float(report.rel_error_gamma1_sq),
            Cell::Int(report.replications as u64),
            Cell::Int(cfg.horizon as u64),
        ],
    ];
    Ok((header, rows))
}

fn sim_expfam(cfg: &ExperimentConfig) -> Result<Rows, SaError> {
    let theta_star = 0.0;
    let dataset = expfam_dataset(theta_star, 200, RngStream::new(cfg.seed, u64::MAX));
    let sim =
        |t: &[f64], k: usize, rng: &mut ChaCha8Rng| vec![expfam_simulate_stat(t[0], k, rng)];

    let header = vec![
        "method".into(),
        "gamma1".into(),
        "replication".into(),
        "final_theta".into(),
        "max_abs_theta".into(),
        "diverged".into(),
    ];
    let mut rows = Vec::new();
    for &gamma1 in &cfg.gamma1_grid {
        let rate = LearningRate::new(gamma1, cfg.gamma)?;
        for method in ["explicit", "implicit"] {
            let per_rep: Vec<Vec<Cell>> = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let stream = RngStream::new(cfg.seed, r);
                    let trace = if method == "explicit" {
                        sim_explicit(
                            &dataset, sim, rate, cfg.sim_k, cfg.theta0, cfg.horizon, stream,
                        )
                    } else {
                        sim_implicit(
                            &dataset, sim, rate, cfg.sim_k, cfg.grid_m, cfg.theta0, cfg.horizon,
                            stream,
                        )
                    };
                    let max_abs = trace.scalar_iterates().fold(0.0f64, |a, t| a.max(t.abs()));
                    vec![
                        Cell::Str(method.to_string()),
                        Cell::Float(gamma1),
                        Cell::Int(r),
                        Cell::Float(trace.final_scalar()),
                        Cell::Float(max_abs),
                        Cell::Bool(trace.diverged),
                    ]
                })
                .collect();
            rows.extend(per_rep);
        }
    }
    Ok((header, rows))
}

/// Write the report in the requested format, to the output path if one is
/// configured, otherwise to stdout.
pub fn emit_report(report: &ExperimentReport, format: OutputFormat) -> Result<(), SaError> {
    let body = match format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => report.to_json(),
    };
    match &report.meta.config.output_path {
        Some(path) => std::fs::write(path, body)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

//! Closed-form M-step, initialization and the EM driver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GscError, Result};
use crate::inference::{build_state_contexts, row_major, StateContexts, CHUNK_POINTS};
use crate::linalg::{cholesky_with_jitter, jitter_amount, solve_right_psd, symmetrize, LN_2PI};
use crate::metrics::ortho_deviation;
use crate::model::{check_hidden_cap, clamp_pi, Dataset, ModelParams};
use crate::rng::{derive_seed, rng_from_seed};

/// Range of the uniform draw for initial activation probabilities.
pub const PI_INIT_RANGE: (f64, f64) = (0.05, 0.95);

/// Dataset-level sums of posterior moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `sum_n y_n <s⊙z>_n^T`, D×H.
    pub sum_y_xt: DMatrix<f64>,
    /// `sum_n <(s⊙z)(s⊙z)^T>_n`, H×H.
    pub sum_xxt: DMatrix<f64>,
    /// `sum_n <s>_n`.
    pub sum_s: DVector<f64>,
    /// `sum_n y_n y_n^T`, D×D.
    pub sum_yyt: DMatrix<f64>,
    pub n_points: usize,
    /// `log p(Y | Theta)` at the parameters the moments were taken under.
    pub total_log_lik: f64,
}

struct Partial {
    sum_y_xt: Vec<f64>,
    sum_xxt: Vec<f64>,
    sum_s: Vec<f64>,
    log_lik: f64,
}

/// E-step over the whole dataset.
///
/// Points are processed in fixed-size chunks and the chunk partials are added
/// in chunk order, so the result is bit-identical for any thread count.
pub fn expectation_step(contexts: &StateContexts, data: &Dataset) -> Result<SufficientStats> {
    let d = contexts.dim();
    let h = contexts.hidden();
    if data.dim() != d {
        return Err(GscError::Input(format!(
            "dataset has {} columns, model expects {d}",
            data.dim()
        )));
    }
    let rows = row_major(&data.y);
    let partials: Vec<Partial> = rows
        .par_chunks(CHUNK_POINTS * d)
        .map(|chunk| {
            let mut ws = contexts.workspace();
            let mut p = Partial {
                sum_y_xt: vec![0.0; d * h],
                sum_xxt: vec![0.0; h * h],
                sum_s: vec![0.0; h],
                log_lik: 0.0,
            };
            for y in chunk.chunks(d) {
                p.log_lik += contexts.accumulate_point(y, &mut ws);
                for (acc, v) in p.sum_s.iter_mut().zip(&ws.es) {
                    *acc += v;
                }
                for (acc, v) in p.sum_xxt.iter_mut().zip(&ws.eszsz) {
                    *acc += v;
                }
                for (i, yi) in y.iter().enumerate() {
                    let row = &mut p.sum_y_xt[i * h..(i + 1) * h];
                    for (acc, x) in row.iter_mut().zip(&ws.esz) {
                        *acc += yi * x;
                    }
                }
            }
            p
        })
        .collect();

    let mut sum_y_xt = vec![0.0; d * h];
    let mut sum_xxt = vec![0.0; h * h];
    let mut sum_s = vec![0.0; h];
    let mut total_log_lik = 0.0;
    for p in &partials {
        sum_y_xt.iter_mut().zip(&p.sum_y_xt).for_each(|(a, b)| *a += b);
        sum_xxt.iter_mut().zip(&p.sum_xxt).for_each(|(a, b)| *a += b);
        sum_s.iter_mut().zip(&p.sum_s).for_each(|(a, b)| *a += b);
        total_log_lik += p.log_lik;
    }
    let mut sum_xxt = DMatrix::from_row_slice(h, h, &sum_xxt);
    for i in 0..h {
        for j in 0..i {
            sum_xxt[(i, j)] = sum_xxt[(j, i)];
        }
    }
    Ok(SufficientStats {
        sum_y_xt: DMatrix::from_row_slice(d, h, &sum_y_xt),
        sum_xxt,
        sum_s: DVector::from_vec(sum_s),
        sum_yyt: data.scatter(),
        n_points: data.n_points(),
        total_log_lik,
    })
}

/// `W = (sum_n y <x>^T)(sum_n <x x^T>)^-1`.
///
/// Returns the new basis and the hidden units for which `sum_xxt` was
/// numerically singular (those are solved through a pseudo-inverse).
pub fn mstep_w(stats: &SufficientStats) -> (DMatrix<f64>, Vec<usize>) {
    solve_right_psd(&stats.sum_y_xt, &stats.sum_xxt)
}

/// Noise covariance update given the freshly updated basis.
pub fn mstep_sigma(stats: &SufficientStats, w: &DMatrix<f64>, isotropic: bool) -> Result<DMatrix<f64>> {
    if stats.n_points == 0 {
        return Err(GscError::Input("no points in sufficient statistics".into()));
    }
    let n = stats.n_points as f64;
    let cross = w * stats.sum_y_xt.transpose();
    let raw = (&stats.sum_yyt - &cross - cross.transpose() + w * &stats.sum_xxt * w.transpose()) / n;
    let mut sigma = symmetrize(&raw);
    if isotropic {
        let d = sigma.nrows();
        let var = sigma.trace() / d as f64;
        sigma = DMatrix::identity(d, d) * var;
    }
    if nalgebra::Cholesky::new(sigma.clone()).is_none() {
        let eps = jitter_amount(&sigma);
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += eps;
        }
        if nalgebra::Cholesky::new(sigma.clone()).is_none() {
            return Err(GscError::Numerical(
                "updated Sigma is not positive definite".into(),
            ));
        }
    }
    Ok(sigma)
}

/// `pi = (1/N) sum_n <s>_n`, clamped away from 0 and 1.
pub fn mstep_pi(stats: &SufficientStats) -> DVector<f64> {
    let n = stats.n_points.max(1) as f64;
    stats.sum_s.map(|s| clamp_pi(s / n))
}

/// Expected complete-data log-likelihood of `params` under fixed statistics,
/// dropping terms that do not depend on the parameters.
pub fn q_surrogate(stats: &SufficientStats, params: &ModelParams) -> Result<f64> {
    let n = stats.n_points as f64;
    let d = params.observed_dim() as f64;
    let (chol, _) = cholesky_with_jitter(&params.sigma, "Sigma")?;
    let w = &params.w;
    let cross = w * stats.sum_y_xt.transpose();
    let resid = &stats.sum_yyt - &cross - cross.transpose() + w * &stats.sum_xxt * w.transpose();
    let trace_term = chol.solve(&resid).trace();
    let log_det = crate::linalg::chol_log_det(&chol);
    let mut q = -0.5 * n * (d * LN_2PI + log_det) - 0.5 * trace_term;
    for (h, &p) in params.pi.iter().enumerate() {
        let on = stats.sum_s[h];
        let off = n - on;
        if on > 0.0 {
            q += on * p.ln();
        }
        if off > 0.0 {
            q += off * (1.0 - p).ln();
        }
    }
    Ok(q)
}

/// Random starting point: `W_dh ~ N(0, 1)`, `Sigma` = sample covariance of
/// the data and `pi_h ~ U(PI_INIT_RANGE)`.
pub fn init_params(data: &Dataset, hidden: usize, seed: u64) -> Result<ModelParams> {
    if data.n_points() < 2 {
        return Err(GscError::Input(
            "at least two points are needed to initialize Sigma".into(),
        ));
    }
    check_hidden_cap(hidden)?;
    if hidden == 0 {
        return Err(GscError::Input("hidden dimension must be at least 1".into()));
    }
    let d = data.dim();
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(d, hidden);
    for i in 0..d {
        for j in 0..hidden {
            w[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let (lo, hi) = PI_INIT_RANGE;
    let pi = DVector::from_fn(hidden, |_, _| rng.random_range(lo..hi));
    let mut sigma = symmetrize(&data.sample_covariance());
    if nalgebra::Cholesky::new(sigma.clone()).is_none() {
        let eps = jitter_amount(&sigma);
        for i in 0..d {
            sigma[(i, i)] += eps;
        }
    }
    ModelParams::new(w, sigma, pi)
}

/// Settings for one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of hidden units `H`.
    pub hidden: usize,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood gain of an iteration drops below this.
    pub rel_tol: f64,
    /// Replace the updated Sigma by `trace(Sigma)/D · I`.
    pub isotropic_sigma: bool,
    pub seed: u64,
    /// Keep every iteration's log-likelihood (otherwise only first and last).
    pub record_trace: bool,
    /// When false, `pi` stays at its initial value.
    pub update_pi: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            hidden: 2,
            max_iters: 300,
            rel_tol: 1e-8,
            isotropic_sigma: false,
            seed: 0,
            record_trace: true,
            update_pi: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GscError::Input("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(GscError::Input("rel_tol must be non-negative".into()));
        }
        if self.hidden == 0 {
            return Err(GscError::Input("hidden dimension must be at least 1".into()));
        }
        check_hidden_cap(self.hidden)
    }
}

/// Outcome of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Log-likelihood at the initial parameters followed by one entry per iteration.
    pub log_lik_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub seed: u64,
    /// Restart index within a multi-restart batch (0 for a single fit).
    pub restart: usize,
    /// Largest deviation from 90° between two learned basis vectors; `None`
    /// when a basis vector vanished.
    pub ortho_deviation_deg: Option<f64>,
    pub pruned_dims: Vec<usize>,
    /// Hidden units whose second-moment sums were singular in the last M-step.
    pub degenerate_dims: Vec<usize>,
}

impl FitResult {
    pub fn final_log_lik(&self) -> f64 {
        *self.log_lik_trace.last().expect("trace is never empty")
    }
}

/// A failed run, with whatever trace was recorded before the failure.
#[derive(Debug)]
pub struct FitFailure {
    pub error: GscError,
    pub partial_trace: Vec<f64>,
    pub seed: u64,
    pub restart: usize,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run {} (seed {}) failed after {} log-likelihood evaluations: {}",
            self.restart,
            self.seed,
            self.partial_trace.len(),
            self.error
        )
    }
}

impl std::error::Error for FitFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// One M-step: `W`, then `Sigma` with the new `W`, then `pi`.
pub fn maximization_step(
    stats: &SufficientStats,
    current: &ModelParams,
    options: &FitOptions,
) -> Result<(ModelParams, Vec<usize>)> {
    let (w, degenerate) = mstep_w(stats);
    let sigma = mstep_sigma(stats, &w, options.isotropic_sigma)?;
    let pi = if options.update_pi {
        mstep_pi(stats)
    } else {
        current.pi.clone()
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(GscError::Numerical("updated W has non-finite entries".into()));
    }
    Ok((ModelParams { w, sigma, pi }, degenerate))
}

/// Runs EM from a random initialization drawn with `options.seed`.
pub fn fit(data: &Dataset, options: &FitOptions) -> std::result::Result<FitResult, FitFailure> {
    let fail = |error| FitFailure {
        error,
        partial_trace: Vec::new(),
        seed: options.seed,
        restart: 0,
    };
    options.validate().map_err(fail)?;
    let mut init = init_params(data, options.hidden, options.seed).map_err(fail)?;
    if options.isotropic_sigma {
        // start inside the isotropic family so every iteration is an ascent step
        let d = init.sigma.nrows();
        init.sigma = DMatrix::identity(d, d) * (init.sigma.trace() / d as f64);
    }
    fit_from(data, init, options)
}

/// Runs EM from the given parameters.
pub fn fit_from(
    data: &Dataset,
    init: ModelParams,
    options: &FitOptions,
) -> std::result::Result<FitResult, FitFailure> {
    let mut trace = Vec::new();
    let outcome = run_em(data, init, options, &mut trace);
    let compact = |trace: Vec<f64>| -> Vec<f64> {
        if options.record_trace || trace.len() <= 2 {
            trace
        } else {
            vec![trace[0], trace[trace.len() - 1]]
        }
    };
    match outcome {
        Ok((params, iterations_run, converged, degenerate_dims)) => Ok(FitResult {
            ortho_deviation_deg: ortho_deviation(&params.w).ok(),
            pruned_dims: params.pruned_dims(),
            params,
            log_lik_trace: compact(trace),
            iterations_run,
            converged,
            seed: options.seed,
            restart: 0,
            degenerate_dims,
        }),
        Err(error) => Err(FitFailure {
            error,
            partial_trace: trace,
            seed: options.seed,
            restart: 0,
        }),
    }
}

fn run_em(
    data: &Dataset,
    init: ModelParams,
    options: &FitOptions,
    trace: &mut Vec<f64>,
) -> Result<(ModelParams, usize, bool, Vec<usize>)> {
    options.validate()?;
    if init.hidden_dim() != options.hidden {
        return Err(GscError::Input(format!(
            "initial parameters have H = {}, options request H = {}",
            init.hidden_dim(),
            options.hidden
        )));
    }
    if init.observed_dim() != data.dim() {
        return Err(GscError::Input(format!(
            "initial parameters have D = {}, data has D = {}",
            init.observed_dim(),
            data.dim()
        )));
    }
    let mut params = init;
    let mut stats = expectation_step(&build_state_contexts(&params)?, data)?;
    check_finite(stats.total_log_lik)?;
    trace.push(stats.total_log_lik);
    let mut degenerate = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        let (next, flags) = maximization_step(&stats, &params, options)?;
        params = next;
        degenerate = flags;
        let prev = stats.total_log_lik;
        stats = expectation_step(&build_state_contexts(&params)?, data)?;
        check_finite(stats.total_log_lik)?;
        trace.push(stats.total_log_lik);
        iterations += 1;
        if (stats.total_log_lik - prev) < options.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok((params, iterations, converged, degenerate))
}

fn check_finite(ll: f64) -> Result<()> {
    if ll.is_finite() {
        Ok(())
    } else {
        Err(GscError::Numerical(format!("log-likelihood became {ll}")))
    }
}

/// Results of a batch of independent restarts.
#[derive(Debug)]
pub struct RestartBatch {
    /// Successful runs, best final log-likelihood first.
    pub results: Vec<FitResult>,
    pub failures: Vec<FitFailure>,
}

/// Seed used by restart `index` of a batch with master seed `master`.
pub fn restart_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, "restart", index as u64)
}

/// Runs `restarts` independent fits with seeds derived from `options.seed`.
///
/// Fails only when every run fails.
pub fn multi_restart(data: &Dataset, options: &FitOptions, restarts: usize) -> Result<RestartBatch> {
    if restarts == 0 {
        return Err(GscError::Input("restarts must be at least 1".into()));
    }
    options.validate()?;
    let outcomes: Vec<_> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let opts = FitOptions {
                seed: restart_seed(options.seed, i),
                ..options.clone()
            };
            fit(data, &opts)
                .map(|mut r| {
                    r.restart = i;
                    r
                })
                .map_err(|mut f| {
                    f.restart = i;
                    f
                })
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    if results.is_empty() {
        let first = failures.remove(0);
        return Err(GscError::Numerical(format!(
            "all {restarts} restarts failed; first: {first}"
        )));
    }
    results.sort_by(|a, b| {
        b.final_log_lik()
            .total_cmp(&a.final_log_lik())
            .then(a.restart.cmp(&b.restart))
    });
    Ok(RestartBatch { results, failures })
}

//! Exact posterior inference over all `2^H` binary supports.
//!
//! For a fixed support `s` with active columns `W_s` the model is linear
//! Gaussian, so
//!
//! ```text
//! p(y | s)     = N(y; 0, C_s),        C_s = W_s W_s^T + Sigma
//! p(z_s | s,y) = N(kappa_s, Lambda_s), Lambda_s = (W_s^T Sigma^-1 W_s + I_k)^-1
//!                                      kappa_s  = Lambda_s W_s^T Sigma^-1 y
//! ```
//!
//! All per-state algebra is done on the `k×k` active block. Inactive entries of
//! `s ⊙ z` are identically zero, so they contribute nothing to the moments.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{GscError, Result};
use crate::linalg::{chol_log_det, cholesky_with_jitter, logsumexp, LN_2PI};
use crate::model::{check_hidden_cap, enumerate_states, log_state_prior, validate_params, BinaryState, Dataset, ModelParams};

/// Per-state quantities that depend only on the parameters.
#[derive(Debug, Clone)]
pub struct StateContext {
    pub state: BinaryState,
    /// Lower Cholesky factor of `C_s`, row-major `D×D`.
    chol_c: Vec<f64>,
    pub log_det_c: f64,
    /// `Lambda_s` on the active block, row-major `k×k`.
    lambda: Vec<f64>,
    /// `Lambda_s W_s^T Sigma^-1`, row-major `k×D`.
    gain: Vec<f64>,
    pub log_prior: f64,
    /// `log_prior - (D log 2pi + log det C_s) / 2`.
    log_norm: f64,
}

impl StateContext {
    pub fn dim(&self) -> usize {
        (self.chol_c.len() as f64).sqrt() as usize
    }

    pub fn chol_c(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.chol_c)
    }

    pub fn c(&self) -> DMatrix<f64> {
        let l = self.chol_c();
        &l * l.transpose()
    }

    pub fn lambda_active(&self) -> DMatrix<f64> {
        let k = self.state.popcount();
        DMatrix::from_row_slice(k, k, &self.lambda)
    }

    pub fn gain_active(&self) -> DMatrix<f64> {
        let k = self.state.popcount();
        DMatrix::from_row_slice(k, self.dim(), &self.gain)
    }

    /// `log p(s) + log N(y; 0, C_s)`.
    fn log_joint(&self, y: &[f64], scratch: &mut [f64]) -> f64 {
        if self.log_norm == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let d = y.len();
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol_c[i * d..i * d + i];
            let mut acc = y[i];
            for (l, v) in row.iter().zip(&scratch[..i]) {
                acc -= l * v;
            }
            let v = acc / self.chol_c[i * d + i];
            scratch[i] = v;
            quad += v * v;
        }
        self.log_norm - 0.5 * quad
    }
}

/// The full set of state contexts for one parameter value, in canonical order.
#[derive(Debug, Clone)]
pub struct StateContexts {
    dim: usize,
    hidden: usize,
    contexts: Vec<StateContext>,
}

/// Builds `C_s`, its Cholesky factor, `Lambda_s`, the kappa gain and the log
/// prior for every state.
pub fn build_state_contexts(params: &ModelParams) -> Result<StateContexts> {
    validate_params(params).into_result()?;
    let (d, hidden) = params.w.shape();
    check_hidden_cap(hidden)?;
    let (sigma_chol, _) = cholesky_with_jitter(&params.sigma, "Sigma")?;
    let sigma_inv = sigma_chol.inverse();
    // Sigma^-1 W, shared by every state.
    let sinv_w = &sigma_inv * &params.w;

    let contexts = enumerate_states(hidden)?
        .into_par_iter()
        .map(|state| build_one(params, &sigma_inv, &sinv_w, state))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateContexts {
        dim: d,
        hidden,
        contexts,
    })
}

fn build_one(
    params: &ModelParams,
    sigma_inv: &DMatrix<f64>,
    sinv_w: &DMatrix<f64>,
    state: BinaryState,
) -> Result<StateContext> {
    let d = params.w.nrows();
    let active = state.active_set();
    let k = active.len();
    let w_s = params.w.select_columns(active);

    let c = &w_s * w_s.transpose() + &params.sigma;
    let (chol, _) = cholesky_with_jitter(&c, &format!("C_s for state {}", state.index()))?;
    let log_det_c = chol_log_det(&chol);
    let l = chol.l();
    let chol_c: Vec<f64> = (0..d * d).map(|i| l[(i / d, i % d)]).collect();

    let (lambda, gain) = if k == 0 {
        (Vec::new(), Vec::new())
    } else {
        // W_s^T Sigma^-1 W_s, symmetrized against rounding.
        let sinv_w_s = sinv_w.select_columns(active);
        let mut precision = w_s.transpose() * &sinv_w_s;
        precision = (&precision + precision.transpose()) * 0.5;
        for i in 0..k {
            precision[(i, i)] += 1.0;
        }
        let (pchol, _) = cholesky_with_jitter(
            &precision,
            &format!("posterior precision for state {}", state.index()),
        )?;
        let mut lam = pchol.inverse();
        lam = (&lam + lam.transpose()) * 0.5;
        let g = &lam * w_s.transpose() * sigma_inv;
        let lam_flat = (0..k * k).map(|i| lam[(i / k, i % k)]).collect();
        let g_flat = (0..k * d).map(|i| g[(i / d, i % d)]).collect();
        (lam_flat, g_flat)
    };

    let log_prior = log_state_prior(&state, &params.pi);
    let log_norm = if log_prior == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_prior - 0.5 * (d as f64 * LN_2PI + log_det_c)
    };
    Ok(StateContext {
        state,
        chol_c,
        log_det_c,
        lambda,
        gain,
        log_prior,
        log_norm,
    })
}

/// Normalized log posterior weights over states plus the per-state posterior
/// mean of `s ⊙ z`.
#[derive(Debug, Clone)]
pub struct StatePosterior {
    pub log_weights: Vec<f64>,
    /// Length-`H` vectors, exactly zero outside each state's active set.
    pub kappa: Vec<DVector<f64>>,
    /// `log p(y | Theta)`.
    pub log_lik: f64,
}

/// Posterior moments for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMoments {
    /// `<s>`
    pub es: DVector<f64>,
    /// `<s ⊙ z>`
    pub esz: DVector<f64>,
    /// `<(s ⊙ z)(s ⊙ z)^T>`
    pub eszsz: DMatrix<f64>,
    pub log_lik: f64,
}

/// Reusable buffers for per-point evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    log_joint: Vec<f64>,
    solve: Vec<f64>,
    kappa: Vec<f64>,
    pub(crate) es: Vec<f64>,
    pub(crate) esz: Vec<f64>,
    /// Row-major `H×H`, upper triangle only until `finish_symmetric` runs.
    pub(crate) eszsz: Vec<f64>,
}

impl StateContexts {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn contexts(&self) -> &[StateContext] {
        &self.contexts
    }

    pub fn workspace(&self) -> Workspace {
        let h = self.hidden;
        Workspace {
            log_joint: vec![0.0; self.contexts.len()],
            solve: vec![0.0; self.dim],
            kappa: vec![0.0; h],
            es: vec![0.0; h],
            esz: vec![0.0; h],
            eszsz: vec![0.0; h * h],
        }
    }

    fn check_obs(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(GscError::Input(format!(
                "observation has length {}, expected {}",
                y.len(),
                self.dim
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GscError::Input("observation has non-finite entries".into()));
        }
        Ok(())
    }

    /// Fills `ws.log_joint` and returns `log p(y | Theta)`.
    fn log_joint_all(&self, y: &[f64], ws: &mut Workspace) -> f64 {
        for (ctx, out) in self.contexts.iter().zip(ws.log_joint.iter_mut()) {
            *out = ctx.log_joint(y, &mut ws.solve);
        }
        logsumexp(&ws.log_joint)
    }

    fn kappa_into(ctx: &StateContext, y: &[f64], out: &mut [f64]) {
        let d = y.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = ctx.gain[i * d..(i + 1) * d]
                .iter()
                .zip(y)
                .map(|(g, v)| g * v)
                .sum();
        }
    }

    /// Computes the moments of one observation into `ws` (upper triangle of
    /// `eszsz` only) and returns `log p(y | Theta)`. Inputs are assumed checked.
    pub(crate) fn accumulate_point(&self, y: &[f64], ws: &mut Workspace) -> f64 {
        let h = self.hidden;
        let log_lik = self.log_joint_all(y, ws);
        ws.es.iter_mut().for_each(|v| *v = 0.0);
        ws.esz.iter_mut().for_each(|v| *v = 0.0);
        ws.eszsz.iter_mut().for_each(|v| *v = 0.0);
        for (ctx, &lj) in self.contexts.iter().zip(&ws.log_joint) {
            let w = (lj - log_lik).exp();
            if w == 0.0 {
                continue;
            }
            let active = ctx.state.active_set();
            let k = active.len();
            let kappa = &mut ws.kappa[..k];
            Self::kappa_into(ctx, y, kappa);
            for (i, &a) in active.iter().enumerate() {
                ws.es[a] += w;
                ws.esz[a] += w * kappa[i];
                let row = &mut ws.eszsz[a * h..(a + 1) * h];
                let lam_row = &ctx.lambda[i * k..(i + 1) * k];
                for j in i..k {
                    row[active[j]] += w * (lam_row[j] + kappa[i] * kappa[j]);
                }
            }
        }
        log_lik
    }

    /// Normalized state posterior for one observation.
    pub fn posterior_over_states(&self, y: &DVector<f64>) -> Result<StatePosterior> {
        let y = y.as_slice();
        self.check_obs(y)?;
        let mut ws = self.workspace();
        let log_lik = self.log_joint_all(y, &mut ws);
        let log_weights = ws.log_joint.iter().map(|lj| lj - log_lik).collect();
        let kappa = self
            .contexts
            .iter()
            .map(|ctx| {
                let active = ctx.state.active_set();
                let mut buf = vec![0.0; active.len()];
                Self::kappa_into(ctx, y, &mut buf);
                let mut full = DVector::zeros(self.hidden);
                for (&a, v) in active.iter().zip(buf) {
                    full[a] = v;
                }
                full
            })
            .collect();
        Ok(StatePosterior {
            log_weights,
            kappa,
            log_lik,
        })
    }

    /// Exact posterior moments for one observation.
    pub fn point_moments(&self, y: &DVector<f64>) -> Result<PointMoments> {
        let y = y.as_slice();
        self.check_obs(y)?;
        let mut ws = self.workspace();
        let log_lik = self.accumulate_point(y, &mut ws);
        let h = self.hidden;
        let mut eszsz = DMatrix::from_row_slice(h, h, &ws.eszsz);
        for i in 0..h {
            for j in 0..i {
                eszsz[(i, j)] = eszsz[(j, i)];
            }
        }
        Ok(PointMoments {
            es: DVector::from_column_slice(&ws.es),
            esz: DVector::from_column_slice(&ws.esz),
            eszsz,
            log_lik,
        })
    }

    /// `log p(y | Theta)` for one observation.
    pub fn point_log_lik(&self, y: &DVector<f64>) -> Result<f64> {
        self.check_obs(y.as_slice())?;
        let mut ws = self.workspace();
        Ok(self.log_joint_all(y.as_slice(), &mut ws))
    }

    /// Sum of per-point log-likelihoods over the rows of `data`.
    pub fn dataset_log_lik(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim {
            return Err(GscError::Input(format!(
                "dataset has {} columns, model expects {}",
                data.dim(),
                self.dim
            )));
        }
        let rows = row_major(&data.y);
        let d = self.dim;
        let partial: Vec<f64> = rows
            .par_chunks(CHUNK_POINTS * d)
            .map(|chunk| {
                let mut ws = self.workspace();
                chunk
                    .chunks(d)
                    .map(|y| self.log_joint_all(y, &mut ws))
                    .sum::<f64>()
            })
            .collect();
        Ok(partial.iter().sum())
    }

    /// Writes `state_index,popcount,log_weight` rows for one observation.
    pub fn write_state_weights_csv<W: Write>(&self, y: &DVector<f64>, mut out: W) -> Result<()> {
        let post = self.posterior_over_states(y)?;
        let io = |e| GscError::io("<state weights>", e);
        writeln!(out, "state_index,popcount,log_weight").map_err(io)?;
        for (ctx, lw) in self.contexts.iter().zip(&post.log_weights) {
            writeln!(out, "{},{},{}", ctx.state.index(), ctx.state.popcount(), lw).map_err(io)?;
        }
        Ok(())
    }
}

/// Points per work unit. Reductions run over chunks in order, so results do
/// not depend on the thread count.
pub(crate) const CHUNK_POINTS: usize = 64;

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `sum_n log sum_s Bernoulli(s; pi) N(y_n; 0, C_s)`.
pub fn log_likelihood(params: &ModelParams, data: &Dataset) -> Result<f64> {
    build_state_contexts(params)?.dataset_log_lik(data)
}

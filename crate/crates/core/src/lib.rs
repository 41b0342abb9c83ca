//! Exact expectation maximization for Gaussian sparse coding.
//!
//! The model combines Bernoulli supports with Gaussian slabs,
//! `y = W (s ⊙ z) + eps`. Conditioned on a support the model is linear
//! Gaussian, so the posterior over `(s, z)` and all moments needed by the
//! M-step are available in closed form by enumerating the `2^H` supports.
//!
//! Modules:
//! - [`model`]: parameters, binary states, datasets, forward sampling
//! - [`inference`]: per-state contexts, state posteriors, moments, likelihood
//! - [`em`]: M-step, initialization, the EM driver and restarts
//! - [`metrics`]: Amari index, orthogonality, run selection, summaries
//! - [`datagen`]: Cauchy/Laplace sparse-coding data, orthogonal mixing, sources
//! - [`io`]: CSV / JSON formats

pub mod cli;
pub mod datagen;
pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;

pub use em::{fit, fit_from, multi_restart, FitFailure, FitOptions, FitResult, RestartBatch, SufficientStats};
pub use error::{GscError, Result};
pub use inference::{build_state_contexts, log_likelihood, PointMoments, StateContext, StateContexts, StatePosterior};
pub use metrics::{amari_index, ortho_deviation, AmariReport, RunSelection};
pub use model::{BinaryState, Dataset, LatentSample, ModelParams};

//! Model types for Gaussian sparse coding and forward sampling.
//!
//! The generative process per observation is
//!
//! ```text
//! s_h ~ Bernoulli(pi_h),  z ~ N(0, I_H),  y = W (s ⊙ z) + eps,  eps ~ N(0, Sigma)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GscError, Result};
use crate::linalg::cholesky_with_jitter;
use crate::rng::rng_from_seed;

/// Lower clamp for learned activation probabilities; the upper clamp is `1 - PI_FLOOR`.
pub const PI_FLOOR: f64 = 1e-6;

/// Learned `pi_h` below this value marks hidden unit `h` as pruned.
pub const PRUNE_THRESHOLD: f64 = 1e-3;

/// Largest number of hidden units for which states are enumerated.
pub const MAX_HIDDEN: usize = 20;

const SYMMETRY_TOL: f64 = 1e-10;

pub fn clamp_pi(p: f64) -> f64 {
    p.clamp(PI_FLOOR, 1.0 - PI_FLOOR)
}

pub fn check_hidden_cap(hidden: usize) -> Result<()> {
    if hidden > MAX_HIDDEN {
        return Err(GscError::TooManyHidden {
            hidden,
            cap: MAX_HIDDEN,
        });
    }
    Ok(())
}

/// Full parameter set: basis `W` (D×H), noise covariance `Sigma` (D×D) and
/// activation probabilities `pi` (H).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub pi: DVector<f64>,
}

/// One invariant violated by a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NonFinite(&'static str),
    SigmaAsymmetric { max_abs_diff: f64 },
    SigmaNotPositiveDefinite,
    PiOutOfRange { index: usize, value: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Violation::NonFinite(what) => write!(f, "{what} has non-finite entries"),
            Violation::SigmaAsymmetric { max_abs_diff } => {
                write!(f, "Sigma is not symmetric (max |S_ij - S_ji| = {max_abs_diff:e})")
            }
            Violation::SigmaNotPositiveDefinite => write!(f, "Sigma is not positive definite"),
            Violation::PiOutOfRange { index, value } => {
                write!(f, "pi[{index}] = {value} is outside [0, 1]")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(GscError::InvalidParams(
                self.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }
}

/// Checks every parameter invariant without touching the input.
pub fn validate_params(params: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    let (d, h) = params.w.shape();
    if params.sigma.shape() != (d, d) {
        violations.push(Violation::Shape(format!(
            "Sigma is {:?}, expected ({d}, {d})",
            params.sigma.shape()
        )));
    }
    if params.pi.len() != h {
        violations.push(Violation::Shape(format!(
            "pi has length {}, expected {h}",
            params.pi.len()
        )));
    }
    if params.w.iter().any(|v| !v.is_finite()) {
        violations.push(Violation::NonFinite("W"));
    }
    let sigma_finite = params.sigma.iter().all(|v| v.is_finite());
    if !sigma_finite {
        violations.push(Violation::NonFinite("Sigma"));
    }
    if params.pi.iter().any(|v| !v.is_finite()) {
        violations.push(Violation::NonFinite("pi"));
    }
    for (index, &value) in params.pi.iter().enumerate() {
        if value.is_finite() && !(0.0..=1.0).contains(&value) {
            violations.push(Violation::PiOutOfRange { index, value });
        }
    }
    if sigma_finite && params.sigma.is_square() {
        let scale = params.sigma.amax().max(1.0);
        let max_abs_diff = (&params.sigma - params.sigma.transpose()).amax();
        if max_abs_diff > SYMMETRY_TOL * scale {
            violations.push(Violation::SigmaAsymmetric { max_abs_diff });
        }
        if nalgebra::Cholesky::new(params.sigma.clone()).is_none() {
            violations.push(Violation::SigmaNotPositiveDefinite);
        }
    }
    ValidationReport { violations }
}

impl ModelParams {
    /// Builds a parameter set, rejecting anything `validate_params` flags.
    pub fn new(w: DMatrix<f64>, sigma: DMatrix<f64>, pi: DVector<f64>) -> Result<Self> {
        let params = ModelParams { w, sigma, pi };
        validate_params(&params).into_result()?;
        Ok(params)
    }

    pub fn observed_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Copy with every `pi_h` clamped into `[PI_FLOOR, 1 - PI_FLOOR]`.
    pub fn with_clamped_pi(&self) -> Self {
        ModelParams {
            pi: self.pi.map(clamp_pi),
            ..self.clone()
        }
    }

    /// Hidden units whose activation probability has collapsed.
    pub fn pruned_dims(&self) -> Vec<usize> {
        (0..self.hidden_dim())
            .filter(|&h| self.pi[h] < PRUNE_THRESHOLD)
            .collect()
    }

    /// Permutes hidden units: column `h` of the result is column `perm[h]` of `self`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Self {
        let w = DMatrix::from_fn(self.w.nrows(), perm.len(), |d, h| self.w[(d, perm[h])]);
        let pi = DVector::from_fn(perm.len(), |h, _| self.pi[perm[h]]);
        ModelParams {
            w,
            sigma: self.sigma.clone(),
            pi,
        }
    }
}

/// JSON form: `{"W": [[...]], "Sigma": [[...]], "pi": [...]}` with row-major nested arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<f64>>,
    pi: Vec<f64>,
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], cols_if_empty: usize, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(cols_if_empty, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(GscError::Input(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsDoc {
            w: matrix_to_rows(&self.w),
            sigma: matrix_to_rows(&self.sigma),
            pi: self.pi.iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let doc = ParamsDoc::deserialize(deserializer)?;
        let w = rows_to_matrix(&doc.w, doc.pi.len(), "W").map_err(D::Error::custom)?;
        let sigma = rows_to_matrix(&doc.sigma, w.nrows(), "Sigma").map_err(D::Error::custom)?;
        Ok(ModelParams {
            w,
            sigma,
            pi: DVector::from_vec(doc.pi),
        })
    }
}

/// A binary support vector `s ∈ {0,1}^H`, canonically encoded by an integer
/// whose bit `h` equals `s_h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryState {
    index: usize,
    hidden: usize,
    active: Vec<usize>,
}

impl BinaryState {
    pub fn from_index(index: usize, hidden: usize) -> Result<Self> {
        check_hidden_cap(hidden)?;
        if index >> hidden != 0 {
            return Err(GscError::Input(format!(
                "state index {index} out of range for H = {hidden}"
            )));
        }
        let active = (0..hidden).filter(|&h| index >> h & 1 == 1).collect();
        Ok(BinaryState {
            index,
            hidden,
            active,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let index = bits
            .iter()
            .enumerate()
            .fold(0usize, |acc, (h, &b)| acc | (usize::from(b) << h));
        Self::from_index(index, bits.len())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Sorted indices `h` with `s_h = 1`.
    pub fn active_set(&self) -> &[usize] {
        &self.active
    }

    pub fn popcount(&self) -> usize {
        self.active.len()
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.hidden).map(|h| self.index >> h & 1 == 1).collect()
    }

    pub fn is_active(&self, h: usize) -> bool {
        h < self.hidden && self.index >> h & 1 == 1
    }
}

/// All `2^H` states in ascending index order.
pub fn enumerate_states(hidden: usize) -> Result<Vec<BinaryState>> {
    check_hidden_cap(hidden)?;
    (0..1usize << hidden)
        .map(|i| BinaryState::from_index(i, hidden))
        .collect()
}

/// `log p(s | pi) = sum_h s_h log pi_h + (1 - s_h) log(1 - pi_h)`.
///
/// Probabilities of exactly 0 or 1 are accepted and give `-inf` for the
/// impossible states.
pub fn log_state_prior(state: &BinaryState, pi: &DVector<f64>) -> f64 {
    (0..state.hidden())
        .map(|h| {
            if state.is_active(h) {
                pi[h].ln()
            } else {
                (1.0 - pi[h]).ln()
            }
        })
        .sum()
}

/// Observations plus whatever ground truth generated them.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N×D, one observation per row.
    pub y: DMatrix<f64>,
    /// N×H binary supports.
    pub s_true: Option<DMatrix<f64>>,
    /// N×H continuous latents (for non-GSC generators this holds the sources).
    pub z_true: Option<DMatrix<f64>>,
    pub params_true: Option<ModelParams>,
    /// D×H mixing matrix to score learned bases against.
    pub mixing_true: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(GscError::Input(format!(
                "dataset must be non-empty, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % y.nrows(), pos / y.nrows());
            return Err(GscError::Input(format!(
                "non-finite observation at row {r}, column {c}"
            )));
        }
        Ok(Dataset {
            y,
            s_true: None,
            z_true: None,
            params_true: None,
            mixing_true: None,
        })
    }

    pub fn n_points(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    /// Checks that ground-truth blocks agree with `Y` and with each other.
    pub fn check_ground_truth(&self) -> Result<()> {
        let n = self.n_points();
        let mut hidden = None;
        for (name, block) in [("S_true", &self.s_true), ("Z_true", &self.z_true)] {
            if let Some(m) = block {
                if m.nrows() != n {
                    return Err(GscError::Input(format!("{name} has {} rows, expected {n}", m.nrows())));
                }
                match hidden {
                    None => hidden = Some(m.ncols()),
                    Some(h) if h != m.ncols() => {
                        return Err(GscError::Input(format!("{name} has {} columns, expected {h}", m.ncols())))
                    }
                    _ => {}
                }
            }
        }
        if let (Some(p), Some(h)) = (&self.params_true, hidden) {
            if p.hidden_dim() != h || p.observed_dim() != self.dim() {
                return Err(GscError::Input("params_true shape disagrees with data".into()));
            }
        }
        Ok(())
    }

    /// Mean-subtracted sample covariance (divides by N).
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let n = self.n_points() as f64;
        let mean = self.y.row_mean();
        let mut centered = self.y.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        (centered.transpose() * centered) / n
    }

    /// `sum_n y_n y_n^T`.
    pub fn scatter(&self) -> DMatrix<f64> {
        self.y.transpose() * &self.y
    }
}

/// One draw of the latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub s: BinaryState,
    pub z: DVector<f64>,
    /// `x = s ⊙ z`, exactly zero at inactive units.
    pub x: DVector<f64>,
}

pub fn sample_latent<R: Rng + ?Sized>(pi: &DVector<f64>, rng: &mut R) -> Result<LatentSample> {
    let hidden = pi.len();
    let bits: Vec<bool> = pi.iter().map(|&p| rng.random::<f64>() < p).collect();
    let z = DVector::from_fn(hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DVector::from_fn(hidden, |h, _| if bits[h] { z[h] } else { 0.0 });
    Ok(LatentSample {
        s: BinaryState::from_bits(&bits)?,
        z,
        x,
    })
}

/// Draws `n` observations from the model. The returned dataset carries the
/// binary supports, the Gaussian latents and the generating parameters.
pub fn sample_gsc(params: &ModelParams, n: usize, seed: u64) -> Result<Dataset> {
    validate_params(params).into_result()?;
    if n == 0 {
        return Err(GscError::Input("sample count must be at least 1".into()));
    }
    let (d, h) = params.w.shape();
    let (chol, _) = cholesky_with_jitter(&params.sigma, "Sigma")?;
    let l = chol.l();
    let mut rng = rng_from_seed(seed);
    let mut y = DMatrix::zeros(n, d);
    let mut s_true = DMatrix::zeros(n, h);
    let mut z_true = DMatrix::zeros(n, h);
    for i in 0..n {
        let latent = sample_latent(&params.pi, &mut rng)?;
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let obs = &params.w * &latent.x + &l * g;
        y.set_row(i, &obs.transpose());
        for j in 0..h {
            s_true[(i, j)] = if latent.s.is_active(j) { 1.0 } else { 0.0 };
            z_true[(i, j)] = latent.z[j];
        }
    }
    let mut data = Dataset::new(y)?;
    data.s_true = Some(s_true);
    data.z_true = Some(z_true);
    data.mixing_true = Some(params.w.clone());
    data.params_true = Some(params.clone());
    Ok(data)
}

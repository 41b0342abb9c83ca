//! Synthetic data for separation experiments.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GscError, Result};
use crate::io::{parse_matrix_csv, read_matrix_csv};
use crate::model::{Dataset, ModelParams};
use crate::rng::rng_from_seed;

/// Default observation noise for sparse-coding data (unit-scale sources
/// through an orthogonal mixing give an SNR of roughly 10 for Laplace sources).
pub const DEFAULT_NOISE_SIGMA: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourcePrior {
    Cauchy,
    Laplace,
}

impl FromStr for SourcePrior {
    type Err = GscError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cauchy" => Ok(SourcePrior::Cauchy),
            "laplace" => Ok(SourcePrior::Laplace),
            other => Err(GscError::Input(format!(
                "unknown prior {other:?} (expected cauchy or laplace)"
            ))),
        }
    }
}

impl SourcePrior {
    /// One draw with location 0 and scale 1.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            SourcePrior::Cauchy => Cauchy::new(0.0, 1.0).expect("unit scale").sample(rng),
            SourcePrior::Laplace => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    e
                } else {
                    -e
                }
            }
        }
    }
}

/// Sparse-coding data: `y = W_gen x + eps` with i.i.d. unit-scale prior draws
/// for `x` and isotropic Gaussian noise of standard deviation `noise_sigma`.
pub fn sample_sc(
    prior: SourcePrior,
    w_gen: &DMatrix<f64>,
    noise_sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_sigma > 0.0) || !noise_sigma.is_finite() {
        return Err(GscError::Input(format!("noise_sigma must be positive, got {noise_sigma}")));
    }
    if n == 0 {
        return Err(GscError::Input("sample count must be at least 1".into()));
    }
    let (d, h) = w_gen.shape();
    let mut rng = rng_from_seed(seed);
    let mut x = DMatrix::zeros(n, h);
    let mut y = DMatrix::zeros(n, d);
    for i in 0..n {
        let xi = DVector::from_fn(h, |_, _| prior.sample(&mut rng));
        let noise = DVector::from_fn(d, |_, _| noise_sigma * rng.sample::<f64, _>(StandardNormal));
        y.set_row(i, &(w_gen * &xi + noise).transpose());
        x.set_row(i, &xi.transpose());
    }
    let mut data = Dataset::new(y)?;
    data.z_true = Some(x);
    data.mixing_true = Some(w_gen.clone());
    Ok(data)
}

/// Random generative parameters for model-verification runs: `W` entries
/// from `N(0, 3²)`, `pi_h ~ U(0.05, 1)` and `Sigma = sigma · I` with
/// `sigma ~ U(0.05, 10)`.
pub fn random_gsc_params(dim: usize, hidden: usize, seed: u64) -> Result<ModelParams> {
    if dim == 0 || hidden == 0 {
        return Err(GscError::Input("dimensions must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(dim, hidden);
    for i in 0..dim {
        for j in 0..hidden {
            w[(i, j)] = 3.0 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let pi = DVector::from_fn(hidden, |_, _| rng.random_range(0.05..1.0));
    let sigma = rng.random_range(0.05..10.0);
    ModelParams::new(w, DMatrix::identity(dim, dim) * sigma, pi)
}

/// An orthogonal mixing matrix and the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub a: DMatrix<f64>,
    pub seed: u64,
}

/// Haar-distributed orthogonal matrix: QR of a standard normal matrix with
/// the signs of `Q`'s columns fixed so that `diag(R) > 0`.
pub fn random_orthogonal(dim: usize, seed: u64) -> Result<MixSpec> {
    if dim == 0 {
        return Err(GscError::Input("dimension must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut g = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(MixSpec { a: q, seed })
}

/// Time samples × sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMatrix {
    pub s: DMatrix<f64>,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub n_samples: usize,
    pub n_sources: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SourceMatrix {
    pub fn n_samples(&self) -> usize {
        self.s.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.s.ncols()
    }

    /// Per-column mean and population standard deviation.
    pub fn stats(&self) -> SourceStats {
        let n = self.s.nrows() as f64;
        let mean: Vec<f64> = self.s.column_iter().map(|c| c.sum() / n).collect();
        let std = self
            .s
            .column_iter()
            .zip(&mean)
            .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        SourceStats {
            n_samples: self.s.nrows(),
            n_sources: self.s.ncols(),
            mean,
            std,
        }
    }

    /// Zero mean, unit variance per column. Constant columns are only centered.
    pub fn standardize(&mut self) {
        let stats = self.stats();
        for (j, mut col) in self.s.column_iter_mut().enumerate() {
            col.add_scalar_mut(-stats.mean[j]);
            if stats.std[j] > 0.0 {
                col /= stats.std[j];
            }
        }
        // second pass removes the rounding residue of the first
        let n = self.s.nrows() as f64;
        for mut col in self.s.column_iter_mut() {
            let m = col.sum() / n;
            col.add_scalar_mut(-m);
        }
    }
}

pub fn load_sources_csv(path: &Path, has_header: bool, standardize: bool) -> Result<SourceMatrix> {
    let s = read_matrix_csv(path, has_header)?;
    let mut src = SourceMatrix {
        s,
        provenance: path.display().to_string(),
    };
    if standardize {
        src.standardize();
    }
    Ok(src)
}

/// I.i.d. unit Laplace sources; the generator behind the bundled source set.
pub fn laplace_sources(n: usize, h: usize, seed: u64) -> SourceMatrix {
    let mut rng = rng_from_seed(seed);
    let mut s = DMatrix::zeros(n, h);
    for i in 0..n {
        for j in 0..h {
            s[(i, j)] = SourcePrior::Laplace.sample(&mut rng);
        }
    }
    SourceMatrix {
        s,
        provenance: format!("laplace(n={n}, h={h}, seed={seed})"),
    }
}

/// Shape and seed of the bundled source set: `laplace_sources(1000, 4, 4)`.
pub const BUNDLED_SOURCES: (usize, usize, u64) = (1000, 4, 4);

const BUNDLED_CSV: &str = include_str!("../data/laplace4.csv");

/// The bundled 4-source Laplace set (1000 samples), used when a benchmark
/// names no sources file.
pub fn bundled_sources() -> Result<SourceMatrix> {
    Ok(SourceMatrix {
        s: parse_matrix_csv(BUNDLED_CSV, false, "bundled laplace4.csv")?,
        provenance: "bundled:laplace4".into(),
    })
}

/// Observations `y_n = A s_n` over the window `[offset, offset + n_points)`.
pub fn mix_sources(src: &SourceMatrix, mix: &MixSpec, n_points: usize, offset: usize) -> Result<Dataset> {
    if mix.a.nrows() != src.n_sources() || mix.a.ncols() != src.n_sources() {
        return Err(GscError::Input(format!(
            "mixing matrix is {:?} but there are {} sources",
            mix.a.shape(),
            src.n_sources()
        )));
    }
    if n_points == 0 || offset + n_points > src.n_samples() {
        return Err(GscError::Input(format!(
            "window [{offset}, {}) is outside the {} available samples",
            offset + n_points,
            src.n_samples()
        )));
    }
    let slice = src.s.rows(offset, n_points).into_owned();
    let mut data = Dataset::new(&slice * mix.a.transpose())?;
    data.z_true = Some(slice);
    data.mixing_true = Some(mix.a.clone());
    Ok(data)
}

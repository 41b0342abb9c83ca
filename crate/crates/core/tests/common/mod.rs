//! Reference computations used as test oracles. They follow textbook
//! formulas with dense, full-dimensional algebra (LU determinants and
//! inverses, Woodbury-form posteriors, numerical quadrature) and share no
//! code with the library's inference path.

#![allow(dead_code)]

use gsc::rng::rng_from_seed;
use gsc::ModelParams;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log N(y; 0, cov)` through an LU factorization.
pub fn log_gauss(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let lu = cov.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0, "covariance is not positive definite");
    let x = lu.solve(y).expect("invertible covariance");
    -0.5 * (y.len() as f64 * LN_2PI + det.ln() + y.dot(&x))
}

pub fn state_bits(index: usize, hidden: usize) -> Vec<bool> {
    (0..hidden).map(|h| (index >> h) & 1 == 1).collect()
}

pub fn log_prior(bits: &[bool], pi: &DVector<f64>) -> f64 {
    bits.iter()
        .zip(pi.iter())
        .map(|(&b, &p)| if b { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// `W diag(s)`: inactive columns zeroed.
pub fn masked_w(w: &DMatrix<f64>, bits: &[bool]) -> DMatrix<f64> {
    let mut m = w.clone();
    for (j, &b) in bits.iter().enumerate() {
        if !b {
            m.column_mut(j).fill(0.0);
        }
    }
    m
}

/// Components of `p(y)` viewed as a `2^H` Gaussian mixture: log weight and
/// covariance of each.
pub fn mixture_components(params: &ModelParams) -> Vec<(f64, DMatrix<f64>)> {
    let h = params.w.ncols();
    (0..1usize << h)
        .map(|i| {
            let bits = state_bits(i, h);
            let ws = masked_w(&params.w, &bits);
            (log_prior(&bits, &params.pi), &ws * ws.transpose() + &params.sigma)
        })
        .collect()
}

pub fn mixture_log_density(components: &[(f64, DMatrix<f64>)], y: &DVector<f64>) -> f64 {
    let terms: Vec<f64> = components.iter().map(|(lw, c)| lw + log_gauss(y, c)).collect();
    logsumexp(&terms)
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub es: DVector<f64>,
    pub esz: DVector<f64>,
    pub eszsz: DMatrix<f64>,
    pub log_lik: f64,
}

/// Exhaustive sum over states with Woodbury-form Gaussian posteriors:
/// `kappa_s = W_s^T C_s^-1 y`, `Lambda_s = I - W_s^T C_s^-1 W_s`.
pub fn moments_by_states(params: &ModelParams, y: &DVector<f64>) -> Moments {
    let h = params.w.ncols();
    let mut log_joint = Vec::new();
    let mut per_state = Vec::new();
    for i in 0..1usize << h {
        let bits = state_bits(i, h);
        let ws = masked_w(&params.w, &bits);
        let c = &ws * ws.transpose() + &params.sigma;
        let c_inv = c.clone().try_inverse().expect("invertible C_s");
        let kappa = ws.transpose() * &c_inv * y;
        let lam = DMatrix::identity(h, h) - ws.transpose() * &c_inv * &ws;
        let mask = DMatrix::from_diagonal(&DVector::from_fn(h, |j, _| if bits[j] { 1.0 } else { 0.0 }));
        let second = &mask * (lam + &kappa * kappa.transpose()) * &mask;
        log_joint.push(log_prior(&bits, &params.pi) + log_gauss(y, &c));
        per_state.push((mask.diagonal(), &mask * kappa, second));
    }
    let log_lik = logsumexp(&log_joint);
    let mut es = DVector::zeros(h);
    let mut esz = DVector::zeros(h);
    let mut eszsz = DMatrix::zeros(h, h);
    for (lj, (s, sz, szsz)) in log_joint.iter().zip(per_state) {
        let w = (lj - log_lik).exp();
        es += s * w;
        esz += sz * w;
        eszsz += szsz * w;
    }
    Moments {
        es,
        esz,
        eszsz,
        log_lik,
    }
}

/// Gauss-Hermite nodes and weights (weight function `exp(-x^2)`) by the
/// Golub-Welsch eigenvalue method.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Moments by numerical integration over the active slab variables of every
/// state. Each integral uses a Gauss-Hermite product grid centred and scaled
/// at the integrand's mode and curvature, both found numerically (Newton
/// steps on finite-difference derivatives).
pub fn moments_by_quadrature(params: &ModelParams, y: &DVector<f64>, nodes: usize) -> Moments {
    let (d, h) = params.w.shape();
    let sigma_inv = params.sigma.clone().try_inverse().expect("invertible Sigma");
    let log_det_sigma = params.sigma.determinant().ln();
    let (gx, gw) = gauss_hermite(nodes);

    let mut log_mass = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for i in 0..1usize << h {
        let bits = state_bits(i, h);
        let active: Vec<usize> = (0..h).filter(|&j| bits[j]).collect();
        let k = active.len();
        let w_a = params.w.select_columns(&active);
        // log p(y | s, z_A) + log p(z_A)
        let f = |z: &DVector<f64>| -> f64 {
            let r = y - &w_a * z;
            -0.5 * (d as f64 * LN_2PI + log_det_sigma + r.dot(&(&sigma_inv * &r)))
                - 0.5 * (k as f64 * LN_2PI + z.dot(z))
        };
        let lp = log_prior(&bits, &params.pi);
        if k == 0 {
            log_mass.push(lp + f(&DVector::zeros(0)));
            first.push(DVector::zeros(h));
            second.push(DMatrix::zeros(h, h));
            continue;
        }

        let step = 1e-3;
        let mut m = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for _ in 0..4 {
            let e = |a: usize| DVector::from_fn(k, |r, _| if r == a { step } else { 0.0 });
            let grad = DVector::from_fn(k, |a, _| (f(&(&m + e(a))) - f(&(&m - e(a)))) / (2.0 * step));
            hess = DMatrix::from_fn(k, k, |a, b| {
                let (ea, eb) = (e(a), e(b));
                (f(&(&m + &ea + &eb)) - f(&(&m + &ea - &eb)) - f(&(&m - &ea + &eb)) + f(&(&m - &ea - &eb)))
                    / (4.0 * step * step)
            });
            m -= hess.clone().lu().solve(&grad).expect("non-singular curvature");
        }
        let cov = (-hess).try_inverse().expect("negative definite curvature");
        let cov = (&cov + cov.transpose()) * 0.5;
        let l = cov.cholesky().expect("positive curvature").l();
        let log_jac = 0.5 * k as f64 * 2f64.ln() + l.diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let mut logs = Vec::with_capacity(nodes.pow(k as u32));
        let mut points = Vec::with_capacity(nodes.pow(k as u32));
        let mut idx = vec![0usize; k];
        loop {
            let x = DVector::from_fn(k, |a, _| gx[idx[a]]);
            let lw: f64 = idx.iter().map(|&t| gw[t].ln()).sum();
            let z = &m + &l * &x * 2f64.sqrt();
            logs.push(lw + x.dot(&x) + f(&z));
            points.push(z);
            let mut a = 0;
            while a < k {
                idx[a] += 1;
                if idx[a] < nodes {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == k {
                break;
            }
        }
        let log_z = logsumexp(&logs);
        let mut mean = DVector::zeros(h);
        let mut outer = DMatrix::zeros(h, h);
        for (lq, z) in logs.iter().zip(&points) {
            let q = (lq - log_z).exp();
            let full = DVector::from_fn(h, |j, _| active.iter().position(|&a| a == j).map_or(0.0, |p| z[p]));
            mean += &full * q;
            outer += &full * full.transpose() * q;
        }
        log_mass.push(lp + log_z + log_jac);
        first.push(mean);
        second.push(outer);
    }
    let log_lik = logsumexp(&log_mass);
    let mut es = DVector::zeros(h);
    let mut esz = DVector::zeros(h);
    let mut eszsz = DMatrix::zeros(h, h);
    for (i, lm) in log_mass.iter().enumerate() {
        let w = (lm - log_lik).exp();
        let bits = state_bits(i, h);
        for j in 0..h {
            if bits[j] {
                es[j] += w;
            }
        }
        esz += &first[i] * w;
        eszsz += &second[i] * w;
    }
    Moments {
        es,
        esz,
        eszsz,
        log_lik,
    }
}

/// Random parameters with a well-conditioned full `Sigma`.
pub fn random_params(d: usize, h: usize, seed: u64) -> ModelParams {
    let mut rng = rng_from_seed(seed);
    let w = DMatrix::from_fn(d, h, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
    let pi = DVector::from_fn(h, |_, _| rng.random_range(0.1..0.9));
    ModelParams::new(w, sigma, pi).unwrap()
}

/// Observation drawn from the model, occasionally inflated to probe tails.
pub fn random_obs(params: &ModelParams, seed: u64) -> DVector<f64> {
    let data = gsc::model::sample_gsc(params, 1, seed).unwrap();
    let mut y = data.y.row(0).transpose();
    if seed % 5 == 0 {
        y *= 3.0;
    }
    y
}

/// Zero-mean probabilistic PCA by EM with isotropic noise.
/// Returns the final `(W, sigma2)` and the log-likelihood trace.
pub fn ppca_em(
    y: &DMatrix<f64>,
    mut w: DMatrix<f64>,
    mut sigma2: f64,
    iters: usize,
) -> (DMatrix<f64>, f64, Vec<f64>) {
    let (n, d) = y.shape();
    let q = w.ncols();
    let s = y.transpose() * y / n as f64;
    let mut trace = vec![gaussian_log_lik(&s, n, &(&w * w.transpose() + DMatrix::identity(d, d) * sigma2))];
    for _ in 0..iters {
        let m = w.transpose() * &w + DMatrix::identity(q, q) * sigma2;
        let m_inv = m.try_inverse().expect("invertible M");
        let sw = &s * &w;
        let inner = DMatrix::identity(q, q) * sigma2 + &m_inv * w.transpose() * &sw;
        let w_new = &sw * inner.try_inverse().expect("invertible update");
        sigma2 = (&s - &sw * &m_inv * w_new.transpose()).trace() / d as f64;
        w = w_new;
        trace.push(gaussian_log_lik(&s, n, &(&w * w.transpose() + DMatrix::identity(d, d) * sigma2)));
    }
    (w, sigma2, trace)
}

/// `sum_n log N(y_n; 0, cov)` from the scatter `S = Y^T Y / N`.
pub fn gaussian_log_lik(s: &DMatrix<f64>, n: usize, cov: &DMatrix<f64>) -> f64 {
    let d = s.nrows();
    let lu = cov.clone().lu();
    let inv = lu.try_inverse().expect("invertible covariance");
    -0.5 * n as f64 * (d as f64 * LN_2PI + cov.determinant().ln() + (inv * s).trace())
}

/// Maximum log-likelihood of zero-mean probabilistic PCA with `q` factors,
/// from the eigenvalues of the scatter matrix.
pub fn ppca_max_log_lik(y: &DMatrix<f64>, q: usize) -> f64 {
    let (n, d) = y.shape();
    let s = y.transpose() * y / n as f64;
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let sigma2 = ev[q..].iter().sum::<f64>() / (d - q) as f64;
    let kept: f64 = ev[..q].iter().map(|v| v.ln()).sum();
    -0.5 * n as f64 * (d as f64 * LN_2PI + kept + (d - q) as f64 * sigma2.ln() + d as f64)
}

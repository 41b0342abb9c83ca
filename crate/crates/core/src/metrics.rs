//! Separation quality metrics and run selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{GscError, Result};

/// Reciprocal condition number below which a basis counts as singular.
const COND_GUARD: f64 = 1e-12;

/// Default histogram bin width (degrees) for orthogonality clustering.
pub const DEFAULT_BIN_WIDTH_DEG: f64 = 2.0;

/// A batch whose final log-likelihoods all lie within this many nats per data
/// point of the best run counts as a single high-likelihood cluster.
pub const HIGH_LIK_TOL_PER_POINT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmariReport {
    pub index: f64,
    /// `O = W^+ W_gen` (H×H).
    #[serde(with = "matrix_rows")]
    pub o: DMatrix<f64>,
    /// Row-wise argmax of `|O|`: learned unit `h` matches generating unit `permutation_estimate[h]`.
    pub permutation_estimate: Vec<usize>,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::model::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::model::rows_to_matrix(&rows, 0, "matrix").map_err(serde::de::Error::custom)
    }
}

/// Left inverse of a full-column-rank `W` (`D >= H`).
fn left_inverse(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, h) = w.shape();
    if d < h {
        return Err(GscError::Input(format!(
            "basis is {d}x{h}; the Amari index needs D >= H"
        )));
    }
    let sv = w.clone().svd(true, true);
    let max = sv.singular_values.max();
    let min = sv.singular_values.min();
    if !(max > 0.0) || min < COND_GUARD * max {
        return Err(GscError::Numerical(
            "learned basis is singular; Amari index undefined".into(),
        ));
    }
    sv.pseudo_inverse(0.0).map_err(|e| GscError::Numerical(e.to_string()))
}

/// Amari index of `O = W^-1 W_gen`:
///
/// ```text
/// A = 1/(2H(H-1)) sum_{h,h'} ( |O_hh'| / max_k |O_hk| + |O_hh'| / max_k |O_kh'| ) - 1/(H-1)
/// ```
///
/// Zero exactly when `O` is a scaled permutation. For `H = 1` the index is 0.
pub fn amari_index(w: &DMatrix<f64>, w_gen: &DMatrix<f64>) -> Result<AmariReport> {
    if w.shape() != w_gen.shape() {
        return Err(GscError::Input(format!(
            "learned basis is {:?}, generating basis is {:?}",
            w.shape(),
            w_gen.shape()
        )));
    }
    let o = left_inverse(w)? * w_gen;
    let h = o.nrows();
    let abs = o.abs();
    let row_max: Vec<f64> = (0..h).map(|i| abs.row(i).max()).collect();
    let col_max: Vec<f64> = (0..h).map(|j| abs.column(j).max()).collect();
    if row_max.iter().chain(&col_max).any(|&m| !(m > 0.0)) {
        return Err(GscError::Numerical(
            "W^-1 W_gen has a zero row or column; Amari index undefined".into(),
        ));
    }
    let permutation_estimate = (0..h).map(|i| abs.row(i).transpose().imax()).collect();
    let index = if h < 2 {
        0.0
    } else {
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..h {
                total += abs[(i, j)] / row_max[i] + abs[(i, j)] / col_max[j];
            }
        }
        let hf = h as f64;
        total / (2.0 * hf * (hf - 1.0)) - 1.0 / (hf - 1.0)
    };
    Ok(AmariReport {
        index,
        o,
        permutation_estimate,
    })
}

/// Largest deviation from 90° between any two columns of `W`, in degrees.
pub fn ortho_deviation(w: &DMatrix<f64>) -> Result<f64> {
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    if let Some(h) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(GscError::Input(format!("basis column {h} is zero")));
    }
    let mut worst: f64 = 0.0;
    for i in 0..w.ncols() {
        for j in i + 1..w.ncols() {
            let cos = (w.column(i).dot(&w.column(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let angle = cos.acos().to_degrees();
            worst = worst.max((90.0 - angle).abs());
        }
    }
    Ok(worst)
}

/// Fixed-width histogram starting at `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins `values` into `[origin + k w, origin + (k+1) w)`, with as many bins
    /// as needed to cover the largest value.
    pub fn build(values: &[f64], origin: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(GscError::Input(format!("bin width must be positive, got {bin_width}")));
        }
        if values.iter().any(|v| !v.is_finite() || *v < origin) {
            return Err(GscError::Input("histogram values must be finite and >= origin".into()));
        }
        let bin_of = |v: f64| ((v - origin) / bin_width).floor() as usize;
        let n_bins = values.iter().map(|&v| bin_of(v) + 1).max().unwrap_or(0);
        let mut counts = vec![0; n_bins];
        for &v in values {
            counts[bin_of(v)] += 1;
        }
        Ok(Histogram {
            origin,
            bin_width,
            counts,
        })
    }

    /// Histogram with `n_bins` equal bins spanning `[min, max]`.
    pub fn spanning(values: &[f64], n_bins: usize) -> Result<Self> {
        if values.is_empty() || n_bins == 0 {
            return Err(GscError::Input("empty histogram".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
        let mut h = Histogram::build(values, lo, width)?;
        // the maximum lands exactly on the right edge; fold it into the last bin
        if h.counts.len() > n_bins {
            let extra: usize = h.counts.drain(n_bins..).sum();
            h.counts[n_bins - 1] += extra;
        }
        Ok(h)
    }

    pub fn left_edge(&self, bin: usize) -> f64 {
        self.origin + bin as f64 * self.bin_width
    }

    /// `bin_left,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.left_edge(i), c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSelection {
    pub threshold_deg: f64,
    /// Indices into the input slice.
    pub selected: Vec<usize>,
    pub histogram: Histogram,
    /// False when the histogram walk found no empty or rising bin after the leading mode.
    pub gap_found: bool,
}

/// Walks a histogram of non-negative scores (lower is better) and returns the
/// leading cluster: the threshold is the left edge of the first bin after the
/// lowest-score mode that is empty or higher than its predecessor. `None`
/// scores are never selected.
fn leading_cluster(scores: &[Option<f64>], bin_width: f64) -> Result<RunSelection> {
    let values: Vec<f64> = scores.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(GscError::Input("no run has a defined score".into()));
    }
    let histogram = Histogram::build(&values, 0.0, bin_width)?;
    let counts = &histogram.counts;
    let first = counts.iter().position(|&c| c > 0).expect("non-empty");
    let mut peak = first;
    while peak + 1 < counts.len() && counts[peak + 1] >= counts[peak] {
        peak += 1;
    }
    let cut = (peak + 1..counts.len()).find(|&i| counts[i] == 0 || counts[i] > counts[i - 1]);
    let (threshold_deg, gap_found) = match cut {
        Some(bin) => (histogram.left_edge(bin), true),
        None => (histogram.left_edge(counts.len()), false),
    };
    let selected = scores
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.filter(|&v| v < threshold_deg).map(|_| i))
        .collect();
    Ok(RunSelection {
        threshold_deg,
        selected,
        histogram,
        gap_found,
    })
}

/// Selects the cluster of most orthogonal runs from their deviations (degrees).
pub fn select_by_deviation(deviations: &[Option<f64>], bin_width_deg: f64) -> Result<RunSelection> {
    leading_cluster(deviations, bin_width_deg)
}

pub fn select_orthogonal_cluster(results: &[FitResult], bin_width_deg: f64) -> Result<RunSelection> {
    let devs: Vec<Option<f64>> = results.iter().map(|r| r.ortho_deviation_deg).collect();
    select_by_deviation(&devs, bin_width_deg)
}

/// Number of histogram bins spanning the log-likelihood range of a batch.
pub const LIKELIHOOD_BINS: usize = 20;

/// High-likelihood cluster of a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSelection {
    pub best_log_lik: f64,
    /// Runs with `best - log_lik` below this value are selected.
    pub max_gap: f64,
    pub selected: Vec<usize>,
    /// Histogram of `best - log_lik`.
    pub histogram: Histogram,
    pub gap_found: bool,
}

/// Selects the runs whose final log-likelihood belongs to the top cluster.
///
/// When the whole batch lies within `HIGH_LIK_TOL_PER_POINT · n_points` of the
/// best run, every run is selected. Otherwise the gaps `best - log_lik` are
/// binned into `LIKELIHOOD_BINS` bins over their range and the leading
/// cluster is cut at the first empty or rising bin, as for orthogonality.
pub fn select_high_likelihood(final_log_liks: &[f64], n_points: usize) -> Result<LikelihoodSelection> {
    let best = final_log_liks
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(GscError::Input("no run has a finite log-likelihood".into()));
    }
    let gaps: Vec<Option<f64>> = final_log_liks
        .iter()
        .map(|&ll| ll.is_finite().then(|| (best - ll).max(0.0)))
        .collect();
    let spread = gaps.iter().flatten().copied().fold(0.0, f64::max);
    let floor = HIGH_LIK_TOL_PER_POINT * n_points.max(1) as f64;
    let width = if spread > floor {
        spread / LIKELIHOOD_BINS as f64
    } else {
        // one bin holds everything
        2.0 * floor.max(spread)
    };
    let sel = leading_cluster(&gaps, width)?;
    Ok(LikelihoodSelection {
        best_log_lik: best,
        max_gap: sel.threshold_deg,
        selected: sel.selected,
        histogram: sel.histogram,
        gap_found: sel.gap_found,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(GscError::Input("mean of an empty set".into()));
        }
        let n = values.len() as f64;
        // shifted by the first value, then corrected two-pass variance
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
        let dev_sum: f64 = values.iter().map(|v| v - mean).sum();
        let sq_sum: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let var = ((sq_sum - dev_sum * dev_sum / n) / n).max(0.0);
        Ok(MeanStd {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}({:.2})", self.mean, self.std)
    }
}

/// Amari statistics over all runs and over the selected runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub all: MeanStd,
    pub selected: MeanStd,
}

pub fn summarize_runs(amari: &[f64], selection: &RunSelection) -> Result<RunSummary> {
    let picked: Vec<f64> = selection
        .selected
        .iter()
        .map(|&i| {
            amari
                .get(i)
                .copied()
                .ok_or_else(|| GscError::Input(format!("selected run {i} has no Amari value")))
        })
        .collect::<Result<_>>()?;
    Ok(RunSummary {
        all: MeanStd::of(amari)?,
        selected: MeanStd::of(&picked)?,
    })
}

/// One row of a separation results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub n_points: usize,
    pub summary: RunSummary,
}

/// Aligned text table: dataset name, N, then `mean(std)` for all runs (GSC)
/// and for the orthogonal cluster (GSC⊥).
pub fn format_table(rows: &[TableRow]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.name.chars().count())
        .chain(std::iter::once(4))
        .max()
        .unwrap_or(4);
    let mut out = format!("{:<name_w$}  {:>5}  {:<11}  {}\n", "name", "N", "GSC", "GSC⊥");
    let mut last_name: Option<&str> = None;
    for r in rows {
        let name = if last_name == Some(r.name.as_str()) { "" } else { r.name.as_str() };
        last_name = Some(r.name.as_str());
        out.push_str(&format!(
            "{:<name_w$}  {:>5}  {:<11}  {}\n",
            name,
            r.n_points,
            r.summary.all.to_string(),
            r.summary.selected.to_string()
        ));
    }
    out
}

/// Per-run scores of a batch of fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub restart: usize,
    pub seed: u64,
    pub final_log_lik: f64,
    pub ortho_deviation_deg: Option<f64>,
    /// `None` when no ground truth was given or the learned basis is singular.
    pub amari: Option<f64>,
    pub pruned_dims: Vec<usize>,
}

/// Everything reported for one batch of runs on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEvaluation {
    pub n_points: usize,
    pub runs: Vec<RunScore>,
    pub orthogonal: RunSelection,
    pub likelihood: LikelihoodSelection,
    /// Amari summary over all runs (GSC) and the orthogonal cluster (GSC⊥);
    /// absent without ground truth.
    pub summary: Option<RunSummary>,
    /// Mean Amari index over the high-likelihood cluster.
    pub high_likelihood_amari: Option<MeanStd>,
}

/// Scores a batch of runs against an optional ground-truth mixing matrix.
pub fn evaluate_batch(
    results: &[FitResult],
    truth: Option<&DMatrix<f64>>,
    n_points: usize,
    bin_width_deg: f64,
) -> Result<BatchEvaluation> {
    if results.is_empty() {
        return Err(GscError::Input("no runs to evaluate".into()));
    }
    let runs: Vec<RunScore> = results
        .iter()
        .map(|r| RunScore {
            restart: r.restart,
            seed: r.seed,
            final_log_lik: r.final_log_lik(),
            ortho_deviation_deg: r.ortho_deviation_deg,
            amari: truth.and_then(|t| amari_index(&r.params.w, t).ok().map(|a| a.index)),
            pruned_dims: r.pruned_dims.clone(),
        })
        .collect();
    let orthogonal = select_orthogonal_cluster(results, bin_width_deg)?;
    let lls: Vec<f64> = runs.iter().map(|r| r.final_log_lik).collect();
    let likelihood = select_high_likelihood(&lls, n_points)?;

    let (summary, high_likelihood_amari) = if truth.is_some() {
        let defined: Vec<(usize, f64)> = runs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.amari.map(|a| (i, a)))
            .collect();
        let values: Vec<f64> = defined.iter().map(|&(_, a)| a).collect();
        let pick = |idx: &[usize]| -> Vec<f64> {
            defined
                .iter()
                .filter(|(i, _)| idx.contains(i))
                .map(|&(_, a)| a)
                .collect()
        };
        let summary = match (MeanStd::of(&values), MeanStd::of(&pick(&orthogonal.selected))) {
            (Ok(all), Ok(selected)) => Some(RunSummary { all, selected }),
            _ => None,
        };
        (summary, MeanStd::of(&pick(&likelihood.selected)).ok())
    } else {
        (None, None)
    };
    Ok(BatchEvaluation {
        n_points,
        runs,
        orthogonal,
        likelihood,
        summary,
        high_likelihood_amari,
    })
}

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, EvalConfig, FitConfig, GenerateConfig};
use super::manifest::RunManifest;
use super::CliError;
use crate::datagen::{
    bundled_sources, load_sources_csv, mix_sources, random_gsc_params, random_orthogonal, sample_sc,
    MixSpec, SourcePrior, SourceStats, DEFAULT_NOISE_SIGMA,
};
use crate::em::{multi_restart, restart_seed, FitOptions, FitResult};
use crate::error::GscError;
use crate::io::{format_trace_csv, load_dataset, read_json, save_dataset, write_json, write_text};
use crate::metrics::{evaluate_batch, format_table, BatchEvaluation, TableRow, DEFAULT_BIN_WIDTH_DEG};
use crate::model::{matrix_to_rows, rows_to_matrix, sample_gsc, ModelParams};
use crate::rng::derive_seed;

type CliResult<T> = std::result::Result<T, CliError>;

fn required<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::config(format!("missing required option `{key}`")))
}

fn staged<T>(stage: &str, r: crate::error::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::from(e).context(stage))
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSettings {
    pub model: String,
    pub dim: usize,
    pub hidden: usize,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub noise_sigma: f64,
    pub params: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl GenerateSettings {
    pub fn resolve(c: GenerateConfig) -> CliResult<Self> {
        let model = c.model.unwrap_or_else(|| "gsc".into());
        if !matches!(model.as_str(), "gsc" | "cauchy-sc" | "laplace-sc") {
            return Err(CliError::config(format!(
                "unknown model {model:?} (expected gsc, cauchy-sc or laplace-sc)"
            )));
        }
        let dim = c.dim.unwrap_or(2);
        let hidden = c.hidden.unwrap_or(dim);
        let n = c.n.unwrap_or(500);
        if n == 0 {
            return Err(CliError::config("n must be at least 1"));
        }
        if dim == 0 || hidden == 0 {
            return Err(CliError::config("dim and hidden must be at least 1"));
        }
        if model != "gsc" && hidden != dim {
            return Err(CliError::config(format!(
                "{model} uses a square orthogonal mixing; hidden ({hidden}) must equal dim ({dim})"
            )));
        }
        if model != "gsc" && c.params.is_some() {
            return Err(CliError::config("params applies only to the gsc model"));
        }
        let noise_sigma = c.noise_sigma.unwrap_or(DEFAULT_NOISE_SIGMA);
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(CliError::config(format!("noise_sigma must be positive, got {noise_sigma}")));
        }
        Ok(GenerateSettings {
            model,
            dim,
            hidden,
            n,
            seed: c.seed.unwrap_or(0),
            out: required(c.out, "out")?,
            noise_sigma,
            params: c.params,
            threads: c.threads,
        })
    }
}

/// Ground truth of a sparse-coding dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingFile {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub prior: SourcePrior,
    pub noise_sigma: f64,
    pub mix_seed: u64,
}

pub fn cmd_generate(s: GenerateSettings) -> CliResult<()> {
    let mut manifest = RunManifest::new("generate", &s, s.seed)?;
    let data_seed = derive_seed(s.seed, "data", 0);
    let data_path = s.out.join("data.csv");
    let mut outputs = Vec::new();
    if s.model == "gsc" {
        let params = match &s.params {
            Some(path) => {
                manifest.add_input(path)?;
                let p: ModelParams = staged("params", read_json(path))?;
                if p.observed_dim() != s.dim || p.hidden_dim() != s.hidden {
                    return Err(CliError::config(format!(
                        "{} has D={}, H={} but dim={}, hidden={} were requested",
                        path.display(),
                        p.observed_dim(),
                        p.hidden_dim(),
                        s.dim,
                        s.hidden
                    )));
                }
                p
            }
            None => {
                let seed = derive_seed(s.seed, "params", 0);
                manifest.stage_seeds.insert("params".into(), seed);
                staged("params", random_gsc_params(s.dim, s.hidden, seed))?
            }
        };
        manifest.stage_seeds.insert("data".into(), data_seed);
        let data = manifest.timed("sample", || sample_gsc(&params, s.n, data_seed));
        let data = staged("sample", data)?;
        outputs.extend(save_dataset(&data_path, &data)?);
        let params_path = s.out.join("params.json");
        write_json(&params_path, &params)?;
        outputs.push(params_path);
    } else {
        let prior: SourcePrior = s.model.trim_end_matches("-sc").parse()?;
        let mix_seed = derive_seed(s.seed, "mix", 0);
        manifest.stage_seeds.insert("mix".into(), mix_seed);
        manifest.stage_seeds.insert("data".into(), data_seed);
        let mix = staged("mix", random_orthogonal(s.dim, mix_seed))?;
        let data = manifest.timed("sample", || sample_sc(prior, &mix.a, s.noise_sigma, s.n, data_seed));
        let data = staged("sample", data)?;
        outputs.extend(save_dataset(&data_path, &data)?);
        let truth = MixingFile {
            w: matrix_to_rows(&mix.a),
            prior,
            noise_sigma: s.noise_sigma,
            mix_seed,
        };
        let mixing_path = s.out.join("mixing.json");
        write_json(&mixing_path, &truth)?;
        outputs.push(mixing_path);
    }
    manifest.outputs = outputs;
    let path = manifest.write(&s.out)?;
    println!("wrote {} points to {} ({})", s.n, data_path.display(), path.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSettings {
    pub data: PathBuf,
    pub header: bool,
    pub hidden: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub isotropic: bool,
    pub update_pi: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl FitSettings {
    pub fn resolve(c: FitConfig) -> CliResult<Self> {
        let s = FitSettings {
            data: required(c.data, "data")?,
            header: c.header.unwrap_or(false),
            hidden: required(c.hidden, "hidden")?,
            restarts: c.restarts.unwrap_or(1),
            max_iters: c.max_iters.unwrap_or(300),
            rel_tol: c.rel_tol.unwrap_or(1e-8),
            isotropic: c.isotropic.unwrap_or(false),
            update_pi: c.update_pi.unwrap_or(true),
            seed: c.seed.unwrap_or(0),
            out: required(c.out, "out")?,
            threads: c.threads,
        };
        if s.restarts == 0 {
            return Err(CliError::config("restarts must be at least 1"));
        }
        s.options().validate().map_err(CliError::config_from)?;
        Ok(s)
    }

    fn options(&self) -> FitOptions {
        FitOptions {
            hidden: self.hidden,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            isotropic_sigma: self.isotropic,
            seed: self.seed,
            record_trace: true,
            update_pi: self.update_pi,
        }
    }
}

/// Per-run line of a fit summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub restart: usize,
    pub seed: u64,
    pub final_log_lik: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub ortho_deviation_deg: Option<f64>,
    pub pruned_dims: Vec<usize>,
    pub degenerate_dims: Vec<usize>,
    /// Result file, relative to the summary.
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureEntry {
    pub restart: usize,
    pub seed: u64,
    pub error: String,
    pub partial_trace: Vec<f64>,
}

/// `summary.json` written by `gsc fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_points: usize,
    pub dim: usize,
    pub hidden: usize,
    pub best_restart: usize,
    /// Successful runs in restart order.
    pub runs: Vec<RunEntry>,
    pub failures: Vec<FailureEntry>,
}

pub fn cmd_fit(s: FitSettings) -> CliResult<()> {
    let mut manifest = RunManifest::new("fit", &s, s.seed)?;
    manifest.add_input(&s.data)?;
    let data = staged("load", manifest.timed("load", || load_dataset(&s.data, s.header)))?;
    for i in 0..s.restarts {
        manifest
            .stage_seeds
            .insert(format!("restart/{i}"), restart_seed(s.seed, i));
    }
    let opts = s.options();
    let batch = staged("fit", manifest.timed("fit", || multi_restart(&data, &opts, s.restarts)))?;

    let mut results = batch.results;
    let best_restart = results[0].restart;
    results.sort_by_key(|r| r.restart);
    let mut outputs = Vec::new();
    let mut runs = Vec::new();
    for r in &results {
        let stem = format!("run_{:03}", r.restart);
        let json = s.out.join(format!("{stem}.json"));
        let trace = s.out.join(format!("{stem}.trace.csv"));
        write_json(&json, r)?;
        write_text(&trace, &format_trace_csv(&r.log_lik_trace))?;
        runs.push(RunEntry {
            restart: r.restart,
            seed: r.seed,
            final_log_lik: r.final_log_lik(),
            iterations_run: r.iterations_run,
            converged: r.converged,
            ortho_deviation_deg: r.ortho_deviation_deg,
            pruned_dims: r.pruned_dims.clone(),
            degenerate_dims: r.degenerate_dims.clone(),
            file: format!("{stem}.json"),
        });
        outputs.push(json);
        outputs.push(trace);
    }
    let failures: Vec<FailureEntry> = batch
        .failures
        .iter()
        .map(|f| {
            eprintln!("warning: {f}");
            FailureEntry {
                restart: f.restart,
                seed: f.seed,
                error: f.error.to_string(),
                partial_trace: f.partial_trace.clone(),
            }
        })
        .collect();
    let summary = FitSummary {
        n_points: data.n_points(),
        dim: data.dim(),
        hidden: s.hidden,
        best_restart,
        runs,
        failures,
    };
    let summary_path = s.out.join("summary.json");
    write_json(&summary_path, &summary)?;
    outputs.push(summary_path);
    manifest.outputs = outputs;
    manifest.write(&s.out)?;

    let best = summary
        .runs
        .iter()
        .find(|r| r.restart == best_restart)
        .expect("best run is listed");
    println!(
        "{} of {} runs succeeded; best: restart {} log-likelihood {:.6}",
        summary.runs.len(),
        s.restarts,
        best.restart,
        best.final_log_lik
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSettings {
    pub results: PathBuf,
    pub truth: Option<PathBuf>,
    pub bin_width: f64,
    pub name: String,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl EvalSettings {
    pub fn resolve(c: EvalConfig) -> CliResult<Self> {
        let results = required(c.results, "results")?;
        let bin_width = c.bin_width.unwrap_or(DEFAULT_BIN_WIDTH_DEG);
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(CliError::config(format!("bin_width must be positive, got {bin_width}")));
        }
        Ok(EvalSettings {
            out: c.out.unwrap_or_else(|| results.join("eval")),
            results,
            truth: c.truth,
            bin_width,
            name: c.name.unwrap_or_else(|| "data".into()),
            threads: c.threads,
        })
    }
}

/// `eval.json` written by `gsc eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub evaluation: BatchEvaluation,
    pub notice: Option<String>,
}

/// Reads the `W` entry of a parameter or mixing JSON file.
pub fn read_truth(path: &Path) -> crate::error::Result<DMatrix<f64>> {
    #[derive(Deserialize)]
    struct WOnly {
        #[serde(rename = "W")]
        w: Vec<Vec<f64>>,
    }
    let t: WOnly = read_json(path)?;
    rows_to_matrix(&t.w, 0, "W")
}

fn write_histograms(out: &Path, suffix: &str, ev: &BatchEvaluation) -> CliResult<Vec<PathBuf>> {
    let ortho = out.join(format!("ortho_hist{suffix}.csv"));
    let lik = out.join(format!("loglik_hist{suffix}.csv"));
    write_text(&ortho, &ev.orthogonal.histogram.to_csv())?;
    write_text(&lik, &ev.likelihood.histogram.to_csv())?;
    Ok(vec![ortho, lik])
}

pub fn cmd_eval(s: EvalSettings) -> CliResult<()> {
    let mut manifest = RunManifest::new("eval", &s, 0)?;
    let summary_path = s.results.join("summary.json");
    manifest.add_input(&summary_path)?;
    let summary: FitSummary = staged("load", read_json(&summary_path))?;
    let mut results: Vec<FitResult> = Vec::with_capacity(summary.runs.len());
    for run in &summary.runs {
        let path = s.results.join(&run.file);
        manifest.add_input(&path)?;
        results.push(staged("load", read_json(&path))?);
    }
    let (truth, notice) = match &s.truth {
        Some(path) => {
            manifest.add_input(path)?;
            (Some(staged("truth", read_truth(path))?), None)
        }
        None => {
            let msg = "no ground truth given; Amari index skipped".to_string();
            eprintln!("notice: {msg}");
            (None, Some(msg))
        }
    };
    let ev = manifest.timed("eval", || {
        evaluate_batch(&results, truth.as_ref(), summary.n_points, s.bin_width)
    });
    let ev = staged("eval", ev)?;

    let mut outputs = write_histograms(&s.out, "", &ev)?;
    if let Some(sum) = &ev.summary {
        let table = format_table(&[TableRow {
            name: s.name.clone(),
            n_points: ev.n_points,
            summary: sum.clone(),
        }]);
        let table_path = s.out.join("table.txt");
        write_text(&table_path, &table)?;
        outputs.push(table_path);
        print!("{table}");
    }
    for r in &ev.runs {
        println!(
            "run {:>3}  log-lik {:>14.4}  ortho {:>8}  amari {:>8}",
            r.restart,
            r.final_log_lik,
            fmt_opt(r.ortho_deviation_deg, 2),
            fmt_opt(r.amari, 4)
        );
    }
    println!(
        "orthogonal cluster: {} of {} runs below {:.1} deg; high-likelihood cluster: {} runs",
        ev.orthogonal.selected.len(),
        ev.runs.len(),
        ev.orthogonal.threshold_deg,
        ev.likelihood.selected.len()
    );
    let report_path = s.out.join("eval.json");
    write_json(
        &report_path,
        &EvalReport {
            name: s.name.clone(),
            evaluation: ev,
            notice,
        },
    )?;
    outputs.push(report_path);
    manifest.outputs = outputs;
    manifest.write(&s.out)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSettings {
    pub sources: Option<PathBuf>,
    pub header: bool,
    pub standardize: bool,
    pub n: Vec<usize>,
    pub offset: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub identity_mix: bool,
    pub bin_width: f64,
    pub seed: u64,
    pub name: String,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl BenchSettings {
    pub fn resolve(c: BenchConfig) -> CliResult<Self> {
        let name = c.name.unwrap_or_else(|| match &c.sources {
            Some(p) => p
                .file_stem()
                .map_or_else(|| "sources".into(), |s| s.to_string_lossy().into_owned()),
            None => "laplace4".into(),
        });
        let s = BenchSettings {
            sources: c.sources,
            header: c.header.unwrap_or(false),
            standardize: c.standardize.unwrap_or(true),
            n: c.n.unwrap_or_else(|| vec![200, 500]),
            offset: c.offset.unwrap_or(0),
            restarts: c.restarts.unwrap_or(20),
            max_iters: c.max_iters.unwrap_or(300),
            rel_tol: c.rel_tol.unwrap_or(1e-8),
            identity_mix: c.identity_mix.unwrap_or(false),
            bin_width: c.bin_width.unwrap_or(DEFAULT_BIN_WIDTH_DEG),
            seed: c.seed.unwrap_or(0),
            name,
            out: required(c.out, "out")?,
            threads: c.threads,
        };
        if s.n.is_empty() || s.n.contains(&0) {
            return Err(CliError::config("n must list at least one positive window length"));
        }
        if s.restarts == 0 || s.max_iters == 0 {
            return Err(CliError::config("restarts and max_iters must be at least 1"));
        }
        if !(s.bin_width > 0.0 && s.bin_width.is_finite()) {
            return Err(CliError::config(format!("bin_width must be positive, got {}", s.bin_width)));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_points: usize,
    pub offset: usize,
    pub mix_seed: Option<u64>,
    pub fit_seed: u64,
    #[serde(rename = "A")]
    pub mixing: Vec<Vec<f64>>,
    pub evaluation: BatchEvaluation,
    pub failures: Vec<String>,
}

/// `bench.json` written by `gsc bench`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub sources: String,
    pub source_stats: SourceStats,
    pub standardized: bool,
    pub rows: Vec<BenchRow>,
    pub table: String,
}

pub fn cmd_bench(s: BenchSettings) -> CliResult<()> {
    let mut manifest = RunManifest::new("bench", &s, s.seed)?;
    let src = match &s.sources {
        Some(path) => {
            let loaded = manifest.timed("load", || load_sources_csv(path, s.header, s.standardize));
            let loaded = staged("load", loaded)?;
            manifest.add_input(path)?;
            loaded
        }
        None => {
            let mut src = staged("load", bundled_sources())?;
            if s.standardize {
                src.standardize();
            }
            src
        }
    };
    let h = src.n_sources();
    if h < 2 {
        return Err(CliError::data(format!("load: separation needs at least 2 sources, found {h}")));
    }

    let mut rows = Vec::new();
    let mut table_rows = Vec::new();
    let mut outputs = Vec::new();
    for &n in &s.n {
        let mix = if s.identity_mix {
            MixSpec {
                a: DMatrix::identity(h, h),
                seed: 0,
            }
        } else {
            let seed = derive_seed(s.seed, "mix", n as u64);
            manifest.stage_seeds.insert(format!("mix/n{n}"), seed);
            staged("mix", random_orthogonal(h, seed))?
        };
        let data = staged("mix", mix_sources(&src, &mix, n, s.offset))?;
        let fit_seed = derive_seed(s.seed, "fit", n as u64);
        manifest.stage_seeds.insert(format!("fit/n{n}"), fit_seed);
        let opts = FitOptions {
            hidden: h,
            max_iters: s.max_iters,
            rel_tol: s.rel_tol,
            isotropic_sigma: true,
            seed: fit_seed,
            record_trace: false,
            update_pi: true,
        };
        let batch = manifest.timed(&format!("fit/n{n}"), || multi_restart(&data, &opts, s.restarts));
        let mut batch = staged("fit", batch)?;
        batch.results.sort_by_key(|r| r.restart);
        let ev = staged("eval", evaluate_batch(&batch.results, Some(&mix.a), n, s.bin_width))?;
        outputs.extend(write_histograms(&s.out, &format!("_n{n}"), &ev)?);
        if let Some(sum) = ev.summary.clone() {
            table_rows.push(TableRow {
                name: s.name.clone(),
                n_points: n,
                summary: sum,
            });
        }
        rows.push(BenchRow {
            n_points: n,
            offset: s.offset,
            mix_seed: (!s.identity_mix).then_some(mix.seed),
            fit_seed,
            mixing: matrix_to_rows(&mix.a),
            evaluation: ev,
            failures: batch.failures.iter().map(|f| f.to_string()).collect(),
        });
    }
    let table = format_table(&table_rows);
    print!("{table}");
    let table_path = s.out.join("table.txt");
    write_text(&table_path, &table)?;
    outputs.push(table_path);
    let report = BenchReport {
        name: s.name.clone(),
        sources: src.provenance.clone(),
        source_stats: src.stats(),
        standardized: s.standardize,
        rows,
        table,
    };
    let report_path = s.out.join("bench.json");
    write_json(&report_path, &report)?;
    outputs.push(report_path);
    manifest.outputs = outputs;
    manifest.write(&s.out)?;
    Ok(())
}

impl From<GscError> for CliError {
    fn from(e: GscError) -> Self {
        let code = match &e {
            GscError::TooManyHidden { .. } => super::EXIT_USAGE,
            GscError::Numerical(_) => super::EXIT_NUMERICAL,
            _ => super::EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

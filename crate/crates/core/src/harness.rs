//! Experiment configuration and the replication engine behind the command line
//! tool: simulation, fitting, replicated fits and model comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::estimator::{fit_two_step, CLConfig, FitResult, NormalizerForm, ParamBox};
use crate::geometry::RectWindow;
use crate::inference::{self, compare_models, ICReport, PlugInOptions, WaldSummary};
use crate::kernel::{check_existence, KernelModel, Theta};
use crate::patterns::{self, PointPattern};
use crate::sampler::{build_spectral_approx_with, sample_dpp, RngStream, SpectralApprox, SpectralOptions, TailHandling};

/// Smallest fraction of successful replicates for which a summary is produced.
pub const MIN_SUCCESS_FRACTION: f64 = 0.8;

/// Environment variable read when no thread count is given.
pub const THREADS_ENV: &str = "DPPFIT_THREADS";

/// Interaction radius: `"n/k"` (a fraction of the window side) or an explicit value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusRule {
    Explicit(f64),
    Rule(String),
}

impl Default for RadiusRule {
    fn default() -> Self {
        RadiusRule::Rule("n/8".into())
    }
}

impl RadiusRule {
    pub fn resolve(&self, n: f64) -> Result<f64> {
        let r = match self {
            RadiusRule::Explicit(r) => *r,
            RadiusRule::Rule(s) => {
                let k = s
                    .trim()
                    .strip_prefix("n/")
                    .and_then(|k| k.trim().parse::<f64>().ok())
                    .ok_or_else(|| DppError::Validation(format!("radius rule must be \"n/<k>\" or a number, got {s:?}")))?;
                n / k
            }
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(DppError::Validation(format!("interaction radius must be positive, got {r}")));
        }
        Ok(r)
    }
}

fn default_dim() -> usize {
    2
}

fn default_order() -> usize {
    2
}

/// A simulation study: the true model on `[0, n]^d` and how to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: KernelModel,
    /// Models fitted by `compare`; defaults to `model` alone.
    #[serde(default)]
    pub candidates: Vec<KernelModel>,
    pub theta0: Theta,
    pub n: f64,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(default)]
    pub r_rule: RadiusRule,
    #[serde(default = "default_order")]
    pub p: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `[alpha0 / 10, 10 alpha0]`.
    #[serde(default)]
    pub alpha_box: Option<ParamBox>,
    #[serde(default)]
    pub normalizer: NormalizerForm,
    /// Sandwich standard errors and Wald intervals for each replicate.
    #[serde(default)]
    pub standard_errors: bool,
    #[serde(default)]
    pub plug_in: PlugInOptions,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// An [`ExperimentConfig`] with its defaults and rules resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub window: RectWindow,
    pub radius: f64,
    pub alpha_box: ParamBox,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DppError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.d != 2 {
            return Err(DppError::UnsupportedDimension(self.d));
        }
        if self.replications == 0 {
            return Err(DppError::Validation("replications must be at least 1".into()));
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(DppError::Validation(format!("window scale n must be positive, got {}", self.n)));
        }
        self.theta0.validate(&self.model)?;
        check_existence(&self.model, &self.theta0)?;
        let window = RectWindow::square(self.n)?;
        let radius = self.r_rule.resolve(self.n)?;
        let alpha_box = match &self.alpha_box {
            Some(b) => b.clone(),
            None => {
                let a = &self.theta0.alpha;
                ParamBox::new(a.iter().map(|x| x / 10.0).collect(), a.iter().map(|x| x * 10.0).collect())?
            }
        };
        let cl = CLConfig {
            normalizer: self.normalizer,
            ..CLConfig::new(self.p, radius, alpha_box.clone())?
        };
        cl.validate()?;
        for m in &self.candidates {
            if m.dim() != 2 {
                return Err(DppError::UnsupportedDimension(m.dim()));
            }
        }
        Ok(ResolvedConfig {
            config: self.clone(),
            window,
            radius,
            alpha_box,
        })
    }
}

impl ResolvedConfig {
    pub fn cl_config(&self) -> Result<CLConfig> {
        let cl = CLConfig {
            normalizer: self.config.normalizer,
            ..CLConfig::new(self.config.p, self.radius, self.alpha_box.clone())?
        };
        cl.validate()?;
        Ok(cl)
    }

    pub fn candidates(&self) -> Vec<KernelModel> {
        if self.config.candidates.is_empty() {
            vec![self.config.model]
        } else {
            self.config.candidates.clone()
        }
    }

    /// Spectral approximation of the true kernel on the window.
    pub fn approximation(&self) -> Result<SpectralApprox> {
        let opts = SpectralOptions {
            tail: TailHandling::Thin,
            ..SpectralOptions::default()
        };
        build_spectral_approx_with(&self.config.model, &self.config.theta0, &self.window, opts)
    }
}

/// Thread count from the command line, else from [`THREADS_ENV`].
pub fn resolve_threads(cli: Option<usize>) -> Result<Option<usize>> {
    if let Some(k) = cli {
        return Ok(Some(k));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| DppError::Validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            return Err(DppError::Validation("thread count must be positive".into()));
        }
        b = b.num_threads(k);
    }
    let pool = b.build().map_err(|e| DppError::Validation(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Short name of an error variant, used to tally failures.
pub fn error_kind(e: &DppError) -> &'static str {
    match e {
        DppError::Domain(_) => "Domain",
        DppError::InvalidArgument(_) => "InvalidArgument",
        DppError::UnsupportedDimension(_) => "UnsupportedDimension",
        DppError::ExistenceViolated { .. } => "ExistenceViolated",
        DppError::DegenerateConfiguration => "DegenerateConfiguration",
        DppError::EmptyErosion { .. } => "EmptyErosion",
        DppError::TruncationFailure { .. } => "TruncationFailure",
        DppError::SamplerStall { .. } => "SamplerStall",
        DppError::Parse { .. } => "Parse",
        DppError::Validation(_) => "Validation",
        DppError::NormalizerDegenerate(_) => "NormalizerDegenerate",
        DppError::NoPairs => "NoPairs",
        DppError::NoTuples { .. } => "NoTuples",
        DppError::DegenerateLikelihood => "DegenerateLikelihood",
        DppError::OrderTooLarge { .. } => "OrderTooLarge",
        DppError::InfoNotPd => "InfoNotPd",
        DppError::TooManyFailures { .. } => "TooManyFailures",
        DppError::Io { .. } => "Io",
        DppError::Json(_) => "Json",
    }
}

/// Draws replicate `index` of the experiment.
pub fn simulate_one(approx: &SpectralApprox, seed: u64, index: usize) -> Result<PointPattern> {
    let mut stream = RngStream::new(seed, index as u64);
    sample_dpp(approx, &mut stream)
}

/// Draws all replicates of the experiment.
pub fn simulate(cfg: &ResolvedConfig, threads: Option<usize>) -> Result<Vec<PointPattern>> {
    let approx = cfg.approximation()?;
    let seed = cfg.config.seed;
    in_pool(threads, || {
        (0..cfg.config.replications)
            .into_par_iter()
            .map(|i| simulate_one(&approx, seed, i))
            .collect::<Result<Vec<_>>>()
    })?
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DppError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DppError::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes each replicate as `pattern_NNNN.csv` with its window sidecar.
pub fn cmd_simulate(cfg: &ResolvedConfig, out_dir: &Path, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    let patterns = simulate(cfg, threads)?;
    create_dir(out_dir)?;
    let mut paths = Vec::with_capacity(patterns.len());
    for (i, p) in patterns.iter().enumerate() {
        let path = out_dir.join(format!("pattern_{i:04}.csv"));
        patterns::write_pattern(p, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub n_points: Option<usize>,
    pub fit: Option<FitResult>,
    pub wald: Option<WaldSummary>,
    /// Why the standard errors are missing when they were requested.
    pub wald_error: Option<String>,
    pub error_kind: Option<String>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn failed(index: usize, n_points: Option<usize>, e: &DppError) -> Self {
        Self {
            index,
            n_points,
            fit: None,
            wald: None,
            wald_error: None,
            error_kind: Some(error_kind(e).into()),
            error: Some(e.to_string()),
        }
    }
}

/// Fit of one pattern with optional sandwich standard errors.
pub fn fit_with_errors(
    model: &KernelModel,
    pattern: &PointPattern,
    config: &CLConfig,
    standard_errors: bool,
    opts: &PlugInOptions,
) -> Result<(FitResult, Option<Result<WaldSummary>>)> {
    let fit = fit_two_step(model, pattern, config)?;
    let wald = standard_errors.then(|| {
        if fit.order != 2 {
            return Err(DppError::InvalidArgument("standard errors need a pairwise fit".into()));
        }
        let theta = Theta::new(fit.lambda_hat, fit.alpha_hat.clone());
        let blocks = inference::asymptotic_blocks(model, &theta, pattern.window(), fit.radius, opts)?;
        inference::sandwich(&blocks, &theta, pattern.window())
    });
    Ok((fit, wald))
}

fn run_replicate(cfg: &ResolvedConfig, approx: &SpectralApprox, cl: &CLConfig, index: usize) -> ReplicateRecord {
    let pattern = match simulate_one(approx, cfg.config.seed, index) {
        Ok(p) => p,
        Err(e) => return ReplicateRecord::failed(index, None, &e),
    };
    let n_points = Some(pattern.count());
    match fit_with_errors(&cfg.config.model, &pattern, cl, cfg.config.standard_errors, &cfg.config.plug_in) {
        Ok((fit, wald)) => {
            let (wald, wald_error) = match wald {
                Some(Ok(w)) => (Some(w), None),
                Some(Err(e)) => (None, Some(e.to_string())),
                None => (None, None),
            };
            ReplicateRecord {
                index,
                n_points,
                fit: Some(fit),
                wald,
                wald_error,
                error_kind: None,
                error: None,
            }
        }
        Err(e) => ReplicateRecord::failed(index, n_points, &e),
    }
}

/// Mean and unbiased standard deviation; the latter is missing for one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub mean: f64,
    pub sd: Option<f64>,
}

impl ParamStat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, sd })
    }
}

/// Mean and standard deviation of the estimates over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub setup: ResolvedConfig,
    pub replications: usize,
    pub successes: usize,
    /// Failed replicates by error kind.
    pub failures: BTreeMap<String, usize>,
    pub boundary_hits: usize,
    pub lambda: Option<ParamStat>,
    pub alpha: Vec<Option<ParamStat>>,
    /// Fraction of Wald intervals covering the truth, `(lambda, alpha...)`.
    pub coverage: Option<Vec<f64>>,
    pub records: Vec<ReplicateRecord>,
}

fn check_success(successes: usize, total: usize) -> Result<()> {
    if (successes as f64) < MIN_SUCCESS_FRACTION * total as f64 {
        return Err(DppError::TooManyFailures {
            failed: total - successes,
            total,
        });
    }
    Ok(())
}

/// Simulates and fits every replicate, in parallel, and summarizes in
/// replicate order.
pub fn replicate(cfg: &ResolvedConfig, threads: Option<usize>) -> Result<ReplicationSummary> {
    let approx = cfg.approximation()?;
    let cl = cfg.cl_config()?;
    let records: Vec<ReplicateRecord> = in_pool(threads, || {
        (0..cfg.config.replications)
            .into_par_iter()
            .map(|i| run_replicate(cfg, &approx, &cl, i))
            .collect()
    })?;
    summarize(cfg, records)
}

pub fn summarize(cfg: &ResolvedConfig, records: Vec<ReplicateRecord>) -> Result<ReplicationSummary> {
    let q = cfg.config.theta0.alpha.len();
    let fits: Vec<&FitResult> = records.iter().filter_map(|r| r.fit.as_ref()).collect();
    let mut failures = BTreeMap::new();
    for r in &records {
        if let Some(k) = &r.error_kind {
            *failures.entry(k.clone()).or_insert(0) += 1;
        }
    }
    check_success(fits.len(), records.len())?;
    let lambda = ParamStat::of(&fits.iter().map(|f| f.lambda_hat).collect::<Vec<_>>());
    let alpha = (0..q)
        .map(|j| ParamStat::of(&fits.iter().map(|f| f.alpha_hat[j]).collect::<Vec<_>>()))
        .collect();
    let truth: Vec<f64> = std::iter::once(cfg.config.theta0.lambda)
        .chain(cfg.config.theta0.alpha.iter().copied())
        .collect();
    let walds: Vec<&WaldSummary> = records.iter().filter_map(|r| r.wald.as_ref()).collect();
    let coverage = (!walds.is_empty()).then(|| {
        (0..truth.len())
            .map(|j| {
                let hits = walds
                    .iter()
                    .filter(|w| w.intervals[j][0] <= truth[j] && truth[j] <= w.intervals[j][1])
                    .count();
                hits as f64 / walds.len() as f64
            })
            .collect()
    });
    Ok(ReplicationSummary {
        setup: cfg.clone(),
        replications: records.len(),
        successes: fits.len(),
        failures,
        boundary_hits: fits.iter().filter(|f| f.diagnostics.boundary_hit).count(),
        lambda,
        alpha,
        coverage,
        records,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Table of the estimates: one row per parameter with mean and standard deviation.
pub fn summary_table(s: &ReplicationSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| DppError::Validation(format!("csv: {e}"));
    w.write_record(["model", "parameter", "mean", "sd", "successes", "replications"])
        .map_err(csv_err)?;
    let label = s.setup.config.model.label();
    let mut rows = vec![("lambda".to_string(), s.lambda)];
    for (j, a) in s.alpha.iter().enumerate() {
        let name = if s.alpha.len() == 1 { "alpha".to_string() } else { format!("alpha{}", j + 1) };
        rows.push((name, *a));
    }
    for (name, stat) in rows {
        w.write_record([
            label.clone(),
            name,
            fmt_opt(stat.map(|s| s.mean)),
            fmt_opt(stat.and_then(|s| s.sd)),
            s.successes.to_string(),
            s.replications.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DppError::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// One row per replicate.
pub fn replicate_table(s: &ReplicationSummary) -> Result<String> {
    let q = s.alpha.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| DppError::Validation(format!("csv: {e}"));
    let mut header = vec!["index".to_string(), "n_points".into(), "lambda_hat".into()];
    header.extend((0..q).map(|j| format!("alpha_hat{}", j + 1)));
    header.extend(["cl_value".into(), "n_tuples".into(), "boundary_hit".into(), "se_lambda".into()]);
    header.extend((0..q).map(|j| format!("se_alpha{}", j + 1)));
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in &s.records {
        let mut row = vec![r.index.to_string(), r.n_points.map_or("NA".into(), |n| n.to_string())];
        match &r.fit {
            Some(f) => {
                row.push(format!("{}", f.lambda_hat));
                row.extend(f.alpha_hat.iter().map(|a| format!("{a}")));
                row.push(format!("{}", f.cl_value));
                row.push(f.n_tuples.to_string());
                row.push(f.diagnostics.boundary_hit.to_string());
            }
            None => row.extend(std::iter::repeat_n("NA".to_string(), q + 4)),
        }
        match &r.wald {
            Some(wd) => row.extend(wd.std_errors.iter().map(|s| format!("{s}"))),
            None => row.extend(std::iter::repeat_n("NA".to_string(), q + 1)),
        }
        row.push(r.error_kind.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DppError::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Writes `summary.json`, `summary.csv` and `replicates.csv`.
pub fn write_summary(s: &ReplicationSummary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let json = out_dir.join("summary.json");
    write_json(s, &json)?;
    let table = out_dir.join("summary.csv");
    write_text(&table, &summary_table(s)?)?;
    let reps = out_dir.join("replicates.csv");
    write_text(&reps, &replicate_table(s)?)?;
    Ok(vec![json, table, reps])
}

/// Criterion values of every candidate on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRecord {
    pub index: usize,
    pub reports: Vec<ICReport>,
    pub selected: Option<String>,
    pub error_kind: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: String,
    pub count: usize,
    pub frequency: f64,
}

/// How often each candidate attains the smallest information criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub setup: ResolvedConfig,
    pub replications: usize,
    pub successes: usize,
    pub failures: BTreeMap<String, usize>,
    pub selections: Vec<Selection>,
    pub records: Vec<CompareRecord>,
}

/// Fits every candidate to one pattern and ranks them by the information criterion.
pub fn rank_models(
    candidates: &[KernelModel],
    pattern: &PointPattern,
    config: &CLConfig,
    opts: &PlugInOptions,
) -> Result<Vec<ICReport>> {
    if config.order != 2 {
        return Err(DppError::InvalidArgument(format!(
            "model comparison needs pairwise fits, got order {}",
            config.order
        )));
    }
    let reports = candidates
        .iter()
        .map(|m| {
            let fit = fit_two_step(m, pattern, config)?;
            inference::ic2(m, &fit, pattern.window(), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(compare_models(&reports))
}

fn run_compare(
    cfg: &ResolvedConfig,
    approx: &SpectralApprox,
    cl: &CLConfig,
    candidates: &[KernelModel],
    index: usize,
) -> CompareRecord {
    let out = simulate_one(approx, cfg.config.seed, index).and_then(|p| rank_models(candidates, &p, cl, &cfg.config.plug_in));
    match out {
        Ok(ranked) => CompareRecord {
            index,
            selected: ranked.first().map(|r| r.label.clone()),
            reports: ranked,
            error_kind: None,
            error: None,
        },
        Err(e) => CompareRecord {
            index,
            reports: Vec::new(),
            selected: None,
            error_kind: Some(error_kind(&e).into()),
            error: Some(e.to_string()),
        },
    }
}

/// Simulates from the true model and tallies which candidate the criterion selects.
pub fn compare(cfg: &ResolvedConfig, threads: Option<usize>) -> Result<ComparisonSummary> {
    let approx = cfg.approximation()?;
    let cl = cfg.cl_config()?;
    let candidates = cfg.candidates();
    let records: Vec<CompareRecord> = in_pool(threads, || {
        (0..cfg.config.replications)
            .into_par_iter()
            .map(|i| run_compare(cfg, &approx, &cl, &candidates, i))
            .collect()
    })?;
    let mut failures = BTreeMap::new();
    for r in &records {
        if let Some(k) = &r.error_kind {
            *failures.entry(k.clone()).or_insert(0) += 1;
        }
    }
    let successes = records.iter().filter(|r| r.selected.is_some()).count();
    check_success(successes, records.len())?;
    let selections = candidates
        .iter()
        .map(|m| {
            let label = m.label();
            let count = records.iter().filter(|r| r.selected.as_deref() == Some(label.as_str())).count();
            Selection {
                frequency: count as f64 / successes as f64,
                model: label,
                count,
            }
        })
        .collect();
    Ok(ComparisonSummary {
        setup: cfg.clone(),
        replications: records.len(),
        successes,
        failures,
        selections,
        records,
    })
}

/// Writes `compare.json` and the selection table `compare.csv`.
pub fn write_comparison(s: &ComparisonSummary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let json = out_dir.join("compare.json");
    write_json(s, &json)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| DppError::Validation(format!("csv: {e}"));
    w.write_record(["model", "selected", "frequency", "successes"]).map_err(csv_err)?;
    for sel in &s.selections {
        w.write_record([
            sel.model.clone(),
            sel.count.to_string(),
            format!("{}", sel.frequency),
            s.successes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DppError::Validation(format!("csv: {e}")))?;
    let table = out_dir.join("compare.csv");
    write_text(&table, &String::from_utf8_lossy(&bytes))?;
    Ok(vec![json, table])
}

/// Fitting an observed pattern with one or more models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Point CSV with header `x,y`; its window is read from the JSON sidecar.
    /// Relative paths are taken from the directory of the configuration file.
    pub pattern: PathBuf,
    pub models: Vec<KernelModel>,
    #[serde(default)]
    pub r_rule: RadiusRule,
    #[serde(default = "default_order")]
    pub p: usize,
    pub alpha_box: ParamBox,
    #[serde(default)]
    pub normalizer: NormalizerForm,
    #[serde(default)]
    pub plug_in: PlugInOptions,
}

impl FitConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DppError::io(path, e))?;
        let mut cfg: FitConfig = serde_json::from_str(&text)?;
        if cfg.pattern.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.pattern = dir.join(&cfg.pattern);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub fit: FitResult,
    pub wald: Option<WaldSummary>,
    pub ic: Option<ICReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub pattern: PathBuf,
    pub window: RectWindow,
    pub n_points: usize,
    pub fits: Vec<ModelFit>,
    /// Model labels by increasing information criterion.
    pub ranking: Option<Vec<String>>,
}

/// Fits every configured model to the pattern, optionally with sandwich
/// standard errors and the information criterion.
pub fn cmd_fit(cfg: &FitConfig, standard_errors: bool, ic: bool) -> Result<FitReport> {
    if cfg.models.is_empty() {
        return Err(DppError::Validation("no models to fit".into()));
    }
    let pattern = patterns::read_pattern(&cfg.pattern)?;
    let window = pattern.window().clone();
    if window.dim() != 2 {
        return Err(DppError::UnsupportedDimension(window.dim()));
    }
    // the window scale of a square [0, n]^2
    let n = window.area().sqrt();
    let radius = cfg.r_rule.resolve(n)?;
    let cl = CLConfig {
        normalizer: cfg.normalizer,
        ..CLConfig::new(cfg.p, radius, cfg.alpha_box.clone())?
    };
    cl.validate()?;
    let mut fits = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        let (fit, wald) = fit_with_errors(m, &pattern, &cl, standard_errors, &cfg.plug_in)?;
        let wald = wald.transpose()?;
        let report = if ic { Some(inference::ic2(m, &fit, &window, &cfg.plug_in)?) } else { None };
        fits.push(ModelFit { fit, wald, ic: report });
    }
    let ranking = ic.then(|| {
        let reports: Vec<ICReport> = fits.iter().filter_map(|f| f.ic.clone()).collect();
        compare_models(&reports).into_iter().map(|r| r.label).collect()
    });
    Ok(FitReport {
        pattern: cfg.pattern.clone(),
        n_points: pattern.count(),
        window,
        fits,
        ranking,
    })
}

pub fn write_fit_report(report: &FitReport, out_dir: &Path) -> Result<PathBuf> {
    create_dir(out_dir)?;
    let path = out_dir.join("fit.json");
    write_json(report, &path)?;
    Ok(path)
}

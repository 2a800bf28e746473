//! Monte Carlo coverage studies and report serialization.
//!
//! Path `m` is simulated from the stream `(seed, Path, m)` and its bootstrap
//! weights from `(seed, Weights, m, r)`, so a report depends only on the
//! configuration and never on the number of worker threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjustment::{scalings, RateScalings};
use crate::bootstrap::{
    confidence_interval, distribution, draw_quantiles, BlockPartition, BootstrapMode,
    BootstrapSettings, WeightScheme,
};
use crate::error::{Error, Result};
use crate::gqmle::{fit, hessians, FitOptions, GqmleFit};
use crate::model::{registry, CoefficientModel, SamplingDesign};
use crate::noise::{NoiseKind, RngStream, StreamRole};
use crate::simulate::{simulate, SamplePath};

/// Share of failed paths above which a coverage run is rejected.
const MAX_PATH_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: String,
    pub noise: NoiseKind,
    pub n: usize,
    /// Terminal time `T`; the step is `h = T/n`.
    #[serde(rename = "T", alias = "t", alias = "horizon")]
    pub horizon: f64,
    pub k: usize,
    #[serde(alias = "M")]
    pub paths: usize,
    #[serde(alias = "R")]
    pub reps: usize,
    pub level: f64,
    pub scheme: WeightScheme,
    pub mode: BootstrapMode,
    pub substeps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(skip_serializing)]
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "ou_sqrt_scale".into(),
            noise: NoiseKind::Wiener,
            n: 100_000,
            horizon: 500.0,
            k: 25,
            paths: 1000,
            reps: 1000,
            level: 0.99,
            scheme: WeightScheme::ScaledBeta,
            mode: BootstrapMode::ScoreShortcut,
            substeps: 1,
            seed: 0,
            parallelism: 0,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML or JSON file, chosen by extension.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext.to_ascii_lowercase().as_str() {
            "toml" => toml::from_str(&text).map_err(|e| Error::format(path, e)),
            "json" => serde_json::from_str(&text).map_err(|e| Error::format(path, e)),
            other => Err(Error::Config(format!(
                "unsupported configuration extension '{other}' (expected toml or json)"
            ))),
        }
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn design(&self) -> Result<SamplingDesign> {
        SamplingDesign::from_horizon(self.n, self.horizon)
    }

    /// Checks the configuration and returns its sampling design.
    pub fn validate(&self) -> Result<SamplingDesign> {
        if self.paths == 0 {
            return Err(Error::Config("at least one path required".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("at least one bootstrap replication required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("T must be positive, got {}", self.horizon)));
        }
        BlockPartition::new(self.n, self.k)?;
        registry(&self.model)?;
        self.design()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: usize,
    pub theta_hat: Vec<f64>,
    pub b_n: f64,
    /// One `[lo, hi]` pair per parameter coordinate.
    pub intervals: Vec<[f64; 2]>,
    /// True when every coordinate interval contains the target.
    pub covered: bool,
    pub draw_failures: usize,
}

impl PathRecord {
    pub fn width(&self) -> f64 {
        self.intervals[0][1] - self.intervals[0][0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub path_id: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub target: Vec<f64>,
    /// `covered / successful`; failed paths are excluded.
    pub coverage: f64,
    /// Mean width of the first coordinate's interval.
    pub mean_width: f64,
    pub covered: usize,
    pub successful: usize,
    pub failed: usize,
    pub records: Vec<PathRecord>,
    pub failures: Vec<PathFailure>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl CoverageReport {
    /// Coverage recomputed from the per-path records.
    pub fn recompute_coverage(&self) -> f64 {
        let covered = self.records.iter().filter(|r| r.covered).count();
        covered as f64 / self.records.len() as f64
    }
}

/// Everything computed on a single path: fit, scalings, bootstrap quantiles
/// and intervals.
#[derive(Clone, Debug, Serialize)]
pub struct PathAnalysis {
    pub fit: GqmleFit,
    pub scalings: RateScalings,
    pub k: usize,
    pub replications: usize,
    pub draw_failures: usize,
    pub scheme: WeightScheme,
    pub mode: BootstrapMode,
    pub level: f64,
    pub quantile_lo: Vec<f64>,
    pub quantile_hi: Vec<f64>,
    pub intervals: Vec<[f64; 2]>,
}

/// Fits, bootstraps and inverts the interval on one observed path.
pub fn analyze_path(
    path: &SamplePath,
    model: &CoefficientModel,
    k: usize,
    level: f64,
    settings: &BootstrapSettings,
) -> Result<PathAnalysis> {
    let part = BlockPartition::new(path.n(), k)?;
    let fitted = fit(path, model, &settings.fit_options)?;
    let s = scalings(path, model, &fitted)?;
    let (_, gamma_bar) = hessians(&fitted);
    let dist = distribution(path, model, &fitted, &s, &gamma_bar, &part, settings)?;
    let (quantile_lo, quantile_hi) = draw_quantiles(&dist, level)?;
    let intervals = confidence_interval(&dist, &fitted.theta(), &gamma_bar, &s, level)?
        .into_iter()
        .map(|(lo, hi)| [lo, hi])
        .collect();
    Ok(PathAnalysis {
        fit: fitted,
        scalings: s,
        k,
        replications: dist.replications(),
        draw_failures: dist.failures,
        scheme: settings.scheme,
        mode: settings.mode,
        level,
        quantile_lo,
        quantile_hi,
        intervals,
    })
}

fn run_path(cfg: &ExperimentConfig, design: SamplingDesign, target: &[f64], m: usize) -> Result<PathRecord> {
    let preset = registry(&cfg.model)?;
    let dynamics = preset.dynamics.with_noise(cfg.noise);
    let mut rng = RngStream::for_role(cfg.seed, StreamRole::Path, m as u64, 0);
    let path = simulate(&dynamics, design, cfg.substeps, &mut rng)?;
    let settings = BootstrapSettings {
        scheme: cfg.scheme,
        replications: cfg.reps,
        mode: cfg.mode,
        seed: cfg.seed,
        path_index: m as u64,
        fit_options: FitOptions::default(),
    };
    let a = analyze_path(&path, &preset.model, cfg.k, cfg.level, &settings)?;
    let covered = a
        .intervals
        .iter()
        .zip(target)
        .all(|(iv, t)| iv[0] <= *t && *t <= iv[1]);
    Ok(PathRecord {
        path_id: m,
        theta_hat: a.fit.theta(),
        b_n: a.scalings.b,
        intervals: a.intervals,
        covered,
        draw_failures: a.draw_failures,
    })
}

/// Runs the simulate → fit → bootstrap → interval pipeline on `M` paths.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    let start = Instant::now();
    let design = cfg.validate()?;
    BlockPartition::new(cfg.n, cfg.k)?.check_rate(cfg.horizon);
    let target = registry(&cfg.model)?
        .true_theta
        .ok_or_else(|| Error::Config(format!("model '{}' has no known target parameter", cfg.model)))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<PathRecord>> = pool.install(|| {
        (0..cfg.paths)
            .into_par_iter()
            .map(|m| run_path(cfg, design, &target, m))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (m, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("path {m} failed: {e}");
                failures.push(PathFailure {
                    path_id: m,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    if failures.len() as f64 > MAX_PATH_FAILURE_RATE * cfg.paths as f64 || records.is_empty() {
        return Err(Error::Experiment {
            failed: failures.len(),
            total: cfg.paths,
        });
    }
    let covered = records.iter().filter(|r| r.covered).count();
    let successful = records.len();
    let mean_width = records.iter().map(PathRecord::width).sum::<f64>() / successful as f64;
    Ok(CoverageReport {
        config: cfg.clone(),
        target,
        coverage: covered as f64 / successful as f64,
        mean_width,
        covered,
        successful,
        failed: failures.len(),
        records,
        failures,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.csv` selects CSV; anything else JSON.
    pub fn from_path(path: impl AsRef<Path>) -> Self {
        match path.as_ref().extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Canonical JSON: keys sorted, two-space indentation, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_canonical_json(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_nonempty(report: &CoverageReport) -> Result<()> {
    if report.records.is_empty() || report.config.paths == 0 {
        return Err(Error::Config("refusing to write an empty coverage report".into()));
    }
    Ok(())
}

/// Writes the summary (CSV) or the full report (JSON).
pub fn write_report(report: &CoverageReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    ensure_nonempty(report)?;
    let path = path.as_ref();
    match format {
        ReportFormat::Json => write_json(report, path),
        ReportFormat::Csv => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            write_summary_csv(report, BufWriter::new(file)).map_err(|e| Error::format(path, e))
        }
    }
}

/// Summary row `n,T,k,noise,M,R,level,coverage,mean_width,seed`.
pub fn write_summary_csv<W: Write>(report: &CoverageReport, out: W) -> std::result::Result<(), csv::Error> {
    let c = &report.config;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "T", "k", "noise", "M", "R", "level", "coverage", "mean_width", "seed"])?;
    w.write_record([
        c.n.to_string(),
        c.horizon.to_string(),
        c.k.to_string(),
        c.noise.to_string(),
        c.paths.to_string(),
        c.reps.to_string(),
        c.level.to_string(),
        report.coverage.to_string(),
        report.mean_width.to_string(),
        c.seed.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Per-path rows `path_id,gamma_hat,b_n,ci_lo,ci_hi,covered` for the first
/// coordinate.
pub fn write_path_csv(report: &CoverageReport, path: impl AsRef<Path>) -> Result<()> {
    ensure_nonempty(report)?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_path_rows(report, BufWriter::new(file)).map_err(|e| Error::format(path, e))
}

pub fn write_path_rows<W: Write>(report: &CoverageReport, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "gamma_hat", "b_n", "ci_lo", "ci_hi", "covered"])?;
    for r in &report.records {
        w.write_record([
            r.path_id.to_string(),
            r.theta_hat[0].to_string(),
            r.b_n.to_string(),
            r.intervals[0][0].to_string(),
            r.intervals[0][1].to_string(),
            r.covered.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

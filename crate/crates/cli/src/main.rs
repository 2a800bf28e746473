use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdeboot::adjustment::scalings;
use sdeboot::bootstrap::{BlockPartition, BootstrapMode, BootstrapSettings, WeightScheme};
use sdeboot::experiment::{
    analyze_path, run_coverage, to_canonical_json, write_path_csv, write_report, ExperimentConfig,
    ReportFormat,
};
use sdeboot::gqmle::{fit, FitOptions};
use sdeboot::model::{registry, SamplingDesign, REGISTERED_MODELS};
use sdeboot::noise::{NoiseKind, RngStream, StreamRole};
use sdeboot::simulate::{simulate, SamplePath};
use sdeboot::{Error, Result};

/// Quasi-likelihood estimation and weighted block bootstrap for ergodic SDEs.
#[derive(Parser)]
#[command(name = "sdeboot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path from a registered model's dynamics and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a registered model to a path CSV and print the estimates.
    Fit(FitArgs),
    /// Bootstrap confidence intervals for a path CSV.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo coverage study.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "ou_sqrt_scale")]
    model: String,
    #[arg(long, default_value = "wiener")]
    noise: NoiseKind,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Terminal time T.
    #[arg(long = "t", default_value_t = 500.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    substeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Path CSV with header `t,x`.
    input: PathBuf,
    #[arg(long, default_value = "ou_sqrt_scale")]
    model: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    input: PathBuf,
    #[arg(long, default_value = "ou_sqrt_scale")]
    model: String,
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value = "beta")]
    scheme: WeightScheme,
    #[arg(long, default_value = "score")]
    mode: BootstrapMode,
    #[arg(long, default_value_t = 0.99)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// TOML or JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "t")]
    horizon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    scheme: Option<WeightScheme>,
    #[arg(long)]
    mode: Option<BootstrapMode>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Report destination; `.csv` writes the summary row, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-path CSV.
    #[arg(long)]
    per_path: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let preset = registry(&a.model)?;
    let design = SamplingDesign::from_horizon(a.n, a.horizon)?;
    let dynamics = preset.dynamics.with_noise(a.noise);
    let mut rng = RngStream::for_role(a.seed, StreamRole::Path, 0, 0);
    let path = simulate(&dynamics, design, a.substeps, &mut rng)?;
    match a.out {
        Some(p) => path.write_csv(p),
        None => path
            .write_csv_to(std::io::stdout().lock())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

fn run_fit(a: FitArgs) -> Result<()> {
    let preset = registry(&a.model)?;
    let path = SamplePath::read_csv(&a.input)?;
    let fitted = fit(&path, &preset.model, &FitOptions::default())?;
    let s = scalings(&path, &preset.model, &fitted)?;
    let report = json!({
        "model": a.model,
        "n": path.n(),
        "h": path.h(),
        "T": path.horizon(),
        "theta_hat": fitted.theta(),
        "fit": fitted,
        "scalings": s,
    });
    emit(&to_canonical_json(&report)?, a.out.as_deref())
}

fn run_bootstrap(a: BootstrapArgs) -> Result<()> {
    let preset = registry(&a.model)?;
    let path = SamplePath::read_csv(&a.input)?;
    let settings = BootstrapSettings {
        scheme: a.scheme,
        replications: a.reps,
        mode: a.mode,
        seed: a.seed,
        path_index: 0,
        fit_options: FitOptions::default(),
    };
    BlockPartition::new(path.n(), a.k)?.check_rate(path.horizon());
    let analysis = analyze_path(&path, &preset.model, a.k, a.level, &settings)?;
    let report = json!({
        "model": a.model,
        "n": path.n(),
        "h": path.h(),
        "T": path.horizon(),
        "seed": a.seed,
        "theta_hat": analysis.fit.theta(),
        "analysis": analysis,
    });
    emit(&to_canonical_json(&report)?, a.out.as_deref())
}

fn run_coverage_cmd(a: CoverageArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident => $target:ident),*) => {
            $(if let Some(v) = a.$field.clone() { cfg.$target = v; })*
        };
    }
    apply!(model => model, noise => noise, n => n, horizon => horizon, k => k, paths => paths,
        reps => reps, scheme => scheme, mode => mode, level => level, substeps => substeps,
        seed => seed, threads => parallelism);

    let report = run_coverage(&cfg)?;
    eprintln!(
        "coverage {:.4} over {} paths ({} failed) in {:.1}s",
        report.coverage, report.successful, report.failed, report.wall_seconds
    );
    match &a.out {
        Some(p) => write_report(&report, p, ReportFormat::from_path(p))?,
        None => print!("{}", to_canonical_json(&report)?),
    }
    if let Some(p) = &a.per_path {
        write_path_csv(&report, p)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Bootstrap(a) => run_bootstrap(a),
        Command::Coverage(a) => run_coverage_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut payload = json!({ "error": e.kind(), "message": e.to_string() });
            if matches!(e, Error::UnknownModel(_)) {
                payload["known_models"] = json!(REGISTERED_MODELS);
            }
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: parse -> preprocess -> estimate/analyze,
//! with every report carrying the resolved run configuration and a
//! content hash of the input file.
//!
//! Exit codes: 0 success, 1 data/compute error, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bar::{self, BarParams, SimulateConfig};
use crate::ingest::{self, Dataset};
use crate::pipelines::{self, StationarityTest};
use crate::preprocess::{self, PreprocessConfig};
use crate::stattests::dist;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Data(String),
}

impl From<ingest::IngestError> for CliError {
    fn from(e: ingest::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<preprocess::PreprocessError> for CliError {
    fn from(e: preprocess::PreprocessError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<bar::BarError> for CliError {
    fn from(e: bar::BarError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<pipelines::PipelineError> for CliError {
    fn from(e: pipelines::PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Wang,
    Stewart,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TestKind {
    Ks,
    T,
}

#[derive(Parser, Debug)]
#[command(
    name = "poletree",
    version,
    about = "Lineage-tree growth-rate statistics: BAR estimation, preprocessing and test pipelines"
)]
struct Cli {
    /// Worker threads for per-tree analyses (default: sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Input data file.
    #[arg(long)]
    input: PathBuf,
    /// Column layout of the input file.
    #[arg(long, value_enum)]
    format: Format,
    /// Run the cleaning procedure before the analysis.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    preprocess: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a data file and write the canonical JSON dataset.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean a dataset: drop short/aberrant trees, mark outlier cells.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "wang")]
        format: Format,
        #[arg(long, default_value_t = 20)]
        min_generations: u32,
        #[arg(long, default_value_t = 0.05)]
        trim: f64,
        #[arg(long, default_value_t = 3.0)]
        k_sigma: f64,
        /// Where to write the cleaning report (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Optionally write the cleaned dataset (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit growth rates from raw length series (CSV: cell_id,time_minutes,length[,complete]).
    Rates {
        #[arg(long)]
        input: PathBuf,
        /// Output CSV (cell_id,growth_rate with -1 for missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// BAR model: estimation and simulation.
    #[command(subcommand)]
    Bar(BarCommand),
    /// The named analyses; each writes a JSON report and plot-ready CSVs.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Internal numeric self-checks of the distribution functions.
    #[command(hide = true)]
    Selftest,
}

#[derive(Subcommand, Debug)]
enum BarCommand {
    /// Least-squares fit of (a0, b0, a1, b1) with confidence intervals.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate comb trees and write them in the 9-column text format.
    Simulate {
        #[arg(long)]
        a0: f64,
        #[arg(long)]
        b0: f64,
        #[arg(long)]
        a1: f64,
        #[arg(long)]
        b1: f64,
        #[arg(long, default_value_t = 0.005)]
        noise_sd: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_corr: f64,
        #[arg(long)]
        generations: u32,
        #[arg(long)]
        trees: u32,
        #[arg(long, default_value_t = 0.0)]
        missing_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        init_mean: Option<f64>,
        #[arg(long)]
        init_sd: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Per-tree regression of the spine rate on mother and grandmother.
    Mg {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 6)]
        min_triples: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Old- vs new-pole means, correlations and per-tree slopes.
    Poles {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 0.99)]
        level: f64,
        #[arg(long, default_value_t = 6)]
        min_pairs: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized growth-rate trends against pole accumulation.
    Trends {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 7)]
        max_n: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-tree half-vs-half tests on ARMA(1,1) residuals of the spine.
    Stationarity {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "ks")]
        test: TestKind,
        #[arg(long, default_value_t = 20)]
        min_points: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-generation five-number summaries and histograms.
    Generations {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated generation numbers, e.g. 2,3,4,5.
        #[arg(long, value_delimiter = ',')]
        list: Vec<u32>,
        /// Drop rates outside [0, 0.08] (boxplot display convention).
        #[arg(long, default_value_t = false)]
        exclude_outliers: bool,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run configuration echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub argv: Vec<String>,
    pub input_path: Option<String>,
    pub input_sha256: Option<String>,
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    config: RunConfig,
    report: T,
}

fn sha256_file(path: &Path) -> Option<String> {
    let bytes = fs::read(path).ok()?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Some(format!("{:x}", hasher.finalize()))
}

fn run_config(argv: &[String], input: Option<&Path>) -> RunConfig {
    RunConfig {
        argv: argv.to_vec(),
        input_path: input.map(|p| p.display().to_string()),
        input_sha256: input.and_then(sha256_file),
    }
}

fn write_report<T: Serialize>(
    path: &Path,
    config: RunConfig,
    report: T,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let envelope = Envelope { config, report };
    fs::write(path, serde_json::to_string_pretty(&envelope).unwrap())?;
    Ok(())
}

fn load_dataset(args: &InputArgs) -> Result<Dataset, CliError> {
    let ds = match args.format {
        Format::Wang => ingest::parse_wang(&args.input)?,
        Format::Stewart => ingest::parse_stewart(&args.input)?,
    };
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    if args.preprocess {
        let (cleaned, _) = preprocess::preprocess(&ds, &PreprocessConfig::default())?;
        Ok(cleaned)
    } else {
        Ok(ds)
    }
}

/// Entry point; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let argv: Vec<String> = argv.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 0 for --help/--version, 2 otherwise
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(cli, &argv) {
        Ok(()) => 0,
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { input, out } => {
            let ds = load_dataset(&input)?;
            fs::write(&out, ds.to_json()?)?;
            eprintln!(
                "ingested {} records in {} trees",
                ds.n_records(),
                ds.trees.len()
            );
            Ok(())
        }
        Command::Preprocess {
            input,
            format,
            min_generations,
            trim,
            k_sigma,
            report,
            out,
        } => {
            let ds = match format {
                Format::Wang => ingest::parse_wang(&input)?,
                Format::Stewart => ingest::parse_stewart(&input)?,
            };
            let config = PreprocessConfig {
                min_generations,
                trim,
                k_sigma,
                mad_consistency: true,
            };
            let (cleaned, rep) = preprocess::preprocess(&ds, &config)?;
            eprintln!(
                "removed {} short and {} aberrant trees, marked {} outliers",
                rep.trees_removed_short.len(),
                rep.trees_removed_aberrant.len(),
                rep.total_outliers()
            );
            write_report(&report, run_config(argv, Some(&input)), &rep)?;
            if let Some(out) = out {
                fs::write(&out, cleaned.to_json()?)?;
            }
            Ok(())
        }
        Command::Rates { input, out } => {
            let series = ingest::parse_lengths(&input)?;
            let mut csv = String::from("cell_id,growth_rate\n");
            for (id, s) in &series {
                match ingest::fit_growth_rate(s) {
                    Some(r) => csv.push_str(&format!("{id},{r}\n")),
                    None => csv.push_str(&format!("{id},-1\n")),
                }
            }
            fs::write(&out, csv)?;
            Ok(())
        }
        Command::Bar(cmd) => match cmd {
            BarCommand::Estimate { input, level, out } => {
                let ds = load_dataset(&input)?;
                let est = match input.format {
                    Format::Wang => bar::estimate_comb(&ds, level)?,
                    Format::Stewart => bar::estimate_full_tree(&ds, level)?,
                };
                eprintln!(
                    "theta_hat = ({:.4}, {:.4}, {:.4}, {:.4})",
                    est.theta_hat[0], est.theta_hat[1], est.theta_hat[2], est.theta_hat[3]
                );
                write_report(&out, run_config(argv, Some(&input.input)), &est)
            }
            BarCommand::Simulate {
                a0,
                b0,
                a1,
                b1,
                noise_sd,
                noise_corr,
                generations,
                trees,
                missing_prob,
                seed,
                init_mean,
                init_sd,
                out,
            } => {
                let ds = bar::simulate_comb(&SimulateConfig {
                    params: BarParams {
                        a0,
                        b0,
                        a1,
                        b1,
                        noise_sd,
                        noise_correlation: noise_corr,
                    },
                    n_generations: generations,
                    n_trees: trees,
                    missing_prob,
                    seed,
                    init_mean,
                    init_sd,
                })?;
                fs::write(&out, ds.to_text())?;
                Ok(())
            }
        },
        Command::Analyze(cmd) => run_analyze(cmd, argv),
        Command::Selftest => {
            if selftest() {
                Ok(())
            } else {
                Err(CliError::Data("selftest failed".into()))
            }
        }
    }
}

fn csv_path(json_out: &Path, suffix: &str) -> PathBuf {
    let stem = json_out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "report".into());
    json_out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn write_histogram_csv(path: &Path, hist: &pipelines::HistogramReport) -> Result<(), CliError> {
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for (i, &c) in hist.counts.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            hist.bin_edges[i],
            hist.bin_edges[i + 1],
            c
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}

fn run_analyze(cmd: AnalyzeCommand, argv: &[String]) -> Result<(), CliError> {
    match cmd {
        AnalyzeCommand::Mg {
            input,
            min_triples,
            bins,
            out,
        } => {
            let ds = load_dataset(&input)?;
            let rep = pipelines::mother_grandmother_analysis(&ds, min_triples, bins)?;
            write_histogram_csv(&csv_path(&out, "pm_hist"), &rep.beta_m_p_hist)?;
            write_histogram_csv(&csv_path(&out, "pg_hist"), &rep.beta_g_p_hist)?;
            eprintln!(
                "fit {} trees, beta_m mean {:.4}, median {:.4}",
                rep.per_tree.len(),
                rep.beta_m_mean,
                rep.beta_m_median
            );
            write_report(&out, run_config(argv, Some(&input.input)), &rep)
        }
        AnalyzeCommand::Poles {
            input,
            level,
            min_pairs,
            bins,
            out,
        } => {
            let ds = load_dataset(&input)?;
            let rep = pipelines::pole_comparison(&ds, level, min_pairs, bins)?;
            write_histogram_csv(&csv_path(&out, "beta_new_hist"), &rep.beta_m_new_hist)?;
            write_histogram_csv(&csv_path(&out, "beta_old_hist"), &rep.beta_m_old_hist)?;
            eprintln!(
                "mean test p = {:.3e}, old mean CI [{:.4}, {:.4}], new mean CI [{:.4}, {:.4}]",
                rep.mean_test.p_value,
                rep.mean_test.ci_mean_x.0,
                rep.mean_test.ci_mean_x.1,
                rep.mean_test.ci_mean_y.0,
                rep.mean_test.ci_mean_y.1
            );
            write_report(&out, run_config(argv, Some(&input.input)), &rep)
        }
        AnalyzeCommand::Trends {
            input,
            max_n,
            out,
        } => {
            let ds = load_dataset(&input)?;
            let (cumulated, switched) = pipelines::pole_trend_analysis(&ds, max_n)?;
            let mut csv = String::from("series,n,mean_normalized_rate,count\n");
            for (name, series) in [
                ("cumulated_new", &cumulated.new_pole),
                ("cumulated_old", &cumulated.old_pole),
                ("switched_new", &switched.new_pole),
                ("switched_old", &switched.old_pole),
            ] {
                for i in 0..series.n_values.len() {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        name, series.n_values[i], series.mean_normalized_rate[i], series.counts[i]
                    ));
                }
            }
            fs::write(csv_path(&out, "trends"), csv)?;
            eprintln!(
                "slopes: cumulated new {:.4}, old {:.4}; switched new {:.4}, old {:.4}",
                cumulated.new_pole.slope,
                cumulated.old_pole.slope,
                switched.new_pole.slope,
                switched.old_pole.slope
            );
            #[derive(Serialize)]
            struct Trends<'a> {
                cumulated: &'a pipelines::PoleTrendReport,
                switched: &'a pipelines::PoleTrendReport,
            }
            write_report(
                &out,
                run_config(argv, Some(&input.input)),
                Trends {
                    cumulated: &cumulated,
                    switched: &switched,
                },
            )
        }
        AnalyzeCommand::Stationarity {
            input,
            test,
            min_points,
            bins,
            out,
        } => {
            let ds = load_dataset(&input)?;
            let kind = match test {
                TestKind::Ks => StationarityTest::Ks,
                TestKind::T => StationarityTest::Student,
            };
            let rep = pipelines::stationarity_analysis(&ds, kind, min_points, bins)?;
            write_histogram_csv(&csv_path(&out, "p_hist"), &rep.p_hist)?;
            eprintln!(
                "{} trees tested, {} skipped, uniformity p = {:.4}",
                rep.per_tree.len(),
                rep.skipped.len(),
                rep.uniformity_p
            );
            write_report(&out, run_config(argv, Some(&input.input)), &rep)
        }
        AnalyzeCommand::Generations {
            input,
            list,
            exclude_outliers,
            bins,
            out,
        } => {
            let ds = load_dataset(&input)?;
            let rep = pipelines::generation_summary(&ds, &list, exclude_outliers, bins);
            let mut csv = String::from("generation,count,min,q1,median,q3,max\n");
            for row in &rep.rows {
                let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.generation,
                    row.count,
                    f(row.min),
                    f(row.q1),
                    f(row.median),
                    f(row.q3),
                    f(row.max)
                ));
            }
            fs::write(csv_path(&out, "boxplot"), csv)?;
            write_report(&out, run_config(argv, Some(&input.input)), &rep)
        }
    }
}

/// Numeric spot checks of the distribution kernels against independent
/// formulations.
fn selftest() -> bool {
    let mut ok = true;
    let mut check = |name: &str, err: f64, tol: f64| {
        let pass = err <= tol;
        println!(
            "{}: max error {:.2e} (tol {:.0e}) ... {}",
            name,
            err,
            tol,
            if pass { "ok" } else { "FAIL" }
        );
        ok &= pass;
    };

    // t CDF vs adaptive Simpson integration of the density
    let mut max_err: f64 = 0.0;
    for &df in &[1.0, 2.0, 5.0, 10.0, 30.0, 120.0] {
        for i in 0..=40 {
            let x = -6.0 + 0.3 * i as f64;
            let oracle = 0.5 + integrate_t_density(df, x);
            max_err = max_err.max((dist::t_cdf(x, df) - oracle).abs());
        }
    }
    check("t-cdf vs quadrature", max_err, 1e-8);

    // Kolmogorov tail: alternating series vs the theta-dual form
    let mut max_err: f64 = 0.0;
    for i in 1..=60 {
        let lambda = 0.05 * i as f64 + 0.3;
        let dual = 1.0 - kolmogorov_cdf_dual(lambda);
        max_err = max_err.max((dist::kolmogorov_sf(lambda) - dual).abs());
    }
    check("kolmogorov tail vs dual series", max_err, 1e-8);

    // normal quantile round trip
    let mut max_err: f64 = 0.0;
    for &p in &[1e-8, 1e-4, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-6] {
        let x = dist::normal_quantile(p);
        max_err = max_err.max((dist::normal_cdf(x) - p).abs());
    }
    check("normal quantile round trip", max_err, 1e-10);

    ok
}

/// Integral of the t density from 0 to x by adaptive Simpson.
pub fn integrate_t_density(df: f64, x: f64) -> f64 {
    let log_norm = dist::ln_gamma((df + 1.0) / 2.0)
        - dist::ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |t: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln()).exp();
    adaptive_simpson(&pdf, 0.0, x, 1e-12, 30)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
    let whole = simpson(f, a, b);
    let mid = 0.5 * (a + b);
    let left = simpson(f, a, mid);
    let right = simpson(f, mid, b);
    if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, mid, eps / 2.0, depth - 1)
            + adaptive_simpson(f, mid, b, eps / 2.0, depth - 1)
    }
}

/// Kolmogorov CDF via the theta-function dual series
/// `sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))`.
pub fn kolmogorov_cdf_dual(lambda: f64) -> f64 {
    let mut sum = 0.0;
    for k in 1..=200 {
        let m = (2 * k - 1) as f64;
        let term = (-m * m * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        sum += term;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
}

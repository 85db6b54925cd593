//! Command-line entry point: wires JSON configs to the library pipeline and
//! persists report artifacts.
//!
//! Subcommands: `expand` (expansion curves for a statistic spec), `simulate`
//! (Monte Carlo experiment from a config file or bundled preset), `gpcc-check`
//! (conditional characteristic-function diagnostics), `moments` (analytic
//! moment dump), and `presets` (list or export the bundled experiments).
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
//! failures (degenerate statistic, non-finite results, excessive drops).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::cumulants::coefficients;
use crate::error::{Error, Result};
use crate::expansion::{normal_cdf, normal_pdf, EdgeworthApprox};
use crate::gpcc::{estimate_modulus, GpccQuery};
use crate::model::{BaseDistribution, CoordinateMap, VectorModel};
use crate::moments::analytic_moments;
use crate::montecarlo::{
    default_grid, simulate, CoeffSource, ExperimentConfig, GridSpec, GRID_POINTS_DEFAULT,
};
use crate::report::{write_json, write_report_files};
use crate::statistics::{StatisticKind, StatisticSpec};

#[derive(Parser, Debug)]
#[command(
    name = "edgeworth",
    version,
    about = "First- and second-order Edgeworth expansions for smooth functions of sample means",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap on worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "EDGEWORTH_THREADS")]
    threads: Option<usize>,
    /// Directory receiving output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate expansion coefficients and cdf/pdf curves for a statistic spec
    Expand(ExpandArgs),
    /// Run a Monte Carlo experiment and write report artifacts
    Simulate(SimulateArgs),
    /// Probe conditional characteristic-function decay on spherical shells
    GpccCheck(GpccArgs),
    /// Print analytic mean, covariance, and central moment tensors for a model
    Moments(MomentsArgs),
    /// List the bundled experiments (optionally writing their config files)
    Presets(PresetsArgs),
}

#[derive(Args, Debug)]
struct ExpandArgs {
    /// JSON file holding a statistic spec ({"model": .., "statistic": ..})
    #[arg(long)]
    config: PathBuf,
    /// Sample size n
    #[arg(long)]
    n: u64,
    /// Aggregation block size (must divide n)
    #[arg(long)]
    block: Option<u64>,
    /// Lower grid edge (defaults to an automatic +-6 sigma window)
    #[arg(long)]
    grid_lo: Option<f64>,
    /// Upper grid edge
    #[arg(long)]
    grid_hi: Option<f64>,
    /// Number of grid points
    #[arg(long, default_value_t = GRID_POINTS_DEFAULT)]
    grid_points: usize,
    /// Output file stem (writes <stem>.curves.csv)
    #[arg(long, default_value = "expand")]
    stem: String,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Experiment config file (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled preset name (see `edgeworth presets`)
    #[arg(long)]
    preset: Option<String>,
    /// Override the replication count from the config
    #[arg(long)]
    reps: Option<u64>,
    /// Override the master seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output file stem (defaults to the preset name or config file stem)
    #[arg(long)]
    stem: Option<String>,
}

#[derive(Args, Debug)]
struct GpccArgs {
    /// Query file (JSON) holding model, a, shells, directions, and draws
    #[arg(long)]
    config: PathBuf,
    /// Master seed for the nested estimator
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file stem (writes <stem>.json)
    #[arg(long, default_value = "gpcc")]
    stem: String,
}

#[derive(Args, Debug)]
struct MomentsArgs {
    /// Model file (JSON) holding bases and the coordinate map
    #[arg(long)]
    config: PathBuf,
    /// Aggregation block size
    #[arg(long)]
    block: Option<u64>,
}

#[derive(Args, Debug)]
struct PresetsArgs {
    /// Write each preset as <name>.json into the output directory
    #[arg(long)]
    write: bool,
}

/// A named, ready-to-run experiment configuration.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: ExperimentConfig,
}

fn pearson_map() -> CoordinateMap {
    // Z = (X, Y, X^2, Y^2, XY).
    CoordinateMap {
        exponents: vec![
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![0, 2],
            vec![1, 1],
        ],
    }
}

fn preset_config(statistic: StatisticSpec, n: u64) -> ExperimentConfig {
    ExperimentConfig {
        statistic,
        n,
        reps: 100_000,
        seed: 0,
        block_b: None,
        coeff_source: CoeffSource::Estimated { n_coeff: 10_000 },
        grid: None,
    }
}

/// The four bundled experiments, expanded over their sample-size ladders.
///
/// Correlation over two chi-square(1) bases (n in {50, 100}), correlation
/// over Poisson(1) x chi-square(1) (same ladder), the two-pair squared-ratio
/// statistic over chi-square and Poisson bases (n in {100, 200, 300, 500}),
/// and the z-score statistic with weight a = 1/4 (n in {5, 10, 15, 20}).
/// Every preset uses 10^5 replications, seed 0, and coefficients estimated
/// from 10^4 pilot samples.
pub fn bundled_experiments() -> Vec<Preset> {
    let mut presets = Vec::new();

    let chisq_pair = vec![
        BaseDistribution::ChiSquare { df: 1.0 },
        BaseDistribution::ChiSquare { df: 1.0 },
    ];
    for n in [50, 100] {
        let spec = StatisticSpec {
            model: VectorModel::new(chisq_pair.clone(), pearson_map())
                .expect("bundled model is valid"),
            statistic: StatisticKind::Pearson,
        };
        presets.push(Preset {
            name: match n {
                50 => "exp1-corr-chisq-n50",
                _ => "exp1-corr-chisq-n100",
            },
            summary: "Pearson correlation, X and Y chi-square(1)",
            config: preset_config(spec, n),
        });
    }

    let mixed_pair = vec![
        BaseDistribution::Poisson { lambda: 1.0 },
        BaseDistribution::ChiSquare { df: 1.0 },
    ];
    for n in [50, 100] {
        let spec = StatisticSpec {
            model: VectorModel::new(mixed_pair.clone(), pearson_map())
                .expect("bundled model is valid"),
            statistic: StatisticKind::Pearson,
        };
        presets.push(Preset {
            name: match n {
                50 => "exp2-corr-poisson-n50",
                _ => "exp2-corr-poisson-n100",
            },
            summary: "Pearson correlation, X Poisson(1), Y chi-square(1)",
            config: preset_config(spec, n),
        });
    }

    // Ratio statistic: numerators (X, X^2), denominators (Y1, Y2).
    let ratio_bases = vec![
        BaseDistribution::ChiSquare { df: 1.0 },
        BaseDistribution::Poisson { lambda: 1.0 },
        BaseDistribution::Poisson { lambda: 1.0 },
    ];
    let ratio_map = CoordinateMap {
        exponents: vec![
            vec![1, 0, 0],
            vec![2, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
        ],
    };
    for (n, name) in [
        (100, "exp3-ratio-n100"),
        (200, "exp3-ratio-n200"),
        (300, "exp3-ratio-n300"),
        (500, "exp3-ratio-n500"),
    ] {
        let spec = StatisticSpec {
            model: VectorModel::new(ratio_bases.clone(), ratio_map.clone())
                .expect("bundled model is valid"),
            statistic: StatisticKind::RatioSquares { pairs: 2 },
        };
        presets.push(Preset {
            name,
            summary: "squared-ratio statistic, chi-square(1) over Poisson(1) pair",
            config: preset_config(spec, n),
        });
    }

    let normal_pair = vec![
        BaseDistribution::Normal { mean: 0.0, variance: 1.0 },
        BaseDistribution::Normal { mean: 0.0, variance: 1.0 },
    ];
    let zscore_map = CoordinateMap {
        exponents: vec![vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2]],
    };
    for (n, name) in [
        (5, "exp4-zscore-n5"),
        (10, "exp4-zscore-n10"),
        (15, "exp4-zscore-n15"),
        (20, "exp4-zscore-n20"),
    ] {
        let spec = StatisticSpec {
            model: VectorModel::new(normal_pair.clone(), zscore_map.clone())
                .expect("bundled model is valid"),
            statistic: StatisticKind::Zscore { a: 0.25 },
        };
        presets.push(Preset {
            name,
            summary: "z-score statistic, standard normal samples, a = 1/4",
            config: preset_config(spec, n),
        });
    }

    presets
}

// ---------------------------------------------------------------------------
// Plumbing.

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn io_error(context: &str, e: std::io::Error) -> Error {
    Error::InvalidParameter(format!("{context}: {e}"))
}

/// Exit code for a pipeline error: numerical failures are 3, everything else
/// (configuration, parsing, dimension problems) is 2.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DegenerateStatistic(_)
        | Error::NonFinite(_)
        | Error::TooManyDropped { .. }
        | Error::InsufficientData(_) => 3,
        _ => 2,
    }
}

fn run_expand(args: &ExpandArgs, out_dir: &Path) -> Result<()> {
    let spec: StatisticSpec = read_json(&args.config)?;
    spec.validate()?;
    let b = args.block.unwrap_or(1);
    if b == 0 {
        return Err(Error::InvalidParameter("block size must be positive".into()));
    }
    if args.n == 0 || args.n % b != 0 {
        return Err(Error::InvalidParameter(format!(
            "block size {b} must divide the sample size {}",
            args.n
        )));
    }
    let n_eff = args.n / b;
    let tensor = analytic_moments(&spec.model)?.aggregate_blocks(b);
    let mu = spec.model.mean_vector()?;
    let bundle = spec.bundle_at(&mu, &tensor.covariance())?;
    let coeffs = coefficients(&bundle, &tensor)?;
    let order1 = EdgeworthApprox::new(coeffs, n_eff, 1)?;
    let order2 = EdgeworthApprox::new(coeffs, n_eff, 2)?;

    let grid_spec = match (args.grid_lo, args.grid_hi) {
        (Some(lo), Some(hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "grid edges must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
            GridSpec { lo, hi, points: args.grid_points }
        }
        (None, None) => GridSpec {
            points: args.grid_points,
            ..default_grid(&coeffs, n_eff)
        },
        _ => {
            return Err(Error::InvalidParameter(
                "provide both --grid-lo and --grid-hi, or neither".into(),
            ))
        }
    };
    if grid_spec.points < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points".into()));
    }

    let mut csv = String::from(
        "x,cdf_normal,cdf_order1,cdf_order2,pdf_normal,pdf_order1,pdf_order2\n",
    );
    for x in grid_spec.points_vec() {
        use std::fmt::Write as _;
        let _ = writeln!(
            csv,
            "{x},{},{},{},{},{},{}",
            normal_cdf(x, coeffs.sigma2),
            order1.cdf(x),
            order2.cdf(x),
            normal_pdf(x, coeffs.sigma2),
            order1.pdf(x),
            order2.pdf(x)
        );
    }
    fs::create_dir_all(out_dir).map_err(|e| io_error("create output directory", e))?;
    let csv_path = out_dir.join(format!("{}.curves.csv", args.stem));
    fs::write(&csv_path, csv).map_err(|e| io_error("write curve table", e))?;

    let summary = json!({
        "coefficients": coeffs,
        "n": args.n,
        "block": b,
        "n_effective": n_eff,
        "grid": { "lo": grid_spec.lo, "hi": grid_spec.hi, "points": grid_spec.points },
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn run_simulate(args: &SimulateArgs, out_dir: &Path) -> Result<()> {
    let (mut cfg, default_stem, preset_name) = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let cfg: ExperimentConfig = read_json(path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".to_string());
            (cfg, stem, None)
        }
        (None, Some(name)) => {
            let preset = bundled_experiments()
                .into_iter()
                .find(|p| p.name == name.as_str())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "unknown preset '{name}'; run `edgeworth presets` for the list"
                    ))
                })?;
            (preset.config, name.clone(), Some(name.clone()))
        }
        _ => {
            return Err(Error::InvalidParameter(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }

    let started = Instant::now();
    let mut report = simulate(&cfg)?;
    report.preset = preset_name;
    // Timing stays on stderr so report artifacts are run-to-run identical.
    eprintln!("simulate: {} replications in {:.2} s", report.replications_used, started.elapsed().as_secs_f64());

    let stem = args.stem.clone().unwrap_or(default_stem);
    let written = write_report_files(&report, out_dir, &stem)
        .map_err(|e| io_error("write report artifacts", e))?;
    println!(
        "{stem}: D_normal={} D_order1={} D_order2={} (used {} replications, dropped {})",
        report.distances.normal,
        report.distances.order1,
        report.distances.order2,
        report.replications_used,
        report.dropped
    );
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_gpcc(args: &GpccArgs, out_dir: &Path) -> Result<()> {
    let query: GpccQuery = read_json(&args.config)?;
    let started = Instant::now();
    let report = estimate_modulus(&query, args.seed)?;
    eprintln!("gpcc-check: finished in {:.2} s", started.elapsed().as_secs_f64());
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
    fs::create_dir_all(out_dir).map_err(|e| io_error("create output directory", e))?;
    let path = out_dir.join(format!("{}.json", args.stem));
    write_json(&report, &path).map_err(|e| io_error("write report", e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_moments(args: &MomentsArgs) -> Result<()> {
    let model: VectorModel = read_json(&args.config)?;
    model.validate()?;
    let b = args.block.unwrap_or(1);
    if b == 0 {
        return Err(Error::InvalidParameter("block size must be positive".into()));
    }
    let tensor = analytic_moments(&model)?.aggregate_blocks(b);
    let out = json!({
        "mean": model.mean_vector()?,
        "block": b,
        "covariance": tensor.covariance(),
        "central_moments": tensor.export(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable moments"));
    Ok(())
}

fn run_presets(args: &PresetsArgs, out_dir: &Path) -> Result<()> {
    let presets = bundled_experiments();
    for p in &presets {
        println!("{:<22} n={:<4} {}", p.name, p.config.n, p.summary);
    }
    if args.write {
        fs::create_dir_all(out_dir).map_err(|e| io_error("create output directory", e))?;
        for p in &presets {
            let path = out_dir.join(format!("{}.json", p.name));
            write_json(&p.config, &path).map_err(|e| io_error("write preset config", e))?;
        }
        println!("wrote {} config files to {}", presets.len(), out_dir.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Expand(args) => run_expand(args, &cli.out_dir),
        Command::Simulate(args) => run_simulate(args, &cli.out_dir),
        Command::GpccCheck(args) => run_gpcc(args, &cli.out_dir),
        Command::Moments(args) => run_moments(args),
        Command::Presets(args) => run_presets(args, &cli.out_dir),
    }
}

/// Parse arguments, run the selected command, and return the process exit
/// code. All diagnostics are single lines on the error stream.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout with exit 0; real parse errors
            // go to stderr with clap's conventional exit 2.
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };

    let result = match cli.threads {
        Some(0) => Err(Error::InvalidParameter("--threads must be positive".into())),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::InvalidParameter(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };

    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

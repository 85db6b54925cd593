//! Monte Carlo verification harness.
//!
//! Draws replicated samples of the normalized statistic
//! `W = sqrt(n_eff) (H(Zbar) - H(mu))`, compares its empirical distribution
//! against the normal limit and both expansion orders, and packages
//! everything into a serializable [`SimulationReport`].
//!
//! Determinism contract: every replication owns a ChaCha8 substream keyed by
//! `(seed, replication index)` (see [`streams`]), results are collected in
//! replication order, and reports carry no wall-clock data — so output bytes
//! depend only on the configuration, never on thread count or scheduling.

pub mod samplers;
pub mod streams;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulants::{coefficients, ExpansionCoefficients};
use crate::error::{Error, Result};
use crate::expansion::{normal_cdf, normal_pdf, EdgeworthApprox};
use crate::moments::{analytic_moments, sample_moments};
use crate::statistics::StatisticSpec;
use streams::{substream, TAG_COEFF, TAG_REPLICATION};

/// Default evaluation grid resolution.
pub const GRID_POINTS_DEFAULT: usize = 512;
/// Histogram bins over the grid range.
pub const HIST_BINS: usize = 64;
/// Hard ceiling on the dropped-replication fraction.
pub const MAX_DROP_FRACTION: f64 = 0.01;
/// Minimum replications for distance estimates.
pub const MIN_REPS_FOR_DISTANCES: u64 = 1000;

/// Evaluation grid for CDFs and densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn points_vec(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + i as f64 * step).collect()
    }
}

/// Where the expansion coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CoeffSource {
    /// Exact moments of the model at its exact mean.
    #[default]
    Analytic,
    /// Plug-in: moments and expansion point from a fresh sample of `n_coeff`
    /// rows (drawn independently of the replications).
    Estimated { n_coeff: usize },
}

// Hand-written strict deserialization: the derived form for internally
// tagged enums ignores unknown keys.
impl<'de> serde::Deserialize<'de> for CoeffSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            source: String,
            n_coeff: Option<usize>,
        }
        let r = Repr::deserialize(d)?;
        match r.source.as_str() {
            "analytic" => {
                if r.n_coeff.is_some() {
                    return Err(D::Error::custom(
                        "field `n_coeff` is not valid for source `analytic`",
                    ));
                }
                Ok(CoeffSource::Analytic)
            }
            "estimated" => {
                let n_coeff = r
                    .n_coeff
                    .ok_or_else(|| D::Error::custom("source `estimated` requires `n_coeff`"))?;
                Ok(CoeffSource::Estimated { n_coeff })
            }
            other => Err(D::Error::custom(format!(
                "unknown coefficient source `{other}`, expected `analytic` or `estimated`"
            ))),
        }
    }
}

/// A complete simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub statistic: StatisticSpec,
    /// Rows per replication.
    pub n: u64,
    /// Number of replications.
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Aggregate consecutive blocks of this size before applying `H`; the
    /// expansion then runs at `n / block_b` effective observations.
    #[serde(default)]
    pub block_b: Option<u64>,
    #[serde(default)]
    pub coeff_source: CoeffSource,
    /// Evaluation grid; defaults to 512 points over `k1 +/- 6 sigma`.
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl ExperimentConfig {
    pub fn block_size(&self) -> u64 {
        self.block_b.unwrap_or(1)
    }

    pub fn n_effective(&self) -> u64 {
        self.n / self.block_size()
    }

    pub fn validate(&self) -> Result<()> {
        self.statistic.validate()?;
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be positive".into()));
        }
        let b = self.block_size();
        if b == 0 {
            return Err(Error::InvalidParameter("block_b must be positive".into()));
        }
        if self.n % b != 0 {
            return Err(Error::InvalidParameter(format!(
                "block_b = {b} must divide n = {}",
                self.n
            )));
        }
        if self.n_effective() < 2 {
            return Err(Error::InvalidParameter(format!(
                "n / block_b = {} leaves fewer than 2 effective observations",
                self.n_effective()
            )));
        }
        if let CoeffSource::Estimated { n_coeff } = self.coeff_source {
            if n_coeff < 100 {
                return Err(Error::InvalidParameter(format!(
                    "coefficient estimation needs n_coeff >= 100, got {n_coeff}"
                )));
            }
        }
        if let Some(g) = &self.grid {
            if !(g.lo < g.hi) || !g.lo.is_finite() || !g.hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "grid must satisfy lo < hi, got [{}, {}]",
                    g.lo, g.hi
                )));
            }
            if g.points < 2 {
                return Err(Error::InvalidParameter("grid needs at least 2 points".into()));
            }
        }
        Ok(())
    }
}

/// Sup-distances of the empirical CDF to each reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub normal: f64,
    pub order1: f64,
    pub order2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges over the grid range.
    pub edges: Vec<f64>,
    /// Normalized densities (in-range count / (kept * width)).
    pub densities: Vec<f64>,
}

/// Everything a simulation run produces. Timing is deliberately excluded so
/// that report bytes are reproducible; runtimes go to stderr in the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// Bundled-experiment name when launched from a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub n_effective: u64,
    pub replications_used: u64,
    pub dropped: u64,
    pub coefficients: ExpansionCoefficients,
    pub w_mean: f64,
    pub w_variance: f64,
    pub distances: Distances,
    pub grid: Vec<f64>,
    pub empirical_cdf: Vec<f64>,
    /// Density curves for approximation orders 0 (normal), 1 and 2.
    pub pdf_normal: Vec<f64>,
    pub pdf_order1: Vec<f64>,
    pub pdf_order2: Vec<f64>,
    /// Adjacent decreases of each expanded CDF over the grid (the series is
    /// reported as-is, never monotonized).
    pub order1_cdf_violations: usize,
    pub order2_cdf_violations: usize,
    pub histogram: Histogram,
    /// Centered covariance of the coordinates under the model.
    pub covariance: Vec<Vec<f64>>,
    /// Raw second moments `E[Z_i Z_j]` (no mean subtraction), for
    /// cross-checking against tables using either convention.
    pub raw_second_moments: Vec<Vec<f64>>,
    pub note: String,
}

/// Draw all replications of `W` under the configuration.
///
/// Returns the kept values in replication order plus the number of dropped
/// replications (statistic outside its domain or non-finite).
pub fn draw_w_values(cfg: &ExperimentConfig) -> Result<(Vec<f64>, u64)> {
    cfg.validate()?;
    let spec = &cfg.statistic;
    let model = &spec.model;
    let mu = model.mean_vector()?;
    let evaluator = spec.evaluator()?;
    let h_mu = evaluator.eval(&mu).ok_or_else(|| {
        Error::DegenerateStatistic(
            "statistic is undefined at the model mean".to_string(),
        )
    })?;
    let n = cfg.n;
    let k = model.k();
    let n_bases = model.bases.len();
    let sqrt_n_eff = (cfg.n_effective() as f64).sqrt();
    let seed = cfg.seed;

    let results: Vec<Option<f64>> = (0..cfg.reps as usize)
        .into_par_iter()
        .with_min_len(32)
        .map_init(
            || (vec![0.0f64; n_bases], vec![0.0f64; k], vec![0.0f64; k]),
            |(bases, z, sum), rep| {
                let mut rng = substream(seed, TAG_REPLICATION, rep as u64);
                sum.iter_mut().for_each(|s| *s = 0.0);
                for _ in 0..n {
                    samplers::draw_row(&mut rng, model, bases, z);
                    for (s, v) in sum.iter_mut().zip(z.iter()) {
                        *s += v;
                    }
                }
                let nf = n as f64;
                for (zb, s) in z.iter_mut().zip(sum.iter()) {
                    *zb = s / nf;
                }
                evaluator.eval(z).and_then(|v| {
                    let w = sqrt_n_eff * (v - h_mu);
                    w.is_finite().then_some(w)
                })
            },
        )
        .collect();

    let mut values = Vec::with_capacity(results.len());
    let mut dropped = 0u64;
    for r in results {
        match r {
            Some(w) => values.push(w),
            None => dropped += 1,
        }
    }
    Ok((values, dropped))
}

/// Plug-in coefficient estimation: sample `n_coeff` rows, take sample mean
/// and sample moment tensors, rebuild the derivative bundle at the sample
/// mean, contract. Errors if the sample covariance degenerates the statistic.
pub fn estimate_coefficients(
    spec: &StatisticSpec,
    n_coeff: usize,
    seed: u64,
) -> Result<ExpansionCoefficients> {
    estimate_coefficients_aggregated(spec, n_coeff, seed, 1)
}

/// Like [`estimate_coefficients`] but each observation is the average of
/// `block` consecutive base rows (the sampling analogue of
/// [`crate::moments::MomentTensor::aggregate_blocks`]).
pub fn estimate_coefficients_aggregated(
    spec: &StatisticSpec,
    n_coeff: usize,
    seed: u64,
    block: u64,
) -> Result<ExpansionCoefficients> {
    spec.validate()?;
    if n_coeff < 100 {
        return Err(Error::InvalidParameter(format!(
            "coefficient estimation needs n_coeff >= 100, got {n_coeff}"
        )));
    }
    let model = &spec.model;
    let k = model.k();
    let mut rng = substream(seed, TAG_COEFF, 0);
    let mut bases = vec![0.0; model.bases.len()];
    let mut z = vec![0.0; k];
    let mut data = vec![0.0f64; n_coeff * k];
    let bf = block as f64;
    for row in data.chunks_exact_mut(k) {
        for _ in 0..block {
            samplers::draw_row(&mut rng, model, &mut bases, &mut z);
            for (slot, v) in row.iter_mut().zip(&z) {
                *slot += v / bf;
            }
        }
    }
    let (mean, tensor) = sample_moments(&data, k)?;
    let sigma = tensor.covariance();
    let bundle = spec.bundle_at(&mean, &sigma)?;
    coefficients(&bundle, &tensor)
}

/// Two-sided Kolmogorov-Smirnov distance of a sorted sample to a reference
/// CDF, evaluated at the sample points:
/// `max_i max(|F(x_i) - i/R|, |(i+1)/R - F(x_i)|)`.
///
/// Expanded CDFs can locally leave `[0, 1]`; the reference value is truncated
/// to the unit interval here (distance to the nearest proper CDF value),
/// which also keeps the statistic itself within `[0, 1]`.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData(
            "distance needs at least one sample point".into(),
        ));
    }
    let r = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x).clamp(0.0, 1.0);
        d = d.max((f - i as f64 / r).abs());
        d = d.max(((i + 1) as f64 / r - f).abs());
    }
    Ok(d)
}

/// Coefficients for a configuration, honoring source and block aggregation.
pub fn coefficients_for(cfg: &ExperimentConfig) -> Result<ExpansionCoefficients> {
    let spec = &cfg.statistic;
    let b = cfg.block_size();
    match cfg.coeff_source {
        CoeffSource::Analytic => {
            let tensor = analytic_moments(&spec.model)?.aggregate_blocks(b);
            let mu = spec.model.mean_vector()?;
            let bundle = spec.bundle_at(&mu, &tensor.covariance())?;
            coefficients(&bundle, &tensor)
        }
        CoeffSource::Estimated { n_coeff } => {
            estimate_coefficients_aggregated(spec, n_coeff, cfg.seed, b)
        }
    }
}

/// Run a full experiment.
/// Default evaluation grid: centered at the order-1 mean shift, spanning
/// six limit standard deviations each way.
pub fn default_grid(coeffs: &ExpansionCoefficients, n_eff: u64) -> GridSpec {
    let center = coeffs.b1 / (n_eff as f64).sqrt();
    let span = 6.0 * coeffs.sigma2.sqrt();
    GridSpec {
        lo: center - span,
        hi: center + span,
        points: GRID_POINTS_DEFAULT,
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    if cfg.reps < MIN_REPS_FOR_DISTANCES {
        return Err(Error::InvalidParameter(format!(
            "distance estimates need at least {MIN_REPS_FOR_DISTANCES} replications, got {}",
            cfg.reps
        )));
    }
    let (mut values, dropped) = draw_w_values(cfg)?;
    let percent = 100.0 * dropped as f64 / cfg.reps as f64;
    if percent > 100.0 * MAX_DROP_FRACTION {
        return Err(Error::TooManyDropped {
            dropped,
            total: cfg.reps,
            percent,
        });
    }
    values.sort_unstable_by(f64::total_cmp);
    let used = values.len() as u64;
    if used == 0 {
        return Err(Error::InsufficientData("every replication was dropped".into()));
    }

    let coeffs = coefficients_for(cfg)?;
    let n_eff = cfg.n_effective();
    let order1 = EdgeworthApprox::new(coeffs, n_eff, 1)?;
    let order2 = EdgeworthApprox::new(coeffs, n_eff, 2)?;
    let sigma2 = coeffs.sigma2;

    let grid_spec = cfg.grid.unwrap_or_else(|| default_grid(&coeffs, n_eff));
    let grid = grid_spec.points_vec();

    let rf = used as f64;
    let empirical_cdf: Vec<f64> = grid
        .iter()
        .map(|&x| values.partition_point(|&v| v <= x) as f64 / rf)
        .collect();
    let pdf_normal: Vec<f64> = grid.iter().map(|&x| normal_pdf(x, sigma2)).collect();
    let pdf_order1: Vec<f64> = grid.iter().map(|&x| order1.pdf(x)).collect();
    let pdf_order2: Vec<f64> = grid.iter().map(|&x| order2.pdf(x)).collect();

    let distances = Distances {
        normal: ks_distance(&values, |x| normal_cdf(x, sigma2))?,
        order1: ks_distance(&values, |x| order1.cdf(x))?,
        order2: ks_distance(&values, |x| order2.cdf(x))?,
    };

    let bins = HIST_BINS;
    let (lo, hi) = (grid_spec.lo, grid_spec.hi);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in &values {
        if v >= lo && v < hi {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        } else if v == hi {
            counts[bins - 1] += 1;
        }
    }
    let histogram = Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        densities: counts
            .iter()
            .map(|&c| c as f64 / (rf * width))
            .collect(),
    };

    let w_mean = values.iter().sum::<f64>() / rf;
    let w_variance = values.iter().map(|v| (v - w_mean).powi(2)).sum::<f64>() / rf;

    let covariance = cfg.statistic.model.covariance_matrix()?;
    let raw_second_moments = cfg.statistic.model.second_moment_matrix()?;

    Ok(SimulationReport {
        preset: None,
        config: cfg.clone(),
        seed: cfg.seed,
        n_effective: n_eff,
        replications_used: used,
        dropped,
        coefficients: coeffs,
        w_mean,
        w_variance,
        distances,
        order1_cdf_violations: order1.monotonicity_violations(&grid),
        order2_cdf_violations: order2.monotonicity_violations(&grid),
        grid,
        empirical_cdf,
        pdf_normal,
        pdf_order1,
        pdf_order2,
        histogram,
        covariance,
        raw_second_moments,
        note: "covariance holds centered second moments; raw_second_moments holds \
               E[Z_i Z_j] without mean subtraction, for cross-checking tables that \
               use either convention."
            .to_string(),
    })
}

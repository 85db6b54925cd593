//! Smooth statistics `H` of the coordinate mean and their local derivatives.
//!
//! Everything downstream (cumulant coefficients, expansions, simulation) only
//! needs `H` through its value and first three derivative tensors at the
//! expansion point, packaged as a [`DerivativeBundle`]. Built-in statistics
//! ship analytic gradients and Hessians with the third tensor obtained by
//! differencing the analytic Hessian; arbitrary [`Expression`] statistics fall
//! back to full finite differences.

pub mod expr;
pub mod findiff;

use serde::{Deserialize, Serialize};

pub use expr::{parse, Expression};

use crate::error::{Error, Result};
use crate::model::VectorModel;
use crate::sym::SymTensor;

/// Variance floor below which a statistic is rejected as degenerate.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Value and derivatives of `H` at the expansion point, plus the asymptotic
/// variance `sigma^2 = grad' Sigma grad`.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
    pub third: SymTensor,
    pub sigma2: f64,
    pub h_at_mu: f64,
}

impl DerivativeBundle {
    pub fn k(&self) -> usize {
        self.grad.len()
    }
}

/// `grad' Sigma grad`.
fn quadratic_form(grad: &[f64], sigma: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (i, gi) in grad.iter().enumerate() {
        for (j, gj) in grad.iter().enumerate() {
            acc += gi * sigma[i][j] * gj;
        }
    }
    acc
}

/// Shared validation: dimensions line up, every entry is finite, and the
/// variance clears the degeneracy floor.
fn finalize(
    grad: Vec<f64>,
    hess: Vec<Vec<f64>>,
    third: SymTensor,
    sigma: &[Vec<f64>],
    h_at_mu: f64,
    what: &str,
) -> Result<DerivativeBundle> {
    let k = grad.len();
    if sigma.len() != k || sigma.iter().any(|row| row.len() != k) {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be {k} x {k} to match the {what} gradient"
        )));
    }
    if !h_at_mu.is_finite()
        || grad.iter().any(|v| !v.is_finite())
        || hess.iter().flatten().any(|v| !v.is_finite())
        || third.canonical_entries().iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite(format!(
            "{what} derivatives are not finite at the expansion point"
        )));
    }
    let sigma2 = quadratic_form(&grad, sigma);
    if !(sigma2 > SIGMA2_FLOOR) {
        return Err(Error::DegenerateStatistic(format!(
            "{what} has variance {sigma2:.3e} at the expansion point (floor {SIGMA2_FLOOR:.0e})"
        )));
    }
    Ok(DerivativeBundle {
        grad,
        hess,
        third,
        sigma2,
        h_at_mu,
    })
}

// ---------------------------------------------------------------------------
// Correlation coefficient of (X, Y) through Z = (X, Y, X^2, Y^2, XY).

/// Sample correlation as a function of the five coordinate means:
/// `(z5 - z1 z2) / sqrt((z3 - z1^2)(z4 - z2^2))`. `None` outside the domain.
pub fn pearson_value(z: &[f64]) -> Option<f64> {
    let p = z[2] - z[0] * z[0];
    let q = z[3] - z[1] * z[1];
    if p <= 0.0 || q <= 0.0 {
        return None;
    }
    Some((z[4] - z[0] * z[1]) / (p * q).sqrt())
}

/// Analytic Hessian of the correlation statistic at an interior point.
fn pearson_hessian(z: &[f64]) -> Vec<Vec<f64>> {
    let (z1, z2) = (z[0], z[1]);
    let n = z[4] - z1 * z2;
    let p = z[2] - z1 * z1;
    let q = z[3] - z2 * z2;
    let n_g = [-z2, -z1, 0.0, 0.0, 1.0];
    let p_g = [-2.0 * z1, 0.0, 1.0, 0.0, 0.0];
    let q_g = [0.0, -2.0 * z2, 0.0, 1.0, 0.0];
    let sp = p.sqrt();
    let sq = q.sqrt();
    let f = 1.0 / sp;
    let fp = -0.5 / (p * sp);
    let fpp = 0.75 / (p * p * sp);
    let g = 1.0 / sq;
    let gp = -0.5 / (q * sq);
    let gpp = 0.75 / (q * q * sq);
    let mut h = vec![vec![0.0; 5]; 5];
    for i in 0..5 {
        for j in i..5 {
            // Constant second derivatives of the building blocks.
            let n_ij = if (i, j) == (0, 1) { -1.0 } else { 0.0 };
            let p_ij = if (i, j) == (0, 0) { -2.0 } else { 0.0 };
            let q_ij = if (i, j) == (1, 1) { -2.0 } else { 0.0 };
            let v = n_ij * f * g
                + n_g[i] * (fp * p_g[j] * g + f * gp * q_g[j])
                + n_g[j] * (fp * p_g[i] * g + f * gp * q_g[i])
                + n * (fpp * p_g[i] * p_g[j] * g
                    + fp * p_ij * g
                    + fp * p_g[i] * gp * q_g[j]
                    + fp * p_g[j] * gp * q_g[i]
                    + gpp * q_g[i] * q_g[j] * f
                    + gp * q_ij * f);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

fn pearson_gradient(z: &[f64]) -> Vec<f64> {
    let (z1, z2) = (z[0], z[1]);
    let n = z[4] - z1 * z2;
    let p = z[2] - z1 * z1;
    let q = z[3] - z2 * z2;
    let n_g = [-z2, -z1, 0.0, 0.0, 1.0];
    let p_g = [-2.0 * z1, 0.0, 1.0, 0.0, 0.0];
    let q_g = [0.0, -2.0 * z2, 0.0, 1.0, 0.0];
    let f = 1.0 / p.sqrt();
    let fp = -0.5 / (p * p.sqrt());
    let g = 1.0 / q.sqrt();
    let gp = -0.5 / (q * q.sqrt());
    (0..5)
        .map(|i| n_g[i] * f * g + n * fp * p_g[i] * g + n * f * gp * q_g[i])
        .collect()
}

/// Derivative bundle for the correlation statistic at `mu` with coordinate
/// covariance `sigma`. Gradient and Hessian are analytic; the third tensor
/// differences the analytic Hessian.
pub fn pearson_bundle(mu: &[f64], sigma: &[Vec<f64>]) -> Result<DerivativeBundle> {
    if mu.len() != 5 {
        return Err(Error::DimensionMismatch(format!(
            "correlation statistic needs k = 5 coordinates, got {}",
            mu.len()
        )));
    }
    let value = pearson_value(mu).ok_or_else(|| {
        Error::DegenerateStatistic(
            "correlation statistic needs positive variance margins at the expansion point".into(),
        )
    })?;
    let grad = pearson_gradient(mu);
    let hess = pearson_hessian(mu);
    let third = findiff::third_from_hessian(|p| pearson_hessian(p), mu, findiff::hess_step());
    finalize(grad, hess, third, sigma, value, "correlation statistic")
}

// ---------------------------------------------------------------------------
// Sum of squared ratios of paired means: H = sum_j (z_j / z_{m+j})^2.

/// `None` when any denominator coordinate is exactly zero.
pub fn ratio_squares_value(z: &[f64], pairs: usize) -> Option<f64> {
    let mut acc = 0.0;
    for j in 0..pairs {
        let u = z[j];
        let v = z[pairs + j];
        if v == 0.0 {
            return None;
        }
        let r = u / v;
        acc += r * r;
    }
    Some(acc)
}

/// Fully analytic bundle for the squared-ratio statistic (the third-derivative
/// tensor has simple closed forms, so no differencing at all).
pub fn ratio_squares_bundle(
    mu: &[f64],
    sigma: &[Vec<f64>],
    pairs: usize,
) -> Result<DerivativeBundle> {
    if pairs == 0 {
        return Err(Error::InvalidParameter(
            "ratio statistic needs at least one pair".into(),
        ));
    }
    let k = 2 * pairs;
    if mu.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "ratio statistic with {pairs} pairs needs k = {k} coordinates, got {}",
            mu.len()
        )));
    }
    for j in 0..pairs {
        if mu[pairs + j] == 0.0 {
            return Err(Error::DegenerateStatistic(format!(
                "ratio denominator mean {} is zero",
                pairs + j + 1
            )));
        }
    }
    let value = ratio_squares_value(mu, pairs).unwrap();
    let mut grad = vec![0.0; k];
    let mut hess = vec![vec![0.0; k]; k];
    let mut third = SymTensor::zeros(k, 3);
    for j in 0..pairs {
        let (iu, iv) = (j, pairs + j);
        let u = mu[iu];
        let v = mu[iv];
        let v2 = v * v;
        let v3 = v2 * v;
        let v4 = v2 * v2;
        let v5 = v4 * v;
        grad[iu] = 2.0 * u / v2;
        grad[iv] = -2.0 * u * u / v3;
        hess[iu][iu] = 2.0 / v2;
        hess[iu][iv] = -4.0 * u / v3;
        hess[iv][iu] = hess[iu][iv];
        hess[iv][iv] = 6.0 * u * u / v4;
        // All third derivatives stay within a pair; (u,u,u) vanishes.
        third.set_sorted(&[iu, iu, iv], -4.0 / v3);
        third.set_sorted(&[iu, iv, iv], 12.0 * u / v4);
        third.set_sorted(&[iv, iv, iv], -24.0 * u * u / v5);
    }
    finalize(grad, hess, third, sigma, value, "ratio statistic")
}

// ---------------------------------------------------------------------------
// Two-sample z-score statistic through Z = (X, X^2, Y, Y^2).

/// Numerator and variance pieces of the z-score statistic:
/// `N = z3 - z1 - (z2 - z1^2)/2 + (z4 - z3^2)/2` over
/// `D = a V1 + V2 + a V1^2 / 2 + V2^2 / 2` with `V1 = z2 - z1^2`,
/// `V2 = z4 - z3^2`; `H = N / sqrt(D)`. `None` when `D <= 0`.
pub fn zscore_value(z: &[f64], a: f64) -> Option<f64> {
    let v1 = z[1] - z[0] * z[0];
    let v2 = z[3] - z[2] * z[2];
    let n = z[2] - z[0] - 0.5 * v1 + 0.5 * v2;
    let d = a * v1 + v2 + 0.5 * a * v1 * v1 + 0.5 * v2 * v2;
    if d <= 0.0 {
        return None;
    }
    Some(n / d.sqrt())
}

fn zscore_pieces(z: &[f64], a: f64) -> (f64, [f64; 4], [[f64; 4]; 4], f64, [f64; 4], [[f64; 4]; 4]) {
    let v1 = z[1] - z[0] * z[0];
    let v2 = z[3] - z[2] * z[2];
    let n = z[2] - z[0] - 0.5 * v1 + 0.5 * v2;
    let n_g = [-1.0 + z[0], -0.5, 1.0 - z[2], 0.5];
    let mut n_h = [[0.0; 4]; 4];
    n_h[0][0] = 1.0;
    n_h[2][2] = -1.0;
    let v1_g = [-2.0 * z[0], 1.0, 0.0, 0.0];
    let v2_g = [0.0, 0.0, -2.0 * z[2], 1.0];
    let mut v1_h = [[0.0; 4]; 4];
    v1_h[0][0] = -2.0;
    let mut v2_h = [[0.0; 4]; 4];
    v2_h[2][2] = -2.0;
    let d = a * v1 + v2 + 0.5 * a * v1 * v1 + 0.5 * v2 * v2;
    let mut d_g = [0.0; 4];
    let mut d_h = [[0.0; 4]; 4];
    for i in 0..4 {
        d_g[i] = a * (1.0 + v1) * v1_g[i] + (1.0 + v2) * v2_g[i];
        for j in 0..4 {
            d_h[i][j] = a * (v1_g[i] * v1_g[j] + (1.0 + v1) * v1_h[i][j])
                + v2_g[i] * v2_g[j]
                + (1.0 + v2) * v2_h[i][j];
        }
    }
    (n, n_g, n_h, d, d_g, d_h)
}

fn zscore_gradient(z: &[f64], a: f64) -> Vec<f64> {
    let (n, n_g, _, d, d_g, _) = zscore_pieces(z, a);
    let sd = d.sqrt();
    (0..4)
        .map(|i| n_g[i] / sd - 0.5 * n * d_g[i] / (d * sd))
        .collect()
}

fn zscore_hessian(z: &[f64], a: f64) -> Vec<Vec<f64>> {
    let (n, n_g, n_h, d, d_g, d_h) = zscore_pieces(z, a);
    let sd = d.sqrt();
    let d32 = d * sd;
    let d52 = d * d32;
    let mut h = vec![vec![0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v = n_h[i][j] / sd - 0.5 * (n_g[i] * d_g[j] + n_g[j] * d_g[i]) / d32
                + 0.75 * n * d_g[i] * d_g[j] / d52
                - 0.5 * n * d_h[i][j] / d32;
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Derivative bundle for the z-score statistic with variance-ratio weight
/// `a > 0`. Gradient and Hessian are analytic; the third tensor differences
/// the analytic Hessian.
pub fn zscore_bundle(mu: &[f64], sigma: &[Vec<f64>], a: f64) -> Result<DerivativeBundle> {
    if mu.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "z-score statistic needs k = 4 coordinates, got {}",
            mu.len()
        )));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "z-score weight a must be positive and finite, got {a}"
        )));
    }
    let value = zscore_value(mu, a).ok_or_else(|| {
        Error::DegenerateStatistic(
            "z-score statistic needs a positive variance denominator at the expansion point".into(),
        )
    })?;
    let grad = zscore_gradient(mu, a);
    let hess = zscore_hessian(mu, a);
    let third = findiff::third_from_hessian(|p| zscore_hessian(p, a), mu, findiff::hess_step());
    finalize(grad, hess, third, sigma, value, "z-score statistic")
}

// ---------------------------------------------------------------------------
// Arbitrary expression statistics via finite differences.

/// Derivative bundle for a parsed expression, with all derivatives from
/// central finite differences at the standard step sizes.
pub fn expression_bundle(
    expression: &Expression,
    mu: &[f64],
    sigma: &[Vec<f64>],
) -> Result<DerivativeBundle> {
    let k = mu.len();
    if expression.max_var() > k {
        return Err(Error::DimensionMismatch(format!(
            "expression references z{} but the model has only {k} coordinates",
            expression.max_var()
        )));
    }
    let f = |p: &[f64]| expression.eval(p);
    let value = f(mu);
    let grad = findiff::gradient(f, mu, findiff::grad_step());
    let hess = findiff::hessian(f, mu, findiff::hess_step());
    let third = findiff::third_from_values(f, mu, findiff::third_step());
    finalize(grad, hess, third, sigma, value, "expression statistic")
}

// ---------------------------------------------------------------------------
// Statistic specifications.

/// Which statistic `H` to apply to the coordinate mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StatisticKind {
    /// Correlation coefficient; requires the coordinate ordering
    /// `(X, Y, X^2, Y^2, XY)`, so `k = 5`.
    Pearson,
    /// `sum_j (mean_j / mean_{pairs+j})^2` over `k = 2 * pairs` coordinates
    /// ordered numerators-then-denominators.
    RatioSquares { pairs: usize },
    /// Two-sample z-score over `k = 4` coordinates `(X, X^2, Y, Y^2)` with
    /// sample-size ratio `a = n1 / n2 > 0`.
    Zscore { a: f64 },
    /// Arbitrary expression over `z1..zk`.
    Expression { text: String },
}

// Hand-written strict deserialization: the derived form for internally
// tagged enums silently ignores unknown keys, which would let config typos
// slip through.
impl<'de> serde::Deserialize<'de> for StatisticKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            kind: String,
            pairs: Option<usize>,
            a: Option<f64>,
            text: Option<String>,
        }
        let r = Repr::deserialize(d)?;
        let forbid = |field: &str, present: bool| {
            if present {
                Err(D::Error::custom(format!(
                    "field `{field}` is not valid for statistic kind `{}`",
                    r.kind
                )))
            } else {
                Ok(())
            }
        };
        match r.kind.as_str() {
            "pearson" => {
                forbid("pairs", r.pairs.is_some())?;
                forbid("a", r.a.is_some())?;
                forbid("text", r.text.is_some())?;
                Ok(StatisticKind::Pearson)
            }
            "ratio-squares" => {
                forbid("a", r.a.is_some())?;
                forbid("text", r.text.is_some())?;
                let pairs = r
                    .pairs
                    .ok_or_else(|| D::Error::custom("statistic kind `ratio-squares` requires `pairs`"))?;
                Ok(StatisticKind::RatioSquares { pairs })
            }
            "zscore" => {
                forbid("pairs", r.pairs.is_some())?;
                forbid("text", r.text.is_some())?;
                let a = r
                    .a
                    .ok_or_else(|| D::Error::custom("statistic kind `zscore` requires `a`"))?;
                Ok(StatisticKind::Zscore { a })
            }
            "expression" => {
                forbid("pairs", r.pairs.is_some())?;
                forbid("a", r.a.is_some())?;
                let text = r
                    .text
                    .ok_or_else(|| D::Error::custom("statistic kind `expression` requires `text`"))?;
                Ok(StatisticKind::Expression { text })
            }
            other => Err(D::Error::custom(format!(
                "unknown statistic kind `{other}`, expected one of `pearson`, \
                 `ratio-squares`, `zscore`, `expression`"
            ))),
        }
    }
}

/// A model together with the statistic applied to its coordinate mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticSpec {
    pub model: VectorModel,
    pub statistic: StatisticKind,
}

/// Reusable evaluator for `H`; `None` marks a point outside the statistic's
/// domain (or a non-finite expression value).
#[derive(Debug, Clone)]
pub enum Evaluator {
    Pearson,
    RatioSquares { pairs: usize },
    Zscore { a: f64 },
    Expression(Expression),
}

impl Evaluator {
    pub fn eval(&self, z: &[f64]) -> Option<f64> {
        match self {
            Evaluator::Pearson => pearson_value(z),
            Evaluator::RatioSquares { pairs } => ratio_squares_value(z, *pairs),
            Evaluator::Zscore { a } => zscore_value(z, *a),
            Evaluator::Expression(e) => {
                let v = e.eval(z);
                v.is_finite().then_some(v)
            }
        }
    }
}

impl StatisticSpec {
    /// Coordinate count the statistic kind demands, when fixed.
    fn expected_k(&self) -> Option<usize> {
        match &self.statistic {
            StatisticKind::Pearson => Some(5),
            StatisticKind::RatioSquares { pairs } => Some(2 * pairs),
            StatisticKind::Zscore { .. } => Some(4),
            StatisticKind::Expression { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let k = self.model.k();
        if let Some(need) = self.expected_k() {
            if need == 0 {
                return Err(Error::InvalidParameter(
                    "ratio statistic needs at least one pair".into(),
                ));
            }
            if k != need {
                return Err(Error::DimensionMismatch(format!(
                    "statistic needs k = {need} coordinates but the model has {k}"
                )));
            }
        }
        match &self.statistic {
            StatisticKind::Zscore { a } => {
                if !(*a > 0.0) || !a.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "z-score weight a must be positive and finite, got {a}"
                    )));
                }
            }
            StatisticKind::Expression { text } => {
                let e = expr::parse(text)?;
                if e.max_var() > k {
                    return Err(Error::DimensionMismatch(format!(
                        "expression references z{} but the model has only {k} coordinates",
                        e.max_var()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn evaluator(&self) -> Result<Evaluator> {
        Ok(match &self.statistic {
            StatisticKind::Pearson => Evaluator::Pearson,
            StatisticKind::RatioSquares { pairs } => Evaluator::RatioSquares { pairs: *pairs },
            StatisticKind::Zscore { a } => Evaluator::Zscore { a: *a },
            StatisticKind::Expression { text } => Evaluator::Expression(expr::parse(text)?),
        })
    }

    /// Bundle at an arbitrary expansion point with the given coordinate
    /// covariance (used both for analytic moments and for estimated ones).
    pub fn bundle_at(&self, mu: &[f64], sigma: &[Vec<f64>]) -> Result<DerivativeBundle> {
        match &self.statistic {
            StatisticKind::Pearson => pearson_bundle(mu, sigma),
            StatisticKind::RatioSquares { pairs } => ratio_squares_bundle(mu, sigma, *pairs),
            StatisticKind::Zscore { a } => zscore_bundle(mu, sigma, *a),
            StatisticKind::Expression { text } => {
                let e = expr::parse(text)?;
                expression_bundle(&e, mu, sigma)
            }
        }
    }

    /// Bundle at the model's exact mean with its exact covariance.
    pub fn bundle_analytic(&self) -> Result<DerivativeBundle> {
        self.validate()?;
        let mu = self.model.mean_vector()?;
        let sigma = self.model.covariance_matrix()?;
        self.bundle_at(&mu, &sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseDistribution, CoordinateMap};
    use approx::assert_relative_eq;

    fn chisq1() -> BaseDistribution {
        BaseDistribution::ChiSquare { df: 1.0 }
    }

    fn power_map_xy() -> CoordinateMap {
        CoordinateMap {
            exponents: vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2], vec![1, 1]],
        }
    }

    fn corr_chisq_spec() -> StatisticSpec {
        StatisticSpec {
            model: VectorModel::new(vec![chisq1(), chisq1()], power_map_xy()).unwrap(),
            statistic: StatisticKind::Pearson,
        }
    }

    #[test]
    fn pearson_gradient_and_variance_at_chisq_mean() {
        let bundle = corr_chisq_spec().bundle_analytic().unwrap();
        let expect = [-0.5, -0.5, 0.0, 0.0, 0.5];
        for (g, e) in bundle.grad.iter().zip(expect) {
            assert_relative_eq!(*g, e, epsilon = 1e-12);
        }
        assert_relative_eq!(bundle.sigma2, 1.0, epsilon = 1e-10);
        assert!(bundle.h_at_mu.abs() < 1e-14);
    }

    #[test]
    fn pearson_derivatives_match_finite_differences() {
        let mu = [0.3, 0.4, 1.5, 1.9, 0.8];
        let f = |p: &[f64]| pearson_value(p).unwrap();
        let g = pearson_gradient(&mu);
        let g_fd = findiff::gradient(f, &mu, 1e-5);
        for (a, b) in g.iter().zip(&g_fd) {
            assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
        }
        let h = pearson_hessian(&mu);
        let h_fd = findiff::hessian(f, &mu, findiff::hess_step());
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(h[i][j], h_fd[i][j], max_relative = 1e-5, epsilon = 1e-7);
            }
        }
        // Third tensor: differenced analytic Hessian vs. pure value stencil.
        let t = findiff::third_from_hessian(|p| pearson_hessian(p), &mu, findiff::hess_step());
        let t_fd = findiff::third_from_values(f, &mu, findiff::third_step());
        for (a, b) in t.canonical_entries().iter().zip(t_fd.canonical_entries()) {
            assert_relative_eq!(a, b, max_relative = 1e-4, epsilon = 1e-4);
        }
    }

    #[test]
    fn ratio_bundle_matches_closed_forms() {
        let mu = [1.0, 3.0, 1.0, 1.0];
        let sigma = vec![
            vec![2.0, 12.0, 0.0, 0.0],
            vec![12.0, 96.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let b = ratio_squares_bundle(&mu, &sigma, 2).unwrap();
        assert_eq!(b.h_at_mu, 10.0);
        assert_eq!(b.grad, vec![2.0, 6.0, -2.0, -18.0]);
        // sigma^2 = g' Sigma g computed by hand:
        // 4*2 + 2*2*6*12 + 36*96 + 4*1 + 324*1 = 4080.
        assert_relative_eq!(b.sigma2, 4080.0, epsilon = 1e-9);
        // Finite-difference cross-check of all three orders.
        let f = |p: &[f64]| ratio_squares_value(p, 2).unwrap();
        let g_fd = findiff::gradient(f, &mu, 1e-5);
        for (a, bb) in b.grad.iter().zip(&g_fd) {
            assert_relative_eq!(a, bb, max_relative = 1e-6, epsilon = 1e-9);
        }
        let h_fd = findiff::hessian(f, &mu, findiff::hess_step());
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(b.hess[i][j], h_fd[i][j], max_relative = 1e-5, epsilon = 1e-6);
            }
        }
        let t_fd = findiff::third_from_values(f, &mu, findiff::third_step());
        for (a, bb) in b.third.canonical_entries().iter().zip(t_fd.canonical_entries()) {
            assert_relative_eq!(a, bb, max_relative = 1e-4, epsilon = 1e-4);
        }
        // Spot exact third entries: d^3 H / du dv dv = 12 u / v^4 for pair 0.
        assert_eq!(b.third.get(&[0, 2, 2]), 12.0);
        assert_eq!(b.third.get(&[2, 2, 2]), -24.0);
        assert_eq!(b.third.get(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn zscore_gradient_and_variance_at_normal_mean() {
        let a = 0.25;
        let mu = [0.0, 1.0, 0.0, 1.0];
        // Cov of (X, X^2, Y, Y^2) for independent standard normals.
        let sigma = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 2.0],
        ];
        let b = zscore_bundle(&mu, &sigma, a).unwrap();
        let scale = (1.5 * (a + 1.0)).sqrt();
        let expect = [-1.0 / scale, -0.5 / scale, 1.0 / scale, 0.5 / scale];
        for (g, e) in b.grad.iter().zip(expect) {
            assert_relative_eq!(*g, e, epsilon = 1e-12);
        }
        assert_relative_eq!(b.sigma2, 2.0 / (a + 1.0), epsilon = 1e-10);
        assert!(b.h_at_mu.abs() < 1e-14);
    }

    #[test]
    fn zscore_derivatives_match_finite_differences() {
        let a = 0.25;
        let x = [0.1, 1.3, -0.2, 0.9];
        let f = |p: &[f64]| zscore_value(p, a).unwrap();
        let g = zscore_gradient(&x, a);
        let g_fd = findiff::gradient(f, &x, 1e-5);
        for (lhs, rhs) in g.iter().zip(&g_fd) {
            assert_relative_eq!(lhs, rhs, max_relative = 1e-6, epsilon = 1e-9);
        }
        let h = zscore_hessian(&x, a);
        let h_fd = findiff::hessian(f, &x, findiff::hess_step());
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(h[i][j], h_fd[i][j], max_relative = 1e-5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn expression_bundle_matches_builtin_pearson() {
        let spec = corr_chisq_spec();
        let mu = spec.model.mean_vector().unwrap();
        let sigma = spec.model.covariance_matrix().unwrap();
        let builtin = spec.bundle_at(&mu, &sigma).unwrap();
        let e = expr::parse("(z5 - z1*z2) / sqrt((z3 - z1^2) * (z4 - z2^2))").unwrap();
        let fd = expression_bundle(&e, &mu, &sigma).unwrap();
        assert!((fd.h_at_mu - builtin.h_at_mu).abs() < 1e-10);
        for (a, b) in fd.grad.iter().zip(&builtin.grad) {
            assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-8);
        }
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(
                    fd.hess[i][j],
                    builtin.hess[i][j],
                    max_relative = 1e-4,
                    epsilon = 1e-5
                );
            }
        }
        for (a, b) in fd
            .third
            .canonical_entries()
            .iter()
            .zip(builtin.third.canonical_entries())
        {
            assert_relative_eq!(a, b, max_relative = 1e-3, epsilon = 1e-3);
        }
        assert_relative_eq!(fd.sigma2, builtin.sigma2, max_relative = 1e-6);
    }

    #[test]
    fn degenerate_statistics_are_rejected() {
        let model =
            VectorModel::new(vec![chisq1()], CoordinateMap::identity(1)).unwrap();
        let spec = StatisticSpec {
            model,
            statistic: StatisticKind::Expression { text: "1 + 0 * z1".into() },
        };
        let err = spec.bundle_analytic().unwrap_err();
        assert!(matches!(err, Error::DegenerateStatistic(_)));
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let model = VectorModel::new(vec![chisq1(), chisq1()], power_map_xy()).unwrap();
        let bad = StatisticSpec {
            model: model.clone(),
            statistic: StatisticKind::Zscore { a: 0.25 },
        };
        assert!(matches!(bad.validate(), Err(Error::DimensionMismatch(_))));
        let expr_too_wide = StatisticSpec {
            model,
            statistic: StatisticKind::Expression { text: "z6".into() },
        };
        assert!(matches!(
            expr_too_wide.validate(),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn statistic_spec_serde_round_trip() {
        let spec = StatisticSpec {
            model: VectorModel::new(
                vec![BaseDistribution::Normal { mean: 0.0, variance: 1.0 }],
                CoordinateMap::identity(1),
            )
            .unwrap(),
            statistic: StatisticKind::RatioSquares { pairs: 3 },
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("ratio-squares"));
        let back: StatisticSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);

        let z: StatisticKind = serde_json::from_str(r#"{"kind": "zscore", "a": 0.25}"#).unwrap();
        assert_eq!(z, StatisticKind::Zscore { a: 0.25 });
        assert!(serde_json::from_str::<StatisticKind>(r#"{"kind": "pearson", "x": 1}"#).is_err());
    }

    #[test]
    fn evaluator_domains() {
        assert_eq!(pearson_value(&[0.0, 0.0, 0.0, 1.0, 0.0]), None);
        assert_eq!(ratio_squares_value(&[1.0, 0.0], 1), None);
        assert!(zscore_value(&[0.0, -1.0, 0.0, -1.0], 1.0).is_none());
        let e = Evaluator::Expression(expr::parse("log(z1)").unwrap());
        assert_eq!(e.eval(&[-1.0]), None);
        assert!(e.eval(&[1.0]).is_some());
    }
}

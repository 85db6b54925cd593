//! Distribution models for the coordinate vector `Z`.
//!
//! A [`VectorModel`] builds the vector `Z = (Z_1, .., Z_k)` out of independent
//! scalar base variables `W_1, .., W_b` through monomial coordinates
//! `Z_i = prod_b W_b^{e_ib}`. That covers every construction used by the
//! built-in statistics — powers `(X, Y, X^2, Y^2, XY)` for a correlation
//! coefficient, `(X, X^2, Y_1, Y_2)` for a ratio statistic, and so on — while
//! keeping exact raw moments available through closed-form recursions on the
//! base distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling on raw base-moment order. Degree-2 coordinates need raw
/// moments up to order 8 for fourth central moments; 12 leaves headroom for
/// cubic coordinates.
pub const DEFAULT_MOMENT_CEILING: u32 = 12;

/// Scalar base distribution with closed-form raw moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDistribution {
    /// Chi-square with `df > 0` degrees of freedom.
    ChiSquare { df: f64 },
    /// Poisson with rate `lambda > 0`.
    Poisson { lambda: f64 },
    /// Normal with the given mean and `variance > 0`.
    Normal { mean: f64, variance: f64 },
    /// Lognormal: `exp(N(log_mean, log_variance))` with `log_variance > 0`.
    Lognormal { log_mean: f64, log_variance: f64 },
}

// Hand-written strict deserialization: derived internally tagged enums do
// not reject unknown or cross-variant keys, and config typos must fail loud.
impl<'de> serde::Deserialize<'de> for BaseDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            kind: String,
            df: Option<f64>,
            lambda: Option<f64>,
            mean: Option<f64>,
            variance: Option<f64>,
            log_mean: Option<f64>,
            log_variance: Option<f64>,
        }
        let r = Repr::deserialize(d)?;
        let mut present: Vec<&str> = Vec::new();
        if r.df.is_some() {
            present.push("df");
        }
        if r.lambda.is_some() {
            present.push("lambda");
        }
        if r.mean.is_some() {
            present.push("mean");
        }
        if r.variance.is_some() {
            present.push("variance");
        }
        if r.log_mean.is_some() {
            present.push("log_mean");
        }
        if r.log_variance.is_some() {
            present.push("log_variance");
        }
        let expect = |wanted: &[&str]| -> std::result::Result<(), D::Error> {
            if present == wanted {
                Ok(())
            } else {
                Err(D::Error::custom(format!(
                    "distribution kind `{}` takes exactly the fields {:?}, got {:?}",
                    r.kind, wanted, present
                )))
            }
        };
        match r.kind.as_str() {
            "chi-square" => {
                expect(&["df"])?;
                Ok(BaseDistribution::ChiSquare { df: r.df.unwrap() })
            }
            "poisson" => {
                expect(&["lambda"])?;
                Ok(BaseDistribution::Poisson { lambda: r.lambda.unwrap() })
            }
            "normal" => {
                expect(&["mean", "variance"])?;
                Ok(BaseDistribution::Normal {
                    mean: r.mean.unwrap(),
                    variance: r.variance.unwrap(),
                })
            }
            "lognormal" => {
                expect(&["log_mean", "log_variance"])?;
                Ok(BaseDistribution::Lognormal {
                    log_mean: r.log_mean.unwrap(),
                    log_variance: r.log_variance.unwrap(),
                })
            }
            other => Err(D::Error::custom(format!(
                "unknown distribution kind `{other}`, expected one of `chi-square`, \
                 `poisson`, `normal`, `lognormal`"
            ))),
        }
    }
}

impl BaseDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            BaseDistribution::ChiSquare { df } => {
                if !(df > 0.0) || !df.is_finite() {
                    return bad(format!("chi-square df must be positive and finite, got {df}"));
                }
            }
            BaseDistribution::Poisson { lambda } => {
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return bad(format!("poisson lambda must be positive and finite, got {lambda}"));
                }
            }
            BaseDistribution::Normal { mean, variance } => {
                if !mean.is_finite() {
                    return bad(format!("normal mean must be finite, got {mean}"));
                }
                if !(variance > 0.0) || !variance.is_finite() {
                    return bad(format!("normal variance must be positive and finite, got {variance}"));
                }
            }
            BaseDistribution::Lognormal { log_mean, log_variance } => {
                if !log_mean.is_finite() {
                    return bad(format!("lognormal log-mean must be finite, got {log_mean}"));
                }
                if !(log_variance > 0.0) || !log_variance.is_finite() {
                    return bad(format!(
                        "lognormal log-variance must be positive and finite, got {log_variance}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Raw moment `E W^p` via closed-form recursions:
    /// chi-square `m_p = m_{p-1} (df + 2(p-1))`, Poisson through the Touchard
    /// recursion, normal `m_p = mean m_{p-1} + (p-1) variance m_{p-2}`, and the
    /// lognormal exponential formula.
    pub fn raw_moment(&self, p: u32) -> f64 {
        match *self {
            BaseDistribution::ChiSquare { df } => {
                let mut m = 1.0;
                for i in 0..p {
                    m *= df + 2.0 * i as f64;
                }
                m
            }
            BaseDistribution::Poisson { lambda } => {
                // m_{j+1} = lambda * sum_i C(j, i) m_i
                let p = p as usize;
                let mut m = vec![0.0f64; p + 1];
                m[0] = 1.0;
                for j in 0..p {
                    let mut acc = 0.0;
                    for (i, mi) in m.iter().enumerate().take(j + 1) {
                        acc += crate::sym::binomial(j, i) as f64 * mi;
                    }
                    m[j + 1] = lambda * acc;
                }
                m[p]
            }
            BaseDistribution::Normal { mean, variance } => {
                let mut prev = 1.0; // m_0
                let mut cur = mean; // m_1
                if p == 0 {
                    return 1.0;
                }
                for j in 2..=p {
                    let next = mean * cur + (j - 1) as f64 * variance * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            BaseDistribution::Lognormal { log_mean, log_variance } => {
                let p = p as f64;
                (p * log_mean + 0.5 * p * p * log_variance).exp()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    /// Whether the support is contained in `[0, inf)`.
    pub fn nonnegative_support(&self) -> bool {
        !matches!(self, BaseDistribution::Normal { .. })
    }
}

/// Monomial exponent matrix: row `i` holds the exponents of each base variable
/// in coordinate `Z_i`. Serialized as a plain integer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoordinateMap {
    pub exponents: Vec<Vec<u32>>,
}

impl CoordinateMap {
    /// Identity map for `k` coordinates over `k` bases.
    pub fn identity(k: usize) -> Self {
        let exponents = (0..k)
            .map(|i| (0..k).map(|j| u32::from(i == j)).collect())
            .collect();
        CoordinateMap { exponents }
    }
}

/// The coordinate vector `Z`: independent bases plus the monomial map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorModel {
    pub bases: Vec<BaseDistribution>,
    pub map: CoordinateMap,
    #[serde(default = "default_ceiling")]
    pub moment_ceiling: u32,
}

fn default_ceiling() -> u32 {
    DEFAULT_MOMENT_CEILING
}

impl VectorModel {
    pub fn new(bases: Vec<BaseDistribution>, map: CoordinateMap) -> Result<Self> {
        let model = VectorModel {
            bases,
            map,
            moment_ceiling: DEFAULT_MOMENT_CEILING,
        };
        model.validate()?;
        Ok(model)
    }

    /// Coordinate count `k` (the number of map rows).
    pub fn k(&self) -> usize {
        self.map.exponents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one base".into()));
        }
        for base in &self.bases {
            base.validate()?;
        }
        let k = self.k();
        if k == 0 {
            return Err(Error::InvalidParameter("coordinate map has no rows".into()));
        }
        if k > 16 {
            return Err(Error::DimensionMismatch(format!(
                "coordinate count {k} exceeds the supported maximum 16"
            )));
        }
        for (i, row) in self.map.exponents.iter().enumerate() {
            if row.len() != self.bases.len() {
                return Err(Error::DimensionMismatch(format!(
                    "map row {i} has {} columns for {} bases",
                    row.len(),
                    self.bases.len()
                )));
            }
        }
        Ok(())
    }

    /// `E prod_b W_b^{e_b}` for a per-base exponent vector, using base
    /// independence. Errors if any single-base order exceeds the ceiling.
    pub fn raw_base_moment(&self, exponents: &[u32]) -> Result<f64> {
        debug_assert_eq!(exponents.len(), self.bases.len());
        let mut acc = 1.0;
        for (b, (&e, base)) in exponents.iter().zip(&self.bases).enumerate() {
            if e > self.moment_ceiling {
                return Err(Error::UnsupportedDegree {
                    base: b,
                    order: e,
                    ceiling: self.moment_ceiling,
                });
            }
            if e > 0 {
                acc *= base.raw_moment(e);
            }
        }
        Ok(acc)
    }

    /// Raw moment `E prod_p Z_{i_p}` for a tuple of coordinate indices.
    pub fn raw_coordinate_moment(&self, indices: &[usize]) -> Result<f64> {
        let mut exps = vec![0u32; self.bases.len()];
        for &i in indices {
            for (b, &e) in self.map.exponents[i].iter().enumerate() {
                exps[b] += e;
            }
        }
        self.raw_base_moment(&exps)
    }

    /// `mu = E Z`.
    pub fn mean_vector(&self) -> Result<Vec<f64>> {
        (0..self.k()).map(|i| self.raw_coordinate_moment(&[i])).collect()
    }

    /// `Sigma = Cov(Z)`, dense `k x k`.
    pub fn covariance_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let mu = self.mean_vector()?;
        let k = self.k();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let raw = self.raw_coordinate_moment(&[i, j])?;
                let c = raw - mu[i] * mu[j];
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
        Ok(cov)
    }

    /// Matrix of raw second moments `E Z_i Z_j` (no mean subtraction).
    pub fn second_moment_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.k();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let raw = self.raw_coordinate_moment(&[i, j])?;
                m[i][j] = raw;
                m[j][i] = raw;
            }
        }
        Ok(m)
    }

    /// Map one realization of the bases through the monomial map.
    pub fn map_bases(&self, base_values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(base_values.len(), self.bases.len());
        debug_assert_eq!(out.len(), self.k());
        for (zi, row) in out.iter_mut().zip(&self.map.exponents) {
            let mut acc = 1.0;
            for (&w, &e) in base_values.iter().zip(row) {
                if e > 0 {
                    acc *= w.powi(e as i32);
                }
            }
            *zi = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chisq1() -> BaseDistribution {
        BaseDistribution::ChiSquare { df: 1.0 }
    }

    #[test]
    fn chi_square_raw_moments() {
        let d = chisq1();
        // E X^p = prod_{i<p} (df + 2i): 1, 3, 15, 105 for df = 1.
        assert_eq!(d.raw_moment(0), 1.0);
        assert_eq!(d.raw_moment(1), 1.0);
        assert_eq!(d.raw_moment(2), 3.0);
        assert_eq!(d.raw_moment(3), 15.0);
        assert_eq!(d.raw_moment(4), 105.0);
        let d5 = BaseDistribution::ChiSquare { df: 5.0 };
        assert_eq!(d5.raw_moment(2), 35.0); // 5 * 7
    }

    #[test]
    fn poisson_raw_moments_are_bell_numbers_at_unit_rate() {
        let d = BaseDistribution::Poisson { lambda: 1.0 };
        for (p, bell) in [1.0, 2.0, 5.0, 15.0, 52.0, 203.0].iter().enumerate() {
            assert_relative_eq!(d.raw_moment(p as u32 + 1), bell, max_relative = 1e-12);
        }
    }

    #[test]
    fn normal_raw_moments() {
        let std = BaseDistribution::Normal { mean: 0.0, variance: 1.0 };
        assert_eq!(std.raw_moment(1), 0.0);
        assert_eq!(std.raw_moment(2), 1.0);
        assert_eq!(std.raw_moment(3), 0.0);
        assert_eq!(std.raw_moment(4), 3.0);
        assert_eq!(std.raw_moment(6), 15.0);
        // Shifted: E(m + sqrt(v) N)^2 = m^2 + v.
        let d = BaseDistribution::Normal { mean: 2.0, variance: 3.0 };
        assert_relative_eq!(d.raw_moment(2), 7.0, max_relative = 1e-12);
        assert_relative_eq!(d.raw_moment(3), 2.0f64.powi(3) + 3.0 * 2.0 * 3.0, max_relative = 1e-12);
    }

    #[test]
    fn lognormal_raw_moments() {
        let d = BaseDistribution::Lognormal { log_mean: 0.1, log_variance: 0.3 };
        for p in 1..=6u32 {
            let pf = p as f64;
            assert_relative_eq!(
                d.raw_moment(p),
                (pf * 0.1 + 0.5 * pf * pf * 0.3).exp(),
                max_relative = 1e-12
            );
        }
    }

    /// `(X, Y, X^2, Y^2, XY)` with independent chi-square(1) bases.
    fn corr_chisq_model() -> VectorModel {
        let map = CoordinateMap {
            exponents: vec![
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![0, 2],
                vec![1, 1],
            ],
        };
        VectorModel::new(vec![chisq1(), chisq1()], map).unwrap()
    }

    #[test]
    fn corr_chisq_mean_and_covariance() {
        let model = corr_chisq_model();
        let mu = model.mean_vector().unwrap();
        assert_eq!(mu, vec![1.0, 1.0, 3.0, 3.0, 1.0]);

        let cov = model.covariance_matrix().unwrap();
        let expected = [
            [2.0, 0.0, 12.0, 0.0, 2.0],
            [0.0, 2.0, 0.0, 12.0, 2.0],
            [12.0, 0.0, 96.0, 0.0, 12.0],
            [0.0, 12.0, 0.0, 96.0, 12.0],
            [2.0, 2.0, 12.0, 12.0, 8.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(cov[i][j], expected[i][j], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn corr_poisson_chisq_mean_and_covariance() {
        let map = CoordinateMap {
            exponents: vec![
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![0, 2],
                vec![1, 1],
            ],
        };
        let model = VectorModel::new(
            vec![BaseDistribution::Poisson { lambda: 1.0 }, chisq1()],
            map,
        )
        .unwrap();
        assert_eq!(model.mean_vector().unwrap(), vec![1.0, 1.0, 2.0, 3.0, 1.0]);
        let cov = model.covariance_matrix().unwrap();
        let expected = [
            [1.0, 0.0, 3.0, 0.0, 1.0],
            [0.0, 2.0, 0.0, 12.0, 2.0],
            [3.0, 0.0, 11.0, 0.0, 3.0],
            [0.0, 12.0, 0.0, 96.0, 12.0],
            [1.0, 2.0, 3.0, 12.0, 5.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(cov[i][j], expected[i][j], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_is_psd() {
        // Jacobi eigenvalue sweep on the 5x5 covariance; all eigenvalues must
        // clear -1e-10.
        let model = corr_chisq_model();
        let mut a = model.covariance_matrix().unwrap();
        let k = a.len();
        for _sweep in 0..60 {
            let mut off = 0.0;
            for p in 0..k {
                for q in (p + 1)..k {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-22 {
                break;
            }
            for p in 0..k {
                for q in (p + 1)..k {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                    let (s, c) = theta.sin_cos();
                    for i in 0..k {
                        let (aip, aiq) = (a[i][p], a[i][q]);
                        a[i][p] = c * aip - s * aiq;
                        a[i][q] = s * aip + c * aiq;
                    }
                    for i in 0..k {
                        let (api, aqi) = (a[p][i], a[q][i]);
                        a[p][i] = c * api - s * aqi;
                        a[q][i] = s * api + c * aqi;
                    }
                }
            }
        }
        for i in 0..k {
            assert!(a[i][i] > -1e-10, "eigenvalue {} below tolerance", a[i][i]);
        }
    }

    #[test]
    fn ceiling_is_enforced() {
        let mut model = corr_chisq_model();
        model.moment_ceiling = 6;
        // Fourth moment of X^2 needs E X^8: above the lowered ceiling.
        let err = model.raw_coordinate_moment(&[2, 2, 2, 2]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDegree { order: 8, ceiling: 6, .. }));
    }

    #[test]
    fn serde_round_trip() {
        let model = corr_chisq_model();
        let text = serde_json::to_string(&model).unwrap();
        let back: VectorModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);

        let parsed: VectorModel = serde_json::from_str(
            r#"{
                "bases": [
                    {"kind": "chi-square", "df": 1.0},
                    {"kind": "poisson", "lambda": 2.0}
                ],
                "map": [[1, 0], [0, 1], [1, 1]]
            }"#,
        )
        .unwrap();
        assert_eq!(parsed.k(), 3);
        assert_eq!(parsed.moment_ceiling, DEFAULT_MOMENT_CEILING);

        let unknown = serde_json::from_str::<VectorModel>(
            r#"{"bases": [], "map": [], "extra": 1}"#,
        );
        assert!(unknown.is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(BaseDistribution::ChiSquare { df: 0.0 }.validate().is_err());
        assert!(BaseDistribution::Poisson { lambda: -1.0 }.validate().is_err());
        assert!(BaseDistribution::Normal { mean: f64::NAN, variance: 1.0 }
            .validate()
            .is_err());
        assert!(BaseDistribution::Lognormal { log_mean: 0.0, log_variance: 0.0 }
            .validate()
            .is_err());
        let bad = VectorModel::new(
            vec![chisq1()],
            CoordinateMap { exponents: vec![vec![1, 0]] },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn map_bases_applies_monomials() {
        let model = corr_chisq_model();
        let mut z = [0.0; 5];
        model.map_bases(&[2.0, 3.0], &mut z);
        assert_eq!(z, [2.0, 3.0, 4.0, 9.0, 6.0]);
    }
}

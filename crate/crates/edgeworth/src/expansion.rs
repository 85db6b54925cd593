//! First- and second-order expansions of the distribution of `W`.
//!
//! With `u = x / sigma` and the standard normal density `phi`, the expanded
//! CDF is
//!
//! ```text
//! F_s(x) = Phi(u) + n^(-1/2) q1(u) phi(u) [ + n^(-1) q2(u) phi(u) ]
//! ```
//!
//! where the polynomials read off the cumulant coefficients of
//! [`crate::cumulants`]:
//!
//! ```text
//! q1(u) = -( b1/sigma + b3/(6 sigma^3) (u^2 - 1) )
//! q2(u) = -( c0 u + c1 (u^3 - 3u) + c2 (u^5 - 10u^3 + 15u) )
//! c0 = (b2 + b1^2) / (2 sigma^2)
//! c1 = (b4 + 4 b1 b3) / (24 sigma^4)
//! c2 = b3^2 / (72 sigma^6)
//! ```
//!
//! Densities are the exact derivatives of these CDFs, so each correction term
//! integrates to zero and the total mass stays 1.

use crate::cumulants::ExpansionCoefficients;
use crate::error::{Error, Result};

/// Standardized tail cutoff: beyond `|u| > 40` every term is far below f64
/// resolution, and the CDF is returned as exactly 0 or 1 (density 0).
pub const TAIL_CLIP: f64 = 40.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Upper tail `Q(u) = 1 - Phi(u)` for `u >= SERIES_LIMIT` through the Laplace
/// continued fraction `Q(u) = phi(u) / (u + 1/(u + 2/(u + ...)))`, evaluated
/// backwards; 60 levels keep the truncation error far below one ulp here.
fn upper_tail_cf(u: f64) -> f64 {
    let mut b = u + 60.0 / u;
    for k in (1..60).rev() {
        b = u + k as f64 / b;
    }
    std_normal_pdf(u) / b
}

const SERIES_LIMIT: f64 = 5.0;

/// Standard normal CDF, accurate to a few ulp in absolute terms everywhere
/// and in relative terms on both tails.
///
/// For `|u| <= 5` the all-positive-terms series
/// `Phi(u) = 1/2 + phi(u) sum_{j>=0} u^(2j+1) / (1*3*...*(2j+1))` applies
/// (no cancellation, ~35 terms at the boundary); beyond that the tail
/// continued fraction takes over.
fn std_normal_cdf(u: f64) -> f64 {
    if u > SERIES_LIMIT {
        return 1.0 - upper_tail_cf(u);
    }
    if u < -SERIES_LIMIT {
        return upper_tail_cf(-u);
    }
    let u2 = u * u;
    let mut term = u;
    let mut sum = u;
    let mut odd = 1.0;
    loop {
        odd += 2.0;
        term *= u2 / odd;
        let next = sum + term;
        if next == sum {
            break;
        }
        sum = next;
    }
    0.5 + std_normal_pdf(u) * sum
}

/// `Phi(x / sigma)` for variance `sigma2 > 0`.
pub fn normal_cdf(x: f64, sigma2: f64) -> f64 {
    assert!(sigma2 > 0.0, "normal_cdf needs a positive variance");
    let u = x / sigma2.sqrt();
    if u > TAIL_CLIP {
        return 1.0;
    }
    if u < -TAIL_CLIP {
        return 0.0;
    }
    std_normal_cdf(u)
}

/// Density of the `N(0, sigma2)` reference at `x`.
pub fn normal_pdf(x: f64, sigma2: f64) -> f64 {
    assert!(sigma2 > 0.0, "normal_pdf needs a positive variance");
    let sigma = sigma2.sqrt();
    let u = x / sigma;
    if u.abs() > TAIL_CLIP {
        return 0.0;
    }
    std_normal_pdf(u) / sigma
}

/// First correction polynomial at the standardized argument.
pub fn q1(u: f64, c: &ExpansionCoefficients) -> f64 {
    let sigma = c.sigma2.sqrt();
    -(c.b1 / sigma + c.b3 / (6.0 * c.sigma2 * sigma) * (u * u - 1.0))
}

/// Second correction polynomial at the standardized argument.
pub fn q2(u: f64, c: &ExpansionCoefficients) -> f64 {
    let s2 = c.sigma2;
    let c0 = (c.b2 + c.b1 * c.b1) / (2.0 * s2);
    let c1 = (c.b4 + 4.0 * c.b1 * c.b3) / (24.0 * s2 * s2);
    let c2 = c.b3 * c.b3 / (72.0 * s2 * s2 * s2);
    let u2 = u * u;
    -(c0 * u + c1 * u * (u2 - 3.0) + c2 * u * (u2 * u2 - 10.0 * u2 + 15.0))
}

fn q1_prime(u: f64, c: &ExpansionCoefficients) -> f64 {
    let sigma = c.sigma2.sqrt();
    -c.b3 / (3.0 * c.sigma2 * sigma) * u
}

fn q2_prime(u: f64, c: &ExpansionCoefficients) -> f64 {
    let s2 = c.sigma2;
    let c0 = (c.b2 + c.b1 * c.b1) / (2.0 * s2);
    let c1 = (c.b4 + 4.0 * c.b1 * c.b3) / (24.0 * s2 * s2);
    let c2 = c.b3 * c.b3 / (72.0 * s2 * s2 * s2);
    let u2 = u * u;
    -(c0 + c1 * (3.0 * u2 - 3.0) + c2 * (5.0 * u2 * u2 - 30.0 * u2 + 15.0))
}

/// An expansion of a fixed order (1 or 2) at sample size `n`.
#[derive(Debug, Clone)]
pub struct EdgeworthApprox {
    pub coeffs: ExpansionCoefficients,
    pub n: u64,
    pub order: u8,
}

impl EdgeworthApprox {
    pub fn new(coeffs: ExpansionCoefficients, n: u64, order: u8) -> Result<Self> {
        if !matches!(order, 1 | 2) {
            return Err(Error::InvalidParameter(format!(
                "expansion order must be 1 or 2, got {order}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample size n must be positive".into()));
        }
        if !(coeffs.sigma2 > 0.0) || !coeffs.sigma2.is_finite() {
            return Err(Error::DegenerateStatistic(format!(
                "expansion needs a positive variance, got {}",
                coeffs.sigma2
            )));
        }
        Ok(EdgeworthApprox { coeffs, n, order })
    }

    /// Expanded CDF at `x`. Values are reported as computed — the series can
    /// locally leave `[0, 1]` or decrease, and no clamping is applied inside
    /// the working range; only the far tails (`|u| > 40`) snap to exact 0/1.
    pub fn cdf(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        let sigma = c.sigma2.sqrt();
        let u = x / sigma;
        if u > TAIL_CLIP {
            return 1.0;
        }
        if u < -TAIL_CLIP {
            return 0.0;
        }
        let phi = std_normal_pdf(u);
        let rn = (self.n as f64).sqrt();
        let mut acc = std_normal_cdf(u) + q1(u, c) * phi / rn;
        if self.order >= 2 {
            acc += q2(u, c) * phi / (rn * rn);
        }
        acc
    }

    /// Expanded density at `x`: the exact derivative of [`Self::cdf`], using
    /// `d/dx [q(u) phi(u)] = (q'(u) - u q(u)) phi(u) / sigma`.
    pub fn pdf(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        let sigma = c.sigma2.sqrt();
        let u = x / sigma;
        if u.abs() > TAIL_CLIP {
            return 0.0;
        }
        let phi = std_normal_pdf(u);
        let rn = (self.n as f64).sqrt();
        let mut acc = phi + (q1_prime(u, c) - u * q1(u, c)) * phi / rn;
        if self.order >= 2 {
            acc += (q2_prime(u, c) - u * q2(u, c)) * phi / (rn * rn);
        }
        acc / sigma
    }

    /// Count of adjacent strict decreases of the CDF over a grid (the series
    /// is not guaranteed monotone; violations are surfaced, never patched).
    pub fn monotonicity_violations(&self, xs: &[f64]) -> usize {
        xs.windows(2)
            .filter(|w| self.cdf(w[1]) < self.cdf(w[0]))
            .count()
    }
}

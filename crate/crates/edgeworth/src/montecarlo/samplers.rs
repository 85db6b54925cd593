//! Draws from the base distributions.
//!
//! All samplers consume the RNG through `random::<f64>()` only, with a fixed
//! number-of-draws structure per accepted value, so a given stream always
//! yields the same sample sequence:
//!
//! - normal: Box-Muller (two uniforms per value);
//! - gamma (for chi-square): Marsaglia-Tsang, with the `U^(1/shape)` boost
//!   below shape 1;
//! - Poisson: inversion by sequential search for rates up to 30, split into
//!   rate-25 chunks above that;
//! - lognormal: exponentiated normal.

use rand::Rng;

use crate::model::{BaseDistribution, VectorModel};

/// Largest rate handled by direct inversion; larger rates are decomposed into
/// independent chunks of rate 25 plus a remainder.
const POISSON_INVERSION_MAX: f64 = 30.0;
const POISSON_CHUNK: f64 = 25.0;

/// Standard normal via Box-Muller (cosine branch).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>(); // (0, 1]: keeps the log finite
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gamma(shape, scale) via Marsaglia-Tsang squeeze; shapes below 1 draw at
/// `shape + 1` and multiply by `U^(1/shape)`.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0);
    if shape < 1.0 {
        let base = gamma(rng, shape + 1.0, 1.0);
        let u = 1.0 - rng.random::<f64>();
        return base * u.powf(1.0 / shape) * scale;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = 1.0 - rng.random::<f64>();
        if u.ln() < 0.5 * x * x + d - d * v3 + d * v3.ln() {
            return d * v3 * scale;
        }
    }
}

pub fn chi_square<R: Rng + ?Sized>(rng: &mut R, df: f64) -> f64 {
    gamma(rng, 0.5 * df, 2.0)
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0.0f64;
    while u > cdf {
        k += 1.0;
        p *= lambda / k;
        cdf += p;
        if k > 1e7 {
            break; // unreachable for the supported rates; guards u ~ 1 edge
        }
    }
    k
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    debug_assert!(lambda > 0.0);
    let mut remaining = lambda;
    let mut total = 0.0;
    while remaining > POISSON_INVERSION_MAX {
        total += poisson_inversion(rng, POISSON_CHUNK);
        remaining -= POISSON_CHUNK;
    }
    total + poisson_inversion(rng, remaining)
}

/// One draw from a base distribution.
pub fn draw_base<R: Rng + ?Sized>(rng: &mut R, dist: &BaseDistribution) -> f64 {
    match *dist {
        BaseDistribution::ChiSquare { df } => chi_square(rng, df),
        BaseDistribution::Poisson { lambda } => poisson(rng, lambda),
        BaseDistribution::Normal { mean, variance } => {
            mean + variance.sqrt() * standard_normal(rng)
        }
        BaseDistribution::Lognormal { log_mean, log_variance } => {
            (log_mean + log_variance.sqrt() * standard_normal(rng)).exp()
        }
    }
}

/// One coordinate row: draw every base in index order, then apply the
/// monomial map.
pub fn draw_row<R: Rng + ?Sized>(
    rng: &mut R,
    model: &VectorModel,
    base_buf: &mut [f64],
    out: &mut [f64],
) {
    for (slot, dist) in base_buf.iter_mut().zip(&model.bases) {
        *slot = draw_base(rng, dist);
    }
    model.map_bases(base_buf, out);
}

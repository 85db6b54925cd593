//! Numerical diagnostics for conditional characteristic-function decay.
//!
//! The smoothness condition behind the second-order expansion asks that the
//! conditional characteristic function
//! `v_a(t) = E[exp(i t . (Z_1, .., Z_a)) | Z_{a+1}, .., Z_k]`
//! satisfy `limsup E|v_a(t)| < 1` as `|t| -> infinity`. [`estimate_modulus`]
//! probes `E|v_a|` on spherical shells by nested Monte Carlo: outer draws fix
//! the conditioning variables, inner draws estimate the conditional
//! expectation. The companions are a Jacobian-based sufficient check for
//! polynomial coordinate maps ([`jacobian_check`]) and a tail-truncation
//! bound comparing the truncated-sum characteristic function against the raw
//! one plus an explicit `2 E|Z|^s / n^(s/2)` slack ([`truncation_bound`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VectorModel;
use crate::montecarlo::samplers::draw_base;
use crate::montecarlo::streams::{substream, TAG_GPCC, TAG_JACOBIAN, TAG_TRUNCATION};
use crate::statistics::Expression;

pub const DEFAULT_DIRECTIONS: usize = 64;

fn default_directions() -> usize {
    DEFAULT_DIRECTIONS
}

/// A conditional-CF decay probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpccQuery {
    pub model: VectorModel,
    /// The characteristic function covers coordinates `1..a`, conditioned on
    /// coordinates `a+1..k`. `a = k` is the unconditional (classical) case.
    pub a: usize,
    /// Shell radii; strictly increasing, nonnegative. Radius 0 is allowed as
    /// a self-calibration point (its estimate is exactly 1).
    pub shells: Vec<f64>,
    #[serde(default = "default_directions")]
    pub directions_per_shell: usize,
    /// Outer and inner sample size of the nested estimator.
    pub mc_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellEstimate {
    pub radius: f64,
    /// Largest per-direction estimate on the shell and its standard error.
    pub max_modulus: f64,
    pub max_se: f64,
    /// Average over directions and its standard error.
    pub mean_modulus: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Decaying,
    NonDecaying,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpccReport {
    pub query: GpccQuery,
    pub shells: Vec<ShellEstimate>,
    pub verdict: Verdict,
}

/// Which bases are fixed by the conditioning coordinates.
///
/// Conditioning on `Z_{a+1..k}` is realized by fixing base draws, which is
/// only faithful when those coordinates pin down exactly the bases they
/// touch. A base is pinned when some conditioning coordinate is a pure power
/// of it that is invertible on the base's support (odd power, or any power of
/// a nonnegative base). Bases touched by conditioning coordinates but never
/// pinned make the structure unsupported.
fn conditioning_bases(model: &VectorModel, a: usize) -> Result<Vec<bool>> {
    let k = model.k();
    let n_bases = model.bases.len();
    let mut touched = vec![false; n_bases];
    let mut pinned = vec![false; n_bases];
    for row in &model.map.exponents[a..k] {
        let support: Vec<usize> = (0..n_bases).filter(|&b| row[b] > 0).collect();
        for &b in &support {
            touched[b] = true;
        }
        if support.len() == 1 {
            let b = support[0];
            let e = row[b];
            if e % 2 == 1 || model.bases[b].nonnegative_support() {
                pinned[b] = true;
            }
        }
    }
    for b in 0..n_bases {
        if touched[b] && !pinned[b] {
            return Err(Error::UnsupportedConditioning(format!(
                "base {} enters the conditioning coordinates only through \
                 products or non-invertible powers; conditioning cannot be \
                 realized by fixing base draws",
                b + 1
            )));
        }
    }
    Ok(pinned)
}

fn validate_query(q: &GpccQuery) -> Result<()> {
    q.model.validate()?;
    let k = q.model.k();
    if q.a == 0 || q.a > k {
        return Err(Error::InvalidParameter(format!(
            "a must lie in 1..={k}, got {}",
            q.a
        )));
    }
    if q.shells.is_empty() {
        return Err(Error::InvalidParameter("at least one shell radius is required".into()));
    }
    let mut prev = -1.0;
    for &r in &q.shells {
        if !r.is_finite() || r < 0.0 || r <= prev {
            return Err(Error::InvalidParameter(format!(
                "shell radii must be strictly increasing and nonnegative, got {:?}",
                q.shells
            )));
        }
        prev = r;
    }
    if q.directions_per_shell == 0 {
        return Err(Error::InvalidParameter("directions_per_shell must be positive".into()));
    }
    if q.mc_draws < 2 {
        return Err(Error::InvalidParameter("mc_draws must be at least 2".into()));
    }
    Ok(())
}

/// Estimate `E|v_a|` on each shell.
///
/// Each `(shell, direction)` pair owns a substream: the direction is drawn
/// first (an `a`-dimensional normalized Gaussian), then `mc_draws` outer
/// conditioning draws each run `mc_draws` inner draws of the free bases.
pub fn estimate_modulus(q: &GpccQuery, seed: u64) -> Result<GpccReport> {
    validate_query(q)?;
    let model = &q.model;
    let pinned = conditioning_bases(model, q.a)?;
    let n_bases = model.bases.len();
    let a = q.a;
    let m = q.mc_draws;
    let dps = q.directions_per_shell;

    // Per-pair nested estimation; pairs are independent and order-collected.
    let pair_results: Vec<(f64, f64)> = (0..q.shells.len() * dps)
        .into_par_iter()
        .map(|pair| {
            let shell_idx = pair / dps;
            let radius = q.shells[shell_idx];
            let mut rng = substream(seed, TAG_GPCC, pair as u64);
            // Direction on the unit sphere of the probed block.
            let mut dir = vec![0.0f64; a];
            loop {
                let mut norm2 = 0.0;
                for d in dir.iter_mut() {
                    *d = crate::montecarlo::samplers::standard_normal(&mut rng);
                    norm2 += *d * *d;
                }
                if norm2 > 1e-24 {
                    let norm = norm2.sqrt();
                    dir.iter_mut().for_each(|d| *d /= norm);
                    break;
                }
            }
            let t: Vec<f64> = dir.iter().map(|d| d * radius).collect();

            let mut bases = vec![0.0f64; n_bases];
            let mut sum_mod = 0.0;
            let mut sum_mod2 = 0.0;
            for _ in 0..m {
                for (b, slot) in bases.iter_mut().enumerate() {
                    if pinned[b] {
                        *slot = draw_base(&mut rng, &model.bases[b]);
                    }
                }
                let mut re = 0.0;
                let mut im = 0.0;
                for _ in 0..m {
                    for (b, slot) in bases.iter_mut().enumerate() {
                        if !pinned[b] {
                            *slot = draw_base(&mut rng, &model.bases[b]);
                        }
                    }
                    // Phase over the probed coordinates only.
                    let mut phase = 0.0;
                    for (ti, row) in t.iter().zip(&model.map.exponents) {
                        if *ti != 0.0 {
                            let mut zi = 1.0;
                            for (&w, &e) in bases.iter().zip(row) {
                                if e > 0 {
                                    zi *= w.powi(e as i32);
                                }
                            }
                            phase += ti * zi;
                        }
                    }
                    re += phase.cos();
                    im += phase.sin();
                }
                let modulus = (re * re + im * im).sqrt() / m as f64;
                sum_mod += modulus;
                sum_mod2 += modulus * modulus;
            }
            let mf = m as f64;
            let mean = sum_mod / mf;
            let var = (sum_mod2 / mf - mean * mean).max(0.0);
            let se = (var / mf).sqrt();
            (mean, se)
        })
        .collect();

    let mut shells = Vec::with_capacity(q.shells.len());
    for (s, &radius) in q.shells.iter().enumerate() {
        let block = &pair_results[s * dps..(s + 1) * dps];
        let (mut max_mod, mut max_se) = (f64::NEG_INFINITY, 0.0);
        let mut mean_acc = 0.0;
        let mut se2_acc = 0.0;
        for &(est, se) in block {
            if est > max_mod {
                max_mod = est;
                max_se = se;
            }
            mean_acc += est;
            se2_acc += se * se;
        }
        shells.push(ShellEstimate {
            radius,
            max_modulus: max_mod,
            max_se,
            mean_modulus: mean_acc / dps as f64,
            mean_se: se2_acc.sqrt() / dps as f64,
        });
    }

    // Verdict: evidence of mass staying at 1 on the outermost shells beats
    // evidence of decay when both fire.
    let last = shells.last().unwrap();
    let top_two = &shells[shells.len().saturating_sub(2)..];
    let non_decaying = top_two
        .iter()
        .any(|s| s.max_modulus >= 1.0 - 2.0 * s.max_se);
    let decaying = last.max_modulus < 1.0 - 5.0 * last.max_se;
    let verdict = if non_decaying {
        Verdict::NonDecaying
    } else if decaying {
        Verdict::Decaying
    } else {
        Verdict::Inconclusive
    };

    Ok(GpccReport {
        query: q.clone(),
        shells,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Jacobian sufficient check.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub trials: u64,
    pub near_singular: u64,
    pub non_finite: u64,
    /// `near_singular / (trials - non_finite)`.
    pub near_singular_fraction: f64,
}

/// Relative determinant floor: `|det| < 1e-10 * scale` counts as singular,
/// where `scale` is the Hadamard bound (product of row norms).
pub const DET_FLOOR: f64 = 1e-10;

fn det_in_place(m: &mut [Vec<f64>]) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in (col + 1)..n {
            let factor = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= factor * m[col][c];
            }
        }
    }
    det
}

/// Randomized test of the determinant criterion for maps `K_1, .., K_{k-1}`
/// (scalar expressions in `z1`): sample `k` i.i.d. base points, form the
/// `k x k` matrix with a first row of ones and row `j+1` holding `K_j'` at
/// the points, and count near-zero determinants. A nonzero determinant
/// almost surely certifies the decay condition for the polynomial-map model;
/// identically zero determinants (fraction 1) mean the criterion is silent —
/// linear maps land there while decay can still hold.
pub fn jacobian_check(
    maps: &[Expression],
    base: &crate::model::BaseDistribution,
    trials: u64,
    seed: u64,
) -> Result<JacobianReport> {
    if maps.is_empty() {
        return Err(Error::InvalidParameter("at least one map is required".into()));
    }
    for (j, e) in maps.iter().enumerate() {
        if e.max_var() > 1 {
            return Err(Error::DimensionMismatch(format!(
                "map {} must be a function of z1 only, but references z{}",
                j + 1,
                e.max_var()
            )));
        }
    }
    base.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let k = maps.len() + 1;
    let h_rel = f64::EPSILON.powf(1.0 / 3.0);

    let results: Vec<Option<bool>> = (0..trials as usize)
        .into_par_iter()
        .with_min_len(64)
        .map(|trial| {
            let mut rng = substream(seed, TAG_JACOBIAN, trial as u64);
            let points: Vec<f64> = (0..k).map(|_| draw_base(&mut rng, base)).collect();
            let mut matrix = vec![vec![1.0f64; k]; k];
            for (j, map) in maps.iter().enumerate() {
                for (c, &x) in points.iter().enumerate() {
                    let h = h_rel * x.abs().max(1.0);
                    let d = (map.eval(&[x + h]) - map.eval(&[x - h])) / (2.0 * h);
                    if !d.is_finite() {
                        return None;
                    }
                    matrix[j + 1][c] = d;
                }
            }
            let scale: f64 = matrix
                .iter()
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                .product();
            let det = det_in_place(&mut matrix);
            Some(det.abs() < DET_FLOOR * scale)
        })
        .collect();

    let mut near_singular = 0u64;
    let mut non_finite = 0u64;
    for r in results {
        match r {
            Some(true) => near_singular += 1,
            Some(false) => {}
            None => non_finite += 1,
        }
    }
    let valid = trials - non_finite;
    Ok(JacobianReport {
        trials,
        near_singular,
        non_finite,
        near_singular_fraction: if valid == 0 {
            0.0
        } else {
            near_singular as f64 / valid as f64
        },
    })
}

// ---------------------------------------------------------------------------
// Truncation slack bound.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub s: u32,
    pub n: u64,
    pub draws: usize,
    /// `E |Z|^s` (analytic for even `s`, Monte Carlo for odd).
    pub rho_s: f64,
    /// `2 rho_s / n^(s/2)`.
    pub slack: f64,
    /// Modulus estimate of the raw characteristic function at `t`, with SE.
    pub v_modulus: f64,
    pub v_se: f64,
    /// Modulus estimate for the truncated-and-recentered variable, with SE.
    pub g_modulus: f64,
    pub g_se: f64,
    /// Whether `g <= v + slack + 3 SE` held.
    pub within_bound: bool,
}

fn modulus_and_se(rows: &[Vec<f64>], phase_of: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let m = rows.len() as f64;
    let (mut re, mut im, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
    for row in rows {
        let p = phase_of(row);
        let (s, c) = p.sin_cos();
        re += c;
        im += s;
        re2 += c * c;
        im2 += s * s;
    }
    let mre = re / m;
    let mim = im / m;
    let var_re = (re2 / m - mre * mre).max(0.0);
    let var_im = (im2 / m - mim * mim).max(0.0);
    let modulus = (mre * mre + mim * mim).sqrt();
    // Conservative modulus SE: combined component noise.
    let se = ((var_re + var_im) / m).sqrt();
    (modulus, se)
}

/// Check the tail-truncation slack at frequency `t`.
///
/// With `Zhat = Z 1{|Z| <= sqrt(n)}` and `Ztilde = Zhat - E Zhat`, the
/// characteristic function of `Ztilde` can exceed the raw one by at most
/// `2 E|Z|^s / n^(s/2)`; this estimates both moduli from `draws` samples and
/// verifies the inequality up to `3` combined standard errors.
pub fn truncation_bound(
    model: &VectorModel,
    s: u32,
    n: u64,
    t: &[f64],
    draws: usize,
    seed: u64,
) -> Result<TruncationReport> {
    model.validate()?;
    let k = model.k();
    if t.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "t has {} entries for k = {k} coordinates",
            t.len()
        )));
    }
    if s < 3 {
        return Err(Error::InvalidParameter(format!("s must be at least 3, got {s}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if draws < 2 {
        return Err(Error::InvalidParameter("draws must be at least 2".into()));
    }

    // rho_s = E |Z|^s: exact multinomial expansion for even s, Monte Carlo
    // otherwise (separate substream so the CF sample stays untouched).
    let rho_s = if s % 2 == 0 {
        let p = (s / 2) as usize;
        let mut tuple = vec![0usize; p];
        let mut doubled = vec![0usize; 2 * p];
        let mut total = 0.0;
        loop {
            for (d, &i) in doubled.chunks_exact_mut(2).zip(&tuple) {
                d[0] = i;
                d[1] = i;
            }
            total += model.raw_coordinate_moment(&doubled)?;
            // Odometer over ordered tuples in {0..k}^p.
            let mut pos = p;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                tuple[pos] += 1;
                if tuple[pos] < k {
                    break;
                }
                tuple[pos] = 0;
            }
            if tuple.iter().all(|&x| x == 0) {
                break;
            }
        }
        total
    } else {
        let mut rng = substream(seed, TAG_TRUNCATION, 1);
        let mut bases = vec![0.0; model.bases.len()];
        let mut z = vec![0.0; k];
        let mut total = 0.0;
        for _ in 0..draws {
            crate::montecarlo::samplers::draw_row(&mut rng, model, &mut bases, &mut z);
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += norm.powi(s as i32);
        }
        total / draws as f64
    };
    let slack = 2.0 * rho_s / (n as f64).powf(s as f64 / 2.0);

    // One shared sample of rows for both CF estimates.
    let mut rng = substream(seed, TAG_TRUNCATION, 0);
    let mut bases = vec![0.0; model.bases.len()];
    let mut rows = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut z = vec![0.0; k];
        crate::montecarlo::samplers::draw_row(&mut rng, model, &mut bases, &mut z);
        rows.push(z);
    }
    let cutoff = (n as f64).sqrt();
    let mut trunc_mean = vec![0.0f64; k];
    for row in &rows {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= cutoff {
            for (m, v) in trunc_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    trunc_mean.iter_mut().for_each(|m| *m /= draws as f64);

    let (v_modulus, v_se) = modulus_and_se(&rows, |row| {
        row.iter().zip(t).map(|(z, ti)| z * ti).sum()
    });
    let (g_modulus, g_se) = modulus_and_se(&rows, |row| {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let phase: f64 = if norm <= cutoff {
            row.iter()
                .zip(t)
                .zip(&trunc_mean)
                .map(|((z, ti), m)| (z - m) * ti)
                .sum()
        } else {
            trunc_mean.iter().zip(t).map(|(m, ti)| -m * ti).sum()
        };
        phase
    });

    let combined_se = (v_se * v_se + g_se * g_se).sqrt();
    Ok(TruncationReport {
        s,
        n,
        draws,
        rho_s,
        slack,
        v_modulus,
        v_se,
        g_modulus,
        g_se,
        within_bound: g_modulus <= v_modulus + slack + 3.0 * combined_se,
    })
}

//! Central finite-difference helpers.
//!
//! Step sizes follow the usual optimal-order rules for central differences
//! under `f64` roundoff `eps ~ 2.2e-16`: `eps^(1/3)` for first derivatives,
//! `eps^(1/4)` for second, `eps^(1/5)` for the 8-point third-difference
//! stencil. Every step is scaled per coordinate by `max(1, |x_i|)`.

use crate::sym::{for_each_multiset, SymTensor};

/// Relative step for first-order central differences.
pub fn grad_step() -> f64 {
    f64::EPSILON.powf(1.0 / 3.0)
}

/// Relative step for second-order central differences.
pub fn hess_step() -> f64 {
    f64::EPSILON.powf(1.0 / 4.0)
}

/// Relative step for the third-order stencil.
pub fn third_step() -> f64 {
    f64::EPSILON.powf(1.0 / 5.0)
}

#[inline]
pub fn scale_for(x: f64) -> f64 {
    x.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate step `rel * max(1, |x_i|)`.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = rel * scale_for(x[i]);
        point[i] = x[i] + h;
        let fp = f(&point);
        point[i] = x[i] - h;
        let fm = f(&point);
        point[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Central-difference Hessian; the returned matrix is symmetric by
/// construction (each off-diagonal entry is computed once and mirrored).
pub fn hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], rel: f64) -> Vec<Vec<f64>> {
    let k = x.len();
    let f0 = f(x);
    let mut point = x.to_vec();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        let hi = rel * scale_for(x[i]);
        point[i] = x[i] + hi;
        let fp = f(&point);
        point[i] = x[i] - hi;
        let fm = f(&point);
        point[i] = x[i];
        out[i][i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..k {
            let hj = rel * scale_for(x[j]);
            let mut eval = |si: f64, sj: f64| {
                point[i] = x[i] + si * hi;
                point[j] = x[j] + sj * hj;
                let v = f(&point);
                point[i] = x[i];
                point[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Third-derivative tensor by differencing an analytic Hessian.
///
/// For each canonical `i <= j <= l` the three available estimates
/// `d/dx_i H_jl`, `d/dx_j H_il`, `d/dx_l H_ij` are averaged, which both
/// symmetrizes the tensor and cancels part of the stencil noise.
pub fn third_from_hessian<F: Fn(&[f64]) -> Vec<Vec<f64>>>(
    hess: F,
    x: &[f64],
    rel: f64,
) -> SymTensor {
    let k = x.len();
    let mut plus = Vec::with_capacity(k);
    let mut minus = Vec::with_capacity(k);
    let mut steps = Vec::with_capacity(k);
    let mut point = x.to_vec();
    for i in 0..k {
        let h = rel * scale_for(x[i]);
        steps.push(h);
        point[i] = x[i] + h;
        plus.push(hess(&point));
        point[i] = x[i] - h;
        minus.push(hess(&point));
        point[i] = x[i];
    }
    let diff = |d: usize, a: usize, b: usize| (plus[d][a][b] - minus[d][a][b]) / (2.0 * steps[d]);
    let mut out = SymTensor::zeros(k, 3);
    for_each_multiset(k, 3, |idx| {
        let (i, j, l) = (idx[0], idx[1], idx[2]);
        let avg = (diff(i, j, l) + diff(j, i, l) + diff(l, i, j)) / 3.0;
        out.set_sorted(idx, avg);
    });
    out
}

/// Third-derivative tensor straight from function values via the 8-point
/// product stencil
/// `sum_{s in {-1,1}^3} s1 s2 s3 f(x + s1 h_i e_i + s2 h_j e_j + s3 h_l e_l)
///  / (8 h_i h_j h_l)`,
/// which remains a valid third-difference when indices repeat.
pub fn third_from_values<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], rel: f64) -> SymTensor {
    let k = x.len();
    let mut point = x.to_vec();
    let mut out = SymTensor::zeros(k, 3);
    for_each_multiset(k, 3, |idx| {
        let (i, j, l) = (idx[0], idx[1], idx[2]);
        let (hi, hj, hl) = (
            rel * scale_for(x[i]),
            rel * scale_for(x[j]),
            rel * scale_for(x[l]),
        );
        let mut total = 0.0;
        for signs in 0..8u32 {
            let si = if signs & 1 != 0 { 1.0 } else { -1.0 };
            let sj = if signs & 2 != 0 { 1.0 } else { -1.0 };
            let sl = if signs & 4 != 0 { 1.0 } else { -1.0 };
            point[i] = x[i];
            point[j] = x[j];
            point[l] = x[l];
            point[i] += si * hi;
            point[j] += sj * hj;
            point[l] += sl * hl;
            total += si * sj * sl * f(&point);
            point[i] = x[i];
            point[j] = x[j];
            point[l] = x[l];
        }
        out.set_sorted(idx, total / (8.0 * hi * hj * hl));
    });
    out
}

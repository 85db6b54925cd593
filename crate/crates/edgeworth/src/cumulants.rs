//! Approximate cumulants of the normalized statistic.
//!
//! For `W = sqrt(n) (H(Zbar) - H(mu))`, expanding `H` to third order around
//! `mu` and collecting moments of the scaled sums gives cumulants of the form
//!
//! ```text
//! k1 = n^(-1/2) b1,          k2 = sigma^2 + n^(-1) b2,
//! k3 = n^(-1/2) b3,          k4 = n^(-1) b4,
//! ```
//!
//! with coefficients built from contractions of the gradient `l_i`, Hessian
//! `l_ij` and third derivatives `l_ijl` of `H` against centered coordinate
//! moments of orders two to four. The moment products that appear when
//! fourth- and sixth-order expectations factorize over index pairings are the
//! `U` sums below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentTensor;
use crate::statistics::DerivativeBundle;

/// Sum over the three pairings of four indices into two pairs:
/// `u1 = mu_{i1 i2} mu_{i3 i4} + mu_{i1 i3} mu_{i2 i4} + mu_{i1 i4} mu_{i2 i3}`.
pub fn u1(t: &MomentTensor, i: [usize; 4]) -> f64 {
    t.m2(i[0], i[1]) * t.m2(i[2], i[3])
        + t.m2(i[0], i[2]) * t.m2(i[1], i[3])
        + t.m2(i[0], i[3]) * t.m2(i[1], i[2])
}

/// Sum over the ten splits of five indices into a pair and a triple:
/// `u2 = sum mu_{a b} mu_{c d e}`.
pub fn u2(t: &MomentTensor, i: [usize; 5]) -> f64 {
    let mut acc = 0.0;
    for a in 0..5 {
        for b in (a + 1)..5 {
            let mut rest = [0usize; 3];
            let mut r = 0;
            for (p, &idx) in i.iter().enumerate() {
                if p != a && p != b {
                    rest[r] = idx;
                    r += 1;
                }
            }
            acc += t.m2(i[a], i[b]) * t.m3(rest[0], rest[1], rest[2]);
        }
    }
    acc
}

/// Sum over the fifteen perfect pairings of six indices:
/// `u3 = sum mu_{a b} mu_{c d} mu_{e f}`.
pub fn u3(t: &MomentTensor, i: [usize; 6]) -> f64 {
    let mut acc = 0.0;
    // Partner of position 0, then partner of the smallest remaining position.
    for p1 in 1..6 {
        let mut rest = [0usize; 4];
        let mut r = 0;
        for q in 1..6 {
            if q != p1 {
                rest[r] = q;
                r += 1;
            }
        }
        for c in 1..4 {
            let first = rest[0];
            let second = rest[c];
            let mut last = [0usize; 2];
            let mut l = 0;
            for &q in &rest[1..] {
                if q != second {
                    last[l] = q;
                    l += 1;
                }
            }
            acc += t.m2(i[0], i[p1]) * t.m2(i[first], i[second]) * t.m2(i[last[0]], i[last[1]]);
        }
    }
    acc
}

/// Sum over the fifteen splits of six indices into a pair and a quadruple:
/// `u4 = sum mu_{a b} mu_{c d e f}`.
pub fn u4(t: &MomentTensor, i: [usize; 6]) -> f64 {
    let mut acc = 0.0;
    for a in 0..6 {
        for b in (a + 1)..6 {
            let mut rest = [0usize; 4];
            let mut r = 0;
            for (p, &idx) in i.iter().enumerate() {
                if p != a && p != b {
                    rest[r] = idx;
                    r += 1;
                }
            }
            acc += t.m2(i[a], i[b]) * t.m4(rest[0], rest[1], rest[2], rest[3]);
        }
    }
    acc
}

/// Sum over the ten splits of six indices into two triples:
/// `u5 = sum mu_{a b c} mu_{d e f}`.
pub fn u5(t: &MomentTensor, i: [usize; 6]) -> f64 {
    let mut acc = 0.0;
    // Position 0 always sits in the first triple; choose its two companions.
    for a in 1..6 {
        for b in (a + 1)..6 {
            let mut rest = [0usize; 3];
            let mut r = 0;
            for q in 1..6 {
                if q != a && q != b {
                    rest[r] = q;
                    r += 1;
                }
            }
            acc += t.m3(i[0], i[a], i[b]) * t.m3(i[rest[0]], i[rest[1]], i[rest[2]]);
        }
    }
    acc
}

/// The four expansion coefficients together with the leading variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionCoefficients {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub sigma2: f64,
}

impl ExpansionCoefficients {
    /// First skewness-family coefficient (equals `b1`).
    pub fn a1(&self) -> f64 {
        self.b1
    }

    /// Second skewness-family coefficient (equals `b3`).
    pub fn a2(&self) -> f64 {
        self.b3
    }
}

/// Contract a derivative bundle against centered moment tensors.
///
/// With `l_i = grad`, `l_ij = hess`, `l_ijl = third` and `mu_...` the centered
/// moments, the coefficients are
///
/// ```text
/// b1 = (1/2) sum l_ij mu_ij
/// b2 = sum l_i l_jl mu_ijl
///    + (1/4) sum l_i1i2 l_i3i4 u1  + (1/3) sum l_i1 l_i2i3i4 u1  - b1^2
/// b3 = sum l_i l_j l_l mu_ijl
///    + (3/2) sum l_i1 l_i2 l_i3i4 (u1 - mu_i1i2 mu_i3i4)
/// b4 = sum l_i1 l_i2 l_i3 l_i4 (mu_i1i2i3i4 - u1)
///    + 12 sum l_i1 l_i2 l_i3 l_i4i5 mu_i1i4 mu_i2i3i5
///    + 12 sum l_i1 l_i2 l_i3i4 l_i5i6 mu_i1i3 mu_i2i5 mu_i4i6
///    +  4 sum l_i1 l_i2 l_i3 l_i4i5i6 mu_i1i4 mu_i2i5 mu_i3i6
/// ```
///
/// The `- u1` inside the quartic `b4` term keeps the fourth cumulant of a
/// purely linear statistic exact (the three pair products are precisely the
/// Gaussian part that a cumulant must remove); see the linear-statistic test
/// below.
pub fn coefficients(d: &DerivativeBundle, t: &MomentTensor) -> Result<ExpansionCoefficients> {
    let k = d.k();
    if t.k() != k {
        return Err(Error::DimensionMismatch(format!(
            "derivative bundle has k = {k} but moment tensor has k = {}",
            t.k()
        )));
    }
    let l1 = &d.grad;
    let l2 = &d.hess;
    let l3 = &d.third;

    // Dense copies of the lower-order tensors for the O(k^5..k^6) loops.
    let m2: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| t.m2(i, j)).collect())
        .collect();
    let mut m3 = vec![0.0f64; k * k * k];
    for i in 0..k {
        for j in 0..k {
            for l in 0..k {
                m3[(i * k + j) * k + l] = t.m3(i, j, l);
            }
        }
    }
    let m3 = |i: usize, j: usize, l: usize| m3[(i * k + j) * k + l];

    // b1 and the pure order-2 variance correction pieces.
    let mut b1 = 0.0;
    for i in 0..k {
        for j in 0..k {
            b1 += l2[i][j] * m2[i][j];
        }
    }
    b1 *= 0.5;

    let mut b2_cubic = 0.0;
    let mut b3_cubic = 0.0;
    for i in 0..k {
        for j in 0..k {
            for l in 0..k {
                let mu3 = m3(i, j, l);
                b2_cubic += l1[i] * l2[j][l] * mu3;
                b3_cubic += l1[i] * l1[j] * l1[l] * mu3;
            }
        }
    }

    let mut b2_hh = 0.0;
    let mut b2_gt = 0.0;
    let mut b3_quartic = 0.0;
    let mut b4_quartic = 0.0;
    for i1 in 0..k {
        for i2 in 0..k {
            for i3 in 0..k {
                for i4 in 0..k {
                    let pairings = m2[i1][i2] * m2[i3][i4]
                        + m2[i1][i3] * m2[i2][i4]
                        + m2[i1][i4] * m2[i2][i3];
                    b2_hh += l2[i1][i2] * l2[i3][i4] * pairings;
                    b2_gt += l1[i1] * l3.get(&[i2, i3, i4]) * pairings;
                    b3_quartic +=
                        l1[i1] * l1[i2] * l2[i3][i4] * (pairings - m2[i1][i2] * m2[i3][i4]);
                    b4_quartic +=
                        l1[i1] * l1[i2] * l1[i3] * l1[i4] * (t.m4(i1, i2, i3, i4) - pairings);
                }
            }
        }
    }

    let b2 = b2_cubic + 0.25 * b2_hh + b2_gt / 3.0 - b1 * b1;
    let b3 = b3_cubic + 1.5 * b3_quartic;

    // Fifth-order mixed term of b4.
    let mut b4_m5 = 0.0;
    for i1 in 0..k {
        for i2 in 0..k {
            for i3 in 0..k {
                let l111 = l1[i1] * l1[i2] * l1[i3];
                for i4 in 0..k {
                    let w = l111 * m2[i1][i4];
                    for i5 in 0..k {
                        b4_m5 += w * l2[i4][i5] * m3(i2, i3, i5);
                    }
                }
            }
        }
    }

    // Sixth-order terms of b4.
    let mut b4_hh = 0.0;
    for i1 in 0..k {
        for i2 in 0..k {
            let l11 = l1[i1] * l1[i2];
            for i3 in 0..k {
                let w13 = l11 * m2[i1][i3];
                for i4 in 0..k {
                    let w134 = w13 * l2[i3][i4];
                    for i5 in 0..k {
                        let w = w134 * m2[i2][i5];
                        for i6 in 0..k {
                            b4_hh += w * l2[i5][i6] * m2[i4][i6];
                        }
                    }
                }
            }
        }
    }
    let mut b4_gt = 0.0;
    for i1 in 0..k {
        for i2 in 0..k {
            for i3 in 0..k {
                let l111 = l1[i1] * l1[i2] * l1[i3];
                for i4 in 0..k {
                    let w4 = l111 * m2[i1][i4];
                    for i5 in 0..k {
                        let w45 = w4 * m2[i2][i5];
                        for i6 in 0..k {
                            b4_gt += w45 * m2[i3][i6] * l3.get(&[i4, i5, i6]);
                        }
                    }
                }
            }
        }
    }

    let b4 = b4_quartic + 12.0 * b4_m5 + 12.0 * b4_hh + 4.0 * b4_gt;

    Ok(ExpansionCoefficients {
        b1,
        b2,
        b3,
        b4,
        sigma2: d.sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseDistribution, CoordinateMap, VectorModel};
    use crate::moments::analytic_moments;
    use crate::sym::SymTensor;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(k: usize, seed: u64) -> MomentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = MomentTensor::zeros(k);
        for order in 2..=4 {
            t.order_tensor_mut(order)
                .map_in_place(|_, _| rng.random_range(-1.0..1.0));
        }
        t
    }

    /// Enumerate all partitions of `items` into unordered blocks whose sizes
    /// are given by `shape` (equal sizes adjacent), calling `f` with each
    /// partition. Blocks of different sizes are distinguishable; runs of
    /// equal-size blocks are deduplicated by requiring strictly increasing
    /// block minima along the run.
    fn partitions(items: &[usize], shape: &[usize], f: &mut impl FnMut(&[Vec<usize>])) {
        fn subsets(rest: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == size {
                out.push(cur.clone());
                return;
            }
            for i in start..rest.len() {
                cur.push(rest[i]);
                subsets(rest, size, i + 1, cur, out);
                cur.pop();
            }
        }
        fn go(
            remaining: Vec<usize>,
            shape: &[usize],
            acc: &mut Vec<Vec<usize>>,
            f: &mut impl FnMut(&[Vec<usize>]),
        ) {
            if shape.is_empty() {
                f(acc);
                return;
            }
            let size = shape[0];
            let mut blocks = Vec::new();
            subsets(&remaining, size, 0, &mut Vec::new(), &mut blocks);
            for block in blocks {
                if let Some(prev) = acc.last() {
                    // `remaining` stays sorted, so block[0] is the minimum.
                    if prev.len() == size && prev[0] > block[0] {
                        continue;
                    }
                }
                let left: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|x| !block.contains(x))
                    .collect();
                acc.push(block);
                go(left, &shape[1..], acc, f);
                acc.pop();
            }
        }
        go(items.to_vec(), shape, &mut Vec::new(), f);
    }

    #[test]
    fn partition_oracle_counts() {
        let mut count = |n: usize, shape: &[usize]| {
            let mut c = 0usize;
            partitions(&(0..n).collect::<Vec<_>>(), shape, &mut |_| c += 1);
            c
        };
        assert_eq!(count(4, &[2, 2]), 3);
        assert_eq!(count(5, &[3, 2]), 10);
        assert_eq!(count(6, &[2, 2, 2]), 15);
        assert_eq!(count(6, &[4, 2]), 15);
        assert_eq!(count(6, &[3, 3]), 10);
    }

    fn moment_of_block(t: &MomentTensor, block: &[usize]) -> f64 {
        match block.len() {
            2 => t.m2(block[0], block[1]),
            3 => t.m3(block[0], block[1], block[2]),
            4 => t.m4(block[0], block[1], block[2], block[3]),
            _ => unreachable!(),
        }
    }

    fn oracle(t: &MomentTensor, indices: &[usize], shape: &[usize]) -> f64 {
        let mut acc = 0.0;
        partitions(&(0..indices.len()).collect::<Vec<_>>(), shape, &mut |blocks| {
            let mut prod = 1.0;
            for block in blocks {
                let idx: Vec<usize> = block.iter().map(|&p| indices[p]).collect();
                prod *= moment_of_block(t, &idx);
            }
            acc += prod;
        });
        acc
    }

    #[test]
    fn u_terms_match_partition_enumeration() {
        let k = 4;
        let t = random_tensor(k, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let i4: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..k));
            let i5: [usize; 5] = std::array::from_fn(|_| rng.random_range(0..k));
            let i6: [usize; 6] = std::array::from_fn(|_| rng.random_range(0..k));
            assert_relative_eq!(u1(&t, i4), oracle(&t, &i4, &[2, 2]), max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(u2(&t, i5), oracle(&t, &i5, &[3, 2]), max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(u3(&t, i6), oracle(&t, &i6, &[2, 2, 2]), max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(u4(&t, i6), oracle(&t, &i6, &[4, 2]), max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(u5(&t, i6), oracle(&t, &i6, &[3, 3]), max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn u_term_counts() {
        // On the all-ones tensor every pairing product is 1, so each U sum
        // counts its partitions: 3, 10, 15, 15, 10.
        let k = 2;
        let mut t = MomentTensor::zeros(k);
        for order in 2..=4 {
            t.order_tensor_mut(order).map_in_place(|_, _| 1.0);
        }
        assert_eq!(u1(&t, [0; 4]), 3.0);
        assert_eq!(u2(&t, [0; 5]), 10.0);
        assert_eq!(u3(&t, [0; 6]), 15.0);
        assert_eq!(u4(&t, [0; 6]), 15.0);
        assert_eq!(u5(&t, [0; 6]), 10.0);
    }

    fn scalar_bundle(l1: f64, l2: f64, l3: f64, sigma2: f64) -> DerivativeBundle {
        let mut third = SymTensor::zeros(1, 3);
        third.set_sorted(&[0, 0, 0], l3);
        DerivativeBundle {
            grad: vec![l1],
            hess: vec![vec![l2]],
            third,
            sigma2,
            h_at_mu: 0.0,
        }
    }

    fn scalar_tensor(mu2: f64, mu3: f64, mu4: f64) -> MomentTensor {
        let mut t = MomentTensor::zeros(1);
        t.order_tensor_mut(2).set_sorted(&[0, 0], mu2);
        t.order_tensor_mut(3).set_sorted(&[0, 0, 0], mu3);
        t.order_tensor_mut(4).set_sorted(&[0, 0, 0, 0], mu4);
        t
    }

    #[test]
    fn scalar_closed_forms() {
        // k = 1 collapses every contraction to a few monomials:
        // b1 = l2 mu2 / 2
        // b2 = l1 l2 mu3 + l2^2 mu2^2 / 2 + l1 l3 mu2^2
        // b3 = l1^3 mu3 + 3 l1^2 l2 mu2^2
        // b4 = l1^4 (mu4 - 3 mu2^2) + 12 l1^3 l2 mu2 mu3
        //      + 12 l1^2 l2^2 mu2^3 + 4 l1^3 l3 mu2^3
        let (l1, l2, l3) = (0.7, -1.3, 2.1);
        let (mu2, mu3, mu4) = (1.9, -0.8, 6.5);
        let d = scalar_bundle(l1, l2, l3, l1 * l1 * mu2);
        let t = scalar_tensor(mu2, mu3, mu4);
        let c = coefficients(&d, &t).unwrap();
        assert_relative_eq!(c.b1, 0.5 * l2 * mu2, max_relative = 1e-14);
        assert_relative_eq!(
            c.b2,
            l1 * l2 * mu3 + 0.5 * l2 * l2 * mu2 * mu2 + l1 * l3 * mu2 * mu2,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            c.b3,
            l1.powi(3) * mu3 + 3.0 * l1 * l1 * l2 * mu2 * mu2,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            c.b4,
            l1.powi(4) * (mu4 - 3.0 * mu2 * mu2)
                + 12.0 * l1.powi(3) * l2 * mu2 * mu3
                + 12.0 * l1 * l1 * l2 * l2 * mu2.powi(3)
                + 4.0 * l1.powi(3) * l3 * mu2.powi(3),
            max_relative = 1e-14
        );
        assert_relative_eq!(c.a1(), c.b1);
        assert_relative_eq!(c.a2(), c.b3);
    }

    #[test]
    fn linear_statistic_has_exact_cumulants() {
        // For H linear (zero Hessian and third tensor) the Taylor statistic is
        // T = sum l_i S_i, whose cumulants are exactly
        // k1 = 0, k2 = sigma^2, k3 = n^(-1/2) sum lll mu3,
        // k4 = n^(-1) (sum llll mu4 - 3 sigma^4).
        let model = VectorModel::new(
            vec![
                BaseDistribution::ChiSquare { df: 1.0 },
                BaseDistribution::Poisson { lambda: 2.0 },
                BaseDistribution::Normal { mean: 0.5, variance: 2.0 },
            ],
            CoordinateMap::identity(3),
        )
        .unwrap();
        let t = analytic_moments(&model).unwrap();
        let grad = vec![0.9, -0.4, 1.7];
        let k = 3;
        let mut sigma2 = 0.0;
        let mut b3_direct = 0.0;
        let mut m4_contract = 0.0;
        for i in 0..k {
            for j in 0..k {
                sigma2 += grad[i] * grad[j] * t.m2(i, j);
                for l in 0..k {
                    b3_direct += grad[i] * grad[j] * grad[l] * t.m3(i, j, l);
                    for m in 0..k {
                        m4_contract +=
                            grad[i] * grad[j] * grad[l] * grad[m] * t.m4(i, j, l, m);
                    }
                }
            }
        }
        let d = DerivativeBundle {
            grad,
            hess: vec![vec![0.0; k]; k],
            third: SymTensor::zeros(k, 3),
            sigma2,
            h_at_mu: 0.0,
        };
        let c = coefficients(&d, &t).unwrap();
        assert_eq!(c.b1, 0.0);
        assert_eq!(c.b2, 0.0);
        assert_relative_eq!(c.b3, b3_direct, max_relative = 1e-12);
        assert_relative_eq!(
            c.b4,
            m4_contract - 3.0 * sigma2 * sigma2,
            max_relative = 1e-12
        );
    }

    #[test]
    fn coefficients_are_permutation_invariant() {
        // Relabel coordinates by a permutation; every contraction must be
        // unchanged.
        let k = 4;
        let t = random_tensor(k, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let grad: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut hess = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = rng.random_range(-1.0..1.0);
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        let mut third = SymTensor::zeros(k, 3);
        third.map_in_place(|_, _| rng.random_range(-1.0..1.0));
        let d = DerivativeBundle {
            grad: grad.clone(),
            hess: hess.clone(),
            third: third.clone(),
            sigma2: 1.0,
            h_at_mu: 0.0,
        };
        let base = coefficients(&d, &t).unwrap();

        let perm = [2usize, 0, 3, 1]; // new index of old coordinate i
        let mut pgrad = vec![0.0; k];
        let mut phess = vec![vec![0.0; k]; k];
        for i in 0..k {
            pgrad[perm[i]] = grad[i];
            for j in 0..k {
                phess[perm[i]][perm[j]] = hess[i][j];
            }
        }
        let inv = {
            let mut inv = [0usize; 4];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            inv
        };
        let mut pthird = SymTensor::zeros(k, 3);
        pthird.map_in_place(|idx, _| third.get(&[inv[idx[0]], inv[idx[1]], inv[idx[2]]]));
        let mut pt = MomentTensor::zeros(k);
        for order in 2..=4 {
            let src = t.order_tensor(order).clone();
            pt.order_tensor_mut(order).map_in_place(|idx, _| {
                let pre: Vec<usize> = idx.iter().map(|&x| inv[x]).collect();
                src.get(&pre)
            });
        }
        let pd = DerivativeBundle {
            grad: pgrad,
            hess: phess,
            third: pthird,
            sigma2: 1.0,
            h_at_mu: 0.0,
        };
        let permuted = coefficients(&pd, &pt).unwrap();
        assert_relative_eq!(base.b1, permuted.b1, max_relative = 1e-10, epsilon = 1e-10);
        assert_relative_eq!(base.b2, permuted.b2, max_relative = 1e-10, epsilon = 1e-10);
        assert_relative_eq!(base.b3, permuted.b3, max_relative = 1e-10, epsilon = 1e-10);
        assert_relative_eq!(base.b4, permuted.b4, max_relative = 1e-10, epsilon = 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = scalar_bundle(1.0, 0.0, 0.0, 1.0);
        let t = random_tensor(2, 1);
        assert!(matches!(
            coefficients(&d, &t),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn coefficients_serde_round_trip() {
        let c = ExpansionCoefficients {
            b1: 1.0,
            b2: -2.5,
            b3: 0.25,
            b4: 7.0,
            sigma2: 1.5,
        };
        let text = serde_json::to_string(&c).unwrap();
        let back: ExpansionCoefficients = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}

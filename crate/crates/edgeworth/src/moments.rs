//! Central moment tensors of orders two through four.
//!
//! Expansion coefficients consume the centered moments
//! `mu_{i1..ij} = E prod_p (Z_{ip} - mu_{ip})` for `j = 2, 3, 4`. The tensors
//! come either from closed-form base moments ([`analytic_moments`]) or from a
//! finite sample ([`sample_moments`]); both store one entry per sorted index
//! multiset (see [`crate::sym`]) and look up arbitrary index orders by
//! canonicalization.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::VectorModel;
use crate::sym::{for_each_multiset, SymTensor};

/// Rows per accumulation block in [`sample_moments`]. Fixing the block
/// boundaries fixes the floating-point summation order for a given input.
const BLOCK_ROWS: usize = 4096;

/// Centered moment tensors of orders 2, 3 and 4 over `k` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTensor {
    k: usize,
    order2: SymTensor,
    order3: SymTensor,
    order4: SymTensor,
}

impl MomentTensor {
    pub fn zeros(k: usize) -> Self {
        MomentTensor {
            k,
            order2: SymTensor::zeros(k, 2),
            order3: SymTensor::zeros(k, 3),
            order4: SymTensor::zeros(k, 4),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn m2(&self, i: usize, j: usize) -> f64 {
        self.order2.get(&[i, j])
    }

    #[inline]
    pub fn m3(&self, i: usize, j: usize, l: usize) -> f64 {
        self.order3.get(&[i, j, l])
    }

    #[inline]
    pub fn m4(&self, i: usize, j: usize, l: usize, m: usize) -> f64 {
        self.order4.get(&[i, j, l, m])
    }

    pub fn order_tensor(&self, order: usize) -> &SymTensor {
        match order {
            2 => &self.order2,
            3 => &self.order3,
            4 => &self.order4,
            _ => panic!("moment tensors cover orders 2..4, not {order}"),
        }
    }

    pub fn order_tensor_mut(&mut self, order: usize) -> &mut SymTensor {
        match order {
            2 => &mut self.order2,
            3 => &mut self.order3,
            4 => &mut self.order4,
            _ => panic!("moment tensors cover orders 2..4, not {order}"),
        }
    }

    /// Order-2 tensor as a dense covariance matrix.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let k = self.k;
        (0..k)
            .map(|i| (0..k).map(|j| self.m2(i, j)).collect())
            .collect()
    }

    /// JSON export: one object per order, canonical entries keyed by the
    /// 1-based coordinate tuple joined with dots (`"1.3.3"` for
    /// `mu_{1,3,3}`), matching the z1..zk numbering used in expressions.
    pub fn export(&self) -> Value {
        let mut root = Map::new();
        for order in 2..=4usize {
            let tensor = self.order_tensor(order);
            let mut entries = Map::new();
            let mut rank = 0;
            for_each_multiset(self.k, order, |idx| {
                let key = idx
                    .iter()
                    .map(|i| (i + 1).to_string())
                    .collect::<Vec<_>>()
                    .join(".");
                entries.insert(key, Value::from(tensor.canonical_entries()[rank]));
                rank += 1;
            });
            root.insert(format!("order{order}"), Value::Object(entries));
        }
        Value::Object(root)
    }

    /// Aggregated-moment transform: the tensors of the average of `b`
    /// independent copies. Second moments scale by `1/b`, third by `1/b^2`,
    /// and fourth moments pick up the three pairwise products:
    /// `mu~_{i1 i2 i3 i4} = b^{-3} mu_4 + (b-1) b^{-3} (mu_{i1 i2} mu_{i3 i4}
    ///  + mu_{i1 i3} mu_{i2 i4} + mu_{i1 i4} mu_{i2 i3})`.
    pub fn aggregate_blocks(&self, b: u64) -> MomentTensor {
        assert!(b >= 1, "block size must be at least 1");
        let bf = b as f64;
        let mut out = self.clone();
        out.order2
            .canonical_entries_mut()
            .iter_mut()
            .for_each(|v| *v /= bf);
        out.order3
            .canonical_entries_mut()
            .iter_mut()
            .for_each(|v| *v /= bf * bf);
        let b3 = bf * bf * bf;
        let pair_w = (bf - 1.0) / b3;
        let orig = &self.order2;
        out.order4.map_in_place(|idx, v| {
            let pairs = orig.get(&[idx[0], idx[1]]) * orig.get(&[idx[2], idx[3]])
                + orig.get(&[idx[0], idx[2]]) * orig.get(&[idx[1], idx[3]])
                + orig.get(&[idx[0], idx[3]]) * orig.get(&[idx[1], idx[2]]);
            v / b3 + pair_w * pairs
        });
        out
    }
}

/// Exact centered moments of a [`VectorModel`], by expanding each centered
/// product into raw coordinate moments over index subsets:
/// `E prod_p (Z_{ip} - mu_{ip}) = sum_{S} prod_{p not in S} (-mu_{ip})
///  E prod_{p in S} Z_{ip}`.
pub fn analytic_moments(model: &VectorModel) -> Result<MomentTensor> {
    model.validate()?;
    let k = model.k();
    let mu = model.mean_vector()?;
    let mut tensor = MomentTensor::zeros(k);
    for order in 2..=4usize {
        let mut values = Vec::new();
        let mut err = None;
        for_each_multiset(k, order, |idx| {
            if err.is_some() {
                return;
            }
            let mut total = 0.0;
            for mask in 0..(1u32 << order) {
                let mut subset = [0usize; 4];
                let mut len = 0;
                let mut sign = 1.0;
                for (p, &i) in idx.iter().enumerate() {
                    if mask & (1 << p) != 0 {
                        subset[len] = i;
                        len += 1;
                    } else {
                        sign *= -mu[i];
                    }
                }
                match model.raw_coordinate_moment(&subset[..len]) {
                    Ok(raw) => total += sign * raw,
                    Err(e) => {
                        err = Some(e);
                        return;
                    }
                }
            }
            values.push(total);
        });
        if let Some(e) = err {
            return Err(e);
        }
        tensor
            .order_tensor_mut(order)
            .canonical_entries_mut()
            .copy_from_slice(&values);
    }
    Ok(tensor)
}

/// Plug-in centered moments of a sample.
///
/// `data` is a row-major `n x k` matrix. Two passes: sample mean, then
/// centered products, each accumulated per fixed-size row block and combined
/// in block order so the result is bitwise reproducible for a given input.
/// Estimates are the biased `1/n` versions.
pub fn sample_moments(data: &[f64], k: usize) -> Result<(Vec<f64>, MomentTensor)> {
    if k == 0 {
        return Err(Error::DimensionMismatch("k must be positive".into()));
    }
    if data.len() % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "data length {} is not a multiple of k = {k}",
            data.len()
        )));
    }
    let n = data.len() / k;
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "sample moments need at least 2 rows, got {n}"
        )));
    }

    let mut mean = vec![0.0f64; k];
    for block in data.chunks(BLOCK_ROWS * k) {
        let mut partial = vec![0.0f64; k];
        for row in block.chunks_exact(k) {
            for (acc, &v) in partial.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for (m, p) in mean.iter_mut().zip(&partial) {
            *m += p;
        }
    }
    let nf = n as f64;
    for m in mean.iter_mut() {
        *m /= nf;
    }

    // Canonical index tuples per order, in rank order.
    let mut tuples: Vec<Vec<Vec<usize>>> = Vec::new();
    for order in 2..=4usize {
        let mut list = Vec::new();
        for_each_multiset(k, order, |idx| list.push(idx.to_vec()));
        tuples.push(list);
    }

    let sizes: Vec<usize> = tuples.iter().map(|t| t.len()).collect();
    let mut sums: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut centered = vec![0.0f64; k];
    for block in data.chunks(BLOCK_ROWS * k) {
        let mut partials: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        for row in block.chunks_exact(k) {
            for ((c, &v), &m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = v - m;
            }
            for (which, list) in tuples.iter().enumerate() {
                let partial = &mut partials[which];
                for (slot, idx) in partial.iter_mut().zip(list) {
                    let mut prod = 1.0;
                    for &i in idx {
                        prod *= centered[i];
                    }
                    *slot += prod;
                }
            }
        }
        for (total, partial) in sums.iter_mut().zip(&partials) {
            for (t, p) in total.iter_mut().zip(partial) {
                *t += p;
            }
        }
    }

    let mut tensor = MomentTensor::zeros(k);
    for (which, order) in (2..=4usize).enumerate() {
        let entries = tensor.order_tensor_mut(order).canonical_entries_mut();
        for (e, s) in entries.iter_mut().zip(&sums[which]) {
            *e = s / nf;
        }
    }
    Ok((mean, tensor))
}

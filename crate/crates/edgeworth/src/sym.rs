//! Canonical storage for symmetric tensors.
//!
//! Central moment tensors and third-derivative tensors are fully symmetric in
//! their indices, so only one entry per sorted index multiset is stored. A
//! multiset `i1 <= i2 <= ... <= ij` over `{0, .., k-1}` is ranked
//! lexicographically among all non-decreasing tuples of the same length, which
//! gives a dense zero-based offset into a flat buffer of
//! `C(k + j - 1, j)` entries.

/// Binomial coefficient as an exact `usize`. Arguments stay tiny here
/// (`n <= k + order`, with `k <= 16`), far from overflow.
pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: usize = 1;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of multisets of size `order` over `k` symbols: `C(k + order - 1, order)`.
pub fn multiset_count(k: usize, order: usize) -> usize {
    binomial(k + order - 1, order)
}

/// Rank of a non-decreasing index tuple among all non-decreasing tuples of the
/// same length over `{0, .., k-1}`, in lexicographic order.
pub fn multiset_rank(k: usize, sorted: &[usize]) -> usize {
    let mut rank = 0;
    let mut lower = 0;
    for (pos, &idx) in sorted.iter().enumerate() {
        debug_assert!(idx < k && idx >= lower, "indices must be sorted and < k");
        let remaining = sorted.len() - pos - 1;
        for v in lower..idx {
            // Tuples that place `v` here and fill the tail from `{v, .., k-1}`.
            rank += multiset_count(k - v, remaining);
        }
        lower = idx;
    }
    rank
}

/// Visit every non-decreasing tuple of length `order` over `{0, .., k-1}` in
/// lexicographic order, i.e. in increasing rank order.
pub fn for_each_multiset<F: FnMut(&[usize])>(k: usize, order: usize, mut f: F) {
    let mut idx = vec![0usize; order];
    if order == 0 {
        f(&idx);
        return;
    }
    loop {
        f(&idx);
        // Advance to the next non-decreasing tuple.
        let mut pos = order;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] + 1 < k {
                let v = idx[pos] + 1;
                for slot in idx[pos..].iter_mut() {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// Dense symmetric tensor of a fixed order over `k` coordinates.
///
/// Entries are stored once per sorted index multiset; `get` accepts indices in
/// any order and looks up the canonical entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    k: usize,
    order: usize,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(k: usize, order: usize) -> Self {
        SymTensor {
            k,
            order,
            data: vec![0.0; multiset_count(k, order)],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Entry at an index tuple in arbitrary order.
    pub fn get(&self, indices: &[usize]) -> f64 {
        debug_assert_eq!(indices.len(), self.order);
        let mut buf = [0usize; 8];
        let sorted = &mut buf[..self.order];
        sorted.copy_from_slice(indices);
        sorted.sort_unstable();
        self.data[multiset_rank(self.k, sorted)]
    }

    /// Set the canonical entry for a sorted index tuple.
    pub fn set_sorted(&mut self, sorted: &[usize], value: f64) {
        debug_assert_eq!(sorted.len(), self.order);
        let rank = multiset_rank(self.k, sorted);
        self.data[rank] = value;
    }

    /// Add into the canonical entry for a sorted index tuple.
    pub fn add_sorted(&mut self, sorted: &[usize], value: f64) {
        let rank = multiset_rank(self.k, sorted);
        self.data[rank] += value;
    }

    /// Flat canonical storage, ordered by multiset rank.
    pub fn canonical_entries(&self) -> &[f64] {
        &self.data
    }

    pub fn canonical_entries_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Apply `f` to every canonical entry, visiting sorted tuples in rank order.
    pub fn map_in_place<F: FnMut(&[usize], f64) -> f64>(&mut self, mut f: F) {
        let mut rank = 0;
        let k = self.k;
        let order = self.order;
        let data = &mut self.data;
        for_each_multiset(k, order, |idx| {
            data[rank] = f(idx, data[rank]);
            rank += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(19, 4), 3876);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn ranks_are_dense_and_ordered() {
        for k in 1..=6 {
            for order in 1..=4 {
                let mut expected = 0;
                for_each_multiset(k, order, |idx| {
                    assert_eq!(multiset_rank(k, idx), expected);
                    expected += 1;
                });
                assert_eq!(expected, multiset_count(k, order));
            }
        }
    }

    #[test]
    fn get_is_permutation_invariant() {
        let mut t = SymTensor::zeros(4, 3);
        t.set_sorted(&[0, 2, 3], 7.5);
        assert_eq!(t.get(&[3, 0, 2]), 7.5);
        assert_eq!(t.get(&[2, 3, 0]), 7.5);
        assert_eq!(t.get(&[0, 2, 3]), 7.5);
    }

    #[test]
    fn order_four_size_at_k16() {
        assert_eq!(multiset_count(16, 4), 3876);
    }
}

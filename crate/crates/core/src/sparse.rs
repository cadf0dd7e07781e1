//! Sparse symmetric LDLᵀ factorization with a minimum-degree ordering.
//!
//! The symbolic phase (ordering, elimination tree, column counts) is done
//! once per sparsity pattern; numeric refactorizations reuse it. The numeric
//! kernel is the up-looking algorithm of QDLDL and performs no pivoting, so
//! callers must supply quasi-definite or positive definite matrices.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Elimination order minimizing the degree of the eliminated vertex at each
/// step. Ties go to the lowest index, or the highest when `prefer_high` is set.
pub fn min_degree_order(adj: &[Vec<usize>], prefer_high: bool) -> Vec<usize> {
    let n = adj.len();
    let mut nbrs: Vec<BTreeSet<usize>> = adj
        .iter()
        .enumerate()
        .map(|(v, a)| a.iter().copied().filter(|&u| u != v).collect())
        .collect();
    for v in 0..n {
        for u in nbrs[v].clone() {
            nbrs[u].insert(v);
        }
    }
    let key = |v: usize| if prefer_high { n - 1 - v } else { v };
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (nbrs[v].len(), key(v))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, k)) = queue.pop_first() {
        let v = if prefer_high { n - 1 - k } else { k };
        order.push(v);
        let hood: Vec<usize> = std::mem::take(&mut nbrs[v]).into_iter().collect();
        for &u in &hood {
            queue.remove(&(nbrs[u].len(), key(u)));
            nbrs[u].remove(&v);
        }
        for (i, &a) in hood.iter().enumerate() {
            for &b in &hood[i + 1..] {
                nbrs[a].insert(b);
                nbrs[b].insert(a);
            }
        }
        for &u in &hood {
            queue.insert((nbrs[u].len(), key(u)));
        }
    }
    order
}

/// Ordering, elimination tree and storage layout for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// Permuted upper-triangular CSC of the input pattern.
    ap: Vec<usize>,
    ai: Vec<usize>,
    /// For each input entry, its slot in `ax`.
    slot_of_entry: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
}

/// Numeric LDLᵀ factor of a permuted matrix.
#[derive(Debug, Clone)]
pub struct Factor<'a> {
    sym: &'a Symbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    /// Original indices whose pivots were replaced by the positive-definite
    /// safeguard.
    pub replaced_pivots: Vec<usize>,
}

impl Symbolic {
    /// Analyzes the pattern given by `entries` (row, col) pairs of a symmetric
    /// n×n matrix; either triangle may be given, duplicates are summed later.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(r, c) in entries {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        let perm = min_degree_order(&adj, false);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // Permuted upper-triangular pattern, with the diagonal always present.
        let mut keyed: Vec<(usize, usize, usize)> = entries
            .iter()
            .enumerate()
            .map(|(e, &(r, c))| {
                let (a, b) = (inv[r], inv[c]);
                (a.max(b), a.min(b), e)
            })
            .collect();
        keyed.extend((0..n).map(|j| (j, j, NONE)));
        keyed.sort_unstable();
        let mut ap = vec![0; n + 1];
        let mut ai = Vec::new();
        let mut slot_of_entry = vec![0; entries.len()];
        let mut last: Option<(usize, usize)> = None;
        for &(col, row, e) in &keyed {
            if last != Some((col, row)) {
                ai.push(row);
                ap[col + 1] = ai.len();
                last = Some((col, row));
            }
            if e != NONE {
                slot_of_entry[e] = ai.len() - 1;
            }
        }
        for j in 0..n {
            ap[j + 1] = ap[j + 1].max(ap[j]);
        }

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Symbolic {
            n,
            perm,
            ap,
            ai,
            slot_of_entry,
            etree,
            lp,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization. `values[e]` belongs to `entries[e]` given at
    /// construction. With `pd_floor = Some(eps)` the matrix is treated as
    /// positive semidefinite and pivots below `eps` are replaced by a huge
    /// value, which drops the corresponding direction from solves.
    pub fn factor(&self, values: &[f64], pd_floor: Option<f64>) -> Result<Factor<'_>> {
        let n = self.n;
        let mut ax = vec![0.0; self.ai.len()];
        for (e, &v) in values.iter().enumerate() {
            ax[self.slot_of_entry[e]] += v;
        }
        let nnz = self.lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next = self.lp[..n].to_vec();
        let mut marked = vec![false; n];
        let mut y = vec![0.0; n];
        let mut pattern = Vec::with_capacity(n);
        let mut stack = Vec::with_capacity(n);
        let mut replaced = Vec::new();

        for k in 0..n {
            pattern.clear();
            d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y[b] = ax[p];
                if marked[b] {
                    continue;
                }
                marked[b] = true;
                stack.clear();
                stack.push(b);
                let mut i = self.etree[b];
                while i != NONE && i < k && !marked[i] {
                    marked[i] = true;
                    stack.push(i);
                    i = self.etree[i];
                }
                while let Some(s) = stack.pop() {
                    pattern.push(s);
                }
            }
            for &c in pattern.iter().rev() {
                let yc = y[c];
                let end = next[c];
                for j in self.lp[c]..end {
                    y[li[j]] -= lx[j] * yc;
                }
                li[end] = k;
                lx[end] = yc * dinv[c];
                d[k] -= yc * lx[end];
                next[c] += 1;
                y[c] = 0.0;
                marked[c] = false;
            }
            if let Some(eps) = pd_floor {
                if d[k] < eps {
                    d[k] = 1e128;
                    replaced.push(self.perm[k]);
                }
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::NumericalFailure(format!("zero pivot at column {k}")));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Factor {
            sym: self,
            li,
            lx,
            d,
            replaced_pivots: replaced,
        })
    }
}

impl Factor<'_> {
    /// Number of (positive, negative) pivots, i.e. the inertia of the matrix.
    pub fn inertia(&self) -> (usize, usize) {
        let neg = self.d.iter().filter(|&&v| v < 0.0).count();
        (self.d.len() - neg, neg)
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let s = self.sym;
        let n = s.n;
        let mut x: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let xi = x[i];
            for j in s.lp[i]..s.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in s.lp[i]..s.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (new, &old) in s.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

/// Symmetric matrix assembled from (row, col, value) triplets, upper triangle.
#[derive(Debug, Clone, Default)]
pub struct SymTriplets {
    pub n: usize,
    pub entries: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        SymTriplets {
            n,
            ..Default::default()
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.entries.push((r.min(c), r.max(c)));
        self.values.push(v);
    }

    /// y = A x
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (&(r, c), &v) in self.entries.iter().zip(&self.values) {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn dense(t: &SymTriplets) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(t.n, t.n);
        for (&(r, c), &v) in t.entries.iter().zip(&t.values) {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }

    fn random_system(n: usize, density: f64, seed: u64, indefinite: bool) -> SymTriplets {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = SymTriplets::new(n);
        let mut rowsum = vec![0.0; n];
        for r in 0..n {
            for c in r + 1..n {
                if rng.gen::<f64>() < density {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    t.push(r, c, v);
                    rowsum[r] += v.abs();
                    rowsum[c] += v.abs();
                }
            }
        }
        for (i, s) in rowsum.iter().enumerate() {
            let sign = if indefinite && i % 3 == 0 { -1.0 } else { 1.0 };
            t.push(i, i, sign * (s + 1.0));
        }
        t
    }

    #[test]
    fn path_graph_has_no_fill() {
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let order = min_degree_order(&adj, false);
        assert_eq!(order[0], 0);
        let sym = Symbolic::new(4, &[(0, 1), (1, 2), (2, 3), (0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(sym.factor_nnz(), 3);
    }

    #[test]
    fn tie_break_direction() {
        let cycle = vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![2, 0]];
        assert_eq!(min_degree_order(&cycle, false)[0], 0);
        assert_eq!(min_degree_order(&cycle, true)[0], 3);
    }

    proptest! {
        #[test]
        fn solves_match_dense(n in 1usize..40, density in 0.0f64..0.5, seed in 0u64..1000, indefinite in any::<bool>()) {
            let t = random_system(n, density, seed, indefinite);
            let sym = Symbolic::new(n, &t.entries);
            let f = sym.factor(&t.values, None).unwrap();
            let a = dense(&t);
            let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut b = t.mul(&xs);
            f.solve(&mut b);
            for i in 0..n {
                prop_assert!((b[i] - xs[i]).abs() < 1e-9, "i={} got {} want {}", i, b[i], xs[i]);
            }
            let neg = a.symmetric_eigenvalues().iter().filter(|&&v| v < 0.0).count();
            prop_assert_eq!(f.inertia().1, neg);
        }
    }
}

//! Chordal extension of the network graph, maximal cliques, clique tree and
//! the linking structure of the decomposed semidefinite constraint.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::min_degree_order;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub child: usize,
    pub parent: usize,
    /// Buses shared by the two cliques, ascending.
    pub separator: Vec<usize>,
}

/// One bus pair `{a, b}` (a <= b) shared by two cliques adjacent in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub child: usize,
    pub parent: usize,
    pub a: usize,
    pub b: usize,
}

impl OverlapPair {
    /// Real-embedded entries tied by this pair: dd, qq and dq for a = b;
    /// dd, qq, dq and qd otherwise.
    pub fn real_entries(&self) -> usize {
        if self.a == self.b {
            3
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CliqueDecomposition {
    pub n: usize,
    /// Maximal cliques as ascending bus-index lists, in lexicographic order.
    pub cliques: Vec<Vec<usize>>,
    pub fill_edges: Vec<(usize, usize)>,
    pub tree: Vec<TreeEdge>,
    pub overlap_pairs: Vec<OverlapPair>,
}

impl CliqueDecomposition {
    pub fn m(&self) -> usize {
        self.cliques.len()
    }

    /// Position of `bus` inside clique `i`.
    pub fn position(&self, i: usize, bus: usize) -> Option<usize> {
        self.cliques[i].binary_search(&bus).ok()
    }

    pub fn cliques_with(&self, bus: usize) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.position(i, bus).is_some()).collect()
    }

    pub fn cliques_with_pair(&self, a: usize, b: usize) -> Vec<usize> {
        (0..self.m())
            .filter(|&i| self.position(i, a).is_some() && self.position(i, b).is_some())
            .collect()
    }

    pub fn max_clique_size(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Total number of tied real matrix entries.
    pub fn linking_count(&self) -> usize {
        self.overlap_pairs.iter().map(OverlapPair::real_entries).sum()
    }

    /// Edges of the chordal extension (network edges plus fill).
    pub fn extended_edges(&self) -> BTreeSet<(usize, usize)> {
        let mut e = BTreeSet::new();
        for c in &self.cliques {
            for (i, &a) in c.iter().enumerate() {
                for &b in &c[i + 1..] {
                    e.insert((a, b));
                }
            }
        }
        e
    }
}

fn components(n: usize, adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    count
}

/// Chordal extension by symbolic elimination under a minimum-degree order.
pub fn chordal_extend(n: usize, edges: &[(usize, usize)]) -> Result<CliqueDecomposition> {
    let mut adj = vec![Vec::new(); n];
    let mut edge_set = HashSet::new();
    for &(a, b) in edges {
        if a != b && edge_set.insert((a.min(b), a.max(b))) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let comps = components(n, &adj);
    if comps > 1 {
        return Err(Error::DisconnectedGraph { components: comps });
    }
    // Ties go to the highest index: on a 4-cycle 1-2-3-4 this eliminates
    // bus 4 first and adds the chord 1-3.
    let order = min_degree_order(&adj, true);
    let mut nbrs: Vec<BTreeSet<usize>> = adj.iter().map(|a| a.iter().copied().collect()).collect();
    let mut eliminated = vec![false; n];
    let mut fill = BTreeSet::new();
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
    for &v in &order {
        let later: Vec<usize> = nbrs[v].iter().copied().filter(|&u| !eliminated[u]).collect();
        for (i, &a) in later.iter().enumerate() {
            for &b in &later[i + 1..] {
                if nbrs[a].insert(b) {
                    nbrs[b].insert(a);
                    fill.insert((a.min(b), a.max(b)));
                }
            }
        }
        eliminated[v] = true;
        let mut c = later;
        c.push(v);
        c.sort_unstable();
        candidates.push(c);
    }
    let cliques = maximal_only(candidates);
    Ok(build(n, cliques, fill.into_iter().collect()))
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && small.iter().all(|x| big.binary_search(x).is_ok())
}

fn maximal_only(mut cands: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    cands.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    cands.dedup();
    let mut kept: Vec<Vec<usize>> = Vec::new();
    for c in cands {
        if !kept.iter().any(|k| is_subset(&c, k)) {
            kept.push(c);
        }
    }
    kept.sort();
    kept
}

fn intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.binary_search(x).is_ok()).collect()
}

/// Maximum-weight spanning tree over separator sizes, rooted at clique 0.
fn clique_tree(cliques: &[Vec<usize>]) -> Vec<TreeEdge> {
    let m = cliques.len();
    let mut cand = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let w = intersection(&cliques[i], &cliques[j]).len();
            if w > 0 {
                cand.push((w, i, j));
            }
        }
    }
    cand.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut uf: Vec<usize> = (0..m).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut tree_adj = vec![Vec::new(); m];
    for (_, i, j) in cand {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            tree_adj[i].push(j);
            tree_adj[j].push(i);
        }
    }
    let mut edges = Vec::with_capacity(m.saturating_sub(1));
    let mut seen = vec![false; m];
    let mut queue = std::collections::VecDeque::new();
    if m > 0 {
        seen[0] = true;
        queue.push_back(0);
    }
    while let Some(p) = queue.pop_front() {
        let mut kids = tree_adj[p].clone();
        kids.sort_unstable();
        for c in kids {
            if !seen[c] {
                seen[c] = true;
                edges.push(TreeEdge {
                    child: c,
                    parent: p,
                    separator: intersection(&cliques[c], &cliques[p]),
                });
                queue.push_back(c);
            }
        }
    }
    edges
}

/// Linking pairs: one per bus pair in each tree separator. With the
/// running-intersection property this gives (multiplicity − 1) links per pair.
pub fn linking_pairs(tree: &[TreeEdge]) -> Vec<OverlapPair> {
    let mut out = Vec::new();
    for e in tree {
        for (i, &a) in e.separator.iter().enumerate() {
            for &b in &e.separator[i..] {
                out.push(OverlapPair {
                    child: e.child,
                    parent: e.parent,
                    a,
                    b,
                });
            }
        }
    }
    out
}

fn build(n: usize, cliques: Vec<Vec<usize>>, fill_edges: Vec<(usize, usize)>) -> CliqueDecomposition {
    let tree = clique_tree(&cliques);
    let overlap_pairs = linking_pairs(&tree);
    CliqueDecomposition {
        n,
        cliques,
        fill_edges,
        tree,
        overlap_pairs,
    }
}

/// Merges a child clique into its parent whenever the product of their
/// private parts `|C_c \ S| · |C_p \ S|` is at most `threshold`, while the
/// merged clique stays within `max_size` buses.
pub fn merge_cliques(dec: &CliqueDecomposition, threshold: usize, max_size: usize) -> CliqueDecomposition {
    let mut cliques = dec.cliques.clone();
    let mut fill: BTreeSet<(usize, usize)> = dec.fill_edges.iter().copied().collect();
    let original = dec.extended_edges();
    loop {
        let tree = clique_tree(&cliques);
        let pick = tree.iter().find(|e| {
            let s = e.separator.len();
            let (cc, cp) = (&cliques[e.child], &cliques[e.parent]);
            (cc.len() - s) * (cp.len() - s) <= threshold && cc.len() + cp.len() - s <= max_size
        });
        let Some(e) = pick else { break };
        let mut merged: Vec<usize> = cliques[e.child].iter().chain(&cliques[e.parent]).copied().collect();
        merged.sort_unstable();
        merged.dedup();
        for (i, &a) in merged.iter().enumerate() {
            for &b in &merged[i + 1..] {
                if !original.contains(&(a, b)) {
                    fill.insert((a, b));
                }
            }
        }
        let (c, p) = (e.child, e.parent);
        cliques = cliques
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != c && i != p)
            .map(|(_, v)| v)
            .collect();
        cliques.push(merged);
        cliques = maximal_only(cliques);
    }
    build(dec.n, cliques, fill.into_iter().collect())
}

/// JSON summary used by `--dump-cliques`.
#[derive(Debug, Clone, Serialize)]
pub struct CliqueDump<'a> {
    pub cliques: &'a [Vec<usize>],
    pub fill_edges: &'a [(usize, usize)],
    pub tree: &'a [TreeEdge],
    pub overlap_pairs: usize,
    pub linking_entries: usize,
    pub max_clique_size: usize,
}

impl CliqueDecomposition {
    pub fn dump(&self) -> CliqueDump<'_> {
        CliqueDump {
            cliques: &self.cliques,
            fill_edges: &self.fill_edges,
            tree: &self.tree,
            overlap_pairs: self.overlap_pairs.len(),
            linking_entries: self.linking_count(),
            max_clique_size: self.max_clique_size(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cycle_gets_one_chord() {
        let dec = chordal_extend(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(dec.fill_edges, vec![(0, 2)]);
        assert_eq!(dec.cliques, vec![vec![0, 1, 2], vec![0, 2, 3]]);
        assert_eq!(dec.tree.len(), 1);
        assert_eq!(dec.tree[0].separator, vec![0, 2]);
        let pairs: Vec<(usize, usize)> = dec.overlap_pairs.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 2), (2, 2)]);
    }

    #[test]
    fn path_needs_no_fill() {
        let dec = chordal_extend(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(dec.fill_edges.is_empty());
        assert_eq!(dec.cliques, vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(dec.overlap_pairs.len(), 1);
        assert_eq!(dec.linking_count(), 3);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = chordal_extend(4, &[(0, 1), (2, 3)]).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph { components: 2 }));
    }

    #[test]
    fn triangle_is_one_clique() {
        let dec = chordal_extend(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(dec.m(), 1);
        assert!(dec.overlap_pairs.is_empty());
    }

    #[test]
    fn merging_collapses_small_cliques() {
        let dec = chordal_extend(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(dec.m(), 3);
        let merged = merge_cliques(&dec, 2, 30);
        assert_eq!(merged.m(), 1);
        assert_eq!(merged.cliques[0], vec![0, 1, 2, 3]);
        assert_eq!(merged.fill_edges.len(), 3);
    }
}

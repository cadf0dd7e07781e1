//! Brute-force graph oracles.

use std::collections::{BTreeSet, HashMap};

use opfbound::chordal::CliqueDecomposition;

pub fn adjacency(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    adj
}

/// Looks for a chordless cycle of length >= 4 by growing chordless paths
/// from each start vertex through larger-numbered vertices only.
pub fn chordless_cycle(adj: &[Vec<bool>]) -> Option<Vec<usize>> {
    fn grow(adj: &[Vec<bool>], path: &mut Vec<usize>) -> Option<Vec<usize>> {
        let s = path[0];
        let last = *path.last().unwrap();
        for u in (s + 1)..adj.len() {
            if !adj[last][u] || path.contains(&u) {
                continue;
            }
            // u may touch only its predecessor, plus the start when it closes the cycle
            let inner = if path.len() > 2 { &path[1..path.len() - 1] } else { &[][..] };
            if inner.iter().any(|&w| adj[w][u]) {
                continue;
            }
            if adj[s][u] && path.len() > 1 {
                if path.len() >= 3 {
                    let mut c = path.clone();
                    c.push(u);
                    return Some(c);
                }
                continue;
            }
            path.push(u);
            if let Some(c) = grow(adj, path) {
                return Some(c);
            }
            path.pop();
        }
        None
    }
    (0..adj.len()).find_map(|s| grow(adj, &mut vec![s]))
}

/// Bron–Kerbosch without pivoting.
pub fn maximal_cliques(adj: &[Vec<bool>]) -> BTreeSet<Vec<usize>> {
    fn bk(adj: &[Vec<bool>], r: Vec<usize>, mut p: Vec<usize>, mut x: Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        if p.is_empty() && x.is_empty() {
            let mut c = r;
            c.sort_unstable();
            out.insert(c);
            return;
        }
        while let Some(v) = p.pop() {
            let mut r2 = r.clone();
            r2.push(v);
            let p2 = p.iter().copied().filter(|&u| adj[v][u]).collect();
            let x2 = x.iter().copied().filter(|&u| adj[v][u]).collect();
            bk(adj, r2, p2, x2, out);
            x.push(v);
        }
    }
    let mut out = BTreeSet::new();
    bk(adj, Vec::new(), (0..adj.len()).collect(), Vec::new(), &mut out);
    out
}

/// Σ over bus pairs {a, b} of (cliques containing both − 1) · (1 if a = b else 2).
pub fn enumerated_links(dec: &CliqueDecomposition) -> usize {
    let mut mult: HashMap<(usize, usize), usize> = HashMap::new();
    for c in &dec.cliques {
        for (i, &a) in c.iter().enumerate() {
            for &b in &c[i..] {
                *mult.entry((a, b)).or_default() += 1;
            }
        }
    }
    mult.iter().map(|(&(a, b), &m)| (m - 1) * if a == b { 1 } else { 2 }).sum()
}

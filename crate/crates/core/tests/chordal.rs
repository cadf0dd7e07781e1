//! Chordal extension checked against brute force on small graphs.

mod common;

use std::collections::BTreeSet;

use common::graph::{adjacency, chordless_cycle, enumerated_links, maximal_cliques};
use common::{setup, FIXTURES};
use opfbound::chordal::{chordal_extend, merge_cliques, CliqueDecomposition};
use opfbound::conic::{self, ConeBlock, ConeKind, ConicProgram, SolveOptions, SolveStatus};
use opfbound::relaxations::Layout;
use proptest::prelude::*;

fn check_decomposition(n: usize, edges: &[(usize, usize)], dec: &CliqueDecomposition) {
    let ext = dec.extended_edges();
    for &(a, b) in edges {
        assert!(ext.contains(&(a.min(b), a.max(b))), "edge {a}-{b} lost");
    }
    let adj = adjacency(n, &ext);
    assert_eq!(chordless_cycle(&adj), None);
    let brute = maximal_cliques(&adj);
    let ours: BTreeSet<Vec<usize>> = dec.cliques.iter().cloned().collect();
    assert_eq!(ours, brute);
    assert_eq!(dec.tree.len(), dec.m() - 1);
    // running intersection: cliques holding a bus form a subtree
    for bus in 0..n {
        let holders = dec.cliques_with(bus);
        let inner = dec
            .tree
            .iter()
            .filter(|e| holders.contains(&e.child) && holders.contains(&e.parent))
            .count();
        assert_eq!(inner + 1, holders.len(), "bus {bus}");
    }
}

#[test]
fn four_bus_cycle_splits_into_two_triangles_sharing_1_and_3() {
    let s = setup("case4_fig1");
    assert_eq!(s.dec.m(), 2);
    let ids: Vec<Vec<usize>> = s
        .dec
        .cliques
        .iter()
        .map(|c| c.iter().map(|&b| s.case.buses[b].id).collect())
        .collect();
    assert!(ids.iter().all(|c| c.len() == 3));
    let shared: Vec<usize> = ids[0].iter().copied().filter(|b| ids[1].contains(b)).collect();
    assert_eq!(shared, vec![1, 3]);
}

#[test]
fn fixtures_up_to_thirty_buses_are_chordal_after_extension() {
    for name in FIXTURES {
        let s = setup(name);
        if s.case.n_bus() > 30 {
            continue;
        }
        check_decomposition(s.case.n_bus(), &s.case.edges(), &s.dec);
    }
}

#[test]
fn linking_count_matches_enumeration() {
    for name in FIXTURES {
        let s = setup(name);
        let count = enumerated_links(&s.dec);
        let pairs: usize = s.dec.overlap_pairs.iter().map(|p| if p.a == p.b { 1 } else { 2 }).sum();
        assert_eq!(pairs, count, "{name}");
        let layout = Layout::chordal(&s.case, &s.dec, true).unwrap();
        assert_eq!(layout.links.len(), count, "{name}");
    }
}

#[test]
fn brute_force_finds_chordless_square() {
    let edges: BTreeSet<_> = [(0, 1), (1, 2), (2, 3), (0, 3)].into_iter().collect();
    assert!(chordless_cycle(&adjacency(4, &edges)).is_some());
    let s = setup("case9");
    let raw: BTreeSet<_> = s.case.edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    assert_eq!(chordless_cycle(&adjacency(9, &raw)).map(|c| c.len()), Some(6));
}

#[test]
fn merged_decomposition_stays_valid() {
    let s = setup("case30");
    let merged = merge_cliques(&s.dec, 4, 12);
    assert!(merged.m() <= s.dec.m());
    check_decomposition(30, &s.case.edges(), &merged);
}

fn random_graph(n: usize, extra: Vec<(usize, usize)>, parents: Vec<usize>) -> Vec<(usize, usize)> {
    // spanning tree keeps it connected
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (parents[v - 1] % v, v)).collect();
    edges.extend(extra.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b));
    edges
}

/// max t  s.t.  X(y) − t I ⪰ 0, with y ranging over the entries outside the
/// extended sparsity pattern.
fn best_completion_margin(x: &nalgebra::DMatrix<f64>, pattern: &BTreeSet<(usize, usize)>) -> (SolveStatus, f64) {
    let n = x.nrows();
    let mut block = ConeBlock::new(ConeKind::Psd, n);
    for r in 0..n {
        block.constant.push((r, r, x[(r, r)]));
        for c in r + 1..n {
            if pattern.contains(&(r, c)) {
                block.constant.push((r, c, x[(r, c)]));
            }
        }
    }
    let mut prog = ConicProgram::new(1);
    prog.objective[0] = 1.0;
    block.terms.push((0, (0..n).map(|r| (r, r, -1.0)).collect()));
    let mut v = 1;
    for r in 0..n {
        for c in r + 1..n {
            if !pattern.contains(&(r, c)) {
                let k = prog.add_var();
                debug_assert_eq!(k, v);
                block.terms.push((k, vec![(r, c, 1.0)]));
                v += 1;
            }
        }
    }
    prog.blocks.push(block);
    let sol = conic::solve(&prog, &SolveOptions::default()).unwrap();
    (sol.status, sol.objective)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graphs_extend_to_chordal(
        n in 2usize..9,
        parents in proptest::collection::vec(0usize..100, 8),
        extra in proptest::collection::vec((0usize..9, 0usize..9), 0..10),
    ) {
        let edges = random_graph(n, extra, parents);
        let dec = chordal_extend(n, &edges).unwrap();
        check_decomposition(n, &edges, &dec);
        prop_assert_eq!(dec.overlap_pairs.iter().map(|p| if p.a == p.b { 1 } else { 2 }).sum::<usize>(), enumerated_links(&dec));
    }

    /// Clique blocks all ⪰ εI exactly when a completion ⪰ εI exists, so the
    /// best completion margin equals the smallest clique eigenvalue.
    #[test]
    fn psd_completion_margin_equals_worst_clique(
        n in 3usize..7,
        parents in proptest::collection::vec(0usize..100, 6),
        extra in proptest::collection::vec((0usize..6, 0usize..6), 0..4),
        vals in proptest::collection::vec(-1.0f64..1.0, 36),
        target in -0.3f64..0.3,
    ) {
        let edges = random_graph(n, extra, parents);
        let dec = chordal_extend(n, &edges).unwrap();
        let pattern = dec.extended_edges();
        let mut x = nalgebra::DMatrix::from_fn(n, n, |r, c| vals[r.min(c) * 6 + r.max(c)]);
        let worst = |x: &nalgebra::DMatrix<f64>| {
            dec.cliques
                .iter()
                .map(|c| conic::min_eig(&x.select_rows(c).select_columns(c)))
                .fold(f64::INFINITY, f64::min)
        };
        let shift = target - worst(&x);
        for i in 0..n {
            x[(i, i)] += shift;
        }
        let eps = worst(&x);
        let (status, t) = best_completion_margin(&x, &pattern);
        prop_assert_eq!(status, SolveStatus::Optimal);
        prop_assert!((t - eps).abs() < 1e-6 * (1.0 + eps.abs()), "t {} eps {}", t, eps);
    }
}

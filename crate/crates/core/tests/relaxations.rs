//! Dual bounds, lifted duals and the exactness check.

mod common;

use common::{setup, Setup};
use nalgebra::DVector;
use opfbound::chordal::CliqueDecomposition;
use opfbound::conic::{self, ConeBlock, ConeKind, ConicProgram, SolveOptions, SolveStatus};
use opfbound::duals::sym3_matrix;
use opfbound::relaxations::{check_exactness, solve_dual_sdp, solve_socp};
use opfbound::{build_admittance, build_matrix_set, dense_dual_matrix, eval_traces, rho, solve_local, NetworkCase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_clique(n: usize) -> CliqueDecomposition {
    CliqueDecomposition {
        n,
        cliques: vec![(0..n).collect()],
        fill_edges: Vec::new(),
        tree: Vec::new(),
        overlap_pairs: Vec::new(),
    }
}

#[test]
fn chordal_sdp_equals_dense_sdp_on_nine_buses() {
    let s = setup("case9");
    let opts = SolveOptions::default();
    let sparse = solve_dual_sdp(&s.case, &s.mats, &s.dec, &opts).unwrap().bound.unwrap();
    let dense = solve_dual_sdp(&s.case, &s.mats, &single_clique(9), &opts).unwrap().bound.unwrap();
    assert!((sparse - dense).abs() <= 1e-6 * dense.abs(), "{sparse} vs {dense}");
}

#[test]
fn weak_duality_at_lifted_local_duals() {
    for name in ["case2", "case4_fig1", "case9", "case14", "case30"] {
        let s = setup(name);
        let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
        let r = rho(&s.case, &local.duals);
        // ρ is a valid lower bound only where Â ⪰ 0, but at a KKT point it
        // equals the objective (complementary slackness).
        assert!((r - local.objective).abs() <= 1e-5 * local.objective, "{name}: {r} vs {}", local.objective);
        let a = dense_dual_matrix(&s.case, &s.mats, &local.duals);
        let x = DVector::from_column_slice(&local.x.0);
        let ax = (&a * &x).amax();
        let dmax = local.duals.canonical_vector().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(ax <= 1e-6 * a.amax().max(dmax) * x.amax(), "{name}: |Âx| = {ax}");
        // rank-one H and R blocks sit on the cone boundary
        assert!(local.duals.cone_margin() >= -1e-12 * (1.0 + dmax), "{name}");
    }
}

#[test]
fn sdp_and_socp_bound_the_local_objective() {
    for name in ["case4_fig1", "case9", "case14"] {
        let s = setup(name);
        let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
        let sdp = solve_dual_sdp(&s.case, &s.mats, &s.dec, &Default::default()).unwrap();
        let socp = solve_socp(&s.case, &s.mats, &Default::default()).unwrap();
        let (b_sdp, b_socp) = (sdp.bound.unwrap(), socp.bound.unwrap());
        let slack = 1e-6 * local.objective;
        assert!(b_socp <= b_sdp + slack && b_sdp <= local.objective + slack, "{name}");
        // the dual point itself certifies the bound
        assert!((rho(&s.case, &sdp.duals) - b_sdp).abs() <= 1e-6 * b_sdp.abs());
        let dmax = sdp.duals.canonical_vector().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(sdp.duals.cone_margin() >= -1e-8 * dmax, "{name}: {} {dmax}", sdp.duals.cone_margin());
    }
}

#[test]
fn linear_cost_gives_unit_cost_block() {
    let s = setup("case2");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    assert_eq!(s.case.gens[0].c2, 0.0);
    // R = [[1, 0], [0, 0]]
    assert!(local.duals.r12.iter().chain(&local.duals.r22).all(|&v| v == 0.0));
}

#[test]
fn quadratic_cost_block_is_rank_one_at_dispatch() {
    let s = setup("case9");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    for (g, gen) in s.case.gens.iter().enumerate() {
        let k = gen.bus;
        assert!((local.duals.r12[k] - gen.c2.sqrt() * local.pg[g]).abs() < 1e-12);
        assert!((local.duals.r22[k] - local.duals.r12[k].powi(2)).abs() < 1e-9 * (1.0 + local.duals.r22[k]));
    }
}

/// 9-bus case with the most loaded line rated just below its flow.
fn tightened_nine_bus() -> (NetworkCase, usize) {
    let s = setup("case9");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    let rep = eval_traces(&s.mats, &local.x);
    let (l, flow) = (0..s.case.branches.len())
        .map(|l| (l, rep.p_from[l].hypot(rep.q_from[l]).max(rep.p_to[l].hypot(rep.q_to[l]))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut branches = s.case.branches.clone();
    branches[l].rate = 0.9 * flow;
    let case = NetworkCase::new(s.case.name.clone(), s.case.base_mva, s.case.buses.clone(), s.case.gens.clone(), branches)
        .unwrap();
    (case, l)
}

#[test]
fn binding_line_dual_has_rank_one_eigenstructure() {
    let (case, l) = tightened_nine_bus();
    let mats = build_matrix_set(&case, &build_admittance(&case).unwrap()).unwrap();
    let local = solve_local(&case, &mats, &Default::default()).unwrap();
    let rep = eval_traces(&mats, &local.x);
    let ends = [
        (local.duals.h_from[l], rep.p_from[l], rep.q_from[l]),
        (local.duals.h_to[l], rep.p_to[l], rep.q_to[l]),
    ];
    let mut binding = 0;
    for (h, p, q) in ends {
        let psi = h[0];
        if psi == 0.0 {
            continue;
        }
        binding += 1;
        let mut eig: Vec<f64> = sym3_matrix(&h).symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let top = psi * (1.0 + p * p + q * q);
        assert!((eig[2] - top).abs() <= 1e-10 * top);
        assert!(eig[0].abs() <= 1e-10 * top && eig[1].abs() <= 1e-10 * top, "{eig:?}");
        // the flow sits on the limit
        assert!((p * p + q * q - case.branches[l].rate.powi(2)).abs() < 1e-6);
    }
    assert!(binding >= 1);
    // every other line is slack and carries no flow dual
    for k in (0..case.branches.len()).filter(|&k| k != l) {
        assert_eq!(local.duals.h_from[k], [0.0; 6]);
        assert_eq!(local.duals.h_to[k], [0.0; 6]);
    }
}

#[test]
fn exactness_recovers_power_flow_solution() {
    for name in ["case2", "case9"] {
        let s: Setup = setup(name);
        let sdp = solve_dual_sdp(&s.case, &s.mats, &s.dec, &Default::default()).unwrap();
        let ex = check_exactness(&s.case, &s.mats, &sdp).unwrap();
        assert!(ex.rank1, "{name}");
        assert!(ex.mismatch.unwrap() <= 1e-6, "{name}: {:?}", ex.mismatch);
        let cost = ex.recovered_cost.unwrap();
        assert!((cost - sdp.bound.unwrap()).abs() <= 1e-6 * cost, "{name}");
    }
}

/// max t  s.t.  C − t I ⪰ 0 has optimum λ_min(C) and dual X = v vᵀ.
#[test]
fn random_three_by_three_sdp_hits_smallest_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let c = nalgebra::DMatrix::<f64>::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = (&c + c.transpose()) * 0.5;
        let mut prog = ConicProgram::new(1);
        prog.objective[0] = 1.0;
        let mut block = ConeBlock::new(ConeKind::Psd, 3);
        for r in 0..3 {
            for k in r..3 {
                block.constant.push((r, k, c[(r, k)]));
            }
        }
        block.terms.push((0, vec![(0, 0, -1.0), (1, 1, -1.0), (2, 2, -1.0)]));
        prog.blocks.push(block);
        let sol = conic::solve(&prog, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let eig = c.clone().symmetric_eigen();
        let (imin, lmin) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((sol.objective - lmin).abs() < 1e-7);
        let v = eig.eigenvectors.column(imin);
        let x = &sol.duals[0];
        assert!((x - v * v.transpose()).amax() < 1e-5);
    }
}

//! The local solver against an independent dispatch search on the 9-bus
//! case, and small hand-checkable cases.

mod common;

use common::{flows, load, setup};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use opfbound::{solve_local, BusType, NetworkCase};

/// Newton power flow with numerical Jacobian. `vset` holds the magnitude at
/// every generator bus, `pset` the injection at every non-slack generator.
/// Returns the voltage phasors, or None when it fails to converge.
fn power_flow(case: &NetworkCase, vset: &[f64], pset: &[f64]) -> Option<Vec<Complex64>> {
    let n = case.n_bus();
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut p_target = vec![0.0; n];
    let mut q_target = vec![0.0; n];
    let mut pv = vec![false; n];
    for (k, bus) in case.buses.iter().enumerate() {
        p_target[k] = -bus.pd;
        q_target[k] = -bus.qd;
    }
    for (g, gen) in case.gens.iter().enumerate() {
        vm[gen.bus] = vset[g];
        pv[gen.bus] = true;
    }
    let slack = case.ref_bus();
    let mut j = 0;
    for gen in &case.gens {
        if gen.bus != slack {
            p_target[gen.bus] += pset[j];
            j += 1;
        }
    }
    let ang_idx: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&k| !pv[k]).collect();
    let dim = ang_idx.len() + mag_idx.len();
    let mismatch = |vm: &[f64], va: &[f64]| {
        let v: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(vm[k], va[k])).collect();
        let s = flows(case, &v).s_bus;
        let mut f = DVector::zeros(dim);
        for (i, &k) in ang_idx.iter().enumerate() {
            f[i] = s[k].re - p_target[k];
        }
        for (i, &k) in mag_idx.iter().enumerate() {
            f[ang_idx.len() + i] = s[k].im - q_target[k];
        }
        f
    };
    for _ in 0..20 {
        let f = mismatch(&vm, &va);
        if f.amax() < 1e-11 {
            return Some((0..n).map(|k| Complex64::from_polar(vm[k], va[k])).collect());
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let (mut vm2, mut va2) = (vm.clone(), va.clone());
            if c < ang_idx.len() {
                va2[ang_idx[c]] += h;
            } else {
                vm2[mag_idx[c - ang_idx.len()]] += h;
            }
            jac.set_column(c, &((mismatch(&vm2, &va2) - &f) / h));
        }
        let dx = jac.lu().solve(&(-f))?;
        for (i, &k) in ang_idx.iter().enumerate() {
            va[k] += dx[i];
        }
        for (i, &k) in mag_idx.iter().enumerate() {
            vm[k] += dx[ang_idx.len() + i];
        }
    }
    None
}

/// Dispatch cost if the power-flow solution respects every limit.
fn feasible_cost(case: &NetworkCase, vset: &[f64], pset: &[f64]) -> Option<f64> {
    let v = power_flow(case, vset, pset)?;
    let fl = flows(case, &v);
    for (k, bus) in case.buses.iter().enumerate() {
        let vm = v[k].norm();
        if vm > bus.vmax + 1e-9 || vm < bus.vmin - 1e-9 {
            return None;
        }
        if case.gen_at(k).is_none() && (fl.s_bus[k] + Complex64::new(bus.pd, bus.qd)).norm() > 1e-8 {
            return None;
        }
    }
    for (l, br) in case.branches.iter().enumerate() {
        if br.has_flow_limit() && (fl.s_from[l].norm() > br.rate || fl.s_to[l].norm() > br.rate) {
            return None;
        }
    }
    let mut cost = 0.0;
    for gen in &case.gens {
        let bus = &case.buses[gen.bus];
        let s = fl.s_bus[gen.bus] + Complex64::new(bus.pd, bus.qd);
        if s.re < gen.pmin - 1e-9 || s.re > gen.pmax + 1e-9 || s.im < gen.qmin - 1e-9 || s.im > gen.qmax + 1e-9 {
            return None;
        }
        cost += gen.cost(s.re);
    }
    Some(cost)
}

#[test]
fn nine_bus_objective_matches_dispatch_search() {
    let case = load("case9");
    assert_eq!(case.buses[case.ref_bus()].kind, BusType::Slack);
    let vmax = case.buses[0].vmax;
    // Coarse grid over (Pg2, Pg3) and generator voltage setpoints.
    let levels = [vmax - 0.02, vmax - 0.01, vmax];
    let mut best = (f64::INFINITY, vec![0.0; 5]);
    for &v1 in &levels {
        for &v2 in &levels {
            for &v3 in &levels {
                let mut p2 = 0.10;
                while p2 <= 3.0 {
                    let mut p3 = 0.10;
                    while p3 <= 2.7 {
                        if let Some(c) = feasible_cost(&case, &[v1, v2, v3], &[p2, p3]) {
                            if c < best.0 {
                                best = (c, vec![v1, v2, v3, p2, p3]);
                            }
                        }
                        p3 += 0.1;
                    }
                    p2 += 0.1;
                }
            }
        }
    }
    // Pattern search around the best grid point, halving the step.
    let mut step = [0.01, 0.01, 0.01, 0.05, 0.05];
    while step[3] > 1e-5 {
        let mut improved = false;
        for d in 0..5 {
            for sgn in [-1.0, 1.0] {
                let mut z = best.1.clone();
                z[d] += sgn * step[d];
                if let Some(c) = feasible_cost(&case, &z[..3], &z[3..]) {
                    if c < best.0 - 1e-12 {
                        best = (c, z);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s /= 2.0);
        }
    }

    let s = setup("case9");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    // a local optimum can't beat a feasible point by more than solver tolerance
    assert!(local.objective <= best.0 * (1.0 + 1e-6), "local {} search {}", local.objective, best.0);
    assert!((best.0 - local.objective).abs() <= 1e-3 * local.objective, "local {} search {}", local.objective, best.0);
}

#[test]
fn two_bus_objective_is_linear_cost_of_the_load() {
    let s = setup("case2");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    // lossless line: Pg = Pd = 50 MW at 20 $/MWh plus 100 $/h
    assert!((local.objective - (20.0 * 50.0 + 100.0)).abs() < 1e-5);
    assert!((local.pg[0] - 0.5).abs() < 1e-7);
}

#[test]
fn flat_start_and_warm_start_agree() {
    let s = setup("case14");
    let cold = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    let warm = solve_local(
        &s.case,
        &s.mats,
        &opfbound::LocalOptions { start: opfbound::Start::Warm(cold.x.clone()), ..Default::default() },
    )
    .unwrap();
    assert!((cold.objective - warm.objective).abs() < 1e-6 * cold.objective);
}

#[test]
fn local_solution_round_trips_through_json() {
    let s = setup("case4_fig1");
    let local = solve_local(&s.case, &s.mats, &Default::default()).unwrap();
    let back = opfbound::LocalSolution::from_json(&local.to_json()).unwrap();
    assert_eq!(back.duals, local.duals);
    back.validate(&s.case).unwrap();
}

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use super::SdpSolveResult;
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;
use crate::opfmats::{eval_traces, OpfMatrixSet, VoltageVector};

/// Second/first eigenvalue ratio below which a block counts as rank one.
pub const RANK_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct ExactnessReport {
    pub rank1: bool,
    /// Largest λ₂/λ₁ over all clique blocks of the solver's W.
    pub worst_ratio: f64,
    /// Set when the solver's W had higher rank but the rank-one completion
    /// is itself feasible and attains the bound, so a rank-one optimum exists.
    pub completed: bool,
    pub recovered_x: Option<VoltageVector>,
    /// Constraint violation of the completion before polishing.
    pub raw_mismatch: f64,
    /// Largest constraint violation of the recovered voltage (per unit).
    pub mismatch: Option<f64>,
    /// Generation cost at the recovered voltage.
    pub recovered_cost: Option<f64>,
}

/// Largest violation of the OPF constraints at `x`: injections outside the
/// generator box, voltage magnitudes outside limits, flows above ratings
/// (magnitude, not squared) and angle differences outside limits.
pub fn constraint_violation(case: &NetworkCase, mats: &OpfMatrixSet, x: &VoltageVector) -> f64 {
    let rep = eval_traces(mats, x);
    let outside = |v: f64, lo: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
    let mut worst: f64 = 0.0;
    for k in 0..case.n_bus() {
        let bus = &case.buses[k];
        let (pmin, pmax) = case.p_limits(k);
        let (qmin, qmax) = case.q_limits(k);
        worst = worst
            .max(outside(rep.p[k] + bus.pd, pmin, pmax))
            .max(outside(rep.q[k] + bus.qd, qmin, qmax))
            .max(outside(rep.v2[k].sqrt(), bus.vmin, bus.vmax));
    }
    for (l, br) in case.branches.iter().enumerate() {
        if br.has_flow_limit() {
            let sf = rep.p_from[l].hypot(rep.q_from[l]);
            let st = rep.p_to[l].hypot(rep.q_to[l]);
            worst = worst.max(sf - br.rate).max(st - br.rate);
        }
        let ang = rep.sin_term[l].atan2(rep.cos_term[l]);
        worst = worst.max(outside(
            ang,
            br.angmin.unwrap_or(f64::NEG_INFINITY),
            br.angmax.unwrap_or(f64::INFINITY),
        ));
    }
    worst
}

/// Generation cost when every generator covers its bus's net injection.
pub fn dispatch_cost(case: &NetworkCase, mats: &OpfMatrixSet, x: &VoltageVector) -> f64 {
    let rep = eval_traces(mats, x);
    (0..case.n_bus())
        .filter_map(|k| case.gen_at(k).map(|g| g.cost(rep.p[k] + case.buses[k].pd)))
        .sum()
}

/// Bus-level Hermitian matrix `H = V Vᴴ` of a real clique block. Missing
/// `Vq` rows (the reference bus) count as zero.
fn hermitian_block(n: usize, globals: &[usize], w: &DMatrix<f64>) -> (Vec<usize>, DMatrix<Complex64>) {
    let buses: Vec<usize> = globals.iter().copied().filter(|&g| g < n).collect();
    let pos = |g: usize| globals.iter().position(|&x| x == g);
    let get = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(i), Some(j)) => w[(i, j)],
        _ => 0.0,
    };
    let b = buses.len();
    let h = DMatrix::from_fn(b, b, |i, j| {
        let (di, dj) = (pos(buses[i]), pos(buses[j]));
        let (qi, qj) = (pos(n + buses[i]), pos(n + buses[j]));
        Complex64::new(get(di, dj) + get(qi, qj), get(qi, dj) - get(di, qj))
    });
    (buses, h)
}

/// Builds a voltage vector from clique blocks `(globals, W_i)` by rank-one
/// completion along the clique graph: the block holding the reference bus
/// contributes its principal eigenvector, every further block extends the
/// known buses through `V_new = H_new,known V_known / |V_known|²`.
///
/// Returns the worst λ₂/λ₁ over the Hermitian blocks and the vector,
/// rotated so the reference bus has zero angle.
pub fn recover_voltage(
    n: usize,
    ref_bus: usize,
    blocks: &[(Vec<usize>, DMatrix<f64>)],
) -> Result<(f64, VoltageVector)> {
    let herm: Vec<(Vec<usize>, DMatrix<Complex64>)> =
        blocks.iter().map(|(g, w)| hermitian_block(n, g, w)).collect();
    let mut worst: f64 = 0.0;
    for (_, h) in &herm {
        let mut e: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        let ratio = match (e.first(), e.get(1)) {
            (Some(&l1), _) if l1 <= 0.0 => f64::INFINITY,
            (Some(&l1), Some(&l2)) => l2.max(0.0) / l1,
            _ => 0.0,
        };
        worst = worst.max(ratio);
    }

    let start = herm
        .iter()
        .position(|(b, _)| b.contains(&ref_bus))
        .ok_or_else(|| Error::Stitch("no block contains the reference bus".into()))?;
    let mut v: Vec<Option<Complex64>> = vec![None; n];
    {
        let (buses, h) = &herm[start];
        let eig = h.clone().symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let scale = eig.eigenvalues[top].max(0.0).sqrt();
        let col = eig.eigenvectors.column(top);
        for (i, &b) in buses.iter().enumerate() {
            v[b] = Some(col[i] * scale);
        }
    }
    let mut done = vec![false; herm.len()];
    done[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for j in 0..herm.len() {
            if done[j] || !herm[j].0.iter().any(|b| herm[i].0.contains(b)) {
                continue;
            }
            done[j] = true;
            queue.push_back(j);
            let (buses, h) = &herm[j];
            let known: Vec<usize> = (0..buses.len()).filter(|&a| v[buses[a]].is_some()).collect();
            let vk = DVector::from_iterator(known.len(), known.iter().map(|&a| v[buses[a]].unwrap()));
            let norm2 = vk.norm_squared();
            if norm2 <= 0.0 {
                return Err(Error::Stitch(format!("separator of block {j} carries zero voltage")));
            }
            for a in 0..buses.len() {
                if v[buses[a]].is_none() {
                    let s: Complex64 = known.iter().zip(vk.iter()).map(|(&c, &x)| h[(a, c)] * x).sum();
                    v[buses[a]] = Some(s / norm2);
                }
            }
        }
    }
    if done.iter().any(|d| !d) {
        return Err(Error::Stitch("clique blocks are not connected".into()));
    }
    let mut phasors: Vec<Complex64> = v.into_iter().map(|p| p.unwrap_or_default()).collect();
    let r = phasors[ref_bus];
    if r.norm() > 0.0 {
        let rot = r.conj() / r.norm();
        for p in &mut phasors {
            *p *= rot;
        }
    }
    Ok((worst, VoltageVector::from_phasors(&phasors)))
}

/// Removes the small power-balance residuals a finite-precision W leaves in
/// the recovered voltage: minimum-norm Gauss-Newton steps on the balance
/// equations of buses whose injection is fixed (no dispatchable unit),
/// keeping `Vq_ref = 0`. Returns the input unchanged if that does not help.
pub fn polish_voltage(case: &NetworkCase, mats: &OpfMatrixSet, x: &VoltageVector) -> VoltageVector {
    let n = case.n_bus();
    let free: Vec<usize> = (0..2 * n).filter(|&i| i != n + case.ref_bus()).collect();
    let mut rows: Vec<(&crate::opfmats::SymMat, f64)> = Vec::new();
    for k in 0..n {
        let bus = &case.buses[k];
        let (pmin, pmax) = case.p_limits(k);
        let (qmin, qmax) = case.q_limits(k);
        if pmin == pmax {
            rows.push((&mats.y[k], pmin - bus.pd));
        }
        if qmin == qmax {
            rows.push((&mats.ybar[k], qmin - bus.qd));
        }
    }
    if rows.is_empty() {
        return x.clone();
    }
    let residual = |x: &[f64]| -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|(a, t)| a.quad(x) - t))
    };
    let mut cur = x.0.clone();
    let mut r = residual(&cur);
    for _ in 0..5 {
        let mut jac = DMatrix::zeros(rows.len(), free.len());
        for (i, (a, _)) in rows.iter().enumerate() {
            let mut g = vec![0.0; 2 * n];
            a.mul_add(&cur, 2.0, &mut g);
            for (j, &f) in free.iter().enumerate() {
                jac[(i, j)] = g[f];
            }
        }
        let jjt = &jac * jac.transpose();
        let Some(sol) = jjt.cholesky().map(|c| c.solve(&r)) else {
            break;
        };
        let step = jac.transpose() * sol;
        let mut next = cur.clone();
        for (j, &f) in free.iter().enumerate() {
            next[f] -= step[j];
        }
        let rn = residual(&next);
        if !(rn.amax() < r.amax()) {
            break;
        }
        (cur, r) = (next, rn);
        if r.amax() < 1e-13 {
            break;
        }
    }
    VoltageVector(cur)
}

pub fn check_exactness(case: &NetworkCase, mats: &OpfMatrixSet, result: &SdpSolveResult) -> Result<ExactnessReport> {
    let (worst_ratio, raw) = recover_voltage(case.n_bus(), case.ref_bus(), &result.clique_w)?;
    let raw_mismatch = constraint_violation(case, mats, &raw);
    let x = polish_voltage(case, mats, &raw);
    let mismatch = constraint_violation(case, mats, &x);
    let cost = dispatch_cost(case, mats, &x);
    let raw_rank1 = worst_ratio <= RANK_TOL;
    let completed = !raw_rank1
        && mismatch <= 1e-6
        && result
            .bound
            .is_some_and(|b| (cost - b).abs() <= 1e-6 * b.abs().max(1.0));
    Ok(ExactnessReport {
        rank1: raw_rank1 || completed,
        worst_ratio,
        completed,
        recovered_x: Some(x),
        raw_mismatch,
        mismatch: Some(mismatch),
        recovered_cost: Some(cost),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: DMatrix<f64>) -> Vec<(Vec<usize>, DMatrix<f64>)> {
        let dim = w.nrows();
        vec![((0..dim).collect(), w)]
    }

    #[test]
    fn identity_is_not_rank_one() {
        let (ratio, _) = recover_voltage(2, 0, &single(DMatrix::identity(4, 4))).unwrap();
        assert!((ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outer_product_recovers_vector() {
        let v = DVector::from_vec(vec![1.02, 0.97, 0.0, -0.11]);
        let (ratio, x) = recover_voltage(2, 0, &single(&v * v.transpose())).unwrap();
        assert!(ratio < 1e-12);
        for i in 0..4 {
            assert!((x.0[i] - v[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn completes_across_overlapping_blocks() {
        let full = [1.0, 0.9, 1.1, 0.0, -0.2, 0.3];
        let blocks: Vec<_> = [vec![0, 1, 3, 4], vec![1, 2, 4, 5]]
            .iter()
            .map(|g| {
                let v = DVector::from_iterator(g.len(), g.iter().map(|&i| full[i]));
                (g.clone(), &v * v.transpose())
            })
            .collect();
        let (_, x) = recover_voltage(3, 0, &blocks).unwrap();
        for i in 0..6 {
            assert!((x.0[i] - full[i]).abs() < 1e-10);
        }
    }
}

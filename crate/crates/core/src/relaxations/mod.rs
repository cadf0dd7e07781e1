//! The clique-decomposed dual SDP relaxation, its SOCP relative and the
//! rank-one exactness check.

mod exact;
mod model;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chordal::CliqueDecomposition;
use crate::conic::{self, SolveOptions, SolveStatus};
use crate::duals::DualSet;
use crate::error::Result;
use crate::netcase::NetworkCase;
use crate::opfmats::OpfMatrixSet;

pub use exact::{check_exactness, constraint_violation, dispatch_cost, polish_voltage, recover_voltage, ExactnessReport, RANK_TOL};
pub use model::{build_dual_sdp, cost_scale, DualSdpModel, Key, Layout, LinkSpec, ModelSpec};

/// Outcome of one conic solve of a dual model.
#[derive(Debug, Clone, Serialize)]
pub struct SdpSolveResult {
    pub status: SolveStatus,
    /// ρ at the optimum; only present for an optimal solve.
    pub bound: Option<f64>,
    /// Objective at the last iterate, whatever the status.
    pub last_objective: f64,
    pub duals: DualSet,
    pub links: Vec<f64>,
    /// Primal clique blocks (voltage products) with their global 2n indices.
    #[serde(skip)]
    pub clique_w: Vec<(Vec<usize>, DMatrix<f64>)>,
    /// Smallest eigenvalue of each clique dual block at the returned point.
    pub clique_min_eigs: Vec<f64>,
    pub solve_seconds: f64,
    pub iterations: usize,
    /// Fixed cone memberships that were violated before solving.
    pub fixed_violations: Vec<String>,
}

pub fn solve_model(model: &DualSdpModel, opts: &SolveOptions) -> Result<SdpSolveResult> {
    let start = Instant::now();
    let n = model.layout.n;
    if !model.fixed_violations.is_empty() {
        let (duals, links) = model.duals_from(&vec![0.0; model.n_free()]);
        return Ok(SdpSolveResult {
            status: SolveStatus::Infeasible,
            bound: None,
            last_objective: f64::NAN,
            duals,
            links,
            clique_w: Vec::new(),
            clique_min_eigs: Vec::new(),
            solve_seconds: start.elapsed().as_secs_f64(),
            iterations: 0,
            fixed_violations: model.fixed_violations.clone(),
        });
    }
    let sol = conic::solve(&model.program, opts)?;
    let (duals, links) = model.duals_from(&sol.y);
    let m = model.layout.m();
    let clique_w = (0..m)
        .map(|i| {
            let w = if model.layout.hermitian {
                model::expand_hermitian(&sol.duals[i])
            } else {
                sol.duals[i].clone()
            };
            (model.layout.globals[i].clone(), w)
        })
        .collect();
    let clique_min_eigs = model
        .clique_blocks(&sol.y)
        .iter()
        .map(conic::min_eig)
        .collect();
    let last_objective = sol.objective * model.cost_scale;
    debug_assert!(n == duals.n_bus());
    Ok(SdpSolveResult {
        status: sol.status,
        bound: (sol.status == SolveStatus::Optimal).then_some(last_objective),
        last_objective,
        duals,
        links,
        clique_w,
        clique_min_eigs,
        solve_seconds: start.elapsed().as_secs_f64(),
        iterations: sol.iterations,
        fixed_violations: Vec::new(),
    })
}

/// Full sparse dual SDP over the cliques of `dec`.
pub fn solve_dual_sdp(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    dec: &CliqueDecomposition,
    opts: &SolveOptions,
) -> Result<SdpSolveResult> {
    let layout = Layout::chordal(case, dec, true)?;
    let model = build_dual_sdp(case, mats, layout, &ModelSpec::default())?;
    solve_model(&model, opts)
}

/// Branch-wise second-order-cone relaxation. Each connected bus pair gets
/// its own 4×4 block (a 2×2 Hermitian PSD constraint, equivalent to the
/// rotated cone `|W_lm|² ≤ W_ll W_mm`), and only the diagonal of W is shared.
pub fn solve_socp(case: &NetworkCase, mats: &OpfMatrixSet, opts: &SolveOptions) -> Result<SdpSolveResult> {
    let layout = Layout::edge_blocks(case)?;
    let model = build_dual_sdp(case, mats, layout, &ModelSpec::default())?;
    solve_model(&model, opts)
}

/// Re-evaluates the dual matrix on every clique of `dec` at the given duals
/// and linking values, on full blocks that include the reference `Vq` row.
///
/// The reference-angle dual ν (free sign, zero weight in ρ) is chosen per
/// reference clique as the smallest value that makes that block PSD, so the
/// returned blocks certify dual feasibility of the point.
pub fn certify_blocks(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    dec: &CliqueDecomposition,
    duals: &DualSet,
    links: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let reduced = Layout::chordal(case, dec, true)?;
    let full = Layout::chordal(case, dec, false)?;
    let spec = ModelSpec {
        free_bus: Some(vec![false; case.n_bus()]),
        free_branch: Some(vec![false; case.branches.len()]),
        fixed: Some(duals),
    };
    let model = build_dual_sdp(case, mats, full.clone(), &spec)?;
    // Dropping the reference row never empties a link, so both layouts
    // list the same links in the same order.
    debug_assert_eq!(reduced.links.len(), full.links.len());
    let full_links = links.to_vec();
    let y = model.y_from(duals, Some(&full_links));
    let mut blocks = model.clique_blocks(&y);
    let q_ref = case.n_bus() + case.ref_bus();
    for (i, b) in blocks.iter_mut().enumerate() {
        if let Some(p) = full.local(i, q_ref) {
            let nu = reference_shift(b, p);
            b[(p, p)] += nu;
        }
    }
    Ok(blocks)
}

/// Smallest ν such that adding ν at diagonal `p` makes `b` PSD, assuming
/// the block without row/column `p` already is.
fn reference_shift(b: &DMatrix<f64>, p: usize) -> f64 {
    let dim = b.nrows();
    let rest: Vec<usize> = (0..dim).filter(|&i| i != p).collect();
    let sub = b.select_rows(&rest).select_columns(&rest);
    let c = nalgebra::DVector::from_iterator(rest.len(), rest.iter().map(|&i| b[(i, p)]));
    let eig = sub.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let mut quad = 0.0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let proj = eig.eigenvectors.column(k).dot(&c);
        if lam > 1e-12 * scale {
            quad += proj * proj / lam;
        }
    }
    (quad - b[(p, p)]).max(0.0) + 1e-12 * (1.0 + b.amax())
}

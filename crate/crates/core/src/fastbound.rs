//! Fast lower bound from a local solution: evaluate the dual matrix at the
//! lifted local duals, free the duals around the cliques where it is least
//! PSD, and solve the remaining small dual SDP.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::chordal::{chordal_extend, CliqueDecomposition};
use crate::conic::{min_eig, SolveOptions, SolveStatus};
use crate::duals::{dense_dual_matrix, DualSet};
use crate::error::{Error, Result};
use crate::localopf::{solve_local, LocalOptions, LocalSolution};
use crate::netcase::NetworkCase;
use crate::opfmats::OpfMatrixSet;
use crate::relaxations::{build_dual_sdp, cost_scale, solve_dual_sdp, solve_model, Layout, ModelSpec, SdpSolveResult};

/// A clique counts as non-PSD when its smallest eigenvalue is below
/// `-PSD_TOL·(s + max|Â_i|)`, with `s` the model's cost scale (the typical
/// magnitude of a dual variable).
pub const PSD_TOL: f64 = 1e-8;
/// Gap tolerance of the simplified solves, relative to the whole bound.
/// Fixing duals at an exact local optimum leaves blocks with no strict
/// interior, where interior-point gaps stall around 1e-6.
pub const SIMPLIFIED_GAP_TOL: f64 = 1e-7;
/// PSD percentage above which the fast bound is expected to be close.
pub const FAVORABLE_PSD_PCT: f64 = 95.0;

/// Principal submatrices of the dual matrix Â over each clique (the
/// reference `Vq` row left out), evaluated at fixed duals with every linking
/// dual zero.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub blocks: Vec<DMatrix<f64>>,
    pub min_eigs: Vec<f64>,
    /// Largest absolute entry of each block.
    pub norms: Vec<f64>,
    pub cost_scale: f64,
}

impl DualEvaluation {
    pub fn is_psd(&self, i: usize) -> bool {
        self.min_eigs[i] >= -PSD_TOL * (self.cost_scale + self.norms[i])
    }

    pub fn psd_percentage(&self) -> f64 {
        let m = self.min_eigs.len();
        if m == 0 {
            return 100.0;
        }
        100.0 * (0..m).filter(|&i| self.is_psd(i)).count() as f64 / m as f64
    }
}

pub fn evaluate_dual_matrix(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    dec: &CliqueDecomposition,
    duals: &DualSet,
) -> Result<DualEvaluation> {
    let layout = Layout::chordal(case, dec, true)?;
    let a = dense_dual_matrix(case, mats, duals);
    let blocks: Vec<DMatrix<f64>> = layout
        .globals
        .iter()
        .map(|g| a.select_rows(g).select_columns(g))
        .collect();
    let (min_eigs, norms) = blocks.par_iter().map(|b| (min_eig(b), b.amax())).unzip();
    Ok(DualEvaluation { blocks, min_eigs, norms, cost_scale: cost_scale(case) })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblematicSelection {
    pub sigma_requested: f64,
    /// σ after raising it to the floor.
    pub sigma: f64,
    /// Fraction of cliques that are not PSD.
    pub sigma_floor: f64,
    pub raised_to_floor: bool,
    /// All cliques, ascending by smallest eigenvalue, ties by index.
    pub order: Vec<usize>,
    /// The first `ceil(σ·m)` (at least one) entries of `order`, ascending.
    pub cliques: Vec<usize>,
    pub buses: Vec<usize>,
    /// Branches with at least one endpoint in `buses`.
    pub branches: Vec<usize>,
}

/// `ceil(sigma·m)`, tolerant of the rounding in `sigma·m`.
fn ceil_count(sigma: f64, m: usize) -> usize {
    let x = sigma * m as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (1.0 + x) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn select_problematic(
    case: &NetworkCase,
    dec: &CliqueDecomposition,
    eval: &DualEvaluation,
    sigma: f64,
) -> ProblematicSelection {
    let m = eval.min_eigs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eval.min_eigs[a].total_cmp(&eval.min_eigs[b]).then(a.cmp(&b)));
    let non_psd = (0..m).filter(|&i| !eval.is_psd(i)).count();
    let sigma_floor = if m == 0 { 0.0 } else { non_psd as f64 / m as f64 };
    let sigma_req = sigma.clamp(0.0, 1.0);
    let eff = sigma_req.max(sigma_floor);
    let count = ceil_count(eff, m).max(non_psd).max(1).min(m);
    let mut cliques = order[..count].to_vec();
    cliques.sort_unstable();
    let mut in_np = vec![false; case.n_bus()];
    for &i in &cliques {
        for &b in &dec.cliques[i] {
            in_np[b] = true;
        }
    }
    let buses = (0..case.n_bus()).filter(|&b| in_np[b]).collect();
    let branches = case
        .branches
        .iter()
        .enumerate()
        .filter(|(_, br)| in_np[br.from] || in_np[br.to])
        .map(|(l, _)| l)
        .collect();
    ProblematicSelection {
        sigma_requested: sigma,
        sigma: eff,
        sigma_floor,
        raised_to_floor: sigma_req < sigma_floor,
        order,
        cliques,
        buses,
        branches,
    }
}

/// Solves the dual SDP with the duals of buses outside `sel.buses` and
/// branches outside `sel.branches` fixed at `duals`; linking duals stay free.
pub fn solve_simplified(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    dec: &CliqueDecomposition,
    sel: &ProblematicSelection,
    duals: &DualSet,
    opts: &SolveOptions,
) -> Result<SdpSolveResult> {
    let mut free_bus = vec![false; case.n_bus()];
    for &b in &sel.buses {
        free_bus[b] = true;
    }
    let mut free_branch = vec![false; case.branches.len()];
    for &l in &sel.branches {
        free_branch[l] = true;
    }
    let spec = ModelSpec { free_bus: Some(free_bus), free_branch: Some(free_branch), fixed: Some(duals) };
    let layout = Layout::chordal(case, dec, true)?;
    let model = build_dual_sdp(case, mats, layout, &spec)?;
    solve_model(&model, opts)
}

/// Relative deviation of local duals from reference (SDP) duals, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct Correspondence {
    pub percent: f64,
    pub compared: usize,
    /// Components skipped because the reference value is near zero.
    pub skipped: usize,
}

/// Reference components with magnitude below this are skipped.
pub const CORRESPONDENCE_SKIP: f64 = 1e-9;

/// Interior-point duals of inactive constraints are of the order of the
/// solver tolerance rather than zero; below this fraction of the largest
/// entry a reference component is treated as zero.
pub const REFERENCE_ZERO: f64 = 1e-6;

/// Zeroes the entries of an interior-point dual vector that are
/// numerically zero relative to its largest entry.
pub fn clean_reference(v: &[f64]) -> Vec<f64> {
    let big = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    v.iter().map(|&x| if x.abs() < REFERENCE_ZERO * big { 0.0 } else { x }).collect()
}

pub fn dual_correspondence_ratio(local: &[f64], reference: &[f64]) -> Result<Correspondence> {
    if local.len() != reference.len() {
        return Err(Error::Validation(format!(
            "dual vectors differ in length ({} vs {})",
            local.len(),
            reference.len()
        )));
    }
    if local.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut sum = 0.0;
    let mut compared = 0;
    for (&a, &b) in local.iter().zip(reference) {
        if b.abs() < CORRESPONDENCE_SKIP {
            continue;
        }
        let r = (a - b) / b;
        sum += r * r;
        compared += 1;
    }
    if compared == 0 {
        return Err(Error::EmptyVector);
    }
    Ok(Correspondence { percent: 100.0 * sum.sqrt(), compared, skipped: local.len() - compared })
}

#[derive(Debug, Clone)]
pub struct FastboundOptions {
    /// Fraction in [0, 1].
    pub sigma: f64,
    pub escalation_step: f64,
    pub max_sigma: f64,
    /// Also solve the full SDP and report the dual correspondence.
    pub compare_sdp: bool,
    pub local: LocalOptions,
    pub solve: SolveOptions,
}

impl Default for FastboundOptions {
    fn default() -> Self {
        FastboundOptions {
            sigma: 0.2,
            escalation_step: 0.2,
            max_sigma: 1.0,
            compare_sdp: false,
            local: LocalOptions::default(),
            solve: SolveOptions { gap_tol: SIMPLIFIED_GAP_TOL, ..SolveOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub local: f64,
    pub decompose: f64,
    pub evaluate: f64,
    pub solve: f64,
    /// Full SDP solve, when requested.
    pub compare: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub case: String,
    pub status: SolveStatus,
    /// $/h; only present for an optimal solve.
    pub bound: Option<f64>,
    pub local_objective: f64,
    pub optimality_gap_percent: Option<f64>,
    pub sigma_requested: f64,
    pub sigma_used: f64,
    pub sigma_floor: f64,
    pub raised_to_floor: bool,
    pub escalations: usize,
    pub n_cliques: usize,
    pub problematic_cliques: Vec<usize>,
    pub free_buses: usize,
    pub free_branches: usize,
    pub psd_percentage: f64,
    pub advice: String,
    pub sdp_bound: Option<f64>,
    pub dual_correspondence: Option<Correspondence>,
    pub iterations: usize,
    pub timings: Timings,
    /// Duals and linking values of the simplified solve, for certification.
    #[serde(skip)]
    pub final_duals: DualSet,
    #[serde(skip)]
    pub final_links: Vec<f64>,
}

pub fn gap_percent(local: f64, bound: f64) -> f64 {
    (local - bound) / local * 100.0
}

/// Full pipeline: local solve, lift, evaluate, select, simplified solve,
/// escalating σ while the simplified problem is infeasible.
pub fn run_algorithm1(case: &NetworkCase, mats: &OpfMatrixSet, opts: &FastboundOptions) -> Result<BoundReport> {
    let t = Instant::now();
    let local = solve_local(case, mats, &opts.local)?;
    let local_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let dec = chordal_extend(case.n_bus(), &case.edges())?;
    let decompose = t.elapsed().as_secs_f64();
    let mut rep = run_with_local(case, mats, &dec, &local, opts)?;
    rep.timings.local = local_s;
    rep.timings.decompose = decompose;
    Ok(rep)
}

/// Algorithm body for a given decomposition and local solution.
pub fn run_with_local(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    dec: &CliqueDecomposition,
    local: &LocalSolution,
    opts: &FastboundOptions,
) -> Result<BoundReport> {
    local.validate(case)?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let eval = evaluate_dual_matrix(case, mats, dec, &local.duals)?;
    timings.evaluate = t.elapsed().as_secs_f64();
    let psd_percentage = eval.psd_percentage();

    let t = Instant::now();
    let max_sigma = opts.max_sigma.clamp(0.0, 1.0);
    let step = if opts.escalation_step > 0.0 { opts.escalation_step } else { 0.2 };
    let mut sigma = opts.sigma.clamp(0.0, max_sigma);
    let mut escalations = 0;
    let (sel, res) = loop {
        let sel = select_problematic(case, dec, &eval, sigma);
        let res = solve_simplified(case, mats, dec, &sel, &local.duals, &opts.solve)?;
        if res.status != SolveStatus::Infeasible {
            break (sel, res);
        }
        if sel.sigma >= max_sigma || sel.cliques.len() == dec.m() {
            return Err(Error::ExhaustedEscalation);
        }
        sigma = (sel.sigma + step).min(max_sigma);
        escalations += 1;
    };
    timings.solve = t.elapsed().as_secs_f64();

    let (sdp_bound, dual_correspondence) = if opts.compare_sdp {
        let t = Instant::now();
        let full = solve_dual_sdp(case, mats, dec, &opts.solve)?;
        timings.compare = t.elapsed().as_secs_f64();
        let corr = match full.bound {
            Some(_) => Some(dual_correspondence_ratio(
                &local.duals.canonical_vector(),
                &clean_reference(&full.duals.canonical_vector()),
            )?),
            None => None,
        };
        (full.bound, corr)
    } else {
        (None, None)
    };

    let advice = if psd_percentage > FAVORABLE_PSD_PCT {
        "expected favorable".to_string()
    } else {
        "consider full relaxation".to_string()
    };
    Ok(BoundReport {
        case: case.name.clone(),
        status: res.status,
        bound: res.bound,
        local_objective: local.objective,
        optimality_gap_percent: res.bound.map(|b| gap_percent(local.objective, b)),
        sigma_requested: opts.sigma,
        sigma_used: sel.sigma,
        sigma_floor: sel.sigma_floor,
        raised_to_floor: sel.raised_to_floor,
        escalations,
        n_cliques: dec.m(),
        problematic_cliques: sel.cliques,
        free_buses: sel.buses.len(),
        free_branches: sel.branches.len(),
        psd_percentage,
        advice,
        sdp_bound,
        dual_correspondence,
        iterations: res.iterations,
        timings,
        final_duals: res.duals,
        final_links: res.links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_count_examples() {
        assert_eq!(ceil_count(0.22, 10), 3);
        assert_eq!(ceil_count(0.2, 10), 2);
        assert_eq!(ceil_count(0.3, 10), 3);
        assert_eq!(ceil_count(0.0, 10), 0);
        assert_eq!(ceil_count(1.0, 7), 7);
    }

    #[test]
    fn correspondence_examples() {
        let x = vec![1.0, -2.0, 0.5, 3.0];
        assert_eq!(dual_correspondence_ratio(&x, &x).unwrap().percent, 0.0);
        let y: Vec<f64> = x.iter().map(|v| v * 1.01).collect();
        let c = dual_correspondence_ratio(&y, &x).unwrap();
        assert!((c.percent - 100.0 * 2.0 * 0.01).abs() < 1e-12);
        let z = vec![1.0, 0.0];
        assert_eq!(dual_correspondence_ratio(&z, &z).unwrap().skipped, 1);
        assert!(matches!(dual_correspondence_ratio(&[], &[]), Err(Error::EmptyVector)));
    }
}

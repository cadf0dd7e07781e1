//! Local AC-OPF solve in polar coordinates and the lift of its multipliers
//! into the dual variable set of the relaxation.

pub mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duals::DualSet;
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;
use crate::opfmats::{eval_traces, OpfMatrixSet, SymMat, VoltageVector};
use crate::relaxations::cost_scale;

use ipm::{Eval, Nlp};

#[derive(Debug, Clone, Default)]
pub enum Start {
    #[default]
    Flat,
    Warm(VoltageVector),
}

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: Start,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions { tol: 1e-8, max_iter: 150, start: Start::Flat }
    }
}

/// A local optimum with its lifted duals. `pg`/`qg` follow `case.gens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSolution {
    pub x: VoltageVector,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// $/h
    pub objective: f64,
    pub duals: DualSet,
    #[serde(default)]
    pub kkt_residual: f64,
    #[serde(default)]
    pub iterations: usize,
}

impl LocalSolution {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    /// Checks lengths against a case before the solution is used.
    pub fn validate(&self, case: &NetworkCase) -> Result<()> {
        let (n, nl, ng) = (case.n_bus(), case.branches.len(), case.gens.len());
        let d = &self.duals;
        let ok = self.x.0.len() == 2 * n
            && self.pg.len() == ng
            && self.qg.len() == ng
            && d.n_bus() == n
            && d.n_branch() == nl
            && [&d.lam_hi, &d.gam_lo, &d.gam_hi, &d.mu_lo, &d.mu_hi, &d.r12, &d.r22]
                .iter()
                .all(|v| v.len() == n)
            && d.beta_hi.len() == nl
            && d.h_from.len() == nl
            && d.h_to.len() == nl;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "local solution does not match case {} ({n} buses, {nl} branches, {ng} generators)",
                case.name
            )))
        }
    }
}

/// Multipliers of the polar formulation in physical units, before lifting.
/// Power-balance multipliers are free; every bound multiplier should be ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMultipliers {
    pub lam_p: Vec<f64>,
    pub lam_q: Vec<f64>,
    /// On `V ≤ Vmax` / `Vmin ≤ V` (magnitude, not squared).
    pub v_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    /// On the squared flow limits at each branch end.
    pub psi_from: Vec<f64>,
    pub psi_to: Vec<f64>,
    /// On `θf − θt ≤ angmax` / `angmin ≤ θf − θt`.
    pub ang_hi: Vec<f64>,
    pub ang_lo: Vec<f64>,
}

/// Relative slack above which a constraint counts as inactive.
pub const ACTIVE_TOL: f64 = 1e-6;
/// Raw bound multipliers below `-SIGN_TOL·(1 + max)` are a convention error.
const SIGN_TOL: f64 = 1e-8;

fn inactive(slack: f64, scale: f64) -> bool {
    slack > ACTIVE_TOL * (1.0 + scale.abs())
}

/// Maps polar multipliers onto the relaxation's dual set at the primal point
/// `x`, `pg` (per generator).
pub fn lift_duals(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    raw: &RawMultipliers,
    x: &VoltageVector,
    pg: &[f64],
) -> Result<DualSet> {
    let (n, nl) = (case.n_bus(), case.branches.len());
    let bounds = [&raw.v_hi, &raw.v_lo, &raw.psi_from, &raw.psi_to, &raw.ang_hi, &raw.ang_lo];
    let big = bounds.iter().flat_map(|v| v.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(bad) = bounds.iter().flat_map(|v| v.iter()).find(|&&m| m < -SIGN_TOL * (1.0 + big)) {
        return Err(Error::ConventionMismatch(format!("bound multiplier {bad:e} is negative")));
    }
    let rep = eval_traces(mats, x);
    let ph = x.phasors();
    let mut d = DualSet::zeros(n, nl);
    for k in 0..n {
        let bus = &case.buses[k];
        let p = rep.p[k] + bus.pd;
        let q = rep.q[k] + bus.qd;
        let vm = rep.v2[k].sqrt();
        let (pmin, pmax) = case.p_limits(k);
        let (qmin, qmax) = case.q_limits(k);
        let pk = case.gen_index_at(k).map_or(0.0, |g| pg[g]);
        let marginal = case.gen_at(k).map_or(0.0, |g| g.marginal_cost(pk));
        let dp = raw.lam_p[k] - marginal;
        d.lam_hi[k] = if inactive(pmax - p, pmax) { 0.0 } else { dp.max(0.0) };
        d.lam_lo[k] = if inactive(p - pmin, pmin) { 0.0 } else { (-dp).max(0.0) };
        let dq = raw.lam_q[k];
        d.gam_hi[k] = if inactive(qmax - q, qmax) { 0.0 } else { dq.max(0.0) };
        d.gam_lo[k] = if inactive(q - qmin, qmin) { 0.0 } else { (-dq).max(0.0) };
        d.mu_hi[k] = if inactive(bus.vmax - vm, bus.vmax) { 0.0 } else { raw.v_hi[k].max(0.0) / (2.0 * vm) };
        d.mu_lo[k] = if inactive(vm - bus.vmin, bus.vmin) { 0.0 } else { raw.v_lo[k].max(0.0) / (2.0 * vm) };
        let (c2, _, _) = case.cost_at(k);
        if c2 > 0.0 {
            d.r12[k] = c2.sqrt() * pk;
            d.r22[k] = c2 * pk * pk;
        }
    }
    for (l, br) in case.branches.iter().enumerate() {
        if br.has_flow_limit() {
            let s2 = br.rate * br.rate;
            let ends = [
                (raw.psi_from[l], rep.p_from[l], rep.q_from[l], &mut d.h_from[l]),
                (raw.psi_to[l], rep.p_to[l], rep.q_to[l], &mut d.h_to[l]),
            ];
            for (psi, p, q, h) in ends {
                if inactive(s2 - p * p - q * q, s2) || psi <= 0.0 {
                    continue;
                }
                *h = [psi, psi * p, psi * q, psi * p * p, psi * p * q, psi * q * q];
            }
        }
        let (vf, vt) = (ph[br.from], ph[br.to]);
        let vv = vf.norm() * vt.norm();
        let ang = (vf * vt.conj()).arg();
        if let Some(tmax) = br.angmax {
            if !inactive(tmax - ang, tmax) && raw.ang_hi[l] > 0.0 {
                d.beta_hi[l] = raw.ang_hi[l] * tmax.cos() / vv;
            }
        }
        if let Some(tmin) = br.angmin {
            if !inactive(ang - tmin, tmin) && raw.ang_lo[l] > 0.0 {
                d.beta_lo[l] = raw.ang_lo[l] * tmin.cos() / vv;
            }
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy)]
enum Ineq {
    VHi(usize),
    VLo(usize),
    PgHi(usize),
    PgLo(usize),
    QgHi(usize),
    QgLo(usize),
    FlowFrom(usize),
    FlowTo(usize),
    AngHi(usize),
    AngLo(usize),
}

#[derive(Debug, Clone, Copy)]
enum Fixed {
    V(usize, f64),
    Pg(usize, f64),
    Qg(usize, f64),
}

/// Polar OPF: variables `[θ (n), V (n), Pg (ng), Qg (ng)]`, objective in
/// units of `scale`.
struct PolarOpf<'a> {
    case: &'a NetworkCase,
    mats: &'a OpfMatrixSet,
    scale: f64,
    fixed: Vec<Fixed>,
    ineqs: Vec<Ineq>,
}

/// Rectangular point with the per-bus cos/sin of the polar point.
struct Rect {
    x: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl<'a> PolarOpf<'a> {
    fn new(case: &'a NetworkCase, mats: &'a OpfMatrixSet) -> Self {
        let n = case.n_bus();
        let mut fixed = Vec::new();
        let mut ineqs = Vec::new();
        for k in 0..n {
            let b = &case.buses[k];
            if b.vmin == b.vmax {
                fixed.push(Fixed::V(k, b.vmax));
            } else {
                ineqs.push(Ineq::VHi(k));
                ineqs.push(Ineq::VLo(k));
            }
        }
        for (g, gen) in case.gens.iter().enumerate() {
            if gen.pmin == gen.pmax {
                fixed.push(Fixed::Pg(g, gen.pmax));
            } else {
                if gen.pmax.is_finite() {
                    ineqs.push(Ineq::PgHi(g));
                }
                if gen.pmin.is_finite() {
                    ineqs.push(Ineq::PgLo(g));
                }
            }
            if gen.qmin == gen.qmax {
                fixed.push(Fixed::Qg(g, gen.qmax));
            } else {
                if gen.qmax.is_finite() {
                    ineqs.push(Ineq::QgHi(g));
                }
                if gen.qmin.is_finite() {
                    ineqs.push(Ineq::QgLo(g));
                }
            }
        }
        for (l, br) in case.branches.iter().enumerate() {
            if br.has_flow_limit() {
                ineqs.push(Ineq::FlowFrom(l));
                ineqs.push(Ineq::FlowTo(l));
            }
            if br.angmax.is_some() {
                ineqs.push(Ineq::AngHi(l));
            }
            if br.angmin.is_some() {
                ineqs.push(Ineq::AngLo(l));
            }
        }
        PolarOpf { case, mats, scale: cost_scale(case), fixed, ineqs }
    }

    fn n(&self) -> usize {
        self.case.n_bus()
    }

    fn ng(&self) -> usize {
        self.case.gens.len()
    }

    fn pg_col(&self, g: usize) -> usize {
        2 * self.n() + g
    }

    fn qg_col(&self, g: usize) -> usize {
        2 * self.n() + self.ng() + g
    }

    fn n_eq(&self) -> usize {
        2 * self.n() + 1 + self.fixed.len()
    }

    fn rect(&self, u: &DVector<f64>) -> Rect {
        let n = self.n();
        let mut x = vec![0.0; 2 * n];
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for k in 0..n {
            let (s, c) = u[k].sin_cos();
            cos[k] = c;
            sin[k] = s;
            x[k] = u[n + k] * c;
            x[n + k] = u[n + k] * s;
        }
        Rect { x, cos, sin }
    }

    /// Rectangular gradient of `xᵀAx`.
    fn rect_grad(&self, a: &SymMat, r: &Rect) -> Vec<f64> {
        let mut g = vec![0.0; 2 * self.n()];
        a.mul_add(&r.x, 2.0, &mut g);
        g
    }

    /// Chain rule to (θ, V) from a rectangular gradient, written into the
    /// first 2n entries of `row`.
    fn to_polar(&self, gx: &[f64], r: &Rect, mut row: impl FnMut(usize, f64)) {
        let n = self.n();
        for k in 0..n {
            let (gd, gq) = (gx[k], gx[n + k]);
            if gd == 0.0 && gq == 0.0 {
                continue;
            }
            row(k, -r.x[n + k] * gd + r.x[k] * gq);
            row(n + k, r.cos[k] * gd + r.sin[k] * gq);
        }
    }

    fn polar_grad(&self, a: &SymMat, r: &Rect) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.n());
        self.to_polar(&self.rect_grad(a, r), r, |i, g| v[i] += g);
        v
    }

    fn flow_mats(&self, l: usize, from: bool) -> (&SymMat, &SymMat) {
        let b = &self.mats.branches[l];
        if from {
            (&b.p_from, &b.q_from)
        } else {
            (&b.p_to, &b.q_to)
        }
    }
}

impl Nlp for PolarOpf<'_> {
    fn n_vars(&self) -> usize {
        2 * self.n() + 2 * self.ng()
    }

    fn eval(&self, u: &DVector<f64>) -> Eval {
        let (n, nx) = (self.n(), self.n_vars());
        let case = self.case;
        let r = self.rect(u);
        let mut f = 0.0;
        let mut df = DVector::zeros(nx);
        for (g, gen) in case.gens.iter().enumerate() {
            let p = u[self.pg_col(g)];
            f += gen.cost(p) / self.scale;
            df[self.pg_col(g)] = gen.marginal_cost(p) / self.scale;
        }

        let neq = self.n_eq();
        let mut g = DVector::zeros(neq);
        let mut dg = DMatrix::zeros(neq, nx);
        for k in 0..n {
            let bus = &case.buses[k];
            for (row, a, load) in [(k, &self.mats.y[k], bus.pd), (n + k, &self.mats.ybar[k], bus.qd)] {
                g[row] = a.quad(&r.x) + load;
                self.to_polar(&self.rect_grad(a, &r), &r, |i, v| dg[(row, i)] += v);
            }
            if let Some(gi) = case.gen_index_at(k) {
                g[k] -= u[self.pg_col(gi)];
                g[n + k] -= u[self.qg_col(gi)];
                dg[(k, self.pg_col(gi))] = -1.0;
                dg[(n + k, self.qg_col(gi))] = -1.0;
            }
        }
        let rb = case.ref_bus();
        g[2 * n] = u[rb];
        dg[(2 * n, rb)] = 1.0;
        for (i, fx) in self.fixed.iter().enumerate() {
            let row = 2 * n + 1 + i;
            let (col, val) = match *fx {
                Fixed::V(k, v) => (n + k, v),
                Fixed::Pg(gi, v) => (self.pg_col(gi), v),
                Fixed::Qg(gi, v) => (self.qg_col(gi), v),
            };
            g[row] = u[col] - val;
            dg[(row, col)] = 1.0;
        }

        let niq = self.ineqs.len();
        let mut h = DVector::zeros(niq);
        let mut dh = DMatrix::zeros(niq, nx);
        for (i, iq) in self.ineqs.iter().enumerate() {
            match *iq {
                Ineq::VHi(k) => {
                    h[i] = u[n + k] - case.buses[k].vmax;
                    dh[(i, n + k)] = 1.0;
                }
                Ineq::VLo(k) => {
                    h[i] = case.buses[k].vmin - u[n + k];
                    dh[(i, n + k)] = -1.0;
                }
                Ineq::PgHi(gi) => {
                    h[i] = u[self.pg_col(gi)] - case.gens[gi].pmax;
                    dh[(i, self.pg_col(gi))] = 1.0;
                }
                Ineq::PgLo(gi) => {
                    h[i] = case.gens[gi].pmin - u[self.pg_col(gi)];
                    dh[(i, self.pg_col(gi))] = -1.0;
                }
                Ineq::QgHi(gi) => {
                    h[i] = u[self.qg_col(gi)] - case.gens[gi].qmax;
                    dh[(i, self.qg_col(gi))] = 1.0;
                }
                Ineq::QgLo(gi) => {
                    h[i] = case.gens[gi].qmin - u[self.qg_col(gi)];
                    dh[(i, self.qg_col(gi))] = -1.0;
                }
                Ineq::FlowFrom(l) | Ineq::FlowTo(l) => {
                    let (pm, qm) = self.flow_mats(l, matches!(iq, Ineq::FlowFrom(_)));
                    let (p, q) = (pm.quad(&r.x), qm.quad(&r.x));
                    let rate = case.branches[l].rate;
                    h[i] = p * p + q * q - rate * rate;
                    let gp = self.polar_grad(pm, &r);
                    let gq = self.polar_grad(qm, &r);
                    for c in 0..2 * n {
                        dh[(i, c)] = 2.0 * p * gp[c] + 2.0 * q * gq[c];
                    }
                }
                Ineq::AngHi(l) => {
                    let br = &case.branches[l];
                    h[i] = u[br.from] - u[br.to] - br.angmax.unwrap();
                    dh[(i, br.from)] += 1.0;
                    dh[(i, br.to)] -= 1.0;
                }
                Ineq::AngLo(l) => {
                    let br = &case.branches[l];
                    h[i] = br.angmin.unwrap() - (u[br.from] - u[br.to]);
                    dh[(i, br.from)] -= 1.0;
                    dh[(i, br.to)] += 1.0;
                }
            }
        }
        Eval { f, df, g, dg, h, dh }
    }

    fn hessian(&self, u: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let (n, nx) = (self.n(), self.n_vars());
        let r = self.rect(u);
        let mut out = DMatrix::zeros(nx, nx);
        for (g, gen) in self.case.gens.iter().enumerate() {
            let c = self.pg_col(g);
            out[(c, c)] = 2.0 * gen.c2 / self.scale;
        }

        // Weighted sum of the quadratic forms, as a dense rectangular Hessian.
        let mut hx = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut add = |a: &SymMat, w: f64| {
            if w == 0.0 {
                return;
            }
            for &(i, j, v) in &a.entries {
                hx[(i, j)] += 2.0 * w * v;
                if i != j {
                    hx[(j, i)] += 2.0 * w * v;
                }
            }
        };
        for k in 0..n {
            add(&self.mats.y[k], lam[k]);
            add(&self.mats.ybar[k], lam[n + k]);
        }
        let mut outer: Vec<(f64, DVector<f64>)> = Vec::new();
        for (i, iq) in self.ineqs.iter().enumerate() {
            if let Ineq::FlowFrom(l) | Ineq::FlowTo(l) = *iq {
                let (pm, qm) = self.flow_mats(l, matches!(iq, Ineq::FlowFrom(_)));
                let (p, q) = (pm.quad(&r.x), qm.quad(&r.x));
                add(pm, 2.0 * mu[i] * p);
                add(qm, 2.0 * mu[i] * q);
                outer.push((2.0 * mu[i], self.polar_grad(pm, &r)));
                outer.push((2.0 * mu[i], self.polar_grad(qm, &r)));
            }
        }

        // Jᵀ Hx J, where J maps (θ_k, V_k) to (x_dk, x_qk).
        let jac = |k: usize| {
            [(-r.x[n + k], r.x[k]), (r.cos[k], r.sin[k])]
        };
        let mut t = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            let jk = jac(k);
            for (s, (jd, jq)) in jk.iter().enumerate() {
                let col = s * n + k;
                for row in 0..2 * n {
                    t[(row, col)] = hx[(row, k)] * jd + hx[(row, n + k)] * jq;
                }
            }
        }
        for k in 0..n {
            let jk = jac(k);
            for (s, (jd, jq)) in jk.iter().enumerate() {
                let row = s * n + k;
                for col in 0..2 * n {
                    out[(row, col)] += jd * t[(k, col)] + jq * t[(n + k, col)];
                }
            }
        }
        // Curvature of the polar map, weighted by the rectangular gradient.
        let gx = &hx * DVector::from_column_slice(&r.x);
        for k in 0..n {
            let (gd, gq) = (gx[k], gx[n + k]);
            out[(k, k)] += -gd * r.x[k] - gq * r.x[n + k];
            let tv = -gd * r.sin[k] + gq * r.cos[k];
            out[(k, n + k)] += tv;
            out[(n + k, k)] += tv;
        }
        for (w, v) in outer {
            if w != 0.0 {
                out.view_mut((0, 0), (2 * n, 2 * n)).ger(w, &v, &v, 1.0);
            }
        }
        out
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo.max(0.0),
        (false, true) => hi.min(0.0),
        (false, false) => 0.0,
    }
}

fn initial_point(case: &NetworkCase, mats: &OpfMatrixSet, start: &Start) -> Result<DVector<f64>> {
    let (n, ng) = (case.n_bus(), case.gens.len());
    let mut u = DVector::zeros(2 * n + 2 * ng);
    match start {
        Start::Flat => {
            for k in 0..n {
                let b = &case.buses[k];
                u[n + k] = if (b.vmin..=b.vmax).contains(&1.0) { 1.0 } else { 0.5 * (b.vmin + b.vmax) };
            }
            for (g, gen) in case.gens.iter().enumerate() {
                u[2 * n + g] = midpoint(gen.pmin, gen.pmax);
                u[2 * n + ng + g] = midpoint(gen.qmin, gen.qmax);
            }
        }
        Start::Warm(x0) => {
            if x0.0.len() != 2 * n || x0.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::InfeasibleStart("warm start has the wrong length or non-finite entries".into()));
            }
            let ph = x0.phasors();
            let a_ref = ph[case.ref_bus()].arg();
            for k in 0..n {
                u[k] = ph[k].arg() - a_ref;
                u[n + k] = ph[k].norm();
            }
            let rep = eval_traces(mats, x0);
            for (g, gen) in case.gens.iter().enumerate() {
                let b = &case.buses[gen.bus];
                u[2 * n + g] = (rep.p[gen.bus] + b.pd).clamp(gen.pmin, gen.pmax);
                u[2 * n + ng + g] = (rep.q[gen.bus] + b.qd).clamp(gen.qmin, gen.qmax);
            }
        }
    }
    if u.iter().any(|v| !v.is_finite()) || (0..n).any(|k| u[n + k] <= 0.0) {
        return Err(Error::InfeasibleStart("starting voltages must be positive and finite".into()));
    }
    Ok(u)
}

/// Solves the AC-OPF to a local optimum and lifts its multipliers.
pub fn solve_local(case: &NetworkCase, mats: &OpfMatrixSet, opts: &LocalOptions) -> Result<LocalSolution> {
    let (n, ng) = (case.n_bus(), case.gens.len());
    let nlp = PolarOpf::new(case, mats);
    let u0 = initial_point(case, mats, &opts.start)?;
    {
        let ev = nlp.eval(&u0);
        if !(ev.g.iter().chain(ev.h.iter()).all(|v| v.is_finite())) {
            return Err(Error::InfeasibleStart("constraints are not finite at the start".into()));
        }
    }
    let res = ipm::solve(&nlp, u0, opts.tol, opts.max_iter)
        .ok_or(Error::NoConvergence { iterations: 0, residual: f64::NAN })?;
    if !res.converged {
        return Err(Error::NoConvergence { iterations: res.iterations, residual: res.residual });
    }
    let u = &res.x;
    let vm: Vec<f64> = (0..n).map(|k| u[n + k]).collect();
    let va: Vec<f64> = (0..n).map(|k| u[k]).collect();
    let x = VoltageVector::from_polar(&vm, &va);
    let pg: Vec<f64> = (0..ng).map(|g| u[2 * n + g]).collect();
    let qg: Vec<f64> = (0..ng).map(|g| u[2 * n + ng + g]).collect();
    let objective = case.gens.iter().zip(&pg).map(|(g, &p)| g.cost(p)).sum();

    let s = nlp.scale;
    let nl = case.branches.len();
    let mut raw = RawMultipliers {
        lam_p: (0..n).map(|k| s * res.lam[k]).collect(),
        lam_q: (0..n).map(|k| s * res.lam[n + k]).collect(),
        v_hi: vec![0.0; n],
        v_lo: vec![0.0; n],
        psi_from: vec![0.0; nl],
        psi_to: vec![0.0; nl],
        ang_hi: vec![0.0; nl],
        ang_lo: vec![0.0; nl],
    };
    for (i, iq) in nlp.ineqs.iter().enumerate() {
        let m = s * res.mu[i];
        match *iq {
            Ineq::VHi(k) => raw.v_hi[k] = m,
            Ineq::VLo(k) => raw.v_lo[k] = m,
            Ineq::FlowFrom(l) => raw.psi_from[l] = m,
            Ineq::FlowTo(l) => raw.psi_to[l] = m,
            Ineq::AngHi(l) => raw.ang_hi[l] = m,
            Ineq::AngLo(l) => raw.ang_lo[l] = m,
            Ineq::PgHi(_) | Ineq::PgLo(_) | Ineq::QgHi(_) | Ineq::QgLo(_) => {}
        }
    }
    // A fixed voltage magnitude carries a free multiplier; split it by sign.
    for (i, fx) in nlp.fixed.iter().enumerate() {
        if let Fixed::V(k, _) = *fx {
            let m = s * res.lam[2 * n + 1 + i];
            raw.v_hi[k] = m.max(0.0);
            raw.v_lo[k] = (-m).max(0.0);
        }
    }
    let duals = lift_duals(case, mats, &raw, &x, &pg)?;
    Ok(LocalSolution { x, pg, qg, objective, duals, kkt_residual: res.residual, iterations: res.iterations })
}

//! The dual variable set of the SDP relaxation and the closed-form dual
//! objective ρ and dual matrix A.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::netcase::NetworkCase;
use crate::opfmats::{OpfMatrixSet, SymMat};

/// Packed upper triangle of a symmetric 3×3 matrix: (11, 12, 13, 22, 23, 33).
pub type Sym3 = [f64; 6];

pub fn sym3_matrix(h: &Sym3) -> Matrix3<f64> {
    Matrix3::new(h[0], h[1], h[2], h[1], h[3], h[4], h[2], h[4], h[5])
}

/// All dual variables of the relaxation in physical units ($/h per
/// per-unit quantity). Per-bus vectors have length n, per-branch vectors
/// length |branches|. `h_from`/`h_to` are the flow-limit blocks at each
/// branch end (zero when the branch has no limit). The cost block of bus k
/// is `[[1, r12], [r12, r22]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSet {
    pub lam_lo: Vec<f64>,
    pub lam_hi: Vec<f64>,
    pub gam_lo: Vec<f64>,
    pub gam_hi: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub beta_lo: Vec<f64>,
    pub beta_hi: Vec<f64>,
    pub h_from: Vec<Sym3>,
    pub h_to: Vec<Sym3>,
    pub r12: Vec<f64>,
    pub r22: Vec<f64>,
}

impl DualSet {
    pub fn zeros(n: usize, n_branch: usize) -> Self {
        DualSet {
            lam_lo: vec![0.0; n],
            lam_hi: vec![0.0; n],
            gam_lo: vec![0.0; n],
            gam_hi: vec![0.0; n],
            mu_lo: vec![0.0; n],
            mu_hi: vec![0.0; n],
            beta_lo: vec![0.0; n_branch],
            beta_hi: vec![0.0; n_branch],
            h_from: vec![[0.0; 6]; n_branch],
            h_to: vec![[0.0; 6]; n_branch],
            r12: vec![0.0; n],
            r22: vec![0.0; n],
        }
    }

    pub fn n_bus(&self) -> usize {
        self.lam_lo.len()
    }

    pub fn n_branch(&self) -> usize {
        self.beta_lo.len()
    }

    /// Shorthand λ_k of the dual matrix: λ̄ − λ̲ + c1 + 2√c2 R¹².
    pub fn lambda(&self, case: &NetworkCase, k: usize) -> f64 {
        let (c2, c1, _) = case.cost_at(k);
        self.lam_hi[k] - self.lam_lo[k] + c1 + 2.0 * c2.sqrt() * self.r12[k]
    }

    /// Canonical stacking: per-bus scalars (λ̲, λ̄, γ̲, γ̄, μ̲, μ̄) bus by bus,
    /// then per-branch (β̲, β̄), then H entries (from, to) branch by branch,
    /// then (R¹², R²²) bus by bus.
    pub fn canonical_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for k in 0..self.n_bus() {
            v.extend([
                self.lam_lo[k],
                self.lam_hi[k],
                self.gam_lo[k],
                self.gam_hi[k],
                self.mu_lo[k],
                self.mu_hi[k],
            ]);
        }
        for l in 0..self.n_branch() {
            v.extend([self.beta_lo[l], self.beta_hi[l]]);
        }
        for l in 0..self.n_branch() {
            v.extend(self.h_from[l]);
            v.extend(self.h_to[l]);
        }
        for k in 0..self.n_bus() {
            v.extend([self.r12[k], self.r22[k]]);
        }
        v
    }

    /// Most negative scalar dual and smallest eigenvalue over the H and R
    /// blocks (both ≥ 0 for a cone-feasible set).
    pub fn cone_margin(&self) -> f64 {
        let scalars = [
            &self.lam_lo,
            &self.lam_hi,
            &self.gam_lo,
            &self.gam_hi,
            &self.mu_lo,
            &self.mu_hi,
            &self.beta_lo,
            &self.beta_hi,
        ];
        let mut m = scalars
            .iter()
            .flat_map(|v| v.iter())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        for h in self.h_from.iter().chain(&self.h_to) {
            m = m.min(sym3_matrix(h).symmetric_eigenvalues().min());
        }
        for k in 0..self.n_bus() {
            let r = nalgebra::Matrix2::new(1.0, self.r12[k], self.r12[k], self.r22[k]);
            m = m.min(r.symmetric_eigenvalues().min());
        }
        m
    }
}

fn finite_or_zero(bound: f64, dual: f64) -> f64 {
    if bound.is_finite() {
        dual * bound
    } else {
        0.0
    }
}

/// Dual objective ρ at a dual point.
pub fn rho(case: &NetworkCase, d: &DualSet) -> f64 {
    let mut total = 0.0;
    for k in 0..case.n_bus() {
        let bus = &case.buses[k];
        let (pmin, pmax) = case.p_limits(k);
        let (qmin, qmax) = case.q_limits(k);
        let (_, _, c0) = case.cost_at(k);
        total += d.lambda(case, k) * bus.pd + finite_or_zero(pmin, d.lam_lo[k])
            - finite_or_zero(pmax, d.lam_hi[k]);
        total += (d.gam_hi[k] - d.gam_lo[k]) * bus.qd + finite_or_zero(qmin, d.gam_lo[k])
            - finite_or_zero(qmax, d.gam_hi[k]);
        total += d.mu_lo[k] * bus.vmin * bus.vmin - d.mu_hi[k] * bus.vmax * bus.vmax;
        total += c0 - d.r22[k];
    }
    for (l, br) in case.branches.iter().enumerate() {
        let s2 = br.rate * br.rate;
        for h in [&d.h_from[l], &d.h_to[l]] {
            total -= s2 * h[0] + h[3] + h[5];
        }
    }
    total
}

fn add_scaled(a: &mut DMatrix<f64>, m: &SymMat, s: f64) {
    if s == 0.0 {
        return;
    }
    for &(r, c, v) in &m.entries {
        a[(r, c)] += s * v;
        if r != c {
            a[(c, r)] += s * v;
        }
    }
}

/// Dense 2n×2n dual matrix A at a dual point (reference-angle dual zero).
pub fn dense_dual_matrix(case: &NetworkCase, mats: &OpfMatrixSet, d: &DualSet) -> DMatrix<f64> {
    let n = mats.n;
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        add_scaled(&mut a, &mats.y[k], d.lambda(case, k));
        add_scaled(&mut a, &mats.ybar[k], d.gam_hi[k] - d.gam_lo[k]);
        add_scaled(&mut a, &mats.m[k], d.mu_hi[k] - d.mu_lo[k]);
    }
    for (l, (br, bm)) in case.branches.iter().zip(&mats.branches).enumerate() {
        add_scaled(&mut a, &bm.p_from, 2.0 * d.h_from[l][1]);
        add_scaled(&mut a, &bm.q_from, 2.0 * d.h_from[l][2]);
        add_scaled(&mut a, &bm.p_to, 2.0 * d.h_to[l][1]);
        add_scaled(&mut a, &bm.q_to, 2.0 * d.h_to[l][2]);
        if let Some(tmax) = br.angmax {
            add_scaled(&mut a, &bm.mbar, d.beta_hi[l]);
            add_scaled(&mut a, &bm.m, -tmax.tan() * d.beta_hi[l]);
        }
        if let Some(tmin) = br.angmin {
            add_scaled(&mut a, &bm.mbar, -d.beta_lo[l]);
            add_scaled(&mut a, &bm.m, tmin.tan() * d.beta_lo[l]);
        }
    }
    a
}

//! Conic programs in linear-matrix-inequality form and an embedded
//! primal-dual interior-point solver.
//!
//! A [`ConicProgram`] maximizes `bᵀy + offset` over free variables `y`
//! subject to affine cone memberships `S_j(y) = C_j + Σ_i y_i A_ij ∈ K_j`,
//! where each `K_j` is a nonnegative orthant or a PSD cone. Its conic dual
//! has one matrix/vector variable per block and one equality row per `y_i`.
//!
//! The solver runs Mehrotra predictor-corrector steps on the homogeneous
//! self-dual embedding with Nesterov-Todd scaling. The Newton systems are
//! reduced to the Schur complement `M_ik = Σ_j ⟨A_ij, W⁻¹ A_kj W⁻¹⟩`,
//! which is factored with the sparse LDLᵀ of [`crate::sparse`].

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Symbolic;

/// Sparse symmetric coefficient: `(r, c, v)` with `r <= c` sets both
/// `[r][c]` and `[c][r]`. Entries of nonnegative blocks must be diagonal.
pub type Coef = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    Nonneg,
    Psd,
}

#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub dim: usize,
    pub constant: Coef,
    /// (variable, coefficient matrix), at most one entry per variable.
    pub terms: Vec<(usize, Coef)>,
}

impl ConeBlock {
    pub fn new(kind: ConeKind, dim: usize) -> Self {
        ConeBlock {
            kind,
            dim,
            constant: Vec::new(),
            terms: Vec::new(),
        }
    }

    /// Evaluates `C + Σ y_i A_i` densely (nonnegative blocks as a diagonal).
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut put = |coef: &Coef, s: f64| {
            for &(r, c, v) in coef {
                m[(r, c)] += s * v;
                if r != c {
                    m[(c, r)] += s * v;
                }
            }
        };
        put(&self.constant, 1.0);
        for (i, coef) in &self.terms {
            put(coef, y[*i]);
        }
        m
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub offset: f64,
    pub blocks: Vec<ConeBlock>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    Numerical,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Dual block variables (one per cone block, nonnegative blocks as diagonals).
    pub duals: Vec<DMatrix<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        ConicProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            offset: 0.0,
            blocks: Vec::new(),
        }
    }

    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.objective.push(0.0);
        self.n_vars - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.n_vars {
            return Err(Error::Model("objective length differs from variable count".into()));
        }
        for (j, blk) in self.blocks.iter().enumerate() {
            let check = |coef: &Coef| -> Result<()> {
                for &(r, c, _) in coef {
                    if r > c || c >= blk.dim || (blk.kind == ConeKind::Nonneg && r != c) {
                        return Err(Error::Model(format!("block {j}: bad coefficient position ({r},{c})")));
                    }
                }
                Ok(())
            };
            check(&blk.constant)?;
            let mut seen = std::collections::HashSet::new();
            for (i, coef) in &blk.terms {
                if *i >= self.n_vars || !seen.insert(*i) {
                    return Err(Error::Model(format!("block {j}: bad or repeated variable {i}")));
                }
                check(coef)?;
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue of each block at `y` (the cone-membership margin).
    pub fn block_min_eigs(&self, y: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let m = b.evaluate(y);
                match b.kind {
                    ConeKind::Nonneg => m.diagonal().min(),
                    ConeKind::Psd => min_eig(&m),
                }
            })
            .collect()
    }

    /// Standard-form dump in SDPA sparse format: minimize `cᵀy` subject to
    /// `Σ y_i F_i − F_0 ⪰ 0`, with `c = −b`, `F_i = A_i`, `F_0 = −C`.
    /// Nonnegative blocks are written as diagonal blocks (negative size).
    pub fn to_sdpa(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "* objective offset {:e}", self.offset);
        let _ = writeln!(s, "{}", self.n_vars);
        let _ = writeln!(s, "{}", self.blocks.len());
        let sizes: Vec<String> = self
            .blocks
            .iter()
            .map(|b| match b.kind {
                ConeKind::Psd => b.dim.to_string(),
                ConeKind::Nonneg => format!("-{}", b.dim),
            })
            .collect();
        let _ = writeln!(s, "{}", sizes.join(" "));
        let c: Vec<String> = self.objective.iter().map(|v| format!("{:e}", -v)).collect();
        let _ = writeln!(s, "{}", c.join(" "));
        for (j, b) in self.blocks.iter().enumerate() {
            for &(r, cc, v) in &b.constant {
                let _ = writeln!(s, "0 {} {} {} {:e}", j + 1, r + 1, cc + 1, -v);
            }
        }
        let mut by_var: Vec<Vec<(usize, &Coef)>> = vec![Vec::new(); self.n_vars];
        for (j, b) in self.blocks.iter().enumerate() {
            for (i, coef) in &b.terms {
                by_var[*i].push((j, coef));
            }
        }
        for (i, list) in by_var.iter().enumerate() {
            for &(j, coef) in list {
                for &(r, cc, v) in coef {
                    let _ = writeln!(s, "{} {} {} {} {:e}", i + 1, j + 1, r + 1, cc + 1, v);
                }
            }
        }
        s
    }
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

// ---------------------------------------------------------------------------
// Cone vectors

#[derive(Debug, Clone)]
enum Blk {
    Lp(DVector<f64>),
    Sd(DMatrix<f64>),
}

type ConeVec = Vec<Blk>;

fn cv_dot(a: &ConeVec, b: &ConeVec) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Blk::Lp(u), Blk::Lp(v)) => u.dot(v),
            (Blk::Sd(u), Blk::Sd(v)) => u.dot(v),
            _ => unreachable!(),
        })
        .sum()
}

fn cv_axpy(alpha: f64, x: &ConeVec, y: &mut ConeVec) {
    for (a, b) in x.iter().zip(y.iter_mut()) {
        match (a, b) {
            (Blk::Lp(u), Blk::Lp(v)) => v.axpy(alpha, u, 1.0),
            (Blk::Sd(u), Blk::Sd(v)) => {
                for (a, b) in v.iter_mut().zip(u.iter()) {
                    *a += alpha * b;
                }
            }
            _ => unreachable!(),
        }
    }
}

fn cv_scale(x: &mut ConeVec, alpha: f64) {
    for b in x.iter_mut() {
        match b {
            Blk::Lp(u) => *u *= alpha,
            Blk::Sd(u) => *u *= alpha,
        }
    }
}

fn cv_norm(x: &ConeVec) -> f64 {
    cv_dot(x, x).sqrt()
}

fn add_coef(m: &mut Blk, coef: &Coef, s: f64) {
    match m {
        Blk::Lp(v) => {
            for &(r, _, val) in coef {
                v[r] += s * val;
            }
        }
        Blk::Sd(a) => {
            for &(r, c, val) in coef {
                a[(r, c)] += s * val;
                if r != c {
                    a[(c, r)] += s * val;
                }
            }
        }
    }
}

fn coef_dot(coef: &Coef, m: &Blk) -> f64 {
    match m {
        Blk::Lp(v) => coef.iter().map(|&(r, _, val)| val * v[r]).sum(),
        Blk::Sd(a) => coef
            .iter()
            .map(|&(r, c, val)| if r == c { val * a[(r, r)] } else { 2.0 * val * a[(r, c)] })
            .sum(),
    }
}

fn zeros_like(prog: &ConicProgram) -> ConeVec {
    prog.blocks
        .iter()
        .map(|b| match b.kind {
            ConeKind::Nonneg => Blk::Lp(DVector::zeros(b.dim)),
            ConeKind::Psd => Blk::Sd(DMatrix::zeros(b.dim, b.dim)),
        })
        .collect()
}

fn identity_like(prog: &ConicProgram) -> ConeVec {
    prog.blocks
        .iter()
        .map(|b| match b.kind {
            ConeKind::Nonneg => Blk::Lp(DVector::from_element(b.dim, 1.0)),
            ConeKind::Psd => Blk::Sd(DMatrix::identity(b.dim, b.dim)),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scaling

#[derive(Debug, Clone)]
enum BlkScaling {
    Lp {
        w: DVector<f64>,
        lambda: DVector<f64>,
    },
    Sd {
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        lambda: DVector<f64>,
    },
}

fn nt_scaling(s: &ConeVec, z: &ConeVec) -> Option<Vec<BlkScaling>> {
    s.par_iter()
        .zip(z.par_iter())
        .map(|(sb, zb)| match (sb, zb) {
            (Blk::Lp(sv), Blk::Lp(zv)) => {
                if sv.iter().chain(zv.iter()).any(|&v| !(v > 0.0)) {
                    return None;
                }
                Some(BlkScaling::Lp {
                    w: sv.zip_map(zv, |a, b| (a / b).sqrt()),
                    lambda: sv.zip_map(zv, |a, b| (a * b).sqrt()),
                })
            }
            (Blk::Sd(sm), Blk::Sd(zm)) => {
                let ls = sm.clone().cholesky()?.l();
                let lz = zm.clone().cholesky()?.l();
                let (r, rinv, lambda) = sd_scaling_from(ls, lz)?;
                Some(BlkScaling::Sd {
                    r,
                    rinv,
                    lambda,
                })
            }
            _ => unreachable!(),
        })
        .collect()
}

/// NT scaling of a PSD pair given through Cholesky factors of s and z.
fn sd_scaling_from(ls: DMatrix<f64>, lz: DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let svd = (lz.transpose() * &ls).svd(true, true);
    let v = svd.v_t?.transpose();
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let inv_sqrt = lambda.map(|l| 1.0 / l.sqrt());
    let r = &ls * &v * DMatrix::from_diagonal(&inv_sqrt);
    // R⁻¹ = Λ^{1/2} Vᵀ L_s⁻¹
    let ls_inv = ls.try_inverse()?;
    let rinv = DMatrix::from_diagonal(&lambda.map(f64::sqrt)) * v.transpose() * ls_inv;
    Some((r, rinv, lambda))
}

/// Scaling after the step `(s, z) += α (ds, dz)`, computed from the scaled
/// iterates `Λ + α d̃`, which stay well conditioned near the solution.
fn update_scaling(sc: &[BlkScaling], ds: &ConeVec, dz: &ConeVec, alpha: f64) -> Option<Vec<BlkScaling>> {
    sc.par_iter()
        .zip(ds.par_iter().zip(dz.par_iter()))
        .map(|(b, (dsb, dzb))| {
            let lam = b.lambda();
            match (b, b.scale_s(dsb), b.scale_z(dzb)) {
                (BlkScaling::Lp { w, .. }, Blk::Lp(p), Blk::Lp(q)) => {
                    let st = lam + p * alpha;
                    let zt = lam + q * alpha;
                    if st.iter().chain(zt.iter()).any(|&v| !(v > 0.0)) {
                        return None;
                    }
                    Some(BlkScaling::Lp {
                        w: w.zip_map(&st.zip_map(&zt, |a, c| (a / c).sqrt()), |a, c| a * c),
                        lambda: st.zip_map(&zt, |a, c| (a * c).sqrt()),
                    })
                }
                (BlkScaling::Sd { r, rinv, .. }, Blk::Sd(p), Blk::Sd(q)) => {
                    let mut st = DMatrix::from_diagonal(lam) + p * alpha;
                    let mut zt = DMatrix::from_diagonal(lam) + q * alpha;
                    symmetrize(&mut st);
                    symmetrize(&mut zt);
                    let ls = st.cholesky()?.l();
                    let lz = zt.cholesky()?.l();
                    let (rt, rtinv, lambda) = sd_scaling_from(ls, lz)?;
                    let r = r * rt;
                    let rinv = rtinv * rinv;
                        Some(BlkScaling::Sd {
                        r,
                        rinv,
                            lambda,
                    })
                }
                _ => unreachable!(),
            }
        })
        .collect()
}

impl BlkScaling {
    /// `R⁻¹ v R⁻ᵀ` (or v / w): a primal-side block in scaled coordinates.
    fn scale_in(&self, v: &Blk) -> Blk {
        match (self, v) {
            (BlkScaling::Lp { w, .. }, Blk::Lp(x)) => Blk::Lp(x.component_div(w)),
            (BlkScaling::Sd { rinv, .. }, Blk::Sd(x)) => Blk::Sd(rinv * x * rinv.transpose()),
            _ => unreachable!(),
        }
    }

    /// `R⁻ᵀ v R⁻¹` (or v / w): back from scaled to dual-side coordinates.
    fn scale_out(&self, v: &Blk) -> Blk {
        match (self, v) {
            (BlkScaling::Lp { w, .. }, Blk::Lp(x)) => Blk::Lp(x.component_div(w)),
            (BlkScaling::Sd { rinv, .. }, Blk::Sd(x)) => Blk::Sd(rinv.transpose() * x * rinv),
            _ => unreachable!(),
        }
    }

    /// Scaled primal direction R⁻¹ v R⁻ᵀ (or v / w).
    fn scale_s(&self, v: &Blk) -> Blk {
        match (self, v) {
            (BlkScaling::Lp { w, .. }, Blk::Lp(x)) => Blk::Lp(x.component_div(w)),
            (BlkScaling::Sd { rinv, .. }, Blk::Sd(x)) => Blk::Sd(rinv * x * rinv.transpose()),
            _ => unreachable!(),
        }
    }

    /// Scaled dual direction Rᵀ v R (or w v).
    fn scale_z(&self, v: &Blk) -> Blk {
        match (self, v) {
            (BlkScaling::Lp { w, .. }, Blk::Lp(x)) => Blk::Lp(x.component_mul(w)),
            (BlkScaling::Sd { r, .. }, Blk::Sd(x)) => Blk::Sd(r.transpose() * x * r),
            _ => unreachable!(),
        }
    }

    fn lambda(&self) -> &DVector<f64> {
        match self {
            BlkScaling::Lp { lambda, .. } | BlkScaling::Sd { lambda, .. } => lambda,
        }
    }

    /// Solves λ∘u = rc in scaled space and maps back: R u Rᵀ (or w u).
    fn unscale_rc(&self, rc: &Blk) -> Blk {
        match (self, rc) {
            (BlkScaling::Lp { w, lambda }, Blk::Lp(x)) => {
                Blk::Lp(x.component_div(lambda).component_mul(w))
            }
            (BlkScaling::Sd { r, lambda, .. }, Blk::Sd(x)) => {
                let n = lambda.len();
                let u = DMatrix::from_fn(n, n, |i, j| 2.0 * x[(i, j)] / (lambda[i] + lambda[j]));
                Blk::Sd(r * u * r.transpose())
            }
            _ => unreachable!(),
        }
    }
}

/// Largest step α with λ + α d inside the cone (λ diagonal, d scaled).
fn max_step(lambda: &DVector<f64>, d: &Blk) -> f64 {
    let emin = match d {
        Blk::Lp(v) => v.component_div(lambda).min(),
        Blk::Sd(m) => {
            let s = lambda.map(|l| 1.0 / l.sqrt());
            let n = s.len();
            let scaled = DMatrix::from_fn(n, n, |i, j| s[i] * m[(i, j)] * s[j]);
            min_eig(&scaled)
        }
    };
    if emin < 0.0 {
        -1.0 / emin
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// Schur complement structure

struct Schur {
    symbolic: Symbolic,
    n_entries: usize,
    /// Per PSD block: local variable list and the M entry index of each
    /// local pair (a <= b) in row-major upper order.
    psd: Vec<(usize, Vec<usize>, Vec<usize>)>,
    /// Per nonnegative block: for each row, (variable, coef, ...) and the M
    /// entry index of each local pair.
    lp: Vec<(usize, Vec<Vec<(usize, f64)>>, Vec<Vec<usize>>)>,
    entries: Vec<(usize, usize)>,
}

impl Schur {
    fn new(prog: &ConicProgram) -> Self {
        let mut entries: Vec<(usize, usize)> = (0..prog.n_vars).map(|i| (i, i)).collect();
        let mut psd = Vec::new();
        let mut lp = Vec::new();
        for (j, blk) in prog.blocks.iter().enumerate() {
            match blk.kind {
                ConeKind::Psd => {
                    let vars: Vec<usize> = blk.terms.iter().map(|t| t.0).collect();
                    let mut idx = Vec::with_capacity(vars.len() * (vars.len() + 1) / 2);
                    for a in 0..vars.len() {
                        for b in a..vars.len() {
                            idx.push(entries.len());
                            entries.push((vars[a], vars[b]));
                        }
                    }
                    psd.push((j, vars, idx));
                }
                ConeKind::Nonneg => {
                    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); blk.dim];
                    for (i, coef) in &blk.terms {
                        for &(r, _, v) in coef {
                            rows[r].push((*i, v));
                        }
                    }
                    let mut idx = Vec::with_capacity(blk.dim);
                    for row in &rows {
                        let mut ri = Vec::new();
                        for a in 0..row.len() {
                            for b in a..row.len() {
                                ri.push(entries.len());
                                entries.push((row[a].0, row[b].0));
                            }
                        }
                        idx.push(ri);
                    }
                    lp.push((j, rows, idx));
                }
            }
        }
        let symbolic = Symbolic::new(prog.n_vars, &entries);
        Schur {
            symbolic,
            n_entries: entries.len(),
            psd,
            lp,
            entries,
        }
    }

    /// Values of M = Σ_j ⟨Ã_ij, Ã_kj⟩ aligned with `entries`, from the
    /// scaled PSD coefficients (Gram form) and the nonnegative scalings.
    fn assemble(&self, tilde: &[Option<Vec<DMatrix<f64>>>], sc: &[BlkScaling]) -> Vec<f64> {
        let mut values = vec![0.0; self.n_entries];
        let parts: Vec<Vec<(usize, f64)>> = self
            .psd
            .par_iter()
            .map(|(j, vars, idx)| {
                let scaled = tilde[*j].as_ref().expect("psd block");
                let mut out = Vec::with_capacity(idx.len());
                let mut p = 0;
                for a in 0..vars.len() {
                    for b in a..vars.len() {
                        out.push((idx[p], scaled[a].dot(&scaled[b])));
                        p += 1;
                    }
                }
                out
            })
            .collect();
        for part in parts {
            for (e, v) in part {
                values[e] += v;
            }
        }
        for (j, rows, idx) in &self.lp {
            let w = match &sc[*j] {
                BlkScaling::Lp { w, .. } => w,
                _ => unreachable!(),
            };
            for (r, row) in rows.iter().enumerate() {
                let inv = 1.0 / (w[r] * w[r]);
                let mut p = 0;
                for a in 0..row.len() {
                    for b in a..row.len() {
                        values[idx[r][p]] += row[a].1 * row[b].1 * inv;
                        p += 1;
                    }
                }
            }
        }
        values
    }
}

// ---------------------------------------------------------------------------
// Solver

struct SchurValues {
    /// Per PSD block, `R⁻¹ A_a R⁻ᵀ` for each term (W⁻¹ = R⁻ᵀR⁻¹).
    tilde: Vec<Option<Vec<DMatrix<f64>>>>,
    /// Diagonal equilibration applied before factoring.
    scale: Vec<f64>,
}

struct Engine<'a> {
    prog: &'a ConicProgram,
    c: Vec<f64>,
    h: ConeVec,
    schur: Schur,
}

impl Engine<'_> {
    /// G x = −Σ x_i A_i
    fn g_mul(&self, x: &[f64]) -> ConeVec {
        let mut out = zeros_like(self.prog);
        for (blk, o) in self.prog.blocks.iter().zip(out.iter_mut()) {
            for (i, coef) in &blk.terms {
                if x[*i] != 0.0 {
                    add_coef(o, coef, -x[*i]);
                }
            }
        }
        out
    }

    /// Gᵀ z = (−⟨A_i, Z⟩)_i
    fn gt_mul(&self, z: &ConeVec) -> Vec<f64> {
        let mut out = vec![0.0; self.prog.n_vars];
        for (blk, zb) in self.prog.blocks.iter().zip(z) {
            for (i, coef) in &blk.terms {
                out[*i] -= coef_dot(coef, zb);
            }
        }
        out
    }

    /// `G̃x` in scaled coordinates: `−Σ x_a Ã_a` per block (`R⁻¹ G x R⁻ᵀ`,
    /// or `Gx / w` for nonnegative blocks).
    fn g_scaled(&self, sc: &[BlkScaling], mv: &SchurValues, x: &[f64]) -> ConeVec {
        self.prog
            .blocks
            .par_iter()
            .enumerate()
            .map(|(j, blk)| match (&sc[j], &mv.tilde[j]) {
                (BlkScaling::Sd { .. }, Some(tl)) => {
                    let mut m = DMatrix::zeros(blk.dim, blk.dim);
                    for ((i, _), t) in blk.terms.iter().zip(tl) {
                        if x[*i] != 0.0 {
                            m.zip_apply(t, |a, b| *a -= x[*i] * b);
                        }
                    }
                    Blk::Sd(m)
                }
                (BlkScaling::Lp { w, .. }, _) => {
                    let mut v = DVector::zeros(blk.dim);
                    for (i, coef) in &blk.terms {
                        for &(r, _, c) in coef {
                            v[r] -= c * x[*i];
                        }
                    }
                    Blk::Lp(v.component_div(w))
                }
                _ => unreachable!(),
            })
            .collect()
    }

    /// Adjoint of [`Self::g_scaled`].
    fn gt_scaled(&self, sc: &[BlkScaling], mv: &SchurValues, u: &ConeVec) -> Vec<f64> {
        let mut out = vec![0.0; self.prog.n_vars];
        for (j, blk) in self.prog.blocks.iter().enumerate() {
            match (&sc[j], &mv.tilde[j], &u[j]) {
                (BlkScaling::Sd { .. }, Some(tl), Blk::Sd(m)) => {
                    for ((i, _), t) in blk.terms.iter().zip(tl) {
                        out[*i] -= t.dot(m);
                    }
                }
                (BlkScaling::Lp { w, .. }, _, Blk::Lp(v)) => {
                    for (i, coef) in &blk.terms {
                        for &(r, _, c) in coef {
                            out[*i] -= c * v[r] / w[r];
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        out
    }

    /// Solves `Gᵀz = a`, `Gx − W²z = b`. In scaled coordinates this is the
    /// least-squares system `G̃ᵀG̃ x = a + G̃ᵀb̃`, `z̃ = G̃x − b̃`, solved by
    /// conjugate gradients on the matrix-free Gram operator with the
    /// factored Schur complement as preconditioner. The Gram products lose
    /// far less than the assembled matrix once the scaling is extreme.
    fn kkt(
        &self,
        sc: &[BlkScaling],
        fac: &crate::sparse::Factor<'_>,
        mv: &SchurValues,
        a: &[f64],
        b: &ConeVec,
    ) -> (Vec<f64>, ConeVec) {
        let dsc = &mv.scale;
        let precond = |v: &[f64]| {
            let mut out: Vec<f64> = v.iter().zip(dsc).map(|(p, q)| p * q).collect();
            fac.solve(&mut out);
            for (o, d) in out.iter_mut().zip(dsc) {
                *o *= d;
            }
            out
        };
        let bt: ConeVec = sc.iter().zip(b).map(|(s, v)| s.scale_in(v)).collect();
        let gtb = self.gt_scaled(sc, mv, &bt);
        let rhs: Vec<f64> = a.iter().zip(&gtb).map(|(p, q)| p + q).collect();
        let m_mul = |x: &[f64]| {
            let gx = self.g_scaled(sc, mv, x);
            self.gt_scaled(sc, mv, &gx)
        };
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).sum::<f64>();
        let rhs_norm = dot(&rhs, &rhs).sqrt();
        let mut x = precond(&rhs);
        let mx = m_mul(&x);
        let mut r: Vec<f64> = rhs.iter().zip(&mx).map(|(p, q)| p - q).collect();
        let r0 = dot(&r, &r).sqrt();
        let mut best = (r0, x.clone());
        let mut zr = precond(&r);
        let mut p = zr.clone();
        let mut rz = dot(&r, &zr);
        let mut iters = 0;
        while iters < CG_MAX_ITERS && best.0 > 1e-14 * rhs_norm && rz > 0.0 {
            iters += 1;
            let mp = m_mul(&p);
            let pmp = dot(&p, &mp);
            if !(pmp > 0.0) {
                break;
            }
            let alpha = rz / pmp;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * mp[i];
            }
            let rn = dot(&r, &r).sqrt();
            if rn < best.0 {
                best = (rn, x.clone());
            } else if rn > 1e3 * best.0 {
                break;
            }
            zr = precond(&r);
            let rz_new = dot(&r, &zr);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = zr[i] + beta * p[i];
            }
        }
        let x = best.1;
        let mut zt = self.g_scaled(sc, mv, &x);
        cv_axpy(-1.0, &bt, &mut zt);
        let z = sc.iter().zip(&zt).map(|(s, v)| s.scale_out(v)).collect();
        (x, z)
    }

    /// Factors the Schur complement after symmetric diagonal equilibration,
    /// so the pivot floor is relative to each variable's own scale.
    fn factor_schur(&self, sc: &[BlkScaling]) -> Result<(SchurValues, crate::sparse::Factor<'_>)> {
        let tilde: Vec<Option<Vec<DMatrix<f64>>>> = self
            .prog
            .blocks
            .par_iter()
            .zip(sc.par_iter())
            .map(|(blk, s)| match s {
                BlkScaling::Sd { rinv, .. } => Some(
                    blk.terms
                        .iter()
                        .map(|(_, coef)| {
                            let mut t = DMatrix::zeros(blk.dim, blk.dim);
                            for &(r, c, v) in coef {
                                let wr = rinv.column(r);
                                let wc = rinv.column(c);
                                t.ger(v, &wr, &wc, 1.0);
                                if r != c {
                                    t.ger(v, &wc, &wr, 1.0);
                                }
                            }
                            t
                        })
                        .collect(),
                ),
                BlkScaling::Lp { .. } => None,
            })
            .collect();
        let values = self.schur.assemble(&tilde, sc);
        let mut scale = vec![1.0; self.prog.n_vars];
        for (&(r, c), &v) in self.schur.entries.iter().zip(&values) {
            if r == c && v > 0.0 {
                scale[r] = 1.0 / v.sqrt();
            }
        }
        let scaled: Vec<f64> = self
            .schur
            .entries
            .iter()
            .zip(&values)
            .map(|(&(r, c), &v)| v * scale[r] * scale[c] + if r == c { PRECOND_SHIFT } else { 0.0 })
            .collect();
        let fac = self.schur.symbolic.factor(&scaled, Some(1e-14))?;
        Ok((SchurValues { tilde, scale }, fac))
    }
}

fn identity_scaling(prog: &ConicProgram) -> Vec<BlkScaling> {
    prog.blocks
        .iter()
        .map(|b| match b.kind {
            ConeKind::Nonneg => BlkScaling::Lp {
                w: DVector::from_element(b.dim, 1.0),
                lambda: DVector::from_element(b.dim, 1.0),
            },
            ConeKind::Psd => BlkScaling::Sd {
                r: DMatrix::identity(b.dim, b.dim),
                rinv: DMatrix::identity(b.dim, b.dim),
                lambda: DVector::from_element(b.dim, 1.0),
            },
        })
        .collect()
}

/// Shifts a cone vector into the interior: v + (1 + t)e when t = −min eig ≥ 0.
fn push_interior(v: &mut ConeVec) {
    let mut t = f64::NEG_INFINITY;
    let mut nrm: f64 = 0.0;
    for b in v.iter() {
        let e = match b {
            Blk::Lp(x) => -x.min(),
            Blk::Sd(m) => -min_eig(m),
        };
        t = t.max(e);
        nrm = nrm.max(match b {
            Blk::Lp(x) => x.amax(),
            Blk::Sd(m) => m.amax(),
        });
    }
    if t >= -1e-8 * nrm.max(1.0) {
        for b in v.iter_mut() {
            match b {
                Blk::Lp(x) => x.add_scalar_mut(1.0 + t),
                Blk::Sd(m) => {
                    for i in 0..m.nrows() {
                        m[(i, i)] += 1.0 + t;
                    }
                }
            }
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn to_dense(b: &Blk) -> DMatrix<f64> {
    match b {
        Blk::Lp(v) => DMatrix::from_diagonal(v),
        Blk::Sd(m) => m.clone(),
    }
}

/// Conjugate-gradient iterations per KKT solve.
const CG_MAX_ITERS: usize = 200;
/// Diagonal shift of the equilibrated Schur complement used as CG
/// preconditioner. Keeps near-null directions (non-unique duals) visible
/// to CG instead of dropping them.
const PRECOND_SHIFT: f64 = 1e-12;

/// A stalled solve still counts as optimal when its best iterate is within
/// this factor of every tolerance.
const NEAR_OPTIMAL: f64 = 100.0;
/// Iterations without halving the worst scaled residual before giving up.
const STALL_ITERS: usize = 8;

pub fn solve(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution> {
    prog.validate()?;
    let nu: f64 = prog.blocks.iter().map(|b| b.dim as f64).sum();
    let mut h = zeros_like(prog);
    for (blk, hb) in prog.blocks.iter().zip(h.iter_mut()) {
        add_coef(hb, &blk.constant, 1.0);
    }
    let eng = Engine {
        prog,
        c: prog.objective.iter().map(|v| -v).collect(),
        h,
        schur: Schur::new(prog),
    };
    let c = &eng.c;
    let h = &eng.h;
    let resx0 = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let resz0 = cv_norm(h).max(1.0);

    // Starting point: least-squares primal and least-norm dual, shifted.
    let ident = identity_scaling(prog);
    let (mvals, fac) = eng.factor_schur(&ident)?;
    let zero_n = vec![0.0; prog.n_vars];
    // Gᵀz = 0, Gx − z = h  →  x = argmin ‖Gx − h‖ and s = h − Gx = −z
    let (mut x, mut s) = eng.kkt(&ident, &fac, &mvals, &zero_n, h);
    cv_scale(&mut s, -1.0);
    // Gᵀz = −c, Gx − z = 0  →  least-norm z
    let (_, mut z) = eng.kkt(&ident, &fac, &mvals, c, &zeros_like(prog));
    drop(fac);
    push_interior(&mut s);
    push_interior(&mut z);
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    // Scaling carried over from the previous step (updated multiplicatively).
    let mut carried: Option<Vec<BlkScaling>> = None;
    let finish = |status: SolveStatus, x: &[f64], z: &ConeVec, tau: f64, it: usize, res: (f64, f64, f64)| {
        let y: Vec<f64> = x.iter().map(|v| v / tau).collect();
        let objective = prog.objective.iter().zip(&y).map(|(b, v)| b * v).sum::<f64>() + prog.offset;
        ConicSolution {
            status,
            objective,
            duals: z
                .iter()
                .map(|b| {
                    let mut m = to_dense(b);
                    m /= tau;
                    m
                })
                .collect(),
            y,
            iterations: it,
            primal_residual: res.0,
            dual_residual: res.1,
            relative_gap: res.2,
        }
    };

    // Best iterate so far by worst residual relative to its tolerance.
    let mut best: Option<(f64, Vec<f64>, ConeVec, f64, usize, (f64, f64, f64))> = None;
    let mut since_best = 0;
    let mut best_pinf = f64::INFINITY;
    let give_up = |status: SolveStatus,
                   best: Option<(f64, Vec<f64>, ConeVec, f64, usize, (f64, f64, f64))>,
                   x: &[f64],
                   z: &ConeVec,
                   tau: f64,
                   it: usize,
                   last: (f64, f64, f64)| {
        match best {
            Some((merit, bx, bz, btau, bit, bres)) if merit <= NEAR_OPTIMAL => {
                finish(SolveStatus::Optimal, &bx, &bz, btau, bit, bres)
            }
            Some((_, bx, bz, btau, bit, bres)) => finish(status, &bx, &bz, btau, bit, bres),
            None => finish(status, x, z, tau, it, last),
        }
    };

    for it in 0..=opts.max_iter {
        let gtz = eng.gt_mul(&z);
        let rx: Vec<f64> = gtz.iter().zip(c).map(|(g, ci)| g + ci * tau).collect();
        let mut rz = eng.g_mul(&x);
        cv_axpy(1.0, &s, &mut rz);
        cv_axpy(-tau, h, &mut rz);
        let cx: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let hz = cv_dot(h, &z);
        let rt = kappa + cx + hz;
        let gap = cv_dot(&s, &z);
        let mu = (gap + tau * kappa) / (nu + 1.0);
        let pcost = cx / tau;
        let dcost = -hz / tau;
        let pres = cv_norm(&rz) / tau / resz0;
        let dres = rx.iter().map(|v| v * v).sum::<f64>().sqrt() / tau / resx0;
        // Relative to the full objective, which includes the constant offset
        // (large when most variables of a model are fixed).
        let full = (prog.offset - pcost).abs().min((prog.offset - dcost).abs());
        let relgap = gap / (tau * tau) / pcost.abs().min(dcost.abs()).max(full).max(1.0);
        last = (pres, dres, relgap);
        if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
            return Ok(finish(SolveStatus::Optimal, &x, &z, tau, it, last));
        }
        let pinf = if hz < 0.0 {
            gtz.iter().map(|v| v * v).sum::<f64>().sqrt() / resx0 / -hz
        } else {
            f64::INFINITY
        };
        if pinf <= opts.feas_tol {
            return Ok(finish(SolveStatus::Infeasible, &x, &z, tau, it, last));
        }
        let merit = (pres.max(dres) / opts.feas_tol).max(relgap / opts.gap_tol);
        // Progress toward an infeasibility certificate also counts.
        let progress_inf = pinf < 0.5 * best_pinf;
        best_pinf = best_pinf.min(pinf);
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < 0.5 * b.0) {
            best = Some((merit, x.clone(), z.clone(), tau, it, last));
            since_best = 0;
        } else if progress_inf {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_ITERS {
                return Ok(give_up(SolveStatus::Numerical, best, &x, &z, tau, it, last));
            }
        }
        if cx < 0.0 {
            let mut gs = eng.g_mul(&x);
            cv_axpy(1.0, &s, &mut gs);
            if cv_norm(&gs) / resz0 / -cx <= opts.feas_tol {
                return Ok(finish(SolveStatus::Unbounded, &x, &z, tau, it, last));
            }
        }
        if it == opts.max_iter {
            break;
        }

        let Some(sc) = carried.take().or_else(|| nt_scaling(&s, &z)) else {
            return Ok(give_up(SolveStatus::Numerical, best, &x, &z, tau, it, last));
        };
        let Ok((mvals, fac)) = eng.factor_schur(&sc) else {
            return Ok(give_up(SolveStatus::Numerical, best, &x, &z, tau, it, last));
        };
        let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
        let (x1, z1) = eng.kkt(&sc, &fac, &mvals, &neg_c, h);
        let cx1: f64 = c.iter().zip(&x1).map(|(a, b)| a * b).sum();
        let hz1 = cv_dot(h, &z1);

        // λ∘λ in scaled coordinates.
        let lam_sq: ConeVec = sc
            .iter()
            .map(|b| match b {
                BlkScaling::Lp { lambda, .. } => Blk::Lp(lambda.component_mul(lambda)),
                BlkScaling::Sd { lambda, .. } => {
                    Blk::Sd(DMatrix::from_diagonal(&lambda.component_mul(lambda)))
                }
            })
            .collect();

        let direction = |eta: f64, rc: &ConeVec, rtk: f64| {
            let qc: ConeVec = sc.iter().zip(rc).map(|(b, r)| b.unscale_rc(r)).collect();
            let a: Vec<f64> = rx.iter().map(|v| -eta * v).collect();
            let mut b = rz.clone();
            cv_scale(&mut b, -eta);
            cv_axpy(-1.0, &qc, &mut b);
            let (x2, z2) = eng.kkt(&sc, &fac, &mvals, &a, &b);
            let cx2: f64 = c.iter().zip(&x2).map(|(p, q)| p * q).sum();
            let hz2 = cv_dot(h, &z2);
            let dtau = (-eta * rt - rtk / tau - cx2 - hz2) / (cx1 + hz1 - kappa / tau);
            let dx: Vec<f64> = x2.iter().zip(&x1).map(|(p, q)| p + dtau * q).collect();
            let mut dz = z2;
            cv_axpy(dtau, &z1, &mut dz);
            // ds from the linearized primal row G dx + ds − h dτ = −η r_z,
            // which keeps that row exact whatever the conditioning of W.
            let mut ds = eng.g_mul(&dx);
            cv_scale(&mut ds, -1.0);
            cv_axpy(-eta, &rz, &mut ds);
            cv_axpy(dtau, h, &mut ds);
            drop(qc);
            let dkappa = (rtk - kappa * dtau) / tau;
            (dx, ds, dz, dtau, dkappa)
        };
        let step_len = |ds: &ConeVec, dz: &ConeVec, dtau: f64, dkappa: f64| {
            let mut a = f64::INFINITY;
            for ((b, dsb), dzb) in sc.iter().zip(ds).zip(dz) {
                a = a.min(max_step(b.lambda(), &b.scale_s(dsb)));
                a = a.min(max_step(b.lambda(), &b.scale_z(dzb)));
            }
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let mut rc_aff = lam_sq.clone();
        cv_scale(&mut rc_aff, -1.0);
        let (_, ds_a, dz_a, dtau_a, dkappa_a) = direction(1.0, &rc_aff, -tau * kappa);
        let alpha_aff = step_len(&ds_a, &dz_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        let eta = 1.0 - sigma;

        // Corrector: σμe − λ∘λ − (ds̃_a ∘ dz̃_a).
        let mut rc = identity_like(prog);
        cv_scale(&mut rc, sigma * mu);
        cv_axpy(-1.0, &lam_sq, &mut rc);
        for ((r, b), (dsb, dzb)) in rc.iter_mut().zip(&sc).zip(ds_a.iter().zip(&dz_a)) {
            match (r, b.scale_s(dsb), b.scale_z(dzb)) {
                (Blk::Lp(rv), Blk::Lp(p), Blk::Lp(q)) => *rv -= p.component_mul(&q),
                (Blk::Sd(rm), Blk::Sd(p), Blk::Sd(q)) => {
                    let mut prod = &p * &q;
                    symmetrize(&mut prod);
                    *rm -= prod;
                }
                _ => unreachable!(),
            }
        }
        let rtk = sigma * mu - tau * kappa - dtau_a * dkappa_a;
        let (dx, ds, dz, dtau, dkappa) = direction(eta, &rc, rtk);
        let alpha = (0.99 * step_len(&ds, &dz, dtau, dkappa)).min(1.0);

        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += alpha * di;
        }
        carried = update_scaling(&sc, &ds, &dz, alpha);
        cv_axpy(alpha, &ds, &mut s);
        cv_axpy(alpha, &dz, &mut z);
        for b in s.iter_mut().chain(z.iter_mut()) {
            if let Blk::Sd(m) = b {
                symmetrize(m);
            }
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if !(tau > 0.0) || !(kappa > 0.0) || alpha < 1e-12 {
            return Ok(give_up(SolveStatus::Numerical, best, &x, &z, tau.max(1e-300), it + 1, last));
        }
    }
    Ok(give_up(SolveStatus::MaxIter, best, &x, &z, tau, opts.max_iter, last))
}

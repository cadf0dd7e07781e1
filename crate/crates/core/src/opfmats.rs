//! Real-embedded constraint matrices over the voltage vector
//! `x = (Vd_1..Vd_n, Vq_1..Vq_n)`, so that every power-flow quantity is a
//! quadratic form `xᵀ A x = tr(A W)` with `W = x xᵀ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netcase::{two_port, AdmittanceMatrix, NetworkCase};

/// Sparse symmetric 2n×2n matrix. Each stored entry `(r, c, v)` with `r <= c`
/// stands for both `A[r][c]` and `A[c][r]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymMat {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymMat {
    fn new(dim: usize) -> Self {
        SymMat {
            dim,
            entries: Vec::new(),
        }
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((r.min(c), r.max(c), v));
        }
    }

    /// Merges duplicate positions and drops exact zeros.
    fn compact(mut self) -> Self {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        SymMat {
            dim: self.dim,
            entries: out,
        }
    }

    /// Entry `A[r][c]`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let key = (r.min(c), r.max(c));
        self.entries
            .iter()
            .filter(|e| (e.0, e.1) == key)
            .map(|e| e.2)
            .sum()
    }

    /// `xᵀ A x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * x[r] * x[r] } else { 2.0 * v * x[r] * x[c] })
            .sum()
    }

    /// `tr(A W)` for a symmetric W given entrywise.
    pub fn trace_with(&self, w: impl Fn(usize, usize) -> f64) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * w(r, r) } else { 2.0 * v * w(r, c) })
            .sum()
    }

    /// `y += scale · A x`.
    pub fn mul_add(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            y[r] += scale * v * x[c];
            if r != c {
                y[c] += scale * v * x[r];
            }
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }
}

/// Matrices attached to one branch. "from"/"to" refer to the end at which
/// the flow is measured.
#[derive(Debug, Clone)]
pub struct BranchMats {
    pub from: usize,
    pub to: usize,
    /// Active/reactive flow leaving the from bus.
    pub p_from: SymMat,
    pub q_from: SymMat,
    /// Active/reactive flow leaving the to bus.
    pub p_to: SymMat,
    pub q_to: SymMat,
    /// `tr(M W) = |V_l||V_m| cos θ_lm`
    pub m: SymMat,
    /// `tr(M̄ W) = |V_l||V_m| sin θ_lm`
    pub mbar: SymMat,
}

#[derive(Debug, Clone)]
pub struct OpfMatrixSet {
    pub n: usize,
    pub ref_bus: usize,
    /// Active injection at bus k.
    pub y: Vec<SymMat>,
    /// Reactive injection at bus k.
    pub ybar: Vec<SymMat>,
    /// Squared voltage magnitude at bus k.
    pub m: Vec<SymMat>,
    /// Selects `Vq_ref²`.
    pub n_ref: SymMat,
    pub branches: Vec<BranchMats>,
}

/// Adds the real embedding of `Re(V_i conj(y V_j))` to `out`.
fn embed_active(out: &mut SymMat, n: usize, i: usize, j: usize, y: Complex64) {
    let (g, b) = (y.re, y.im);
    if i == j {
        out.add(i, i, g);
        out.add(n + i, n + i, g);
    } else {
        out.add(i, j, 0.5 * g);
        out.add(n + i, n + j, 0.5 * g);
    }
    out.add(j, n + i, 0.5 * b);
    out.add(i, n + j, -0.5 * b);
}

/// Adds the real embedding of `Im(V_i conj(y V_j))`.
fn embed_reactive(out: &mut SymMat, n: usize, i: usize, j: usize, y: Complex64) {
    embed_active(out, n, i, j, y * Complex64::i());
}

pub fn build_matrix_set(case: &NetworkCase, adm: &AdmittanceMatrix) -> Result<OpfMatrixSet> {
    let n = case.n_bus();
    let dim = 2 * n;
    let mut y = Vec::with_capacity(n);
    let mut ybar = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = SymMat::new(dim);
        let mut q = SymMat::new(dim);
        for &(j, yk) in adm.row(k) {
            embed_active(&mut p, n, k, j, yk);
            embed_reactive(&mut q, n, k, j, yk);
        }
        y.push(p.compact());
        ybar.push(q.compact());
        let mut mk = SymMat::new(dim);
        mk.add(k, k, 1.0);
        mk.add(n + k, n + k, 1.0);
        m.push(mk);
    }
    let mut n_ref = SymMat::new(dim);
    n_ref.add(n + case.ref_bus(), n + case.ref_bus(), 1.0);

    let mut branches = Vec::with_capacity(case.branches.len());
    for br in &case.branches {
        let tp = two_port(br)?;
        let (l, t) = (br.from, br.to);
        let flow = |a: usize, b: usize, self_y: Complex64, mutual: Complex64, reactive: bool| {
            let mut s = SymMat::new(dim);
            let f = if reactive { embed_reactive } else { embed_active };
            f(&mut s, n, a, a, self_y);
            f(&mut s, n, a, b, mutual);
            s.compact()
        };
        let mut mm = SymMat::new(dim);
        mm.add(l, t, 0.5);
        mm.add(n + l, n + t, 0.5);
        let mut mbar = SymMat::new(dim);
        mbar.add(l, n + t, -0.5);
        mbar.add(t, n + l, 0.5);
        branches.push(BranchMats {
            from: l,
            to: t,
            p_from: flow(l, t, tp.yff, tp.yft, false),
            q_from: flow(l, t, tp.yff, tp.yft, true),
            p_to: flow(t, l, tp.ytt, tp.ytf, false),
            q_to: flow(t, l, tp.ytt, tp.ytf, true),
            m: mm.compact(),
            mbar: mbar.compact(),
        });
    }
    Ok(OpfMatrixSet {
        n,
        ref_bus: case.ref_bus(),
        y,
        ybar,
        m,
        n_ref: n_ref.compact(),
        branches,
    })
}

/// Voltage coordinates `(Vd_1..Vd_n, Vq_1..Vq_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoltageVector(pub Vec<f64>);

impl VoltageVector {
    pub fn from_phasors(v: &[Complex64]) -> Self {
        let mut x: Vec<f64> = v.iter().map(|c| c.re).collect();
        x.extend(v.iter().map(|c| c.im));
        VoltageVector(x)
    }

    pub fn from_polar(vm: &[f64], va: &[f64]) -> Self {
        let v: Vec<Complex64> = vm
            .iter()
            .zip(va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        Self::from_phasors(&v)
    }

    pub fn n_bus(&self) -> usize {
        self.0.len() / 2
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        let n = self.n_bus();
        (0..n).map(|k| Complex64::new(self.0[k], self.0[n + k])).collect()
    }
}

/// All trace quantities at `W = x xᵀ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectionReport {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v2: Vec<f64>,
    pub vq_ref2: f64,
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    /// `tr(M_lm W)`, the denominator of tan θ_lm.
    pub cos_term: Vec<f64>,
    /// `tr(M̄_lm W)`, the numerator of tan θ_lm.
    pub sin_term: Vec<f64>,
}

pub fn eval_traces(mats: &OpfMatrixSet, x: &VoltageVector) -> InjectionReport {
    assert_eq!(x.0.len(), 2 * mats.n, "voltage vector length must be 2n");
    let x = &x.0;
    let per_bus = |v: &[SymMat]| v.iter().map(|a| a.quad(x)).collect::<Vec<_>>();
    let per_branch = |f: fn(&BranchMats) -> &SymMat| {
        mats.branches.iter().map(|b| f(b).quad(x)).collect::<Vec<_>>()
    };
    InjectionReport {
        p: per_bus(&mats.y),
        q: per_bus(&mats.ybar),
        v2: per_bus(&mats.m),
        vq_ref2: mats.n_ref.quad(x),
        p_from: per_branch(|b| &b.p_from),
        q_from: per_branch(|b| &b.q_from),
        p_to: per_branch(|b| &b.p_to),
        q_to: per_branch(|b| &b.q_to),
        cos_term: per_branch(|b| &b.m),
        sin_term: per_branch(|b| &b.mbar),
    }
}

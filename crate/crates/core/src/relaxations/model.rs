//! Assembly of the clique-decomposed dual SDP as a [`ConicProgram`].

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::chordal::CliqueDecomposition;
use crate::conic::{Coef, ConeBlock, ConeKind, ConicProgram};
use crate::duals::DualSet;
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;
use crate::opfmats::{OpfMatrixSet, SymMat};

/// One linking equality between two blocks: the weighted sum of the listed
/// global entries `(r, c, w)` must agree in `child` and `parent`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub child: usize,
    pub parent: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Clique blocks and the matrix entries tied between them.
#[derive(Debug, Clone)]
pub struct Layout {
    pub n: usize,
    pub ref_bus: usize,
    pub cliques: Vec<Vec<usize>>,
    pub links: Vec<LinkSpec>,
    /// When set, the `Vq_ref` row/column is removed from every block.
    pub drop_ref_q: bool,
    /// Blocks of one or two buses stored in compact Hermitian form (see
    /// [`compress_hermitian`]).
    pub hermitian: bool,
    /// Per clique: local index → global 2n index.
    pub globals: Vec<Vec<usize>>,
    locals: Vec<HashMap<usize, usize>>,
    bus_cliques: Vec<Vec<usize>>,
    /// Lowest clique containing both endpoints of each branch.
    pub branch_clique: Vec<usize>,
}

impl Layout {
    fn finish(
        case: &NetworkCase,
        cliques: Vec<Vec<usize>>,
        links: Vec<LinkSpec>,
        drop_ref_q: bool,
    ) -> Result<Self> {
        let n = case.n_bus();
        let ref_bus = case.ref_bus();
        let mut globals = Vec::with_capacity(cliques.len());
        let mut locals = Vec::with_capacity(cliques.len());
        let mut bus_cliques = vec![Vec::new(); n];
        for (i, c) in cliques.iter().enumerate() {
            let mut g: Vec<usize> = c.clone();
            g.extend(c.iter().map(|&b| n + b).filter(|&q| !(drop_ref_q && q == n + ref_bus)));
            locals.push(g.iter().enumerate().map(|(l, &x)| (x, l)).collect());
            globals.push(g);
            for &b in c {
                bus_cliques[b].push(i);
            }
        }
        if let Some(k) = bus_cliques.iter().position(Vec::is_empty) {
            return Err(Error::Model(format!("bus {k} is in no clique")));
        }
        let mut branch_clique = Vec::with_capacity(case.branches.len());
        for br in &case.branches {
            let shared = bus_cliques[br.from]
                .iter()
                .copied()
                .find(|i| bus_cliques[br.to].contains(i))
                .ok_or_else(|| {
                    Error::Model(format!("branch {}-{} endpoints share no clique", br.from, br.to))
                })?;
            branch_clique.push(shared);
        }
        let q_ref = n + ref_bus;
        let links = links
            .into_iter()
            .filter_map(|mut l| {
                if drop_ref_q {
                    l.entries.retain(|&(r, c, _)| r != q_ref && c != q_ref);
                }
                (!l.entries.is_empty()).then_some(l)
            })
            .collect();
        Ok(Layout {
            n,
            ref_bus,
            cliques,
            links,
            drop_ref_q,
            hermitian: false,
            globals,
            locals,
            bus_cliques,
            branch_clique,
        })
    }

    /// Blocks from a chordal decomposition. Shared entries are linked through
    /// the Hermitian matrix they represent: `W_dd + W_qq` for a shared bus,
    /// and the real and imaginary parts of `V_a V_b*` for a shared pair.
    /// Every constraint matrix has the complex structure, so this is exact
    /// and leaves out the directions the objective cannot see.
    pub fn chordal(case: &NetworkCase, dec: &CliqueDecomposition, drop_ref_q: bool) -> Result<Self> {
        let n = case.n_bus();
        let mut links = Vec::new();
        for p in &dec.overlap_pairs {
            let (a, b) = (p.a.min(p.b), p.a.max(p.b));
            let groups = if a == b {
                vec![vec![(a, a, 1.0), (n + a, n + a, 1.0)]]
            } else {
                vec![
                    vec![(a, b, 1.0), (n + a, n + b, 1.0)],
                    vec![(b, n + a, 1.0), (a, n + b, -1.0)],
                ]
            };
            links.extend(groups.into_iter().map(|entries| LinkSpec {
                child: p.child,
                parent: p.parent,
                entries,
            }));
        }
        Self::finish(case, dec.cliques.clone(), links, drop_ref_q)
    }

    /// One block per connected bus pair, linked only through the squared
    /// voltage magnitude `W_dd + W_qq` of each shared bus. Every constraint
    /// matrix has the complex structure, so each 4×4 block is PSD exactly
    /// when its 2×2 Hermitian counterpart is, i.e. `|W_lm|² ≤ W_ll W_mm`:
    /// the branch-wise second-order-cone relaxation.
    pub fn edge_blocks(case: &NetworkCase) -> Result<Self> {
        let n = case.n_bus();
        let mut cliques: Vec<Vec<usize>> = case.edges().into_iter().map(|(a, b)| vec![a, b]).collect();
        for k in 0..n {
            if !cliques.iter().any(|c| c.contains(&k)) {
                cliques.push(vec![k]);
            }
        }
        let mut links = Vec::new();
        for k in 0..n {
            let with: Vec<usize> = (0..cliques.len()).filter(|&i| cliques[i].contains(&k)).collect();
            for w in with.windows(2) {
                links.push(LinkSpec {
                    child: w[1],
                    parent: w[0],
                    entries: vec![(k, k, 1.0), (n + k, n + k, 1.0)],
                });
            }
        }
        let mut layout = Self::finish(case, cliques, links, false)?;
        layout.hermitian = true;
        Ok(layout)
    }

    pub fn m(&self) -> usize {
        self.cliques.len()
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.globals[i].len()
    }

    pub fn local(&self, i: usize, global: usize) -> Option<usize> {
        self.locals[i].get(&global).copied()
    }

    /// Cliques that contain both buses.
    fn pair_cliques(&self, a: usize, b: usize) -> Vec<usize> {
        self.bus_cliques[a]
            .iter()
            .copied()
            .filter(|i| a == b || self.bus_cliques[b].contains(i))
            .collect()
    }
}

/// Identifies one scalar of the dual model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    LamLo(usize),
    LamHi(usize),
    /// λ̄ − λ̲ for buses with Pmin = Pmax (free sign).
    LamD(usize),
    GamLo(usize),
    GamHi(usize),
    GamD(usize),
    MuLo(usize),
    MuHi(usize),
    MuD(usize),
    BetaLo(usize),
    BetaHi(usize),
    /// Flow block entry: branch, end (0 from, 1 to), packed index.
    H(usize, u8, u8),
    R12(usize),
    R22(usize),
    Link(usize),
}

impl Key {
    fn bus(&self) -> Option<usize> {
        use Key::*;
        match *self {
            LamLo(k) | LamHi(k) | LamD(k) | GamLo(k) | GamHi(k) | GamD(k) | MuLo(k) | MuHi(k)
            | MuD(k) | R12(k) | R22(k) => Some(k),
            _ => None,
        }
    }

    fn branch(&self) -> Option<usize> {
        match *self {
            Key::BetaLo(l) | Key::BetaHi(l) | Key::H(l, _, _) => Some(l),
            _ => None,
        }
    }

    /// Value of this key in a physical-unit dual set.
    fn value(&self, d: &DualSet) -> f64 {
        use Key::*;
        match *self {
            LamLo(k) => d.lam_lo[k],
            LamHi(k) => d.lam_hi[k],
            LamD(k) => d.lam_hi[k] - d.lam_lo[k],
            GamLo(k) => d.gam_lo[k],
            GamHi(k) => d.gam_hi[k],
            GamD(k) => d.gam_hi[k] - d.gam_lo[k],
            MuLo(k) => d.mu_lo[k],
            MuHi(k) => d.mu_hi[k],
            MuD(k) => d.mu_hi[k] - d.mu_lo[k],
            BetaLo(l) => d.beta_lo[l],
            BetaHi(l) => d.beta_hi[l],
            H(l, 0, e) => d.h_from[l][e as usize],
            H(l, _, e) => d.h_to[l][e as usize],
            R12(k) => d.r12[k],
            R22(k) => d.r22[k],
            Link(_) => 0.0,
        }
    }

    /// Factor converting physical units into the cost-scaled model units.
    fn unit(&self, scale: f64) -> f64 {
        match self {
            Key::R12(_) => 1.0 / scale.sqrt(),
            _ => 1.0 / scale,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    Fixed(f64),
}

/// Affine function of model variables.
#[derive(Debug, Clone, Default)]
struct Aff {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Aff {
    fn add(&mut self, slot: Option<Slot>, coef: f64) -> &mut Self {
        match slot {
            Some(Slot::Var(i)) => self.terms.push((i, coef)),
            Some(Slot::Fixed(v)) => self.constant += coef * v,
            None => {}
        }
        self
    }
}

#[derive(Debug, Default, Clone)]
struct BlockAcc {
    constant: Coef,
    terms: HashMap<usize, Coef>,
}

impl BlockAcc {
    fn add(&mut self, r: usize, c: usize, v: f64, aff: &Aff) {
        let (r, c) = (r.min(c), r.max(c));
        if aff.constant != 0.0 {
            self.constant.push((r, c, v * aff.constant));
        }
        for &(i, a) in &aff.terms {
            self.terms.entry(i).or_default().push((r, c, v * a));
        }
    }

    fn into_block(self, kind: ConeKind, dim: usize) -> ConeBlock {
        fn merge(mut e: Coef) -> Coef {
            e.sort_by_key(|x| (x.0, x.1));
            let mut out: Coef = Vec::with_capacity(e.len());
            for (r, c, v) in e {
                match out.last_mut() {
                    Some(l) if l.0 == r && l.1 == c => l.2 += v,
                    _ => out.push((r, c, v)),
                }
            }
            out.retain(|x| x.2 != 0.0);
            out
        }
        let mut terms: Vec<(usize, Coef)> = self
            .terms
            .into_iter()
            .map(|(i, e)| (i, merge(e)))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        terms.sort_by_key(|t| t.0);
        ConeBlock {
            kind,
            dim,
            constant: merge(self.constant),
            terms,
        }
    }
}

/// Which duals are optimized; the rest are fixed to `fixed`.
#[derive(Debug, Clone, Default)]
pub struct ModelSpec<'a> {
    pub free_bus: Option<Vec<bool>>,
    pub free_branch: Option<Vec<bool>>,
    pub fixed: Option<&'a DualSet>,
}

impl ModelSpec<'_> {
    fn is_free(&self, key: &Key) -> bool {
        if let Some(k) = key.bus() {
            return self.free_bus.as_ref().map_or(true, |f| f[k]);
        }
        if let Some(l) = key.branch() {
            return self.free_branch.as_ref().map_or(true, |f| f[l]);
        }
        true
    }
}

/// The dual SDP as a conic program plus the bookkeeping to map solutions
/// back to physical dual variables.
#[derive(Debug, Clone)]
pub struct DualSdpModel {
    pub program: ConicProgram,
    pub layout: Layout,
    /// Model variable → dual key.
    pub keys: Vec<Key>,
    /// Costs are divided by this factor inside the program.
    pub cost_scale: f64,
    /// Fixed cone memberships violated by the fixed values.
    pub fixed_violations: Vec<String>,
    slots: HashMap<Key, Slot>,
    n_branch: usize,
}

struct Builder<'a> {
    spec: &'a ModelSpec<'a>,
    scale: f64,
    keys: Vec<Key>,
    slots: HashMap<Key, Slot>,
    nonneg: Vec<usize>,
    objective: Vec<f64>,
    offset: f64,
    violations: Vec<String>,
}

impl Builder<'_> {
    fn slot(&mut self, key: Key, nonneg: bool) -> Slot {
        if let Some(s) = self.slots.get(&key) {
            return *s;
        }
        let s = if self.spec.is_free(&key) {
            let i = self.keys.len();
            self.keys.push(key);
            self.objective.push(0.0);
            if nonneg {
                self.nonneg.push(i);
            }
            Slot::Var(i)
        } else {
            let v = self.spec.fixed.map_or(0.0, |d| key.value(d)) * key.unit(self.scale);
            if nonneg && v < -1e-9 * (1.0 + v.abs()) {
                self.violations.push(format!("{key:?} = {v:e} < 0"));
            }
            Slot::Fixed(v)
        };
        self.slots.insert(key, s);
        s
    }

    fn objective(&mut self, slot: Option<Slot>, coef: f64) {
        match slot {
            Some(Slot::Var(i)) => self.objective[i] += coef,
            Some(Slot::Fixed(v)) => self.offset += coef * v,
            None => {}
        }
    }

    /// Lower/upper bound duals for `lo <= expr <= hi`, merged into one free
    /// variable when the bounds coincide. Returns (aff of hi − lo, ρ terms
    /// already added).
    fn bound_pair(&mut self, lo: f64, hi: f64, keys: (Key, Key, Key)) -> Aff {
        let mut diff = Aff::default();
        if lo == hi && lo.is_finite() {
            let s = self.slot(keys.2, false);
            diff.add(Some(s), 1.0);
            self.objective(Some(s), -lo);
        } else {
            if lo.is_finite() {
                let s = self.slot(keys.0, true);
                diff.add(Some(s), -1.0);
                self.objective(Some(s), lo);
            }
            if hi.is_finite() {
                let s = self.slot(keys.1, true);
                diff.add(Some(s), 1.0);
                self.objective(Some(s), -hi);
            }
        }
        diff
    }

    fn objective_aff(&mut self, aff: &Aff, coef: f64) {
        for &(i, a) in &aff.terms {
            self.objective[i] += coef * a;
        }
        self.offset += coef * aff.constant;
    }
}

enum Owner {
    Bus,
    Branch(usize),
}

fn distribute(layout: &Layout, accs: &mut [BlockAcc], mat: &SymMat, aff: &Aff, owner: Owner) {
    if aff.terms.is_empty() && aff.constant == 0.0 {
        return;
    }
    let n = layout.n;
    for &(r, c, v) in &mat.entries {
        let targets = match owner {
            Owner::Branch(l) => vec![layout.branch_clique[l]],
            Owner::Bus => layout.pair_cliques(r % n, c % n),
        };
        let w = v / targets.len() as f64;
        for i in targets {
            if let (Some(lr), Some(lc)) = (layout.local(i, r), layout.local(i, c)) {
                accs[i].add(lr, lc, w, aff);
            }
        }
    }
}

/// Cost scaling used inside the model: the largest marginal cost at Pmax.
pub fn cost_scale(case: &NetworkCase) -> f64 {
    case.gens
        .iter()
        .map(|g| (g.c1 + 2.0 * g.c2 * g.pmax.max(0.0)).abs())
        .fold(1.0, f64::max)
}

pub fn build_dual_sdp(
    case: &NetworkCase,
    mats: &OpfMatrixSet,
    layout: Layout,
    spec: &ModelSpec<'_>,
) -> Result<DualSdpModel> {
    let n = case.n_bus();
    let scale = cost_scale(case);
    let mut b = Builder {
        spec,
        scale,
        keys: Vec::new(),
        slots: HashMap::new(),
        nonneg: Vec::new(),
        objective: Vec::new(),
        offset: 0.0,
        violations: Vec::new(),
    };
    let mut accs = vec![BlockAcc::default(); layout.m()];
    let mut extra_blocks: Vec<(BlockAcc, usize)> = Vec::new();

    for k in 0..n {
        let bus = &case.buses[k];
        let (pmin, pmax) = case.p_limits(k);
        let (qmin, qmax) = case.q_limits(k);
        let (c2, c1, c0) = case.cost_at(k);
        let (c2, c1, c0) = (c2 / scale, c1 / scale, c0 / scale);

        let mut lam = b.bound_pair(pmin, pmax, (Key::LamLo(k), Key::LamHi(k), Key::LamD(k)));
        lam.constant += c1;
        if c2 > 0.0 {
            let r12 = b.slot(Key::R12(k), false);
            let r22 = b.slot(Key::R22(k), false);
            lam.add(Some(r12), 2.0 * c2.sqrt());
            b.objective(Some(r22), -1.0);
            let mut acc = BlockAcc::default();
            acc.constant.push((0, 0, 1.0));
            acc.add(0, 1, 1.0, Aff::default().add(Some(r12), 1.0));
            acc.add(1, 1, 1.0, Aff::default().add(Some(r22), 1.0));
            if acc.terms.is_empty() {
                check_fixed(&acc, 2, &format!("cost block at bus {k}"), &mut b.violations);
            } else {
                extra_blocks.push((acc, 2));
            }
        }
        b.objective_aff(&lam, bus.pd);
        b.offset += c0;
        distribute(&layout, &mut accs, &mats.y[k], &lam, Owner::Bus);

        let gam = b.bound_pair(qmin, qmax, (Key::GamLo(k), Key::GamHi(k), Key::GamD(k)));
        b.objective_aff(&gam, bus.qd);
        distribute(&layout, &mut accs, &mats.ybar[k], &gam, Owner::Bus);

        let (v2min, v2max) = (bus.vmin * bus.vmin, bus.vmax * bus.vmax);
        let mu = b.bound_pair(v2min, v2max, (Key::MuLo(k), Key::MuHi(k), Key::MuD(k)));
        distribute(&layout, &mut accs, &mats.m[k], &mu, Owner::Bus);
    }

    for (l, (br, bm)) in case.branches.iter().zip(&mats.branches).enumerate() {
        if br.has_flow_limit() {
            for (end, (p, q)) in [(&bm.p_from, &bm.q_from), (&bm.p_to, &bm.q_to)].into_iter().enumerate() {
                let h: Vec<Slot> = (0..6u8).map(|e| b.slot(Key::H(l, end as u8, e), false)).collect();
                b.objective(Some(h[0]), -br.rate * br.rate);
                b.objective(Some(h[3]), -1.0);
                b.objective(Some(h[5]), -1.0);
                let mut acc = BlockAcc::default();
                for (e, (r, c)) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].into_iter().enumerate() {
                    acc.add(r, c, 1.0, Aff::default().add(Some(h[e]), 1.0));
                }
                if acc.terms.is_empty() {
                    check_fixed(&acc, 3, &format!("flow block of branch {l} end {end}"), &mut b.violations);
                } else {
                    extra_blocks.push((acc, 3));
                }
                distribute(&layout, &mut accs, p, Aff::default().add(Some(h[1]), 2.0), Owner::Branch(l));
                distribute(&layout, &mut accs, q, Aff::default().add(Some(h[2]), 2.0), Owner::Branch(l));
            }
        }
        let mut on_m = Aff::default();
        let mut on_mbar = Aff::default();
        if let Some(tmax) = br.angmax {
            let s = b.slot(Key::BetaHi(l), true);
            on_mbar.add(Some(s), 1.0);
            on_m.add(Some(s), -tmax.tan());
        }
        if let Some(tmin) = br.angmin {
            let s = b.slot(Key::BetaLo(l), true);
            on_mbar.add(Some(s), -1.0);
            on_m.add(Some(s), tmin.tan());
        }
        distribute(&layout, &mut accs, &bm.m, &on_m, Owner::Branch(l));
        distribute(&layout, &mut accs, &bm.mbar, &on_mbar, Owner::Branch(l));
    }

    for (t, link) in layout.links.iter().enumerate() {
        let Slot::Var(i) = b.slot(Key::Link(t), false) else {
            unreachable!()
        };
        for (blk, sign) in [(link.child, 1.0), (link.parent, -1.0)] {
            let aff = Aff {
                terms: vec![(i, sign)],
                constant: 0.0,
            };
            for &(r, c, w) in &link.entries {
                let (lr, lc) = (layout.local(blk, r).unwrap(), layout.local(blk, c).unwrap());
                accs[blk].add(lr, lc, w, &aff);
            }
        }
    }

    let n_vars = b.keys.len();
    let mut program = ConicProgram::new(n_vars);
    program.objective = b.objective.clone();
    program.offset = b.offset;
    for (i, acc) in accs.into_iter().enumerate() {
        let blk = acc.into_block(ConeKind::Psd, layout.block_dim(i));
        program.blocks.push(if layout.hermitian { compress_hermitian(blk) } else { blk });
    }
    for (acc, dim) in extra_blocks {
        program.blocks.push(acc.into_block(ConeKind::Psd, dim));
    }
    if !b.nonneg.is_empty() {
        let mut blk = ConeBlock::new(ConeKind::Nonneg, b.nonneg.len());
        blk.terms = b.nonneg.iter().enumerate().map(|(r, &i)| (i, vec![(r, r, 1.0)])).collect();
        program.blocks.push(blk);
    }
    Ok(DualSdpModel {
        program,
        layout,
        keys: b.keys,
        cost_scale: scale,
        fixed_violations: b.violations,
        slots: b.slots,
        n_branch: case.branches.len(),
    })
}

/// Local entry map of a complex-structured block over one bus `(d, q)` or
/// two buses `(d_a, d_b, q_a, q_b)` onto its compact form: `[a]` for one
/// bus, `[[a, c, s], [c, b, 0], [s, 0, b]]` for two, where `a`, `b` are the
/// Hermitian diagonal, `c + js` the off-diagonal. Both forms are PSD exactly
/// when the Hermitian matrix is. Each item is (compact entry, weight).
fn hermitian_targets(dim: usize, r: usize, c: usize) -> &'static [((usize, usize), f64)] {
    match (dim, r, c) {
        (2, 0, 0) | (2, 1, 1) => &[((0, 0), 0.5)],
        (4, 0, 0) | (4, 2, 2) => &[((0, 0), 0.5)],
        (4, 1, 1) | (4, 3, 3) => &[((1, 1), 0.5), ((2, 2), 0.5)],
        (4, 0, 1) | (4, 2, 3) => &[((0, 1), 0.5)],
        (4, 1, 2) => &[((0, 2), 0.5)],
        (4, 0, 3) => &[((0, 2), -0.5)],
        // Zero in any complex-structured matrix.
        _ => &[],
    }
}

fn compress_hermitian(blk: ConeBlock) -> ConeBlock {
    let dim = blk.dim;
    let map = |coef: &Coef| -> Coef {
        let mut out: Coef = Vec::new();
        for &(r, c, v) in coef {
            for &((a, b), w) in hermitian_targets(dim, r, c) {
                out.push((a, b, v * w));
            }
        }
        out.sort_by_key(|x| (x.0, x.1));
        out.dedup_by(|x, y| {
            let same = x.0 == y.0 && x.1 == y.1;
            if same {
                y.2 += x.2;
            }
            same
        });
        out.retain(|x| x.2 != 0.0);
        out
    };
    ConeBlock {
        kind: blk.kind,
        dim: dim / 2 + usize::from(dim == 4),
        constant: map(&blk.constant),
        terms: blk
            .terms
            .iter()
            .map(|(i, c)| (*i, map(c)))
            .filter(|(_, c)| !c.is_empty())
            .collect(),
    }
}

/// The real 2n-indexed block (ordered like the layout's globals) whose pairing
/// with any complex-structured block equals the compact pairing with `z`.
pub(crate) fn expand_hermitian(z: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = if z.nrows() == 1 { 2 } else { 4 };
    let mut w = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in r..dim {
            let v: f64 = hermitian_targets(dim, r, c).iter().map(|&((a, b), wt)| wt * z[(a, b)]).sum();
            w[(r, c)] = v;
            w[(c, r)] = v;
        }
    }
    w
}

fn check_fixed(acc: &BlockAcc, dim: usize, what: &str, out: &mut Vec<String>) {
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for &(r, c, v) in &acc.constant {
        m[(r, c)] += v;
        if r != c {
            m[(c, r)] += v;
        }
    }
    let e = m.symmetric_eigenvalues().min();
    if e < -1e-9 * (1.0 + m.amax()) {
        out.push(format!("{what}: min eigenvalue {e:e}"));
    }
}

impl DualSdpModel {
    /// Model-unit variable vector from physical duals and linking values.
    pub fn y_from(&self, d: &DualSet, links: Option<&[f64]>) -> Vec<f64> {
        self.keys
            .iter()
            .map(|k| match k {
                Key::Link(t) => links.map_or(0.0, |l| l[*t]) / self.cost_scale,
                _ => k.value(d) * k.unit(self.cost_scale),
            })
            .collect()
    }

    /// Physical dual set and linking values from a model solution.
    pub fn duals_from(&self, y: &[f64]) -> (DualSet, Vec<f64>) {
        let nb = self.layout.n;
        let mut d = DualSet::zeros(nb, self.n_branch);
        // Cost blocks of buses without a quadratic term stay [[1,0],[0,0]].
        let mut links = vec![0.0; self.layout.links.len()];
        for (key, slot) in &self.slots {
            let v = match *slot {
                Slot::Var(i) => y[i],
                Slot::Fixed(v) => v,
            } / key.unit(self.cost_scale);
            use Key::*;
            match *key {
                LamLo(k) => d.lam_lo[k] = v,
                LamHi(k) => d.lam_hi[k] = v,
                LamD(k) => (d.lam_hi[k], d.lam_lo[k]) = (v.max(0.0), (-v).max(0.0)),
                GamLo(k) => d.gam_lo[k] = v,
                GamHi(k) => d.gam_hi[k] = v,
                GamD(k) => (d.gam_hi[k], d.gam_lo[k]) = (v.max(0.0), (-v).max(0.0)),
                MuLo(k) => d.mu_lo[k] = v,
                MuHi(k) => d.mu_hi[k] = v,
                MuD(k) => (d.mu_hi[k], d.mu_lo[k]) = (v.max(0.0), (-v).max(0.0)),
                BetaLo(l) => d.beta_lo[l] = v,
                BetaHi(l) => d.beta_hi[l] = v,
                H(l, 0, e) => d.h_from[l][e as usize] = v,
                H(l, _, e) => d.h_to[l][e as usize] = v,
                R12(k) => d.r12[k] = v,
                R22(k) => d.r22[k] = v,
                Link(t) => links[t] = v,
            }
        }
        (d, links)
    }

    /// Clique blocks `A_i` evaluated at a model-unit point, in physical units
    /// (compact form for Hermitian layouts).
    pub fn clique_blocks(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.layout.m())
            .map(|i| self.program.blocks[i].evaluate(y) * self.cost_scale)
            .collect()
    }

    pub fn n_free(&self) -> usize {
        self.keys.len()
    }

    pub fn is_free(&self, key: &Key) -> bool {
        matches!(self.slots.get(key), Some(Slot::Var(_)))
    }
}

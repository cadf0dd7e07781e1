#![allow(dead_code)]

pub mod graph;

use num_complex::Complex64;
use opfbound::chordal::{chordal_extend, CliqueDecomposition};
use opfbound::{build_admittance, build_matrix_set, NetworkCase, OpfMatrixSet};

pub const FIXTURES: [&str; 6] = ["case2", "case4_fig1", "case9", "case14", "case30", "case118"];

pub fn load(name: &str) -> NetworkCase {
    let path = format!("{}/fixtures/{name}.m", env!("CARGO_MANIFEST_DIR"));
    NetworkCase::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub struct Setup {
    pub case: NetworkCase,
    pub mats: OpfMatrixSet,
    pub dec: CliqueDecomposition,
}

pub fn setup(name: &str) -> Setup {
    let case = load(name);
    let mats = build_matrix_set(&case, &build_admittance(&case).unwrap()).unwrap();
    let dec = chordal_extend(case.n_bus(), &case.edges()).unwrap();
    Setup { case, mats, dec }
}

/// Per-branch complex power flows computed straight from the line data,
/// without going through the admittance matrix.
pub struct Flows {
    /// Net injection at each bus (generation minus load).
    pub s_bus: Vec<Complex64>,
    pub s_from: Vec<Complex64>,
    pub s_to: Vec<Complex64>,
}

pub fn flows(case: &NetworkCase, v: &[Complex64]) -> Flows {
    let j = Complex64::i();
    let mut s_bus: Vec<Complex64> = case
        .buses
        .iter()
        .zip(v)
        .map(|(b, vk)| vk.norm_sqr() * Complex64::new(b.gs, -b.bs))
        .collect();
    let mut s_from = Vec::new();
    let mut s_to = Vec::new();
    for br in &case.branches {
        let ys = 1.0 / Complex64::new(br.r, br.x);
        let t = Complex64::from_polar(if br.tap == 0.0 { 1.0 } else { br.tap }, br.shift);
        let ch = j * (br.b / 2.0);
        let (vf, vt) = (v[br.from], v[br.to]);
        let i_f = (ys + ch) / t.norm_sqr() * vf - ys / t.conj() * vt;
        let i_t = -ys / t * vf + (ys + ch) * vt;
        let sf = vf * i_f.conj();
        let st = vt * i_t.conj();
        s_bus[br.from] += sf;
        s_bus[br.to] += st;
        s_from.push(sf);
        s_to.push(st);
    }
    Flows { s_bus, s_from, s_to }
}

pub fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(b.abs()).max(1e-300)
}

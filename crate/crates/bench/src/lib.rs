//! Fixture loading shared by the benches.

use opfbound::chordal::{chordal_extend, CliqueDecomposition};
use opfbound::{build_admittance, build_matrix_set, NetworkCase, OpfMatrixSet};

pub struct Fixture {
    pub case: NetworkCase,
    pub mats: OpfMatrixSet,
    pub dec: CliqueDecomposition,
}

pub fn fixture(name: &str) -> Fixture {
    let path = format!("{}/../core/fixtures/{name}.m", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let case = NetworkCase::parse(&text).expect("fixture parses");
    let mats = build_matrix_set(&case, &build_admittance(&case).expect("admittance")).expect("matrices");
    let dec = chordal_extend(case.n_bus(), &case.edges()).expect("decomposition");
    Fixture { case, mats, dec }
}

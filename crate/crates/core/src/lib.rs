//! Lower bounds for AC optimal power flow from a local solution and a
//! chordal semidefinite relaxation.

pub mod error;
pub mod netcase;
pub mod opfmats;
pub mod chordal;
pub mod conic;
pub mod duals;
pub mod relaxations;
pub mod sparse;
pub mod localopf;
pub mod fastbound;

pub use error::{Error, Result};
pub use netcase::{build_admittance, AdmittanceMatrix, Branch, Bus, BusType, Gen, NetworkCase};
pub use opfmats::{build_matrix_set, eval_traces, InjectionReport, OpfMatrixSet, SymMat, VoltageVector};
pub use duals::{dense_dual_matrix, rho, DualSet};
pub use localopf::{lift_duals, solve_local, LocalOptions, LocalSolution, RawMultipliers, Start};
pub use fastbound::{run_algorithm1, run_with_local, BoundReport, FastboundOptions};

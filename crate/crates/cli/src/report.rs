//! Report rows, the versioned JSON envelope and error output.

use opfbound::chordal::CliqueDecomposition;
use opfbound::conic::SolveStatus;
use opfbound::relaxations::ExactnessReport;
use opfbound::{BoundReport, NetworkCase};
use serde::Serialize;

pub const REPORT_VERSION: u32 = 1;

/// One CSV line; the JSON report carries the same rows.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Row {
    pub case: String,
    pub mode: String,
    /// Percent.
    pub sigma: Option<f64>,
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap_pct: Option<f64>,
    pub solve_s: f64,
    pub psd_pct: Option<f64>,
    pub escalations: Option<usize>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CliqueStats {
    pub count: usize,
    pub max_size: usize,
    pub fill_edges: usize,
    pub linking_pairs: usize,
}

impl CliqueStats {
    pub fn of(dec: &CliqueDecomposition) -> Self {
        CliqueStats {
            count: dec.m(),
            max_size: dec.max_clique_size(),
            fill_edges: dec.fill_edges.len(),
            linking_pairs: dec.overlap_pairs.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: u32,
    pub case: String,
    pub buses: usize,
    pub branches: usize,
    pub mode: String,
    pub cliques: CliqueStats,
    pub decompose_s: f64,
    pub rows: Vec<Row>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fastbound: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exactness: Option<ExactnessReport>,
}

impl Report {
    pub fn new(case: &NetworkCase, mode: &str, cliques: CliqueStats, decompose_s: f64) -> Self {
        Report {
            version: REPORT_VERSION,
            case: case.name.clone(),
            buses: case.n_bus(),
            branches: case.branches.len(),
            mode: mode.to_string(),
            cliques,
            decompose_s,
            rows: Vec::new(),
            fastbound: Vec::new(),
            exactness: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }
}

pub fn status_name(s: SolveStatus) -> String {
    match serde_json::to_value(s) {
        Ok(serde_json::Value::String(v)) => v,
        _ => format!("{s:?}"),
    }
}

/// `{"version": 1, "error": {"kind": ..., "message": ...}}`
pub fn error_json(e: &anyhow::Error) -> String {
    let kind = match e.downcast_ref::<opfbound::Error>() {
        Some(core) => core.kind(),
        None if e.downcast_ref::<std::io::Error>().is_some() => "IoError",
        None => "UsageError",
    };
    serde_json::json!({
        "version": REPORT_VERSION,
        "error": { "kind": kind, "message": format!("{e:#}") },
    })
    .to_string()
}

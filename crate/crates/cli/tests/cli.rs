use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{name}.m"))
}

fn opfbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opfbound")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report is json")
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !(k.ends_with("_s") || k == "timings" || k == "solve_seconds"));
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn local_mode_has_objective_and_no_gap() {
    let case = fixture("case2");
    let rep = json(&opfbound(&["local", case.to_str().unwrap()]));
    assert_eq!(rep["version"], 1);
    let row = &rep["rows"][0];
    assert_eq!(row["mode"], "local");
    assert!((row["objective"].as_f64().unwrap() - 1100.0).abs() < 1e-4);
    assert!(row["gap_pct"].is_null() && row["bound"].is_null());
}

#[test]
fn full_sigma_matches_sdp_on_nine_buses() {
    let case = fixture("case9");
    let rep = json(&opfbound(&["fastbound", case.to_str().unwrap(), "--sigma", "100", "--compare-sdp"]));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let ours = rows[0]["bound"].as_f64().unwrap();
    let sdp = rows[1]["bound"].as_f64().unwrap();
    assert!((ours - sdp).abs() <= 1e-6 * sdp.abs());
    let fb = &rep["fastbound"][0];
    assert!(fb["dual_correspondence"]["percent"].as_f64().is_some());
}

#[test]
fn compare_emits_one_row_per_method_as_csv() {
    let case = fixture("case9");
    let out = opfbound(&["compare", case.to_str().unwrap(), "--report", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "case,mode,sigma,objective,bound,gap_pct,solve_s,psd_pct,escalations,status"
    );
    let modes: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["local", "fastbound", "sdp", "socp"]);
}

#[test]
fn sweep_rows_follow_the_sigma_list() {
    let case = fixture("case14");
    let rep = json(&opfbound(&["sweep", case.to_str().unwrap(), "--sigmas", "0,50,100"]));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let b: Vec<f64> = rows.iter().map(|r| r["bound"].as_f64().unwrap()).collect();
    assert!(b[0] <= b[1] * (1.0 + 1e-6) && b[1] <= b[2] * (1.0 + 1e-6));
}

#[test]
fn reruns_agree_apart_from_timings() {
    let case = fixture("case14");
    let run = || {
        let mut v = json(&opfbound(&["fastbound", case.to_str().unwrap(), "--compare-socp"]));
        strip_timings(&mut v);
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn external_local_solution_and_clique_dump() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case30");
    let saved = dir.path().join("local.json");
    let cliques = dir.path().join("cliques.json");
    let first = json(&opfbound(&[
        "fastbound",
        case.to_str().unwrap(),
        "--save-local",
        saved.to_str().unwrap(),
        "--dump-cliques",
        cliques.to_str().unwrap(),
    ]));
    let second = json(&opfbound(&["fastbound", case.to_str().unwrap(), "--local-solution", saved.to_str().unwrap()]));
    assert_eq!(first["rows"][0]["bound"], second["rows"][0]["bound"]);
    let dump: Value = serde_json::from_str(&std::fs::read_to_string(cliques).unwrap()).unwrap();
    assert_eq!(dump["cliques"].as_array().unwrap().len(), first["cliques"]["count"].as_u64().unwrap() as usize);
    assert!(dump["linking_entries"].as_u64().unwrap() > 0);
}

#[test]
fn merged_cliques_still_bound() {
    let case = fixture("case30");
    let plain = json(&opfbound(&["fastbound", case.to_str().unwrap(), "--sigma", "100"]));
    let merged = json(&opfbound(&["fastbound", case.to_str().unwrap(), "--sigma", "100", "--merge-cliques", "4"]));
    assert!(merged["cliques"]["count"].as_u64() < plain["cliques"]["count"].as_u64());
    let (a, b) = (plain["rows"][0]["bound"].as_f64().unwrap(), merged["rows"][0]["bound"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-6 * a.abs());
}

#[test]
fn sdp_mode_reports_exactness_and_dumps_result() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("sdp.json");
    let case = fixture("case9");
    let rep = json(&opfbound(&["sdp", case.to_str().unwrap(), "--dump-relaxation", dump.to_str().unwrap()]));
    assert_eq!(rep["exactness"]["rank1"], true);
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert_eq!(raw["status"], "optimal");
    let socp = json(&opfbound(&["sdp", case.to_str().unwrap(), "--relaxation", "socp"]));
    assert_eq!(socp["rows"][0]["mode"], "socp");
}

#[test]
fn failures_produce_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.m");
    std::fs::write(&bad, "mpc.bus = [1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;\n").unwrap();
    let out = opfbound(&["local", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).expect("error is json");
    assert_eq!(err["version"], 1);
    assert_eq!(err["error"]["kind"], "ParseError");

    let out = opfbound(&["local", dir.path().join("missing.m").to_str().unwrap()]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "IoError");
    assert!(!out.status.success());
}

#[test]
fn sigma_outside_range_is_rejected() {
    let case = fixture("case9");
    let out = opfbound(&["fastbound", case.to_str().unwrap(), "--sigma", "120"]);
    assert!(!out.status.success());
}

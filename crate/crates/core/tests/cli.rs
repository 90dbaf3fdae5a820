use std::path::Path;
use std::process::{Command, Output};

use rhfe::estimator::write_estimates_csv;
use rhfe::identification::{extract_markov, identify, Feedthrough};
use rhfe::robust::RobustDesigner;
use rhfe::sdp::ClarabelBackend;
use rhfe::simulator::{simulate_closed_loop, simulate_fault_free, vtol_model};
use rhfe::system_model::{relative_degree, FaultConfig};

fn rhfe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhfe")).args(args).current_dir(cwd).output().expect("spawn rhfe")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = rhfe(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn separate_processes_match_in_process_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--no-fault", "--N", "400", "--seed", "3", "--out", "id"], d);
    ok(&["identify", "--data", "id/trajectory.csv", "--p", "4", "--out", "id"], d);
    ok(&["design", "--mode", "alg2", "--ident", "id/identification.json", "--fault", "sensor:1,2", "--L", "8", "--out", "des"], d);
    ok(&["simulate", "--fault", "sensor:1,2", "--eta", "2", "--N", "80", "--seed", "4", "--out", "run"], d);
    ok(&["estimate", "--estimator", "des/estimator.json", "--data", "run/trajectory.csv", "--out", "est"], d);

    let (model, ctrl) = vtol_model();
    let cfg = FaultConfig::sensors(&[1, 2]);
    let id = identify(&simulate_fault_free(&model, &ctrl, 400, 3).unwrap(), 4, Feedthrough::KnownZero).unwrap();
    let markov = extract_markov(&id, &cfg).unwrap();
    let tau = relative_degree(&markov, 2).unwrap();
    let designer = RobustDesigner::new(&markov, 8, 4, tau).unwrap();
    let be = ClarabelBackend::default();
    let t = designer.default_tuning(&be).unwrap();
    let gain = designer.solve_offline(t.gamma_f2, t.gamma_z2, &be).unwrap();
    let run = simulate_closed_loop(
        &model,
        &ctrl.with_constant_reference(2.0),
        &rhfe::bench::evaluation_profile(2),
        &cfg,
        80,
        4,
    )
    .unwrap();
    let path = d.join("in_process.csv");
    write_estimates_csv(&path, &gain.estimate_trajectory(&run).unwrap(), gain.tau, 2).unwrap();
    let a = std::fs::read_to_string(&path).unwrap();
    let b = std::fs::read_to_string(d.join("est/estimates.csv")).unwrap();
    assert_eq!(a, b);
    assert!(b.lines().nth(1).unwrap().contains("nan"));
}

#[test]
fn fixed_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&["simulate", "--N", "60", "--seed", "9", "--eta", "1", "--out", out], d);
    }
    let a = std::fs::read(d.join("a/trajectory.csv")).unwrap();
    let b = std::fs::read(d.join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b);
    let head = String::from_utf8(a).unwrap();
    assert!(head.starts_with("k,u1,u2,y1,y2,y3,y4,f1,f2,eta1,eta2\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // missing file
    let out = rhfe(&["design", "--mode", "nominal", "--ident", "missing.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    // malformed flag value
    assert_eq!(rhfe(&["simulate", "--N", "many"], d).status.code(), Some(2));
    // unknown subcommand
    assert_eq!(rhfe(&["frobnicate"], d).status.code(), Some(2));
    // unparseable fault
    assert_eq!(rhfe(&["simulate", "--fault", "wing:1", "--out", "x"], d).status.code(), Some(2));
    // unknown figure
    assert_eq!(rhfe(&["bench", "vtol", "--figure", "9", "--N", "200", "--p", "3", "--L", "6"], d).status.code(), Some(2));
    // help is not an error
    assert_eq!(rhfe(&["--help"], d).status.code(), Some(0));
}

#[test]
fn tuning_below_lower_bound_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["identify", "--N", "300", "--p", "3", "--seed", "2", "--out", "id"], d);
    let out = rhfe(&["design", "--mode", "alg2", "--ident", "id/identification.json", "--L", "6", "--gamma-f2", "1e-9", "--out", "des"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_f2"));
}

#[test]
fn alg0_design_and_online_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["design", "--mode", "alg0", "--fault", "actuator:1,2", "--L", "10", "--m", "5", "--out", "d0"], d);
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("d0/estimator.json")).unwrap()).unwrap();
    assert_eq!(g["kind"], "alg0");
    assert_eq!(g["tau"], 1);
    assert_eq!(g["fault"], "actuator:1,2");

    ok(&["identify", "--N", "400", "--p", "4", "--seed", "5", "--out", "id"], d);
    ok(&["design", "--mode", "alg3", "--ident", "id/identification.json", "--L", "8", "--out", "d3"], d);
    ok(&["simulate", "--eta", "15", "--N", "12", "--seed", "6", "--out", "run"], d);
    ok(&[
        "estimate", "--mode", "alg3", "--estimator", "d3/estimator.json", "--ident", "id/identification.json", "--data",
        "run/trajectory.csv", "--alpha", "0", "--out", "e3",
    ], d);
    let log = std::fs::read_to_string(d.join("e3/gate_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("k,gate_fired,solver_status,solve_ms,gamma_f2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12 - 7);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("1")));
    // online needs the identification result
    let out = rhfe(&["estimate", "--mode", "alg3", "--estimator", "d3/estimator.json", "--data", "run/trajectory.csv"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_tradeoff_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["sweep", "--N", "400", "--p", "4", "--L", "8", "--points", "3", "--out", "sw"], d);
    let csv = std::fs::read_to_string(d.join("sw/tradeoff.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("gamma_f2,gamma_z2,bias_f,bias_z,variance,status"));
    assert_eq!(lines.count(), 9);
}

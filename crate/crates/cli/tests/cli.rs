use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use rescon_core::analysis::{min_reset_horizon, HorizonForm};
use rescon_core::controller_runtime::SimulationTrace;
use serde_json::Value;

fn rescon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rescon")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rescon(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn read_trace(p: &str) -> SimulationTrace {
    SimulationTrace::from_csv(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn default_simulation_settles_and_is_deterministic() {
    let a = ok(&["simulate"]).stdout;
    let b = ok(&["simulate"]).stdout;
    assert_eq!(a, b);
    let trace = SimulationTrace::from_csv(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(trace.rows.len(), 1000);
    assert!(trace.rows.last().unwrap().norm_x < 0.5);
    assert!(!trace.any_overflow());
}

#[test]
fn analysis_reports_consistent_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let cert = path(&dir, "cert.json");
    let report = json_of(
        &ok(&["analyze", "--controller", "reactor-t25", "--cert-out", &cert, "--delta", "55", "--mu", "-0.15"]).stdout,
    );
    let c = &report["certificate"];
    assert_eq!(c["status"], "certified");
    let (delta, mu, eps) = (c["delta"].as_f64().unwrap(), c["mu"].as_f64().unwrap(), c["eps_bar"].as_f64().unwrap());
    let t = c["T"].as_u64().unwrap();
    assert_eq!(t, min_reset_horizon(delta, mu, eps, HorizonForm::PeriodMinusOne).unwrap());
    assert_eq!(
        report["horizons"]["T_period"].as_u64().unwrap(),
        min_reset_horizon(delta, mu, eps, HorizonForm::Period).unwrap()
    );
    assert_eq!(report["given"]["T_period"], 25);
    assert!(report["lifted_spectral_radius"]["value"].as_f64().unwrap() < 1.0);
    let bound = report["word_length_bound"].as_f64().unwrap();
    assert!((10.0..=24.0).contains(&bound), "{bound}");

    let verdict = json_of(&ok(&["verify-certificate", "--cert", &cert]).stdout);
    assert_eq!(verdict["contraction"]["passed"], true);

    let mut tampered: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    tampered["delta"] = Value::from(1.0);
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, tampered.to_string()).unwrap();
    let out = rescon(&["verify-certificate", "--cert", &bad]);
    assert!(!out.status.success());
    let err = json_of(&out.stderr);
    assert_eq!(err["error"], "certificate-rejected");
    assert!(err["failures"].as_array().unwrap().iter().any(|f| f == "reset_gain"));
}

#[test]
fn overflow_demo_contrasts_the_two_loops() {
    let dir = tempfile::tempdir().unwrap();
    let (r, nr) = (path(&dir, "r.csv"), path(&dir, "nr.csv"));
    let summary = json_of(
        &ok(&[
            "demo-overflow",
            "--controller",
            "reactor-t8",
            "--ring-bits",
            "2014",
            "--out-resetting",
            &r,
            "--out-non-resetting",
            &nr,
        ])
        .stdout,
    );
    assert_eq!(summary["ring_bits"], 2014);
    let kept = read_trace(&r);
    let x0 = kept.rows[0].norm_x;
    assert!(kept.rows[800..].iter().all(|row| row.norm_x < 0.01 * x0));
    assert!(!kept.any_overflow());
    let lost = read_trace(&nr);
    assert!(lost.max_norm_x() > 1e6 * x0);
    assert!(summary["non_resetting"]["stopped_at"].is_u64());
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&dir, "run.json");
    std::fs::write(
        &cfg,
        r#"{"controller": "reactor-t8", "T": 8, "ring_bits": "auto", "horizon": 40, "realization": "quantized"}"#,
    )
    .unwrap();
    let out = path(&dir, "t.csv");
    ok(&["simulate", "--config", &cfg, "--horizon", "12", "--out", &out]);
    assert_eq!(read_trace(&out).rows.len(), 12);

    std::fs::write(&cfg, r#"{"horizon": 5, "colour": "blue"}"#).unwrap();
    let bad = rescon(&["simulate", "--config", &cfg]);
    assert!(!bad.status.success());
    assert_eq!(json_of(&bad.stderr)["error"], "parse");
}

#[test]
fn invalid_configurations_name_the_invariant() {
    let out = rescon(&["simulate", "--ring-bits", "100"]);
    assert!(!out.status.success());
    let err = json_of(&out.stderr);
    assert_eq!(err["error"], "invalid-config");
    assert_eq!(err["invariant"], "ring holds a full period");

    let out = rescon(&["simulate", "--realization", "encrypted", "--key-bits", "256", "--horizon", "1"]);
    assert_eq!(json_of(&out.stderr)["invariant"], "kappa_p >= 2^(ring bits + 1)");

    let out = rescon(&["simulate", "--ring-bits", "auto", "--no-reset"]);
    assert_eq!(json_of(&out.stderr)["invariant"], "ring width given");
}

#[test]
fn keygen_file_drives_the_loopback_demo() {
    let dir = tempfile::tempdir().unwrap();
    let key = path(&dir, "key.json");
    let public = path(&dir, "pub.json");
    ok(&["keygen", "--bits", "512", "--seed", "3", "--out", &key, "--public-out", &public]);
    let public: Value = serde_json::from_str(&std::fs::read_to_string(&public).unwrap()).unwrap();
    assert!(public.get("lambda").is_none());
    let trace = path(&dir, "nd.csv");
    let summary = json_of(
        &ok(&[
            "netdemo",
            "loopback",
            "--key",
            &key,
            "--ring-bits",
            "281",
            "--horizon",
            "20",
            "--check",
            "--out",
            &trace,
        ])
        .stdout,
    );
    assert_eq!(summary["matches_in_process"], true);
    assert_eq!(read_trace(&trace).rows.len(), 20);
}

#[test]
fn cloud_and_plant_processes_interoperate() {
    let mut cloud = Command::new(env!("CARGO_BIN_EXE_rescon"))
        .args(["netdemo", "cloud", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(cloud.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = json_of(line.as_bytes())["listening"].as_str().unwrap().to_owned();
    let plant = ok(&[
        "netdemo",
        "plant",
        "--connect",
        &addr,
        "--key-bits",
        "512",
        "--ring-bits",
        "281",
        "--horizon",
        "10",
        "--session-id",
        "77",
    ]);
    let trace = SimulationTrace::from_csv(std::str::from_utf8(&plant.stdout).unwrap()).unwrap();
    assert_eq!(trace.rows.len(), 10);
    let done = cloud.wait_with_output().unwrap();
    assert!(done.status.success());
    let report = json_of(&done.stdout);
    assert_eq!(report["session_id"], 77);
    assert_eq!(report["steps"], 10);
}

#[test]
fn synthesis_and_reconstruction_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let plant = path(&dir, "plant.json");
    std::fs::write(
        &plant,
        r#"{"A": [[1.0, 0.1], [0.0, 1.0]], "B": [[0.005], [0.1]], "C": [[1.0, 0.0]], "x0": [1.0, 0.0]}"#,
    )
    .unwrap();
    let solver = path(&dir, "solver.json");
    std::fs::write(&solver, r#"{"mu_grid": [-0.2, -0.1], "restarts": 1}"#).unwrap();
    let (nu, ctrl) = (path(&dir, "nu.json"), path(&dir, "ctrl.json"));
    ok(&["synthesize", "--plant", &plant, "--solver", &solver, "--out", &nu, "--controller-out", &ctrl]);
    let result: Value = serde_json::from_str(&std::fs::read_to_string(&nu).unwrap()).unwrap();
    assert_eq!(result["status"], "feasible");
    let t = result["T"].as_u64().unwrap().to_string();

    let rec = json_of(&ok(&["reconstruct", "--nu", &nu, "--plant", &plant]).stdout);
    for key in ["P", "controller", "U", "V"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    let report = json_of(&ok(&["analyze", "--plant", &plant, "--controller", &ctrl, "-T", &t]).stdout);
    assert_eq!(report["certificate"]["status"], "certified");
    assert!(report["configured_period"]["lifted_spectral_radius"].as_f64().unwrap() < 1.0);
    assert!(Path::new(&ctrl).exists());
}

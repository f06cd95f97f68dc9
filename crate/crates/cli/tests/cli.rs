use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MODEL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/models/repeater.json");

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opaqnet")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("opaqnet-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn verify_golden_and_exit_codes() {
    let o = run(&["verify", MODEL, "--target", "O_fg", "--epsilon", "0.05"]);
    assert_eq!(code(&o), 2);
    assert_eq!(String::from_utf8(o.stdout.clone()).unwrap(), golden("verify_o_fg.json"));
    let r = json(&o);
    assert_eq!(r["per_observation"][0]["leakage_exact"], "1/2");
    assert_eq!(r["structural_opaque"], true);

    assert_eq!(code(&run(&["verify", MODEL, "--target", "O_fg", "--epsilon", "0.5"])), 0);

    let o = run(&["verify", MODEL, "--target", "req<fail", "--epsilon", "1"]);
    assert_eq!(code(&o), 2);
    let r = json(&o);
    assert_eq!(r["structural_opaque"], false);
    assert_eq!(r["per_observation"][0]["leakage"], 1.0);
}

#[test]
fn malformed_inputs_exit_1() {
    let d = scratch("bad");
    let bad = d.join("bad.json");
    std::fs::write(&bad, "{\"control_places\": [").unwrap();
    let o = run(&["verify", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&run(&["verify", MODEL, "--target", "nope"])), 1);
    assert_eq!(code(&run(&["verify", MODEL, "--epsilon", "2"])), 1);
}

#[test]
fn reports_are_deterministic_across_job_counts() {
    let a = run(&["--jobs", "1", "verify", MODEL]);
    let b = run(&["--jobs", "4", "verify", MODEL]);
    let c = Command::new(env!("CARGO_BIN_EXE_opaqnet")).env("OPAQNET_JOBS", "2").args(["verify", MODEL]).output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    assert_eq!(json(&a)["model_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn enforce_finds_masking_policy() {
    let o = run(&["enforce", MODEL, "--target", "O_fg", "--epsilon", "0.05"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout.clone()).unwrap(), golden("enforce_o_fg.json"));
    let r = json(&o);
    assert_eq!(r["policy"]["mu"][0]["p"], "9/10");
    assert!(r["report"]["per_observation"][0]["leakage"].as_f64().unwrap() <= 0.05 + 1e-12);

    let d = scratch("enforce");
    let o = run(&["enforce", MODEL, "--target", "O_fg", "--epsilon", "0.05", "-o", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["policy.json", "audit.json", "report.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
}

#[test]
fn enforce_failures_exit_3() {
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(MODEL).unwrap()).unwrap();
    for t in m["transitions"].as_array_mut().unwrap() {
        if t["id"] == "t_pur_sec" {
            t["controllable"] = Value::Bool(false);
        }
    }
    m["architecture"]["masking_catalog"] = Value::Array(vec![]);
    let d = scratch("uncontrollable");
    let path = d.join("model.json");
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let o = run(&["enforce", path.to_str().unwrap(), "--target", "O_fg", "--epsilon", "0.05"]);
    assert_eq!(code(&o), 3);
    assert!(json(&o)["policy"]["mu"].as_array().unwrap().is_empty());

    assert_eq!(code(&run(&["enforce", MODEL, "--target", "O_fg", "--epsilon", "0.05", "--max-iterations", "0"])), 3);
}

#[test]
fn bench_writes_csv_and_plot_data() {
    let d = scratch("bench");
    let o = run(&["bench", "--m", "0,4,8", "--repetitions", "1", "-o", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("m,n_seq,t_interleaving_ms,t_quotient_ms,speedup"));
    let n_seq: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(n_seq, ["1", "35", "165"]);
    let plot: Value = serde_json::from_str(&std::fs::read_to_string(d.join("bench_plot.json")).unwrap()).unwrap();
    assert_eq!(plot["n_seq"], serde_json::json!([1, 35, 165]));
}

#[test]
fn oracle_suite_summary() {
    let o = run(&["oracle", "--cases", "200", "--max-qubits", "4"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("200/200 pass"));
    let o = run(&["oracle", "--suite", "all", "--cases", "10", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn certificates_round_trip_through_files() {
    let d = scratch("cert");
    let ds = d.to_str().unwrap();
    assert_eq!(code(&run(&["certify", MODEL, "--target", "O_fg", "-o", ds])), 0);
    let rep = d.join("report.json");
    let o = run(&["verify", MODEL, "--target", "O_fg", "-o", ds]);
    assert_eq!(code(&o), 2);
    for b in ["0", "1"] {
        let cert = d.join(format!("O_fg.{b}.cert.json"));
        assert_eq!(code(&run(&["check-cert", cert.to_str().unwrap(), rep.to_str().unwrap()])), 0);
    }
    let c0: Value = serde_json::from_str(&std::fs::read_to_string(d.join("O_fg.0.cert.json")).unwrap()).unwrap();
    assert_eq!(c0["class"], "pure-stabilizer");
    assert_eq!(c0["generators"], serde_json::json!(["+Z"]));

    let mut forged = c0.clone();
    forged["coefficients"]["Z"] = Value::String("1/4".into());
    forged["class"] = Value::String("general".into());
    let f = d.join("forged.json");
    std::fs::write(&f, forged.to_string()).unwrap();
    assert_eq!(code(&run(&["check-cert", f.to_str().unwrap(), rep.to_str().unwrap()])), 2);
}

#[test]
fn fmt_is_idempotent_on_bundled_model() {
    assert_eq!(code(&run(&["fmt", MODEL, "--check"])), 0);
    let o = run(&["fmt", MODEL]);
    assert_eq!(o.stdout, std::fs::read(MODEL).unwrap());
}

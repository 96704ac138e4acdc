use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bloch-hom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn bands_print_a_csv_table() {
    let o = run(&["bands", "--preset", "free", "--points", "4", "--count", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k1,E1,E2,E3"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.len(), 4);
        assert!((r[1] - r[0] * r[0]).abs() < 1e-10);
    }
}

#[test]
fn bands_accept_a_custom_path() {
    let o = run(&[
        "bands", "--preset", "mathieu", "--path", "0;0.5", "--points", "2", "--count", "2",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn selftest_succeeds() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 4);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
}

#[test]
fn threshold_writes_a_record() {
    let o = run(&["threshold", "--preset", "dirac"]);
    assert!(o.status.success());
    let rec = json(&stdout(&o));
    assert_eq!(rec["n"], 2);
    assert!((rec["lambda0"].as_f64().unwrap() - std::f64::consts::PI.powi(2)).abs() < 1e-8);
}

#[test]
fn threshold_verification_holds() {
    let report = scratch("verify.json");
    let csv = scratch("verify.csv");
    let o = run(&[
        "threshold",
        "--preset",
        "mathieu-edge",
        "--verify",
        "--out",
        report.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&std::fs::read_to_string(&report).unwrap());
    assert!(doc["ledger"]["c7"].as_f64().unwrap() > 0.0);
    assert_eq!(
        doc["cutoff_refinement"]["relative_change"]
            .as_array()
            .unwrap()
            .len(),
        9
    );
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next(), Some("dk,tau,lhs,rhs,margin"));
    assert_eq!(table.lines().count(), 10);
}

#[test]
fn effective_tensors_feed_evolve() {
    let tensors = scratch("tensors.json");
    let o = run(&[
        "effective",
        "--preset",
        "mathieu",
        "--out",
        tensors.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rec = json(&std::fs::read_to_string(&tensors).unwrap());
    assert!(rec.is_object());

    let fresh = run(&[
        "evolve",
        "--preset",
        "mathieu",
        "--epsilon",
        "0.05",
        "--tau",
        "1",
    ]);
    let loaded = run(&[
        "evolve",
        "--preset",
        "mathieu",
        "--epsilon",
        "0.05",
        "--tau",
        "1",
        "--tensors",
        tensors.to_str().unwrap(),
    ]);
    assert!(fresh.status.success() && loaded.status.success());
    assert_eq!(fresh.stdout, loaded.stdout);
    let err = String::from_utf8(fresh.stderr.clone()).unwrap();
    let line = err.lines().find(|l| l.starts_with("error ")).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    let e: f64 = fields[1].parse().unwrap();
    let b: f64 = fields[3].parse().unwrap();
    assert!(e > 0.0 && e <= b);
    let csv = stdout(&fresh);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .starts_with("xi1,weight,amp_re,amp_im"));
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn evolve_writes_a_snapshot() {
    let snap = scratch("snapshot.csv");
    let o = run(&[
        "evolve",
        "--preset",
        "free",
        "--epsilon",
        "0.1",
        "--tau",
        "0.5",
        "--grid",
        "11",
        "--snapshot",
        snap.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&snap).unwrap().lines().count(), 12);
}

#[test]
fn converge_reports_free_noise_floor() {
    let report = scratch("converge.json");
    let csv = scratch("converge.csv");
    let o = run(&[
        "converge",
        "--preset",
        "free",
        "--out",
        report.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let doc = json(&std::fs::read_to_string(&report).unwrap());
    assert_eq!(doc["all_bounds_hold"], true);
    assert_eq!(doc["fits"][0]["status"], "noise_floor");
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(
        table.starts_with("epsilon,tau,error,bound_outer,bound_inner,bound,certified,bound_holds")
    );
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn config_files_are_read() {
    let path = scratch("mathieu.json");
    let o = run(&[
        "converge",
        "--preset",
        "mathieu",
        "--out",
        scratch("m.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    std::fs::write(
        &path,
        r#"{"lattice": [[1.0]], "threshold": {"k0": [0.0], "band": 1}}"#,
    )
    .unwrap();
    let o = run(&["threshold", "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&stdout(&o))["n"], 1);
}

#[test]
fn bad_input_exits_with_two() {
    let path = scratch("broken.json");
    std::fs::write(&path, "{").unwrap();
    let o = run(&["converge", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error:"));
    let o = run(&[
        "threshold",
        "--config",
        scratch("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "evolve",
        "--preset",
        "free",
        "--epsilon",
        "-1",
        "--tau",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_bloch-hom"))
        .args(["selftest"])
        .env("BLOCHHOM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

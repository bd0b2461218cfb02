use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_edgesplit"));
    for var in [
        "EDGESPLIT_MODEL",
        "EDGESPLIT_GEN",
        "EDGESPLIT_SCENARIO",
        "EDGESPLIT_TABLES",
        "EDGESPLIT_BIND",
        "EDGESPLIT_CLOUD",
    ] {
        c.env_remove(var);
    }
    c
}

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn edgesplit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(':'))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
}

#[test]
fn plan_on_fixture() {
    let sc = fixture("scenarios/paper-shape.scenario");
    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--bw", "10MBps"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(field(&text, "split_layer").starts_with('0'), "{text}");

    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--bw", "1MB/s", "--solver", "bnb"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(!field(&text, "split_layer").starts_with('0'), "{text}");
}

#[test]
fn zero_budget_only_takes_lossless_cells() {
    let sc = fixture("scenarios/paper-shape-1mbps.scenario");
    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--max-loss", "0"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let loss: f64 = field(&text, "predicted_accuracy_loss").parse().unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn plan_record_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("plan.txt");
    let sc = fixture("scenarios/small-loopback.scenario");
    let o = run(&[
        "plan",
        "--scenario",
        sc.to_str().unwrap(),
        "--record",
        rec.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(rec).unwrap();
    assert!(text.contains("epoch=") && text.contains("split_layer="), "{text}");
}

#[test]
fn missing_tables_is_a_usage_error() {
    let sc = fixture("scenarios/paper-shape.scenario");
    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--tables", "/nonexistent/t.json"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--bw", "fast"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let sc = fixture("scenarios/bandwidth-step.scenario");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = run(&[
            "simulate",
            "--scenario",
            sc.to_str().unwrap(),
            "--requests",
            "50",
            "--interval",
            "0.1",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["requests.csv", "summary.txt"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = std::fs::read_to_string(dirs[0].path().join("requests.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let sc = fixture("scenarios/paper-shape-1mbps.scenario");
    let o = run(&[
        "sweep",
        "accuracy",
        "--scenario",
        sc.to_str().unwrap(),
        "--values",
        "0,0.01,0.05,0.1",
        "--requests",
        "5",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 5, "{text}");
    let means: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

struct Cloud(Child);

impl Drop for Cloud {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_cloud() -> (Cloud, String, BufReader<std::process::ChildStdout>) {
    let mut child = bin()
        .args(["serve-cloud", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    (Cloud(child), addr, out)
}

#[test]
fn loopback_pair_serves_ten_requests() {
    let (mut cloud, addr, mut cloud_out) = start_cloud();
    let sc = fixture("scenarios/small-loopback.scenario");
    let g = fixture("generators/small.gen.toml");
    let o = run(&[
        "run-edge",
        "--cloud",
        &addr,
        "--scenario",
        sc.to_str().unwrap(),
        "--gen",
        g.to_str().unwrap(),
        "--requests",
        "10",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("request=")).count(), 10);
    assert!(text.contains("epoch_violations=0") && text.contains("digest_mismatches=0"), "{text}");

    let status = Command::new("kill")
        .args(["-INT", &cloud.0.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(cloud.0.wait().unwrap().success());
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut cloud_out, &mut rest).unwrap();
    assert!(rest.contains("cloud stats:") && rest.contains("results=10"), "{rest}");
}

#[test]
fn unreachable_cloud_fails() {
    // Grab a free port, then release it so nothing listens there.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let sc = fixture("scenarios/small-loopback.scenario");
    let g = fixture("generators/small.gen.toml");
    let o = run(&[
        "run-edge",
        "--cloud",
        &format!("127.0.0.1:{port}"),
        "--scenario",
        sc.to_str().unwrap(),
        "--gen",
        g.to_str().unwrap(),
        "--requests",
        "2",
        "--max-attempts",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}

#[test]
fn reports_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let sc = fixture("scenarios/paper-shape.scenario");
    let o = run(&[
        "report",
        "plot-data",
        "--scenario",
        sc.to_str().unwrap(),
        "--requests",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    for f in ["amplification.csv", "compression.csv", "accuracy_sweep.csv", "bandwidth_sweep.csv", "trace_run.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f}");
    }
    let m = fixture("models/vgg16.profile");
    let o = run(&["report", "amplification", "--model", m.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 22);
}

#[test]
fn gen_and_build_tables_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture("models/small.profile");
    let spec = dir.path().join("g.toml");
    let tables = dir.path().join("t.json");
    let o = run(&["gen", "spec", "--model", m.to_str().unwrap(), "--seed", "7", "--out", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let o = run(&[
        "build-tables",
        "--model",
        m.to_str().unwrap(),
        "--gen",
        spec.to_str().unwrap(),
        "--samples",
        "20",
        "--bits",
        "2,4",
        "--out",
        tables.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let o = run(&["report", "tables", "--tables", tables.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() > 1);
}

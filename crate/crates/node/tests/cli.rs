use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn offgrid(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_offgrid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run offgrid");
    assert!(
        out.status.success(),
        "offgrid {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn fresh_node_bootstrap_by_cli() {
    let dir = tempfile::tempdir().unwrap();
    let ca = dir.path().join("ca");
    let config = dir.path().join("node.toml");
    std::fs::write(
        &config,
        format!(
            "node_id = 4660\nzipcode = \"8050\"\ndata_dir = {:?}\ntrust_root = {:?}\n",
            dir.path().join("node"),
            ca.join("root.pem")
        ),
    )
    .unwrap();
    let req = dir.path().join("req.pem");
    let chain = dir.path().join("chain.pem");

    offgrid(&["node", "identity", "init-authority", "--dir", p(&ca), "--name", "Graz"]);
    offgrid(&[
        "node",
        "identity",
        "request",
        "--config",
        p(&config),
        "--name",
        "Mara",
        "--user-id",
        "mara",
        "--out",
        p(&req),
    ]);
    assert!(std::fs::read_to_string(&req).unwrap().contains("SIGNING REQUEST"));
    offgrid(&[
        "node",
        "identity",
        "approve",
        "--authority",
        p(&ca),
        "--request",
        p(&req),
        "--out",
        p(&chain),
    ]);
    let imported = stdout(&offgrid(&[
        "node",
        "identity",
        "import",
        "--config",
        p(&config),
        "--chain",
        p(&chain),
    ]));
    assert!(imported.contains("\"active\""), "{imported}");
    let posted = stdout(&offgrid(&[
        "node",
        "post",
        "--config",
        p(&config),
        "first light at the school",
    ]));
    assert!(posted.contains("\"queued\": true"), "{posted}");

    let listed = stdout(&offgrid(&["node", "messages", "--config", p(&config)]));
    assert!(listed.contains("first light at the school"), "{listed}");
    assert!(listed.contains("\"sender_user_id\": \"mara\""));
}

#[test]
fn analyze_reproduces_the_field_summary_fixtures() {
    let dir = fixtures().join("field_summary");
    let expected = std::fs::read_to_string(dir.join("expected.csv")).unwrap();
    for line in expected.lines().skip(1) {
        let f: Vec<&str> = line.splitn(4, ',').collect();
        let out = stdout(&offgrid(&[
            "analyze",
            "csv",
            "--in",
            p(&dir.join(format!("{}.csv", f[0]))),
            "--frequency",
            f[1],
            "--channel",
            f[2],
        ]));
        let row = out.lines().nth(1).unwrap();
        assert_eq!(row, format!("{},{},{}", f[1], f[2], f[3]));
    }
}

#[test]
fn scenario_fixtures_match_the_template() {
    for (band, preset) in [
        ("EU868", "LongFast"),
        ("EU868", "ShortFast"),
        ("EU433", "LongFast"),
        ("EU433", "ShortFast"),
    ] {
        let name = format!("{}-{}.toml", band.to_lowercase(), preset.to_lowercase());
        let on_disk = std::fs::read_to_string(fixtures().join("scenarios").join(name)).unwrap();
        let printed = stdout(&offgrid(&[
            "sim", "template", "--band", band, "--preset", preset, "--seed", "1",
        ]));
        assert_eq!(printed.trim_end(), on_disk.trim_end());
    }
}

#[test]
fn sim_run_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixtures().join("scenarios/eu433-shortfast.toml");
    let csv = dir.path().join("rx.csv");
    let log = dir.path().join("tx.csv");
    let events = dir.path().join("events.jsonl");
    let summary = stdout(&offgrid(&[
        "sim",
        "run",
        "--scenario",
        p(&scenario),
        "--seed",
        "3",
        "--csv",
        p(&csv),
        "--sender-log",
        p(&log),
        "--events",
        p(&events),
    ]));
    assert!(summary.contains("\"seed\": 3"), "{summary}");
    let first = std::fs::read(&csv).unwrap();
    assert!(std::fs::read_to_string(&events).unwrap().lines().count() > 10);

    offgrid(&[
        "sim",
        "run",
        "--scenario",
        p(&scenario),
        "--seed",
        "3",
        "--csv",
        p(&csv),
    ]);
    assert_eq!(std::fs::read(&csv).unwrap(), first);

    let bins = stdout(&offgrid(&[
        "analyze",
        "csv",
        "--in",
        p(&csv),
        "--mode",
        "senderlog",
        "--sender-log",
        p(&log),
        "--emit",
        "bins",
    ]));
    assert!(bins.lines().count() > 2, "{bins}");
}

#[test]
fn bad_input_fails_with_a_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_offgrid"))
        .args(["analyze", "csv", "--in", "/nonexistent.csv"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

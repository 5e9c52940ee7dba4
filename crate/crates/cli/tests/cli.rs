use std::path::Path;
use std::process::{Command, Output};

fn dqo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqo"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("run dqo")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dqo(dir, args);
    assert!(
        out.status.success(),
        "dqo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn generated(args: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut full = vec!["--chunk-capacity", "8192", "generate", "--scale", "1"];
    full.extend_from_slice(args);
    ok(dir.path(), &full);
    dir
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (generated(&[]), generated(&[]));
    for file in ["date_dim.csv", "customer.csv", "sales.csv", "constraints.txt", "workload.txt"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let other = tempfile::tempdir().unwrap();
    ok(other.path(), &["--seed", "8", "generate"]);
    assert_ne!(
        std::fs::read(a.path().join("sales.csv")).unwrap(),
        std::fs::read(other.path().join("sales.csv")).unwrap()
    );
}

#[test]
fn load_summarizes_tables() {
    let dir = generated(&[]);
    let out = ok(dir.path(), &["load"]);
    assert!(out.contains("sales rows=100000"), "{out}");
    assert!(out.contains("declared constraints: 4"), "{out}");
}

#[test]
fn discover_then_run_with_json_metrics() {
    let dir = generated(&[]);
    let dry = ok(dir.path(), &["discover", "--dry-run"]);
    assert!(dry.contains("IND sales(s_sold_date) -> date_dim(d_sk)"), "{dry}");
    assert!(!dir.path().join("metadata.txt").exists());

    let table = ok(dir.path(), &["discover"]);
    assert!(table.contains("continuity_confirm"), "{table}");
    let metadata = std::fs::read_to_string(dir.path().join("metadata.txt")).unwrap();
    assert!(metadata.contains("valid"), "{metadata}");

    let out = ok(dir.path(), &["--metrics", "json", "run", "--query", "customer_day"]);
    let record: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(record["query"], "customer_day");
    assert_eq!(record["mode"], "discovered");
    assert!(record["chunks_pruned_dynamic"].as_u64().unwrap() > 0, "{record}");
    assert!(record["rows_per_operator"].as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn modes_return_the_same_rows() {
    let dir = generated(&[]);
    let rows = |mode: &str| ok(dir.path(), &["run", "--query", "year_total", "--mode", mode, "--rows"]);
    let base = rows("baseline");
    let csv = |s: &str| s.lines().skip(1).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(csv(&base), csv(&rows("schema")));
    assert_eq!(csv(&base), csv(&rows("discovered")));
}

#[test]
fn explain_shows_rewrites() {
    let dir = generated(&[]);
    let out = ok(dir.path(), &["explain", "--query", "customer_day"]);
    assert!(out.contains("aggregate group=[c_sk]"), "{out}");
    assert!(out.contains("$0.value(d_sk)"), "{out}");
    assert!(out.contains("# join-to-predicate-eq"), "{out}");
    let baseline = ok(dir.path(), &["explain", "--query", "customer_day", "--mode", "baseline"]);
    assert!(!baseline.contains("# "), "{baseline}");
}

#[test]
fn violated_inclusion_is_rejected() {
    let dir = generated(&["--violate", "ind"]);
    let out = ok(dir.path(), &["--metrics", "json", "discover"]);
    let ind = out
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|r| r["candidate"] == "IND sales(s_sold_date) -> date_dim(d_sk)")
        .expect("IND candidate reported");
    assert_eq!(ind["verdict"], "rejected", "{ind}");
    assert_eq!(ind["path"], "minmax_reject", "{ind}");
}

#[test]
fn fallback_only_agrees() {
    let dir = generated(&[]);
    let verdicts = |extra: &[&str]| {
        let mut args = vec!["--metrics", "json", "discover"];
        args.extend_from_slice(extra);
        std::fs::remove_file(dir.path().join("metadata.txt")).ok();
        let mut v: Vec<(String, String)> = ok(dir.path(), &args)
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
            .filter(|r| r["status"] != "skipped-valid" && r["status"] != "skipped")
            .map(|r| (r["candidate"].to_string(), r["verdict"].to_string()))
            .collect();
        v.sort();
        v
    };
    let fast = verdicts(&[]);
    for (candidate, verdict) in verdicts(&["--fallback-only"]) {
        if let Some((_, v)) = fast.iter().find(|(c, _)| *c == candidate) {
            assert_eq!(*v, verdict, "{candidate}");
        }
    }
}

#[test]
fn bench_reports_every_mode() {
    let dir = generated(&[]);
    let out = ok(dir.path(), &["--metrics", "json", "bench", "--repetitions", "1"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 15);
    assert_eq!(report["repetitions"], 1);
}

#[test]
fn usage_errors() {
    let dir = generated(&[]);
    let out = dqo(dir.path(), &["bench", "--repetitions", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("repetitions"));

    let out = dqo(dir.path(), &["run", "--mode", "fast"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown mode"));

    let out = dqo(dir.path(), &["run", "--query", "nope"]);
    assert!(!out.status.success());

    let empty = tempfile::tempdir().unwrap();
    assert!(!dqo(empty.path(), &["generate", "--scale", "0"]).status.success());
    assert!(!dqo(&empty.path().join("missing"), &["load"]).status.success());
}

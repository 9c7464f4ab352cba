use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sa_core::eval::ClusterSpec;
use tempfile::TempDir;

fn sa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "failed: {}", stderr(&o));
    o
}

/// A small three-class trace set written as CSV, with matching labels.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write_set(dir.path(), "train", 90, 1.0);
        write_set(dir.path(), "queries", 25, 0.37);
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn train_args(&self) -> Vec<String> {
        vec![
            "--train".into(),
            self.p("train.csv"),
            "--labels".into(),
            self.p("train.labels"),
        ]
    }

    fn query_args(&self) -> Vec<String> {
        vec![
            "--queries".into(),
            self.p("queries.csv"),
            "--query-labels".into(),
            self.p("queries.labels"),
        ]
    }

    fn run(&self, head: &[&str], tail: &[&str]) -> Output {
        let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        args.extend(self.train_args());
        args.extend(tail.iter().map(|s| s.to_string()));
        sa(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }

    fn calc(&self, method: &str, out: &str, extra: &[&str]) -> Vec<u8> {
        let mut tail: Vec<String> = self.query_args();
        tail.extend(["-o".to_string(), self.p(out)]);
        tail.extend(extra.iter().map(|s| s.to_string()));
        let tail: Vec<&str> = tail.iter().map(String::as_str).collect();
        ok(self.run(&["calc", "--method", method], &tail));
        std::fs::read(self.path(out)).unwrap()
    }
}

fn write_set(dir: &Path, stem: &str, n: usize, phase: f64) {
    let mut rows = String::new();
    let mut labels = String::new();
    for i in 0..n {
        let c = i % 3;
        let t = i as f64 * phase;
        let (x, y, z) = (
            4.0 * c as f64 + t.sin(),
            (1.7 * t).cos() - 2.0 * c as f64,
            (0.3 * t).sin() * 0.5,
        );
        rows.push_str(&format!("{x},{y},{z}\n"));
        labels.push_str(&format!("{c}\n"));
    }
    std::fs::write(dir.join(format!("{stem}.csv")), rows).unwrap();
    std::fs::write(dir.join(format!("{stem}.labels")), labels).unwrap();
}

#[test]
fn prep_reports_fingerprint_then_cache_hit() {
    let f = Fixture::new();
    let cache = f.p("cache");
    for method in ["lsa", "dsa"] {
        let first = ok(f.run(&["prep", "--method", method], &["--cache", &cache]));
        let text = stdout(&first);
        assert!(text.starts_with("fingerprint: "), "{text}");
        assert!(text.contains("prepared: "), "{text}");
        let again = stdout(&ok(
            f.run(&["prep", "--method", method], &["--cache", &cache])
        ));
        assert!(again.contains("cache hit: "), "{again}");
        assert_eq!(text.lines().next(), again.lines().next());
    }
}

#[test]
fn missing_labels_file_is_a_usage_error_naming_the_path() {
    let f = Fixture::new();
    let missing = f.p("nope.labels");
    let o = sa(&[
        "prep",
        "--method",
        "dsa",
        "--train",
        &f.p("train.csv"),
        "--labels",
        &missing,
        "--cache",
        &f.p("cache"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
}

#[test]
fn full_uniform_sampling_matches_plain_run() {
    let f = Fixture::new();
    for method in ["lsa", "dsa"] {
        let plain = f.calc(method, "plain.csv", &[]);
        let sampled = f.calc(method, "sampled.csv", &["--sampling", "uniform:1.0"]);
        assert_eq!(plain, sampled, "{method}");
        assert!(String::from_utf8(plain)
            .unwrap()
            .starts_with("index,score\n"));
    }
}

#[test]
fn score_files_do_not_depend_on_threads_or_batch_size() {
    let f = Fixture::new();
    let base = f.calc("dsa", "t1.csv", &["--threads", "1"]);
    for (i, extra) in [
        ["--threads", "8", "--batch-size", "1"],
        ["--threads", "8", "--batch-size", "7"],
        ["--threads", "1", "--batch-size", "25"],
    ]
    .iter()
    .enumerate()
    {
        assert_eq!(f.calc("dsa", &format!("v{i}.csv"), extra), base);
    }
}

#[test]
fn lsa_with_non_uniform_sampling_needs_force() {
    let f = Fixture::new();
    let q = f.query_args();
    let mut tail: Vec<&str> = q.iter().map(String::as_str).collect();
    tail.extend(["--sampling", "unsurprising:0.5"]);
    let o = f.run(&["calc", "--method", "lsa"], &tail);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    tail.push("--force");
    ok(f.run(&["calc", "--method", "lsa"], &tail));
    // DSA takes any strategy.
    tail.pop();
    ok(f.run(&["calc", "--method", "dsa"], &tail));
}

#[test]
fn sample_writes_selection_usable_by_calc() {
    let f = Fixture::new();
    let sel = f.p("sel.json");
    ok(f.run(
        &["sample"],
        &["--sampling", "neighborfree:eps=0.5", "-o", &sel],
    ));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sel).unwrap()).unwrap();
    assert_eq!(json["parent_len"], 90);
    let scores = f.calc("dsa", "sel_scores.csv", &["--selection", &sel]);
    assert_eq!(String::from_utf8(scores).unwrap().lines().count(), 26);
}

fn synth_spec(dir: &Path) -> String {
    let spec = ClusterSpec::lattice(3, 1, 2, 10.0, 1.0, (150, 40, 40), 4.0);
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn eval_on_synthetic_data_writes_reports() {
    let dir = TempDir::new().unwrap();
    let spec = synth_spec(dir.path());
    let prefix = dir.path().join("report");
    let o = ok(sa(&[
        "eval",
        "--synth",
        &spec,
        "--methods",
        "lsa,dsa",
        "--ratios",
        "0.5",
        "--replicas",
        "2",
        "--threads",
        "1",
        "-o",
        prefix.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert!(
        csv.starts_with("method,strategy,parameter,replicas,"),
        "{csv}"
    );
    // Two methods, each with the sampled cell and the 1.0 baseline.
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(stdout(&o), csv);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 4);
    assert!(prefix.with_extension("dat").exists());
}

#[test]
fn eval_rejects_ratio_above_one() {
    let dir = TempDir::new().unwrap();
    let spec = synth_spec(dir.path());
    let o = sa(&[
        "eval",
        "--synth",
        &spec,
        "--methods",
        "dsa",
        "--ratios",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let o = ok(sa(&[
        "bench",
        "--dsa",
        "--ratios",
        "0.5,1.0",
        "-N",
        "300",
        "-Q",
        "100",
        "-D",
        "8",
        "--classes",
        "3",
        "--reps",
        "1",
        "--threads",
        "1,2",
        "-o",
        out.to_str().unwrap(),
    ]));
    assert!(stdout(&o).contains("speedup vs naive at 2 thread(s)"));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,impl,threads,N,Q,D,ms,qps"));
    // naive, optimized at 1 and 2 threads, two sampling ratios
    assert_eq!(lines.count(), 5);
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let cfg = f.path("run.json");
    std::fs::write(
        &cfg,
        r#"{"method": "dsa", "train": "train.csv", "labels": "train.labels",
            "queries": "queries.csv", "query_labels": "queries.labels",
            "threads": 1, "out": "from_config.csv"}"#,
    )
    .unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    ok(sa(&["calc", "--config", &cfg]));
    let dsa = std::fs::read_to_string(f.path("from_config.csv")).unwrap();
    assert_eq!(dsa.into_bytes(), f.calc("dsa", "direct.csv", &[]));

    ok(sa(&[
        "calc",
        "--config",
        &cfg,
        "--method",
        "lsa",
        "-o",
        &f.p("flag.csv"),
    ]));
    assert_eq!(
        std::fs::read(f.path("flag.csv")).unwrap(),
        f.calc("lsa", "direct_lsa.csv", &[])
    );

    std::fs::write(f.path("bad.json"), r#"{"metod": "dsa"}"#).unwrap();
    let o = sa(&["calc", "--config", &f.p("bad.json")]);
    assert_eq!(o.status.code(), Some(2));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rfann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfann"))
        .args(args)
        .output()
        .expect("spawn rfann")
}

fn ok(args: &[&str]) -> String {
    let out = rfann(args);
    assert!(
        out.status.success(),
        "rfann {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Self { _dir: dir, root };
        ok(&[
            "gen-data",
            "--out-vectors",
            &f.p("v.fvecs"),
            "--out-attributes",
            &f.p("a.csv"),
            "--n",
            "1500",
            "--dim",
            "8",
            "--clusters",
            "16",
            "--cluster-std",
            "0.1",
        ]);
        ok(&[
            "gen-queries",
            "--vectors",
            &f.p("v.fvecs"),
            "--attributes",
            &f.p("a.csv"),
            "-o",
            &f.p("q.jsonl"),
            "--count",
            "30",
        ]);
        ok(&[
            "build",
            "--vectors",
            &f.p("v.fvecs"),
            "--attributes",
            &f.p("a.csv"),
            "-o",
            &f.p("i.gmg"),
            "--cells",
            "4",
            "--degree",
            "8",
            "--ef",
            "32",
            "--histogram-clusters",
            "16",
        ]);
        f
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_owned()
    }
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn query_and_oracle_round_trip() {
    let f = Fixture::new();
    let n = f.p("i.gmg");
    let q = f.p("q.jsonl");
    ok(&["query", "--index", &n, "--queries", &q, "--beam", "1500", "--rerank", "1500", "--s-thre", "5", "-o", &f.p("r.jsonl")]);
    ok(&["oracle", "--index", &n, "--queries", &q, "-o", &f.p("o.jsonl")]);
    let got = lines(Path::new(&f.p("r.jsonl")));
    let want = lines(Path::new(&f.p("o.jsonl")));
    assert_eq!(got.len(), 30);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g["query"], w["query"]);
        assert_eq!(g["ids"], w["ids"]);
        assert!(g["stats"]["distance_evals"].as_u64().unwrap() > 0);
        assert!(w.get("stats").is_none());
    }
    let from_files = ok(&[
        "oracle",
        "--vectors",
        &f.p("v.fvecs"),
        "--attributes",
        &f.p("a.csv"),
        "--queries",
        &q,
    ]);
    assert_eq!(from_files, fs::read_to_string(f.p("o.jsonl")).unwrap());
}

#[test]
fn bench_outputs_and_config_file() {
    let f = Fixture::new();
    let n = f.p("i.gmg");
    let q = f.p("q.jsonl");
    let csv = ok(&["bench", "--index", &n, "--queries", &q, "--simulated", "--beams", "16,64"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "beam,recall,qps,p50_ms,p99_ms");
    assert!(rows[1].starts_with("16,") && rows[2].starts_with("64,"));

    fs::write(
        f.p("cfg.toml"),
        "[bench]\nsimulated = true\nbeams = [16, 64]\nout_of_core = true\nbatch_size = 1\nstage_depth = 2\n",
    )
    .unwrap();
    let streamed = ok(&[
        "--config",
        &f.p("cfg.toml"),
        "bench",
        "--index",
        &n,
        "--queries",
        &q,
        "--timeline",
        &f.p("t.csv"),
        "--beams",
        "32",
    ]);
    assert_eq!(streamed.lines().count(), 2);
    assert!(streamed.lines().nth(1).unwrap().starts_with("32,"));
    let timeline = fs::read_to_string(f.p("t.csv")).unwrap();
    let mut t = timeline.lines();
    assert_eq!(t.next(), Some("stage,batch,start_ns,end_ns"));
    let spans: Vec<Vec<&str>> = t.map(|l| l.split(',').collect()).collect();
    assert_eq!(spans.len(), 12);
    assert!(spans.iter().any(|s| s[0] == "load" && s[1] == "3"));

    let err = rfann(&["bench", "--index", &n, "--queries", &q, "--timeline", &f.p("x.csv")]);
    assert!(!err.status.success());
    assert!(String::from_utf8_lossy(&err.stderr).contains("--out-of-core"));
}

#[test]
fn schedule_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("a.txt");
    fs::write(&text, "1 0 1 0\n1,0,1,0\n# comment\n0 1 0 1\n0 1 0 1\n").unwrap();
    let json = dir.path().join("a.json");
    fs::write(&json, "[[1,0,1,0],[1,0,1,0],[0,1,0,1],[0,1,0,1]]").unwrap();
    for path in [&text, &json] {
        let p = path.to_str().unwrap();
        let out: serde_json::Value = serde_json::from_str(&ok(&["schedule", "--incidence", p, "--batch-size", "2"])).unwrap();
        assert_eq!(out["batches"], serde_json::json!([[0, 2], [1, 3]]));
        assert_eq!(out["costs"], serde_json::json!([2, 2]));
        assert_eq!(out["identity_total_cost"], 8);
        let exact: serde_json::Value =
            serde_json::from_str(&ok(&["schedule", "--incidence", p, "--batch-size", "2", "--exact"])).unwrap();
        assert_eq!(exact["total_cost"], 4);
        let naive: serde_json::Value =
            serde_json::from_str(&ok(&["schedule", "--incidence", p, "--batch-size", "2", "--naive"])).unwrap();
        assert_eq!(naive["total_cost"], 8);
    }
    fs::write(&text, "1 2\n").unwrap();
    assert!(!rfann(&["schedule", "--incidence", text.to_str().unwrap(), "--batch-size", "2"]).status.success());
}

#[test]
fn advise_cells_reports() {
    let out: serde_json::Value =
        serde_json::from_str(&ok(&["advise-cells", "--n", "1000000", "--alpha", "0.5", "--sigma", "0.0625"])).unwrap();
    assert_eq!(out["argmin"], 3);
    assert!(out["curve"].as_array().unwrap().len() >= 2);
    assert!(!rfann(&["advise-cells", "--n", "1000", "--alpha", "1.5", "--sigma", "0.1"]).status.success());
    assert!(!rfann(&["advise-cells", "--alpha", "0.5"]).status.success());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = rfann(&["query", "--index", "/nonexistent/i.gmg", "--queries", "/nonexistent/q"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.gmg");
    fs::write(&junk, b"NOPE and more bytes than a header needs.............................").unwrap();
    let out = rfann(&["query", "--index", junk.to_str().unwrap(), "--queries", "/dev/null"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

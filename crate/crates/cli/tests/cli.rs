use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dope_core::qkdp::read_dump;
use dope_core::rope::{Indicator, Stage};
use serde_json::Value;
use tempfile::TempDir;

fn dope(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dope"));
    cmd.args(args).env_remove("QKDP_THREADS");
    if let Some(t) = threads {
        cmd.env("QKDP_THREADS", t);
    }
    cmd.output().expect("spawn dope")
}

fn ok(args: &[&str]) {
    let out = dope(args, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    dope(args, None).status.code().expect("exit code")
}

fn load(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn schema_check(name: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.v1.json"));
    let schema = load(&path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn manifest_of(path: &Path) -> Value {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    let m = load(Path::new(&name));
    schema_check("run-manifest", &m);
    m
}

struct Work(TempDir);

impl Work {
    fn new() -> Self {
        Work(tempfile::tempdir().unwrap())
    }

    fn p(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }

    /// 2 layers × 4 heads, n=64, sink on (0,1).
    fn dump(&self) -> String {
        let out = self.s("d.qkdp");
        ok(&["simulate", "--n", "64", "--d-h", "16", "--sink", "0:1", "--out", &out]);
        out
    }
}

#[test]
fn score_select_apply_round_trip() {
    let w = Work::new();
    let dump = w.dump();
    let (r, r2, full) = (w.s("r.json"), w.s("r2.json"), w.s("full.json"));
    let score = |entropy: &str, out: &str| {
        ok(&["score", "--dump", &dump, "--indicator", "key", "--stage", "post_ntk", "--entropy", entropy, "--out", out])
    };
    score("trunc:1", &r);
    score("trunc:1", &r2);
    assert_eq!(std::fs::read(&r).unwrap(), std::fs::read(&r2).unwrap());

    let report = load(Path::new(&r));
    schema_check("entropy-report", &report);
    assert_eq!(report["report"]["heads"].as_array().unwrap().len(), 8);
    let m = manifest_of(Path::new(&r));
    assert_eq!(m["command"], "score");
    assert_eq!(m["inputs"][0]["sha256"], report["source"]["sha256"]);

    score("full", &full);
    let full = load(Path::new(&full));
    schema_check("entropy-report", &full);
    for h in full["report"]["heads"].as_array().unwrap() {
        let e = h["score"].as_f64().unwrap();
        assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&e), "full entropy {e}");
    }

    let sel = w.s("s.json");
    ok(&["select", "--report", &r, "--k", "3", "--order", "DESC", "--out", &sel]);
    let sel = load(Path::new(&sel));
    schema_check("selection", &sel);
    assert_eq!(sel["selected"].as_array().unwrap().len(), 3);
    assert_eq!(sel["report_digest"], report["report_digest"]);
    let top = &report["ranking"].as_array().unwrap()[7];
    assert!(sel["selected"].as_array().unwrap().iter().any(|h| h["layer"] == top["layer"] && h["head"] == top["head"]));
    assert_eq!(code(&["select", "--report", &r, "--k", "9", "--out", &w.s("bad.json")]), 3);

    let (out, plan) = (w.s("o.qkdp"), w.s("plan.json"));
    ok(&["apply", "--dump", &dump, "--preset", "table1-best-gaussian", "--out", &out, "--plan", &plan]);
    let plan = load(Path::new(&plan));
    schema_check("plan", &plan);
    assert_eq!(plan["plan"]["selected"].as_array().unwrap().len(), 3);
    let denoised = read_dump(&out).unwrap();
    assert!(denoised.has_stage(Stage::PostRope, Indicator::Key));
    assert!(!denoised.has_stage(Stage::PostNtk, Indicator::Key));
    assert!(manifest_of(Path::new(&out))["outputs"].as_array().unwrap().len() >= 2);
}

#[test]
fn by_all_zeroes_one_head() {
    let w = Work::new();
    let dump = w.dump();
    let (out, plan) = (w.s("o.qkdp"), w.s("plan.json"));
    ok(&["apply", "--dump", &dump, "--preset", "table1-best-by-all", "--out", &out, "--plan", &plan]);
    let d = read_dump(&out).unwrap();
    let zeroed = |ind| {
        d.stage(Stage::PostRope, ind)
            .unwrap()
            .iter()
            .filter(|t| t.values.data().iter().all(|v| *v == 0.0))
            .map(|t| (t.layer, t.head))
            .collect::<Vec<_>>()
    };
    let keys = zeroed(Indicator::Key);
    assert_eq!(keys.len(), 1);
    assert_eq!(keys, zeroed(Indicator::Query));
    let sel = &load(Path::new(&plan))["plan"]["selected"][0];
    assert_eq!((sel["layer"].as_u64().unwrap() as usize, sel["head"].as_u64().unwrap() as usize), keys[0]);
}

#[test]
fn config_file_and_usage_errors() {
    let w = Work::new();
    let dump = w.dump();
    let cfg = w.p("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"variant":"by-parts","indicator":"query","entropy_type":"trunc:4","num_heads":2,
            "criterion_stage":"post_ntk","sort_order":"ASC","training_length":32}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(&["apply", "--dump", &dump, "--config", cfg, "--out", &w.s("o.qkdp"), "--plan", &w.s("p.json")]);

    std::fs::write(w.p("junk.json"), "{\"variant\":").unwrap();
    let out = w.s("x.qkdp");
    let p = w.s("xp.json");
    assert_eq!(code(&["apply", "--dump", &dump, "--config", &w.s("junk.json"), "--out", &out, "--plan", &p]), 2);
    assert_eq!(code(&["apply", "--dump", &dump, "--preset", "nope", "--out", &out, "--plan", &p]), 2);
    assert_eq!(code(&["apply", "--dump", &dump, "--out", &out, "--plan", &p]), 2);
    assert!(!Path::new(&out).exists());
}

#[test]
fn missing_stage_is_data_error() {
    let w = Work::new();
    let dump = w.dump();
    let (out, plan) = (w.s("o.qkdp"), w.s("p.json"));
    ok(&["apply", "--dump", &dump, "--preset", "table1-best-by-all", "--out", &out, "--plan", &plan]);
    // The denoised dump keeps post-rope tensors only.
    assert_eq!(code(&["score", "--dump", &out, "--indicator", "key", "--stage", "post_ntk", "--out", &w.s("r.json")]), 3);
    assert_eq!(code(&["apply", "--dump", &out, "--preset", "table1-best-by-all", "--out", &w.s("o2.qkdp"), "--plan", &plan]), 3);
    assert_eq!(code(&["score", "--dump", &w.s("absent.qkdp"), "--indicator", "key", "--stage", "post_ntk", "--out", &w.s("r.json")]), 3);
}

#[test]
fn verify_bounds_small_and_empty_sweeps() {
    let w = Work::new();
    std::fs::write(w.p("small.json"), r#"{"ensembles":4,"ns":[64,256]}"#).unwrap();
    let csv = w.s("w.csv");
    ok(&["verify-bounds", "--sweep", &w.s("small.json"), "--out", &csv]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "bound_id,N,gamma,omega,lhs,rhs,satisfied,M,tight,ensemble");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 4 random ensembles plus one coherent ensemble per N, 9 bounds each
    assert_eq!(rows.len(), 9 * (4 + 2));
    assert!(rows.iter().all(|r| r[6] == "true"));
    assert!(rows.iter().any(|r| r[8] == "true"));
    manifest_of(Path::new(&csv));

    std::fs::write(w.p("empty.json"), r#"{"ensembles":0,"coherent":false}"#).unwrap();
    assert_eq!(code(&["verify-bounds", "--sweep", &w.s("empty.json"), "--out", &w.s("e.csv")]), 2);
    std::fs::write(w.p("typo.json"), r#"{"ensemble":3}"#).unwrap();
    assert_eq!(code(&["verify-bounds", "--sweep", &w.s("typo.json"), "--out", &w.s("e.csv")]), 2);
}

#[test]
fn scaling_report() {
    let w = Work::new();
    let (out, csv) = (w.s("sc.json"), w.s("sc.csv"));
    ok(&["scaling", "--ns", "256,512,1024", "--out", &out, "--csv", &csv]);
    let doc = load(Path::new(&out));
    schema_check("scaling", &doc);
    assert!(doc["study"]["lambda_fit"]["r_squared"].as_f64().unwrap() >= 0.99);
    assert!(doc["study"]["sigma_fit"]["r_squared"].as_f64().unwrap() >= 0.99);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn sink_report_before_after() {
    let w = Work::new();
    let out = w.s("sink.json");
    ok(&["sink-report", "--synth", "--before-after", "--out", &out]);
    let doc = load(Path::new(&out));
    schema_check("sink-report", &doc);
    let heads = doc["heads"].as_array().unwrap();
    let sink = heads.iter().find(|h| h["layer"] == 0 && h["head"] == 1).unwrap();
    assert_eq!(sink["selected"], true);
    let (before, after) = (sink["before"]["sink_score"].as_f64().unwrap(), sink["after"]["sink_score"].as_f64().unwrap());
    assert!(before > 10.0 * after, "before {before} after {after}");
    for h in heads.iter().filter(|h| h["selected"] == false) {
        assert_eq!(h["before"], h["after"]);
    }

    let dump = w.dump();
    let plain = w.s("plain.json");
    ok(&["sink-report", "--dump", &dump, "--out", &plain]);
    let doc = load(Path::new(&plain));
    schema_check("sink-report", &doc);
    assert!(doc["heads"][0].get("after").is_none());
}

#[test]
fn thread_count_and_explicit_manifest() {
    let w = Work::new();
    let (out, man) = (w.s("d.qkdp"), w.s("custom.json"));
    let run = dope(&["simulate", "--n", "16", "--d-h", "8", "--out", &out, "--manifest", &man], Some("2"));
    assert!(run.status.success());
    let m = load(Path::new(&man));
    schema_check("run-manifest", &m);
    assert_eq!(m["threads"], 2);
    assert_eq!(m["command"], "simulate");
    let bad = dope(&["simulate", "--out", &w.s("e.qkdp")], Some("zero"));
    assert_eq!(bad.status.code(), Some(2));
}

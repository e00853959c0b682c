use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use miner::corpus::make_global_split;
use miner::llm::gold_output;
use miner::synth::{generate_corpus, SynthConfig};

const SMALL: &str = r#"
preset = "native"
output_dir = "out"

[corpus.synthetic]
municipalities = 3
docs_per_municipality = 4
body_sentences = 20

[meter]
watts = 50.0
carbon_intensity = 0.4
"#;

fn miner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miner")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn recipe(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("recipe.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn json(path: impl AsRef<Path>) -> Value {
    let p = path.as_ref();
    serde_json::from_str(&std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let o = miner(args);
    assert_eq!(code(&o), 0, "{args:?}\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn prepare_manifest_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), "[corpus.synthetic]\nmunicipalities = 6\ndocs_per_municipality = 20\nbody_sentences = 10\n");
    let r = r.to_str().unwrap();
    run_ok(&["--recipe", r, "prepare"]);
    let m = json(dir.path().join("out/prepared/manifest.json"));
    assert_eq!(m["documents"], 120);
    assert_eq!(m["qa_instances"], 240);
    let first = m["files"].clone();
    run_ok(&["--recipe", r, "prepare"]);
    assert_eq!(json(dir.path().join("out/prepared/manifest.json"))["files"], first);
    let cfg = json(dir.path().join("out/prepare.config.json"));
    assert_eq!(cfg["recipe_hash"], m["recipe_hash"]);
    assert_eq!(cfg["recipe"]["split"]["seed"], 42);
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = recipe(dir.path(), "[corpus]\npath = \"nope.jsonl\"\n");
    let o = miner(&["--recipe", missing.to_str().unwrap(), "prepare"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));

    let unknown = recipe(dir.path(), "[corpus.synthetic]\n[ner]\nepochz = 1\n");
    assert_eq!(code(&miner(&["--recipe", unknown.to_str().unwrap(), "prepare"])), 2);
    assert_eq!(code(&miner(&["prepare"])), 2);
    let no_meter = recipe(dir.path(), "[corpus.synthetic]\n");
    assert_eq!(code(&miner(&["--recipe", no_meter.to_str().unwrap(), "--meter", "on", "prepare"])), 2);
    assert!(!dir.path().join("out/prepared").exists());
}

#[test]
fn deslex_writes_training_copy_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), &format!("{SMALL}\n[deslex]\nseed = 5\n"));
    run_ok(&["--recipe", r.to_str().unwrap(), "deslex"]);
    let text = std::fs::read_to_string(dir.path().join("out/deslex/train.jsonl")).unwrap();
    assert!(text.contains("@MUNICIPIO"));
    assert_eq!(json(dir.path().join("out/deslex/provenance.json"))["seed"], 5);
}

#[test]
fn train_extract_eval_and_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        municipalities: 3,
        docs_per_municipality: 4,
        body_sentences: 20,
        ..SynthConfig::default()
    };
    // canned responses for the mock endpoint
    let corpus = generate_corpus(&cfg).unwrap();
    let responses = dir.path().join("responses");
    std::fs::create_dir_all(&responses).unwrap();
    for d in corpus.docs() {
        std::fs::write(responses.join(format!("{}.txt", d.doc.doc_id)), gold_output(d).to_string()).unwrap();
    }
    let r = recipe(dir.path(), &format!("{SMALL}\n[llm]\nresponses = \"responses\"\n"));
    let r = r.to_str().unwrap();
    let out = dir.path().join("out");

    run_ok(&["--recipe", r, "train"]);
    for m in ["mbd", "mer"] {
        assert!(out.join("models").join(m).join("meta.json").exists());
    }

    // extract from the corpus file and from a directory of text files
    let corpus_file = dir.path().join("docs.jsonl");
    miner::corpus::write_corpus(&corpus_file, corpus.docs()).unwrap();
    run_ok(&["--recipe", r, "extract", "--input", corpus_file.to_str().unwrap()]);
    let lines = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), corpus.len());
    let res = json(out.join("resources.json"));
    assert!(res["total"]["kg_co2e"].is_number());

    let txt = dir.path().join("txt");
    std::fs::create_dir_all(&txt).unwrap();
    for d in corpus.docs().iter().take(3) {
        std::fs::write(txt.join(format!("{}.txt", d.doc.doc_id)), &d.doc.text).unwrap();
    }
    let o2 = dir.path().join("out2");
    let (qa, ner) = (out.join("models/mbd"), out.join("models/mer"));
    let args = [
        "--recipe", r, "--meter", "off", "--out", o2.to_str().unwrap(), "extract", "--input", txt.to_str().unwrap(),
        "--qa-model", qa.to_str().unwrap(), "--ner-model", ner.to_str().unwrap(),
    ];
    run_ok(&args);
    let recs: Vec<_> = std::fs::read_dir(o2.join("records")).unwrap().collect();
    assert_eq!(recs.len(), 3);
    let res = json(o2.join("resources.json"));
    assert!(res["total"].get("energy_kwh").is_none());
    let rec = json(o2.join("records").join(format!("{}.json", corpus.docs()[0].doc.doc_id)));
    assert!(rec["date"]["value"].is_string());

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&miner(&["--recipe", r, "extract", "--input", empty.to_str().unwrap()])), 2);

    run_ok(&["--recipe", r, "eval", "--protocol", "global"]);
    let report = json(out.join("eval/global.json"));
    let names: Vec<_> = report["models"].as_array().unwrap().iter().map(|m| m["name"].as_str().unwrap().to_string()).collect();
    assert_eq!(names, ["mbd", "bm25", "dense", "mer", "pipeline"]);
    let table = run_ok(&["report", out.join("eval/global.json").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("[pipeline]"));

    run_ok(&["--recipe", r, "bench-llm"]);
    let bench = json(out.join("eval/llm.json"));
    assert_eq!(bench["models"][0]["entities"]["micro"]["f1"], 1.0);
    assert!(bench["ratios"]["latency_ratio"].is_number());
    assert!(bench["ratios"]["carbon_ratio"].is_number());
    let split = make_global_split(&corpus, 42, false).unwrap();
    let cached = std::fs::read_dir(out.join("llm_cache")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(std::fs::read_dir(cached).unwrap().count(), split.test.len());

    // a missing canned response is isolated to its document but fails the run
    std::fs::remove_dir_all(out.join("llm_cache")).unwrap();
    std::fs::remove_file(responses.join(format!("{}.txt", split.test[0]))).unwrap();
    let o = miner(&["--recipe", r, "bench-llm"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(out.join("eval/llm.json"))["failures"].as_array().unwrap().len(), 1);
}

#[test]
fn loo_and_incremental_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), SMALL);
    let r = r.to_str().unwrap();
    run_ok(&["--recipe", r, "eval", "--protocol", "loo"]);
    let loo = json(dir.path().join("out/eval/loo.json"));
    assert_eq!(loo["folds"].as_array().unwrap().len(), 3);
    run_ok(&["--recipe", r, "eval", "--protocol", "incremental", "--municipality", "Montalvo", "--k-max", "2"]);
    let inc = json(dir.path().join("out/eval/incremental-Montalvo.json"));
    let ks: Vec<_> = inc["curve"].as_array().unwrap().iter().map(|p| p["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, [0, 1, 2]);
    let o = miner(&["--recipe", r, "eval", "--protocol", "incremental", "--municipality", "Atlantis"]);
    assert_eq!(code(&o), 2);
}

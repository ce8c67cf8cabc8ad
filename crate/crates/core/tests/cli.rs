use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hallucimc::orchestrator::read_store;
use hallucimc::QueryRecord;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny.jsonl");
const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/config.toml");

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hallucimc"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_dataset(path: &Path, queries: &[QueryRecord]) {
    let mut f = std::fs::File::create(path).unwrap();
    for q in queries {
        writeln!(f, "{}", serde_json::to_string(q).unwrap()).unwrap();
    }
}

fn simulate(dir: &Path, dataset: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("run.jsonl");
    let mut args = vec![
        "simulate",
        "--dataset",
        s(dataset),
        "--backend",
        "simulated",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn simulate_writes_one_line_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--seed", "7", "--config", CONFIG]);
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, 6);
    assert!(dir.path().join("run.jsonl.manifest.json").exists());
}

#[test]
fn missing_dataset_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "simulate",
        "--dataset",
        s(&dir.path().join("nope.jsonl")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(cli(&["simulate", "--backend", "oracle"]).status.code(), Some(2));
}

#[test]
fn resume_on_complete_store_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--seed", "7"]);
    let before = std::fs::read(&out).unwrap();
    let text = ok(&[
        "simulate",
        "--dataset",
        FIXTURE,
        "--backend",
        "simulated",
        "--seed",
        "7",
        "--out",
        s(&out),
        "--resume",
    ]);
    assert!(text.contains("written 0"), "{text}");
    assert_eq!(std::fs::read(&out).unwrap(), before);
}

#[test]
fn unanimous_store_reports_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--sim-prob", "1.0"]);
    let csv = dir.path().join("m.csv");
    ok(&["metrics", "--store", s(&out), "--csv", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    for key in [
        "base_accuracy",
        "mode_accuracy",
        "lower_bound",
        "upper_bound",
        "item_difficulty",
        "mean_certainty",
        "gibbs_m2",
        "fleiss_kappa",
        "cronbach_alpha",
    ] {
        let i = header.iter().position(|h| *h == key).unwrap();
        assert_eq!(row[i], "1.000000", "{key}");
    }
}

#[test]
fn half_probability_histogram_is_binomial() {
    let dir = tempfile::tempdir().unwrap();
    let m = 3000;
    let queries: Vec<QueryRecord> = (0..m)
        .map(|i| QueryRecord::abstractive(format!("q{i}"), format!("Question {i}?"), "Jane Austen"))
        .collect();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, &queries);
    let out = simulate(dir.path(), &data, &["--sim-prob", "0.5", "--seed", "3"]);
    let hist = dir.path().join("h.csv");
    ok(&["metrics", "--store", s(&out), "--histogram-csv", s(&hist)]);
    let text = std::fs::read_to_string(&hist).unwrap();
    let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    for (c, line) in text.lines().skip(1).enumerate() {
        let count: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let p = binom[c] / 64.0;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((count - m as f64 * p).abs() <= 3.0 * sigma, "class {c}: {count}");
    }
}

#[test]
fn group_by_scenario_adds_weighted_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--seed", "1"]);
    let csv = dir.path().join("g.csv");
    ok(&[
        "metrics",
        "--store",
        s(&out),
        "--group-by",
        "scenario",
        "--csv",
        s(&csv),
    ]);
    let groups: Vec<String> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(groups, ["extractive", "multiple_choice", "abstractive", "weighted"]);
}

#[test]
fn report_bundle_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--seed", "2"]);
    let json = dir.path().join("r.json");
    let text = ok(&["report", "--store", s(&out), "--out", s(&json)]);
    assert!(text.contains("16.7% (y=1)"));
    let bundle: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let hist: Vec<u64> = serde_json::from_value(bundle["label_histogram"]["counts"].clone()).unwrap();
    assert_eq!(hist.iter().sum::<u64>(), 6);
    let (no, yes): (u64, u64) = serde_json::from_value(bundle["binary_counts"].clone()).unwrap();
    assert_eq!((no, yes), (hist[0], hist[1..].iter().sum()));
    let outcomes: u64 = bundle["outcome_counts"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(outcomes, 6);
}

fn graded_corpus(dir: &Path, name: &str, size: usize) -> PathBuf {
    // Even queries are always answered, odd ones mostly missed.
    let queries: Vec<QueryRecord> = (0..size)
        .map(|i| {
            let word = if i % 2 == 0 { "simple" } else { "obscure" };
            QueryRecord::abstractive(
                format!("{name}{i}"),
                format!("A {word} question {i}?"),
                format!("answer {i}"),
            )
        })
        .collect();
    let data = dir.join(format!("{name}.jsonl"));
    write_dataset(&data, &queries);
    let mut profile = hallucimc::agents::SimulatedAgentProfile::new(5);
    for (i, q) in queries.iter().enumerate() {
        profile
            .per_query_correct_prob
            .insert(q.id.clone(), if i % 2 == 0 { 1.0 } else { 0.3 });
    }
    let prof = dir.join(format!("{name}.profile.json"));
    std::fs::write(&prof, serde_json::to_string(&profile).unwrap()).unwrap();
    let store = dir.join(format!("{name}.store.jsonl"));
    ok(&[
        "simulate",
        "--dataset",
        s(&data),
        "--backend",
        "simulated",
        "--sim-profile",
        s(&prof),
        "--out",
        s(&store),
    ]);
    let labels = dir.join(format!("{name}.labels.jsonl"));
    ok(&["label", "--store", s(&store), "--out", s(&labels)]);
    labels
}

#[test]
fn train_and_eval_both_heads() {
    let dir = tempfile::tempdir().unwrap();
    let train = graded_corpus(dir.path(), "train", 200);
    let test = graded_corpus(dir.path(), "test", 60);
    let model = dir.path().join("bin.json");
    ok(&[
        "train",
        "--data",
        s(&train),
        "--valid",
        s(&test),
        "--out",
        s(&model),
        "--dim",
        "64",
        "--epochs",
        "20",
        "--lr",
        "0.05",
        "--tune-threshold",
        "--config",
        CONFIG,
    ]);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert!(saved["tau"].is_number());
    let text = ok(&["eval", "--model", s(&model), "--data", s(&test), "--mode", "binary"]);
    assert!(text.contains("| accuracy |") && text.contains("| f1 |"), "{text}");

    // Ordinal training needs every class; store files parse as label rows.
    let all = dir.path().join("all.jsonl");
    let mut rows = String::new();
    for c in 0..=6u32 {
        for k in 0..10 {
            let mut ind = vec![1u8; c as usize];
            ind.resize(6, 0);
            rows.push_str(&format!(
                "{{\"id\":\"o{c}-{k}\",\"scenario\":\"abstractive\",\"text\":\"level{c} item {k}\",\"p_h_num\":{c},\"p_h_den\":6,\"binary_label\":{},\"class_label\":{c},\"outcome\":\"consensus\"}}\n",
                u8::from(c > 0)
            ));
        }
    }
    std::fs::write(&all, rows).unwrap();
    let ord = dir.path().join("ord.json");
    ok(&[
        "train",
        "--data",
        s(&all),
        "--mode",
        "multiclass",
        "--out",
        s(&ord),
        "--dim",
        "32",
        "--epochs",
        "5",
    ]);
    let text = ok(&["eval", "--model", s(&ord), "--data", s(&all), "--mode", "multiclass"]);
    for row in ["| top1 |", "| top2 |", "| top3 |", "| within_one |"] {
        assert!(text.contains(row), "{text}");
    }
    // Mode mismatch and an empty split are fatal.
    assert_eq!(
        cli(&["eval", "--model", s(&ord), "--data", s(&all), "--mode", "binary"])
            .status
            .code(),
        Some(1)
    );
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(
        cli(&["eval", "--model", s(&model), "--data", s(&empty)]).status.code(),
        Some(1)
    );
}

#[test]
fn single_class_training_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), Path::new(FIXTURE), &["--sim-prob", "1.0"]);
    assert!(read_store(&out).unwrap().iter().all(|r| r.binary_label == 0));
    let code = cli(&["train", "--data", s(&out), "--out", s(&dir.path().join("m.json"))])
        .status
        .code();
    assert_eq!(code, Some(1));
}

#[test]
fn perturb_writes_variant_sets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.jsonl");
    ok(&["perturb", "--dataset", FIXTURE, "--n", "3", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "ex-1");
    assert_eq!(first["variants"].as_array().unwrap().len(), 4);
    assert_eq!(first["variants"][0], "Where is the Mona Lisa housed?");
}

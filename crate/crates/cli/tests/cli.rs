use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use handstate_cli::manifest::RunManifest;
use handstate_core::dataset::{load_dataset, sequence_records};
use handstate_core::model_state::load_model;
use handstate_core::types::Dataset;
use handstate_eval::report::read_results_csv;
use handstate_eval::Metric;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_handstate"));
    c.env_remove("HANDSTATE_DATA");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic_and_counts_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--users", "1", "--seed", "3", "--out", p(&a)]);
    ok(&["generate", "--users", "1", "--seed", "3", "--out", p(&b)]);
    let d: Dataset<f64> = load_dataset(&a).unwrap();
    assert_eq!(d.sequences.len(), 9);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na == "run.json" {
            // Only the output path differs.
            let text = String::from_utf8(ca.clone()).unwrap().replace(p(&a), p(&b));
            assert_eq!(text.as_bytes(), cb.as_slice());
        } else {
            assert_eq!(ca, cb, "{na}");
        }
    }
    let m = RunManifest::read(&a).unwrap();
    assert_eq!(m.seeds["dataset"], 3);
}

#[test]
fn default_generation_has_45_sequences_and_online_sessions() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--seed", "42", "--out", p(dir.path()), "--online-session"]);
    let d: Dataset<f64> = load_dataset(dir.path()).unwrap();
    assert_eq!(d.sequences.len(), 45);
    let online: Dataset<f64> = load_dataset(dir.path().join("online")).unwrap();
    assert_eq!(online.sequences.len(), 5);
    assert_eq!(online.sequences[0].segments.len(), 6);
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(run(&["generate", "--users", "many", "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--users", "1", "--seed", "1", "--out", p(&data)]);
    let out = run(&[
        "crossval", "--protocol", "louo", "--data", p(&data), "--archs", "dummy", "--out", p(&dir.path().join("cv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "train", "--arch", "dummy", "--user", "u7", "--data", p(&data), "--out", p(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("available users: u0"));
    let out = run(&["replay", "--model", p(&dir.path().join("missing.json")), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_model_and_records_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--users", "1", "--seed", "1", "--out", p(&data)]);

    let dummy = dir.path().join("dummy");
    ok(&["train", "--arch", "dummy", "--user", "u0", "--data", p(&data), "--out", p(&dummy)]);
    let m = load_model::<f64>(dummy.join("model.json")).unwrap();
    assert_eq!(m.params.len(), 2);
    // The drawn seed is recorded and reproduces the model.
    let manifest = RunManifest::read(&dummy).unwrap();
    let seed = manifest.seeds["train"];
    assert_eq!(manifest.config["training"]["seed"], seed);

    let exo = dir.path().join("exo");
    ok(&[
        "train", "--arch", "linear", "--features", "exo", "--user", "u0", "--data", p(&data), "--out", p(&exo),
    ]);
    let m = load_model::<f64>(exo.join("model.json")).unwrap();
    assert_eq!(m.spec.input_dim, 2);
}

#[test]
fn run_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--users", "1", "--seed", "2", "--out", p(&data)]);
    let first = dir.path().join("first");
    ok(&[
        "train", "--arch", "mlp", "--hidden", "8", "--epochs", "2", "--user", "u0", "--data", p(&data), "--out",
        p(&first),
    ]);
    let second = dir.path().join("second");
    ok(&["train", "--config", p(&first.join("run.json")), "--out", p(&second)]);
    assert_eq!(
        std::fs::read(first.join("model.json")).unwrap(),
        std::fs::read(second.join("model.json")).unwrap()
    );
}

#[test]
fn crossval_writes_rows_summary_and_reproducible_figure() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--users", "2", "--seed", "4", "--out", p(&data)]);
    let cv = dir.path().join("cv");
    ok(&[
        "crossval", "--data", p(&data), "--archs", "dummy,linear", "--seed", "0", "--out", p(&cv),
    ]);
    let rows = read_results_csv(cv.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3 * 2 * 2);
    for r in rows.iter().filter(|r| r.architecture.name() == "dummy" && r.metric == Metric::R2) {
        assert!(r.value.abs() <= 0.05, "dummy R2 {}", r.value);
    }
    let again = dir.path().join("again.svg");
    ok(&["plot", "--results", p(&cv.join("results.csv")), "--out", p(&again)]);
    assert_eq!(std::fs::read(cv.join("figure.svg")).unwrap(), std::fs::read(&again).unwrap());
    let m = RunManifest::read(&cv).unwrap();
    assert_eq!(m.artifacts, ["results.csv", "summary.csv", "figure.svg"]);
}

#[test]
fn cross_session_protocol_needs_a_test_session() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    ok(&["generate", "--users", "1", "--seed", "5", "--out", p(&s1)]);
    ok(&["generate", "--users", "1", "--seed", "5", "--session", "2", "--out", p(&s2)]);
    let cv = dir.path().join("cv");
    let base = ["crossval", "--protocol", "cross-session", "--archs", "linear", "--features", "full"];
    let out = run(&[&base[..], &["--data", p(&s1), "--out", p(&cv)]].concat());
    assert_eq!(out.status.code(), Some(2));
    ok(&[&base[..], &["--data", p(&s1), "--test-data", p(&s2), "--out", p(&cv)]].concat());
    assert_eq!(read_results_csv(cv.join("results.csv")).unwrap().len(), 4);
}

#[test]
fn replay_reports_metrics_and_ignores_pacing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--users", "1", "--seed", "6", "--out", p(&data)]);
    let model = dir.path().join("m");
    ok(&[
        "train", "--arch", "lstm", "--hidden", "8", "--epochs", "1", "--seed", "1", "--user", "u0", "--data", p(&data),
        "--out", p(&model),
    ]);
    let model_file = model.join("model.json");
    let fast = dir.path().join("fast");
    let plot = dir.path().join("trace.svg");
    let out = ok(&[
        "replay", "--model", p(&model_file), "--data", p(&data), "--sequence", "u0-s1-helping-0", "--out", p(&fast),
        "--plot", p(&plot),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"metrics\""));
    let manifest = RunManifest::read(&fast).unwrap();
    assert!(manifest.metrics.unwrap()["r2"]["y_o"].is_number());
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(svg.matches("font-weight=\"bold\"").count(), 4);

    let paced = dir.path().join("paced");
    ok(&[
        "replay", "--model", p(&model_file), "--data", p(&data), "--sequence", "u0-s1-helping-0", "--out", p(&paced),
        "--pace", "200",
    ]);
    let jsonl = std::fs::read(fast.join("predictions.jsonl")).unwrap();
    assert_eq!(jsonl, std::fs::read(paced.join("predictions.jsonl")).unwrap());
    assert_eq!(jsonl.iter().filter(|&&b| b == b'\n').count(), 1200);

    // Live mode: the same records on stdin give the same lines on stdout.
    let d: Dataset<f64> = load_dataset(&data).unwrap();
    let seq = d.get("u0-s1-helping-0").unwrap();
    let mut input = Vec::new();
    for r in sequence_records(seq) {
        serde_json::to_writer(&mut input, &r).unwrap();
        input.push(b'\n');
    }
    let mut child = bin()
        .args(["replay", "--model", p(&model_file)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let feeder = std::thread::spawn(move || stdin.write_all(&input).unwrap());
    let live = child.wait_with_output().unwrap();
    feeder.join().unwrap();
    assert!(live.status.success());
    assert_eq!(live.stdout, jsonl);
}

#[test]
fn data_directory_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("HANDSTATE_DATA", dir.path())
        .args(["generate", "--users", "1", "--seed", "8"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("manifest.json").exists());
}

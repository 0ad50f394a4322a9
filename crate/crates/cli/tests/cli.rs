use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_convsim"));
    cmd.env_remove("CONVSIM_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn convsim")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "convsim {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &[&str] = &[
    "--embed-dim",
    "16",
    "--dan-layers",
    "16,16,16",
    "--response-layers",
    "16",
    "--nli-hidden",
    "16",
    "--batch-size-initial",
    "16",
    "--batch-size-late",
    "16",
    "--lr-initial",
    "1",
    "--lr-late",
    "0.1",
];

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    fn checkpoint(&self) -> PathBuf {
        self.root.join("run/model.ckpt")
    }
}

/// A synthetic corpus plus a briefly trained checkpoint shared by the tests.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&["generate-synthetic", "--out-dir", s(&data), "--seed", "1"]);
        let mut args = vec![
            "train",
            "--pairs",
            s(&data.join("train.tsv")).to_owned().leak(),
            "--nli",
            s(&data.join("nli.jsonl")).to_owned().leak(),
            "--out-dir",
            s(&root.join("run")).to_owned().leak(),
            "--total-steps",
            "300",
            "--nli-fraction",
            "0.1",
        ];
        args.extend_from_slice(SMALL_MODEL);
        ok(&args);
        write_sts(&data);
        write_cqa(&data);
        Fixture { _dir: dir, root }
    })
}

fn held_out(data: &Path) -> Vec<String> {
    fs::read_to_string(data.join("held_out.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect()
}

/// Held-out inputs come cluster-major, ten per cluster.
fn write_sts(data: &Path) {
    let inputs = held_out(data);
    let genres = ["main-captions", "main-forums", "main-news"];
    for (split, offset) in [("train", 1), ("dev", 3), ("test", 7)] {
        let mut text = String::new();
        for i in 0..inputs.len() {
            let j = (i * offset + 5 * (i % 3) + 1) % inputs.len();
            let gold = if i / 10 == j / 10 { 4.0 + (i % 2) as f64 } else { (i % 3) as f64 * 0.5 };
            text.push_str(&format!(
                "{}\tMSRvid\t2012test\t{i:04}\t{gold}\t{}\t{}\n",
                genres[i % 3],
                inputs[i],
                inputs[j]
            ));
        }
        fs::write(data.join(format!("sts-{split}.csv")), text).unwrap();
    }
}

fn write_cqa(data: &Path) {
    let inputs = held_out(data);
    let mut text = String::new();
    for q in (0..inputs.len()).step_by(7) {
        let candidates: Vec<Value> = (1..=10)
            .map(|k| {
                let c = (q + k * 3) % inputs.len();
                let relevance = if c / 10 == q / 10 { "PerfectMatch" } else { "Irrelevant" };
                serde_json::json!({ "text": inputs[c], "relevance": relevance })
            })
            .collect();
        let line = serde_json::json!({ "original": inputs[q], "candidates": candidates });
        text.push_str(&format!("{line}\n"));
    }
    fs::write(data.join("cqa-test.jsonl"), text).unwrap();
}

fn telemetry_tasks(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| json(l)["task"].as_str().unwrap().to_string()).collect()
}

fn train_args<'a>(f: &'a Fixture, out: &'a Path) -> Vec<&'a str> {
    let pairs: &'a str = s(&f.data("train.tsv")).to_owned().leak();
    let nli: &'a str = s(&f.data("nli.jsonl")).to_owned().leak();
    let mut args = vec!["train", "--pairs", pairs, "--nli", nli, "--out-dir", s(out)];
    args.extend_from_slice(SMALL_MODEL);
    args
}

#[test]
fn extract_logs_bot_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let comments = dir.path().join("c.jsonl");
    fs::write(
        &comments,
        concat!(
            r#"{"id":"a","author":"alice","body":"what is a good first bike"}"#,
            "\n",
            r#"{"id":"b","parent_id":"a","author":"bob","body":"anything with gears"}"#,
            "\n",
            r#"{"id":"c","parent_id":"a","author":"replybot","body":"beep boop i am here"}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("pairs.tsv");
    let stats = json(&ok(&["extract", "--comments", s(&comments), "--out", s(&out)]));
    assert_eq!(stats["rejected"]["bot_author"], 1);
    assert_eq!(stats["pairs"], 1);
    assert_eq!(fs::read_to_string(&out).unwrap(), "what is a good first bike\tanything with gears\n");

    let first = fs::read(&out).unwrap();
    ok(&["extract", "--comments", s(&comments), "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn extract_of_empty_input_writes_no_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let comments = dir.path().join("empty.jsonl");
    fs::write(&comments, "").unwrap();
    let out = dir.path().join("pairs.tsv");
    let stats = json(&ok(&["extract", "--comments", s(&comments), "--out", s(&out)]));
    assert_eq!(stats["pairs"], 0);
    assert!(fs::read(&out).unwrap().is_empty());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["eval-foo"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--out-dir", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--pairs", "/nonexistent/pairs.tsv", "--out-dir", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(run(&["--threads", "0", "sim", "a", "b"]).status.code(), Some(1));
}

#[test]
fn zero_nli_fraction_trains_response_only() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut args = train_args(f, dir.path());
    args.extend(["--total-steps", "40", "--nli-fraction", "0"]);
    let summary = json(&ok(&args));
    assert_eq!(summary["nli_steps"], 0);
    let tasks = telemetry_tasks(&dir.path().join("telemetry.jsonl"));
    assert_eq!(tasks.len(), 40);
    assert!(tasks.iter().all(|t| t == "reddit"));
}

#[test]
fn init_from_starts_multitask_from_pretrained_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = f.checkpoint();
    let pairs = f.data("train.tsv");
    let nli = f.data("nli.jsonl");
    let base = [
        "train",
        "--pairs",
        s(&pairs),
        "--nli",
        s(&nli),
        "--out-dir",
        s(dir.path()),
        "--init-from",
        s(&ckpt),
        "--batch-size-initial",
        "16",
        "--batch-size-late",
        "16",
        "--total-steps",
        "30",
        "--nli-fraction",
        "0.5",
    ];
    let summary = json(&ok(&base));
    assert!(summary["nli_steps"].as_u64().unwrap() > 0);

    let mut conflicting = base.to_vec();
    conflicting.extend(["--embed-dim", "32"]);
    assert_eq!(run(&conflicting).status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"total_steps": 25, "nli_fraction": 0.0, "seed": 9}"#).unwrap();

    let out_a = dir.path().join("a");
    let mut args = vec!["--config", s(&cfg)];
    args.extend(train_args(f, &out_a));
    assert_eq!(json(&ok(&args))["steps"], 25);
    let header = json(fs::read_to_string(out_a.join("telemetry.jsonl")).unwrap().lines().next().unwrap());
    assert_eq!(header["run_config"]["training"]["seed"], 9);
    assert_eq!(header["run_config"]["training"]["total_steps"], 25);

    let out_b = dir.path().join("b");
    let mut args = vec!["--config", s(&cfg)];
    args.extend(train_args(f, &out_b));
    args.extend(["--total-steps", "12"]);
    assert_eq!(json(&ok(&args))["steps"], 12);
}

#[test]
fn seed_defaults_to_environment_and_training_is_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = train_args(f, &out);
        args.extend(["--total-steps", "20"]);
        let status = bin().args(&args).env("CONVSIM_SEED", "42").output().unwrap();
        assert!(status.status.success());
        let header = json(fs::read_to_string(out.join("telemetry.jsonl")).unwrap().lines().next().unwrap());
        assert_eq!(header["run_config"]["training"]["seed"], 42);
        bytes.push(fs::read(out.join("model.ckpt")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let mut args = train_args(f, &full);
    args.extend(["--total-steps", "40", "--checkpoint-every", "20", "--nli-fraction", "0.2"]);
    ok(&args);

    let resumed = dir.path().join("resumed");
    let mid = full.join("checkpoint-20.ckpt");
    let pairs = f.data("train.tsv");
    let nli = f.data("nli.jsonl");
    ok(&["train", "--pairs", s(&pairs), "--nli", s(&nli), "--out-dir", s(&resumed), "--resume", s(&mid)]);
    assert_eq!(fs::read(full.join("model.ckpt")).unwrap(), fs::read(resumed.join("model.ckpt")).unwrap());
}

#[test]
fn non_finite_loss_exits_with_numeric_failure_and_snapshot() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut args = train_args(f, dir.path());
    let lr = args.iter().position(|a| *a == "--lr-initial").unwrap() + 1;
    args[lr] = "1e300";
    args.extend(["--total-steps", "50", "--clip-norm", "0", "--nli-fraction", "0"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("diagnostic.ckpt").exists());
}

#[test]
fn evaluation_is_deterministic_across_runs_and_thread_counts() {
    let f = fixture();
    let ckpt = f.checkpoint();
    let pairs = f.data("held_out.tsv");
    let args = ["eval-response", "--checkpoint", s(&ckpt), "--pairs", s(&pairs), "--negatives", "19"];
    let first = ok(&args);
    assert_eq!(ok(&args), first);
    let mut threaded = vec!["--threads", "4"];
    threaded.extend(args);
    assert_eq!(ok(&threaded), first);

    let records = json(&first);
    let p: Vec<f64> = records.as_array().unwrap().iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(records[0]["metric"], "p@1");
    assert!(p[0] <= p[1] && p[1] <= p[2]);
    assert!(p[0] > 0.05, "trained model should beat chance, got {}", p[0]);
}

#[test]
fn sim_of_a_sentence_with_itself_is_five() {
    let ckpt = fixture().checkpoint();
    for sentence in ["how do i fix my bike", "zzz unseen words only"] {
        let out = json(&ok(&["sim", "--checkpoint", s(&ckpt), sentence, sentence, "--raw"]));
        assert!((out["scaled"].as_f64().unwrap() - 5.0).abs() < 1e-6);
        assert!(out["raw"].as_f64().unwrap().abs() < 1e-6);
    }
}

#[test]
fn sim_of_empty_sentence_is_a_data_error() {
    let ckpt = fixture().checkpoint();
    let out = run(&["sim", "--checkpoint", s(&ckpt), "", "hello"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty input"));
}

#[test]
fn embeddings_have_unit_norm() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sentences.txt");
    fs::write(&input, "how do i fix my bike\nwhat a lovely day\nqwerty\n").unwrap();
    let out = dir.path().join("vectors.txt");
    let ckpt = f.checkpoint();
    ok(&["embed", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: Vec<f64> = line.split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 16);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn tuning_with_zero_steps_equals_untuned_scores() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = f.checkpoint();
    let (train, dev, test) = (f.data("sts-train.csv"), f.data("sts-dev.csv"), f.data("sts-test.csv"));
    let csv = dir.path().join("scatter.csv");
    let plain = ok(&["eval-sts", "--checkpoint", s(&ckpt), "--data", s(&test), "--emit-csv", s(&csv)]);
    let tuned = ok(&[
        "eval-sts",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&test),
        "--tune-matrix",
        "--train",
        s(&train),
        "--dev",
        s(&dev),
        "--adapt-steps",
        "0",
    ]);
    assert_eq!(plain, tuned);

    let records = json(&plain);
    assert_eq!(records[0]["genre"], "all");
    assert_eq!(records[0]["split"], "test");
    assert_eq!(records.as_array().unwrap().len(), 4);
    let scatter = fs::read_to_string(&csv).unwrap();
    assert!(scatter.starts_with("gold,pred,genre\n"));
    assert_eq!(scatter.lines().count(), 201);
}

#[test]
fn tuning_does_not_lower_dev_correlation() {
    let f = fixture();
    let ckpt = f.checkpoint();
    let (train, dev) = (f.data("sts-train.csv"), f.data("sts-dev.csv"));
    let plain = json(&ok(&["eval-sts", "--checkpoint", s(&ckpt), "--data", s(&dev)]));
    let tuned = json(&ok(&[
        "eval-sts",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&dev),
        "--tune-matrix",
        "--train",
        s(&train),
        "--dev",
        s(&dev),
        "--adapt-steps",
        "200",
    ]));
    assert!(tuned[0]["value"].as_f64().unwrap() >= plain[0]["value"].as_f64().unwrap() - 1e-12);
}

#[test]
fn cqa_reports_map_on_a_percentage_scale() {
    let f = fixture();
    let ckpt = f.checkpoint();
    let data = f.data("cqa-test.jsonl");
    let out = json(&ok(&["eval-cqa", "--checkpoint", s(&ckpt), "--data", s(&data)]));
    assert_eq!(out[0]["metric"], "map");
    let map = out[0]["value"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&map));
    let with_zero = json(&ok(&["eval-cqa", "--checkpoint", s(&ckpt), "--data", s(&data), "--include-zero-good"]));
    assert!(with_zero[0]["value"].as_f64().unwrap() <= map);
}

#[test]
fn build_vocab_writes_a_loadable_vocabulary() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vocab.txt");
    let pairs = f.data("train.tsv");
    let summary = json(&ok(&["build-vocab", "--pairs", s(&pairs), "--out", s(&out), "--min-count", "2"]));
    assert!(summary["words"].as_u64().unwrap() > 2);

    let run_dir = dir.path().join("run");
    let mut args = train_args(f, &run_dir);
    args.extend(["--vocab", s(&out), "--total-steps", "5"]);
    ok(&args);
}

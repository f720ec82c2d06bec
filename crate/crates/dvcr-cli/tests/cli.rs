//! End-to-end tests against the compiled binary: exit codes, precedence,
//! determinism, and the full synth → train → eval → predict loop.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvcr")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn assert_code(o: &Output, code: i32) {
    assert_eq!(
        o.status.code(),
        Some(code),
        "wrong exit code\nstdout:\n{}\nstderr:\n{}",
        stdout(o),
        stderr(o)
    );
}

/// Small but non-degenerate: 6 pages, 4 widget groups, 2 distractors.
const TINY: &[&str] = &[
    "--pages", "6", "--width", "480", "--height", "360", "--widgets", "4", "--distractors", "2",
    "--seed", "11",
];

fn synth_into(dir: &Path) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(TINY);
    assert_code(&run(&args), 0);
}

/// Every file in the directory, sorted by name, with its bytes.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_into(&a);
    synth_into(&b);
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fa.len(), 9, "manifest + 6 screenshots + 2 corpus files");
    assert_eq!(fa, fb);
}

#[test]
fn invalid_pages_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out", tmp.path().to_str().unwrap(), "--pages", "0"]);
    assert_code(&o, 2);
    assert!(stderr(&o).contains("pages"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "version = 1\n[synth]\nbogus = 3\n").unwrap();
    let o = run(&[
        "synth", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(),
    ]);
    assert_code(&o, 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "version = 1\n[synth]\npages = 4\nwidgets = 4\ndistractors = 2\nwidth = 480\nheight = 360\n").unwrap();
    let out = tmp.path().join("data");
    let o = run(&[
        "synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--pages", "6",
    ]);
    assert_code(&o, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pages"].as_array().unwrap().len(), 6, "flag wins");
    assert_eq!(manifest["config"]["page_width"], 480, "file keys survive");
}

#[test]
fn train_writes_weights_deterministically_and_eval_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "version = 1\n[train]\npreset = synth\nepochs = 1\nchooser_epochs = 1\nop_epochs = 1\n",
    )
    .unwrap();

    let corpus = data.join("train.jsonl");
    let train = |out: &Path| {
        let o = run(&[
            "train", "--config", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]);
        assert_code(&o, 0);
        assert!(stdout(&o).contains("ranker epoch 1/1"), "{}", stdout(&o));
    };
    let (run1, run2) = (tmp.path().join("run1"), tmp.path().join("run2"));
    train(&run1);
    train(&run2);
    for f in ["ranker.dvcr", "chooser.dvcr", "op_head.dvcr", "losses.json"] {
        assert!(run1.join(f).exists(), "{f} missing");
        assert_eq!(
            std::fs::read(run1.join(f)).unwrap(),
            std::fs::read(run2.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }

    let report = tmp.path().join("report.json");
    let o = run(&[
        "eval",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--ranker", run1.join("ranker.dvcr").to_str().unwrap(),
        "--chooser-weights", run1.join("chooser.dvcr").to_str().unwrap(),
        "--op-weights", run1.join("op_head.dvcr").to_str().unwrap(),
        "--report", report.to_str().unwrap(),
        "--m", "3",
    ]);
    assert_code(&o, 0);
    assert!(stdout(&o).contains("R@1"), "{}", stdout(&o));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(parsed["steps"].as_u64().unwrap() >= 1);
    assert!(parsed["recall_at"]["1"].is_number());
}

#[test]
fn oracle_everything_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let report = tmp.path().join("report.json");
    let o = run(&[
        "eval",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--oracle-ranker", "--chooser", "scripted:gt", "--op-oracle",
        "--report", report.to_str().unwrap(),
    ]);
    assert_code(&o, 0);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["element_accuracy", "operation_f1", "step_success_rate"] {
        assert_eq!(parsed[key].as_f64().unwrap(), 1.0, "{key}");
    }
    for k in ["1", "5", "10", "50"] {
        assert_eq!(parsed["recall_at"][k].as_f64().unwrap(), 1.0, "recall@{k}");
    }
}

#[test]
fn tree_neighbors_on_parentless_corpus_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let o = run(&[
        "rank",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--task", "synth-0004", "--oracle-ranker", "--neighbor-source", "tree",
    ]);
    assert_code(&o, 2);
    assert!(stderr(&o).contains("parent links"), "{}", stderr(&o));
}

#[test]
fn m_zero_ranks_without_neighbor_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let o = run(&[
        "rank",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--task", "synth-0004", "--oracle-ranker", "--M", "0",
    ]);
    assert_code(&o, 0);
    let out = stdout(&o);
    assert!(out.contains("candidates"), "{out}");
    assert!(!out.contains("nbr"), "no neighbor lines at M=0:\n{out}");
}

#[test]
fn missing_task_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let o = run(&[
        "rank",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--task", "no-such-task", "--oracle-ranker",
    ]);
    assert_code(&o, 2);
    assert!(stderr(&o).contains("no-such-task"), "{}", stderr(&o));
}

#[test]
fn compare_prints_side_by_side_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    // Oracle primary vs zero-epoch trained weights: deltas must appear.
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "version = 1\n[train]\npreset = synth\nepochs = 0\nchooser_epochs = 0\nop_epochs = 0\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    assert_code(
        &run(&[
            "train", "--config", cfg.to_str().unwrap(),
            "--corpus", data.join("train.jsonl").to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]),
        0,
    );
    let o = run(&[
        "eval",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--oracle-ranker", "--chooser", "scripted:gt", "--op-oracle",
        "--compare", out.join("ranker.dvcr").to_str().unwrap(),
    ]);
    assert_code(&o, 0);
    let text = stdout(&o);
    assert!(text.contains("delta"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("R@1")), "{text}");
    assert!(text.contains('+') || text.contains('-'), "signed deltas:\n{text}");
}

#[test]
fn predict_transcript_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let o = run(&[
        "predict",
        "--corpus", data.join("test.jsonl").to_str().unwrap(),
        "--task", "synth-0004",
        "--oracle-ranker", "--chooser", "lexical", "--op-oracle", "--m", "3",
    ]);
    assert_code(&o, 0);
    assert_eq!(stdout(&o), include_str!("golden/predict_transcript.txt"));
}

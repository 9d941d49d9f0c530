//! The `erc-fusion` binary: stage composition, replay, exit codes and
//! manifests.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use erc_fusion::dataset::write_dialogues;
use serde_json::Value;

fn erc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erc-fusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = erc(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&common::read(path)).unwrap()
}

fn synth(dir: &Path, dialogues: usize) {
    ok(&["synth", "--out-dir", p(dir), "--dialogues", &dialogues.to_string()]);
}

#[test]
fn stages_compose_to_the_monolithic_run_and_replay_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    synth(&data, 12);
    let (fit, test) = (data.join("fit.jsonl"), data.join("test.jsonl"));
    let run = root.join("run");
    ok(&["run", "--dialogues", p(&test), "--fit", p(&fit), "--out", p(&run), "--persist"]);

    let s = |name: &str| root.join(name);
    ok(&["stats", "--dialogues", p(&fit), "--out", p(&s("stats.json"))]);
    for (split, file) in [("fit", &fit), ("test", &test)] {
        let plans = s(&format!("{split}-plans.jsonl"));
        let dir = s(split);
        ok(&["plan", "--dialogues", p(file), "--out", p(&plans)]);
        ok(&[
            "prompt", "--dialogues", p(file), "--plans", p(&plans), "--stats", p(&s("stats.json")),
            "--out-dir", p(&dir),
        ]);
        ok(&[
            "adjust", "--dialogues", p(file), "--plans", p(&plans), "--prompts",
            p(&dir.join("prompts.jsonl")), "--out-dir", p(&dir),
        ]);
    }
    ok(&["fuse-train", "--matrices", p(&s("fit/matrices.jsonl")), "--out", p(&s("params.json"))]);
    ok(&[
        "fuse-apply", "--matrices", p(&s("test/matrices.jsonl")), "--params", p(&s("params.json")),
        "--out", p(&s("predictions.jsonl")),
    ]);
    ok(&[
        "evaluate", "--predictions", p(&s("predictions.jsonl")), "--outcomes",
        p(&s("test/outcomes.jsonl")), "--out", p(&s("eval.json")),
    ]);
    for (staged, monolithic) in [
        ("test-plans.jsonl", "plans.jsonl"),
        ("test/prompts.jsonl", "prompts.jsonl"),
        ("test/matrices.jsonl", "matrices.jsonl"),
        ("params.json", "params.json"),
        ("predictions.jsonl", "predictions.jsonl"),
        ("eval.json", "eval.json"),
    ] {
        assert_eq!(common::read(&s(staged)), common::read(&run.join(monolithic)), "{staged}");
    }

    let replayed = root.join("replayed");
    let cache = run.join("llm-cache");
    ok(&[
        "--backend", "replay", "--cache-dir", p(&cache), "run", "--dialogues", p(&test), "--fit",
        p(&fit), "--out", p(&replayed),
    ]);
    assert_eq!(
        common::read(&replayed.join("predictions.jsonl")),
        common::read(&run.join("predictions.jsonl"))
    );

    // a prompt the recording never saw
    let missed = root.join("missed");
    let out = erc(&[
        "--backend", "replay", "--cache-dir", p(&cache), "--no-cot", "run", "--dialogues", p(&test),
        "--fit", p(&fit), "--out", p(&missed),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let m = json(&missed.join("manifest.json"));
    assert_eq!(m["completed"], Value::Bool(false));
    assert_eq!(m["failed_stage"], Value::String("fit-adjust".into()));
    assert_ne!(m["ablation"], json(&run.join("manifest.json"))["ablation"]);
}

#[test]
fn every_ablation_flag_gets_its_own_manifest_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4);
    let (fit, test) = (data.join("fit.jsonl"), data.join("test.jsonl"));
    let variants: [&[&str]; 10] = [
        &[],
        &["--no-cot"],
        &["--no-stats"],
        &["--no-summary"],
        &["--no-exemplars"],
        &["--split", "naive"],
        &["--split", "padded"],
        &["--merge", "add"],
        &["--merge", "weights"],
        &["--merge", "attn"],
    ];
    let mut tags = HashSet::new();
    for (i, flags) in variants.iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let mut args: Vec<&str> = flags.to_vec();
        args.extend(["--epochs", "5", "run", "--dialogues", p(&test), "--fit", p(&fit), "--out", p(&out)]);
        ok(&args);
        let m = json(&out.join("manifest.json"));
        assert_eq!(m["completed"], Value::Bool(true));
        let tag = m["ablation"].as_str().unwrap().to_string();
        assert!(tags.insert(tag.clone()), "{flags:?} repeats tag {tag}");
    }
}

#[test]
fn plan_of_six_utterances_has_five_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("d.jsonl");
    write_dialogues(&file, &[common::dialogue("d", 6, 6)]).unwrap();
    let plans = tmp.path().join("plans.jsonl");
    let stdout = ok(&["--t", "3", "--window", "6", "plan", "--dialogues", p(&file), "--out", p(&plans)]);
    assert_eq!(stdout.trim(), "1 plans, 5 windows");
    let plan: Value = serde_json::from_str(std::str::from_utf8(&common::read(&plans)).unwrap().trim()).unwrap();
    assert_eq!(plan["step_size"], 2);
}

#[test]
fn stats_and_lda_write_json() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 6);
    let stats = tmp.path().join("stats.json");
    ok(&["stats", "--dialogues", p(&data.join("fit.jsonl")), "--out", p(&stats)]);
    let stats: erc_fusion::prompter::DimensionStats = serde_json::from_value(json(&stats)).unwrap();
    assert_eq!(stats.classes.len(), 6);
    let labeled: usize = stats.classes.iter().map(|c| c.count).sum();
    let fit = erc_fusion::dataset::load_dialogues(&data.join("fit.jsonl"), &erc_fusion::EmotionSchema::iemocap_6way()).unwrap();
    assert_eq!(labeled, fit.iter().map(|d| d.len()).sum::<usize>());
    let lda = tmp.path().join("lda.json");
    ok(&[
        "analyze-lda", "--dialogues", p(&data.join("fit.jsonl")), "--test", p(&data.join("test.jsonl")),
        "--out", p(&lda),
    ]);
    let acc = json(&lda)["eval"]["accuracy"].as_f64().unwrap();
    assert!(acc > 0.5, "{acc}");
}

#[test]
fn config_file_is_honoured_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "t = 2\nwindow = 4\n").unwrap();
    let file = tmp.path().join("d.jsonl");
    write_dialogues(&file, &[common::dialogue("d", 8, 6)]).unwrap();
    let plans = tmp.path().join("plans.jsonl");
    // s = 2, so 8 / 2 + 2 - 1 windows
    assert_eq!(ok(&["--config", p(&cfg), "plan", "--dialogues", p(&file), "--out", p(&plans)]).trim(), "1 plans, 5 windows");
    assert_eq!(
        ok(&["--config", p(&cfg), "--t", "4", "plan", "--dialogues", p(&file), "--out", p(&plans)]).trim(),
        "1 plans, 11 windows"
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let out = erc(&["plan", "--dialogues", p(&missing), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    assert_eq!(erc(&["plan", "--bogus"]).status.code(), Some(1));
    assert_eq!(erc(&["--split", "diagonal", "stats", "--dialogues", "a", "--out", "b"]).status.code(), Some(1));

    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "t = 0\n").unwrap();
    let out = erc(&["--config", p(&bad_cfg), "stats", "--dialogues", "a", "--out", "b"]);
    assert_eq!(out.status.code(), Some(1));

    // a missing intermediate is named
    let out = erc(&[
        "fuse-train", "--matrices", p(&tmp.path().join("matrices.jsonl")), "--out", p(&tmp.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrices.jsonl"));
}

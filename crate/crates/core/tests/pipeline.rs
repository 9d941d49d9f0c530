//! Library-level runs of the whole pipeline.

mod common;

use std::path::Path;

use erc_fusion::config::{MergeKind, SplitStrategy};
use erc_fusion::dataset::write_dialogues;
use erc_fusion::gateway::{ChatBackend, ChatRequest, DecodingParams, Gateway, RequestSalt, ResponseCache};
use erc_fusion::pipeline::{self, RunOptions};
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{Error, PipelineConfig};

fn corpus(dir: &Path, dialogues: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let all = synthetic::generate(
        &SyntheticSpec {
            dialogues,
            ..Default::default()
        },
        &PipelineConfig::default().schema,
    );
    let (fit, test) = synthetic::split(all, 0.5);
    let (f, t) = (dir.join("fit.jsonl"), dir.join("test.jsonl"));
    write_dialogues(&f, &fit).unwrap();
    write_dialogues(&t, &test).unwrap();
    (f, t)
}

fn quick() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = 20;
    cfg
}

#[test]
fn three_dialogues_get_a_prediction_per_utterance() {
    let tmp = tempfile::tempdir().unwrap();
    let all = synthetic::generate(
        &SyntheticSpec {
            dialogues: 3,
            ..Default::default()
        },
        &PipelineConfig::default().schema,
    );
    let file = tmp.path().join("d.jsonl");
    write_dialogues(&file, &all).unwrap();
    let cfg = PipelineConfig {
        merge: MergeKind::Add,
        ..Default::default()
    };
    let out = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: file,
            out_dir: tmp.path().join("run"),
            ..Default::default()
        },
    )
    .unwrap();
    let expected: Vec<(String, String)> = all
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| (d.dialogue_id.clone(), u.utterance_id.clone())))
        .collect();
    let got: Vec<(String, String)> = out
        .predictions
        .iter()
        .map(|p| (p.dialogue_id.clone(), p.utterance_id.clone()))
        .collect();
    assert_eq!(got, expected);
    assert!(out.manifest.completed);
    assert_eq!(out.report.integrity.fallbacks, 0);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (fit, test) = corpus(tmp.path(), 8);
    let mut bytes = Vec::new();
    for workers in [1, 8] {
        let mut cfg = quick();
        cfg.llm.max_concurrency = workers;
        let dir = tmp.path().join(format!("w{workers}"));
        pipeline::run(
            &cfg,
            &RunOptions {
                dialogues: test.clone(),
                fit: Some(fit.clone()),
                out_dir: dir.clone(),
                ..Default::default()
            },
        )
        .unwrap();
        bytes.push((common::read(&dir.join("predictions.jsonl")), common::read(&dir.join("params.json"))));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn saved_parameters_reproduce_the_trained_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (fit, test) = corpus(tmp.path(), 8);
    let cfg = quick();
    let first = tmp.path().join("first");
    let trained = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: test.clone(),
            fit: Some(fit.clone()),
            out_dir: first.clone(),
            ..Default::default()
        },
    )
    .unwrap();
    let second = tmp.path().join("second");
    let reused = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: test,
            params: Some(first.join("params.json")),
            stats_from: Some(fit),
            out_dir: second.clone(),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(reused.model, trained.model);
    assert!(reused.report.train.is_none());
    assert_eq!(common::read(&second.join("predictions.jsonl")), common::read(&first.join("predictions.jsonl")));
}

#[test]
fn trainable_merge_without_fit_data_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, test) = corpus(tmp.path(), 2);
    let err = pipeline::run(
        &PipelineConfig::default(),
        &RunOptions {
            dialogues: test,
            out_dir: tmp.path().join("run"),
            ..Default::default()
        },
    )
    .err()
    .unwrap();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("stage `load`"), "{err}");
    let manifest: pipeline::RunManifest = erc_fusion::dataset::read_json(&tmp.path().join("run/manifest.json")).unwrap();
    assert!(!manifest.completed);
    assert_eq!(manifest.failed_stage.as_deref(), Some("load"));
}

#[test]
fn malformed_answers_are_retried_then_fall_back() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, test) = corpus(tmp.path(), 4);
    let mut cfg = PipelineConfig {
        merge: MergeKind::Add,
        ..Default::default()
    };
    cfg.mock.fail_attempts = 1;
    let once = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: test.clone(),
            out_dir: tmp.path().join("once"),
            ..Default::default()
        },
    )
    .unwrap();
    let s = &once.report.integrity;
    assert_eq!((s.first_attempt_passes, s.retried_passes, s.fallbacks), (0, s.queried, 0));
    assert_eq!(s.attempts, 2 * s.queried);

    cfg.mock.fail_attempts = cfg.max_retries;
    let never = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: test,
            out_dir: tmp.path().join("never"),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(never.report.integrity.fallbacks, never.report.integrity.windows);
    assert_eq!(never.report.eval.as_ref().unwrap().fallback_rate, Some(1.0));
    for p in &never.predictions {
        let vanilla = p.sources.last().copied();
        assert!(p.sources.iter().all(|s| Some(*s) == vanilla), "{p:?}");
    }
}

#[test]
fn repeated_spans_can_share_one_query() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, test) = corpus(tmp.path(), 4);
    let mut tags = Vec::new();
    for reuse in [false, true] {
        let cfg = PipelineConfig {
            merge: MergeKind::Add,
            split: SplitStrategy::Naive,
            reuse_repeats: reuse,
            ..Default::default()
        };
        let out = pipeline::run(
            &cfg,
            &RunOptions {
                dialogues: test.clone(),
                out_dir: tmp.path().join(format!("r{reuse}")),
                ..Default::default()
            },
        )
        .unwrap();
        let s = &out.report.integrity;
        let expected = if reuse { s.windows / cfg.t } else { s.windows };
        assert_eq!(s.queried, expected);
        tags.push(out.manifest.ablation);
    }
    assert_ne!(tags[0], tags[1]);
}

struct Flaky;

impl ChatBackend for Flaky {
    fn id(&self) -> String {
        "flaky".into()
    }

    fn complete(&self, _: &ChatRequest, _: RequestSalt, _: &str) -> erc_fusion::Result<String> {
        Err(Error::Backend("connection reset".into()))
    }
}

#[test]
fn summary_failures_degrade_but_replay_misses_abort() {
    let cfg = PipelineConfig::default();
    let dialogues = synthetic::generate(
        &SyntheticSpec {
            dialogues: 2,
            ..Default::default()
        },
        &cfg.schema,
    );
    let params = DecodingParams {
        model: "m".into(),
        temperature: 0.0,
    };
    let gateway = Gateway::new(Box::new(Flaky), None, params.clone(), 2);
    let s = pipeline::summarize(&gateway, &dialogues, &cfg).unwrap();
    assert!(s.iter().all(|r| !r.ok && r.summary.is_empty()));

    let tmp = tempfile::tempdir().unwrap();
    let replay = Gateway::replay(ResponseCache::open(tmp.path(), "nobody").unwrap(), params);
    let err = pipeline::summarize(&replay, &dialogues, &cfg).unwrap_err();
    assert!(matches!(err, Error::ReplayMiss(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn invalid_input_names_the_load_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.jsonl");
    std::fs::write(&file, "{\"dialogue_id\": \"d\", \"utterances\": [{\"id\": \"u0\"}]}\n").unwrap();
    let cfg = PipelineConfig {
        merge: MergeKind::Add,
        ..Default::default()
    };
    let err = pipeline::run(
        &cfg,
        &RunOptions {
            dialogues: file,
            out_dir: tmp.path().join("run"),
            ..Default::default()
        },
    )
    .err()
    .unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("stage `load`"), "{err}");
}

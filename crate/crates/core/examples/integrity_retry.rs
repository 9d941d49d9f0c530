// The integrity check on a few hand-written answers, then a window adjusted
// through a mock that breaks its first answer and one that never recovers.

use std::collections::HashMap;

use erc_fusion::config::PipelineConfig;
use erc_fusion::gateway::{DecodingParams, Gateway, MockBackend, MockSettings};
use erc_fusion::integrity::{adjust_with_retry, check, parse_response};
use erc_fusion::pipeline::oracle_labels;
use erc_fusion::prompter::{build_window_prompt, ExemplarSet, PromptContext};
use erc_fusion::schema::sample_key;
use erc_fusion::splitter;
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::Result;

pub fn run_example() -> Result<()> {
    let keys = vec!["d#u0".to_string(), "d#u1".to_string()];
    for raw in [
        "d#u0: 0.7 0.2 0.1\nd#u1: 10% 60% 30%",
        "d#u0: 0.7 0.2 0.1",
        "d#u0: 0.7 0.3\nd#u1: 0.1 0.6 0.3",
        "d#u0: 0.8 0.2 0.1\nd#u1: 0.1 0.6 0.3",
    ] {
        let verdict = check(&parse_response(raw, &keys, 3), &keys, 3, 0.01);
        println!("{:<40} -> {:?}", raw.replace('\n', " | "), verdict.failed_rules());
    }

    let cfg = PipelineConfig::default();
    let dialogue = synthetic::generate(
        &SyntheticSpec {
            dialogues: 1,
            ..Default::default()
        },
        &cfg.schema,
    )
    .remove(0);
    let plan = splitter::plan(&dialogue, &cfg)?;
    let exemplars = ExemplarSet::builtin(&cfg.schema);
    let ctx = PromptContext {
        schema: &cfg.schema,
        stats: None,
        exemplars: &exemplars,
        toggles: cfg.prompt,
    };
    let bundle = build_window_prompt(&ctx, &dialogue, &plan.windows[2], "");
    let vanilla: HashMap<String, Vec<f64>> = dialogue
        .utterances
        .iter()
        .map(|u| (sample_key(&dialogue.dialogue_id, &u.utterance_id), u.vanilla_probs.clone()))
        .collect();
    let params = DecodingParams {
        model: cfg.llm.model.clone(),
        temperature: cfg.llm.temperature,
    };
    for fail_attempts in [1, 10] {
        let settings = MockSettings {
            fail_attempts,
            ..MockSettings::from_config(&cfg)
        };
        let mock = MockBackend::new(settings, oracle_labels([&dialogue]));
        let gateway = Gateway::new(Box::new(mock), None, params.clone(), 1);
        let out = adjust_with_retry(&gateway, &bundle, &vanilla, cfg.schema.n(), cfg.max_retries, cfg.prob_sum_tolerance)?;
        println!(
            "mock failing {fail_attempts} time(s): {} attempt(s), fallback {}",
            out.attempts.len(),
            out.fallback
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

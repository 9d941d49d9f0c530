// Renders the system and user messages for the middle window of a synthetic
// dialogue, then shows how much each prompt toggle removes.

use erc_fusion::config::PromptToggles;
use erc_fusion::prompter::{build_window_prompt, compute_dimension_stats, ExemplarSet, PromptContext};
use erc_fusion::splitter;
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{PipelineConfig, Result};

pub fn run_example() -> Result<()> {
    let cfg = PipelineConfig::default();
    let dialogues = synthetic::generate(
        &SyntheticSpec {
            dialogues: 4,
            ..Default::default()
        },
        &cfg.schema,
    );
    let stats = compute_dimension_stats(&dialogues, &cfg.schema)?;
    let exemplars = ExemplarSet::builtin(&cfg.schema);
    let dialogue = &dialogues[0];
    let plan = splitter::plan(dialogue, &cfg)?;
    let window = &plan.windows[plan.windows.len() / 2];
    let summary = "Two friends plan a trip.\nKnowledge: plans that fall through tend to frustrate people.";

    let full = PromptContext {
        schema: &cfg.schema,
        stats: Some(&stats),
        exemplars: &exemplars,
        toggles: cfg.prompt,
    };
    let chat = build_window_prompt(&full, dialogue, window, summary).chat();
    println!("----- system -----\n{}", chat.system);
    println!("----- user -----\n{}", chat.user);

    let base = chat.system.len() + chat.user.len();
    for (name, toggles) in [
        ("no stats", PromptToggles { stats: false, ..cfg.prompt }),
        ("no summary", PromptToggles { summary: false, ..cfg.prompt }),
        ("no exemplars", PromptToggles { exemplars: false, ..cfg.prompt }),
        ("no cot", PromptToggles { cot: false, ..cfg.prompt }),
    ] {
        let ctx = PromptContext { toggles, ..full };
        let c = build_window_prompt(&ctx, dialogue, window, summary).chat();
        println!("{name:<13} -{} bytes", base - c.system.len() - c.user.len());
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

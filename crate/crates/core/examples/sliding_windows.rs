// Window plans for a six-utterance dialogue under the three splitting
// strategies, with the receptive-field proportions each utterance gets.

use erc_fusion::config::SplitStrategy;
use erc_fusion::splitter::{self, receptive_lengths, Slot, WindowPlan};
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{PipelineConfig, Result};

fn render(plan: &WindowPlan) -> Vec<String> {
    plan.windows
        .iter()
        .map(|w| {
            let slots: Vec<String> = w
                .slots
                .iter()
                .map(|s| match s {
                    Slot::Target(i) => format!("u{i}"),
                    Slot::Context(i) => format!("(u{i})"),
                    Slot::Pad => "_".into(),
                })
                .collect();
            format!("w{} [{}]", w.window_index, slots.join(" "))
        })
        .collect()
}

pub fn run_example() -> Result<()> {
    let dialogue = synthetic::generate(
        &SyntheticSpec {
            dialogues: 1,
            min_len: 6,
            max_len: 6,
            ..Default::default()
        },
        &PipelineConfig::default().schema,
    )
    .remove(0);
    for split in [SplitStrategy::Sliding, SplitStrategy::Naive, SplitStrategy::Padded] {
        let cfg = PipelineConfig {
            t: 3,
            window: 6,
            split,
            ..Default::default()
        };
        let plan = splitter::plan(&dialogue, &cfg)?;
        println!("{split:?}: step {} with {} windows", plan.step_size, plan.windows.len());
        for line in render(&plan) {
            println!("  {line}");
        }
        for u in &dialogue.utterances {
            let l = receptive_lengths(&plan, &u.utterance_id)?;
            let l: Vec<String> = l.iter().map(|v| format!("{v:.3}")).collect();
            println!("  l({}) = [{}]", u.utterance_id, l.join(", "));
        }
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

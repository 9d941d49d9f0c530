// Every merge on the same mock-adjusted matrices: naive add-up (with and
// without the vanilla column), learned naive weights, plain attention and
// the receptive-field-aware attention.

use erc_fusion::config::MergeKind;
use erc_fusion::fusion::{self, AdjustmentMatrix, FusionModel};
use erc_fusion::gateway::Gateway;
use erc_fusion::pipeline::{adjust, build_prompts, load_exemplars, oracle_labels, plan_all, summarize};
use erc_fusion::prompter::compute_dimension_stats;
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{Dialogue, PipelineConfig, Result};

fn accuracy(model: &FusionModel, data: &[AdjustmentMatrix]) -> Result<f64> {
    let mut hits = 0;
    for m in data {
        if Some(model.apply(m)?.class) == m.gold_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// `(name, train accuracy, test accuracy, parameter count)` per merge.
pub fn ablation_table(cfg: &PipelineConfig) -> Result<Vec<(String, f64, f64, usize)>> {
    let all = synthetic::generate(
        &SyntheticSpec {
            seed: cfg.seed,
            ..Default::default()
        },
        &cfg.schema,
    );
    let (fit, test) = synthetic::split(all, 0.5);
    let gateway = Gateway::from_config(cfg, oracle_labels(fit.iter().chain(&test)))?;
    let exemplars = load_exemplars(None, cfg)?;
    let stats = compute_dimension_stats(&fit, &cfg.schema)?;
    let matrices = |d: &[Dialogue]| -> Result<Vec<AdjustmentMatrix>> {
        let summaries = summarize(&gateway, d, cfg)?;
        let plans = plan_all(d, cfg)?;
        let prompts = build_prompts(cfg, d, &plans, &summaries, Some(&stats), &exemplars)?;
        Ok(adjust(&gateway, cfg, d, &plans, &prompts)?.matrices)
    };
    let (train, held_out) = (matrices(&fit)?, matrices(&test)?);

    let mut rows = Vec::new();
    for include_vanilla in [true, false] {
        let m = FusionModel::Add { include_vanilla };
        let name = if include_vanilla { "add-up" } else { "add-up (llm only)" };
        rows.push((name.to_string(), accuracy(&m, &train)?, accuracy(&m, &held_out)?, 0));
    }
    for kind in [MergeKind::Weights, MergeKind::Attn, MergeKind::Rfa] {
        let (m, _) = fusion::train(kind, cfg.include_vanilla, &train, None, &cfg.train, cfg.seed)?;
        rows.push((format!("{kind:?}").to_lowercase(), accuracy(&m, &train)?, accuracy(&m, &held_out)?, m.param_count()));
    }
    Ok(rows)
}

pub fn run_example() -> Result<()> {
    let cfg = PipelineConfig::default();
    println!("{:<18} {:>7} {:>7} {:>7}", "merge", "train", "test", "params");
    for (name, train, test, params) in ablation_table(&cfg)? {
        println!("{name:<18} {train:>7.4} {test:>7.4} {params:>7}");
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

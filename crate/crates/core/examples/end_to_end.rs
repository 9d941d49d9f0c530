// Synthetic end-to-end run with the mock backend: 40 generated dialogues,
// the merge trained on one half and evaluated on the other, compared with
// the vanilla predictions and the naive add-up of the same matrices.

use std::path::Path;

use erc_fusion::dataset::{read_jsonl, write_dialogues};
use erc_fusion::fusion::{AdjustmentMatrix, FusionModel};
use erc_fusion::pipeline::{self, RunOptions};
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{Error, PipelineConfig, Result};

pub struct Comparison {
    pub vanilla: f64,
    pub add: f64,
    pub fused: f64,
    pub predictions: Vec<u8>,
}

fn accuracy(model: &FusionModel, matrices: &[AdjustmentMatrix]) -> Result<f64> {
    let mut hits = 0;
    for m in matrices {
        if Some(model.apply(m)?.class) == m.gold_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / matrices.len() as f64)
}

/// Generates the data under `dir`, runs the pipeline into `dir/run` and
/// scores the test split.
pub fn compare(dir: &Path, cfg: &PipelineConfig) -> Result<Comparison> {
    let all = synthetic::generate(
        &SyntheticSpec {
            seed: cfg.seed,
            ..Default::default()
        },
        &cfg.schema,
    );
    let (fit, test) = synthetic::split(all, 0.5);
    write_dialogues(&dir.join("fit.jsonl"), &fit)?;
    write_dialogues(&dir.join("test.jsonl"), &test)?;

    let run_dir = dir.join("run");
    let out = pipeline::run(
        cfg,
        &RunOptions {
            dialogues: dir.join("test.jsonl"),
            fit: Some(dir.join("fit.jsonl")),
            out_dir: run_dir.clone(),
            persist_intermediates: true,
            ..Default::default()
        },
    )?;
    let eval = out.report.eval.ok_or_else(|| Error::Data("test split has no labels".into()))?;
    let vanilla = eval
        .per_source_accuracy
        .iter()
        .find(|(name, _)| name == "vanilla")
        .map_or(f64::NAN, |(_, a)| *a);
    let matrices: Vec<AdjustmentMatrix> = read_jsonl(&run_dir.join(pipeline::MATRICES_FILE))?;
    let add = FusionModel::Add {
        include_vanilla: cfg.include_vanilla,
    };
    Ok(Comparison {
        vanilla,
        add: accuracy(&add, &matrices)?,
        fused: eval.accuracy,
        predictions: std::fs::read(run_dir.join(pipeline::PREDICTIONS_FILE))
            .map_err(|e| Error::Data(e.to_string()))?,
    })
}

pub fn run_example() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("erc-fusion-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Data(e.to_string()))?;
    let cfg = PipelineConfig::default();
    let c = compare(&dir, &cfg)?;
    println!("vanilla   {:.4}", c.vanilla);
    println!("add-up    {:.4}", c.add);
    println!("rfa       {:.4}", c.fused);
    println!("outputs   {} ({} bytes of predictions)", dir.join("run").display(), c.predictions.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    env_logger::init();
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

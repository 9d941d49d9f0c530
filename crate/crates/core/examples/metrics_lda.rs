// Scores the vanilla predictions of a synthetic corpus, checks how well the
// dimension scores agree with the class means, and fits an LDA on them.

use erc_fusion::fusion::argmax;
use erc_fusion::metrics::{ccc, evaluate, lda_eval, lda_fit, samples_from_dialogues};
use erc_fusion::synthetic::{self, SyntheticSpec};
use erc_fusion::{PipelineConfig, Result};

pub fn run_example() -> Result<()> {
    let schema = PipelineConfig::default().schema;
    let dialogues = synthetic::generate(&SyntheticSpec::default(), &schema);
    let (train, test) = synthetic::split(dialogues, 0.5);

    let (pred, gold): (Vec<usize>, Vec<usize>) = test
        .iter()
        .flat_map(|d| &d.utterances)
        .filter_map(|u| Some((argmax(&u.vanilla_probs), u.gold_label?)))
        .unzip();
    let report = evaluate(&pred, &gold, &schema)?;
    println!("vanilla predictions\n{}", report.to_table());

    // valence against its own class-mean reconstruction
    let samples = samples_from_dialogues(&train);
    let valence: Vec<f64> = samples.iter().map(|(x, _)| x[0]).collect();
    let mut means = vec![(0.0, 0usize); schema.n()];
    for (x, c) in &samples {
        means[*c].0 += x[0];
        means[*c].1 += 1;
    }
    let fitted: Vec<f64> = samples
        .iter()
        .map(|(_, c)| means[*c].0 / means[*c].1.max(1) as f64)
        .collect();
    println!("valence CCC vs class means: {:.4}\n", ccc(&valence, &fitted)?);

    let model = lda_fit(&samples, &schema)?;
    println!("{}", model.coefficient_table());
    let lda = lda_eval(&model, &samples_from_dialogues(&test), &schema)?;
    println!("LDA on held-out dimension scores: accuracy {:.4}, wF1 {:.4}", lda.eval.accuracy, lda.eval.weighted_f1);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

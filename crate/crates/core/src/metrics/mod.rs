//! Classification metrics, concordance correlation and the LDA analysis of
//! dimension scores.

mod lda;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use self::lda::{lda_eval, lda_fit, samples_from_dialogues, LdaModel, LdaReport, LdaSample};
use crate::error::{Error, Result};
use crate::schema::EmotionSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    /// Rows are gold classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    /// Each non-empty column divided by its sum (precision view).
    pub confusion_by_prediction: Vec<Vec<f64>>,
    /// Each non-empty row divided by its sum (recall view).
    pub confusion_by_gold: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_rate: Option<f64>,
    /// Accuracy of each individual source column and of the fused output.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_source_accuracy: Vec<(String, f64)>,
}

fn confusion(pred: &[usize], gold: &[usize], n: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("cannot evaluate an empty prediction set".into()));
    }
    let mut cm = vec![vec![0usize; n]; n];
    for (&p, &g) in pred.iter().zip(gold) {
        if p >= n || g >= n {
            return Err(Error::Data(format!("class index out of range (pred {p}, gold {g}, n {n})")));
        }
        cm[g][p] += 1;
    }
    Ok(cm)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn class_scores(cm: &[Vec<usize>]) -> Vec<(f64, f64, f64, usize)> {
    let n = cm.len();
    (0..n)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let predicted: usize = (0..n).map(|g| cm[g][c]).sum();
            let support: usize = cm[c].iter().sum();
            let p = ratio(tp, predicted as f64);
            let r = ratio(tp, support as f64);
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f1, support)
        })
        .collect()
}

/// Accuracy and support-weighted F1.
pub fn accuracy_and_wf1(pred: &[usize], gold: &[usize], n: usize) -> Result<(f64, f64)> {
    let cm = confusion(pred, gold, n)?;
    let total = pred.len() as f64;
    let correct: usize = (0..n).map(|c| cm[c][c]).sum();
    let wf1 = class_scores(&cm)
        .iter()
        .map(|(_, _, f1, s)| *s as f64 / total * f1)
        .sum();
    Ok((correct as f64 / total, wf1))
}

pub fn evaluate(pred: &[usize], gold: &[usize], schema: &EmotionSchema) -> Result<EvalReport> {
    let n = schema.n();
    let cm = confusion(pred, gold, n)?;
    let total = pred.len();
    let scores = class_scores(&cm);
    let correct: usize = (0..n).map(|c| cm[c][c]).sum();
    let accuracy = correct as f64 / total as f64;
    let weighted_f1 = scores
        .iter()
        .map(|(_, _, f1, s)| *s as f64 / total as f64 * f1)
        .sum();
    let by_pred = (0..n)
        .map(|g| {
            (0..n)
                .map(|p| {
                    let col: usize = (0..n).map(|r| cm[r][p]).sum();
                    ratio(cm[g][p] as f64, col as f64)
                })
                .collect()
        })
        .collect();
    let by_gold = cm
        .iter()
        .map(|row| {
            let s: usize = row.iter().sum();
            row.iter().map(|&v| ratio(v as f64, s as f64)).collect()
        })
        .collect();
    let per_class: Vec<ClassScore> = scores
        .iter()
        .enumerate()
        .map(|(c, &(precision, recall, f1, support))| ClassScore {
            class: schema.name(c).to_string(),
            precision,
            recall,
            f1,
            support,
        })
        .collect();
    Ok(EvalReport {
        samples: total,
        accuracy,
        weighted_f1,
        macro_precision: scores.iter().map(|s| s.0).sum::<f64>() / n as f64,
        macro_recall: scores.iter().map(|s| s.1).sum::<f64>() / n as f64,
        // single-label: every miss is one false positive and one false negative
        micro_precision: accuracy,
        micro_recall: accuracy,
        per_class,
        confusion: cm,
        confusion_by_prediction: by_pred,
        confusion_by_gold: by_gold,
        fallback_rate: None,
        per_source_accuracy: Vec::new(),
    })
}

impl EvalReport {
    /// Aligned-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples      {}", self.samples);
        let _ = writeln!(out, "accuracy     {:.2}%", 100.0 * self.accuracy);
        let _ = writeln!(out, "weighted F1  {:.2}%", 100.0 * self.weighted_f1);
        let _ = writeln!(
            out,
            "macro P/R    {:.2}% / {:.2}%",
            100.0 * self.macro_precision,
            100.0 * self.macro_recall
        );
        if let Some(f) = self.fallback_rate {
            let _ = writeln!(out, "fallback     {:.2}%", 100.0 * f);
        }
        for (src, acc) in &self.per_source_accuracy {
            let _ = writeln!(out, "  acc[{src}] {:.2}%", 100.0 * acc);
        }
        let w = self.per_class.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "\n{:<w$}  {:>7} {:>7} {:>7} {:>7}", "class", "P", "R", "F1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<w$}  {:>7.4} {:>7.4} {:>7.4} {:>7}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(out, "\nconfusion (rows gold, columns predicted)");
        for (c, row) in self.per_class.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            let _ = writeln!(out, "{:<w$}  {}", c.class, cells.join(""));
        }
        out
    }
}

fn moments(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("sequence lengths differ ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Data("need at least two points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    Ok((ma, mb, va, vb, cov))
}

/// Concordance correlation coefficient with population moments.
pub fn ccc(pred: &[f64], gold: &[f64]) -> Result<f64> {
    let (mp, mg, vp, vg, cov) = moments(pred, gold)?;
    let den = vp + vg + (mp - mg).powi(2);
    Ok(if den == 0.0 { 1.0 } else { 2.0 * cov / den })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let (_, _, va, vb, cov) = moments(a, b)?;
    Ok(ratio(cov, (va * vb).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> EmotionSchema {
        EmotionSchema::new(["a", "b"]).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let r = evaluate(&[0, 1, 1, 0], &[0, 1, 1, 0], &two()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn hand_computed_two_class() {
        let r = evaluate(&[0, 0], &[0, 1], &two()).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalizations_sum_to_one() {
        let r = evaluate(&[0, 2, 1, 1, 0, 2, 2], &[0, 1, 1, 2, 0, 2, 1], &EmotionSchema::new(["a", "b", "c"]).unwrap()).unwrap();
        for p in 0..3 {
            let col: f64 = (0..3).map(|g| r.confusion_by_prediction[g][p]).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
        for row in &r.confusion_by_gold {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(evaluate(&[], &[], &two()).is_err());
        assert!(evaluate(&[0], &[0, 1], &two()).is_err());
        assert!(ccc(&[1.0], &[1.0, 2.0]).is_err());
        assert!(ccc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ccc_cases() {
        let a = [1.0, 2.0, 4.0, 3.5];
        assert_eq!(ccc(&a, &a).unwrap(), 1.0);
        assert_eq!(ccc(&[2.0; 4], &a).unwrap(), 0.0);
    }
}

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport};
use crate::error::{Error, Result};
use crate::schema::{Dialogue, EmotionSchema};

/// Dimension scores `(valence, arousal, dominance)` with a class label.
pub type LdaSample = ([f64; 3], usize);

/// Linear discriminant with a shared (pooled) covariance.
///
/// The discriminant of class `c` is `x · coef_c + intercept_c` with
/// `coef_c = Σ⁻¹ μ_c` and `intercept_c = -½ μ_cᵀ Σ⁻¹ μ_c + ln π_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// Schema indices of the classes seen during fitting.
    pub classes: Vec<usize>,
    pub class_names: Vec<String>,
    pub coefficients: Vec<[f64; 3]>,
    pub intercepts: Vec<f64>,
    pub priors: Vec<f64>,
    /// Ridge added to the pooled covariance, 0 when it was invertible.
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaReport {
    pub model: LdaModel,
    pub eval: EvalReport,
}

pub fn samples_from_dialogues(dialogues: &[Dialogue]) -> Vec<LdaSample> {
    dialogues
        .iter()
        .flat_map(|d| &d.utterances)
        .filter_map(|u| u.gold_label.map(|g| (u.dims.as_array(), g)))
        .collect()
}

pub fn lda_fit(samples: &[LdaSample], schema: &EmotionSchema) -> Result<LdaModel> {
    let n = schema.n();
    let mut sums = vec![Vector3::zeros(); n];
    let mut counts = vec![0usize; n];
    for (x, g) in samples {
        if *g >= n {
            return Err(Error::Data(format!("label {g} out of range")));
        }
        sums[*g] += Vector3::from(*x);
        counts[*g] += 1;
    }
    let classes: Vec<usize> = (0..n).filter(|&c| counts[c] > 0).collect();
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "LDA needs samples from at least 2 classes, found {}",
            classes.len()
        )));
    }
    let means: Vec<Vector3<f64>> = (0..n)
        .map(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { Vector3::zeros() })
        .collect();
    let mut cov = Matrix3::zeros();
    for (x, g) in samples {
        let d = Vector3::from(*x) - means[*g];
        cov += d * d.transpose();
    }
    cov /= samples.len() as f64;

    let trace = cov.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::Data("pooled covariance is zero; dimension scores carry no spread".into()));
    }
    let scale = trace / 3.0;
    let mut ridge = 0.0;
    let inv = match cov.try_inverse() {
        Some(inv) if cov.determinant().abs() > 1e-12 * scale.powi(3) => inv,
        _ => {
            ridge = 1e-6 * scale;
            (cov + Matrix3::identity() * ridge)
                .try_inverse()
                .ok_or_else(|| Error::Data("pooled covariance is singular even after regularization".into()))?
        }
    };
    let total = samples.len() as f64;
    let mut model = LdaModel {
        classes: classes.clone(),
        class_names: classes.iter().map(|&c| schema.name(c).to_string()).collect(),
        coefficients: Vec::new(),
        intercepts: Vec::new(),
        priors: Vec::new(),
        ridge,
    };
    for &c in &classes {
        let coef = inv * means[c];
        let prior = counts[c] as f64 / total;
        model.coefficients.push([coef[0], coef[1], coef[2]]);
        model.intercepts.push(-0.5 * means[c].dot(&coef) + prior.ln());
        model.priors.push(prior);
    }
    Ok(model)
}

impl LdaModel {
    /// Schema index of the highest-scoring class.
    pub fn predict(&self, x: &[f64; 3]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, (coef, b)) in self.coefficients.iter().zip(&self.intercepts).enumerate() {
            let s = coef[0] * x[0] + coef[1] * x[1] + coef[2] * x[2] + b;
            if s > best_score {
                best_score = s;
                best = k;
            }
        }
        self.classes[best]
    }

    /// Coefficient table: one row per class over valence, arousal, dominance.
    pub fn coefficient_table(&self) -> String {
        let w = self.class_names.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<w$}  {:>10} {:>10} {:>10} {:>10}\n", "class", "valence", "arousal", "dominance", "intercept");
        for ((name, c), b) in self.class_names.iter().zip(&self.coefficients).zip(&self.intercepts) {
            let _ = writeln!(out, "{name:<w$}  {:>10.4} {:>10.4} {:>10.4} {:>10.4}", c[0], c[1], c[2], b);
        }
        out
    }
}

pub fn lda_eval(model: &LdaModel, samples: &[LdaSample], schema: &EmotionSchema) -> Result<LdaReport> {
    let pred: Vec<usize> = samples.iter().map(|(x, _)| model.predict(x)).collect();
    let gold: Vec<usize> = samples.iter().map(|(_, g)| *g).collect();
    Ok(LdaReport {
        model: model.clone(),
        eval: evaluate(&pred, &gold, schema)?,
    })
}

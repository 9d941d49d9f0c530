//! Fusion of the `t` LLM-adjusted distributions and the vanilla distribution
//! of each sample into one decision.
//!
//! Each sample contributes an [`AdjustmentMatrix`]: `x ∈ R^{n×(t+1)}` whose
//! first `t` columns are the adjusted distributions from the covering
//! windows (in coverage order) and whose last column is the vanilla
//! distribution, plus `l ∈ R^t`, the fraction of the dialogue each of those
//! windows could see.
//!
//! Four merges are available behind [`FusionModel`]: the receptive-field-aware
//! attention ([`rfa`]), and three baselines ([`baselines`]).

pub mod baselines;
pub mod rfa;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use self::baselines::{merge_naive_add, NaiveWeights, PlainAttention};
pub use self::rfa::{rfa_backward, rfa_forward, FusionParameters};
pub use self::train::{train, train_model, TrainOutcome, Trainable};
use crate::config::MergeKind;
use crate::error::{Error, Result};
use crate::schema::{sample_key, Dialogue};
use crate::splitter::{receptive_lengths, WindowPlan};

const COLUMN_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentMatrix {
    pub dialogue_id: String,
    pub utterance_id: String,
    /// `t + 1` columns of length `n`; the last is the vanilla distribution.
    pub columns: Vec<Vec<f64>>,
    pub l: Vec<f64>,
    #[serde(rename = "label", default)]
    pub gold_label: Option<usize>,
}

impl AdjustmentMatrix {
    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn t(&self) -> usize {
        self.l.len()
    }

    /// `x[i][j]`: class `i`, column `j`.
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn vanilla(&self) -> &[f64] {
        self.columns.last().expect("at least one column")
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.l.len();
        if t == 0 || self.columns.len() != t + 1 {
            return Err(Error::Data(format!(
                "`{}`: {} columns for {} receptive fields",
                self.utterance_id,
                self.columns.len(),
                t
            )));
        }
        let n = self.columns[0].len();
        if n < 2 {
            return Err(Error::Data(format!("`{}`: fewer than 2 classes", self.utterance_id)));
        }
        for (j, col) in self.columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Data(format!("`{}`: ragged column {j}", self.utterance_id)));
            }
            let sum: f64 = col.iter().sum();
            if col.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(Error::Data(format!(
                    "`{}`: column {j} is not a distribution (sum {sum})",
                    self.utterance_id
                )));
            }
        }
        if self.l.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Data(format!("`{}`: l outside (0, 1]", self.utterance_id)));
        }
        if let Some(g) = self.gold_label {
            if g >= n {
                return Err(Error::Data(format!("`{}`: label {g} out of range", self.utterance_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub y: Vec<f64>,
    /// Attention weights, one row per class; empty for merges without attention.
    pub weights: Vec<Vec<f64>>,
    pub class: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Cross-entropy of `softmax(y)` against `gold`, and its gradient w.r.t. `y`.
pub(crate) fn cross_entropy(y: &[f64], gold: usize) -> (f64, Vec<f64>) {
    let mut p = y.to_vec();
    softmax_in_place(&mut p);
    let loss = -p[gold].max(f64::MIN_POSITIVE).ln();
    p[gold] -= 1.0;
    (loss, p)
}

/// Builds the per-sample matrices for one dialogue. `adjustments` maps a
/// window index to the vectors it produced, keyed by sample key.
pub fn assemble(
    plan: &WindowPlan,
    adjustments: &HashMap<usize, HashMap<String, Vec<f64>>>,
    dialogue: &Dialogue,
) -> Result<Vec<AdjustmentMatrix>> {
    if plan.dialogue_id != dialogue.dialogue_id || plan.n_utterances != dialogue.len() {
        return Err(Error::Invariant(format!(
            "plan for `{}` does not match dialogue `{}`",
            plan.dialogue_id, dialogue.dialogue_id
        )));
    }
    dialogue
        .utterances
        .iter()
        .zip(&plan.coverage)
        .map(|(u, cov)| {
            let key = sample_key(&dialogue.dialogue_id, &u.utterance_id);
            if cov.windows.len() != plan.t {
                return Err(Error::Invariant(format!(
                    "`{key}` has {} adjustments, expected {}",
                    cov.windows.len(),
                    plan.t
                )));
            }
            let mut columns = cov
                .windows
                .iter()
                .map(|w| {
                    adjustments
                        .get(w)
                        .and_then(|m| m.get(&key))
                        .cloned()
                        .ok_or_else(|| Error::Invariant(format!("window {w} has no adjustment for `{key}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            columns.push(u.vanilla_probs.clone());
            let m = AdjustmentMatrix {
                dialogue_id: dialogue.dialogue_id.clone(),
                utterance_id: u.utterance_id.clone(),
                columns,
                l: receptive_lengths(plan, &u.utterance_id)?,
                gold_label: u.gold_label,
            };
            m.validate().map_err(|e| Error::Invariant(e.to_string()))?;
            Ok(m)
        })
        .collect()
}

/// A configured merge, serializable as a parameters file.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionModel {
    Rfa(FusionParameters),
    Add { include_vanilla: bool },
    Weights(NaiveWeights),
    Attn(PlainAttention),
}

impl FusionModel {
    pub fn kind(&self) -> MergeKind {
        match self {
            FusionModel::Rfa(_) => MergeKind::Rfa,
            FusionModel::Add { .. } => MergeKind::Add,
            FusionModel::Weights(_) => MergeKind::Weights,
            FusionModel::Attn(_) => MergeKind::Attn,
        }
    }

    pub fn apply(&self, m: &AdjustmentMatrix) -> Result<FusionOutput> {
        match self {
            FusionModel::Rfa(p) => rfa_forward(m, p),
            FusionModel::Add { include_vanilla } => Ok(merge_naive_add(m, *include_vanilla)),
            FusionModel::Weights(w) => w.forward(m),
            FusionModel::Attn(a) => a.forward(m),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            FusionModel::Rfa(p) => p.param_count(),
            FusionModel::Add { .. } => 0,
            FusionModel::Weights(w) => w.param_count(),
            FusionModel::Attn(a) => a.param_count(),
        }
    }

    pub fn to_file(&self) -> ParamsFile {
        let (n, t, arrays, include_vanilla) = match self {
            FusionModel::Rfa(p) => (p.n, p.t, p.named_arrays(), None),
            FusionModel::Add { include_vanilla } => (0, 0, Vec::new(), Some(*include_vanilla)),
            FusionModel::Weights(w) => (w.n, w.t, w.named_arrays(), None),
            FusionModel::Attn(a) => (a.n, a.t, a.named_arrays(), None),
        };
        ParamsFile {
            schema_version: PARAMS_SCHEMA_VERSION,
            kind: self.kind(),
            n,
            t,
            include_vanilla,
            arrays: arrays
                .into_iter()
                .map(|(name, shape, data)| NamedArray {
                    name: name.to_string(),
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ParamsFile) -> Result<Self> {
        if file.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported parameters schema version {}",
                file.schema_version
            )));
        }
        let get = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let a = file
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Data(format!("parameters file lacks array `{name}`")))?;
            if a.shape != shape || a.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Data(format!(
                    "array `{name}` has shape {:?}, expected {shape:?}",
                    a.shape
                )));
            }
            Ok(a.data.clone())
        };
        let (n, t) = (file.n, file.t);
        Ok(match file.kind {
            MergeKind::Add => FusionModel::Add {
                include_vanilla: file.include_vanilla.unwrap_or(true),
            },
            MergeKind::Rfa => FusionModel::Rfa(FusionParameters::from_named(n, t, get)?),
            MergeKind::Weights => FusionModel::Weights(NaiveWeights::from_named(n, t, get)?),
            MergeKind::Attn => FusionModel::Attn(PlainAttention::from_named(n, t, get)?),
        })
    }
}

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub kind: MergeKind,
    pub n: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_vanilla: Option<bool>,
    pub arrays: Vec<NamedArray>,
}

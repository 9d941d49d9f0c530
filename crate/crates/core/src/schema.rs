//! Domain types shared by every stage: the emotion label set, per-utterance
//! predictions from the upstream model, and dialogues.
//!
//! The upstream multi-task model is consumed purely as data. Its extra
//! regression head (the `3 × feature_size` parameters that predict valence,
//! arousal and dominance from the backbone feature) lives in that model and
//! has no counterpart here; only its outputs arrive, as [`DimensionScores`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ingested probability vectors must sum to one within this bound before
/// they are renormalized.
pub const INGEST_SUM_TOLERANCE: f64 = 1e-6;

/// Ordered emotion label set. The order indexes every probability vector in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EmotionSchema {
    class_names: Vec<String>,
}

impl EmotionSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let class_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if class_names.len() < 2 {
            return Err(Error::Config(format!(
                "emotion schema needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.trim().is_empty() {
                return Err(Error::Config("empty class name in schema".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate class name `{name}`")));
            }
        }
        Ok(Self { class_names })
    }

    /// The six-way IEMOCAP label set.
    pub fn iemocap_6way() -> Self {
        Self::new(["happy", "sad", "neutral", "angry", "excited", "frustrated"]).unwrap()
    }

    /// The four-way IEMOCAP label set.
    pub fn iemocap_4way() -> Self {
        Self::new(["happy", "sad", "neutral", "angry"]).unwrap()
    }

    pub fn n(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.class_names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

impl TryFrom<Vec<String>> for EmotionSchema {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<EmotionSchema> for Vec<String> {
    fn from(value: EmotionSchema) -> Self {
        value.class_names
    }
}

/// Valence, arousal and dominance on the dataset's own scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    #[serde(rename = "v")]
    pub valence: f64,
    #[serde(rename = "a")]
    pub arousal: f64,
    #[serde(rename = "d")]
    pub dominance: f64,
}

impl DimensionScores {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Self {
        Self {
            valence,
            arousal,
            dominance,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.valence, self.arousal, self.dominance]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(rename = "id")]
    pub utterance_id: String,
    pub speaker: String,
    pub text: String,
    pub vanilla_probs: Vec<f64>,
    pub dims: DimensionScores,
    #[serde(rename = "label", default)]
    pub gold_label: Option<usize>,
}

impl Utterance {
    /// Checks the utterance against `schema` and renormalizes its
    /// probabilities so they sum to exactly one.
    pub fn validate(mut self, schema: &EmotionSchema) -> Result<Self> {
        let fail = |check: String| Error::InvalidUtterance {
            utterance_id: self.utterance_id.clone(),
            check,
        };
        if self.vanilla_probs.len() != schema.n() {
            return Err(fail(format!(
                "vanilla_probs length {} does not match schema size {}",
                self.vanilla_probs.len(),
                schema.n()
            )));
        }
        if let Some(p) = self
            .vanilla_probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0)
        {
            return Err(fail(format!("vanilla_probs entry {p} is not a probability")));
        }
        let sum: f64 = self.vanilla_probs.iter().sum();
        if (sum - 1.0).abs() > INGEST_SUM_TOLERANCE {
            return Err(fail(format!("vanilla_probs sum is {sum}, expected 1")));
        }
        if !self.dims.is_finite() {
            return Err(fail("dims contain a non-finite value".into()));
        }
        if let Some(label) = self.gold_label {
            if label >= schema.n() {
                return Err(fail(format!(
                    "label {label} out of range for {} classes",
                    schema.n()
                )));
            }
        }
        for p in &mut self.vanilla_probs {
            *p /= sum;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn validate(self, schema: &EmotionSchema) -> Result<Self> {
        if self.utterances.is_empty() {
            return Err(Error::Data(format!(
                "dialogue `{}` has no utterances",
                self.dialogue_id
            )));
        }
        let mut ids = HashSet::new();
        for u in &self.utterances {
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(Error::InvalidUtterance {
                    utterance_id: u.utterance_id.clone(),
                    check: format!("duplicate id in dialogue `{}`", self.dialogue_id),
                });
            }
        }
        let Dialogue {
            dialogue_id,
            utterances,
        } = self;
        let utterances = utterances
            .into_iter()
            .map(|u| u.validate(schema))
            .collect::<Result<_>>()?;
        Ok(Dialogue {
            dialogue_id,
            utterances,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn position(&self, utterance_id: &str) -> Option<usize> {
        self.utterances
            .iter()
            .position(|u| u.utterance_id == utterance_id)
    }
}

/// Stable key addressing one sample across prompts, responses and retries.
pub fn sample_key(dialogue_id: &str, utterance_id: &str) -> String {
    format!("{dialogue_id}#{utterance_id}")
}

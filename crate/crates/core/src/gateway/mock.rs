//! Offline stand-in for an LLM.
//!
//! The mock reads the target sample blocks of a window prompt, and for each
//! one mixes the preliminary distribution with a one-hot vector on a target
//! label: the sample's oracle label with probability `reliability`, otherwise
//! a uniformly drawn other class. Padding costs reliability: a window whose
//! slots are a fraction `f` pads answers with reliability
//! `reliability * (1 - context_penalty * f)`, the way a model with less
//! dialogue to read guesses worse. With `perturbation = 0` it echoes its
//! input. All randomness is derived from the run seed and the request hash,
//! so responses do not depend on scheduling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, RequestSalt};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::prompter::SUMMARY_MARKER;
use crate::splitter::PAD_TEXT;

/// Sample key → label the mock sharpens toward.
pub type OracleLabels = Arc<HashMap<String, usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MockSettings {
    pub seed: u64,
    pub perturbation: f64,
    pub reliability: f64,
    pub context_penalty: f64,
    pub fail_attempts: u32,
}

impl MockSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            seed: cfg.seed,
            perturbation: cfg.mock.perturbation,
            reliability: cfg.mock.reliability,
            context_penalty: cfg.mock.context_penalty,
            fail_attempts: cfg.mock.fail_attempts,
        }
    }
}

pub struct MockBackend {
    settings: MockSettings,
    oracle: OracleLabels,
}

struct ParsedSample {
    key: String,
    probs: Vec<f64>,
}

impl MockBackend {
    pub fn new(settings: MockSettings, oracle: OracleLabels) -> Self {
        Self { settings, oracle }
    }

    fn rng(&self, prompt_hash: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.settings.seed.to_le_bytes());
        h.update(prompt_hash.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn summary(user: &str) -> String {
        let body = user.split_once(SUMMARY_MARKER).map_or(user, |(_, b)| b);
        let mut speakers: Vec<&str> = Vec::new();
        let mut turns = 0;
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            turns += 1;
            if let Some((speaker, _)) = line.split_once(':') {
                if !speakers.contains(&speaker) {
                    speakers.push(speaker);
                }
            }
        }
        format!(
            "A conversation of {turns} turns between {}.\nKnowledge: people usually keep a calm tone unless something surprising happens.",
            speakers.join(" and ")
        )
    }

    /// Fraction of window slots that are padding.
    fn pad_fraction(user: &str) -> f64 {
        let slots = user
            .lines()
            .filter(|l| l.starts_with("<sample key=") || *l == "<context>")
            .count();
        let pads = user.lines().filter(|l| l.strip_prefix("text: ") == Some(PAD_TEXT)).count();
        if slots == 0 {
            0.0
        } else {
            pads as f64 / slots as f64
        }
    }

    fn parse_samples(user: &str) -> Vec<ParsedSample> {
        let mut out = Vec::new();
        let mut current: Option<String> = None;
        for line in user.lines() {
            if let Some(rest) = line.strip_prefix("<sample key=\"") {
                current = rest.strip_suffix("\">").map(str::to_string);
            } else if let (Some(key), Some(rest)) = (&current, line.strip_prefix("preliminary: ")) {
                let probs: Vec<f64> = rest
                    .split_whitespace()
                    .filter_map(|kv| kv.split_once('=')?.1.parse().ok())
                    .collect();
                out.push(ParsedSample {
                    key: key.clone(),
                    probs,
                });
                current = None;
            }
        }
        out
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        let s = &self.settings;
        format!(
            "mock(seed={},perturbation={},reliability={},context_penalty={},fail_attempts={})",
            s.seed, s.perturbation, s.reliability, s.context_penalty, s.fail_attempts
        )
    }

    fn complete(&self, request: &ChatRequest, salt: RequestSalt, prompt_hash: &str) -> Result<String> {
        if request.user.starts_with(SUMMARY_MARKER) {
            return Ok(Self::summary(&request.user));
        }
        let mut rng = self.rng(prompt_hash);
        let samples = Self::parse_samples(&request.user);
        let reliability = self.settings.reliability * (1.0 - self.settings.context_penalty * Self::pad_fraction(&request.user));
        let keep = if self.settings.fail_attempts > 0 && salt.attempt <= self.settings.fail_attempts {
            // broken answer: the last sample goes missing
            samples.len().saturating_sub(1)
        } else {
            samples.len()
        };
        let mut out = String::new();
        for sample in samples.iter().take(keep) {
            let n = sample.probs.len();
            let sum: f64 = sample.probs.iter().sum();
            let base: Vec<f64> = sample.probs.iter().map(|p| p / sum).collect();
            let own = argmax(&base);
            let draw: f64 = rng.gen();
            let target = match self.oracle.get(&sample.key) {
                Some(&label) if draw < reliability || n < 2 => label,
                Some(&label) => {
                    let other = rng.gen_range(0..n - 1);
                    if other >= label {
                        other + 1
                    } else {
                        other
                    }
                }
                None => own,
            };
            let w = self.settings.perturbation;
            let values: Vec<String> = base
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let hot = if i == target { 1.0 } else { 0.0 };
                    format!("{:.6}", (1.0 - w) * p + w * hot)
                })
                .collect();
            let _ = writeln!(out, "{}: {}", sample.key, values.join(" "));
        }
        Ok(out)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

//! Synthetic dialogues for offline runs.
//!
//! Every dialogue gets exactly `round(vanilla_accuracy * len)` utterances
//! whose vanilla argmax is the gold label. The remaining utterances are
//! predicted as the gold label's confusion partner (happy/excited,
//! sad/frustrated, ...), which keeps the errors structured the way upstream
//! models tend to fail. Dimension scores are drawn around per-class means.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{Dialogue, DimensionScores, EmotionSchema, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dialogues: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vanilla_accuracy: f64,
    /// Standard deviation of the dimension scores around their class mean.
    pub dim_noise: f64,
    /// Probability that an utterance keeps the previous utterance's label.
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dialogues: 40,
            min_len: 12,
            max_len: 24,
            vanilla_accuracy: 0.65,
            dim_noise: 0.4,
            persistence: 0.5,
            seed: 0,
        }
    }
}

const KNOWN_PAIRS: [(&str, &str); 5] = [
    ("happy", "excited"),
    ("sad", "frustrated"),
    ("angry", "frustrated"),
    ("happy", "neutral"),
    ("sad", "neutral"),
];

/// The class a vanilla model most often mistakes `class` for.
pub fn confusion_partner(schema: &EmotionSchema, class: usize) -> usize {
    let name = schema.name(class);
    for (a, b) in KNOWN_PAIRS {
        let other = if name == a {
            b
        } else if name == b {
            a
        } else {
            continue;
        };
        if let Some(i) = schema.index_of(other) {
            return i;
        }
    }
    let n = schema.n();
    if n.is_multiple_of(2) || class + 1 < n {
        (class ^ 1) % n
    } else {
        0
    }
}

fn class_mean(schema: &EmotionSchema, class: usize) -> [f64; 3] {
    match schema.name(class) {
        "happy" => [4.0, 3.2, 3.2],
        "sad" => [1.8, 2.2, 2.2],
        "neutral" => [3.0, 2.5, 2.8],
        "angry" => [1.9, 4.0, 3.9],
        "excited" => [4.1, 4.0, 3.5],
        "frustrated" => [2.0, 3.3, 3.0],
        _ => {
            let a = class as f64 * 2.399;
            [3.0 + 1.5 * a.cos(), 3.0 + 1.5 * a.sin(), 2.0 + (class % 3) as f64]
        }
    }
}

fn phrase(schema: &EmotionSchema, class: usize, rng: &mut ChaCha8Rng) -> String {
    const LINES: [(&str, &[&str]); 6] = [
        ("happy", &["That sounds lovely.", "I'm really glad you came.", "Oh, that's so nice of you."]),
        ("sad", &["I miss him a lot.", "It just didn't work out.", "I don't know what to do anymore."]),
        ("neutral", &["Okay.", "Where did you park?", "I'll check tomorrow."]),
        ("angry", &["Don't you dare say that!", "This is ridiculous.", "Get out of my way."]),
        ("excited", &["No way, we actually got it!", "Let's go right now!", "This is amazing!"]),
        ("frustrated", &["I've asked three times already.", "Why does this keep happening?", "Forget it, it's useless."]),
    ];
    let name = schema.name(class);
    match LINES.iter().find(|(c, _)| *c == name) {
        Some((_, options)) => options[rng.gen_range(0..options.len())].to_string(),
        None => format!("({name})"),
    }
}

/// Vanilla distribution with argmax `top` and the runner-up mass on `second`.
fn vanilla_probs(n: usize, top: usize, second: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut p = vec![0.0; n];
        let peak: f64 = if n == 2 { rng.gen_range(0.55..0.8) } else { rng.gen_range(0.4..0.65) };
        let runner = if n == 2 {
            1.0 - peak
        } else {
            rng.gen_range(0.1..(peak - 0.05).min(1.0 - peak))
        };
        p[top] = peak;
        p[second] += runner;
        let rest: Vec<usize> = (0..n).filter(|&i| i != top && i != second).collect();
        let left = 1.0 - p.iter().sum::<f64>();
        let w: Vec<f64> = rest.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = w.iter().sum();
        for (&i, wi) in rest.iter().zip(&w) {
            p[i] = left * wi / total;
        }
        if rest.is_empty() {
            p[top] += left;
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        if (0..n).all(|i| i == top || p[i] < p[top]) {
            return p;
        }
    }
}

pub fn generate(spec: &SyntheticSpec, schema: &EmotionSchema) -> Vec<Dialogue> {
    let n = schema.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = rand_distr::Normal::new(0.0, spec.dim_noise.max(0.0)).expect("finite std");
    let (lo, hi) = (spec.min_len.max(1), spec.max_len.max(spec.min_len.max(1)));
    (0..spec.dialogues)
        .map(|d| {
            let len = rng.gen_range(lo..=hi);
            let mut labels = Vec::with_capacity(len);
            for i in 0..len {
                let keep = i > 0 && rng.gen_bool(spec.persistence.clamp(0.0, 1.0));
                labels.push(if keep { labels[i - 1] } else { rng.gen_range(0..n) });
            }
            let correct_count = (spec.vanilla_accuracy * len as f64).round() as usize;
            let mut correct = vec![false; len];
            correct[..correct_count.min(len)].iter_mut().for_each(|c| *c = true);
            correct.shuffle(&mut rng);
            let utterances = (0..len)
                .map(|i| {
                    let gold = labels[i];
                    let partner = confusion_partner(schema, gold);
                    let (top, second) = if correct[i] { (gold, partner) } else { (partner, gold) };
                    let mean = class_mean(schema, gold);
                    Utterance {
                        utterance_id: format!("u{i}"),
                        speaker: if i % 2 == 0 { "A" } else { "B" }.into(),
                        text: phrase(schema, gold, &mut rng),
                        vanilla_probs: vanilla_probs(n, top, second, &mut rng),
                        dims: DimensionScores::new(
                            mean[0] + noise.sample(&mut rng),
                            mean[1] + noise.sample(&mut rng),
                            mean[2] + noise.sample(&mut rng),
                        ),
                        gold_label: Some(gold),
                    }
                })
                .collect();
            Dialogue {
                dialogue_id: format!("syn{d:03}"),
                utterances,
            }
        })
        .collect()
}

/// Splits off the first `round(fraction * len)` dialogues.
pub fn split(dialogues: Vec<Dialogue>, fraction: f64) -> (Vec<Dialogue>, Vec<Dialogue>) {
    let k = ((fraction * dialogues.len() as f64).round() as usize).min(dialogues.len());
    let mut first = dialogues;
    let second = first.split_off(k);
    (first, second)
}

//! Parsing of adjustment responses and the three structural integrity rules:
//! every requested sample is answered, every answer has one probability per
//! class, and every answer sums to one. A response that breaks any rule is
//! discarded and the whole window is asked again.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, RequestSalt};
use crate::prompter::PromptBundle;

/// Slack added to the sum tolerance to absorb float rounding of decimal input.
const SUM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Well-formed answers keyed by sample key.
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Expected keys whose row could not be read as `n` probabilities, with
    /// the number of values found.
    pub malformed: BTreeMap<String, usize>,
    /// Lines that did not yield an accepted answer.
    pub remainder: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Rule 1: all samples answered.
    AllSamplesPredicted,
    /// Rule 2: every answer covers every emotion.
    AllEmotionsPresent,
    /// Rule 3: every answer sums to one.
    SumsToOne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed_rules(&self) -> Vec<Rule> {
        self.violations.iter().map(|v| v.rule).collect()
    }
}

fn clean_key(raw: &str) -> &str {
    raw.trim()
        .trim_start_matches(['-', '*', '•', '>'])
        .trim()
        .trim_matches(|c| matches!(c, '`' | '"' | '\'' | '*' | '[' | ']'))
        .trim()
}

fn parse_value(token: &str) -> Option<f64> {
    let token = token.rsplit_once('=').map_or(token, |(_, v)| v);
    let token = token.trim_matches(|c| matches!(c, '`' | '"' | '\'' | '(' | ')'));
    let value = match token.strip_suffix('%') {
        Some(pct) => pct.trim().parse::<f64>().ok()? / 100.0,
        None => token.parse::<f64>().ok()?,
    };
    (value.is_finite() && value >= 0.0).then_some(value)
}

/// Line-oriented parse of `key: p1 p2 ... pn` records. Values may be
/// decimals or percentages, separated by whitespace, commas or semicolons.
pub fn parse_response(raw: &str, expected_keys: &[String], n: usize) -> ParsedResponse {
    let expected: HashSet<&str> = expected_keys.iter().map(String::as_str).collect();
    let mut parsed = ParsedResponse::default();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((key, values)) = line.split_once(':') else {
            parsed.remainder.push(line.to_string());
            continue;
        };
        let key = clean_key(key);
        if !expected.contains(key) || parsed.vectors.contains_key(key) {
            parsed.remainder.push(line.to_string());
            continue;
        }
        let tokens: Vec<&str> = values
            .split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '[' | ']'))
            .filter(|t| !t.is_empty())
            .collect();
        let numbers: Vec<f64> = tokens.iter().filter_map(|t| parse_value(t)).collect();
        if numbers.len() != tokens.len() || numbers.len() != n {
            parsed.malformed.entry(key.to_string()).or_insert(numbers.len());
            parsed.remainder.push(line.to_string());
            continue;
        }
        parsed.malformed.remove(key);
        parsed.vectors.insert(key.to_string(), numbers);
    }
    parsed
}

/// Pure predicate over a parsed response.
pub fn check(parsed: &ParsedResponse, expected_keys: &[String], n: usize, tolerance: f64) -> Verdict {
    let mut violations = Vec::new();
    let missing: Vec<String> = expected_keys
        .iter()
        .filter(|k| !parsed.vectors.contains_key(*k) && !parsed.malformed.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() {
        violations.push(Violation {
            rule: Rule::AllSamplesPredicted,
            keys: missing,
        });
    }
    let mut short: Vec<String> = parsed.malformed.keys().cloned().collect();
    short.extend(
        parsed
            .vectors
            .iter()
            .filter(|(_, v)| v.len() != n)
            .map(|(k, _)| k.clone()),
    );
    if !short.is_empty() {
        short.sort();
        violations.push(Violation {
            rule: Rule::AllEmotionsPresent,
            keys: short,
        });
    }
    let bad_sums: Vec<String> = parsed
        .vectors
        .iter()
        .filter(|(_, v)| v.len() == n && (v.iter().sum::<f64>() - 1.0).abs() > tolerance + SUM_SLACK)
        .map(|(k, _)| k.clone())
        .collect();
    if !bad_sums.is_empty() {
        violations.push(Violation {
            rule: Rule::SumsToOne,
            keys: bad_sums,
        });
    }
    Verdict { violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub prompt_hash: String,
    pub verdict: Verdict,
}

/// What happened to one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub dialogue_id: String,
    pub window_index: usize,
    pub replica: usize,
    pub attempts: Vec<AttemptRecord>,
    /// True when every attempt failed and vanilla probabilities were substituted.
    pub fallback: bool,
    /// One vector per expected key, in the bundle's key order.
    pub adjustments: Vec<(String, Vec<f64>)>,
}

/// Asks the gateway for the window's adjustments, resubmitting the
/// identical prompt until a response passes the integrity check or
/// `max_retries` attempts have been made. On exhaustion every sample falls
/// back to `vanilla[key]`. Accepted vectors are renormalized to sum to one.
pub fn adjust_with_retry(
    gateway: &Gateway,
    bundle: &PromptBundle,
    vanilla: &HashMap<String, Vec<f64>>,
    n: usize,
    max_retries: u32,
    tolerance: f64,
) -> Result<WindowOutcome> {
    let chat = bundle.chat();
    let mut attempts = Vec::new();
    for attempt in 1..=max_retries {
        let exchange = gateway.complete(
            &chat,
            RequestSalt {
                replica: bundle.replica,
                attempt,
            },
        )?;
        let parsed = parse_response(&exchange.response, &bundle.expected_keys, n);
        let verdict = check(&parsed, &bundle.expected_keys, n, tolerance);
        let passed = verdict.passed();
        attempts.push(AttemptRecord {
            attempt,
            prompt_hash: exchange.prompt_hash,
            verdict,
        });
        if passed {
            let mut vectors = parsed.vectors;
            let adjustments = bundle
                .expected_keys
                .iter()
                .map(|k| {
                    let v = vectors.remove(k).expect("checked response has every key");
                    (k.clone(), renormalize(v))
                })
                .collect();
            return Ok(WindowOutcome {
                dialogue_id: bundle.dialogue_id.clone(),
                window_index: bundle.window_index,
                replica: bundle.replica,
                attempts,
                fallback: false,
                adjustments,
            });
        }
    }
    warn!(
        "window {} of `{}` failed the integrity check {max_retries} times; using vanilla predictions",
        bundle.window_index, bundle.dialogue_id
    );
    let adjustments = bundle
        .expected_keys
        .iter()
        .map(|k| {
            vanilla
                .get(k)
                .map(|v| (k.clone(), v.clone()))
                .ok_or_else(|| Error::Invariant(format!("no vanilla vector for `{k}`")))
        })
        .collect::<Result<_>>()?;
    Ok(WindowOutcome {
        dialogue_id: bundle.dialogue_id.clone(),
        window_index: bundle.window_index,
        replica: bundle.replica,
        attempts,
        fallback: true,
        adjustments,
    })
}

/// Scales a non-negative vector to sum to one. Argmax is preserved, and
/// when the sum is within `tol` of one each entry moves by at most `tol`.
pub fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        for p in &mut v {
            *p /= sum;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keys(ks: &[&str]) -> Vec<String> {
        ks.iter().map(|k| k.to_string()).collect()
    }

    #[test]
    fn full_response_parses() {
        let p = parse_response("d#1: 0.2 0.8\nd#2: 0.5, 0.5\n", &keys(&["d#1", "d#2"]), 2);
        assert_eq!(p.vectors.len(), 2);
        assert!(p.remainder.is_empty());
        assert!(check(&p, &keys(&["d#1", "d#2"]), 2, 1e-3).passed());
    }

    #[test]
    fn short_row_goes_to_remainder() {
        let p = parse_response("d#1: 0.2 0.3\n", &keys(&["d#1"]), 3);
        assert!(p.vectors.is_empty());
        assert_eq!(p.remainder, vec!["d#1: 0.2 0.3"]);
        let v = check(&p, &keys(&["d#1"]), 3, 1e-3);
        assert_eq!(v.failed_rules(), vec![Rule::AllEmotionsPresent]);
    }

    #[test]
    fn percent_tokens() {
        let p = parse_response("- `d#1`: 45% 55%", &keys(&["d#1"]), 2);
        assert_eq!(p.vectors["d#1"], vec![0.45, 0.55]);
    }

    #[test]
    fn labelled_values_and_unknown_keys() {
        let p = parse_response("d#1: a=0.1 b=0.9\nd#9: 0.5 0.5\nnote: fine", &keys(&["d#1"]), 2);
        assert_eq!(p.vectors["d#1"], vec![0.1, 0.9]);
        assert_eq!(p.remainder.len(), 2);
    }

    #[test]
    fn missing_key_fails_rule_one() {
        let p = parse_response("d#1: 0.5 0.5", &keys(&["d#1", "d#2"]), 2);
        let v = check(&p, &keys(&["d#1", "d#2"]), 2, 1e-3);
        assert_eq!(
            v.violations,
            vec![Violation {
                rule: Rule::AllSamplesPredicted,
                keys: keys(&["d#2"])
            }]
        );
    }

    #[test]
    fn sum_tolerance_boundary() {
        let ks = keys(&["d#1"]);
        let at = parse_response("d#1: 0.499 0.500", &ks, 2);
        assert!(check(&at, &ks, 2, 1e-3).passed());
        let over = parse_response("d#1: 0.49 0.49", &ks, 2);
        assert_eq!(check(&over, &ks, 2, 1e-3).failed_rules(), vec![Rule::SumsToOne]);
    }

    proptest! {
        #[test]
        fn renormalize_preserves_argmax_and_is_close(
            raw in proptest::collection::vec(0.01f64..1.0, 2..8),
            skew in -1e-3f64..1e-3,
        ) {
            let total: f64 = raw.iter().sum();
            let v: Vec<f64> = raw.iter().map(|x| x / total * (1.0 + skew)).collect();
            let out = renormalize(v.clone());
            let amax = |x: &[f64]| x.iter().enumerate().fold(0, |b, (i, y)| if *y > x[b] { i } else { b });
            prop_assert_eq!(amax(&v), amax(&out));
            for (a, b) in v.iter().zip(&out) {
                prop_assert!((a - b).abs() <= skew.abs() + 1e-15);
            }
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn check_is_pure(text in "[a-z#0-9:. %\n]{0,80}") {
            let ks = keys(&["d#1", "d#2"]);
            let p = parse_response(&text, &ks, 2);
            prop_assert_eq!(check(&p, &ks, 2, 1e-3), check(&p, &ks, 2, 1e-3));
        }
    }
}

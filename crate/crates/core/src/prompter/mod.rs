//! Prompt assembly.
//!
//! A window prompt is a system message (the header: task statement, output
//! contract, dimension statistics, worked exemplars and the dialogue
//! summary) and a user message holding one block per window slot. Target
//! slots carry a `<dialogue_id>#<utterance_id>` key that the response must
//! address; context and padding slots carry none.
//!
//! Template text lives under `templates/<version>/` and is compiled in. The
//! wording is this project's own and can be changed freely; bump
//! [`TEMPLATE_VERSION`] when it does; run manifests record the version.

mod stats;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::stats::{compute_dimension_stats, ClassDimStats, DimensionStats, Moments};
use crate::config::PromptToggles;
use crate::error::{Error, Result};
use crate::schema::{sample_key, Dialogue, DimensionScores, EmotionSchema, Utterance};
use crate::splitter::{Slot, Window, PAD_TEXT};

pub const TEMPLATE_VERSION: &str = "v1";

const HEADER_TEMPLATE: &str = include_str!("../../templates/v1/header.txt");
const SUMMARY_TEMPLATE: &str = include_str!("../../templates/v1/summary.txt");
const EXEMPLARS_6WAY: &str = include_str!("../../assets/exemplars_6way.json");
const EXEMPLARS_4WAY: &str = include_str!("../../assets/exemplars_4way.json");

/// Marker opening the transcript of a summary request.
pub const SUMMARY_MARKER: &str = "=== DIALOGUE TRANSCRIPT ===";
const INAUDIBLE: &str = "(inaudible)";

/// The two chat messages sent for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub speaker: String,
    pub text: String,
    pub probs: Vec<f64>,
    pub dims: DimensionScores,
    #[serde(default)]
    pub rationale: String,
    pub adjusted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExemplarSet {
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn from_json(text: &str, schema: &EmotionSchema, require_rationale: bool) -> Result<Self> {
        let set: ExemplarSet = serde_json::from_str(text)?;
        set.validate(schema, require_rationale)?;
        Ok(set)
    }

    pub fn load(path: &Path, schema: &EmotionSchema, require_rationale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, schema, require_rationale)
    }

    /// The shipped exemplars for the IEMOCAP label sets; empty for any other schema.
    pub fn builtin(schema: &EmotionSchema) -> Self {
        let text = if *schema == EmotionSchema::iemocap_6way() {
            EXEMPLARS_6WAY
        } else if *schema == EmotionSchema::iemocap_4way() {
            EXEMPLARS_4WAY
        } else {
            return Self::default();
        };
        Self::from_json(text, schema, true).expect("shipped exemplars are valid")
    }

    pub fn validate(&self, schema: &EmotionSchema, require_rationale: bool) -> Result<()> {
        for (i, ex) in self.exemplars.iter().enumerate() {
            for (name, v) in [("probs", &ex.probs), ("adjusted", &ex.adjusted)] {
                if v.len() != schema.n() {
                    return Err(Error::Data(format!(
                        "exemplar {i}: `{name}` has {} entries, schema has {}",
                        v.len(),
                        schema.n()
                    )));
                }
                let sum: f64 = v.iter().sum();
                if (sum - 1.0).abs() > 1e-3 || v.iter().any(|p| *p < 0.0) {
                    return Err(Error::Data(format!(
                        "exemplar {i}: `{name}` is not a distribution (sum {sum})"
                    )));
                }
            }
            if require_rationale && ex.rationale.trim().is_empty() {
                return Err(Error::Data(format!("exemplar {i}: empty rationale")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBlock {
    /// `None` for context and padding slots.
    pub key: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub dialogue_id: String,
    pub window_index: usize,
    pub replica: usize,
    pub header: String,
    pub summary: String,
    pub samples: Vec<SampleBlock>,
    pub expected_keys: Vec<String>,
}

impl PromptBundle {
    pub fn chat(&self) -> ChatPrompt {
        let mut system = self.header.clone();
        if !self.summary.trim().is_empty() {
            system.push_str("\nDialogue summary and relevant knowledge:\n");
            system.push_str(self.summary.trim_end());
            system.push('\n');
        }
        let mut user = format!("Dialogue {}:\n", self.dialogue_id);
        for block in &self.samples {
            user.push_str(&block.text);
        }
        ChatPrompt { system, user }
    }
}

fn transcript(text: &str) -> &str {
    if text.trim().is_empty() {
        INAUDIBLE
    } else {
        text
    }
}

fn fmt_probs(schema: &EmotionSchema, probs: &[f64]) -> String {
    schema
        .class_names()
        .iter()
        .zip(probs)
        .map(|(c, p)| format!("{c}={p:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_dims(d: &DimensionScores) -> String {
    format!(
        "valence={:.3} arousal={:.3} dominance={:.3}",
        d.valence, d.arousal, d.dominance
    )
}

fn sample_body(out: &mut String, schema: &EmotionSchema, speaker: &str, text: &str, dims: Option<&DimensionScores>, probs: &[f64]) {
    let _ = writeln!(out, "speaker: {speaker}");
    let _ = writeln!(out, "text: {text}");
    if let Some(d) = dims {
        let _ = writeln!(out, "dimensions: {}", fmt_dims(d));
    }
    let _ = writeln!(out, "preliminary: {}", fmt_probs(schema, probs));
}

fn target_block(schema: &EmotionSchema, key: &str, u: &Utterance) -> String {
    let mut out = format!("<sample key=\"{key}\">\n");
    sample_body(&mut out, schema, &u.speaker, transcript(&u.text), Some(&u.dims), &u.vanilla_probs);
    out.push_str("</sample>\n");
    out
}

fn context_block(schema: &EmotionSchema, u: Option<&Utterance>) -> String {
    let mut out = String::from("<context>\n");
    match u {
        Some(u) => sample_body(&mut out, schema, &u.speaker, transcript(&u.text), Some(&u.dims), &u.vanilla_probs),
        None => {
            let uniform = vec![1.0 / schema.n() as f64; schema.n()];
            sample_body(&mut out, schema, PAD_TEXT, PAD_TEXT, None, &uniform);
        }
    }
    out.push_str("</context>\n");
    out
}

fn stats_block(stats: &DimensionStats) -> String {
    let mut out = String::from(
        "\nReference statistics of the dimension scores for each emotion in the training data (mean ± std):\n",
    );
    let width = stats.classes.iter().map(|c| c.class.len()).max().unwrap_or(5).max(7);
    let _ = writeln!(
        out,
        "{:<width$} | {:>5} | {:>15} | {:>15} | {:>15}",
        "emotion", "count", "valence", "arousal", "dominance"
    );
    for c in stats.classes.iter().filter(|c| c.count > 0) {
        let m = |m: &Moments| format!("{:.3} ± {:.3}", m.mean, m.std);
        let _ = writeln!(
            out,
            "{:<width$} | {:>5} | {:>15} | {:>15} | {:>15}",
            c.class,
            c.count,
            m(&c.valence),
            m(&c.arousal),
            m(&c.dominance)
        );
    }
    out
}

fn exemplar_block(schema: &EmotionSchema, set: &ExemplarSet, cot: bool) -> String {
    let mut out = String::from("\nWorked examples:\n");
    for (i, ex) in set.exemplars.iter().enumerate() {
        let key = format!("example#{}", i + 1);
        let _ = writeln!(out, "Example {}:", i + 1);
        let _ = writeln!(out, "<sample key=\"{key}\">");
        sample_body(&mut out, schema, &ex.speaker, transcript(&ex.text), Some(&ex.dims), &ex.probs);
        out.push_str("</sample>\n");
        if cot && !ex.rationale.trim().is_empty() {
            let _ = writeln!(out, "Reasoning: {}", ex.rationale.trim());
        }
        let probs: Vec<String> = ex.adjusted.iter().map(|p| format!("{p:.3}")).collect();
        let _ = writeln!(out, "Answer:\n{key}: {}", probs.join(" "));
    }
    out
}

/// Inputs shared by every window of a run.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub schema: &'a EmotionSchema,
    pub stats: Option<&'a DimensionStats>,
    pub exemplars: &'a ExemplarSet,
    pub toggles: PromptToggles,
}

/// Header text for a run; identical for every window.
pub fn build_header(ctx: &PromptContext<'_>) -> String {
    let mut header = HEADER_TEMPLATE
        .replace("{{classes}}", &ctx.schema.class_names().join(", "))
        .replace("{{n}}", &ctx.schema.n().to_string());
    if ctx.toggles.stats {
        if let Some(stats) = ctx.stats {
            header.push_str(&stats_block(stats));
        }
    }
    if ctx.toggles.exemplars && !ctx.exemplars.is_empty() {
        header.push_str(&exemplar_block(ctx.schema, ctx.exemplars, ctx.toggles.cot));
    }
    header
}

pub fn build_window_prompt(
    ctx: &PromptContext<'_>,
    dialogue: &Dialogue,
    window: &Window,
    summary: &str,
) -> PromptBundle {
    let mut samples = Vec::with_capacity(window.slots.len());
    let mut expected_keys = Vec::new();
    for slot in &window.slots {
        match *slot {
            Slot::Target(i) => {
                let u = &dialogue.utterances[i];
                let key = sample_key(&dialogue.dialogue_id, &u.utterance_id);
                samples.push(SampleBlock {
                    text: target_block(ctx.schema, &key, u),
                    key: Some(key.clone()),
                });
                expected_keys.push(key);
            }
            Slot::Context(i) => samples.push(SampleBlock {
                key: None,
                text: context_block(ctx.schema, Some(&dialogue.utterances[i])),
            }),
            Slot::Pad => samples.push(SampleBlock {
                key: None,
                text: context_block(ctx.schema, None),
            }),
        }
    }
    PromptBundle {
        dialogue_id: dialogue.dialogue_id.clone(),
        window_index: window.window_index,
        replica: window.replica,
        header: build_header(ctx),
        summary: if ctx.toggles.summary {
            summary.to_string()
        } else {
            String::new()
        },
        samples,
        expected_keys,
    }
}

/// Request for a dialogue summary plus background knowledge, built from the
/// transcriptions alone.
pub fn build_summary_request(dialogue: &Dialogue) -> ChatPrompt {
    let mut user = format!("{SUMMARY_MARKER}\n");
    for u in &dialogue.utterances {
        let _ = writeln!(user, "{}: {}", u.speaker, transcript(&u.text));
    }
    ChatPrompt {
        system: SUMMARY_TEMPLATE.to_string(),
        user,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitter::{plan_padded, plan_sliding};

    fn dialogue() -> Dialogue {
        let schema = EmotionSchema::iemocap_4way();
        let mk = |id: &str, speaker: &str, text: &str, label| Utterance {
            utterance_id: id.into(),
            speaker: speaker.into(),
            text: text.into(),
            vanilla_probs: vec![0.1, 0.2, 0.3, 0.4],
            dims: DimensionScores::new(2.5, 3.0, 2.75),
            gold_label: Some(label),
        };
        Dialogue {
            dialogue_id: "d1".into(),
            utterances: vec![
                mk("u1", "F", "Where were you?", 3),
                mk("u2", "M", "   ", 2),
                mk("u3", "F", "Fine.", 1),
            ],
        }
        .validate(&schema)
        .unwrap()
    }

    fn ctx<'a>(
        schema: &'a EmotionSchema,
        stats: &'a DimensionStats,
        ex: &'a ExemplarSet,
        toggles: PromptToggles,
    ) -> PromptContext<'a> {
        PromptContext {
            schema,
            stats: Some(stats),
            exemplars: ex,
            toggles,
        }
    }

    #[test]
    fn padding_is_not_addressable() {
        let schema = EmotionSchema::iemocap_4way();
        let d = dialogue();
        let stats = compute_dimension_stats(std::slice::from_ref(&d), &schema).unwrap();
        let ex = ExemplarSet::builtin(&schema);
        let plan = plan_sliding(&d, 2, 4).unwrap();
        // first window: 2 pads + u1, u2
        let w = &plan.windows[0];
        assert_eq!(w.real_count, 2);
        let b = build_window_prompt(&ctx(&schema, &stats, &ex, PromptToggles::default()), &d, w, "S");
        assert_eq!(b.expected_keys, vec!["d1#u1", "d1#u2"]);
        let chat = b.chat();
        assert_eq!(chat.user.matches("<sample key=").count(), 2);
        assert_eq!(chat.user.matches("<context>").count(), 2);
        assert!(chat.user.contains("text: (inaudible)"));
        assert!(chat.user.contains("preliminary: happy=0.100 sad=0.200 neutral=0.300 angry=0.400"));
    }

    #[test]
    fn padded_context_is_rendered_without_keys() {
        let schema = EmotionSchema::iemocap_4way();
        let d = dialogue();
        let ex = ExemplarSet::default();
        let stats = compute_dimension_stats(std::slice::from_ref(&d), &schema).unwrap();
        let plan = plan_padded(&d, 1, 3, 1).unwrap();
        let b = build_window_prompt(&ctx(&schema, &stats, &ex, PromptToggles::default()), &d, &plan.windows[1], "");
        assert_eq!(b.expected_keys, vec!["d1#u2"]);
        assert_eq!(b.samples.iter().filter(|s| s.key.is_none()).count(), 2);
        assert!(b.chat().user.contains("text: Where were you?"));
    }

    #[test]
    fn toggles_remove_exactly_their_block() {
        let schema = EmotionSchema::iemocap_4way();
        let d = dialogue();
        let stats = compute_dimension_stats(std::slice::from_ref(&d), &schema).unwrap();
        let ex = ExemplarSet::builtin(&schema);
        let plan = plan_sliding(&d, 1, 3).unwrap();
        let w = &plan.windows[0];
        let full = build_window_prompt(&ctx(&schema, &stats, &ex, PromptToggles::default()), &d, w, "A summary.").chat();
        assert!(full.system.contains("Reference statistics"));
        assert!(full.system.contains("Reasoning:"));
        assert!(full.system.contains("A summary."));

        let no_stats = PromptToggles { stats: false, ..Default::default() };
        let p = build_window_prompt(&ctx(&schema, &stats, &ex, no_stats), &d, w, "A summary.").chat();
        assert!(!p.system.contains("Reference statistics"));
        assert_eq!(p.system, full.system.replace(&stats_block(&stats), ""));
        assert_eq!(p.user, full.user);

        let no_cot = PromptToggles { cot: false, ..Default::default() };
        let p = build_window_prompt(&ctx(&schema, &stats, &ex, no_cot), &d, w, "A summary.").chat();
        assert!(!p.system.contains("Reasoning:"));
        assert!(p.system.contains("Worked examples:"));
        assert!(p.system.contains("example#2: 0.010 0.050 0.140 0.800"));

        let no_ex = PromptToggles { exemplars: false, ..Default::default() };
        let p = build_window_prompt(&ctx(&schema, &stats, &ex, no_ex), &d, w, "A summary.").chat();
        assert_eq!(p.system, full.system.replace(&exemplar_block(&schema, &ex, true), ""));

        let no_sum = PromptToggles { summary: false, ..Default::default() };
        let p = build_window_prompt(&ctx(&schema, &stats, &ex, no_sum), &d, w, "A summary.").chat();
        assert!(!p.system.contains("A summary."));
        assert!(full.system.starts_with(&p.system));
    }

    #[test]
    fn prompts_are_deterministic() {
        let schema = EmotionSchema::iemocap_4way();
        let d = dialogue();
        let stats = compute_dimension_stats(std::slice::from_ref(&d), &schema).unwrap();
        let ex = ExemplarSet::builtin(&schema);
        let plan = plan_sliding(&d, 3, 3).unwrap();
        let c = ctx(&schema, &stats, &ex, PromptToggles::default());
        for w in &plan.windows {
            assert_eq!(build_window_prompt(&c, &d, w, "s"), build_window_prompt(&c, &d, w, "s"));
        }
    }

    #[test]
    fn summary_request_lists_speakers_in_order() {
        let req = build_summary_request(&dialogue());
        let body = req.user.split_once(SUMMARY_MARKER).unwrap().1;
        assert_eq!(body.trim(), "F: Where were you?\nM: (inaudible)\nF: Fine.");
        assert!(!req.user.contains("0.100"), "summary request must be text-only");
    }

    #[test]
    fn exemplar_validation() {
        let schema = EmotionSchema::iemocap_6way();
        assert_eq!(ExemplarSet::builtin(&schema).len(), 2);
        let bad = r#"[{"speaker":"A","text":"x","probs":[0.5,0.5],"dims":{"v":0,"a":0,"d":0},"rationale":"","adjusted":[0.5,0.5]}]"#;
        let two = EmotionSchema::new(["a", "b"]).unwrap();
        assert!(ExemplarSet::from_json(bad, &two, true).is_err());
        assert!(ExemplarSet::from_json(bad, &two, false).is_ok());
        assert!(ExemplarSet::from_json(bad, &schema, false).is_err());
    }
}

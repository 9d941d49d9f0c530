//! Partitioning of a dialogue into receptive fields.
//!
//! Three strategies are supported. `Sliding` moves a window of `s * t`
//! slots forward by `s = floor(W / t)` utterances at a time, starting with a
//! window that holds only the first step and ending once the window has fully
//! left the dialogue; every utterance lands in exactly `t` windows. `Naive`
//! cuts disjoint spans of `W` and lists each one `t` times. `Padded` cuts
//! disjoint cores and widens each with context-only neighbours.

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SplitStrategy};
use crate::error::{Error, Result};
use crate::schema::Dialogue;

/// Placeholder text carried by padding slots.
pub const PAD_TEXT: &str = "[PAD]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Slot {
    /// A real utterance whose adjustment is requested.
    Target(usize),
    /// A real utterance shown for context only; its prediction is discarded.
    Context(usize),
    Pad,
}

impl Slot {
    pub fn utterance(&self) -> Option<usize> {
        match *self {
            Slot::Target(i) | Slot::Context(i) => Some(i),
            Slot::Pad => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub window_index: usize,
    /// Position of the first slot relative to utterance 0; negative means leading padding.
    pub start_offset: i64,
    /// Which repeat of an identical span this is (always 0 for sliding windows).
    pub replica: usize,
    pub slots: Vec<Slot>,
    pub real_count: usize,
}

impl Window {
    fn from_slots(window_index: usize, start_offset: i64, replica: usize, slots: Vec<Slot>) -> Self {
        let real_count = slots.iter().filter(|s| s.utterance().is_some()).count();
        Self {
            window_index,
            start_offset,
            replica,
            slots,
            real_count,
        }
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().filter_map(|s| match *s {
            Slot::Target(i) => Some(i),
            _ => None,
        })
    }

    /// Inclusive range of real utterances in the window.
    pub fn real_span(&self) -> Option<(usize, usize)> {
        let mut it = self.slots.iter().filter_map(Slot::utterance);
        let first = it.next()?;
        Some((first, it.next_back().unwrap_or(first)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub utterance_id: String,
    /// Covering window indices, ascending by start offset.
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub dialogue_id: String,
    pub strategy: SplitStrategy,
    pub step_size: usize,
    pub t: usize,
    pub n_utterances: usize,
    pub windows: Vec<Window>,
    /// One entry per utterance, in dialogue order.
    pub coverage: Vec<Coverage>,
}

impl WindowPlan {
    fn build(
        dialogue: &Dialogue,
        strategy: SplitStrategy,
        step_size: usize,
        t: usize,
        windows: Vec<Window>,
    ) -> Self {
        let mut coverage: Vec<Coverage> = dialogue
            .utterances
            .iter()
            .map(|u| Coverage {
                utterance_id: u.utterance_id.clone(),
                windows: Vec::new(),
            })
            .collect();
        // windows are emitted in ascending start_offset order
        for w in &windows {
            for i in w.targets() {
                coverage[i].windows.push(w.window_index);
            }
        }
        Self {
            dialogue_id: dialogue.dialogue_id.clone(),
            strategy,
            step_size,
            t,
            n_utterances: dialogue.len(),
            windows,
            coverage,
        }
    }

    pub fn coverage_of(&self, utterance_id: &str) -> Option<&Coverage> {
        self.coverage.iter().find(|c| c.utterance_id == utterance_id)
    }
}

pub fn plan(dialogue: &Dialogue, cfg: &PipelineConfig) -> Result<WindowPlan> {
    match cfg.split {
        SplitStrategy::Sliding => plan_sliding(dialogue, cfg.t, cfg.window),
        SplitStrategy::Naive => plan_naive(dialogue, cfg.t, cfg.window),
        SplitStrategy::Padded => plan_padded(dialogue, cfg.t, cfg.window, cfg.padded_core()),
    }
}

fn check_shape(t: usize, window: usize) -> Result<()> {
    if t == 0 || window < t {
        return Err(Error::Config(format!(
            "window planning needs t >= 1 and window >= t (t = {t}, window = {window})"
        )));
    }
    Ok(())
}

/// Sliding receptive fields: step `s = floor(W / t)`, span `s * t`.
pub fn plan_sliding(dialogue: &Dialogue, t: usize, window: usize) -> Result<WindowPlan> {
    check_shape(t, window)?;
    let n = dialogue.len() as i64;
    let s = window / t;
    let span = (s * t) as i64;
    let mut windows = Vec::new();
    let mut start = s as i64 - span;
    while start < n {
        let slots = (start..start + span)
            .map(|pos| {
                if (0..n).contains(&pos) {
                    Slot::Target(pos as usize)
                } else {
                    Slot::Pad
                }
            })
            .collect();
        windows.push(Window::from_slots(windows.len(), start, 0, slots));
        start += s as i64;
    }
    Ok(WindowPlan::build(dialogue, SplitStrategy::Sliding, s, t, windows))
}

/// Disjoint spans of `W`, each listed `t` times.
pub fn plan_naive(dialogue: &Dialogue, t: usize, window: usize) -> Result<WindowPlan> {
    check_shape(t, window)?;
    let n = dialogue.len();
    let mut windows = Vec::new();
    for start in (0..n).step_by(window) {
        let end = (start + window).min(n);
        for replica in 0..t {
            let slots = (start..end).map(Slot::Target).collect();
            windows.push(Window::from_slots(windows.len(), start as i64, replica, slots));
        }
    }
    Ok(WindowPlan::build(dialogue, SplitStrategy::Naive, window, t, windows))
}

/// Disjoint cores of `core` utterances widened by `p = floor((W - core) / 2)`
/// context slots on each side, each window listed `t` times.
pub fn plan_padded(dialogue: &Dialogue, t: usize, window: usize, core: usize) -> Result<WindowPlan> {
    check_shape(t, window)?;
    if core == 0 || core > window {
        return Err(Error::Config(format!(
            "padded core ({core}) must be in 1..={window}"
        )));
    }
    let n = dialogue.len() as i64;
    let p = ((window - core) / 2) as i64;
    let mut windows = Vec::new();
    for core_start in (0..n).step_by(core) {
        let core_end = (core_start + core as i64).min(n);
        for replica in 0..t {
            let slots = (core_start - p..core_end + p)
                .map(|pos| {
                    if (core_start..core_end).contains(&pos) {
                        Slot::Target(pos as usize)
                    } else if (0..n).contains(&pos) {
                        Slot::Context(pos as usize)
                    } else {
                        Slot::Pad
                    }
                })
                .collect();
            windows.push(Window::from_slots(windows.len(), core_start - p, replica, slots));
        }
    }
    Ok(WindowPlan::build(dialogue, SplitStrategy::Padded, core, t, windows))
}

/// Proportion of the dialogue visible in each of the `t` windows covering
/// `utterance_id`, in coverage order.
pub fn receptive_lengths(plan: &WindowPlan, utterance_id: &str) -> Result<Vec<f64>> {
    let cov = plan.coverage_of(utterance_id).ok_or_else(|| {
        Error::Data(format!(
            "utterance `{utterance_id}` not in plan for `{}`",
            plan.dialogue_id
        ))
    })?;
    if cov.windows.len() != plan.t {
        return Err(Error::Invariant(format!(
            "utterance `{utterance_id}` covered {} times, expected {}",
            cov.windows.len(),
            plan.t
        )));
    }
    let n = plan.n_utterances as f64;
    Ok(cov
        .windows
        .iter()
        .map(|&w| plan.windows[w].real_count as f64 / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{DimensionScores, Utterance};

    pub(crate) fn dialogue(n: usize) -> Dialogue {
        Dialogue {
            dialogue_id: "d".into(),
            utterances: (0..n)
                .map(|i| Utterance {
                    utterance_id: format!("u{i}"),
                    speaker: "A".into(),
                    text: format!("line {i}"),
                    vanilla_probs: vec![0.5, 0.5],
                    dims: DimensionScores::new(0.0, 0.0, 0.0),
                    gold_label: None,
                })
                .collect(),
        }
    }

    fn spans(plan: &WindowPlan) -> Vec<(usize, usize)> {
        plan.windows.iter().map(|w| w.real_span().unwrap()).collect()
    }

    #[test]
    fn sliding_six_by_six_t3() {
        let plan = plan_sliding(&dialogue(6), 3, 6).unwrap();
        assert_eq!(plan.step_size, 2);
        assert_eq!(spans(&plan), vec![(0, 1), (0, 3), (0, 5), (2, 5), (4, 5)]);
        assert!(plan.coverage.iter().all(|c| c.windows.len() == 3));
        assert!(plan.windows.iter().all(|w| w.slots.len() == 6));
        let offsets: Vec<i64> = plan.windows.iter().map(|w| w.start_offset).collect();
        assert_eq!(offsets, vec![-4, -2, 0, 2, 4]);
    }

    #[test]
    fn sliding_single_utterance() {
        let plan = plan_sliding(&dialogue(1), 3, 3).unwrap();
        assert_eq!(plan.windows.len(), 3);
        for w in &plan.windows {
            assert_eq!(w.real_count, 1);
            assert_eq!(w.slots.iter().filter(|s| **s == Slot::Pad).count(), 2);
        }
        assert_eq!(receptive_lengths(&plan, "u0").unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn sliding_lengths_for_fifth_utterance() {
        let plan = plan_sliding(&dialogue(6), 3, 6).unwrap();
        let l = receptive_lengths(&plan, "u4").unwrap();
        assert_eq!(l, vec![6.0 / 6.0, 4.0 / 6.0, 2.0 / 6.0]);
    }

    #[test]
    fn sliding_saturated_middle() {
        let plan = plan_sliding(&dialogue(30), 3, 6).unwrap();
        let l = receptive_lengths(&plan, "u15").unwrap();
        assert_eq!(l, vec![6.0 / 30.0; 3]);
    }

    #[test]
    fn naive_examples() {
        let p = plan_naive(&dialogue(6), 2, 3).unwrap();
        assert_eq!(spans(&p), vec![(0, 2), (0, 2), (3, 5), (3, 5)]);
        let p = plan_naive(&dialogue(3), 2, 6).unwrap();
        assert_eq!(spans(&p), vec![(0, 2), (0, 2)]);
        let p = plan_naive(&dialogue(7), 1, 3).unwrap();
        assert_eq!(spans(&p), vec![(0, 2), (3, 5), (6, 6)]);
        assert!(p.coverage.iter().all(|c| c.windows.len() == 1));
    }

    #[test]
    fn padded_middle_window_context() {
        let p = plan_padded(&dialogue(9), 2, 5, 3).unwrap();
        // windows come in pairs; the middle core is the second pair
        let mid = &p.windows[2];
        assert_eq!(mid.targets().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(mid.slots.first(), Some(&Slot::Context(2)));
        assert_eq!(mid.slots.last(), Some(&Slot::Context(6)));
        assert_eq!(mid.real_count, 5);
        let first = &p.windows[0];
        assert_eq!(first.slots[0], Slot::Pad);
        assert_eq!(first.slots[4], Slot::Context(3));
        assert!(p.coverage.iter().all(|c| c.windows.len() == 2));
    }

    #[test]
    fn unknown_utterance_errors() {
        let plan = plan_sliding(&dialogue(3), 1, 2).unwrap();
        assert!(receptive_lengths(&plan, "nope").is_err());
    }
}

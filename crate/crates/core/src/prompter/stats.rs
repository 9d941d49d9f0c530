use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Dialogue, EmotionSchema};

/// Moments of one dimension over the samples of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDimStats {
    pub class: String,
    pub count: usize,
    pub valence: Moments,
    pub arousal: Moments,
    pub dominance: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub classes: Vec<ClassDimStats>,
    /// Observed `[min, max]` of valence, arousal and dominance over all labeled samples.
    pub ranges: [[f64; 2]; 3],
}

impl DimensionStats {
    pub fn get(&self, class: &str) -> Option<&ClassDimStats> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Per-class mean and population std of the dimension scores of every labeled utterance.
pub fn compute_dimension_stats(dialogues: &[Dialogue], schema: &EmotionSchema) -> Result<DimensionStats> {
    let n = schema.n();
    let mut groups: Vec<Vec<[f64; 3]>> = vec![Vec::new(); n];
    let mut ranges = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    for u in dialogues.iter().flat_map(|d| &d.utterances) {
        let Some(label) = u.gold_label else { continue };
        let dims = u.dims.as_array();
        for (r, v) in ranges.iter_mut().zip(dims) {
            r[0] = r[0].min(v);
            r[1] = r[1].max(v);
        }
        groups[label].push(dims);
    }
    if groups.iter().all(Vec::is_empty) {
        return Err(Error::Data(
            "dimension statistics need at least one labeled utterance".into(),
        ));
    }
    let classes = groups
        .iter()
        .enumerate()
        .map(|(c, samples)| {
            let m = |k: usize| moments(samples.iter().map(|s| s[k]));
            ClassDimStats {
                class: schema.name(c).to_string(),
                count: samples.len(),
                valence: m(0),
                arousal: m(1),
                dominance: m(2),
            }
        })
        .collect();
    Ok(DimensionStats { classes, ranges })
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> Moments {
    let count = values.clone().count();
    if count == 0 {
        return Moments { mean: 0.0, std: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    Moments {
        mean,
        std: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{DimensionScores, Utterance};

    fn labeled(id: &str, label: Option<usize>, v: f64) -> Utterance {
        Utterance {
            utterance_id: id.into(),
            speaker: "A".into(),
            text: String::new(),
            vanilla_probs: vec![0.5, 0.5],
            dims: DimensionScores::new(v, 2.0, 3.0),
            gold_label: label,
        }
    }

    fn schema() -> EmotionSchema {
        EmotionSchema::new(["happy", "sad"]).unwrap()
    }

    #[test]
    fn two_point_population_std() {
        let d = Dialogue {
            dialogue_id: "d".into(),
            utterances: vec![
                labeled("a", Some(1), 1.0),
                labeled("b", Some(1), 2.0),
                labeled("c", None, 100.0),
            ],
        };
        let s = compute_dimension_stats(&[d], &schema()).unwrap();
        let sad = s.get("sad").unwrap();
        assert_eq!(sad.count, 2);
        assert_eq!(sad.valence.mean, 1.5);
        assert_eq!(sad.valence.std, 0.5);
        assert_eq!(sad.arousal.std, 0.0);
        assert_eq!(s.get("happy").unwrap().count, 0);
        assert_eq!(s.ranges[0], [1.0, 2.0]);
    }

    #[test]
    fn single_sample_class_has_zero_std() {
        let d = Dialogue {
            dialogue_id: "d".into(),
            utterances: vec![labeled("a", Some(0), 4.0)],
        };
        let s = compute_dimension_stats(&[d], &schema()).unwrap();
        assert_eq!(s.get("happy").unwrap().valence.std, 0.0);
    }

    #[test]
    fn no_labels_is_an_error() {
        let d = Dialogue {
            dialogue_id: "d".into(),
            utterances: vec![labeled("a", None, 4.0)],
        };
        assert!(compute_dimension_stats(&[d], &schema()).is_err());
    }
}

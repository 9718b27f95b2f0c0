//! Confusion counts, accuracy and macro-averaged F1.
//!
//! The positive class is "answered correctly". A prediction of `true` means
//! the model expects a correct answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, prediction: bool, label: bool) {
        match (prediction, label) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<ConfusionCounts, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.record(p, l);
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    match c.total() {
        0 => Err(MetricsError::Empty),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

fn class_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 scores. A class with no support and
/// no predictions scores 0.
pub fn macro_f1(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let f0 = class_f1(c.tp, c.fp, c.fn_);
    let f1 = class_f1(c.tn, c.fn_, c.fp);
    Ok(0.5 * (f0 + f1))
}

/// Accuracy and macro-F1 in one call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub counts: ConfusionCounts,
}

pub fn score(predictions: &[bool], labels: &[bool]) -> Result<Scores, MetricsError> {
    let counts = confusion(predictions, labels)?;
    Ok(Scores {
        accuracy: accuracy(&counts)?,
        macro_f1: macro_f1(&counts)?,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_confusion() {
        let c = confusion(&[true, true, false], &[true, false, false]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                tn: 1,
                fp: 1,
                fn_: 0
            }
        );
    }

    #[test]
    fn all_agree_and_all_disagree() {
        let l = [true; 5];
        assert_eq!(
            confusion(&l, &l).unwrap(),
            ConfusionCounts {
                tp: 5,
                ..Default::default()
            }
        );
        let labels = [true, false, true];
        let preds: Vec<bool> = labels.iter().map(|l| !l).collect();
        let c = confusion(&preds, &labels).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn errors() {
        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(
            confusion(&[true], &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(
            accuracy(&ConfusionCounts::default()),
            Err(MetricsError::Empty)
        );
        assert_eq!(
            macro_f1(&ConfusionCounts::default()),
            Err(MetricsError::Empty)
        );
    }

    #[test]
    fn hand_case() {
        let c = ConfusionCounts {
            tp: 3,
            tn: 2,
            fp: 1,
            fn_: 2,
        };
        assert_eq!(accuracy(&c).unwrap(), 0.625);
        let f = macro_f1(&c).unwrap();
        assert!((f - 0.5 * (6.0 / 9.0 + 4.0 / 7.0)).abs() < 1e-15);
        assert!((f - 0.6190).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_single_class() {
        let c = ConfusionCounts {
            tp: 4,
            tn: 3,
            fp: 0,
            fn_: 0,
        };
        assert_eq!((accuracy(&c).unwrap(), macro_f1(&c).unwrap()), (1.0, 1.0));
        let c = ConfusionCounts {
            tp: 9,
            ..Default::default()
        };
        assert_eq!(macro_f1(&c).unwrap(), 0.5);
    }

    #[test]
    fn majority_on_paper_bias() {
        let labels: Vec<bool> = (0..1000).map(|i| i < 665).collect();
        let s = score(&vec![true; 1000], &labels).unwrap();
        assert!((s.accuracy - 0.665).abs() < 1e-15);
    }
}

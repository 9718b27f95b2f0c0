//! Per-question correct-rate baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelKind, Result, SequenceModel};
use crate::data::{DataError, Dataset, Interaction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    /// Training correct-rate per question.
    pub rates: BTreeMap<u32, f64>,
    /// Training correct-rate overall; used for unseen questions.
    pub global: f64,
}

impl BiasTable {
    pub fn fit(train: &Dataset) -> Result<Self, DataError> {
        let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        let (mut hits, mut total) = (0u64, 0u64);
        for i in train.interactions() {
            let e = counts.entry(i.question_id).or_default();
            e.0 += i.correct as u64;
            e.1 += 1;
            hits += i.correct as u64;
            total += 1;
        }
        if total == 0 {
            return Err(DataError::EmptyDataset);
        }
        Ok(Self {
            rates: counts
                .into_iter()
                .map(|(q, (c, n))| (q, c as f64 / n as f64))
                .collect(),
            global: hits as f64 / total as f64,
        })
    }

    pub fn rate(&self, question_id: u32) -> f64 {
        self.rates.get(&question_id).copied().unwrap_or(self.global)
    }

    /// `true` ("will answer correctly") iff the question's rate is at least 0.5.
    pub fn predict(&self, question_id: u32) -> bool {
        self.rate(question_id) >= 0.5
    }
}

impl SequenceModel for BiasTable {
    fn kind(&self) -> ModelKind {
        ModelKind::Bias
    }

    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        Ok(seq
            .iter()
            .skip(1)
            .map(|i| self.rate(i.question_id))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SplitTag, StudentSequence};

    fn corpus(rows: &[(u32, bool)]) -> Dataset {
        let interactions = rows
            .iter()
            .enumerate()
            .map(|(t, &(q, c))| Interaction {
                question_id: q,
                construct_id: 0,
                correct: c,
                position: t as u32,
            })
            .collect();
        Dataset {
            sequences: vec![StudentSequence {
                student_id: 0,
                interactions,
            }],
            questions: Default::default(),
            split: SplitTag::Train,
        }
    }

    #[test]
    fn seventy_percent_predicts_correct() {
        let mut rows = vec![(1, true); 7];
        rows.extend([(1, false); 3]);
        let t = BiasTable::fit(&corpus(&rows)).unwrap();
        assert!((t.rate(1) - 0.7).abs() < 1e-15);
        assert!(t.predict(1));
    }

    #[test]
    fn unseen_uses_global_rate() {
        let t = BiasTable {
            rates: BTreeMap::new(),
            global: 0.658,
        };
        assert!(t.predict(99));
        let t = BiasTable {
            rates: BTreeMap::new(),
            global: 0.4,
        };
        assert!(!t.predict(99));
    }

    #[test]
    fn tie_predicts_correct() {
        let t = BiasTable::fit(&corpus(&[(2, true), (2, false)])).unwrap();
        assert!(t.predict(2));
    }

    #[test]
    fn empty_rejected() {
        assert!(BiasTable::fit(&Dataset::default()).is_err());
    }
}

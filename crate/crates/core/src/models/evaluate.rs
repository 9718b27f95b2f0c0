//! Scoring models on the target positions of an evaluation view, and the
//! replayable prediction dump.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelError, Result, SequenceModel};
use crate::data::{EvalView, WARMUP_LEN};
use crate::metrics::{score, ConfusionCounts, Scores};

/// Probability at or above which a correct answer is predicted.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub student_id: u64,
    pub position: u32,
    pub question_id: u32,
    pub p: f64,
    pub prediction: bool,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub counts: ConfusionCounts,
    pub predictions: Vec<PredictionRow>,
}

pub fn evaluate(model: &dyn SequenceModel, view: &EvalView) -> Result<EvalReport> {
    let seqs: Vec<_> = view.sequences.iter().map(|s| s.interactions()).collect();
    let probs = model.predict_many(&seqs)?;
    let mut rows = Vec::with_capacity(view.num_targets());
    for (s, p) in view.sequences.iter().zip(&probs) {
        for i in s.target_range() {
            debug_assert!(i >= WARMUP_LEN);
            let it = s.interactions()[i];
            let p = p[i - 1];
            rows.push(PredictionRow {
                student_id: s.student_id,
                position: it.position,
                question_id: it.question_id,
                p,
                prediction: p >= THRESHOLD,
                label: it.correct,
            });
        }
    }
    let s = rescore(&rows)?;
    Ok(EvalReport {
        accuracy: s.accuracy,
        macro_f1: s.macro_f1,
        counts: s.counts,
        predictions: rows,
    })
}

/// Recomputes metrics from a prediction dump.
pub fn rescore(rows: &[PredictionRow]) -> Result<Scores> {
    let preds: Vec<bool> = rows.iter().map(|r| r.prediction).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
    Ok(score(&preds, &labels)?)
}

pub fn write_predictions_csv(rows: &[PredictionRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| ModelError::Io(e.into()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_predictions_csv(r: impl Read) -> Result<Vec<PredictionRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| ModelError::Io(e.into())))
        .collect()
}

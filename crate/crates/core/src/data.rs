//! Interaction corpora: domain types, JSONL/CSV ingestion, the warm-up /
//! target split used for scoring, and corpus statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sequences are capped to this many interactions on load.
pub const MAX_SEQ_LEN: usize = 50;
/// Interactions used as context only, never scored.
pub const WARMUP_LEN: usize = 10;
/// Upper bound on scored targets per student.
pub const MAX_TARGETS: usize = MAX_SEQ_LEN - WARMUP_LEN;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: &'static str },
    #[error("student {student_id} has two rows at position {position}")]
    DuplicatePosition { student_id: u64, position: u64 },
    #[error("dataset has no interactions")]
    EmptyDataset,
    #[error("question {0} is not in the question table")]
    UnknownQuestion(u32),
    #[error("question {question_id}: {reason}")]
    InvalidQuestion { question_id: u32, reason: String },
    #[error("student {0} appears in both train and validation splits")]
    OverlappingStudents(u64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One answered question in a student's history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub question_id: u32,
    pub construct_id: u32,
    pub correct: bool,
    /// 0-based index within the student's sequence.
    pub position: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionMeta {
    pub question_id: u32,
    pub question_text: String,
    pub choices: Vec<Choice>,
    pub construct_id: u32,
    pub construct_text: String,
    /// Per-choice misconception text keyed by choice label.
    #[serde(default)]
    pub misconceptions: BTreeMap<String, String>,
    /// Per-choice explanation text keyed by choice label.
    #[serde(default)]
    pub explanations: BTreeMap<String, String>,
}

pub const CHOICE_LABELS: [&str; 4] = ["A", "B", "C", "D"];

impl QuestionMeta {
    /// Exactly four choices labelled A–D in order, exactly one correct.
    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason: String| DataError::InvalidQuestion {
            question_id: self.question_id,
            reason,
        };
        if self.choices.len() != 4 {
            return Err(invalid(format!(
                "{} choices, expected 4",
                self.choices.len()
            )));
        }
        for (c, want) in self.choices.iter().zip(CHOICE_LABELS) {
            if c.label != want {
                return Err(invalid(format!(
                    "choice labelled `{}`, expected `{want}`",
                    c.label
                )));
            }
        }
        let n_correct = self.choices.iter().filter(|c| c.correct).count();
        if n_correct != 1 {
            return Err(invalid(format!("{n_correct} correct choices, expected 1")));
        }
        Ok(())
    }

    pub fn correct_label(&self) -> Option<&str> {
        self.choices
            .iter()
            .find(|c| c.correct)
            .map(|c| c.label.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudentSequence {
    pub student_id: u64,
    pub interactions: Vec<Interaction>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Val,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<StudentSequence>,
    pub questions: BTreeMap<u32, QuestionMeta>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.interactions.len()).sum()
    }

    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.sequences.iter().flat_map(|s| s.interactions.iter())
    }

    /// Distinct question ids that occur in interactions.
    pub fn question_ids(&self) -> BTreeSet<u32> {
        self.interactions().map(|i| i.question_id).collect()
    }

    /// Smallest vocabulary covering every question id in the corpus and its table.
    pub fn vocab_size(&self) -> usize {
        let from_rows = self.interactions().map(|i| i.question_id).max();
        let from_table = self.questions.keys().next_back().copied();
        from_rows.max(from_table).map_or(0, |m| m as usize + 1)
    }

    /// Question → construct, from the question table, then from interactions.
    pub fn question_constructs(&self) -> BTreeMap<u32, u32> {
        let mut map: BTreeMap<u32, u32> = self
            .interactions()
            .map(|i| (i.question_id, i.construct_id))
            .collect();
        for q in self.questions.values() {
            map.insert(q.question_id, q.construct_id);
        }
        map
    }

    /// Attaches a question table, checking that it covers every interaction.
    pub fn with_questions(
        mut self,
        questions: BTreeMap<u32, QuestionMeta>,
    ) -> Result<Self, DataError> {
        for i in self.interactions() {
            if !questions.contains_key(&i.question_id) {
                return Err(DataError::UnknownQuestion(i.question_id));
            }
        }
        self.questions = questions;
        Ok(self)
    }

    /// First `n_train` students (by id order) become train, the rest val.
    pub fn split_students(&self, n_train: usize) -> (Dataset, Dataset) {
        let n = n_train.min(self.sequences.len());
        let train = Dataset {
            sequences: self.sequences[..n].to_vec(),
            questions: self.questions.clone(),
            split: SplitTag::Train,
        };
        let val = Dataset {
            sequences: self.sequences[n..].to_vec(),
            questions: self.questions.clone(),
            split: SplitTag::Val,
        };
        (train, val)
    }
}

/// Fails if any student id occurs in both corpora.
pub fn check_disjoint(train: &Dataset, val: &Dataset) -> Result<(), DataError> {
    let ids: BTreeSet<u64> = train.sequences.iter().map(|s| s.student_id).collect();
    match val.sequences.iter().find(|s| ids.contains(&s.student_id)) {
        Some(s) => Err(DataError::OverlappingStudents(s.student_id)),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Row {
    student_id: u64,
    position: u64,
    question_id: u32,
    construct_id: u32,
    correct: bool,
}

fn json_row(line_no: usize, line: &str) -> Result<Row, DataError> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| DataError::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let obj = v.as_object().ok_or_else(|| DataError::Parse {
        line: line_no,
        msg: "row is not a JSON object".into(),
    })?;
    let uint = |field: &'static str| -> Result<u64, DataError> {
        obj.get(field)
            .and_then(|x| x.as_u64())
            .ok_or(DataError::Schema {
                line: line_no,
                field,
            })
    };
    let id32 = |field: &'static str| -> Result<u32, DataError> {
        u32::try_from(uint(field)?).map_err(|_| DataError::Schema {
            line: line_no,
            field,
        })
    };
    Ok(Row {
        student_id: uint("student_id")?,
        position: uint("position")?,
        question_id: id32("question_id")?,
        construct_id: id32("construct_id")?,
        correct: obj
            .get("correct")
            .and_then(|x| x.as_bool())
            .ok_or(DataError::Schema {
                line: line_no,
                field: "correct",
            })?,
    })
}

fn read_jsonl_rows(reader: impl BufRead) -> Result<Vec<Row>, DataError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(json_row(i + 1, &line)?);
    }
    Ok(rows)
}

fn read_csv_rows(reader: impl io::Read) -> Result<Vec<Row>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let col = |field: &'static str| {
        headers
            .iter()
            .position(|h| h == field)
            .ok_or(DataError::Schema { line: 1, field })
    };
    let cols = [
        col("student_id")?,
        col("position")?,
        col("question_id")?,
        col("construct_id")?,
        col("correct")?,
    ];
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let get = |c: usize, field: &'static str| {
            rec.get(c)
                .filter(|s| !s.is_empty())
                .ok_or(DataError::Schema { line, field })
        };
        let num = |c: usize, field: &'static str| -> Result<u64, DataError> {
            get(c, field)?
                .parse()
                .map_err(|e: std::num::ParseIntError| DataError::Parse {
                    line,
                    msg: format!("{field}: {e}"),
                })
        };
        let id32 = |c: usize, field: &'static str| -> Result<u32, DataError> {
            u32::try_from(num(c, field)?).map_err(|_| DataError::Schema { line, field })
        };
        let correct = match get(cols[4], "correct")?.to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => {
                return Err(DataError::Parse {
                    line,
                    msg: format!("correct: `{other}` is not a boolean"),
                })
            }
        };
        rows.push(Row {
            student_id: num(cols[0], "student_id")?,
            position: num(cols[1], "position")?,
            question_id: id32(cols[2], "question_id")?,
            construct_id: id32(cols[3], "construct_id")?,
            correct,
        });
    }
    Ok(rows)
}

/// Groups rows by student, orders them by position, keeps the first
/// [`MAX_SEQ_LEN`] and renumbers positions `0..n`.
fn assemble(rows: Vec<Row>, split: SplitTag) -> Result<Dataset, DataError> {
    let mut by_student: BTreeMap<u64, BTreeMap<u64, Row>> = BTreeMap::new();
    for r in rows {
        let seq = by_student.entry(r.student_id).or_default();
        if seq.insert(r.position, r).is_some() {
            return Err(DataError::DuplicatePosition {
                student_id: r.student_id,
                position: r.position,
            });
        }
    }
    let mut dropped = 0usize;
    let sequences = by_student
        .into_iter()
        .map(|(student_id, rows)| {
            dropped += rows.len().saturating_sub(MAX_SEQ_LEN);
            let interactions = rows
                .into_values()
                .take(MAX_SEQ_LEN)
                .enumerate()
                .map(|(i, r)| Interaction {
                    question_id: r.question_id,
                    construct_id: r.construct_id,
                    correct: r.correct,
                    position: i as u32,
                })
                .collect();
            StudentSequence {
                student_id,
                interactions,
            }
        })
        .collect();
    if dropped > 0 {
        log::info!("truncated {dropped} interactions beyond position {MAX_SEQ_LEN}");
    }
    Ok(Dataset {
        sequences,
        questions: BTreeMap::new(),
        split,
    })
}

/// Reads an interactions file. The question table is left empty; attach
/// one with [`Dataset::with_questions`].
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: Format,
    split: SplitTag,
) -> Result<Dataset, DataError> {
    let file = File::open(path.as_ref())?;
    let rows = match format {
        Format::Jsonl => read_jsonl_rows(BufReader::new(file))?,
        Format::Csv => read_csv_rows(BufReader::new(file))?,
    };
    assemble(rows, split)
}

/// Parses interactions from an in-memory JSONL string.
pub fn parse_jsonl(text: &str, split: SplitTag) -> Result<Dataset, DataError> {
    assemble(read_jsonl_rows(text.as_bytes())?, split)
}

pub fn parse_csv(text: &str, split: SplitTag) -> Result<Dataset, DataError> {
    assemble(read_csv_rows(text.as_bytes())?, split)
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<BTreeMap<u32, QuestionMeta>, DataError> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionMeta = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        q.validate()?;
        out.insert(q.question_id, q);
    }
    Ok(out)
}

pub fn write_interactions_jsonl(d: &Dataset, mut w: impl Write) -> io::Result<()> {
    for s in &d.sequences {
        for i in &s.interactions {
            let row = Row {
                student_id: s.student_id,
                position: i.position as u64,
                question_id: i.question_id,
                construct_id: i.construct_id,
                correct: i.correct,
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_questions_jsonl(
    questions: &BTreeMap<u32, QuestionMeta>,
    mut w: impl Write,
) -> io::Result<()> {
    for q in questions.values() {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A student's sequence split into warm-up context and scored targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSequence {
    pub student_id: u64,
    interactions: Vec<Interaction>,
}

impl EvalSequence {
    pub fn new(student_id: u64, mut interactions: Vec<Interaction>) -> Self {
        interactions.truncate(MAX_SEQ_LEN);
        Self {
            student_id,
            interactions,
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn warmup(&self) -> &[Interaction] {
        &self.interactions[..WARMUP_LEN.min(self.interactions.len())]
    }

    pub fn targets(&self) -> &[Interaction] {
        &self.interactions[WARMUP_LEN.min(self.interactions.len())..]
    }

    /// Index range of targets within [`Self::interactions`].
    pub fn target_range(&self) -> std::ops::Range<usize> {
        WARMUP_LEN.min(self.interactions.len())..self.interactions.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalView {
    pub sequences: Vec<EvalSequence>,
    /// Sequences skipped for having no target after the warm-up.
    pub excluded: usize,
}

impl EvalView {
    pub fn num_targets(&self) -> usize {
        self.sequences.iter().map(|s| s.targets().len()).sum()
    }
}

pub fn make_eval_view(d: &Dataset) -> EvalView {
    let mut view = EvalView::default();
    for s in &d.sequences {
        if s.interactions.len() <= WARMUP_LEN {
            view.excluded += 1;
            continue;
        }
        view.sequences
            .push(EvalSequence::new(s.student_id, s.interactions.clone()));
    }
    if view.excluded > 0 {
        log::info!(
            "excluded {} sequences with at most {WARMUP_LEN} interactions",
            view.excluded
        );
    }
    view
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub responses: usize,
    pub students: usize,
    pub questions: usize,
    pub responses_per_student: f64,
    pub correct: usize,
    /// Fraction of interactions answered correctly.
    pub bias: f64,
}

pub fn dataset_stats(d: &Dataset) -> Result<Stats, DataError> {
    let responses = d.num_interactions();
    if responses == 0 {
        return Err(DataError::EmptyDataset);
    }
    let correct = d.interactions().filter(|i| i.correct).count();
    let students = d
        .sequences
        .iter()
        .filter(|s| !s.interactions.is_empty())
        .count();
    Ok(Stats {
        responses,
        students,
        questions: d.question_ids().len(),
        responses_per_student: responses as f64 / students as f64,
        correct,
        bias: correct as f64 / responses as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: u64, p: u64, q: u32, c: bool) -> String {
        format!(
            r#"{{"student_id":{s},"position":{p},"question_id":{q},"construct_id":{},"correct":{c}}}"#,
            q % 3
        )
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let d = parse_jsonl("", SplitTag::Train).unwrap();
        assert!(d.sequences.is_empty() && d.questions.is_empty());
        let d = parse_csv("", SplitTag::Train).unwrap();
        assert!(d.sequences.is_empty());
    }

    #[test]
    fn sixty_rows_truncate_to_first_fifty() {
        let text: Vec<String> = (0..60)
            .rev()
            .map(|p| row(7, p, p as u32, p % 2 == 0))
            .collect();
        let d = parse_jsonl(&text.join("\n"), SplitTag::Train).unwrap();
        let s = &d.sequences[0];
        assert_eq!(s.interactions.len(), 50);
        assert_eq!(s.interactions[0].question_id, 0);
        assert_eq!(s.interactions[49].question_id, 49);
        assert!(s
            .interactions
            .iter()
            .enumerate()
            .all(|(i, x)| x.position == i as u32));
    }

    #[test]
    fn rows_grouped_and_ordered() {
        let text = [row(2, 5, 1, true), row(1, 0, 2, false), row(2, 1, 3, false)].join("\n");
        let d = parse_jsonl(&text, SplitTag::Val).unwrap();
        assert_eq!(d.sequences.len(), 2);
        assert_eq!(d.sequences[0].student_id, 1);
        let s2: Vec<u32> = d.sequences[1]
            .interactions
            .iter()
            .map(|i| i.question_id)
            .collect();
        assert_eq!(s2, vec![3, 1]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{}\n{{not json\n", row(1, 0, 0, true));
        assert!(matches!(
            parse_jsonl(&text, SplitTag::Train),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_field_is_schema_error() {
        let text = r#"{"student_id":1,"position":0,"question_id":3,"correct":true}"#;
        assert!(matches!(
            parse_jsonl(text, SplitTag::Train),
            Err(DataError::Schema {
                line: 1,
                field: "construct_id"
            })
        ));
    }

    #[test]
    fn duplicate_position_rejected() {
        let text = [row(4, 3, 1, true), row(4, 3, 2, true)].join("\n");
        assert!(matches!(
            parse_jsonl(&text, SplitTag::Train),
            Err(DataError::DuplicatePosition {
                student_id: 4,
                position: 3
            })
        ));
    }

    #[test]
    fn csv_matches_jsonl() {
        let csv = "student_id,position,question_id,construct_id,correct\n1,0,4,1,true\n1,1,5,2,0\n";
        let a = parse_csv(csv, SplitTag::Train).unwrap();
        let b = parse_jsonl(
            "{\"student_id\":1,\"position\":0,\"question_id\":4,\"construct_id\":1,\"correct\":true}\n{\"student_id\":1,\"position\":1,\"question_id\":5,\"construct_id\":2,\"correct\":false}",
            SplitTag::Train,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let csv = "student_id,position,question_id,correct\n1,0,4,true\n";
        assert!(matches!(
            parse_csv(csv, SplitTag::Train),
            Err(DataError::Schema {
                field: "construct_id",
                ..
            })
        ));
    }

    fn seq_of(n: usize) -> Dataset {
        let text: Vec<String> = (0..n).map(|p| row(1, p as u64, p as u32, true)).collect();
        parse_jsonl(&text.join("\n"), SplitTag::Val).unwrap()
    }

    #[test]
    fn eval_view_boundaries() {
        let v = make_eval_view(&seq_of(50));
        assert_eq!(v.sequences[0].warmup().len(), 10);
        assert_eq!(v.sequences[0].targets().len(), 40);
        let v = make_eval_view(&seq_of(11));
        assert_eq!(v.sequences[0].targets().len(), 1);
        assert_eq!(v.sequences[0].targets()[0].position, 10);
        let v = make_eval_view(&seq_of(10));
        assert!(v.sequences.is_empty());
        assert_eq!(v.excluded, 1);
    }

    #[test]
    fn stats_of_all_correct_corpus() {
        let s = dataset_stats(&seq_of(12)).unwrap();
        assert_eq!(s.bias, 1.0);
        assert_eq!((s.responses, s.students, s.questions), (12, 1, 12));
        assert!(matches!(
            dataset_stats(&Dataset::default()),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn question_validation() {
        let mut q = QuestionMeta {
            question_id: 1,
            question_text: "q".into(),
            choices: CHOICE_LABELS
                .iter()
                .map(|l| Choice {
                    label: l.to_string(),
                    text: l.to_string(),
                    correct: *l == "B",
                })
                .collect(),
            construct_id: 0,
            construct_text: "c".into(),
            misconceptions: BTreeMap::new(),
            explanations: BTreeMap::new(),
        };
        q.validate().unwrap();
        assert_eq!(q.correct_label(), Some("B"));
        q.choices[0].correct = true;
        assert!(q.validate().is_err());
        q.choices.pop();
        assert!(q.validate().is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let text: Vec<String> = (0..5)
            .flat_map(|s| (0..3).map(move |p| row(s, p, 0, true)))
            .collect();
        let d = parse_jsonl(&text.join("\n"), SplitTag::Train).unwrap();
        let (a, b) = d.split_students(3);
        assert_eq!((a.sequences.len(), b.sequences.len()), (3, 2));
        check_disjoint(&a, &b).unwrap();
        assert!(check_disjoint(&a, &a).is_err());
    }
}

//! Knowledge-tracing models: a recurrent model over (question, response)
//! tokens, a self-attentive model, a content-embedding temporal transformer,
//! and a per-question bias baseline.
//!
//! Every neural model maps a sequence of `n` interactions to `n − 1`
//! probabilities; output `t − 1` is the probability that interaction `t` is
//! answered correctly, computed from interactions `0..t` and the identity of
//! question `t` only.

mod bias;
mod checkpoint;
mod dkt;
mod evaluate;
mod layers;
mod llmkt;
mod sakt;
mod train;

use numkit::{NumError, ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Interaction, MAX_SEQ_LEN};
use crate::embedding::EmbeddingError;
use crate::metrics::MetricsError;

pub use bias::BiasTable;
pub use checkpoint::{load_model, save_model, sidecar_path, ModelMeta};
pub use dkt::Dkt;
pub use evaluate::{
    evaluate, read_predictions_csv, rescore, write_predictions_csv, EvalReport, PredictionRow,
};
pub use llmkt::{ContentTable, LlmKt};
pub use sakt::Sakt;
pub use train::{train, EpochRecord, TrainConfig, TrainedModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("question {0} is outside the model vocabulary")]
    UnknownQuestion(u32),
    #[error("sequence needs at least {0} interactions")]
    TooShort(usize),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dkt,
    Sakt,
    Llmkt,
    Bias,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dkt => "dkt",
            ModelKind::Sakt => "sakt",
            ModelKind::Llmkt => "llmkt",
            ModelKind::Bias => "bias",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dkt" => Ok(ModelKind::Dkt),
            "sakt" => Ok(ModelKind::Sakt),
            "llmkt" | "llm-kt" | "llm_kt" => Ok(ModelKind::Llmkt),
            "bias" => Ok(ModelKind::Bias),
            other => Err(ModelError::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of questions in the full-size question bank.
pub const DEFAULT_VOCAB: usize = 4252;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Question ids must be `< vocab`.
    pub vocab: usize,
    pub hidden: usize,
    /// Width of the input token embedding (recurrent model only).
    pub embed: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    /// Width of each cached content vector (content model only).
    pub content_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind, vocab: usize) -> Self {
        let base = Self {
            kind,
            vocab,
            hidden: 0,
            embed: 0,
            heads: 1,
            layers: 1,
            dropout: 0.0,
            max_seq_len: MAX_SEQ_LEN,
            content_dim: 0,
            seed: 0,
        };
        match kind {
            ModelKind::Dkt => Self {
                hidden: 46,
                embed: 46,
                ..base
            },
            ModelKind::Sakt => Self {
                hidden: 60,
                heads: 4,
                dropout: 0.2,
                ..base
            },
            ModelKind::Llmkt => Self {
                hidden: 112,
                heads: 4,
                layers: 2,
                dropout: 0.1,
                content_dim: 1024,
                ..base
            },
            ModelKind::Bias => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.max_seq_len != MAX_SEQ_LEN {
            return bad(format!("max_seq_len must be {MAX_SEQ_LEN}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kind == ModelKind::Bias {
            return Ok(());
        }
        if self.vocab == 0 || self.hidden == 0 || self.heads == 0 || self.layers == 0 {
            return bad("vocab, hidden, heads and layers must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "{} heads do not divide hidden width {}",
                self.heads, self.hidden
            ));
        }
        match self.kind {
            ModelKind::Dkt if self.embed == 0 => bad("embed must be positive".into()),
            ModelKind::Llmkt if self.content_dim == 0 => bad("content_dim must be positive".into()),
            _ => Ok(()),
        }
    }
}

/// A padded batch of sequences, stored row-major as `[batch, steps]`.
///
/// Padding sits at the tail of each row, so it can never influence outputs
/// for real positions of a causal model.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    pub questions: Vec<usize>,
    pub correct: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Batch {
    pub fn new(seqs: &[&[Interaction]], vocab: usize) -> Result<Self> {
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if steps < 2 {
            return Err(ModelError::TooShort(2));
        }
        let mut b = Batch {
            size: seqs.len(),
            steps,
            questions: vec![0; seqs.len() * steps],
            correct: vec![0; seqs.len() * steps],
            lens: Vec::with_capacity(seqs.len()),
        };
        for (r, s) in seqs.iter().enumerate() {
            for (t, i) in s.iter().enumerate() {
                if i.question_id as usize >= vocab {
                    return Err(ModelError::UnknownQuestion(i.question_id));
                }
                b.questions[r * steps + t] = i.question_id as usize;
                b.correct[r * steps + t] = i.correct as usize;
            }
            if let Some(last) = s.last() {
                for t in s.len()..steps {
                    b.questions[r * steps + t] = last.question_id as usize;
                }
            }
            b.lens.push(s.len());
        }
        Ok(b)
    }

    /// Number of outputs per row.
    pub fn outputs(&self) -> usize {
        self.steps - 1
    }

    /// `(row, step)` pairs of the inputs feeding output slots, row-major.
    pub fn input_index(&self, f: impl Fn(usize, usize) -> usize) -> Vec<usize> {
        let n = self.outputs();
        (0..self.size)
            .flat_map(|r| (0..n).map(move |t| (r, t)))
            .map(|(r, t)| f(r, t))
            .collect()
    }

    /// Question id at `(row, step)`.
    pub fn q(&self, r: usize, t: usize) -> usize {
        self.questions[r * self.steps + t]
    }

    pub fn c(&self, r: usize, t: usize) -> usize {
        self.correct[r * self.steps + t]
    }

    /// Per-output labels and loss weights; outputs predicting positions
    /// below `min_position` or past a row's end get weight 0.
    pub fn targets(&self, min_position: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.outputs();
        let mut y = Vec::with_capacity(self.size * n);
        let mut w = Vec::with_capacity(self.size * n);
        for r in 0..self.size {
            for t in 1..self.steps {
                y.push(self.c(r, t) as f64);
                w.push(if t >= min_position && t < self.lens[r] {
                    1.0
                } else {
                    0.0
                });
            }
        }
        (y, w)
    }
}

/// Neural models expose a differentiable forward pass over a [`Batch`].
pub trait NeuralNet: Send + Sync {
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Logits of shape `[batch · (steps − 1)]`, row-major over `(row, output)`.
    /// Dropout is applied only when `rng` is given and the tape records
    /// gradients.
    fn logits<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;

    /// Called after parameter values change, to drop derived caches.
    fn params_changed(&mut self) {}
}

/// Anything that scores a sequence, trained or not.
pub trait SequenceModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Probability of a correct answer at positions `1..n`.
    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>>;

    /// [`Self::predict_sequence`] over many sequences.
    fn predict_many(&self, seqs: &[&[Interaction]]) -> Result<Vec<Vec<f64>>> {
        seqs.iter().map(|s| self.predict_sequence(s)).collect()
    }

    /// Probability that `question_id` is answered correctly after `history`.
    fn predict_next(
        &self,
        history: &[Interaction],
        question_id: u32,
        construct_id: u32,
    ) -> Result<f64> {
        let mut seq = Vec::with_capacity(history.len() + 1);
        seq.extend_from_slice(history);
        seq.push(Interaction {
            question_id,
            construct_id,
            correct: false,
            position: history.len() as u32,
        });
        let p = self.predict_sequence(&seq)?;
        p.last().copied().ok_or(ModelError::TooShort(2))
    }
}

/// Inference on one sequence through a gradient-free tape.
pub(crate) fn predict_with(net: &dyn NeuralNet, seq: &[Interaction]) -> Result<Vec<f64>> {
    let batch = Batch::new(&[seq], net.config().vocab)?;
    let mut tape = Tape::inference(net.params());
    let z = net.logits(&mut tape, &batch, None)?;
    Ok(tape.value(z).data().iter().map(|&z| sigmoid(z)).collect())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A trained or freshly initialised neural network of any kind.
pub enum Net {
    Dkt(Dkt),
    Sakt(Sakt),
    Llmkt(LlmKt),
}

impl Net {
    /// Initialises the network described by `cfg`. The content model needs
    /// a content table.
    pub fn init(cfg: &ModelConfig, content: Option<ContentTable>) -> Result<Self> {
        cfg.validate()?;
        match cfg.kind {
            ModelKind::Dkt => Ok(Net::Dkt(Dkt::new(cfg.clone())?)),
            ModelKind::Sakt => Ok(Net::Sakt(Sakt::new(cfg.clone())?)),
            ModelKind::Llmkt => {
                let content =
                    content.unwrap_or_else(|| ContentTable::empty(cfg.vocab, cfg.content_dim));
                Ok(Net::Llmkt(LlmKt::new(cfg.clone(), content)?))
            }
            ModelKind::Bias => Err(ModelError::Config(
                "the bias baseline is not a neural model".into(),
            )),
        }
    }

    pub fn as_dyn(&self) -> &dyn NeuralNet {
        match self {
            Net::Dkt(m) => m,
            Net::Sakt(m) => m,
            Net::Llmkt(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn NeuralNet {
        match self {
            Net::Dkt(m) => m,
            Net::Sakt(m) => m,
            Net::Llmkt(m) => m,
        }
    }
}

impl SequenceModel for Net {
    fn kind(&self) -> ModelKind {
        self.as_dyn().config().kind
    }

    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        predict_with(self.as_dyn(), seq)
    }

    fn predict_many(&self, seqs: &[&[Interaction]]) -> Result<Vec<Vec<f64>>> {
        let net = self.as_dyn();
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_BATCH) {
            let batch = Batch::new(chunk, net.config().vocab)?;
            let mut tape = Tape::inference(net.params());
            let z = net.logits(&mut tape, &batch, None)?;
            let z = tape.value(z).data();
            let n = batch.outputs();
            for (r, s) in chunk.iter().enumerate() {
                let len = s.len().saturating_sub(1);
                out.push(z[r * n..r * n + len].iter().map(|&z| sigmoid(z)).collect());
            }
        }
        Ok(out)
    }
}

const EVAL_BATCH: usize = 64;

/// Exact number of scalar parameters.
pub fn param_count(params: &ParamStore) -> usize {
    params.num_elements()
}

#[cfg(test)]
mod tests {
    use super::*;
    use numkit::Tensor;

    #[test]
    fn linear_layer_count() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[10, 5])).unwrap();
        s.add("b", Tensor::zeros(&[5])).unwrap();
        assert_eq!(param_count(&s), 55);
    }

    #[test]
    fn default_budgets() {
        for kind in [ModelKind::Dkt, ModelKind::Sakt, ModelKind::Llmkt] {
            let net = Net::init(&ModelConfig::default_for(kind, DEFAULT_VOCAB), None).unwrap();
            let n = param_count(net.as_dyn().params());
            assert!((580_000..=850_000).contains(&n), "{kind}: {n}");
        }
        let net = Net::init(
            &ModelConfig::default_for(ModelKind::Llmkt, DEFAULT_VOCAB),
            None,
        )
        .unwrap();
        let n = param_count(net.as_dyn().params()) as f64;
        assert!((n - 730_000.0).abs() <= 0.05 * 730_000.0);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default_for(ModelKind::Sakt, 10);
        c.heads = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default_for(ModelKind::Dkt, 10);
        c.max_seq_len = 40;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_targets_respect_warmup_and_padding() {
        let seq = |n: usize| -> Vec<Interaction> {
            (0..n)
                .map(|t| Interaction {
                    question_id: 1,
                    construct_id: 0,
                    correct: t % 2 == 0,
                    position: t as u32,
                })
                .collect()
        };
        let (a, b) = (seq(12), seq(5));
        let batch = Batch::new(&[&a, &b], 4).unwrap();
        let (y, w) = batch.targets(10);
        assert_eq!(y.len(), 22);
        assert_eq!(w[..11].iter().sum::<f64>(), 2.0);
        assert_eq!(w[11..].iter().sum::<f64>(), 0.0);
        assert_eq!(y[9], 1.0);
        assert!(matches!(
            Batch::new(&[&a], 1),
            Err(ModelError::UnknownQuestion(1))
        ));
    }
}

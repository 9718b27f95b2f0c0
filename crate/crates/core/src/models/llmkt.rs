//! Temporal transformer over cached text embeddings.
//!
//! Each question is represented by the concatenation of its question,
//! construct, explanation and misconception vectors, projected to the model
//! width. History tokens add a response embedding and a position embedding
//! and pass through a causal encoder; the target question's token then
//! cross-attends to the encoded history.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use numkit::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dropout, residual_norm, Attention, FeedForward, Init, Linear, Norm};
use super::{
    predict_with, Batch, ModelConfig, ModelError, ModelKind, NeuralNet, Result, SequenceModel,
};
use crate::data::Interaction;
use crate::embedding::{ContentKind, EmbeddingCache, EmbeddingError};

/// Per-question concatenated content vectors, indexed by question id.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentTable {
    dim: usize,
    rows: Vec<Result<Vec<f32>, ContentKind>>,
}

impl ContentTable {
    /// A table with no vectors; any lookup fails.
    pub fn empty(vocab: usize, dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Err(ContentKind::Question); vocab],
        }
    }

    /// Builds rows for every question id below `vocab`; `constructs` maps
    /// question to construct id.
    pub fn from_cache(
        cache: &EmbeddingCache,
        constructs: &BTreeMap<u32, u32>,
        vocab: usize,
    ) -> Self {
        let rows = (0..vocab as u32)
            .map(|q| match constructs.get(&q) {
                None => Err(ContentKind::Construct),
                Some(&k) => cache.question_features(q, k).map_err(|e| match e {
                    EmbeddingError::MissingEmbedding { kind, .. } => kind,
                    _ => ContentKind::Question,
                }),
            })
            .collect();
        Self {
            dim: cache.dim(),
            rows,
        }
    }

    /// Width of one content vector (a quarter of a row).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, question_id: usize) -> Result<&[f32]> {
        match self.rows.get(question_id) {
            Some(Ok(v)) => Ok(v),
            Some(Err(kind)) => Err(EmbeddingError::MissingEmbedding {
                question_id: question_id as u32,
                kind: *kind,
            }
            .into()),
            None => Err(ModelError::UnknownQuestion(question_id as u32)),
        }
    }
}

struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

struct Ids {
    proj: Linear,
    response: ParamId,
    position: ParamId,
    encoder: Vec<EncoderLayer>,
    cross: Attention,
    norm_out: Norm,
    head: Linear,
}

pub struct LlmKt {
    cfg: ModelConfig,
    params: ParamStore,
    ids: Ids,
    content: ContentTable,
    /// Projected content for every question, built on first inference call.
    frozen: OnceLock<Vec<Option<Vec<f64>>>>,
}

impl LlmKt {
    pub fn new(cfg: ModelConfig, content: ContentTable) -> Result<Self> {
        cfg.validate()?;
        if content.dim() != cfg.content_dim || content.vocab() != cfg.vocab {
            return Err(ModelError::Config(format!(
                "content table is {} x {}, model expects {} x {}",
                content.vocab(),
                content.dim(),
                cfg.vocab,
                cfg.content_dim
            )));
        }
        let h = cfg.hidden;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let proj = Linear::new(&mut init, "proj", 4 * cfg.content_dim, h)?;
        let response = init.table("response", 2, h)?;
        let position = init.table("position", cfg.max_seq_len, h)?;
        let mut encoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            encoder.push(EncoderLayer {
                attn: Attention::new(&mut init, &format!("enc{l}.attn"), h, cfg.heads)?,
                norm1: Norm::new(&mut init, &format!("enc{l}.norm1"), h)?,
                ffn: FeedForward::new(&mut init, &format!("enc{l}.ffn"), h, 2 * h)?,
                norm2: Norm::new(&mut init, &format!("enc{l}.norm2"), h)?,
            });
        }
        let cross = Attention::new(&mut init, "cross", h, cfg.heads)?;
        let norm_out = Norm::new(&mut init, "norm_out", h)?;
        let head = Linear::new(&mut init, "head", h, 1)?;
        Ok(Self {
            cfg,
            params,
            ids: Ids {
                proj,
                response,
                position,
                encoder,
                cross,
                norm_out,
                head,
            },
            content,
            frozen: OnceLock::new(),
        })
    }

    pub fn from_params(
        cfg: ModelConfig,
        content: ContentTable,
        params: ParamStore,
    ) -> Result<Self> {
        let mut m = Self::new(cfg, content)?;
        m.params.copy_values_from(&params)?;
        Ok(m)
    }

    pub fn content(&self) -> &ContentTable {
        &self.content
    }

    /// Projects every available content row once, in chunks.
    fn frozen_table(&self) -> &[Option<Vec<f64>>] {
        self.frozen.get_or_init(|| {
            let width = 4 * self.cfg.content_dim;
            let mut out: Vec<Option<Vec<f64>>> = vec![None; self.content.vocab()];
            let avail: Vec<usize> = (0..self.content.vocab())
                .filter(|&q| self.content.row(q).is_ok())
                .collect();
            for chunk in avail.chunks(256) {
                let mut data = Vec::with_capacity(chunk.len() * width);
                for &q in chunk {
                    data.extend(
                        self.content
                            .row(q)
                            .expect("filtered")
                            .iter()
                            .map(|&x| x as f64),
                    );
                }
                let mut tape = Tape::inference(&self.params);
                let x = tape.constant(Tensor::new(&[chunk.len(), width], data).expect("sized"));
                let y = self
                    .ids
                    .proj
                    .apply(&mut tape, x)
                    .expect("projection shapes fixed at init");
                let y = tape.value(y).data();
                let h = self.cfg.hidden;
                for (i, &q) in chunk.iter().enumerate() {
                    out[q] = Some(y[i * h..(i + 1) * h].to_vec());
                }
            }
            out
        })
    }

    /// Projected content for the distinct questions of a batch, and each
    /// batch slot's row in that table.
    fn project<'p>(&'p self, tape: &mut Tape<'p>, batch: &Batch) -> Result<(Var, Vec<usize>)> {
        let mut uniq: Vec<usize> = batch.questions.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let slot: BTreeMap<usize, usize> = uniq.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let remap = batch.questions.iter().map(|q| slot[q]).collect();
        let h = self.cfg.hidden;
        if !tape.grad_enabled() {
            let table = self.frozen_table();
            let mut data = Vec::with_capacity(uniq.len() * h);
            for &q in &uniq {
                self.content.row(q)?;
                data.extend_from_slice(table[q].as_ref().expect("row present"));
            }
            let p = tape.constant(Tensor::new(&[uniq.len(), h], data)?);
            return Ok((p, remap));
        }
        let width = 4 * self.cfg.content_dim;
        let mut data = Vec::with_capacity(uniq.len() * width);
        for &q in &uniq {
            data.extend(self.content.row(q)?.iter().map(|&x| x as f64));
        }
        let x = tape.constant(Tensor::new(&[uniq.len(), width], data)?);
        Ok((self.ids.proj.apply(tape, x)?, remap))
    }
}

impl NeuralNet for LlmKt {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn params_changed(&mut self) {
        self.frozen = OnceLock::new();
    }

    fn logits<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (rows, n, h) = (batch.size, batch.outputs(), self.cfg.hidden);
        let steps = batch.steps;
        let rate = self.cfg.dropout;
        let (proj, remap) = self.project(tape, batch)?;
        let resp = tape.param(self.ids.response);
        let pos = tape.param(self.ids.position);

        let hist = tape.embedding(proj, &batch.input_index(|r, t| remap[r * steps + t]))?;
        let r_emb = tape.embedding(resp, &batch.input_index(|r, t| batch.c(r, t)))?;
        let p_emb = tape.embedding(pos, &batch.input_index(|_, t| t))?;
        let x = tape.add(hist, r_emb)?;
        let x = tape.add(x, p_emb)?;
        let x = tape.reshape(x, &[rows, n, h])?;
        let mut x = dropout(tape, x, rate, &mut rng)?;
        for layer in &self.ids.encoder {
            let a = layer.attn.apply(tape, x, x, true)?;
            let a = dropout(tape, a, rate, &mut rng)?;
            x = residual_norm(tape, &layer.norm1, x, a)?;
            let f = layer.ffn.apply(tape, x)?;
            let f = dropout(tape, f, rate, &mut rng)?;
            x = residual_norm(tape, &layer.norm2, x, f)?;
        }

        let tgt = tape.embedding(proj, &batch.input_index(|r, t| remap[r * steps + t + 1]))?;
        let tp = tape.embedding(pos, &batch.input_index(|_, t| t + 1))?;
        let tgt = tape.add(tgt, tp)?;
        let tgt = tape.reshape(tgt, &[rows, n, h])?;
        let a = self.ids.cross.apply(tape, tgt, x, true)?;
        let a = dropout(tape, a, rate, &mut rng)?;
        let y = residual_norm(tape, &self.ids.norm_out, tgt, a)?;
        let z = self.ids.head.apply(tape, y)?;
        Ok(tape.reshape(z, &[rows * n])?)
    }
}

impl SequenceModel for LlmKt {
    fn kind(&self) -> ModelKind {
        ModelKind::Llmkt
    }

    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        predict_with(self, seq)
    }
}

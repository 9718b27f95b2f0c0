//! Self-attentive knowledge tracing: the target question attends over
//! earlier (question, response) interactions.

use numkit::{ParamId, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dropout, residual_norm, Attention, FeedForward, Init, Linear, Norm};
use super::{predict_with, Batch, ModelConfig, ModelKind, NeuralNet, Result, SequenceModel};
use crate::data::Interaction;

#[derive(Clone, Copy, Debug)]
struct Ids {
    interaction: ParamId,
    question: ParamId,
    position: ParamId,
    attn: Attention,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
    head: Linear,
}

pub struct Sakt {
    cfg: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl Sakt {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (q, h) = (cfg.vocab, cfg.hidden);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let ids = Ids {
            interaction: init.table("interaction", 2 * q, h)?,
            question: init.table("question", q, h)?,
            position: init.table("position", cfg.max_seq_len, h)?,
            attn: Attention::new(&mut init, "attn", h, cfg.heads)?,
            norm1: Norm::new(&mut init, "norm1", h)?,
            ffn: FeedForward::new(&mut init, "ffn", h, h)?,
            norm2: Norm::new(&mut init, "norm2", h)?,
            head: Linear::new(&mut init, "head", h, 1)?,
        };
        Ok(Self { cfg, params, ids })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        m.params.copy_values_from(&params)?;
        Ok(m)
    }
}

impl NeuralNet for Sakt {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (rows, n, h) = (batch.size, batch.outputs(), self.cfg.hidden);
        let rate = self.cfg.dropout;
        let inter = tape.param(self.ids.interaction);
        let quest = tape.param(self.ids.question);
        let pos = tape.param(self.ids.position);

        let tok = tape.embedding(
            inter,
            &batch.input_index(|r, t| 2 * batch.q(r, t) + batch.c(r, t)),
        )?;
        let p = tape.embedding(pos, &batch.input_index(|_, t| t))?;
        let memory = tape.add(tok, p)?;
        let memory = tape.reshape(memory, &[rows, n, h])?;
        let query = tape.embedding(quest, &batch.input_index(|r, t| batch.q(r, t + 1)))?;
        let query = tape.reshape(query, &[rows, n, h])?;

        let a = self.ids.attn.apply(tape, query, memory, true)?;
        let a = dropout(tape, a, rate, &mut rng)?;
        let x = residual_norm(tape, &self.ids.norm1, query, a)?;
        let f = self.ids.ffn.apply(tape, x)?;
        let f = dropout(tape, f, rate, &mut rng)?;
        let y = residual_norm(tape, &self.ids.norm2, x, f)?;
        let z = self.ids.head.apply(tape, y)?;
        Ok(tape.reshape(z, &[rows * n])?)
    }
}

impl SequenceModel for Sakt {
    fn kind(&self) -> ModelKind {
        ModelKind::Sakt
    }

    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        predict_with(self, seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Sakt {
        Sakt::new(ModelConfig {
            hidden: 8,
            heads: 2,
            ..ModelConfig::default_for(ModelKind::Sakt, 7)
        })
        .unwrap()
    }

    fn seq(items: &[(u32, bool)]) -> Vec<Interaction> {
        items
            .iter()
            .enumerate()
            .map(|(t, &(q, c))| Interaction {
                question_id: q,
                construct_id: 0,
                correct: c,
                position: t as u32,
            })
            .collect()
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = small();
        for name in ["head.w", "head.b"] {
            let id = m.params.id(name).unwrap();
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let p = m
            .predict_sequence(&seq(&[(1, true), (2, false), (3, true)]))
            .unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn identical_history_permutation_invariant() {
        let m = small();
        let mut items = vec![(4, true); 10];
        items.push((2, false));
        let a = seq(&items);
        let mut b = a.clone();
        b[..10].reverse();
        for (i, x) in b.iter_mut().enumerate() {
            x.position = i as u32;
        }
        let pa = m.predict_next(&a[..10], 2, 0).unwrap();
        let pb = m.predict_next(&b[..10], 2, 0).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        let m = small();
        let p = m
            .predict_sequence(&seq(&[(0, true), (6, false), (3, true), (3, false)]))
            .unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

//! Recurrent knowledge tracing over (question, response) tokens.

use numkit::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dropout, Init};
use super::{predict_with, Batch, ModelConfig, ModelKind, NeuralNet, Result, SequenceModel};
use crate::data::Interaction;

#[derive(Clone, Copy, Debug)]
struct Ids {
    /// `[2Q, embed]`; row `2q + correct`.
    token: ParamId,
    /// `[embed + hidden, 4·hidden]`, gate order input, forget, cell, output.
    lstm_w: ParamId,
    lstm_b: ParamId,
    /// `[Q, hidden]`; one output vector per question.
    out_w: ParamId,
    /// `[Q, 1]`.
    out_b: ParamId,
}

pub struct Dkt {
    cfg: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl Dkt {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (q, e, h) = (cfg.vocab, cfg.embed, cfg.hidden);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let token = init.table("token", 2 * q, e)?;
        let lstm_w = init.weight("lstm.w", e + h, 4 * h)?;
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        let lstm_b = init.store.add("lstm.b", Tensor::new(&[4 * h], b)?)?;
        let out_w = init.weight("out.w", q, h)?;
        let out_b = init.full("out.b", &[q, 1], 0.0)?;
        Ok(Self {
            cfg,
            params,
            ids: Ids {
                token,
                lstm_w,
                lstm_b,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuilds the model around stored parameters.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(cfg)?;
        let mut m = fresh;
        m.params.copy_values_from(&params)?;
        Ok(m)
    }
}

impl NeuralNet for Dkt {
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
        let token = tape.param(self.ids.token);
        let w = tape.param(self.ids.lstm_w);
        let b = tape.param(self.ids.lstm_b);
        let mut hs = tape.constant(Tensor::zeros(&[rows, h]));
        let mut cs = hs;
        let mut outs = Vec::with_capacity(n);
        for t in 0..n {
            let idx: Vec<usize> = (0..rows)
                .map(|r| 2 * batch.q(r, t) + batch.c(r, t))
                .collect();
            let x = tape.embedding(token, &idx)?;
            (hs, cs) = tape.lstm_cell(x, hs, cs, w, b)?;
            outs.push(hs);
        }
        let all = tape.concat(&outs)?;
        let all = tape.reshape(all, &[rows * n, h])?;
        let all = dropout(tape, all, self.cfg.dropout, &mut rng)?;
        let next = batch.input_index(|r, t| batch.q(r, t + 1));
        let out_w = tape.param(self.ids.out_w);
        let out_b = tape.param(self.ids.out_b);
        let wq = tape.embedding(out_w, &next)?;
        let bq = tape.embedding(out_b, &next)?;
        let dot = tape.mul(all, wq)?;
        let dot = tape.row_sum(dot)?;
        let z = tape.add(dot, bq)?;
        Ok(tape.reshape(z, &[rows * n])?)
    }
}

impl SequenceModel for Dkt {
    fn kind(&self) -> ModelKind {
        ModelKind::Dkt
    }

    fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        predict_with(self, seq)
    }
}

//! Parameter initialisation and the building blocks shared by the
//! attention models.

use numkit::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Result;

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        Ok(self.store.add(name, t)?)
    }

    /// Glorot-uniform `[rows, cols]` weight.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, &[rows, cols], bound)
    }

    pub fn table(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.uniform(name, &[rows, cols], 0.1)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::full(shape, value))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            w: init.weight(&format!("{name}.w"), inp, out)?,
            b: init.full(&format!("{name}.b"), &[out], 0.0)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init<'_>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.full(&format!("{name}.gamma"), &[width], 1.0)?,
            beta: init.full(&format!("{name}.beta"), &[width], 0.0)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(self.gamma), tape.param(self.beta));
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Multi-head attention with input and output projections.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init<'_>, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), width, width)?,
            k: Linear::new(init, &format!("{name}.k"), width, width)?,
            v: Linear::new(init, &format!("{name}.v"), width, width)?,
            o: Linear::new(init, &format!("{name}.o"), width, width)?,
            heads,
        })
    }

    /// `query: [B, Tq, d]`, `memory: [B, Tk, d]`.
    pub fn apply(&self, tape: &mut Tape<'_>, query: Var, memory: Var, causal: bool) -> Result<Var> {
        let q = self.q.apply(tape, query)?;
        let k = self.k.apply(tape, memory)?;
        let v = self.v.apply(tape, memory)?;
        let a = tape.attention(q, k, v, self.heads, causal)?;
        self.o.apply(tape, a)
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init<'_>, name: &str, width: usize, inner: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(init, &format!("{name}.up"), width, inner)?,
            down: Linear::new(init, &format!("{name}.down"), inner, width)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.up.apply(tape, x)?;
        let h = tape.gelu(h)?;
        self.down.apply(tape, h)
    }
}

pub(crate) fn dropout(
    tape: &mut Tape<'_>,
    x: Var,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    match rng {
        Some(r) => Ok(tape.dropout(x, rate, &mut **r)?),
        None => Ok(x),
    }
}

/// `LN(x + f)`.
pub(crate) fn residual_norm(tape: &mut Tape<'_>, norm: &Norm, x: Var, f: Var) -> Result<Var> {
    let s = tape.add(x, f)?;
    norm.apply(tape, s)
}

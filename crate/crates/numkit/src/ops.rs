//! Differentiable operations recorded on a [`Tape`].

use rand::Rng;

use crate::error::{shape_err, NumError, Result};
use crate::gemm::gemm;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    tq: usize,
    tk: usize,
    dk: usize,
    dv: usize,
    heads: usize,
    scale: f64,
    /// Softmax weights laid out `[batch, heads, tq, tk]`; masked entries are 0.
    weights: Vec<f64>,
}

/// Splits an attention operand into `(batch, seq, width)`.
fn attn_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, d] => Ok((1, t, d)),
        [b, t, d] => Ok((b, t, d)),
        _ => Err(shape_err(
            op,
            format!("expected rank 2 or 3, got {shape:?}"),
        )),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'p> Tape<'p> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map(
        &mut self,
        op_name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| f(v)).collect(),
        );
        self.push(op_name, out, op, &[x])
    }

    /// `a[.., k] · b[k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        self.push(
            "matmul",
            Tensor::from_parts(shape, out),
            Op::MatMul { a, b, m, k, n },
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// Broadcast-adds a `[n]` row vector to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || bv.len() != xv.last_dim() {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let n = bv.len();
        let b = bv.data();
        let out: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("add_row", t, Op::AddRow(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map(
            "gelu",
            x,
            |v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(shape_err(
                "softmax",
                format!("axis {axis} for shape {:?}", xv.shape()),
            ));
        }
        let len = xv.shape()[axis];
        let outer: usize = xv.shape()[..axis].iter().product();
        let inner: usize = xv.shape()[axis + 1..].iter().product();
        let d = xv.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (d[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            "softmax",
            t,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        )
    }

    /// Layer normalisation over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    xv.shape(),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let d = xv.data();
        let mut xhat = vec![0.0; d.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        let op = if self.grad_enabled() {
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            }
        } else {
            Op::Leaf
        };
        self.push("layer_norm", t, op, &[x, gamma, beta])
    }

    /// Gathers rows of `table[V, d]` -> `[indices.len(), d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(shape_err(
                "embedding",
                format!("table shape {:?}", tv.shape()),
            ));
        }
        if indices.is_empty() {
            return Err(shape_err("embedding", "no indices"));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(NumError::IndexOutOfRange { index: i, rows });
            }
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_parts(vec![indices.len(), d], out);
        let op = if self.grad_enabled() {
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            }
        } else {
            Op::Leaf
        };
        self.push("embedding", t, op, &[table])
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), s),
                ));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
        };
        self.push("concat", Tensor::from_parts(shape, out), op, parts)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.last_dim();
        if len == 0 || start + len > w {
            return Err(shape_err(
                "slice",
                format!("{start}..{} of width {w}", start + len),
            ));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        self.push(
            "slice",
            Tensor::from_parts(shape, out),
            Op::Slice { x, start, len },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(shape, xv.data().to_vec())
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", xv.shape())))?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Inverted dropout with keep-probability `1 - rate`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 || !self.grad_enabled() {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    /// Sum of all elements -> `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.last_dim();
        let out: Vec<f64> = xv.data().chunks(w).map(|c| c.iter().sum()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = 1;
        self.push(
            "row_sum",
            Tensor::from_parts(shape, out),
            Op::RowSum(x),
            &[x],
        )
    }

    /// Weighted mean binary cross-entropy on logits -> `[1]`.
    ///
    /// Entries with weight 0 do not contribute. An all-zero weight vector
    /// yields a loss of 0.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Var> {
        let z = self.value(logits).data();
        if targets.len() != z.len() || weights.len() != z.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!(
                    "{} logits, {} targets, {} weights",
                    z.len(),
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let total: f64 = weights.iter().sum();
        let loss = if total > 0.0 {
            z.iter()
                .zip(targets)
                .zip(weights)
                .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
                .sum::<f64>()
                / total
        } else {
            0.0
        };
        let op = Op::Bce {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            total,
        };
        self.push("bce_with_logits", Tensor::scalar(loss), op, &[logits])
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [B, Tq, Dk]`, `k: [B, Tk, Dk]`, `v: [B, Tk, Dv]` (rank-2 inputs are
    /// a batch of one). Feature widths are split evenly across `heads`. With
    /// `causal`, query `i` only sees keys `j <= i`. Output is `[B, Tq, Dv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (bq, tq, dk) = attn_dims("attention", self.shape(q))?;
        let (bk, tk, dk2) = attn_dims("attention", self.shape(k))?;
        let (bv, tv, dv) = attn_dims("attention", self.shape(v))?;
        if bq != bk || bk != bv || dk != dk2 || tk != tv {
            return Err(shape_err(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v)
                ),
            ));
        }
        if heads == 0 || dk % heads != 0 || dv % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("{heads} heads for widths {dk}/{dv}"),
            ));
        }
        let (hk, hv) = (dk / heads, dv / heads);
        let scale = 1.0 / (hk as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut weights = vec![0.0; bq * heads * tq * tk];
        let mut out = vec![0.0; bq * tq * dv];
        let mut scores = vec![0.0; tk];
        for b in 0..bq {
            for h in 0..heads {
                for i in 0..tq {
                    let visible = if causal { (i + 1).min(tk) } else { tk };
                    let qrow = &qd[(b * tq + i) * dk + h * hk..][..hk];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..visible {
                        let krow = &kd[(b * tk + j) * dk + h * hk..][..hk];
                        let s = qrow.iter().zip(krow).map(|(a, c)| a * c).sum::<f64>() * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let w = &mut weights[((b * heads + h) * tq + i) * tk..][..tk];
                    let mut sum = 0.0;
                    for j in 0..visible {
                        let e = (scores[j] - max).exp();
                        w[j] = e;
                        sum += e;
                    }
                    let orow = &mut out[(b * tq + i) * dv + h * hv..][..hv];
                    for j in 0..visible {
                        w[j] /= sum;
                        let vrow = &vd[(b * tk + j) * dv + h * hv..][..hv];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += w[j] * x;
                        }
                    }
                }
            }
        }
        let shape = if self.shape(q).len() == 2 {
            vec![tq, dv]
        } else {
            vec![bq, tq, dv]
        };
        let op = if self.grad_enabled() {
            Op::Attention(Box::new(AttentionCache {
                q,
                k,
                v,
                batch: bq,
                tq,
                tk,
                dk,
                dv,
                heads,
                scale,
                weights,
            }))
        } else {
            Op::Leaf
        };
        self.push("attention", Tensor::from_parts(shape, out), op, &[q, k, v])
    }

    /// One LSTM step. `w: [in + hidden, 4 * hidden]`, `b: [4 * hidden]`,
    /// gate order input, forget, cell, output. Returns `(h', c')`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<(Var, Var)> {
        let hidden = self.value(h).last_dim();
        if self.shape(c) != self.shape(h)
            || self.value(x).rows() != self.value(h).rows()
            || self.shape(w) != [self.value(x).last_dim() + hidden, 4 * hidden]
            || self.shape(b) != [4 * hidden]
        {
            return Err(shape_err(
                "lstm_cell",
                format!(
                    "x {:?}, h {:?}, c {:?}, w {:?}, b {:?}",
                    self.shape(x),
                    self.shape(h),
                    self.shape(c),
                    self.shape(w),
                    self.shape(b)
                ),
            ));
        }
        let xh = self.concat(&[x, h])?;
        let z = self.matmul(xh, w)?;
        let z = self.add_row(z, b)?;
        let zi = self.slice(z, 0, hidden)?;
        let zf = self.slice(z, hidden, hidden)?;
        let zg = self.slice(z, 2 * hidden, hidden)?;
        let zo = self.slice(z, 3 * hidden, hidden)?;
        let i = self.sigmoid(zi)?;
        let f = self.sigmoid(zf)?;
        let g = self.tanh(zg)?;
        let o = self.sigmoid(zo)?;
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next)?;
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    pub(crate) fn backward_node(&self, node: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[node.0].op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, m, k, n } => {
                let bv = self.value(b).data();
                self.acc(grads, a, |ga| gemm(m, n, k, g, false, bv, true, ga, true));
                let av = self.value(a).data();
                self.acc(grads, b, |gb| gemm(k, m, n, av, true, g, false, gb, true));
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    self.acc(grads, v, |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
            }
            &Op::AddRow(x, bias) => {
                self.acc(grads, x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
                self.acc(grads, bias, |gb| {
                    let n = gb.len();
                    for (i, y) in g.iter().enumerate() {
                        gb[i % n] += y;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.acc(grads, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale(x, s) => {
                self.acc(grads, x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += s * b)
                });
            }
            &Op::Sigmoid(x) => {
                let y = self.value(node).data();
                self.acc(grads, x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            &Op::Tanh(x) => {
                let y = self.value(node).data();
                self.acc(grads, x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            &Op::Gelu(x) => {
                let xv = self.value(x).data();
                self.acc(grads, x, |gx| {
                    for i in 0..gx.len() {
                        let v = xv[i];
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        gx[i] += g[i] * d;
                    }
                });
            }
            &Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = self.value(node).data();
                self.acc(grads, x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                self.acc(grads, *x, |gx| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gam[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            let d = gr[j] * gam[j];
                            gx[r * n + j] += rs * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                self.acc(grads, *gamma, |gg| {
                    for (i, (y, h)) in g.iter().zip(xhat).enumerate() {
                        gg[i % n] += y * h;
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for (i, y) in g.iter().enumerate() {
                        gb[i % n] += y;
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.value(*table).last_dim();
                self.acc(grads, *table, |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut off = 0;
                for &(p, w) in parts {
                    self.acc(grads, p, |gp| {
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            &Op::Slice { x, start, len } => {
                let w = self.value(x).last_dim();
                self.acc(grads, x, |gx| {
                    let rows = gx.len() / w;
                    for r in 0..rows {
                        for j in 0..len {
                            gx[r * w + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            &Op::Reshape(x) => {
                self.acc(grads, x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * mask[i];
                    }
                });
            }
            &Op::Sum(x) => {
                self.acc(grads, x, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            &Op::RowSum(x) => {
                let w = self.value(x).last_dim();
                self.acc(grads, x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a += g[i / w];
                    }
                });
            }
            Op::Bce {
                logits,
                targets,
                weights,
                total,
            } => {
                if *total <= 0.0 {
                    return;
                }
                let z = self.value(*logits).data();
                self.acc(grads, *logits, |gz| {
                    for i in 0..gz.len() {
                        gz[i] += g[0] * weights[i] * (sigmoid(z[i]) - targets[i]) / total;
                    }
                });
            }
            Op::Attention(c) => self.attention_backward(c, g, grads),
        }
    }

    fn attention_backward(&self, c: &AttentionCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (hk, hv) = (c.dk / c.heads, c.dv / c.heads);
        let (qd, kd, vd) = (
            self.value(c.q).data(),
            self.value(c.k).data(),
            self.value(c.v).data(),
        );
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; c.tk];
        for b in 0..c.batch {
            for h in 0..c.heads {
                for i in 0..c.tq {
                    let w = &c.weights[((b * c.heads + h) * c.tq + i) * c.tk..][..c.tk];
                    let go = &g[(b * c.tq + i) * c.dv + h * hv..][..hv];
                    let mut dot = 0.0;
                    for j in 0..c.tk {
                        if w[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = &vd[(b * c.tk + j) * c.dv + h * hv..][..hv];
                        dp[j] = go.iter().zip(vrow).map(|(x, y)| x * y).sum();
                        dot += dp[j] * w[j];
                        let dvrow = &mut dv[(b * c.tk + j) * c.dv + h * hv..][..hv];
                        for (d, x) in dvrow.iter_mut().zip(go) {
                            *d += w[j] * x;
                        }
                    }
                    let qoff = (b * c.tq + i) * c.dk + h * hk;
                    for j in 0..c.tk {
                        if w[j] == 0.0 {
                            continue;
                        }
                        let ds = w[j] * (dp[j] - dot) * c.scale;
                        let koff = (b * c.tk + j) * c.dk + h * hk;
                        for t in 0..hk {
                            dq[qoff + t] += ds * kd[koff + t];
                            dk[koff + t] += ds * qd[qoff + t];
                        }
                    }
                }
            }
        }
        for (var, d) in [(c.q, dq), (c.k, dk), (c.v, dv)] {
            self.acc(grads, var, |gx| {
                gx.iter_mut().zip(&d).for_each(|(a, b)| *a += b)
            });
        }
    }
}

//! Wengert tape: layer ops are recorded during the forward pass and replayed
//! in reverse to accumulate gradients.
//!
//! The tape borrows the [`ParamSet`] it reads weights from, so parameter
//! tensors are never copied into the graph; gradients for bound parameters
//! are collected separately and handed back via [`Tape::take_param_grads`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::engine::ops::{
    self, log_sum_exp, matmul, matmul_nt, matmul_tn, softmax_rows_inplace, Activation,
};
use crate::engine::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Train/inference switch for batch-norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Exponential running mean/variance kept by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(features: usize, momentum: f64) -> Self {
        RunningStats { mean: vec![0.0; features], var: vec![1.0; features], momentum }
    }
}

/// Reference to a tensor seen by the tape: an activation node, a bound
/// parameter, or an external constant that outlives the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Node(usize),
    Param(usize),
    Const(usize),
}

struct LstmCache {
    hidden: usize,
    /// Post-activation gate values per step, [T, 4H] in i,f,g,o order.
    gates: Vec<f64>,
    /// Cell states per step, [T, H].
    cell: Vec<f64>,
    /// tanh of cell states per step, [T, H].
    tanh_cell: Vec<f64>,
}

struct AttnProjCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

enum Op {
    Dense { x: Src, w: Src, b: Src, out: usize, act: Activation, preact: Vec<f64> },
    Conv1d { x: Src, w: Src, b: Src, out: usize },
    Relu { x: Src, out: usize },
    BatchNorm {
        x: Src,
        gamma: Src,
        beta: Src,
        out: usize,
        train: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaxPool { x: Src, out: usize, argmax: Vec<usize> },
    Dropout { x: Src, out: usize, mask: Vec<f64> },
    Lstm { x: Src, wx: Src, wh: Src, b: Src, out: usize, cache: LstmCache },
    Embedding { table: Src, ids: Vec<usize>, out: usize },
    SoftmaxRows { x: Src, out: usize },
    SelfAttention { x: Src, out: usize, attn: Vec<f64> },
    SelfAttentionProj {
        x: Src,
        wq: Src,
        wk: Src,
        wv: Src,
        out: usize,
        attn: Vec<f64>,
        cache: AttnProjCache,
    },
    MeanRows { x: Src, out: usize },
    LastRow { x: Src, out: usize },
    MaxRows { x: Src, out: usize, argmax: Vec<usize> },
    Mse { pred: Src, target: Tensor, out: usize },
    CrossEntropy { logits: Src, labels: Vec<usize>, out: usize, probs: Vec<f64> },
    SquaredNorm { x: Src, coeff: f64, out: usize },
    AddScalars { a: Src, b: Src, out: usize },
    Project { x: Src, weights: Vec<f64>, out: usize },
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    bound: Vec<String>,
    consts: Vec<&'p Tensor>,
    nodes: Vec<Tensor>,
    node_grads: Vec<Option<Vec<f64>>>,
    param_grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            bound: Vec::new(),
            consts: Vec::new(),
            nodes: Vec::new(),
            node_grads: Vec::new(),
            param_grads: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// An owned input node (gradients are tracked for it).
    pub fn input(&mut self, t: Tensor) -> Src {
        Src::Node(self.push_node(t))
    }

    /// A borrowed constant (no gradient is tracked).
    pub fn input_ref(&mut self, t: &'p Tensor) -> Src {
        self.consts.push(t);
        Src::Const(self.consts.len() - 1)
    }

    /// Bind a named parameter from the backing set.
    pub fn param(&mut self, name: &str) -> Result<Src> {
        if !self.params.contains(name) {
            return Err(Error::Config(format!("unknown parameter {name}")));
        }
        if let Some(i) = self.bound.iter().position(|n| n == name) {
            return Ok(Src::Param(i));
        }
        self.bound.push(name.to_string());
        self.param_grads.push(None);
        Ok(Src::Param(self.bound.len() - 1))
    }

    pub fn value(&self, s: Src) -> &Tensor {
        match s {
            Src::Node(i) => &self.nodes[i],
            Src::Param(i) => &self.params.get(&self.bound[i]).expect("bound param").value,
            Src::Const(i) => self.consts[i],
        }
    }

    /// Gradient accumulated for a node or bound parameter, if any flowed.
    pub fn grad(&self, s: Src) -> Option<&[f64]> {
        match s {
            Src::Node(i) => self.node_grads[i].as_deref(),
            Src::Param(i) => self.param_grads[i].as_deref(),
            Src::Const(_) => None,
        }
    }

    /// Drain parameter gradients as a name -> flat-gradient map.
    pub fn take_param_grads(&mut self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, g) in self.bound.iter().zip(self.param_grads.iter_mut()) {
            if let Some(g) = g.take() {
                out.insert(name.clone(), g);
            }
        }
        out
    }

    fn push_node(&mut self, t: Tensor) -> usize {
        self.nodes.push(t);
        self.node_grads.push(None);
        self.nodes.len() - 1
    }

    fn accum(&mut self, s: Src, g: &[f64]) {
        let slot = match s {
            Src::Node(i) => &mut self.node_grads[i],
            Src::Param(i) => &mut self.param_grads[i],
            Src::Const(_) => return,
        };
        match slot {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    // ── forward-recording ops ────────────────────────────────────────

    /// y = act(x W + b); x: [n,in] (or [in]), W: [in,out], b: [out].
    pub fn dense(&mut self, x: Src, w: Src, b: Src, act: Activation) -> Result<Src> {
        let (xv, xshape) = {
            let t = self.value(x);
            (t.values().to_vec(), t.shape().to_vec())
        };
        let n = if xshape.len() == 1 { 1 } else { xshape[0] };
        let d_in = *xshape.last().unwrap();
        let (wv, wshape) = {
            let t = self.value(w);
            (t.values().to_vec(), t.shape().to_vec())
        };
        if wshape.len() != 2 || wshape[0] != d_in {
            return Err(Error::dim("dense", &xshape, &wshape));
        }
        let d_out = wshape[1];
        let bv = self.value(b).values().to_vec();
        if bv.len() != d_out {
            return Err(Error::dim("dense", &wshape, self.value(b).shape()));
        }
        let mut preact = matmul(&xv, &wv, n, d_in, d_out);
        for row in preact.chunks_mut(d_out) {
            for (z, bias) in row.iter_mut().zip(&bv) {
                *z += bias;
            }
        }
        let y: Vec<f64> = preact.iter().map(|&z| act.apply(z)).collect();
        let out_shape = if xshape.len() == 1 { vec![d_out] } else { vec![n, d_out] };
        let out = self.push_node(Tensor::new(out_shape, y)?);
        self.ops.push(Op::Dense { x, w, b, out, act, preact });
        Ok(Src::Node(out))
    }

    /// Valid (no-pad) 1-D convolution; x: [T,Cin], w: [K,Cin,F], b: [F].
    pub fn conv1d(&mut self, x: Src, w: Src, b: Src) -> Result<Src> {
        let (t_len, c_in) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("conv1d", t.shape(), "[T,Cin]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        let wshape = self.value(w).shape().to_vec();
        if wshape.len() != 3 || wshape[1] != c_in {
            return Err(Error::dim("conv1d", &[t_len, c_in], &wshape));
        }
        let (k, f) = (wshape[0], wshape[2]);
        if t_len < k {
            return Err(Error::SequenceTooShort { needed: k, got: t_len });
        }
        if self.value(b).numel() != f {
            return Err(Error::dim("conv1d", &wshape, self.value(b).shape()));
        }
        let xv = self.value(x).values().to_vec();
        let wv = self.value(w).values().to_vec();
        let bv = self.value(b).values().to_vec();
        let t_out = t_len - k + 1;
        let mut y = vec![0.0; t_out * f];
        for t in 0..t_out {
            let yrow = &mut y[t * f..(t + 1) * f];
            yrow.copy_from_slice(&bv);
            for kk in 0..k {
                let xrow = &xv[(t + kk) * c_in..(t + kk + 1) * c_in];
                for (c, &xc) in xrow.iter().enumerate() {
                    if xc == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(kk * c_in + c) * f..(kk * c_in + c + 1) * f];
                    for (o, wvf) in yrow.iter_mut().zip(wrow) {
                        *o += xc * wvf;
                    }
                }
            }
        }
        let out = self.push_node(Tensor::new(vec![t_out, f], y)?);
        self.ops.push(Op::Conv1d { x, w, b, out });
        Ok(Src::Node(out))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, x: Src) -> Result<Src> {
        let t = self.value(x);
        let y: Vec<f64> = t.values().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let out = self.push_node(Tensor::new(shape, y)?);
        self.ops.push(Op::Relu { x, out });
        Ok(Src::Node(out))
    }

    /// Batch norm over the time axis of x: [T,F]. Train mode normalizes by
    /// batch statistics and updates `stats`; infer mode uses `stats` as-is.
    pub fn batchnorm1d(
        &mut self,
        x: Src,
        gamma: Src,
        beta: Src,
        eps: f64,
        mode: Mode,
        stats: &mut RunningStats,
    ) -> Result<Src> {
        let (t_len, f) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("batchnorm1d", t.shape(), "[T,F]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        if self.value(gamma).numel() != f || self.value(beta).numel() != f {
            return Err(Error::dim("batchnorm1d", &[t_len, f], self.value(gamma).shape()));
        }
        if stats.mean.len() != f {
            return Err(Error::dim("batchnorm1d", &[f], stats.mean.len()));
        }
        let train = mode == Mode::Train;
        if train && t_len < 2 {
            return Err(Error::DegenerateBatch { rows: t_len });
        }
        let xv = self.value(x).values().to_vec();
        let gv = self.value(gamma).values().to_vec();
        let bv = self.value(beta).values().to_vec();

        let (mean, var) = if train {
            let mut mean = vec![0.0; f];
            let mut var = vec![0.0; f];
            for row in xv.chunks(f) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= t_len as f64;
            }
            for row in xv.chunks(f) {
                for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            for s in &mut var {
                *s /= t_len as f64;
            }
            let mom = stats.momentum;
            for j in 0..f {
                stats.mean[j] = mom * stats.mean[j] + (1.0 - mom) * mean[j];
                stats.var[j] = mom * stats.var[j] + (1.0 - mom) * var[j];
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        let mut xhat = vec![0.0; t_len * f];
        let mut y = vec![0.0; t_len * f];
        for t in 0..t_len {
            for j in 0..f {
                let h = (xv[t * f + j] - mean[j]) * inv_std[j];
                xhat[t * f + j] = h;
                y[t * f + j] = gv[j] * h + bv[j];
            }
        }
        let out = self.push_node(Tensor::new(vec![t_len, f], y)?);
        self.ops.push(Op::BatchNorm { x, gamma, beta, out, train, xhat, inv_std });
        Ok(Src::Node(out))
    }

    /// Non-overlapping width-2 max pool over time; trailing odd row dropped.
    pub fn maxpool1d(&mut self, x: Src) -> Result<Src> {
        let (t_len, f) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("maxpool1d", t.shape(), "[T,F]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        if t_len < 2 {
            return Err(Error::SequenceTooShort { needed: 2, got: t_len });
        }
        let xv = self.value(x).values().to_vec();
        let t_out = t_len / 2;
        let mut y = vec![0.0; t_out * f];
        let mut argmax = vec![0usize; t_out * f];
        for t in 0..t_out {
            for j in 0..f {
                let a = xv[2 * t * f + j];
                let b = xv[(2 * t + 1) * f + j];
                // ties go to the first index
                if b > a {
                    y[t * f + j] = b;
                    argmax[t * f + j] = (2 * t + 1) * f + j;
                } else {
                    y[t * f + j] = a;
                    argmax[t * f + j] = 2 * t * f + j;
                }
            }
        }
        let out = self.push_node(Tensor::new(vec![t_out, f], y)?);
        self.ops.push(Op::MaxPool { x, out, argmax });
        Ok(Src::Node(out))
    }

    /// Inverted dropout: train mode zeroes each element with probability
    /// `rate` and scales survivors by 1/(1-rate); infer mode is the identity.
    /// The mask is fully determined by `seed`.
    pub fn dropout(&mut self, x: Src, rate: f64, mode: Mode, seed: u64) -> Result<Src> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        let t = self.value(x);
        let n = t.numel();
        let shape = t.shape().to_vec();
        let mask: Vec<f64> = if mode == Mode::Infer || rate == 0.0 {
            vec![1.0; n]
        } else {
            let mut rng = ops::derive_rng(seed, &[]);
            let keep = 1.0 / (1.0 - rate);
            (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
        };
        let y: Vec<f64> = t.values().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = self.push_node(Tensor::new(shape, y)?);
        self.ops.push(Op::Dropout { x, out, mask });
        Ok(Src::Node(out))
    }

    /// Single-layer LSTM over x: [T,in]; returns the full hidden sequence
    /// [T,H]. Weights: wx [in,4H], wh [H,4H], b [4H], gates ordered i,f,g,o
    /// with sigmoid/sigmoid/tanh/sigmoid activations; h0 = c0 = 0.
    pub fn lstm(&mut self, x: Src, wx: Src, wh: Src, b: Src) -> Result<Src> {
        let (t_len, d_in) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("lstm", t.shape(), "[T,in]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        if t_len == 0 {
            return Err(Error::EmptySequence);
        }
        let wx_shape = self.value(wx).shape().to_vec();
        let wh_shape = self.value(wh).shape().to_vec();
        if wx_shape.len() != 2 || wx_shape[0] != d_in || wx_shape[1] % 4 != 0 {
            return Err(Error::dim("lstm", &[t_len, d_in], &wx_shape));
        }
        let h = wx_shape[1] / 4;
        if wh_shape != [h, 4 * h] || self.value(b).numel() != 4 * h {
            return Err(Error::dim("lstm", &wx_shape, &wh_shape));
        }
        let xv = self.value(x).values().to_vec();
        let wxv = self.value(wx).values().to_vec();
        let whv = self.value(wh).values().to_vec();
        let bv = self.value(b).values().to_vec();

        let mut gates = vec![0.0; t_len * 4 * h];
        let mut cell = vec![0.0; t_len * h];
        let mut tanh_cell = vec![0.0; t_len * h];
        let mut hidden = vec![0.0; t_len * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            let xrow = &xv[t * d_in..(t + 1) * d_in];
            let mut a = matmul(xrow, &wxv, 1, d_in, 4 * h);
            let ha = matmul(&h_prev, &whv, 1, h, 4 * h);
            for ((av, hv), bias) in a.iter_mut().zip(&ha).zip(&bv) {
                *av += hv + bias;
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                g[j] = ops::sigmoid(a[j]); // input
                g[h + j] = ops::sigmoid(a[h + j]); // forget
                g[2 * h + j] = a[2 * h + j].tanh(); // candidate
                g[3 * h + j] = ops::sigmoid(a[3 * h + j]); // output
            }
            for j in 0..h {
                let c = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                cell[t * h + j] = c;
                let tc = c.tanh();
                tanh_cell[t * h + j] = tc;
                hidden[t * h + j] = g[3 * h + j] * tc;
            }
            h_prev.copy_from_slice(&hidden[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cell[t * h..(t + 1) * h]);
        }
        let out = self.push_node(Tensor::new(vec![t_len, h], hidden)?);
        let cache = LstmCache { hidden: h, gates, cell, tanh_cell };
        self.ops.push(Op::Lstm { x, wx, wh, b, out, cache });
        Ok(Src::Node(out))
    }

    /// Row gather: out[t] = table[ids[t]]. Backward scatter-adds into the
    /// table, accumulating over repeated ids.
    pub fn embedding(&mut self, table: Src, ids: &[u32]) -> Result<Src> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (v, d) = {
            let t = self.value(table);
            if t.shape().len() != 2 {
                return Err(Error::dim("embedding", t.shape(), "[V,D]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Vocabulary(format!(
                    "token id {id} out of range for vocabulary of size {v}"
                )));
            }
        }
        let tv = self.value(table).values().to_vec();
        let mut y = vec![0.0; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            y[t * d..(t + 1) * d].copy_from_slice(&tv[id as usize * d..(id as usize + 1) * d]);
        }
        let out = self.push_node(Tensor::new(vec![ids.len(), d], y)?);
        let ids = ids.iter().map(|&i| i as usize).collect();
        self.ops.push(Op::Embedding { table, ids, out });
        Ok(Src::Node(out))
    }

    /// Row-stochastic softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Src) -> Result<Src> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut y = t.values().to_vec();
        let shape = t.shape().to_vec();
        softmax_rows_inplace(&mut y, rows, cols);
        let out = self.push_node(Tensor::new(shape, y)?);
        self.ops.push(Op::SoftmaxRows { x, out });
        Ok(Src::Node(out))
    }

    /// Query-equals-key self-attention on x: [n,d]:
    /// S = X Xᵀ, S' = S/√d, A = softmax_rows(S'), Z = A X.
    /// Returns Z and a copy of A for inspection.
    pub fn self_attention(&mut self, x: Src) -> Result<(Src, Tensor)> {
        let (n, d) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("self_attention", t.shape(), "[n,d]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        let xv = self.value(x).values().to_vec();
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = matmul_nt(&xv, &xv, n, d, n);
        for s in &mut attn {
            *s *= scale;
        }
        softmax_rows_inplace(&mut attn, n, n);
        let z = matmul(&attn, &xv, n, n, d);
        let a_tensor = Tensor::new(vec![n, n], attn.clone())?;
        let out = self.push_node(Tensor::new(vec![n, d], z)?);
        self.ops.push(Op::SelfAttention { x, out, attn });
        Ok((Src::Node(out), a_tensor))
    }

    /// Self-attention with learnable square projections:
    /// Q = X Wq, K = X Wk, V = X Wv, S' = Q Kᵀ/√d, A = softmax, Z = A V.
    pub fn self_attention_proj(
        &mut self,
        x: Src,
        wq: Src,
        wk: Src,
        wv: Src,
    ) -> Result<(Src, Tensor)> {
        let (n, d) = {
            let t = self.value(x);
            if t.shape().len() != 2 {
                return Err(Error::dim("self_attention", t.shape(), "[n,d]"));
            }
            (t.shape()[0], t.shape()[1])
        };
        for w in [wq, wk, wv] {
            if self.value(w).shape() != [d, d] {
                return Err(Error::dim("self_attention", &[n, d], self.value(w).shape()));
            }
        }
        let xv = self.value(x).values().to_vec();
        let q = matmul(&xv, self.value(wq).values(), n, d, d);
        let k = matmul(&xv, self.value(wk).values(), n, d, d);
        let v = matmul(&xv, self.value(wv).values(), n, d, d);
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = matmul_nt(&q, &k, n, d, n);
        for s in &mut attn {
            *s *= scale;
        }
        softmax_rows_inplace(&mut attn, n, n);
        let z = matmul(&attn, &v, n, n, d);
        let a_tensor = Tensor::new(vec![n, n], attn.clone())?;
        let out = self.push_node(Tensor::new(vec![n, d], z)?);
        let cache = AttnProjCache { q, k, v };
        self.ops.push(Op::SelfAttentionProj { x, wq, wk, wv, out, attn, cache });
        Ok((Src::Node(out), a_tensor))
    }

    /// Mean over rows of [n,d] -> [d].
    pub fn mean_rows(&mut self, x: Src) -> Result<Src> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("mean_rows", t.shape(), "[n,d]"));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut y = vec![0.0; d];
        for row in t.values().chunks(d) {
            for (m, &v) in y.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut y {
            *m /= n as f64;
        }
        let out = self.push_node(Tensor::new(vec![d], y)?);
        self.ops.push(Op::MeanRows { x, out });
        Ok(Src::Node(out))
    }

    /// Last row of [n,d] -> [d].
    pub fn last_row(&mut self, x: Src) -> Result<Src> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("last_row", t.shape(), "[n,d]"));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let y = t.values()[(n - 1) * d..].to_vec();
        let out = self.push_node(Tensor::new(vec![d], y)?);
        self.ops.push(Op::LastRow { x, out });
        Ok(Src::Node(out))
    }

    /// Column-wise max over rows of [n,d] -> [d]; ties to the first row.
    pub fn max_rows(&mut self, x: Src) -> Result<Src> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("max_rows", t.shape(), "[n,d]"));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let xv = t.values().to_vec();
        let mut y = xv[..d].to_vec();
        let mut argmax: Vec<usize> = (0..d).collect();
        for r in 1..n {
            for j in 0..d {
                if xv[r * d + j] > y[j] {
                    y[j] = xv[r * d + j];
                    argmax[j] = r * d + j;
                }
            }
        }
        let out = self.push_node(Tensor::new(vec![d], y)?);
        self.ops.push(Op::MaxRows { x, out, argmax });
        Ok(Src::Node(out))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse_loss(&mut self, pred: Src, target: &Tensor) -> Result<Src> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::dim("mse_loss", p.shape(), target.shape()));
        }
        let n = p.numel() as f64;
        let loss = p
            .values()
            .iter()
            .zip(target.values())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let out = self.push_node(Tensor::scalar(loss));
        self.ops.push(Op::Mse { pred, target: target.clone(), out });
        Ok(Src::Node(out))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of
    /// `logits` [n,K], in stable log-sum-exp form; scalar output.
    pub fn cross_entropy(&mut self, logits: Src, labels: &[usize]) -> Result<Src> {
        let t = self.value(logits);
        let (n, k) = (t.rows(), t.cols());
        if labels.len() != n {
            return Err(Error::dim("cross_entropy", &[n, k], labels.len()));
        }
        for &l in labels {
            if l >= k {
                return Err(Error::Label(l));
            }
        }
        let xv = t.values().to_vec();
        let mut probs = xv.clone();
        softmax_rows_inplace(&mut probs, n, k);
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &xv[i * k..(i + 1) * k];
            loss += log_sum_exp(row) - row[l];
        }
        loss /= n as f64;
        let out = self.push_node(Tensor::scalar(loss));
        self.ops.push(Op::CrossEntropy { logits, labels: labels.to_vec(), out, probs });
        Ok(Src::Node(out))
    }

    /// coeff * Σ x²; scalar output (L2 penalty / squared norm).
    pub fn squared_norm(&mut self, x: Src, coeff: f64) -> Result<Src> {
        let s = coeff * self.value(x).values().iter().map(|&v| v * v).sum::<f64>();
        let out = self.push_node(Tensor::scalar(s));
        self.ops.push(Op::SquaredNorm { x, coeff, out });
        Ok(Src::Node(out))
    }

    /// Sum of two scalars.
    pub fn add_scalars(&mut self, a: Src, b: Src) -> Result<Src> {
        if self.value(a).numel() != 1 || self.value(b).numel() != 1 {
            return Err(Error::dim("add_scalars", self.value(a).shape(), self.value(b).shape()));
        }
        let s = self.value(a).values()[0] + self.value(b).values()[0];
        let out = self.push_node(Tensor::scalar(s));
        self.ops.push(Op::AddScalars { a, b, out });
        Ok(Src::Node(out))
    }

    /// Fixed-weight projection Σ wᵢxᵢ; scalar output. Used to reduce a
    /// vector-valued op to a scalar for finite-difference checks.
    pub fn project(&mut self, x: Src, weights: &[f64]) -> Result<Src> {
        let t = self.value(x);
        if t.numel() != weights.len() {
            return Err(Error::dim("project", t.shape(), weights.len()));
        }
        let s = t.values().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let out = self.push_node(Tensor::scalar(s));
        self.ops.push(Op::Project { x, weights: weights.to_vec(), out });
        Ok(Src::Node(out))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Each recorded op is visited
    /// exactly once; gradients accumulate into node and parameter buffers.
    pub fn backward(&mut self, loss: Src) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::TapeEmpty);
        }
        let loss_node = match loss {
            Src::Node(i) => i,
            _ => return Err(Error::Data("loss must be a computed node".into())),
        };
        if self.nodes[loss_node].numel() != 1 {
            return Err(Error::dim("backward", self.nodes[loss_node].shape(), "scalar"));
        }
        self.node_grads[loss_node] = Some(vec![1.0]);
        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Dense { x, w, b, out, act, preact } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let yv = self.nodes[*out].values();
                let dz: Vec<f64> = dy
                    .iter()
                    .zip(preact)
                    .zip(yv)
                    .map(|((&g, &z), &y)| g * act.derivative(z, y))
                    .collect();
                let xt = self.value(*x);
                let n = xt.rows();
                let d_in = xt.cols();
                let d_out = self.nodes[*out].cols();
                let xv = xt.values().to_vec();
                let wv = self.value(*w).values().to_vec();
                let dx = matmul_nt(&dz, &wv, n, d_out, d_in);
                let dw = matmul_tn(&xv, &dz, d_in, n, d_out);
                let mut db = vec![0.0; d_out];
                for row in dz.chunks(d_out) {
                    for (s, &v) in db.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                self.accum(*x, &dx);
                self.accum(*w, &dw);
                self.accum(*b, &db);
            }
            Op::Conv1d { x, w, b, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let (t_out, f) = {
                    let t = &self.nodes[*out];
                    (t.shape()[0], t.shape()[1])
                };
                let xv = self.value(*x).values().to_vec();
                let c_in = self.value(*x).shape()[1];
                let t_len = self.value(*x).shape()[0];
                let wv = self.value(*w).values().to_vec();
                let k = self.value(*w).shape()[0];
                let mut dx = vec![0.0; t_len * c_in];
                let mut dw = vec![0.0; k * c_in * f];
                let mut db = vec![0.0; f];
                for t in 0..t_out {
                    let drow = &dy[t * f..(t + 1) * f];
                    for (s, &v) in db.iter_mut().zip(drow) {
                        *s += v;
                    }
                    for kk in 0..k {
                        for c in 0..c_in {
                            let xc = xv[(t + kk) * c_in + c];
                            let wrow = &wv[(kk * c_in + c) * f..(kk * c_in + c + 1) * f];
                            let mut acc = 0.0;
                            let dwrow = &mut dw[(kk * c_in + c) * f..(kk * c_in + c + 1) * f];
                            for ((dv, wvf), dwf) in drow.iter().zip(wrow).zip(dwrow) {
                                acc += dv * wvf;
                                *dwf += xc * dv;
                            }
                            dx[(t + kk) * c_in + c] += acc;
                        }
                    }
                }
                self.accum(*x, &dx);
                self.accum(*w, &dw);
                self.accum(*b, &db);
            }
            Op::Relu { x, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let xv = self.value(*x).values();
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accum(*x, &dx);
            }
            Op::BatchNorm { x, gamma, beta, out, train, xhat, inv_std } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let f = inv_std.len();
                let t_len = dy.len() / f;
                let gv = self.value(*gamma).values().to_vec();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for (drow, hrow) in dy.chunks(f).zip(xhat.chunks(f)) {
                    for j in 0..f {
                        dgamma[j] += drow[j] * hrow[j];
                        dbeta[j] += drow[j];
                    }
                }
                let mut dx = vec![0.0; t_len * f];
                if *train {
                    // d_xhat = dy * gamma; fold the mean/variance paths:
                    // dx = inv_std/T * (T*d_xhat - Σd_xhat - xhat * Σ(d_xhat*xhat))
                    let mut sum_dh = vec![0.0; f];
                    let mut sum_dh_h = vec![0.0; f];
                    for (drow, hrow) in dy.chunks(f).zip(xhat.chunks(f)) {
                        for j in 0..f {
                            let dh = drow[j] * gv[j];
                            sum_dh[j] += dh;
                            sum_dh_h[j] += dh * hrow[j];
                        }
                    }
                    let n = t_len as f64;
                    for t in 0..t_len {
                        for j in 0..f {
                            let dh = dy[t * f + j] * gv[j];
                            dx[t * f + j] = inv_std[j] / n
                                * (n * dh - sum_dh[j] - xhat[t * f + j] * sum_dh_h[j]);
                        }
                    }
                } else {
                    for t in 0..t_len {
                        for j in 0..f {
                            dx[t * f + j] = dy[t * f + j] * gv[j] * inv_std[j];
                        }
                    }
                }
                self.accum(*x, &dx);
                self.accum(*gamma, &dgamma);
                self.accum(*beta, &dbeta);
            }
            Op::MaxPool { x, out, argmax } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, &g) in argmax.iter().zip(&dy) {
                    dx[src] += g;
                }
                self.accum(*x, &dx);
            }
            Op::Dropout { x, out, mask } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let dx: Vec<f64> = dy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accum(*x, &dx);
            }
            Op::Lstm { x, wx, wh, b, out, cache } => {
                let Some(dh_out) = self.node_grads[*out].clone() else { return };
                let h = cache.hidden;
                let xt = self.value(*x);
                let (t_len, d_in) = (xt.shape()[0], xt.shape()[1]);
                let xv = xt.values().to_vec();
                let wxv = self.value(*wx).values().to_vec();
                let whv = self.value(*wh).values().to_vec();
                let hidden = self.nodes[*out].values().to_vec();

                let mut dx = vec![0.0; t_len * d_in];
                let mut dwx = vec![0.0; d_in * 4 * h];
                let mut dwh = vec![0.0; h * 4 * h];
                let mut db = vec![0.0; 4 * h];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let mut da = vec![0.0; 4 * h];
                for t in (0..t_len).rev() {
                    let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
                    let tc = &cache.tanh_cell[t * h..(t + 1) * h];
                    for j in 0..h {
                        let dh = dh_out[t * h + j] + dh_next[j];
                        let i_g = g[j];
                        let f_g = g[h + j];
                        let c_g = g[2 * h + j];
                        let o_g = g[3 * h + j];
                        let dc = dh * o_g * (1.0 - tc[j] * tc[j]) + dc_next[j];
                        let c_prev = if t == 0 { 0.0 } else { cache.cell[(t - 1) * h + j] };
                        da[j] = dc * c_g * i_g * (1.0 - i_g);
                        da[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                        da[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                        da[3 * h + j] = dh * tc[j] * o_g * (1.0 - o_g);
                        dc_next[j] = dc * f_g;
                    }
                    let xrow = &xv[t * d_in..(t + 1) * d_in];
                    for (c, &xc) in xrow.iter().enumerate() {
                        let dwrow = &mut dwx[c * 4 * h..(c + 1) * 4 * h];
                        for (dwv, &dav) in dwrow.iter_mut().zip(&da) {
                            *dwv += xc * dav;
                        }
                    }
                    if t > 0 {
                        let hrow = &hidden[(t - 1) * h..t * h];
                        for (j, &hv) in hrow.iter().enumerate() {
                            let dwrow = &mut dwh[j * 4 * h..(j + 1) * 4 * h];
                            for (dwv, &dav) in dwrow.iter_mut().zip(&da) {
                                *dwv += hv * dav;
                            }
                        }
                    }
                    for (s, &dav) in db.iter_mut().zip(&da) {
                        *s += dav;
                    }
                    let dxrow = matmul_nt(&da, &wxv, 1, 4 * h, d_in);
                    dx[t * d_in..(t + 1) * d_in].copy_from_slice(&dxrow);
                    let dhrow = matmul_nt(&da, &whv, 1, 4 * h, h);
                    dh_next.copy_from_slice(&dhrow);
                }
                self.accum(*x, &dx);
                self.accum(*wx, &dwx);
                self.accum(*wh, &dwh);
                self.accum(*b, &db);
            }
            Op::Embedding { table, ids, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let (v, d) = {
                    let t = self.value(*table);
                    (t.shape()[0], t.shape()[1])
                };
                let mut dt = vec![0.0; v * d];
                for (t, &id) in ids.iter().enumerate() {
                    let drow = &dy[t * d..(t + 1) * d];
                    let trow = &mut dt[id * d..(id + 1) * d];
                    for (s, &g) in trow.iter_mut().zip(drow) {
                        *s += g;
                    }
                }
                self.accum(*table, &dt);
            }
            Op::SoftmaxRows { x, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let y = self.nodes[*out].values().to_vec();
                let cols = self.nodes[*out].cols();
                let dx = softmax_backward(&dy, &y, cols);
                self.accum(*x, &dx);
            }
            Op::SelfAttention { x, out, attn } => {
                let Some(dz) = self.node_grads[*out].clone() else { return };
                let xt = self.value(*x);
                let (n, d) = (xt.shape()[0], xt.shape()[1]);
                let xv = xt.values().to_vec();
                let scale = 1.0 / (d as f64).sqrt();
                // Z = A X
                let da = matmul_nt(&dz, &xv, n, d, n);
                let mut dx = matmul_tn(attn, &dz, n, n, d);
                // through softmax rows, then S = X Xᵀ (symmetric in X)
                let ds_scaled = softmax_backward(&da, attn, n);
                let ds: Vec<f64> = ds_scaled.iter().map(|&v| v * scale).collect();
                let mut ds_sym = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        ds_sym[i * n + j] = ds[i * n + j] + ds[j * n + i];
                    }
                }
                let dx2 = matmul(&ds_sym, &xv, n, n, d);
                for (a, b) in dx.iter_mut().zip(&dx2) {
                    *a += b;
                }
                self.accum(*x, &dx);
            }
            Op::SelfAttentionProj { x, wq, wk, wv, out, attn, cache } => {
                let Some(dz) = self.node_grads[*out].clone() else { return };
                let xt = self.value(*x);
                let (n, d) = (xt.shape()[0], xt.shape()[1]);
                let xv = xt.values().to_vec();
                let scale = 1.0 / (d as f64).sqrt();
                // Z = A V
                let da = matmul_nt(&dz, &cache.v, n, d, n);
                let dv = matmul_tn(attn, &dz, n, n, d);
                let ds_scaled = softmax_backward(&da, attn, n);
                let ds: Vec<f64> = ds_scaled.iter().map(|&v| v * scale).collect();
                // S = Q Kᵀ
                let dq = matmul(&ds, &cache.k, n, n, d);
                let dk = matmul_tn(&ds, &cache.q, n, n, d);
                // Q = X Wq etc.
                let wqv = self.value(*wq).values().to_vec();
                let wkv = self.value(*wk).values().to_vec();
                let wvv = self.value(*wv).values().to_vec();
                let mut dx = matmul_nt(&dq, &wqv, n, d, d);
                for (a, b) in dx.iter_mut().zip(matmul_nt(&dk, &wkv, n, d, d)) {
                    *a += b;
                }
                for (a, b) in dx.iter_mut().zip(matmul_nt(&dv, &wvv, n, d, d)) {
                    *a += b;
                }
                let dwq = matmul_tn(&xv, &dq, d, n, d);
                let dwk = matmul_tn(&xv, &dk, d, n, d);
                let dwv = matmul_tn(&xv, &dv, d, n, d);
                self.accum(*x, &dx);
                self.accum(*wq, &dwq);
                self.accum(*wk, &dwk);
                self.accum(*wv, &dwv);
            }
            Op::MeanRows { x, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let n = self.value(*x).shape()[0];
                let d = dy.len();
                let mut dx = vec![0.0; n * d];
                for t in 0..n {
                    for j in 0..d {
                        dx[t * d + j] = dy[j] / n as f64;
                    }
                }
                self.accum(*x, &dx);
            }
            Op::LastRow { x, out } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let n = self.value(*x).shape()[0];
                let d = dy.len();
                let mut dx = vec![0.0; n * d];
                dx[(n - 1) * d..].copy_from_slice(&dy);
                self.accum(*x, &dx);
            }
            Op::MaxRows { x, out, argmax } => {
                let Some(dy) = self.node_grads[*out].clone() else { return };
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, &g) in argmax.iter().zip(&dy) {
                    dx[src] += g;
                }
                self.accum(*x, &dx);
            }
            Op::Mse { pred, target, out } => {
                let Some(dl) = self.node_grads[*out].clone() else { return };
                let p = self.value(*pred).values().to_vec();
                let n = p.len() as f64;
                let dx: Vec<f64> = p
                    .iter()
                    .zip(target.values())
                    .map(|(&a, &b)| dl[0] * 2.0 * (a - b) / n)
                    .collect();
                self.accum(*pred, &dx);
            }
            Op::CrossEntropy { logits, labels, out, probs } => {
                let Some(dl) = self.node_grads[*out].clone() else { return };
                let n = labels.len();
                let k = probs.len() / n;
                let mut dx = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * k + l] -= 1.0;
                }
                for v in &mut dx {
                    *v *= dl[0] / n as f64;
                }
                self.accum(*logits, &dx);
            }
            Op::SquaredNorm { x, coeff, out } => {
                let Some(dl) = self.node_grads[*out].clone() else { return };
                let dx: Vec<f64> =
                    self.value(*x).values().iter().map(|&v| dl[0] * 2.0 * coeff * v).collect();
                self.accum(*x, &dx);
            }
            Op::AddScalars { a, b, out } => {
                let Some(dl) = self.node_grads[*out].clone() else { return };
                self.accum(*a, &dl);
                self.accum(*b, &dl);
            }
            Op::Project { x, weights, out } => {
                let Some(dl) = self.node_grads[*out].clone() else { return };
                let dx: Vec<f64> = weights.iter().map(|&w| dl[0] * w).collect();
                self.accum(*x, &dx);
            }
        }
    }

    /// Smallest distance to a ReLU or pooling kink seen during the forward
    /// pass: min |pre-activation| over ReLU units and min pair gap over max
    /// pools. Infinite when the graph has no kinked op. Finite-difference
    /// checks resample their inputs while this is below the step size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for op in &self.ops {
            match op {
                Op::Dense { act: Activation::Relu, preact, .. } => {
                    for &z in preact {
                        margin = margin.min(z.abs());
                    }
                }
                Op::Relu { x, .. } => {
                    for &v in self.value(*x).values() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool { x, .. } => {
                    let t = self.value(*x);
                    let f = t.shape()[1];
                    let xv = t.values();
                    for t2 in 0..t.shape()[0] / 2 {
                        for j in 0..f {
                            let gap = (xv[2 * t2 * f + j] - xv[(2 * t2 + 1) * f + j]).abs();
                            margin = margin.min(gap);
                        }
                    }
                }
                Op::MaxRows { x, out, argmax } => {
                    let t = self.value(*x);
                    let d = t.shape()[1];
                    let xv = t.values();
                    let yv = self.nodes[*out].values();
                    for (j, (&src, &best)) in argmax.iter().zip(yv).enumerate() {
                        for r in 0..t.shape()[0] {
                            let idx = r * d + j;
                            if idx != src {
                                margin = margin.min((best - xv[idx]).abs());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Per-row softmax VJP: dx_row = y ∘ (dy − ⟨dy, y⟩).
fn softmax_backward(dy: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    for r in 0..dy.len() / cols {
        let base = r * cols;
        let dot: f64 =
            dy[base..base + cols].iter().zip(&y[base..base + cols]).map(|(a, b)| a * b).sum();
        for c in 0..cols {
            dx[base + c] = y[base + c] * (dy[base + c] - dot);
        }
    }
    dx
}

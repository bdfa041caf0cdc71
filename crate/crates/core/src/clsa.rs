//! CNN-LSTM-self-attention classifier over embedded token sequences.
//!
//! Pipeline per sequence: embedding lookup → Conv1D(k=3, ReLU) → BatchNorm →
//! MaxPool(2) → Dropout(0.2) → LSTM → self-attention on the hidden states →
//! temporal pooling into a context vector → Dense(64, ReLU) → Dense(32,
//! ReLU) → Dense(5) → softmax. The embedding rows come from the temporal
//! autoencoder and are frozen unless fine-tuning is requested; training adds
//! an L2 penalty on the LSTM input kernel.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NUM_CLASSES};
use crate::engine::ops::{mix_seed, sigmoid};
use crate::engine::{
    glorot_uniform, Activation, AdamState, Mode, ParamSet, RunningStats, Src, Tape, Tensor,
};
use crate::error::{Error, Result};
use crate::preprocess::TokenSequence;
use crate::store::Container;

/// Shortest token sequence the stack accepts.
pub const MIN_SEQUENCE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionPool {
    Mean,
    Last,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
    /// Multi-label reading of the output layer; probabilities are per-class
    /// sigmoids and no longer sum to one.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClsaConfig {
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub lstm_units: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub dropout_rate: f64,
    /// L2 coefficient on the LSTM input kernel.
    pub l2_kernel: f64,
    /// Learnable W_Q/W_K/W_V projections instead of raw query-equals-key.
    pub attention_projections: bool,
    pub attention_pool: AttentionPool,
    pub output_activation: OutputActivation,
    pub finetune_embedding: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub batch_size: usize,
}

impl Default for ClsaConfig {
    fn default() -> Self {
        ClsaConfig {
            embed_dim: 6,
            conv_filters: 512,
            kernel_size: 3,
            lstm_units: 256,
            dense1: 64,
            dense2: 32,
            dropout_rate: 0.2,
            l2_kernel: 0.2,
            attention_projections: false,
            attention_pool: AttentionPool::Mean,
            output_activation: OutputActivation::Softmax,
            finetune_embedding: false,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClsaModel {
    pub config: ClsaConfig,
    /// Includes the `embedding` table, trainable iff `finetune_embedding`.
    pub params: ParamSet,
    pub bn_stats: RunningStats,
}

/// Classifier output: class probabilities, the winning class (ties break to
/// the lowest class id), and the attention map for inspection.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub argmax: ClassLabel,
    pub attention: Tensor,
}

impl ClsaModel {
    /// Install the embedding matrix as weights and initialize the remaining
    /// layers (Glorot-uniform weights, zero biases, unit batch-norm gain).
    pub fn init(embedding: Tensor, config: ClsaConfig, seed: u64) -> Result<Self> {
        if embedding.shape().len() != 2 || embedding.shape()[1] != config.embed_dim {
            return Err(Error::dim("clsa_init", embedding.shape(), &[config.embed_dim]));
        }
        let (k, d, f, h) =
            (config.kernel_size, config.embed_dim, config.conv_filters, config.lstm_units);
        // stream tag 11 = clsa init
        let mut rng = crate::engine::ops::derive_rng(seed, &[11]);
        let mut params = ParamSet::new();
        params.insert("embedding", embedding, config.finetune_embedding)?;
        params.insert("conv.w", glorot_uniform(k * d, k * f, vec![k, d, f], &mut rng), true)?;
        params.insert("conv.b", Tensor::zeros(vec![f]), true)?;
        params.insert("bn.gamma", Tensor::filled(vec![f], 1.0), true)?;
        params.insert("bn.beta", Tensor::zeros(vec![f]), true)?;
        params.insert("lstm.wx", glorot_uniform(f, 4 * h, vec![f, 4 * h], &mut rng), true)?;
        params.insert("lstm.wh", glorot_uniform(h, 4 * h, vec![h, 4 * h], &mut rng), true)?;
        params.insert("lstm.b", Tensor::zeros(vec![4 * h]), true)?;
        if config.attention_projections {
            for name in ["attn.wq", "attn.wk", "attn.wv"] {
                params.insert(name, glorot_uniform(h, h, vec![h, h], &mut rng), true)?;
            }
        }
        params.insert("dense1.w", glorot_uniform(h, config.dense1, vec![h, config.dense1], &mut rng), true)?;
        params.insert("dense1.b", Tensor::zeros(vec![config.dense1]), true)?;
        params.insert(
            "dense2.w",
            glorot_uniform(config.dense1, config.dense2, vec![config.dense1, config.dense2], &mut rng),
            true,
        )?;
        params.insert("dense2.b", Tensor::zeros(vec![config.dense2]), true)?;
        params.insert(
            "out.w",
            glorot_uniform(config.dense2, NUM_CLASSES, vec![config.dense2, NUM_CLASSES], &mut rng),
            true,
        )?;
        params.insert("out.b", Tensor::zeros(vec![NUM_CLASSES]), true)?;
        let bn_stats = RunningStats::new(f, config.bn_momentum);
        Ok(ClsaModel { config, params, bn_stats })
    }

    pub fn embedding(&self) -> &Tensor {
        &self.params.get("embedding").expect("embedding param").value
    }

    pub fn vocab_len(&self) -> usize {
        self.embedding().shape()[0]
    }

    /// Exact per-layer parameter counts (batch-norm running statistics are
    /// state, not parameters, and are excluded).
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (name, p) in self.params.iter() {
            let layer = name.split('.').next().unwrap_or(name).to_string();
            match groups.iter_mut().find(|(g, _)| *g == layer) {
                Some((_, n)) => *n += p.value.numel(),
                None => groups.push((layer, p.value.numel())),
            }
        }
        groups
    }

    pub fn total_params(&self) -> usize {
        self.params.total_len()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new("clsa", serde_json::to_value(&self.config).unwrap());
        self.put_entries(&mut c, "")?;
        Ok(c)
    }

    pub(crate) fn put_entries(&self, c: &mut Container, prefix: &str) -> Result<()> {
        for (name, p) in self.params.iter() {
            c.put_tensor(&format!("{prefix}{name}"), &p.value)?;
        }
        let f = self.bn_stats.mean.len();
        c.put_f64(&format!("{prefix}bn.running_mean"), vec![f], self.bn_stats.mean.clone())?;
        c.put_f64(&format!("{prefix}bn.running_var"), vec![f], self.bn_stats.var.clone())?;
        Ok(())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "clsa" {
            return Err(Error::Data(format!("expected clsa container, found {}", c.kind)));
        }
        let config: ClsaConfig = serde_json::from_value(c.config.clone())
            .map_err(|e| Error::Data(format!("bad clsa config: {e}")))?;
        Self::from_entries(config, c, "")
    }

    pub(crate) fn from_entries(config: ClsaConfig, c: &Container, prefix: &str) -> Result<Self> {
        let embedding = c.tensor(&format!("{prefix}embedding"))?;
        let mut model = ClsaModel::init(embedding, config, 0)?;
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in names {
            if name == "embedding" {
                continue;
            }
            let stored = c.tensor(&format!("{prefix}{name}"))?;
            let p = model.params.get_mut(&name).expect("initialized above");
            if stored.shape() != p.value.shape() {
                return Err(Error::dim("clsa load", stored.shape(), p.value.shape()));
            }
            p.value = stored;
        }
        model.bn_stats.mean = c.f64_entry(&format!("{prefix}bn.running_mean"))?.1.to_vec();
        model.bn_stats.var = c.f64_entry(&format!("{prefix}bn.running_var"))?.1.to_vec();
        Ok(model)
    }
}

/// Stage-by-stage output shapes of one forward pass.
pub type ShapeTrace = Vec<(&'static str, Vec<usize>)>;

struct ForwardOutput {
    logits: Src,
    attention: Tensor,
    trace: ShapeTrace,
}

/// Record the full stack on `tape`. `ext_table`, when given, replaces the
/// embedding parameter as the lookup table (base rows plus rows for tokens
/// outside the stored vocabulary).
fn forward_on_tape<'p>(
    tape: &mut Tape<'p>,
    params_check: &ClsaConfig,
    ids: &[u32],
    ext_table: Option<&'p Tensor>,
    mode: Mode,
    dropout_seed: u64,
    bn_stats: &mut RunningStats,
) -> Result<ForwardOutput> {
    let config = params_check;
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    if ids.len() < MIN_SEQUENCE {
        return Err(Error::SequenceTooShort { needed: MIN_SEQUENCE, got: ids.len() });
    }
    let mut trace = ShapeTrace::new();
    let table = match ext_table {
        Some(t) => tape.input_ref(t),
        None => tape.param("embedding")?,
    };
    let x = tape.embedding(table, ids)?;
    trace.push(("embedding", tape.value(x).shape().to_vec()));

    let conv_w = tape.param("conv.w")?;
    let conv_b = tape.param("conv.b")?;
    let mut hsrc = tape.conv1d(x, conv_w, conv_b)?;
    hsrc = tape.relu(hsrc)?;
    trace.push(("conv", tape.value(hsrc).shape().to_vec()));

    let gamma = tape.param("bn.gamma")?;
    let beta = tape.param("bn.beta")?;
    hsrc = tape.batchnorm1d(hsrc, gamma, beta, config.bn_eps, mode, bn_stats)?;
    trace.push(("batchnorm", tape.value(hsrc).shape().to_vec()));

    hsrc = tape.maxpool1d(hsrc)?;
    trace.push(("maxpool", tape.value(hsrc).shape().to_vec()));

    hsrc = tape.dropout(hsrc, config.dropout_rate, mode, dropout_seed)?;

    let wx = tape.param("lstm.wx")?;
    let wh = tape.param("lstm.wh")?;
    let lb = tape.param("lstm.b")?;
    hsrc = tape.lstm(hsrc, wx, wh, lb)?;
    trace.push(("lstm", tape.value(hsrc).shape().to_vec()));

    let (z, attention) = if config.attention_projections {
        let wq = tape.param("attn.wq")?;
        let wk = tape.param("attn.wk")?;
        let wv = tape.param("attn.wv")?;
        tape.self_attention_proj(hsrc, wq, wk, wv)?
    } else {
        tape.self_attention(hsrc)?
    };
    trace.push(("attention", tape.value(z).shape().to_vec()));

    let ctx = match config.attention_pool {
        AttentionPool::Mean => tape.mean_rows(z)?,
        AttentionPool::Last => tape.last_row(z)?,
        AttentionPool::Max => tape.max_rows(z)?,
    };
    trace.push(("context", tape.value(ctx).shape().to_vec()));

    let d1w = tape.param("dense1.w")?;
    let d1b = tape.param("dense1.b")?;
    let mut d = tape.dense(ctx, d1w, d1b, Activation::Relu)?;
    trace.push(("dense1", tape.value(d).shape().to_vec()));
    let d2w = tape.param("dense2.w")?;
    let d2b = tape.param("dense2.b")?;
    d = tape.dense(d, d2w, d2b, Activation::Relu)?;
    trace.push(("dense2", tape.value(d).shape().to_vec()));
    let ow = tape.param("out.w")?;
    let ob = tape.param("out.b")?;
    let logits = tape.dense(d, ow, ob, Activation::Linear)?;
    trace.push(("logits", tape.value(logits).shape().to_vec()));

    Ok(ForwardOutput { logits, attention, trace })
}

/// Train-mode forward for the gradient-check suite; returns the logits node.
pub(crate) fn train_forward_for_check<'p>(
    tape: &mut Tape<'p>,
    config: &ClsaConfig,
    ids: &[u32],
    dropout_seed: u64,
    stats: &mut RunningStats,
) -> Result<Src> {
    let out = forward_on_tape(tape, config, ids, None, Mode::Train, dropout_seed, stats)?;
    Ok(out.logits)
}

fn prediction_from_logits(logits: &[f64], config: &ClsaConfig, attention: Tensor) -> Prediction {
    let probabilities = match config.output_activation {
        OutputActivation::Softmax => {
            let mut p = logits.to_vec();
            let n = p.len();
            crate::engine::ops::softmax_rows_inplace(&mut p, 1, n);
            p
        }
        OutputActivation::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
    };
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    let argmax = ClassLabel::from_index(best).expect("output width is NUM_CLASSES");
    Prediction { probabilities, argmax, attention }
}

/// Run one sequence through the stack. Train mode uses batch statistics and
/// a fixed dropout mask (seed 0) but never mutates the model.
pub fn clsa_forward(seq: &TokenSequence, model: &ClsaModel, mode: Mode) -> Result<Prediction> {
    forward_ids(&seq.ids, model, None, mode, 0)
}

fn forward_ids(
    ids: &[u32],
    model: &ClsaModel,
    ext_table: Option<&Tensor>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<Prediction> {
    let mut stats = model.bn_stats.clone();
    let mut tape = Tape::new(&model.params);
    let out =
        forward_on_tape(&mut tape, &model.config, ids, ext_table, mode, dropout_seed, &mut stats)?;
    let logits = tape.value(out.logits).values().to_vec();
    Ok(prediction_from_logits(&logits, &model.config, out.attention))
}

/// Forward pass that also reports every stage's output shape.
pub fn clsa_forward_trace(seq: &TokenSequence, model: &ClsaModel) -> Result<(Prediction, ShapeTrace)> {
    let mut stats = model.bn_stats.clone();
    let mut tape = Tape::new(&model.params);
    let out =
        forward_on_tape(&mut tape, &model.config, &seq.ids, None, Mode::Infer, 0, &mut stats)?;
    let logits = tape.value(out.logits).values().to_vec();
    Ok((prediction_from_logits(&logits, &model.config, out.attention), out.trace))
}

/// The model's embedding rows followed by `ext` rows, or None when there is
/// nothing to extend with.
fn full_table(model: &ClsaModel, ext: Option<&Tensor>) -> Result<Option<Tensor>> {
    let Some(e) = ext else { return Ok(None) };
    if e.shape().len() != 2 || e.shape()[1] != model.config.embed_dim {
        return Err(Error::dim("embedding extension", e.shape(), &[model.config.embed_dim]));
    }
    let base = model.embedding();
    let mut vals = base.values().to_vec();
    vals.extend_from_slice(e.values());
    Ok(Some(Tensor::new(vec![base.shape()[0] + e.shape()[0], model.config.embed_dim], vals)?))
}

/// Order-preserving batch inference; equals per-item [`clsa_forward`] in
/// infer mode. `ext_rows`, when given, holds embedding rows for token ids
/// beyond the stored vocabulary, in id order.
pub fn clsa_predict_batch(
    seqs: &[TokenSequence],
    model: &ClsaModel,
    ext_rows: Option<&Tensor>,
) -> Result<Vec<Prediction>> {
    let table = full_table(model, ext_rows)?;
    let table_rows = table.as_ref().map_or(model.vocab_len(), |t| t.shape()[0]);
    let mut out = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if let Some(&bad) = seq.ids.iter().find(|&&id| id as usize >= table_rows) {
            return Err(Error::Vocabulary(format!(
                "sequence {}: token id {bad} outside table of {table_rows} rows",
                seq.record_id
            )));
        }
        out.push(forward_ids(&seq.ids, model, table.as_ref(), Mode::Infer, 0)?);
    }
    Ok(out)
}

/// Per-epoch training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub struct ClsaTrainOutcome {
    pub curves: Vec<EpochStats>,
    /// Epoch whose validation loss the retained parameters come from.
    pub best_epoch: usize,
}

/// Cross-entropy plus the LSTM-kernel L2 penalty over a labeled set, in
/// infer mode, with the current parameters.
fn evaluate_set(
    model: &ClsaModel,
    data: &[(TokenSequence, ClassLabel)],
    ext_rows: Option<&Tensor>,
) -> Result<(f64, f64)> {
    let table = full_table(model, ext_rows)?;
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for (seq, label) in data {
        let mut stats = model.bn_stats.clone();
        let mut tape = Tape::new(&model.params);
        let out = forward_on_tape(
            &mut tape,
            &model.config,
            &seq.ids,
            table.as_ref(),
            Mode::Infer,
            0,
            &mut stats,
        )?;
        let ce = tape.cross_entropy(out.logits, &[label.index()])?;
        loss_sum += tape.value(ce).values()[0];
        let logits = tape.value(out.logits).values();
        let best = (0..logits.len()).max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a))).unwrap();
        if best == label.index() {
            hits += 1;
        }
    }
    let wx = model.params.value("lstm.wx")?;
    let penalty = model.config.l2_kernel * wx.values().iter().map(|v| v * v).sum::<f64>();
    let n = data.len() as f64;
    Ok((loss_sum / n + penalty, hits as f64 / n))
}

/// Train with Adam on mini-batches of sequences. Loss is the batch-mean
/// cross-entropy plus `l2_kernel`·‖lstm.wx‖². The parameters (and batch-norm
/// statistics) retained at the end are those of the best-validation-loss
/// epoch. `val_ext` holds embedding rows for validation tokens outside the
/// stored vocabulary; those rows are constant and never trained.
pub fn clsa_train(
    model: &mut ClsaModel,
    train: &[(TokenSequence, ClassLabel)],
    val: &[(TokenSequence, ClassLabel)],
    val_ext: Option<&Tensor>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ClsaTrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("empty train or val split".into()));
    }
    let mut adam = AdamState::new(lr);
    let mut curves = Vec::with_capacity(epochs);
    let mut best: Option<(f64, usize, ParamSet, RunningStats)> = None;
    let batch_size = model.config.batch_size.max(1);
    let l2 = model.config.l2_kernel;

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        // stream tag 20 = clsa epoch shuffle
        let mut rng = crate::engine::ops::derive_rng(seed, &[20, epoch as u64]);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            model.params.zero_grads();
            let mut batch_ce = 0.0;
            for (j, &i) in chunk.iter().enumerate() {
                let (seq, label) = &train[i];
                // stream tag 21 = dropout masks
                let dropout_seed =
                    mix_seed(seed, &[21, epoch as u64, batch_idx as u64, j as u64]);
                let mut tape = Tape::new(&model.params);
                let out = forward_on_tape(
                    &mut tape,
                    &model.config,
                    &seq.ids,
                    None,
                    Mode::Train,
                    dropout_seed,
                    &mut model.bn_stats,
                )?;
                let logits = tape.value(out.logits).values().to_vec();
                let best_class = (0..logits.len())
                    .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
                    .unwrap();
                if best_class == label.index() {
                    hits += 1;
                }
                let ce = tape.cross_entropy(out.logits, &[label.index()])?;
                batch_ce += tape.value(ce).values()[0];
                tape.backward(ce)?;
                let grads = tape.take_param_grads();
                drop(tape);
                model.params.accumulate_grads(&grads, 1.0 / chunk.len() as f64)?;
            }
            // L2 penalty gradient on the LSTM input kernel: d(l2·Σw²) = 2·l2·w
            let wx_grad: Vec<f64> = {
                let wx = model.params.value("lstm.wx")?;
                wx.values().iter().map(|&v| 2.0 * l2 * v).collect()
            };
            let penalty = {
                let wx = model.params.value("lstm.wx")?;
                l2 * wx.values().iter().map(|v| v * v).sum::<f64>()
            };
            model
                .params
                .get_mut("lstm.wx")
                .expect("lstm kernel")
                .value
                .accumulate_grad(&wx_grad, 1.0)?;
            adam.step(&mut model.params)?;
            loss_sum += (batch_ce / chunk.len() as f64 + penalty) * chunk.len() as f64;
        }

        let (val_loss, val_acc) = evaluate_set(model, val, val_ext)?;
        curves.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            train_acc: hits as f64 / train.len() as f64,
            val_acc,
        });
        if best.as_ref().map_or(true, |(b, _, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.params.clone(), model.bn_stats.clone()));
        }
    }

    let (_, best_epoch, best_params, best_stats) = best.expect("at least one epoch ran");
    model.params = best_params;
    model.params.clear_grads();
    model.bn_stats = best_stats;
    Ok(ClsaTrainOutcome { curves, best_epoch })
}

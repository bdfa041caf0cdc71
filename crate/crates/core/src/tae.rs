//! Temporal autoencoder: a five-layer dense stack (12→12→8→latent→8→12)
//! trained to predict each timestamp's 12-channel instant from the mean of
//! its window context, with MSE loss. The pair corpus is split into two
//! halves trained sequentially with a checkpoint/reload between them, and
//! the trained encoder supplies the rows of the classifier's embedding
//! matrix.

use serde::{Deserialize, Serialize};

use crate::engine::ops::derive_rng;
use crate::engine::{glorot_uniform, Activation, AdamState, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::preprocess::{ContextTargetPair, Vocabulary};
use crate::store::Container;

pub const INPUT_WIDTH: usize = 12;
pub const DEFAULT_LATENT: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaeConfig {
    pub latent_dim: usize,
    /// Train target→target instead of context-mean→target.
    pub identity_ae: bool,
    /// Add a sixth 12→12 output layer after the second decoder layer.
    pub extra_output_layer: bool,
    /// ReLU on the reconstruction layer. Off by default: a rectified output
    /// cannot emit negative millivolts, and with zero-bias init any output
    /// unit whose pre-activation starts negative on the whole corpus never
    /// receives gradient, leaving reconstruction stuck at a dead-unit floor.
    pub relu_output: bool,
    pub batch_size: usize,
    /// Early-stopping patience on validation MSE.
    pub patience: usize,
}

impl Default for TaeConfig {
    fn default() -> Self {
        TaeConfig {
            latent_dim: DEFAULT_LATENT,
            identity_ae: false,
            extra_output_layer: false,
            relu_output: false,
            batch_size: 256,
            patience: 5,
        }
    }
}

type LayerSpec = (&'static str, usize, usize, Activation);

fn layer_specs(config: &TaeConfig) -> Vec<LayerSpec> {
    let l = config.latent_dim;
    let out_act = if config.relu_output { Activation::Relu } else { Activation::Linear };
    let mut specs = vec![
        ("enc1", INPUT_WIDTH, 12, Activation::Relu),
        ("enc2", 12, 8, Activation::Relu),
        ("latent", 8, l, Activation::Linear),
        ("dec1", l, 8, Activation::Relu),
        ("dec2", 8, INPUT_WIDTH, out_act),
    ];
    if config.extra_output_layer {
        // the reconstruction activation moves to the added layer
        specs[4].3 = Activation::Relu;
        specs.push(("out", INPUT_WIDTH, INPUT_WIDTH, out_act));
    }
    specs
}

/// Number of encoder layers (input through bottleneck).
const ENCODER_LAYERS: usize = 3;

#[derive(Debug, Clone)]
pub struct TaeModel {
    pub config: TaeConfig,
    pub params: ParamSet,
}

impl TaeModel {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(config: TaeConfig, seed: u64) -> Result<Self> {
        if config.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        // stream tag 10 = tae init
        let mut rng = derive_rng(seed, &[10]);
        let mut params = ParamSet::new();
        for (name, d_in, d_out, _) in layer_specs(&config) {
            let w = glorot_uniform(d_in, d_out, vec![d_in, d_out], &mut rng);
            params.insert(&format!("{name}.w"), w, true)?;
            params.insert(&format!("{name}.b"), Tensor::zeros(vec![d_out]), true)?;
        }
        Ok(TaeModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    fn run_layers(&self, x: &Tensor, layers: usize) -> Result<Tensor> {
        if x.cols() != INPUT_WIDTH {
            return Err(Error::dim("tae input", x.shape(), &[INPUT_WIDTH]));
        }
        let mut tape = Tape::new(&self.params);
        let mut h = tape.input(x.clone());
        for (name, _, _, act) in layer_specs(&self.config).into_iter().take(layers) {
            let w = tape.param(&format!("{name}.w"))?;
            let b = tape.param(&format!("{name}.b"))?;
            h = tape.dense(h, w, b, act)?;
        }
        Ok(tape.value(h).clone())
    }

    /// Compress a [n,12] batch (or a single [12] vector) to latent codes.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.run_layers(x, ENCODER_LAYERS)
    }

    pub fn encode_instant(&self, instant: &[f64; INPUT_WIDTH]) -> Result<Vec<f64>> {
        let x = Tensor::new(vec![INPUT_WIDTH], instant.to_vec())?;
        Ok(self.encode(&x)?.into_values())
    }

    /// Full encoder-decoder reconstruction.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.run_layers(x, layer_specs(&self.config).len())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new("tae", serde_json::to_value(&self.config).unwrap());
        for (name, p) in self.params.iter() {
            c.put_tensor(name, &p.value)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "tae" {
            return Err(Error::Data(format!("expected tae container, found {}", c.kind)));
        }
        let config: TaeConfig = serde_json::from_value(c.config.clone())
            .map_err(|e| Error::Data(format!("bad tae config: {e}")))?;
        Self::from_entries(config, c, "")
    }

    /// Rebuild from container entries under a name prefix.
    pub(crate) fn from_entries(config: TaeConfig, c: &Container, prefix: &str) -> Result<Self> {
        let mut params = ParamSet::new();
        for (name, d_in, d_out, _) in layer_specs(&config) {
            let w = c.tensor(&format!("{prefix}{name}.w"))?;
            if w.shape() != [d_in, d_out] {
                return Err(Error::dim("tae load", w.shape(), &[d_in, d_out]));
            }
            params.insert(&format!("{name}.w"), w, true)?;
            params.insert(&format!("{name}.b"), c.tensor(&format!("{prefix}{name}.b"))?, true)?;
        }
        Ok(TaeModel { config, params })
    }

    pub(crate) fn put_entries(&self, c: &mut Container, prefix: &str) -> Result<()> {
        for (name, p) in self.params.iter() {
            c.put_tensor(&format!("{prefix}{name}"), &p.value)?;
        }
        Ok(())
    }
}

/// Row j of the embedding matrix is the encoded vocabulary entry j.
pub fn build_embedding_matrix(vocab: &Vocabulary, model: &TaeModel) -> Result<Tensor> {
    if vocab.is_empty() {
        return Err(Error::Data("cannot build embedding from an empty vocabulary".into()));
    }
    let mut values = Vec::with_capacity(vocab.len() * INPUT_WIDTH);
    for rep in vocab.reps() {
        values.extend_from_slice(rep);
    }
    let x = Tensor::new(vec![vocab.len(), INPUT_WIDTH], values)?;
    model.encode(&x)
}

/// Per-half training curves and outcome flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// 1 or 2.
    pub batch_index: usize,
    /// Validation MSE of the model as it entered this half (epoch 0).
    pub initial_val_mse: f64,
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub test_mse: f64,
    pub epochs_run: usize,
    /// Set when some epoch's val MSE exceeded 1.1x the best seen so far.
    pub regression_flag: bool,
    /// Set when train MSE was not strictly decreasing over the first 5 epochs.
    pub nondecreasing_flag: bool,
}

/// (input, target) rows for one split portion.
struct PairMatrix {
    x: Vec<[f64; INPUT_WIDTH]>,
    y: Vec<[f64; INPUT_WIDTH]>,
}

impl PairMatrix {
    fn from_pairs(pairs: &[&ContextTargetPair], identity_ae: bool) -> Self {
        let x = pairs
            .iter()
            .map(|p| if identity_ae { p.target } else { p.context_mean })
            .collect();
        let y = pairs.iter().map(|p| p.target).collect();
        PairMatrix { x, y }
    }

    fn len(&self) -> usize {
        self.x.len()
    }

    fn tensors(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let mut xv = Vec::with_capacity(idx.len() * INPUT_WIDTH);
        let mut yv = Vec::with_capacity(idx.len() * INPUT_WIDTH);
        for &i in idx {
            xv.extend_from_slice(&self.x[i]);
            yv.extend_from_slice(&self.y[i]);
        }
        (
            Tensor::new(vec![idx.len(), INPUT_WIDTH], xv).expect("shape"),
            Tensor::new(vec![idx.len(), INPUT_WIDTH], yv).expect("shape"),
        )
    }

    fn all_tensors(&self) -> (Tensor, Tensor) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.tensors(&idx)
    }
}

/// One half's train/val/test pair matrices (80-10-10 by position).
struct HalfData {
    train: PairMatrix,
    val: PairMatrix,
    test: PairMatrix,
}

impl HalfData {
    fn new(pairs: &[&ContextTargetPair], identity_ae: bool) -> Result<Self> {
        let n = pairs.len();
        if n < 3 {
            return Err(Error::Data(format!("half with {n} pairs cannot be split 80-10-10")));
        }
        let n_train = ((0.8 * n as f64).round() as usize).clamp(1, n - 2);
        let n_val = ((0.1 * n as f64).round() as usize).clamp(1, n - n_train - 1);
        let identity = identity_ae;
        Ok(HalfData {
            train: PairMatrix::from_pairs(&pairs[..n_train], identity),
            val: PairMatrix::from_pairs(&pairs[n_train..n_train + n_val], identity),
            test: PairMatrix::from_pairs(&pairs[n_train + n_val..], identity),
        })
    }
}

/// Incremental trainer whose whole state (parameters, Adam moments, epoch
/// counters, early-stop bookkeeping) round-trips through a container, so a
/// resumed run is step-for-step identical to an uninterrupted one.
pub struct TaeTrainer {
    pub model: TaeModel,
    pub adam: AdamState,
    pub seed: u64,
    pub batch_index: usize,
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub since_best: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    config: TaeConfig,
    adam_hyper: (f64, f64, f64, f64),
    adam_t: u64,
    seed: u64,
    batch_index: usize,
    epoch: usize,
    best_val: Option<f64>,
    since_best: usize,
}

impl TaeTrainer {
    pub fn new(model: TaeModel, lr: f64, seed: u64, batch_index: usize) -> Self {
        TaeTrainer {
            model,
            adam: AdamState::new(lr),
            seed,
            batch_index,
            epoch: 0,
            best_val: None,
            since_best: 0,
        }
    }

    /// Start a new protocol half: epoch and early-stop state reset, Adam
    /// moments carry over.
    pub fn next_half(&mut self) {
        self.batch_index += 1;
        self.epoch = 0;
        self.best_val = None;
        self.since_best = 0;
    }

    fn mse_on(&self, m: &PairMatrix) -> Result<f64> {
        let (x, y) = m.all_tensors();
        let mut tape = Tape::new(&self.model.params);
        let mut h = tape.input(x);
        for (name, _, _, act) in layer_specs(&self.model.config) {
            let w = tape.param(&format!("{name}.w"))?;
            let b = tape.param(&format!("{name}.b"))?;
            h = tape.dense(h, w, b, act)?;
        }
        let loss = tape.mse_loss(h, &y)?;
        Ok(tape.value(loss).values()[0])
    }

    /// One epoch over the train portion; returns (train MSE, val MSE).
    fn step_epoch(&mut self, data: &HalfData) -> Result<(f64, f64)> {
        let n = data.train.len();
        let mut idx: Vec<usize> = (0..n).collect();
        // stream tag 4 = tae epoch shuffle
        let mut rng =
            derive_rng(self.seed, &[4, self.batch_index as u64, self.epoch as u64]);
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in idx.chunks(self.model.config.batch_size) {
            let (x, y) = data.train.tensors(chunk);
            let mut tape = Tape::new(&self.model.params);
            let mut h = tape.input(x);
            for (name, _, _, act) in layer_specs(&self.model.config) {
                let w = tape.param(&format!("{name}.w"))?;
                let b = tape.param(&format!("{name}.b"))?;
                h = tape.dense(h, w, b, act)?;
            }
            let loss = tape.mse_loss(h, &y)?;
            loss_sum += tape.value(loss).values()[0] * chunk.len() as f64;
            tape.backward(loss)?;
            let grads = tape.take_param_grads();
            drop(tape);
            self.model.params.zero_grads();
            self.model.params.accumulate_grads(&grads, 1.0)?;
            self.adam.step(&mut self.model.params)?;
        }
        self.epoch += 1;
        Ok((loss_sum / n as f64, self.mse_on(&data.val)?))
    }

    /// Train until `max_epochs` or early stop (patience on val MSE).
    fn run(&mut self, data: &HalfData, max_epochs: usize) -> Result<TrainReport> {
        let initial_val_mse = self.mse_on(&data.val)?;
        let mut train_curve = Vec::new();
        let mut val_curve = Vec::new();
        let mut regression_flag = false;
        let patience = self.model.config.patience;
        while self.epoch < max_epochs {
            let (train_mse, val_mse) = self.step_epoch(data)?;
            train_curve.push(train_mse);
            val_curve.push(val_mse);
            match self.best_val {
                Some(best) if val_mse >= best => {
                    if val_mse > 1.1 * best {
                        regression_flag = true;
                    }
                    self.since_best += 1;
                    if self.since_best >= patience {
                        break;
                    }
                }
                _ => {
                    self.best_val = Some(val_mse);
                    self.since_best = 0;
                }
            }
        }
        let first5 = &train_curve[..train_curve.len().min(5)];
        let nondecreasing_flag = first5.windows(2).any(|w| w[1] >= w[0]);
        Ok(TrainReport {
            batch_index: self.batch_index,
            initial_val_mse,
            epochs_run: train_curve.len(),
            test_mse: self.mse_on(&data.test)?,
            train_mse: train_curve,
            val_mse: val_curve,
            regression_flag,
            nondecreasing_flag,
        })
    }

    /// Run exactly `n` more epochs on a fixed positional 80-10-10 split of
    /// `pairs`, without early stopping. Epoch shuffling derives from the
    /// stored (seed, batch index, epoch) triple, so a trainer restored from
    /// a checkpoint continues step-for-step identically.
    pub fn run_epochs(
        &mut self,
        pairs: &[ContextTargetPair],
        n: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let refs: Vec<&ContextTargetPair> = pairs.iter().collect();
        let data = HalfData::new(&refs, self.model.config.identity_ae)?;
        let mut curve = Vec::with_capacity(n);
        for _ in 0..n {
            curve.push(self.step_epoch(&data)?);
        }
        Ok(curve)
    }

    pub fn to_container(&self) -> Result<Container> {
        let state = TrainerState {
            config: self.model.config.clone(),
            adam_hyper: (self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.epsilon),
            adam_t: self.adam.t,
            seed: self.seed,
            batch_index: self.batch_index,
            epoch: self.epoch,
            best_val: self.best_val,
            since_best: self.since_best,
        };
        let mut c = Container::new("tae-trainer", serde_json::to_value(&state).unwrap());
        self.model.put_entries(&mut c, "")?;
        for (name, m) in &self.adam.m {
            c.put_f64(&format!("adam.m.{name}"), vec![m.len()], m.clone())?;
        }
        for (name, v) in &self.adam.v {
            c.put_f64(&format!("adam.v.{name}"), vec![v.len()], v.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "tae-trainer" {
            return Err(Error::Data(format!("expected tae-trainer container, found {}", c.kind)));
        }
        let state: TrainerState = serde_json::from_value(c.config.clone())
            .map_err(|e| Error::Data(format!("bad trainer state: {e}")))?;
        let model = TaeModel::from_entries(state.config, c, "")?;
        let mut adam = AdamState::new(state.adam_hyper.0);
        adam.beta1 = state.adam_hyper.1;
        adam.beta2 = state.adam_hyper.2;
        adam.epsilon = state.adam_hyper.3;
        adam.t = state.adam_t;
        for name in model.params.names() {
            if c.contains(&format!("adam.m.{name}")) {
                adam.m.insert(name.to_string(), c.f64_entry(&format!("adam.m.{name}"))?.1.to_vec());
                adam.v.insert(name.to_string(), c.f64_entry(&format!("adam.v.{name}"))?.1.to_vec());
            }
        }
        Ok(TaeTrainer {
            model,
            adam,
            seed: state.seed,
            batch_index: state.batch_index,
            epoch: state.epoch,
            best_val: state.best_val,
            since_best: state.since_best,
        })
    }
}

/// Outcome of the two-batch protocol.
pub struct TwoBatchOutcome {
    pub model: TaeModel,
    pub reports: [TrainReport; 2],
    /// The mid-protocol checkpoint taken between the halves.
    pub checkpoint: Container,
}

/// Train on two sequential halves of the shuffled pair corpus, each split
/// 80-10-10 internally, with a checkpoint/reload between the halves. The
/// reload is verified bitwise before training continues.
pub fn tae_train_two_batch(
    pairs: &[ContextTargetPair],
    model: TaeModel,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TwoBatchOutcome> {
    if pairs.len() < 2 {
        return Err(Error::Data(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    // stream tag 5 = protocol-level pair shuffle
    let mut rng = derive_rng(seed, &[5]);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let shuffled: Vec<&ContextTargetPair> = order.into_iter().map(|i| &pairs[i]).collect();
    let mid = shuffled.len() / 2;
    let identity = model.config.identity_ae;
    let half1 = HalfData::new(&shuffled[..mid], identity)?;
    let half2 = HalfData::new(&shuffled[mid..], identity)?;

    let mut trainer = TaeTrainer::new(model, lr, seed, 1);
    let report1 = trainer.run(&half1, epochs)?;

    // store, revoke, verify bitwise, continue on the second half
    let checkpoint = trainer.to_container()?;
    let restored = TaeTrainer::from_container(&Container::from_bytes(&checkpoint.to_bytes())?)?;
    for (name, p) in trainer.model.params.iter() {
        let r = restored.model.params.value(name)?;
        if r.values().iter().zip(p.value.values()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::Data(format!("checkpoint round-trip mismatch in {name}")));
        }
    }
    let mut trainer = restored;
    trainer.next_half();
    let report2 = trainer.run(&half2, epochs)?;

    Ok(TwoBatchOutcome {
        model: trainer.model,
        reports: [report1, report2],
        checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::preprocess::make_pairs;

    fn corpus_pairs(n_per_class: usize, t: usize, seed: u64) -> Vec<ContextTargetPair> {
        let ds = generate_synthetic(n_per_class, t, seed).unwrap();
        ds.records.iter().flat_map(|r| make_pairs(r, 9).unwrap()).collect()
    }

    #[test]
    fn default_parameter_count_is_478() {
        // 12·12+12 + 12·8+8 + 8·6+6 + 6·8+8 + 8·12+12
        let model = TaeModel::init(TaeConfig::default(), 0).unwrap();
        assert_eq!(model.param_count(), 478);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = TaeModel::init(TaeConfig::default(), 11).unwrap();
        let b = TaeModel::init(TaeConfig::default(), 11).unwrap();
        let c = TaeModel::init(TaeConfig::default(), 12).unwrap();
        for (name, p) in a.params.iter() {
            assert_eq!(p.value.values(), b.params.value(name).unwrap().values());
        }
        assert!(a
            .params
            .iter()
            .any(|(name, p)| p.value.values() != c.params.value(name).unwrap().values()));
    }

    #[test]
    fn latent_dim_controls_code_width() {
        for latent in [4, 6, 12] {
            let config = TaeConfig { latent_dim: latent, ..TaeConfig::default() };
            let model = TaeModel::init(config, 3).unwrap();
            let x = Tensor::new(vec![2, 12], vec![0.3; 24]).unwrap();
            assert_eq!(model.encode(&x).unwrap().shape(), &[2, latent]);
            assert_eq!(model.reconstruct(&x).unwrap().shape(), &[2, 12]);
        }
    }

    #[test]
    fn zero_input_encodes_to_zero_at_init() {
        let model = TaeModel::init(TaeConfig::default(), 5).unwrap();
        let z = model.encode_instant(&[0.0; 12]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_encode_matches_per_row() {
        let model = TaeModel::init(TaeConfig::default(), 5).unwrap();
        let rows: Vec<[f64; 12]> = (0..4)
            .map(|i| std::array::from_fn(|c| 0.1 * (i * 12 + c) as f64))
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let batch = model.encode(&Tensor::new(vec![4, 12], flat).unwrap()).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let single = model.encode_instant(row).unwrap();
            assert_eq!(&batch.values()[i * 6..(i + 1) * 6], single.as_slice());
        }
    }

    #[test]
    fn wrong_input_width_errors() {
        let model = TaeModel::init(TaeConfig::default(), 5).unwrap();
        let x = Tensor::new(vec![2, 5], vec![0.0; 10]).unwrap();
        assert!(matches!(model.encode(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn extra_output_layer_flag_adds_layer() {
        let config = TaeConfig { extra_output_layer: true, ..TaeConfig::default() };
        let model = TaeModel::init(config, 0).unwrap();
        assert_eq!(model.param_count(), 478 + 12 * 12 + 12);
    }

    #[test]
    fn embedding_matrix_rows_equal_direct_encode() {
        let ds = generate_synthetic(1, 24, 7).unwrap();
        let vocab = crate::preprocess::build_vocabulary(ds.records.iter(), 1e-6);
        let model = TaeModel::init(TaeConfig::default(), 1).unwrap();
        let emb = build_embedding_matrix(&vocab, &model).unwrap();
        assert_eq!(emb.shape(), &[vocab.len(), 6]);
        for id in 0..vocab.len() as u32 {
            let direct = model.encode_instant(vocab.lookup(id).unwrap()).unwrap();
            let row = &emb.values()[id as usize * 6..(id as usize + 1) * 6];
            for (a, b) in row.iter().zip(&direct) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn embedding_matrix_needs_vocab() {
        let model = TaeModel::init(TaeConfig::default(), 1).unwrap();
        let vocab = Vocabulary::new(1e-6);
        assert!(build_embedding_matrix(&vocab, &model).is_err());
    }

    #[test]
    fn model_container_round_trip() {
        let model = TaeModel::init(TaeConfig::default(), 9).unwrap();
        let c = model.to_container().unwrap();
        let back = TaeModel::from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.config, model.config);
        for (name, p) in model.params.iter() {
            assert_eq!(back.params.value(name).unwrap(), &p.value);
        }
    }

    #[test]
    fn two_batch_protocol_runs_and_learns() {
        let pairs = corpus_pairs(2, 48, 21);
        let model = TaeModel::init(TaeConfig::default(), 21).unwrap();
        let out = tae_train_two_batch(&pairs, model, 12, 0.005, 21).unwrap();
        assert_eq!(out.reports[0].batch_index, 1);
        assert_eq!(out.reports[1].batch_index, 2);
        for r in &out.reports {
            assert_eq!(r.train_mse.len(), r.epochs_run);
            assert_eq!(r.val_mse.len(), r.epochs_run);
            assert!(r.train_mse.iter().all(|&v| v >= 0.0));
        }
        let final_val = *out.reports[1].val_mse.last().unwrap();
        assert!(
            final_val < out.reports[0].initial_val_mse,
            "no improvement: {} -> {final_val}",
            out.reports[0].initial_val_mse
        );
    }

    #[test]
    fn constant_corpus_learns_constant_map() {
        // With the linear reconstruction layer an autoencoder must learn a
        // constant map essentially exactly: the output bias alone can carry
        // the constant.
        let c = 1.0;
        let channels = vec![vec![c; 128]; 12];
        let rec = crate::dataset::EcgRecord::new(
            "const".into(),
            channels,
            crate::dataset::ClassLabel::Norm,
        )
        .unwrap();
        let pairs: Vec<ContextTargetPair> =
            (0..50).flat_map(|_| make_pairs(&rec, 9).unwrap()).collect();
        for seed in [1, 2, 7] {
            let config = TaeConfig { patience: 50, ..TaeConfig::default() };
            let model = TaeModel::init(config, seed).unwrap();
            let out = tae_train_two_batch(&pairs, model, 50, 0.01, seed).unwrap();
            let best = out.reports[1].val_mse.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "seed {seed}: best val MSE {best}");
        }
    }

    #[test]
    fn relu_output_variant_hits_dead_unit_floor() {
        // The rectified-output reading caps the same corpus: output units
        // whose pre-activation starts negative on the (identical) inputs
        // receive no gradient, so the best val MSE lands on an integer
        // multiple of c²/12 bounded by the dead-at-init count, and reaches
        // <1e-6 only when every unit ends up alive.
        let c = 1.0;
        let channels = vec![vec![c; 64]; 12];
        let rec = crate::dataset::EcgRecord::new(
            "const".into(),
            channels,
            crate::dataset::ClassLabel::Norm,
        )
        .unwrap();
        let pairs: Vec<ContextTargetPair> =
            (0..20).flat_map(|_| make_pairs(&rec, 9).unwrap()).collect();
        for seed in [1, 2, 7] {
            let config =
                TaeConfig { relu_output: true, patience: 10, ..TaeConfig::default() };
            let model = TaeModel::init(config, seed).unwrap();
            let x = Tensor::new(vec![1, 12], vec![c; 12]).unwrap();
            let dead_at_init =
                model.reconstruct(&x).unwrap().values().iter().filter(|&&v| v == 0.0).count();
            let out = tae_train_two_batch(&pairs, model, 50, 0.01, seed).unwrap();
            let best =
                out.reports[1].val_mse.iter().copied().fold(f64::INFINITY, f64::min);
            let unit = c * c / 12.0;
            let k = (best / unit).round() as usize;
            assert!(
                (best - k as f64 * unit).abs() < 5e-3,
                "seed {seed}: best {best} not near a multiple of c²/12"
            );
            assert!(k <= dead_at_init, "seed {seed}: floor {k} above dead count {dead_at_init}");
            if k == 0 {
                assert!(best < 1e-6, "seed {seed}: all units alive but best {best}");
            }
        }
    }

    #[test]
    fn trainer_resume_is_step_for_step_identical() {
        let pairs = corpus_pairs(1, 32, 31);
        let refs: Vec<&ContextTargetPair> = pairs.iter().collect();
        let data = HalfData::new(&refs, false).unwrap();

        // uninterrupted: 6 epochs
        let mut straight = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 4).unwrap(), 0.002, 4, 1);
        for _ in 0..6 {
            straight.step_epoch(&data).unwrap();
        }

        // save at 3, restore, run to 6
        let mut first = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 4).unwrap(), 0.002, 4, 1);
        for _ in 0..3 {
            first.step_epoch(&data).unwrap();
        }
        let saved = first.to_container().unwrap();
        let mut resumed =
            TaeTrainer::from_container(&Container::from_bytes(&saved.to_bytes()).unwrap()).unwrap();
        for _ in 0..3 {
            resumed.step_epoch(&data).unwrap();
        }

        for (name, p) in straight.model.params.iter() {
            let r = resumed.model.params.value(name).unwrap();
            for (a, b) in p.value.values().iter().zip(r.values()) {
                assert_eq!(a.to_bits(), b.to_bits(), "param {name} diverged");
            }
        }
    }
}

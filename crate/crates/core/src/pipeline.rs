//! End-to-end orchestration: dataset → split/balance → vocabulary → temporal
//! autoencoder → embedding transfer → classifier training, plus the bundled
//! artifact (vocabulary + encoder + classifier) used for inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clsa::{
    clsa_predict_batch, clsa_train, ClsaConfig, ClsaModel, EpochStats, Prediction,
};
use crate::dataset::{
    smote_balance, smote_balance_records, split_80_10_10, ClassLabel, Dataset, EcgRecord, Split,
    NUM_CHANNELS, NUM_CLASSES,
};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, param_report, MetricReport, ParamCounts};
use crate::preprocess::{
    build_vocabulary, make_pairs, tokenize, TokenSequence, VocabMode, Vocabulary,
};
use crate::store::Container;
use crate::tae::{build_embedding_matrix, tae_train_two_batch, TaeConfig, TaeModel, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineTrainConfig {
    pub window: usize,
    pub quant: f64,
    pub smote_k: usize,
    /// Compress instants through the autoencoder; off = raw 12-wide rows.
    pub use_tae: bool,
    /// Oversample before splitting (the published ordering) instead of the
    /// leak-free split-first default.
    pub paper_faithful: bool,
    pub tae: TaeConfig,
    pub tae_epochs: usize,
    pub tae_lr: f64,
    pub clsa: ClsaConfig,
    pub clsa_epochs: usize,
    pub clsa_lr: f64,
}

impl Default for PipelineTrainConfig {
    fn default() -> Self {
        PipelineTrainConfig {
            window: crate::preprocess::DEFAULT_WINDOW,
            quant: crate::preprocess::DEFAULT_QUANT,
            smote_k: 5,
            use_tae: true,
            paper_faithful: false,
            tae: TaeConfig::default(),
            tae_epochs: 50,
            tae_lr: 1e-3,
            clsa: ClsaConfig::default(),
            clsa_epochs: 30,
            clsa_lr: 1e-3,
        }
    }
}

/// The trained bundle: everything inference needs.
pub struct Pipeline {
    pub vocab: Vocabulary,
    /// Absent in the classifier-only ablation.
    pub tae: Option<TaeModel>,
    pub clsa: ClsaModel,
    /// The preprocessing/training configuration, kept for provenance.
    pub train_config: PipelineTrainConfig,
    pub train_seed: u64,
    /// The record→split assignment used in training, so later evaluation
    /// runs against the same held-out sets.
    pub split_assignment: BTreeMap<String, Split>,
}

pub struct TrainedPipeline {
    pub pipeline: Pipeline,
    pub dataset: Dataset,
    pub tae_reports: Option<[TrainReport; 2]>,
    pub tae_checkpoint: Option<Container>,
    pub clsa_curves: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Exact parameter count of the classifier stack for a given embedding
/// width, by closed-form accounting.
pub fn clsa_param_counts(config: &ClsaConfig, vocab_len: usize) -> ParamCounts {
    let (k, d, f, h) = (config.kernel_size, config.embed_dim, config.conv_filters, config.lstm_units);
    let mut rows = vec![
        ("embedding".to_string(), vocab_len * d),
        ("conv".to_string(), k * d * f + f),
        ("bn".to_string(), 2 * f),
        ("lstm".to_string(), 4 * (h * (f + h) + h)),
    ];
    if config.attention_projections {
        rows.push(("attn".to_string(), 3 * h * h));
    }
    rows.push(("dense1".to_string(), h * config.dense1 + config.dense1));
    rows.push(("dense2".to_string(), config.dense1 * config.dense2 + config.dense2));
    rows.push(("out".to_string(), config.dense2 * NUM_CLASSES + NUM_CLASSES));
    ParamCounts::new(rows)
}

/// Size comparison against the identical stack consuming 12-wide inputs.
pub fn size_report(config: &ClsaConfig, vocab_len: usize) -> crate::metrics::ParamReport {
    let model = clsa_param_counts(config, vocab_len);
    let baseline_cfg = ClsaConfig { embed_dim: NUM_CHANNELS, ..config.clone() };
    let baseline = clsa_param_counts(&baseline_cfg, vocab_len);
    param_report(model, baseline)
}

fn labeled_sequences(
    records: &[&EcgRecord],
    vocab: &mut Vocabulary,
    mode: VocabMode,
) -> Result<Vec<(TokenSequence, ClassLabel)>> {
    records
        .iter()
        .map(|rec| Ok((tokenize(rec, vocab, mode)?, rec.label)))
        .collect()
}

/// Embedding rows for vocabulary entries beyond `base_len`: encoded through
/// the autoencoder when present, raw quantized instants otherwise.
fn extension_rows(
    vocab: &Vocabulary,
    base_len: usize,
    tae: Option<&TaeModel>,
) -> Result<Option<Tensor>> {
    let n_ext = vocab.len() - base_len;
    if n_ext == 0 {
        return Ok(None);
    }
    let mut raw = Vec::with_capacity(n_ext * NUM_CHANNELS);
    for rep in &vocab.reps()[base_len..] {
        raw.extend_from_slice(rep);
    }
    let raw = Tensor::new(vec![n_ext, NUM_CHANNELS], raw)?;
    Ok(Some(match tae {
        Some(model) => model.encode(&raw)?,
        None => raw,
    }))
}

/// Full training flow on an unsplit record set. Default order: stratified
/// 80-10-10 split, then SMOTE on the train split only; `paper_faithful`
/// oversamples first so synthetics may land anywhere.
pub fn train_pipeline(
    ds: &Dataset,
    cfg: &PipelineTrainConfig,
    seed: u64,
) -> Result<TrainedPipeline> {
    train_pipeline_with(ds, cfg, seed, None)
}

/// [`train_pipeline`] with an optionally pre-trained autoencoder (the
/// two-command CLI flow trains the autoencoder separately).
pub fn train_pipeline_with(
    ds: &Dataset,
    cfg: &PipelineTrainConfig,
    seed: u64,
    pretrained_tae: Option<TaeModel>,
) -> Result<TrainedPipeline> {
    let dataset = if cfg.paper_faithful {
        let balanced = smote_balance_records(&ds.records, cfg.smote_k, seed)?;
        split_80_10_10(Dataset::new(balanced), seed)?
    } else {
        let split = split_80_10_10(Dataset::new(ds.records.clone()), seed)?;
        smote_balance(&split, cfg.smote_k, seed)?
    };

    let train_records = dataset.records_in(Split::Train);
    let val_records = dataset.records_in(Split::Val);
    let mut vocab = build_vocabulary(train_records.iter().copied(), cfg.quant);

    let (tae, tae_reports, tae_checkpoint, embedding, clsa_cfg) = if let Some(model) =
        pretrained_tae
    {
        let embedding = build_embedding_matrix(&vocab, &model)?;
        let clsa_cfg = ClsaConfig { embed_dim: model.config.latent_dim, ..cfg.clsa.clone() };
        (Some(model), None, None, embedding, clsa_cfg)
    } else if cfg.use_tae {
        let pairs: Vec<_> = train_records
            .iter()
            .map(|rec| make_pairs(rec, cfg.window))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let model = TaeModel::init(cfg.tae.clone(), seed)?;
        let out = tae_train_two_batch(&pairs, model, cfg.tae_epochs, cfg.tae_lr, seed)?;
        let embedding = build_embedding_matrix(&vocab, &out.model)?;
        let clsa_cfg = ClsaConfig { embed_dim: cfg.tae.latent_dim, ..cfg.clsa.clone() };
        (Some(out.model), Some(out.reports), Some(out.checkpoint), embedding, clsa_cfg)
    } else {
        let mut values = Vec::with_capacity(vocab.len() * NUM_CHANNELS);
        for rep in vocab.reps() {
            values.extend_from_slice(rep);
        }
        let embedding = Tensor::new(vec![vocab.len(), NUM_CHANNELS], values)?;
        let clsa_cfg = ClsaConfig { embed_dim: NUM_CHANNELS, ..cfg.clsa.clone() };
        (None, None, None, embedding, clsa_cfg)
    };

    let mut clsa = ClsaModel::init(embedding, clsa_cfg, seed)?;
    let train_seqs = labeled_sequences(&train_records, &mut vocab, VocabMode::Closed)?;
    let base_len = vocab.len();
    let mut val_vocab = vocab.clone();
    let val_seqs = labeled_sequences(&val_records, &mut val_vocab, VocabMode::Open)?;
    let val_ext = extension_rows(&val_vocab, base_len, tae.as_ref())?;

    let outcome = clsa_train(
        &mut clsa,
        &train_seqs,
        &val_seqs,
        val_ext.as_ref(),
        cfg.clsa_epochs,
        cfg.clsa_lr,
        seed,
    )?;

    Ok(TrainedPipeline {
        pipeline: Pipeline {
            vocab,
            tae,
            clsa,
            train_config: cfg.clone(),
            train_seed: seed,
            split_assignment: dataset.split.clone(),
        },
        dataset,
        tae_reports,
        tae_checkpoint,
        clsa_curves: outcome.curves,
        best_epoch: outcome.best_epoch,
    })
}

impl Pipeline {
    /// Tokenize records open-vocabulary (unseen instants get on-the-fly
    /// embedding rows) and classify. Order-preserving.
    pub fn predict_records(&self, records: &[&EcgRecord]) -> Result<Vec<Prediction>> {
        let base_len = self.vocab.len();
        let mut scratch = self.vocab.clone();
        let seqs: Vec<TokenSequence> = records
            .iter()
            .map(|rec| tokenize(rec, &mut scratch, VocabMode::Open))
            .collect::<Result<_>>()?;
        let ext = extension_rows(&scratch, base_len, self.tae.as_ref())?;
        clsa_predict_batch(&seqs, &self.clsa, ext.as_ref())
    }

    /// Predict and score a labeled record set. The metric report carries the
    /// size comparison against the 12-wide baseline stack.
    pub fn evaluate(&self, records: &[&EcgRecord]) -> Result<(MetricReport, Vec<Prediction>)> {
        if records.is_empty() {
            return Err(Error::Data("no records to evaluate".into()));
        }
        let preds = self.predict_records(records)?;
        let pred_labels: Vec<ClassLabel> = preds.iter().map(|p| p.argmax).collect();
        let true_labels: Vec<ClassLabel> = records.iter().map(|r| r.label).collect();
        let mut report = compute_metrics(&confusion(&pred_labels, &true_labels)?)?;
        report.params = Some(size_report(&self.clsa.config, self.vocab.len()));
        Ok((report, preds))
    }

    pub fn to_container(&self) -> Result<Container> {
        let config = serde_json::json!({
            "train": self.train_config,
            "clsa": self.clsa.config,
            "tae": self.tae.as_ref().map(|t| t.config.clone()),
            "quant": self.vocab.q(),
            "seed": self.train_seed,
            "split": self.split_assignment,
        });
        let mut c = Container::new("pipeline", config);
        let v = self.vocab.len();
        let mut keys = Vec::with_capacity(v * NUM_CHANNELS);
        let mut reps = Vec::with_capacity(v * NUM_CHANNELS);
        for (key, rep) in self.vocab.keys().iter().zip(self.vocab.reps()) {
            keys.extend_from_slice(key);
            reps.extend_from_slice(rep);
        }
        c.put_i64("vocab.keys", vec![v, NUM_CHANNELS], keys)?;
        c.put_f64("vocab.reps", vec![v, NUM_CHANNELS], reps)?;
        if let Some(tae) = &self.tae {
            tae.put_entries(&mut c, "tae.")?;
        }
        self.clsa.put_entries(&mut c, "clsa.")?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "pipeline" {
            return Err(Error::Data(format!("expected pipeline container, found {}", c.kind)));
        }
        let train_config: PipelineTrainConfig = serde_json::from_value(c.config["train"].clone())
            .map_err(|e| Error::Data(format!("bad pipeline config: {e}")))?;
        let quant = c.config["quant"]
            .as_f64()
            .ok_or_else(|| Error::Data("missing quant in pipeline config".into()))?;
        let (shape, keys) = c.i64_entry("vocab.keys")?;
        if shape.len() != 2 || shape[1] != NUM_CHANNELS {
            return Err(Error::dim("vocab.keys", shape, &[NUM_CHANNELS]));
        }
        let key_arrays: Vec<[i64; NUM_CHANNELS]> = keys
            .chunks_exact(NUM_CHANNELS)
            .map(|c| c.try_into().expect("chunk size"))
            .collect();
        let vocab = Vocabulary::from_keys(quant, key_arrays)?;

        let tae = if c.config["tae"].is_null() {
            None
        } else {
            let tae_cfg: TaeConfig = serde_json::from_value(c.config["tae"].clone())
                .map_err(|e| Error::Data(format!("bad tae config: {e}")))?;
            Some(TaeModel::from_entries(tae_cfg, c, "tae.")?)
        };
        let clsa_cfg: ClsaConfig = serde_json::from_value(c.config["clsa"].clone())
            .map_err(|e| Error::Data(format!("bad clsa config: {e}")))?;
        let clsa = ClsaModel::from_entries(clsa_cfg, c, "clsa.")?;
        let train_seed = c.config["seed"].as_u64().unwrap_or(0);
        let split_assignment: BTreeMap<String, Split> = match c.config.get("split") {
            Some(v) if !v.is_null() => serde_json::from_value(v.clone())
                .map_err(|e| Error::Data(format!("bad split assignment: {e}")))?,
            _ => BTreeMap::new(),
        };
        Ok(Pipeline { vocab, tae, clsa, train_config, train_seed, split_assignment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;

    fn desk_config() -> PipelineTrainConfig {
        PipelineTrainConfig {
            tae_epochs: 4,
            clsa_epochs: 2,
            clsa: ClsaConfig {
                conv_filters: 6,
                lstm_units: 5,
                dense1: 8,
                dense2: 6,
                batch_size: 8,
                ..ClsaConfig::default()
            },
            ..PipelineTrainConfig::default()
        }
    }

    #[test]
    fn trains_and_predicts_end_to_end() {
        let ds = generate_synthetic(10, 32, 3).unwrap();
        let trained = train_pipeline(&ds, &desk_config(), 3).unwrap();
        assert_eq!(trained.clsa_curves.len(), 2);
        assert!(trained.tae_reports.is_some());

        let test_records = trained.dataset.records_in(Split::Test);
        assert!(!test_records.is_empty());
        let (report, preds) = trained.pipeline.evaluate(&test_records).unwrap();
        assert_eq!(preds.len(), test_records.len());
        assert!((0.0..=1.0).contains(&report.accuracy));
        let params = report.params.unwrap();
        assert!(params.model.total < params.baseline.total);
    }

    #[test]
    fn closed_form_counts_match_real_model() {
        let ds = generate_synthetic(10, 32, 5).unwrap();
        let trained = train_pipeline(&ds, &desk_config(), 5).unwrap();
        let counted = clsa_param_counts(
            &trained.pipeline.clsa.config,
            trained.pipeline.vocab.len(),
        );
        assert_eq!(counted.total, trained.pipeline.clsa.total_params());
    }

    #[test]
    fn tae_off_uses_raw_12_wide_rows() {
        let ds = generate_synthetic(10, 32, 7).unwrap();
        let cfg = PipelineTrainConfig { use_tae: false, ..desk_config() };
        let trained = train_pipeline(&ds, &cfg, 7).unwrap();
        assert!(trained.pipeline.tae.is_none());
        assert_eq!(trained.pipeline.clsa.config.embed_dim, NUM_CHANNELS);
        let test_records = trained.dataset.records_in(Split::Test);
        let preds = trained.pipeline.predict_records(&test_records).unwrap();
        assert_eq!(preds.len(), test_records.len());
    }

    #[test]
    fn pipeline_container_round_trip_preserves_predictions() {
        let ds = generate_synthetic(10, 32, 9).unwrap();
        let trained = train_pipeline(&ds, &desk_config(), 9).unwrap();
        let c = trained.pipeline.to_container().unwrap();
        let restored =
            Pipeline::from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        let fresh = generate_synthetic(1, 32, 333).unwrap();
        let recs: Vec<&EcgRecord> = fresh.records.iter().collect();
        let a = trained.pipeline.predict_records(&recs).unwrap();
        let b = restored.predict_records(&recs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.probabilities, y.probabilities);
            assert_eq!(x.argmax, y.argmax);
        }
        // byte-determinism of the serialized artifact
        assert_eq!(c.to_bytes(), restored.to_container().unwrap().to_bytes());
    }

    #[test]
    fn unseen_records_predict_on_the_simplex() {
        let ds = generate_synthetic(10, 32, 11).unwrap();
        let trained = train_pipeline(&ds, &desk_config(), 11).unwrap();
        // an entirely fresh corpus: every instant is out-of-vocabulary
        let unseen = generate_synthetic(1, 32, 999).unwrap();
        let recs: Vec<&EcgRecord> = unseen.records.iter().collect();
        let preds = trained.pipeline.predict_records(&recs).unwrap();
        for p in preds {
            let sum: f64 = p.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn paper_faithful_ordering_runs() {
        let mut ds = generate_synthetic(10, 32, 13).unwrap();
        // drop some records to make it imbalanced
        ds.records.retain(|r| !(r.label.index() >= 3 && r.record_id.ends_with("3")));
        let cfg = PipelineTrainConfig { paper_faithful: true, ..desk_config() };
        let trained = train_pipeline(&ds, &cfg, 13).unwrap();
        let counts = trained.dataset.class_counts(None);
        assert!(counts.iter().all(|&c| c == counts[0]), "{counts:?}");
    }
}

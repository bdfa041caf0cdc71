//! Window-based context/target extraction and the token vocabulary.
//!
//! Each record is zero-padded by (window-1)/2 on both ends, sliced into
//! width-`window` frames (one per timestamp), and split into an 8-column
//! context plus the mid-column target. For tokenization, every timestamp's
//! 12-channel vector is quantized and mapped to a dense token id on first
//! occurrence.

use std::collections::HashMap;

use crate::dataset::{EcgRecord, NUM_CHANNELS};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 9;
/// Quantization step for vocabulary dedup, in millivolts.
pub const DEFAULT_QUANT: f64 = 1e-6;

/// One width-`window` slice of the padded record, targeting `center_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `window` timesteps × 12 channels.
    pub columns: Vec<[f64; NUM_CHANNELS]>,
    /// Timestamp of the mid column in the unpadded record.
    pub center_index: usize,
}

/// Training pair for the temporal autoencoder: the frame minus its mid
/// column (left half then right half) plus two reductions of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTargetPair {
    /// window-1 context timesteps × 12 channels.
    pub context_raw: Vec<[f64; NUM_CHANNELS]>,
    /// Per-channel mean over the context timesteps.
    pub context_mean: [f64; NUM_CHANNELS],
    /// The mid column.
    pub target: [f64; NUM_CHANNELS],
    pub center_index: usize,
}

/// Prepend and append `pad` zeros to every channel.
pub fn pad_record(rec: &EcgRecord, pad: usize) -> Vec<Vec<f64>> {
    rec.channels
        .iter()
        .map(|ch| {
            let mut padded = vec![0.0; ch.len() + 2 * pad];
            padded[pad..pad + ch.len()].copy_from_slice(ch);
            padded
        })
        .collect()
}

/// Slice the padded record into one frame per timestamp. Frame t's mid
/// column is sample t, so frame 0 targets the record's first sample and the
/// last window that still touches real data ends the sweep: exactly T
/// frames.
pub fn make_frames(rec: &EcgRecord, window: usize) -> Result<Vec<Frame>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("window must be odd and >= 3, got {window}")));
    }
    let pad = (window - 1) / 2;
    let padded = pad_record(rec, pad);
    let t_len = rec.n_samples();
    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut columns = Vec::with_capacity(window);
        for k in 0..window {
            let mut col = [0.0; NUM_CHANNELS];
            for (c, ch) in padded.iter().enumerate() {
                col[c] = ch[t + k];
            }
            columns.push(col);
        }
        frames.push(Frame { columns, center_index: t });
    }
    Ok(frames)
}

/// Context/target pairs for every timestamp of the record.
pub fn make_pairs(rec: &EcgRecord, window: usize) -> Result<Vec<ContextTargetPair>> {
    let frames = make_frames(rec, window)?;
    let mid = (window - 1) / 2;
    Ok(frames
        .into_iter()
        .map(|frame| {
            let target = frame.columns[mid];
            let mut context_raw = Vec::with_capacity(window - 1);
            context_raw.extend_from_slice(&frame.columns[..mid]);
            context_raw.extend_from_slice(&frame.columns[mid + 1..]);
            let mut context_mean = [0.0; NUM_CHANNELS];
            for col in &context_raw {
                for (m, v) in context_mean.iter_mut().zip(col) {
                    *m += v;
                }
            }
            for m in &mut context_mean {
                *m /= context_raw.len() as f64;
            }
            ContextTargetPair { context_raw, context_mean, target, center_index: frame.center_index }
        })
        .collect())
}

/// Quantized 12-channel instant used as a vocabulary key.
pub type QuantKey = [i64; NUM_CHANNELS];

/// Map from unique quantized temporal instances to dense token ids, in
/// first-occurrence order. `lookup` returns the stored quantized vector.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    q: f64,
    map: HashMap<QuantKey, u32>,
    keys: Vec<QuantKey>,
    reps: Vec<[f64; NUM_CHANNELS]>,
}

impl Vocabulary {
    pub fn new(q: f64) -> Self {
        Vocabulary { q, map: HashMap::new(), keys: Vec::new(), reps: Vec::new() }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn quantize(&self, instant: &[f64; NUM_CHANNELS]) -> QuantKey {
        let mut key = [0i64; NUM_CHANNELS];
        for (k, v) in key.iter_mut().zip(instant) {
            *k = (v / self.q).round() as i64;
        }
        key
    }

    fn representative(&self, key: &QuantKey) -> [f64; NUM_CHANNELS] {
        let mut rep = [0.0; NUM_CHANNELS];
        for (r, &k) in rep.iter_mut().zip(key) {
            *r = k as f64 * self.q;
        }
        rep
    }

    /// Id for an instant if its quantized form is known.
    pub fn id_of(&self, instant: &[f64; NUM_CHANNELS]) -> Option<u32> {
        self.map.get(&self.quantize(instant)).copied()
    }

    /// Intern an instant, assigning the next id on first occurrence.
    pub fn intern(&mut self, instant: &[f64; NUM_CHANNELS]) -> u32 {
        let key = self.quantize(instant);
        if let Some(&id) = self.map.get(&key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.map.insert(key, id);
        self.keys.push(key);
        self.reps.push(self.representative(&key));
        id
    }

    /// The stored quantized vector for an id.
    pub fn lookup(&self, id: u32) -> Result<&[f64; NUM_CHANNELS]> {
        self.reps
            .get(id as usize)
            .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range ({})", self.len())))
    }

    pub fn keys(&self) -> &[QuantKey] {
        &self.keys
    }

    pub fn reps(&self) -> &[[f64; NUM_CHANNELS]] {
        &self.reps
    }

    /// Rebuild from stored keys (checkpoint load path).
    pub fn from_keys(q: f64, keys: Vec<QuantKey>) -> Result<Self> {
        let mut vocab = Vocabulary::new(q);
        for key in keys {
            if vocab.map.insert(key, vocab.keys.len() as u32).is_some() {
                return Err(Error::Vocabulary("duplicate key in stored vocabulary".into()));
            }
            vocab.keys.push(key);
            let rep = vocab.representative(&key);
            vocab.reps.push(rep);
        }
        Ok(vocab)
    }
}

/// Build a vocabulary over every timestamp of every record, ids in
/// first-occurrence order.
pub fn build_vocabulary<'a, I>(records: I, q: f64) -> Vocabulary
where
    I: IntoIterator<Item = &'a EcgRecord>,
{
    let mut vocab = Vocabulary::new(q);
    for rec in records {
        for t in 0..rec.n_samples() {
            vocab.intern(&rec.instant(t));
        }
    }
    vocab
}

/// Token ids for one record, one per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub record_id: String,
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// Unseen instants are an error.
    Closed,
    /// Unseen instants extend the vocabulary (the default: every new signal
    /// becomes a new entity).
    Open,
}

/// Cache a pair list in the checkpoint container format.
pub fn pairs_to_container(pairs: &[ContextTargetPair]) -> Result<crate::store::Container> {
    let n = pairs.len();
    let ctx_w = pairs.first().map_or(0, |p| p.context_raw.len());
    let mut raw = Vec::with_capacity(n * ctx_w * NUM_CHANNELS);
    let mut mean = Vec::with_capacity(n * NUM_CHANNELS);
    let mut target = Vec::with_capacity(n * NUM_CHANNELS);
    let mut centers = Vec::with_capacity(n);
    for p in pairs {
        if p.context_raw.len() != ctx_w {
            return Err(Error::Data("pairs with mixed context widths".into()));
        }
        for col in &p.context_raw {
            raw.extend_from_slice(col);
        }
        mean.extend_from_slice(&p.context_mean);
        target.extend_from_slice(&p.target);
        centers.push(p.center_index as i64);
    }
    let mut c = crate::store::Container::new(
        "pairs",
        serde_json::json!({"count": n, "context_width": ctx_w}),
    );
    c.put_f64("context_raw", vec![n, ctx_w, NUM_CHANNELS], raw)?;
    c.put_f64("context_mean", vec![n, NUM_CHANNELS], mean)?;
    c.put_f64("target", vec![n, NUM_CHANNELS], target)?;
    c.put_i64("center_index", vec![n], centers)?;
    Ok(c)
}

pub fn pairs_from_container(c: &crate::store::Container) -> Result<Vec<ContextTargetPair>> {
    if c.kind != "pairs" {
        return Err(Error::Data(format!("expected pairs container, found {}", c.kind)));
    }
    let (shape, raw) = c.f64_entry("context_raw")?;
    let (n, ctx_w) = (shape[0], shape[1]);
    let (_, mean) = c.f64_entry("context_mean")?;
    let (_, target) = c.f64_entry("target")?;
    let (_, centers) = c.i64_entry("center_index")?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let chunk = |src: &[f64], w: usize, j: usize| -> [f64; NUM_CHANNELS] {
            src[(i * w + j) * NUM_CHANNELS..(i * w + j + 1) * NUM_CHANNELS]
                .try_into()
                .expect("channel width")
        };
        pairs.push(ContextTargetPair {
            context_raw: (0..ctx_w).map(|j| chunk(raw, ctx_w, j)).collect(),
            context_mean: chunk(mean, 1, 0),
            target: chunk(target, 1, 0),
            center_index: centers[i] as usize,
        });
    }
    Ok(pairs)
}

/// Cache tokenized sequences in the checkpoint container format.
pub fn sequences_to_container(seqs: &[TokenSequence]) -> Result<crate::store::Container> {
    let ids: Vec<&str> = seqs.iter().map(|s| s.record_id.as_str()).collect();
    let mut c = crate::store::Container::new(
        "token-sequences",
        serde_json::json!({"record_ids": ids}),
    );
    for (i, seq) in seqs.iter().enumerate() {
        let tokens: Vec<i64> = seq.ids.iter().map(|&t| t as i64).collect();
        c.put_i64(&format!("seq.{i:08}"), vec![tokens.len()], tokens)?;
    }
    Ok(c)
}

pub fn sequences_from_container(c: &crate::store::Container) -> Result<Vec<TokenSequence>> {
    if c.kind != "token-sequences" {
        return Err(Error::Data(format!("expected token-sequences container, found {}", c.kind)));
    }
    let ids: Vec<String> = serde_json::from_value(c.config["record_ids"].clone())
        .map_err(|e| Error::Data(format!("bad record_ids: {e}")))?;
    ids.iter()
        .enumerate()
        .map(|(i, record_id)| {
            let (_, tokens) = c.i64_entry(&format!("seq.{i:08}"))?;
            Ok(TokenSequence {
                record_id: record_id.clone(),
                ids: tokens.iter().map(|&t| t as u32).collect(),
            })
        })
        .collect()
}

/// Tokenize a record against (and in open mode, into) a vocabulary.
pub fn tokenize(rec: &EcgRecord, vocab: &mut Vocabulary, mode: VocabMode) -> Result<TokenSequence> {
    let mut ids = Vec::with_capacity(rec.n_samples());
    for t in 0..rec.n_samples() {
        let instant = rec.instant(t);
        let id = match mode {
            VocabMode::Open => vocab.intern(&instant),
            VocabMode::Closed => vocab.id_of(&instant).ok_or_else(|| {
                Error::Vocabulary(format!(
                    "record {}: unseen instant at timestamp {t} in closed mode",
                    rec.record_id
                ))
            })?,
        };
        ids.push(id);
    }
    Ok(TokenSequence { record_id: rec.record_id.clone(), ids })
}

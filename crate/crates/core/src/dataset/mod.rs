//! Record model, ingestion, synthetic generation, SMOTE balancing, and
//! deterministic stratified splitting.

mod io;
mod smote;
mod synthetic;

pub use io::{load_dataset, save_dataset, IngestReport};
pub use smote::{balanced_total, smote_balance, smote_balance_records};
pub use synthetic::generate_synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::ops::derive_rng;
use crate::error::{Error, Result};

pub const NUM_CHANNELS: usize = 12;
pub const NUM_CLASSES: usize = 5;

/// Standard 12-lead names, in channel order.
pub const LEAD_NAMES: [&str; NUM_CHANNELS] =
    ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// Diagnostic superclass with stable integer encoding 0–4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Norm,
    Mi,
    Sttc,
    Cd,
    Hyp,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] =
        [ClassLabel::Norm, ClassLabel::Mi, ClassLabel::Sttc, ClassLabel::Cd, ClassLabel::Hyp];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Norm => 0,
            ClassLabel::Mi => 1,
            ClassLabel::Sttc => 2,
            ClassLabel::Cd => 3,
            ClassLabel::Hyp => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::Label(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Norm => "NORM",
            ClassLabel::Mi => "MI",
            ClassLabel::Sttc => "STTC",
            ClassLabel::Cd => "CD",
            ClassLabel::Hyp => "HYP",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One patient's 12-channel series with its class label. All channels have
/// the same length and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    /// `NUM_CHANNELS` channels, each of length T, in [`LEAD_NAMES`] order.
    pub channels: Vec<Vec<f64>>,
    pub label: ClassLabel,
}

impl EcgRecord {
    pub fn new(record_id: String, channels: Vec<Vec<f64>>, label: ClassLabel) -> Result<Self> {
        let rec = EcgRecord { record_id, channels, label };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != NUM_CHANNELS {
            return Err(Error::Data(format!(
                "record {}: expected {NUM_CHANNELS} channels, got {}",
                self.record_id,
                self.channels.len()
            )));
        }
        let t = self.channels[0].len();
        if t == 0 {
            return Err(Error::Data(format!("record {}: empty channels", self.record_id)));
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.len() != t {
                return Err(Error::Data(format!(
                    "record {}: channel {c} length {} != {t}",
                    self.record_id,
                    ch.len()
                )));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "record {}: non-finite sample in channel {c}",
                    self.record_id
                )));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    /// The 12-channel vector at timestamp t.
    pub fn instant(&self, t: usize) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        for (o, ch) in out.iter_mut().zip(&self.channels) {
            *o = ch[t];
        }
        out
    }

    /// All samples flattened channel-major (channel 0 first).
    pub fn flatten(&self) -> Vec<f64> {
        self.channels.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Record collection plus an optional train/val/test assignment. The split
/// map either is empty (not yet split) or covers every record exactly once.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<EcgRecord>,
    pub split: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(records: Vec<EcgRecord>) -> Self {
        Dataset { records, split: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn is_split(&self) -> bool {
        !self.split.is_empty()
    }

    pub fn records_in(&self, split: Split) -> Vec<&EcgRecord> {
        self.records
            .iter()
            .filter(|r| self.split.get(&r.record_id) == Some(&split))
            .collect()
    }

    /// Per-class record counts, optionally restricted to one split.
    pub fn class_counts(&self, split: Option<Split>) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.records {
            if let Some(s) = split {
                if self.split.get(&r.record_id) != Some(&s) {
                    continue;
                }
            }
            counts[r.label.index()] += 1;
        }
        counts
    }

    pub fn validate_split(&self) -> Result<()> {
        if self.split.len() != self.records.len() {
            return Err(Error::Data(format!(
                "split covers {} of {} records",
                self.split.len(),
                self.records.len()
            )));
        }
        for r in &self.records {
            if !self.split.contains_key(&r.record_id) {
                return Err(Error::Data(format!("record {} missing from split", r.record_id)));
            }
        }
        Ok(())
    }
}

/// Stratified deterministic 80-10-10 split. Per class, counts follow the
/// largest-remainder rule, so proportions hold within one record.
pub fn split_80_10_10(mut ds: Dataset, seed: u64) -> Result<Dataset> {
    if ds.n() < 10 {
        return Err(Error::TooFewRecords { needed: 10, got: ds.n() });
    }
    let mut split = BTreeMap::new();
    for label in ClassLabel::ALL {
        let mut ids: Vec<&str> = ds
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.record_id.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        ids.sort_unstable();
        // stream tag 1 = splitting, keyed further by class
        let mut rng = derive_rng(seed, &[1, label.index() as u64]);
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), &[0.8, 0.1, 0.1]);
        let (n_train, n_val) = (counts[0], counts[1]);
        for (i, id) in ids.iter().enumerate() {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            split.insert(id.to_string(), s);
        }
    }
    ds.split = split;
    ds.validate_split()?;
    Ok(ds)
}

/// Integer apportionment by largest remainder; ties go to the earlier slot.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_record(id: &str, label: ClassLabel, t: usize, v: f64) -> EcgRecord {
        EcgRecord::new(id.to_string(), vec![vec![v; t]; NUM_CHANNELS], label).unwrap()
    }

    #[test]
    fn label_encoding_is_stable() {
        let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.name()).collect();
        assert_eq!(names, ["NORM", "MI", "STTC", "CD", "HYP"]);
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(ClassLabel::from_index(i).unwrap(), *l);
        }
        assert!(ClassLabel::from_index(5).is_err());
    }

    #[test]
    fn record_rejects_ragged_channels() {
        let mut chans = vec![vec![0.0; 8]; NUM_CHANNELS];
        chans[3] = vec![0.0; 7];
        assert!(EcgRecord::new("x".into(), chans, ClassLabel::Norm).is_err());
    }

    #[test]
    fn split_100_balanced_is_exact() {
        let mut records = Vec::new();
        for label in ClassLabel::ALL {
            for i in 0..20 {
                records.push(flat_record(&format!("{}-{i}", label.name()), label, 4, 0.0));
            }
        }
        let ds = split_80_10_10(Dataset::new(records), 7).unwrap();
        let count = |s| ds.records_in(s).len();
        assert_eq!(count(Split::Train), 80);
        assert_eq!(count(Split::Val), 10);
        assert_eq!(count(Split::Test), 10);
        // stratification: every class contributes 16/2/2
        for label in ClassLabel::ALL {
            let in_split = |s| {
                ds.records_in(s).iter().filter(|r| r.label == label).count()
            };
            assert_eq!((in_split(Split::Train), in_split(Split::Val), in_split(Split::Test)), (16, 2, 2));
        }
    }

    #[test]
    fn split_proportions_within_one_record_per_class() {
        let mut records = Vec::new();
        for (k, label) in ClassLabel::ALL.iter().enumerate() {
            for i in 0..(7 + 3 * k) {
                records.push(flat_record(&format!("{}-{i}", label.name()), *label, 4, 0.0));
            }
        }
        let ds = split_80_10_10(Dataset::new(records), 3).unwrap();
        for label in ClassLabel::ALL {
            let total = ds.records.iter().filter(|r| r.label == label).count() as f64;
            for (s, frac) in [(Split::Train, 0.8), (Split::Val, 0.1), (Split::Test, 0.1)] {
                let got = ds.records_in(s).iter().filter(|r| r.label == label).count() as f64;
                assert!(
                    (got - frac * total).abs() <= 1.0,
                    "{label} {s:?}: got {got}, want ~{}",
                    frac * total
                );
            }
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let make = || {
            let mut records = Vec::new();
            for label in ClassLabel::ALL {
                for i in 0..10 {
                    records.push(flat_record(&format!("{}-{i}", label.name()), label, 4, 0.0));
                }
            }
            Dataset::new(records)
        };
        let a = split_80_10_10(make(), 42).unwrap();
        let b = split_80_10_10(make(), 42).unwrap();
        let c = split_80_10_10(make(), 43).unwrap();
        assert_eq!(a.split, b.split);
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn split_rejects_tiny_dataset() {
        let records =
            (0..9).map(|i| flat_record(&format!("r{i}"), ClassLabel::Norm, 4, 0.0)).collect();
        assert!(matches!(
            split_80_10_10(Dataset::new(records), 1),
            Err(Error::TooFewRecords { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn largest_remainder_apportions_all() {
        assert_eq!(largest_remainder(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
        assert_eq!(largest_remainder(10, &[0.8, 0.1, 0.1]), vec![8, 1, 1]);
        assert_eq!(largest_remainder(7, &[0.8, 0.1, 0.1]), vec![5, 1, 1]);
        assert_eq!(largest_remainder(1, &[0.8, 0.1, 0.1]), vec![1, 0, 0]);
    }
}

//! Classic SMOTE: minority classes are upsampled to the majority count by
//! interpolating between a record and one of its k nearest same-class
//! neighbors (Euclidean distance on the flattened 12×T signal).

use rand::Rng;

use crate::dataset::{ClassLabel, Dataset, EcgRecord, Split};
use crate::engine::ops::derive_rng;
use crate::error::{Error, Result};

/// Total record count after balancing: every class reaches the majority
/// class count.
pub fn balanced_total(counts: &[usize]) -> usize {
    let max = counts.iter().copied().max().unwrap_or(0);
    max * counts.len()
}

/// Balance the train split of a split dataset. Originals are preserved;
/// synthetic records are appended with ids `<base>~s<n>` and assigned to the
/// train split, so they can never reach val or test.
pub fn smote_balance(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    ds.validate_split()?;
    let train: Vec<&EcgRecord> = ds.records_in(Split::Train);
    let synthetic = synthesize(&train, k, seed)?;
    let mut out = ds.clone();
    for rec in synthetic {
        out.split.insert(rec.record_id.clone(), Split::Train);
        out.records.push(rec);
    }
    Ok(out)
}

/// Balance a raw record set with no split semantics (the oversample-first
/// ordering). Returns originals plus synthetics.
pub fn smote_balance_records(records: &[EcgRecord], k: usize, seed: u64) -> Result<Vec<EcgRecord>> {
    let refs: Vec<&EcgRecord> = records.iter().collect();
    let synthetic = synthesize(&refs, k, seed)?;
    let mut out = records.to_vec();
    out.extend(synthetic);
    Ok(out)
}

fn synthesize(records: &[&EcgRecord], k: usize, seed: u64) -> Result<Vec<EcgRecord>> {
    let mut by_class: Vec<Vec<&EcgRecord>> = vec![Vec::new(); ClassLabel::ALL.len()];
    for rec in records {
        by_class[rec.label.index()].push(rec);
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut synthetic = Vec::new();
    for (ci, members) in by_class.iter().enumerate() {
        let need = majority - members.len();
        if need == 0 {
            continue;
        }
        let label = ClassLabel::from_index(ci)?;
        if members.len() < 2 {
            return Err(Error::DegenerateClass(label.name().to_string()));
        }
        let t = members[0].n_samples();
        for m in members.iter() {
            if m.n_samples() != t {
                return Err(Error::Data(format!(
                    "class {}: record {} has {} samples, expected {t}",
                    label.name(),
                    m.record_id,
                    m.n_samples()
                )));
            }
        }
        let flat: Vec<Vec<f64>> = members.iter().map(|m| m.flatten()).collect();
        let neighbors = k_nearest(&flat, k.min(members.len() - 1));
        // stream tag 2 = smote, keyed by class
        let mut rng = derive_rng(seed, &[2, ci as u64]);
        for n in 0..need {
            let base = n % members.len();
            let nn = neighbors[base][rng.gen_range(0..neighbors[base].len())];
            let u: f64 = rng.gen();
            let a = members[base];
            let b = members[nn];
            let channels: Vec<Vec<f64>> = a
                .channels
                .iter()
                .zip(&b.channels)
                .map(|(ca, cb)| {
                    ca.iter().zip(cb).map(|(&va, &vb)| va + u * (vb - va)).collect()
                })
                .collect();
            let record_id = format!("{}~s{n}", a.record_id);
            synthetic.push(EcgRecord::new(record_id, channels, label)?);
        }
    }
    Ok(synthetic)
}

/// Indices of the k nearest rows (by squared Euclidean distance) for each
/// row. Ties resolve by lower index, so results are order-deterministic.
fn k_nearest(flat: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = flat.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = flat[i]
                    .iter()
                    .zip(&flat[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(dists.into_iter().take(k).map(|(_, j)| j).collect());
    }
    out
}

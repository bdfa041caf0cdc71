//! On-disk dataset format: a `records.csv` index plus one binary `.ecg`
//! signal file per record.
//!
//! Signal file layout: magic `ECG1`, u32-LE channel count, u32-LE sample
//! count, then channel-major 64-bit LE IEEE-754 samples.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::{ClassLabel, Dataset, EcgRecord, NUM_CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ECG1";

/// What `load_dataset` skipped or rejected, mirroring the corpus filtering
/// step that drops unlabeled entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// Rows with an empty or unknown label.
    pub skipped_unlabeled: usize,
    /// Records rejected for structural problems (message per record).
    pub rejected: Vec<String>,
}

/// Write `records.csv` and one `.ecg` file per record into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index_path = dir.join("records.csv");
    let mut w = csv::Writer::from_path(&index_path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", index_path.display())))?;
    w.write_record(["record_id", "label", "n_samples"])
        .map_err(|e| Error::Ingestion(e.to_string()))?;
    for rec in &ds.records {
        w.write_record([
            rec.record_id.as_str(),
            rec.label.name(),
            &rec.n_samples().to_string(),
        ])
        .map_err(|e| Error::Ingestion(e.to_string()))?;
        write_signal(rec, &dir.join(format!("{}.ecg", rec.record_id)))?;
    }
    w.flush().map_err(|e| Error::io(&index_path, e))?;
    Ok(())
}

fn write_signal(rec: &EcgRecord, path: &Path) -> Result<()> {
    let mut buf =
        Vec::with_capacity(12 + NUM_CHANNELS * rec.n_samples() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(NUM_CHANNELS as u32).to_le_bytes());
    buf.extend_from_slice(&(rec.n_samples() as u32).to_le_bytes());
    for ch in &rec.channels {
        for v in ch {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_signal(path: &Path, record_id: &str, label: ClassLabel) -> Result<EcgRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(Error::Ingestion(format!("{}: bad signal header", path.display())));
    }
    let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if c != NUM_CHANNELS {
        return Err(Error::Ingestion(format!(
            "{}: expected {NUM_CHANNELS} channels, got {c}",
            path.display()
        )));
    }
    let expected = 12 + c * t * 8;
    if bytes.len() != expected {
        return Err(Error::Ingestion(format!(
            "{}: size {} != expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut channels = Vec::with_capacity(c);
    let mut off = 12;
    for _ in 0..c {
        let mut ch = Vec::with_capacity(t);
        for _ in 0..t {
            ch.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        channels.push(ch);
    }
    EcgRecord::new(record_id.to_string(), channels, label)
}

/// Load a dataset directory. Rows without a valid label are skipped and
/// counted; structurally broken records are rejected and reported.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, IngestReport)> {
    let index_path = dir.join("records.csv");
    if !index_path.is_file() {
        return Err(Error::Ingestion(format!("missing index {}", index_path.display())));
    }
    let mut reader = csv::Reader::from_path(&index_path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", index_path.display())))?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Ingestion(e.to_string()))?;
        let record_id = row.get(0).unwrap_or("").trim().to_string();
        if record_id.is_empty() {
            report.rejected.push("row with empty record_id".into());
            continue;
        }
        let label = match ClassLabel::from_name(row.get(1).unwrap_or("").trim()) {
            Some(l) => l,
            None => {
                report.skipped_unlabeled += 1;
                continue;
            }
        };
        let expected_t: Option<usize> = row.get(2).and_then(|s| s.trim().parse().ok());
        let path = dir.join(format!("{record_id}.ecg"));
        match read_signal(&path, &record_id, label) {
            Ok(rec) => {
                if let Some(t) = expected_t {
                    if rec.n_samples() != t {
                        report.rejected.push(format!(
                            "{record_id}: index says {t} samples, file has {}",
                            rec.n_samples()
                        ));
                        continue;
                    }
                }
                records.push(rec);
            }
            Err(e) => report.rejected.push(format!("{record_id}: {e}")),
        }
    }
    Ok((Dataset::new(records), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(2, 32, 5).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let (loaded, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(report, IngestReport::default());
        assert_eq!(loaded.n(), ds.n());
        for (a, b) in ds.records.iter().zip(&loaded.records) {
            assert_eq!(a.record_id, b.record_id);
            assert_eq!(a.label, b.label);
            for (ca, cb) in a.channels.iter().zip(&b.channels) {
                for (va, vb) in ca.iter().zip(cb) {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
    }

    #[test]
    fn unlabeled_rows_are_skipped_with_count() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(1, 16, 1).unwrap();
        let keep: Dataset = Dataset::new(ds.records[..3].to_vec());
        save_dataset(&keep, dir.path()).unwrap();
        // append an unlabeled row by hand
        let index = dir.path().join("records.csv");
        let mut contents = std::fs::read_to_string(&index).unwrap();
        contents.push_str("mystery,,16\n");
        std::fs::write(&index, contents).unwrap();

        let (loaded, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.n(), 3);
        assert_eq!(report.skipped_unlabeled, 1);
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn missing_index_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Ingestion(_))));
    }

    #[test]
    fn truncated_signal_is_rejected_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(1, 16, 2).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join(format!("{}.ecg", ds.records[0].record_id));
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();

        let (loaded, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.n(), ds.n() - 1);
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].contains(&ds.records[0].record_id));
    }
}

pub mod ablate;
pub mod evaluate;
pub mod gradcheck;
pub mod synth;
pub mod train_clsa;
pub mod train_tae;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{usage, CliError};
use taeclsa_core::dataset::{load_dataset, Dataset};
use taeclsa_core::Error;

/// Optional JSON config file. Precedence everywhere is flag > file > default.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub window: Option<usize>,
    pub latent: Option<usize>,
    pub quant: Option<f64>,
    pub smote_k: Option<usize>,
    pub paper_faithful: Option<bool>,
    pub tae_epochs: Option<usize>,
    pub tae_lr: Option<f64>,
    pub tae_batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub conv_filters: Option<usize>,
    pub kernel_size: Option<usize>,
    pub lstm_units: Option<usize>,
    pub dense1: Option<usize>,
    pub dense2: Option<usize>,
    pub dropout: Option<f64>,
    pub l2_kernel: Option<f64>,
    pub batch_size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("bad config file {}: {e}", path.display())))
    }
}

/// flag > file > default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn load_data(dir: &Path) -> Result<Dataset, CliError> {
    let (ds, report) = load_dataset(dir)?;
    if report.skipped_unlabeled > 0 {
        eprintln!("skipped {} unlabeled records", report.skipped_unlabeled);
    }
    for msg in &report.rejected {
        eprintln!("rejected: {msg}");
    }
    if ds.n() == 0 {
        return Err(Error::Ingestion(format!("no usable records in {}", dir.display())).into());
    }
    Ok(ds)
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::io(dir, e)))
}

/// Write a small CSV with Display-formatted cells (shortest f64 round-trip
/// representation keeps reruns byte-identical).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Core(Error::io(path, e)))
}

/// Loss-curve CSV: epoch, train, val.
pub fn write_loss_csv(path: &Path, train: &[f64], val: &[f64]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = train
        .iter()
        .zip(val)
        .enumerate()
        .map(|(e, (t, v))| vec![e.to_string(), t.to_string(), v.to_string()])
        .collect();
    write_csv(path, &["epoch", "train", "val"], &rows)
}

//! Experiment drivers: method-comparison sweeps, the oracle handling study,
//! threshold-sensitivity grids and the uniform-noise study.
//!
//! Every driver returns a report whose CSV renderings are pure functions of
//! the inputs. Cells run through [`Exec::map`], which returns results in plan
//! order, so the output does not depend on scheduling. Each experiment seed
//! `s` is expanded into independent noise and training seeds with
//! [`CellSeeds::from_run_seed`]; the noise seed is shared across methods so
//! that methods are compared on identical corruptions.

pub mod config;
pub mod oracle;
pub mod sensitivity;
pub mod sweep;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_synthetic, load_dataset, LabelMatrix, MultiLabelDataset, Split, SyntheticSpec,
};
use crate::error::Result;
use crate::handler::HandlingResult;
use crate::metrics::{map_macro, MetricsReport};
use crate::numerics::RngState;
use crate::trainer::{predict, train, train_with_static_handling, TrainConfig, TrainOutcome};

pub use config::Settings;
pub use oracle::{run_oracle, OracleConfig, OracleReport, Strategy};
pub use sensitivity::{run_sensitivity, SensitivityPlan, SensitivityReport};
pub use sweep::{run_sweep, run_uniform, ExperimentPlan, SweepReport};

/// Where the clean train/val/test splits come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Directory holding `train.csv`, `val.csv` and `test.csv`.
    Files(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: MultiLabelDataset,
    pub val: MultiLabelDataset,
    pub test: MultiLabelDataset,
}

impl DataSource {
    pub fn load(&self) -> Result<Splits> {
        match self {
            DataSource::Synthetic(spec) => {
                let d = generate_synthetic(spec)?;
                Ok(Splits {
                    train: d.train,
                    val: d.val,
                    test: d.test,
                })
            }
            DataSource::Files(dir) => Ok(Splits {
                train: load_dataset(&dir.join("train.csv"), Split::Train)?,
                val: load_dataset(&dir.join("val.csv"), Split::Val)?,
                test: load_dataset(&dir.join("test.csv"), Split::Test)?,
            }),
        }
    }
}

/// Seeds derived from one experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSeeds {
    pub noise: u64,
    pub train: u64,
}

impl CellSeeds {
    pub fn from_run_seed(seed: u64) -> Self {
        let root = RngState::new(seed);
        CellSeeds {
            noise: root.child("noise").seed(),
            train: root.child("train").seed(),
        }
    }
}

/// Trains on `train_labels` (optionally under a fixed handling) and scores
/// the selected snapshot on the clean test split.
pub fn fit_and_score(
    splits: &Splits,
    train_labels: &LabelMatrix,
    config: &TrainConfig,
    handling: Option<&HandlingResult>,
) -> Result<(TrainOutcome, MetricsReport)> {
    let train_set = splits.train.with_labels(train_labels.clone())?;
    let outcome = match handling {
        Some(h) => train_with_static_handling(&train_set, &splits.val, config, h)?,
        None => train(&train_set, &splits.val, config)?,
    };
    let report = score(&outcome, &splits.test)?;
    Ok((outcome, report))
}

pub fn score(outcome: &TrainOutcome, test: &MultiLabelDataset) -> Result<MetricsReport> {
    let probs = predict(&outcome.params, test.features())?;
    map_macro(&probs, test.labels())
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `k=v` pairs joined by `;`, the form that is hashed.
pub fn canonical(entries: &[(&str, String)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Renders rows as CSV with `\n` line endings and minimal quoting.
pub(crate) fn render_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing memory writer")).expect("CSV of UTF-8 fields")
}

/// One line per configuration row: `row,config_hash,status,config`.
pub fn configs_csv(entries: &[(String, String)]) -> String {
    let rows: Vec<Vec<String>> = entries
        .iter()
        .enumerate()
        .map(|(i, (status, cfg))| {
            vec![i.to_string(), config_hash(cfg), status.clone(), cfg.clone()]
        })
        .collect();
    render_csv(&header(&["row", "config_hash", "status", "config"]), &rows)
}

pub(crate) fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Writes `(file name, contents)` pairs into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

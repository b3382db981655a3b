//! Metrics CSV and JSON summaries.

use std::fs;
use std::path::Path;

use feddrop_core::analysis::{AmbientRanking, SubModelReport};
use feddrop_core::feddrop::{DropoutConfig, DropoutMapping};
use feddrop_core::fedsim::RoundRecord;
use feddrop_core::nn::Arch;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `metrics.csv`.
pub const CSV_COLUMNS: [&str; 7] =
    ["round", "eval_error", "eval_loss", "train_loss", "client_params", "bytes_up", "bytes_down"];

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CsvRow {
    pub round: u64,
    pub eval_error: f64,
    pub eval_loss: f64,
    pub train_loss: f64,
    pub client_params: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl From<&RoundRecord> for CsvRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            eval_error: r.eval_error,
            eval_loss: r.eval_loss,
            train_loss: r.train_loss,
            client_params: r.client_model_param_count,
            bytes_up: r.bytes_up,
            bytes_down: r.bytes_down,
        }
    }
}

pub fn metrics_csv(history: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if history.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in history {
        w.serialize(CsvRow::from(r))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv flush failed: {e}")))
}

pub fn write_metrics_csv(history: &[RoundRecord], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(history)?).map_err(|e| Error::io(path, e))
}

/// `summary.json` for `train` and `adapt`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainSummary {
    pub experiment: String,
    pub arch: Arch,
    pub rounds: usize,
    pub final_error: Option<f64>,
    pub best_error: Option<f64>,
    pub target_error: Option<f64>,
    pub rounds_to_target: Option<u64>,
    pub dropout: DropoutConfig,
    pub size_reduction: f64,
    pub full_param_count: usize,
    pub client_param_count: usize,
    /// Baseline errors before adaptation (adapt only).
    pub baseline_holdout_error: Option<f64>,
    pub baseline_seen_error: Option<f64>,
    /// Mappings of the last round, one list of kept indices per block and client.
    pub final_round_mappings: Vec<DropoutMapping>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationReport {
    pub ranking: AmbientRanking,
    pub base_rate: f64,
    pub extra: Vec<f64>,
    pub assigned_rates: Vec<f64>,
    pub flat_size_reduction: f64,
    pub assigned_size_reduction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubModelSummary {
    pub full_model_error: f64,
    pub report: SubModelReport,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SizeRow {
    pub rate: f64,
    pub size_reduction: f64,
    pub size_reduction_pct: f64,
    pub client_param_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SizeReport {
    pub ff_fraction: f64,
    pub total_params_target: usize,
    pub arch: Arch,
    pub full_param_count: usize,
    pub ff_share: f64,
    pub rows: Vec<SizeRow>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

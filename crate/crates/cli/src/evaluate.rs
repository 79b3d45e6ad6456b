//! Scoring restored files against their clean references.

use std::fs;
use std::path::Path;

use resyn_core::manifest::PairItem;
use resyn_core::metrics::{evaluate_set, EvalItem, EvalReport};
use resyn_core::signal::StftConfig;
use resyn_models::encoder::{EncoderState, TapFeatures};

use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Pairs each `noisy<TAB>clean` entry with the restored file of the same
/// name under `restored_dir`.
pub fn eval_items(pairs: &[PairItem], restored_dir: &Path) -> Vec<EvalItem> {
    pairs
        .iter()
        .map(|p| {
            let name = p.noisy.file_name().unwrap_or(p.noisy.as_os_str());
            EvalItem {
                id: Path::new(name).file_stem().unwrap_or(name).to_string_lossy().into_owned(),
                clean: p.clean.clone(),
                noisy: p.noisy.clone(),
                restored: restored_dir.join(name),
            }
        })
        .collect()
}

/// Scores noisy and restored audio; feature distances use the encoder's
/// tap features.
pub fn evaluate(items: &[EvalItem], encoder: &EncoderState, seed: u64) -> Result<EvalReport> {
    let stft = StftConfig::hann(512, 128)?;
    Ok(evaluate_set(items, &TapFeatures(encoder), &stft, BOOTSTRAP_RESAMPLES, seed)?)
}

/// Writes `metrics.csv` and `summary.json` into `out`.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join(METRICS_FILE);
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let json = out.join(SUMMARY_FILE);
    fs::write(&json, serde_json::to_string_pretty(&report.summary)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

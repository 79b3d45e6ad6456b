//! Peak-memory and real-time-factor measurements per batch size.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::info;

use resyn_core::synth;
use resyn_core::SAMPLE_RATE;
use resyn_models::adapter::{Cleaner, CleanerMode};
use resyn_models::encoder::EncoderState;
use resyn_models::vocoder::{MemoryReport, Variant, Vocoder};

use crate::checkpoint;
use crate::config::{BenchmarkConfig, Config};
use crate::error::{Error, Result};
use crate::pipeline::Stage;
use crate::restore::{chunk_seed, Restorer};

const MB: f64 = 1024.0 * 1024.0;
const F32_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RowStatus {
    Ok,
    Oom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub batch_size: usize,
    pub status: RowStatus,
    pub peak_memory_mb: f64,
    pub activation_bytes: usize,
    pub param_bytes: usize,
    /// Timed repeats, in seconds; empty for OOM rows.
    pub timings_seconds: Vec<f64>,
    /// Median of `timings_seconds`.
    pub wall_seconds: Option<f64>,
    pub rtf: Option<f64>,
}

/// One published measurement, kept for side-by-side reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub batch_size: usize,
    pub variant: Variant,
    pub peak_memory_mb: Option<f64>,
    pub rtf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub hardware: String,
    pub precision: String,
    pub chunk_seconds: f64,
    pub rows: Vec<ReferenceRow>,
    pub batch1_memory_reduction: f64,
}

impl ReferenceTable {
    pub fn published() -> Self {
        let row = |batch_size, variant, mem, rtf| ReferenceRow {
            batch_size,
            variant,
            peak_memory_mb: mem,
            rtf,
        };
        use Variant::{MemoryEfficient as M, Vanilla as V};
        Self {
            hardware: "TPU v4i".into(),
            precision: "bfloat16".into(),
            chunk_seconds: 30.0,
            rows: vec![
                row(1, V, Some(5612.94), Some(0.0565)),
                row(1, M, Some(2694.98), Some(0.0555)),
                row(2, V, None, None),
                row(2, M, Some(3228.50), Some(0.0253)),
                row(4, V, None, None),
                row(4, M, Some(4434.69), Some(0.0130)),
                row(8, V, None, None),
                row(8, M, Some(6635.06), Some(0.0078)),
            ],
            batch1_memory_reduction: 0.52,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub variant: Variant,
    pub chunk_seconds: f64,
    /// Set when no matching trained vocoder was available.
    pub random_weights: bool,
    pub memory_budget_mb: Option<f64>,
    pub warmup: usize,
    pub repeats: usize,
    pub rows: Vec<BenchmarkRow>,
    /// Process resident-set high-water mark, where the host reports one.
    pub host_peak_rss_mb: Option<f64>,
    pub reference: ReferenceTable,
}

impl BenchmarkReport {
    /// Checks that each row's derived fields follow from its raw ones.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        for r in &self.rows {
            let expect_mb = (r.activation_bytes + r.param_bytes) as f64 / MB;
            if (expect_mb - r.peak_memory_mb).abs() > 1e-9 * expect_mb.max(1.0) {
                return Err(format!("batch {}: peak memory {} != {}", r.batch_size, r.peak_memory_mb, expect_mb));
            }
            match r.status {
                RowStatus::Oom => {
                    if r.rtf.is_some() || r.wall_seconds.is_some() || !r.timings_seconds.is_empty() {
                        return Err(format!("batch {}: OOM row carries timings", r.batch_size));
                    }
                }
                RowStatus::Ok => {
                    let (Some(wall), Some(rtf)) = (r.wall_seconds, r.rtf) else {
                        return Err(format!("batch {}: missing timings", r.batch_size));
                    };
                    if median(&r.timings_seconds) != Some(wall) {
                        return Err(format!("batch {}: wall time is not the median", r.batch_size));
                    }
                    let expect = wall / (r.batch_size as f64 * self.chunk_seconds);
                    if (expect - rtf).abs() > 1e-12 * expect.max(1e-12) {
                        return Err(format!("batch {}: rtf {rtf} != {expect}", r.batch_size));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `VmHWM` from `/proc/self/status`, in MB.
pub fn host_peak_rss_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// Models to time. Trained checkpoints are used when present and their
/// vocoder matches `variant`; otherwise the missing parts are seeded random
/// weights and the result says so.
pub fn load_models(checkpoints: Option<&Path>, cfg: &Config, variant: Variant) -> Result<(Restorer, bool)> {
    if let Some(root) = checkpoints {
        if checkpoint::is_complete(root, Stage::VocoderFinetune) {
            let meta = checkpoint::read_meta(root, Stage::VocoderFinetune)?;
            let trained_variant = meta.vocoder.as_ref().map(|v| v.variant);
            let restorer = Restorer::load(root)?;
            if trained_variant == Some(variant) {
                return Ok((restorer, false));
            }
            let vocoder = Vocoder::init(&restorer.vocoder.config.clone().with_variant(variant), cfg.seed)?;
            return Ok((Restorer { vocoder, ..restorer }, true));
        }
    }
    let encoder = EncoderState::init(cfg.encoder.model.clone(), cfg.seed)?;
    let cleaner = Cleaner::init(cfg.cleaner.mode, &encoder, &cfg.cleaner.adapter, cfg.seed)?;
    let cleaner = Cleaner::from_params(cfg.cleaner.mode, &encoder, &cfg.cleaner.adapter, cleaner.params)?;
    let vocoder = Vocoder::init(&cfg.vocoder.model.clone().with_variant(variant), cfg.seed)?;
    Ok((
        Restorer {
            encoder,
            cleaner,
            vocoder,
        },
        true,
    ))
}

fn param_bytes(r: &Restorer) -> usize {
    let encoder = match r.cleaner.mode {
        CleanerMode::FullFinetune => 0,
        _ => r.encoder.params.num_params(),
    };
    (encoder + r.cleaner.params.num_params() + r.vocoder.num_params()) * F32_BYTES
}

/// Times the full restoration path on `batch` synthetic chunks per call.
pub fn benchmark(restorer: &Restorer, random_weights: bool, bench: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if bench.repeats == 0 || bench.batch_sizes.contains(&0) {
        return Err(Error::Config("benchmark needs positive repeats and batch sizes".into()));
    }
    let hop = restorer.vocoder.config.hop();
    let samples = ((bench.chunk_seconds * SAMPLE_RATE as f64).round() as usize).div_ceil(hop) * hop;
    let frames = samples / hop;
    let chunk_seconds = samples as f64 / SAMPLE_RATE as f64;
    let params = param_bytes(restorer);
    let max_batch = bench.batch_sizes.iter().copied().max().unwrap_or(1);
    let pool: Vec<Vec<f32>> = (0..max_batch)
        .map(|i| {
            let w = synth::speech_utterance(0x5eed + i as u64, chunk_seconds);
            let mut s = w.samples;
            s.resize(samples, 0.0);
            s
        })
        .collect();

    let mut rows = Vec::new();
    for &b in &bench.batch_sizes {
        let mem = MemoryReport::analytic(&restorer.vocoder.config, b, frames)?;
        let activation_bytes = mem.peak_elements * F32_BYTES;
        let peak_memory_mb = (activation_bytes + params) as f64 / MB;
        let over = bench.memory_budget_mb.is_some_and(|budget| peak_memory_mb > budget);
        if over {
            info!(batch = b, peak_memory_mb, "over memory budget");
            rows.push(BenchmarkRow {
                batch_size: b,
                status: RowStatus::Oom,
                peak_memory_mb,
                activation_bytes,
                param_bytes: params,
                timings_seconds: Vec::new(),
                wall_seconds: None,
                rtf: None,
            });
            continue;
        }
        let inputs: Vec<&[f32]> = pool[..b].iter().map(Vec::as_slice).collect();
        let seeds: Vec<u64> = (0..b).map(|i| chunk_seed(0, i, 0)).collect();
        for _ in 0..bench.warmup {
            restorer.process(&inputs, &seeds)?;
        }
        let mut timings = Vec::with_capacity(bench.repeats);
        for _ in 0..bench.repeats {
            let t = Instant::now();
            restorer.process(&inputs, &seeds)?;
            timings.push(t.elapsed().as_secs_f64());
        }
        let wall = median(&timings).expect("repeats > 0");
        let rtf = wall / (b as f64 * chunk_seconds);
        info!(batch = b, wall, rtf, peak_memory_mb, "benchmark row");
        rows.push(BenchmarkRow {
            batch_size: b,
            status: RowStatus::Ok,
            peak_memory_mb,
            activation_bytes,
            param_bytes: params,
            timings_seconds: timings,
            wall_seconds: Some(wall),
            rtf: Some(rtf),
        });
    }
    Ok(BenchmarkReport {
        variant: restorer.vocoder.config.variant,
        chunk_seconds,
        random_weights,
        memory_budget_mb: bench.memory_budget_mb,
        warmup: bench.warmup,
        repeats: bench.repeats,
        rows,
        host_peak_rss_mb: host_peak_rss_mb(),
        reference: ReferenceTable::published(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn published_reduction_matches_rows() {
        let t = ReferenceTable::published();
        let get = |v| t.rows.iter().find(|r| r.batch_size == 1 && r.variant == v).unwrap().peak_memory_mb.unwrap();
        let red = 1.0 - get(Variant::MemoryEfficient) / get(Variant::Vanilla);
        assert!((red - t.batch1_memory_reduction).abs() < 0.005, "{red}");
    }
}

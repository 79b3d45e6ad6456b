//! Reference-based objective metrics and the noisy-vs-restored summary.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{read_wav, stft, StftConfig, Waveform};

/// Upper bound reported by [`si_snr`].
pub const SI_SNR_CAP_DB: f64 = 60.0;
const LSD_FLOOR: f64 = 1e-8;

/// Scale-invariant SNR in dB, capped at [`SI_SNR_CAP_DB`].
pub fn si_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let r: Vec<f64> = reference.samples.iter().map(|&v| v as f64).collect();
    let e: Vec<f64> = estimate.samples.iter().map(|&v| v as f64).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::Silent("reference"));
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (a, b) in r.iter().zip(&e) {
        let t = alpha * a;
        target += t * t;
        residual += (b - t) * (b - t);
    }
    if residual == 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SNR_CAP_DB))
}

/// RMS over frames of the per-frame RMS log-magnitude difference, in dB.
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform, cfg: &StftConfig) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let a = stft(reference, cfg)?;
    let b = stft(estimate, cfg)?;
    let nb = a.num_bins();
    let mut acc = 0.0;
    for t in 0..a.num_frames {
        let per_frame: f64 = a
            .frame(t)
            .iter()
            .zip(b.frame(t))
            .map(|(x, y)| {
                let d = 20.0 * (x.norm().max(LSD_FLOOR) / y.norm().max(LSD_FLOOR)).log10();
                d * d
            })
            .sum::<f64>()
            / nb as f64;
        acc += per_frame;
    }
    Ok((acc / a.num_frames as f64).sqrt())
}

/// Time-major feature matrix (frames x dim), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// `||target - pred||_F / ||target||_F`.
pub fn spectral_convergence(pred: &FeatureMatrix, target: &FeatureMatrix) -> Result<f64> {
    if pred.dim != target.dim {
        return Err(Error::ShapeMismatch(format!("dim {} vs {}", pred.dim, target.dim)));
    }
    // vocoded audio may differ by a frame; compare the common prefix
    let n = pred.frames.min(target.frames) * pred.dim;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (p, t) in pred.data[..n].iter().zip(&target.data[..n]) {
        num += ((t - p) as f64).powi(2);
        den += (*t as f64).powi(2);
    }
    Ok(num.sqrt() / den.sqrt().max(1e-12))
}

/// Anything that can map audio to the feature space used for `feat_sc`.
pub trait FeatureExtractor {
    fn features(&self, wave: &Waveform) -> Result<FeatureMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Noisy,
    Restored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub file_id: String,
    pub condition: Condition,
    pub si_snr_db: f64,
    pub lsd_db: f64,
    pub feat_sc: f64,
}

/// Mean with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% percentile-bootstrap interval of the mean.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Estimate {
        mean,
        ci_low: pick(0.025),
        ci_high: pick(0.975),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub si_snr_db: Estimate,
    pub lsd_db: Estimate,
    pub feat_sc: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub items: usize,
    pub noisy: ConditionSummary,
    pub restored: ConditionSummary,
    /// Per-item `restored - noisy` SI-SNR.
    pub si_snr_gain_db: Estimate,
    /// Relative feature-SC reduction, `1 - mean(restored) / mean(noisy)`.
    pub feat_sc_reduction: f64,
    pub missing: Vec<String>,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub restored: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file_id,condition,si_snr_db,lsd_db,feat_sc\n");
        for r in &self.rows {
            let cond = match r.condition {
                Condition::Noisy => "noisy",
                Condition::Restored => "restored",
            };
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                r.file_id, cond, r.si_snr_db, r.lsd_db, r.feat_sc
            ));
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.summary.missing.is_empty()
    }
}

fn condition_row(
    id: &str,
    condition: Condition,
    clean: &Waveform,
    clean_feats: &FeatureMatrix,
    estimate: &Waveform,
    features: &dyn FeatureExtractor,
    cfg: &StftConfig,
) -> Result<MetricRow> {
    Ok(MetricRow {
        file_id: id.to_string(),
        condition,
        si_snr_db: si_snr(clean, estimate)?,
        lsd_db: log_spectral_distance(clean, estimate, cfg)?,
        feat_sc: spectral_convergence(&features.features(estimate)?, clean_feats)?,
    })
}

fn summarize(rows: &[&MetricRow], resamples: usize, seed: u64) -> ConditionSummary {
    let col = |f: fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
    ConditionSummary {
        si_snr_db: bootstrap_mean(&col(|r| r.si_snr_db), resamples, seed),
        lsd_db: bootstrap_mean(&col(|r| r.lsd_db), resamples, seed.wrapping_add(1)),
        feat_sc: bootstrap_mean(&col(|r| r.feat_sc), resamples, seed.wrapping_add(2)),
    }
}

/// Scores noisy and restored audio against clean references. Items whose
/// files are missing or unreadable are listed in `summary.missing` and left
/// out of the means.
pub fn evaluate_set(
    items: &[EvalItem],
    features: &dyn FeatureExtractor,
    cfg: &StftConfig,
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for item in items {
        let scored = (|| -> Result<(MetricRow, MetricRow)> {
            let clean = read_wav(&item.clean)?;
            let noisy = read_wav(&item.noisy)?;
            let restored = read_wav(&item.restored)?;
            let clean_feats = features.features(&clean)?;
            Ok((
                condition_row(&item.id, Condition::Noisy, &clean, &clean_feats, &noisy, features, cfg)?,
                condition_row(&item.id, Condition::Restored, &clean, &clean_feats, &restored, features, cfg)?,
            ))
        })();
        match scored {
            Ok((n, r)) => {
                rows.push(n);
                rows.push(r);
            }
            Err(_) => missing.push(item.id.clone()),
        }
    }
    let noisy: Vec<&MetricRow> = rows.iter().filter(|r| r.condition == Condition::Noisy).collect();
    let restored: Vec<&MetricRow> = rows.iter().filter(|r| r.condition == Condition::Restored).collect();
    let gain: Vec<f64> = noisy
        .iter()
        .zip(&restored)
        .map(|(n, r)| r.si_snr_db - n.si_snr_db)
        .collect();
    let noisy_summary = summarize(&noisy, resamples, seed);
    let restored_summary = summarize(&restored, resamples, seed.wrapping_add(10));
    let summary = EvalSummary {
        items: noisy.len(),
        feat_sc_reduction: 1.0 - restored_summary.feat_sc.mean / noisy_summary.feat_sc.mean,
        noisy: noisy_summary,
        restored: restored_summary,
        si_snr_gain_db: bootstrap_mean(&gain, resamples, seed.wrapping_add(20)),
        missing,
        resamples,
        seed,
    };
    Ok(EvalReport { rows, summary })
}

//! Run configuration: one TOML file, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use resyn_core::degradation::RoomSampler;
use resyn_models::adapter::{AdapterConfig, CleanerMode, CleanerTrainOptions};
use resyn_models::bestrq::PretrainOptions;
use resyn_models::encoder::ConformerConfig;
use resyn_models::vocoder::{Variant, VocoderConfig, VocoderTrainOptions};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderSection,
    pub cleaner: CleanerSection,
    pub vocoder: VocoderSection,
    pub restore: RestoreConfig,
    pub benchmark: BenchmarkConfig,
    pub reference: ReferenceSchedule,
}

/// Where training audio comes from. Without manifests, speech and noise
/// are synthesized procedurally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `path<TAB>duration` list of clean speech for encoder and vocoder
    /// pretraining.
    pub clean_manifest: Option<PathBuf>,
    /// `noisy<TAB>clean` list for cleaner training and vocoder finetuning.
    pub pair_manifest: Option<PathBuf>,
    /// `path<TAB>duration` list of noise clips for on-the-fly degradation.
    pub noise_manifest: Option<PathBuf>,
    pub synthetic_hours: f64,
    pub clip_seconds: f64,
    pub noise_per_kind: usize,
    pub noise_seconds: f64,
    pub rooms: RoomSampler,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clean_manifest: None,
            pair_manifest: None,
            noise_manifest: None,
            synthetic_hours: 2.0,
            clip_seconds: 4.0,
            noise_per_kind: 4,
            noise_seconds: 10.0,
            rooms: RoomSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub model: ConformerConfig,
    /// Masked-prediction pretraining; when off the encoder keeps its seeded
    /// random weights.
    pub pretrain: bool,
    pub quantizer_seed: u64,
    pub options: PretrainOptions,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            model: ConformerConfig::desk(),
            pretrain: false,
            quantizer_seed: 7,
            options: PretrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanerSection {
    pub mode: CleanerMode,
    pub adapter: AdapterConfig,
    pub train: CleanerTrainOptions,
}

impl Default for CleanerSection {
    fn default() -> Self {
        Self {
            mode: CleanerMode::Adapter,
            adapter: AdapterConfig::desk(),
            train: CleanerTrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderSection {
    pub model: VocoderConfig,
    pub pretrain: VocoderTrainOptions,
    pub finetune: VocoderTrainOptions,
}

impl Default for VocoderSection {
    fn default() -> Self {
        Self {
            model: VocoderConfig::desk(ConformerConfig::desk().model_dim),
            pretrain: VocoderTrainOptions::default(),
            finetune: VocoderTrainOptions {
                seed: 1,
                reference_steps: ReferenceSchedule::default().vocoder_finetune_steps,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreConfig {
    pub chunk_seconds: f64,
    pub overlap_seconds: f64,
    pub batch: usize,
    pub seed: u64,
    /// Files read ahead of the inference loop.
    pub prefetch: usize,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            chunk_seconds: 30.0,
            overlap_seconds: 1.0,
            batch: 8,
            seed: 0,
            prefetch: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub batch_sizes: Vec<usize>,
    pub chunk_seconds: f64,
    pub warmup: usize,
    pub repeats: usize,
    /// Rows whose estimated peak exceeds this are reported as OOM.
    pub memory_budget_mb: Option<f64>,
    pub variant: Variant,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 2, 4, 8],
            chunk_seconds: 30.0,
            warmup: 1,
            repeats: 5,
            memory_budget_mb: None,
            variant: Variant::MemoryEfficient,
        }
    }
}

/// Full-scale training schedule, stored in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSchedule {
    pub adapter_steps: usize,
    pub vocoder_pretrain_steps: usize,
    pub vocoder_finetune_steps: usize,
    pub batch: usize,
}

impl Default for ReferenceSchedule {
    fn default() -> Self {
        Self {
            adapter_steps: 800_000,
            vocoder_pretrain_steps: 200_000,
            vocoder_finetune_steps: 675_000,
            batch: 512,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            encoder: EncoderSection::default(),
            cleaner: CleanerSection::default(),
            vocoder: VocoderSection::default(),
            restore: RestoreConfig::default(),
            benchmark: BenchmarkConfig::default(),
            reference: ReferenceSchedule::default(),
        }
    }
}

impl Config {
    /// Small models and short schedules for smoke runs and tests.
    pub fn tiny() -> Self {
        let enc = ConformerConfig::tiny();
        let stage = VocoderTrainOptions {
            steps: 20,
            batch: 2,
            crop_seconds: 0.64,
            learning_rate: 1e-3,
            disc_learning_rate: 1e-3,
            disc_width: 4,
            ..Default::default()
        };
        Self {
            data: DataConfig {
                synthetic_hours: 0.05,
                clip_seconds: 2.0,
                noise_per_kind: 1,
                noise_seconds: 4.0,
                rooms: RoomSampler {
                    max_order: 4,
                    ..Default::default()
                },
                ..Default::default()
            },
            encoder: EncoderSection {
                model: enc.clone(),
                options: PretrainOptions {
                    steps: 20,
                    batch: 2,
                    vocab: 64,
                    ..Default::default()
                },
                ..Default::default()
            },
            cleaner: CleanerSection {
                adapter: AdapterConfig::for_encoder(&enc, 16),
                train: CleanerTrainOptions {
                    steps: 20,
                    batch: 4,
                    crop_seconds: 1.0,
                    ..Default::default()
                },
                ..Default::default()
            },
            vocoder: VocoderSection {
                model: VocoderConfig::tiny(enc.model_dim),
                pretrain: stage.clone(),
                finetune: VocoderTrainOptions {
                    seed: 1,
                    reference_steps: ReferenceSchedule::default().vocoder_finetune_steps,
                    ..stage
                },
            },
            restore: RestoreConfig {
                chunk_seconds: 2.0,
                overlap_seconds: 0.2,
                batch: 4,
                ..Default::default()
            },
            benchmark: BenchmarkConfig {
                chunk_seconds: 1.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|source| Error::TomlParse {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.clean_manifest,
            &mut self.data.pair_manifest,
            &mut self.data.noise_manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved configuration to `dir/resolved_config.toml`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.model.validate()?;
        let dim = self.encoder.model.model_dim;
        if self.cleaner.adapter.io_dim != dim {
            return Err(Error::Config(format!(
                "cleaner.adapter.io_dim {} must equal encoder.model.model_dim {dim}",
                self.cleaner.adapter.io_dim
            )));
        }
        if self.vocoder.model.cond_dim != dim {
            return Err(Error::Config(format!(
                "vocoder.model.cond_dim {} must equal encoder.model.model_dim {dim}",
                self.vocoder.model.cond_dim
            )));
        }
        self.vocoder.model.validate()?;
        if self.restore.batch == 0 || self.restore.prefetch == 0 {
            return Err(Error::Config("restore.batch and restore.prefetch must be positive".into()));
        }
        if self.benchmark.repeats == 0 || self.benchmark.batch_sizes.contains(&0) {
            return Err(Error::Config("benchmark repeats and batch sizes must be positive".into()));
        }
        if !(self.data.synthetic_hours > 0.0 && self.data.clip_seconds > 0.0) {
            return Err(Error::Config("synthetic data size must be positive".into()));
        }
        Ok(())
    }
}

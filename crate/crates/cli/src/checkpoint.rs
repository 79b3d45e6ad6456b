//! Stage checkpoints: a safetensors parameter blob plus `meta.json`.
//!
//! `meta.json` is written last, so a directory without it is an interrupted
//! stage and is ignored on resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use resyn_models::adapter::{AdapterConfig, AdapterReference, Cleaner, CleanerMode};
use resyn_models::encoder::{ConformerConfig, EncoderReference, EncoderState};
use resyn_models::params::ParamStore;
use resyn_models::vocoder::{Discriminators, TrainedVocoder, Vocoder, VocoderConfig, VocoderReference};

use crate::config::ReferenceSchedule;
use crate::error::{Error, Result};
use crate::pipeline::Stage;

pub const PARAMS_FILE: &str = "params.safetensors";
pub const DISC_FILE: &str = "discriminators.safetensors";
pub const META_FILE: &str = "meta.json";

/// Full-scale dimensions the desk models stand in for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDims {
    pub encoder: EncoderReference,
    pub adapter: AdapterReference,
    pub vocoder: VocoderReference,
}

impl Default for ReferenceDims {
    fn default() -> Self {
        Self {
            encoder: EncoderReference::paper(),
            adapter: AdapterReference::paper(),
            vocoder: VocoderReference::paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanerMeta {
    pub mode: CleanerMode,
    pub adapter: AdapterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub version: String,
    pub seed: u64,
    pub steps: usize,
    pub content_hash: String,
    pub num_params: usize,
    pub encoder: ConformerConfig,
    pub cleaner: Option<CleanerMeta>,
    pub vocoder: Option<VocoderConfig>,
    pub disc_width: Option<usize>,
    /// Content hashes of the checkpoints this stage consumed.
    pub upstream: BTreeMap<String, String>,
    /// Frozen-quantizer hash when the encoder was pretrained.
    pub quantizer_hash: Option<String>,
    pub reference_schedule: ReferenceSchedule,
    pub reference_dims: ReferenceDims,
}

impl CheckpointMeta {
    pub fn new(stage: Stage, encoder: &ConformerConfig, reference: ReferenceSchedule) -> Self {
        Self {
            stage,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: 0,
            steps: 0,
            content_hash: String::new(),
            num_params: 0,
            encoder: encoder.clone(),
            cleaner: None,
            vocoder: None,
            disc_width: None,
            upstream: BTreeMap::new(),
            quantizer_hash: None,
            reference_schedule: reference,
            reference_dims: ReferenceDims::default(),
        }
    }
}

pub fn stage_dir(root: &Path, stage: Stage) -> PathBuf {
    root.join(stage.name())
}

/// Whether `stage` finished under `root` and its parameters still match the
/// recorded hash.
pub fn is_complete(root: &Path, stage: Stage) -> bool {
    read_meta(root, stage)
        .and_then(|m| {
            let params = ParamStore::load(stage_dir(root, stage).join(PARAMS_FILE), m.seed)?;
            Ok(params.content_hash()? == m.content_hash)
        })
        .unwrap_or(false)
}

pub fn read_meta(root: &Path, stage: Stage) -> Result<CheckpointMeta> {
    let path = stage_dir(root, stage).join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes parameters (and optional discriminator weights), then the meta
/// record with the parameter hash filled in.
pub fn save(
    root: &Path,
    mut meta: CheckpointMeta,
    params: &ParamStore,
    discriminators: Option<&ParamStore>,
) -> Result<CheckpointMeta> {
    let dir = stage_dir(root, meta.stage);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta_path = dir.join(META_FILE);
    if meta_path.exists() {
        fs::remove_file(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    }
    params.save(dir.join(PARAMS_FILE))?;
    if let Some(d) = discriminators {
        d.save(dir.join(DISC_FILE))?;
    }
    meta.content_hash = params.content_hash()?;
    meta.num_params = params.num_params();
    meta.seed = params.seed();
    let tmp = dir.join("meta.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &meta_path).map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

fn require(root: &Path, stage: Stage, needed_by: &str) -> Result<(CheckpointMeta, ParamStore)> {
    let missing = || Error::MissingCheckpoint {
        stage,
        needed_by: needed_by.to_string(),
        path: stage_dir(root, stage),
    };
    let meta = read_meta(root, stage).map_err(|_| missing())?;
    let path = stage_dir(root, stage).join(PARAMS_FILE);
    let params = ParamStore::load(&path, meta.seed).map_err(|_| missing())?;
    let hash = params.content_hash()?;
    if hash != meta.content_hash {
        return Err(Error::CorruptCheckpoint {
            path,
            msg: format!("hash {hash} does not match recorded {}", meta.content_hash),
        });
    }
    Ok((meta, params))
}

pub fn load_encoder(root: &Path, needed_by: &str) -> Result<(CheckpointMeta, EncoderState)> {
    let (meta, params) = require(root, Stage::Encoder, needed_by)?;
    let enc = EncoderState::from_params(meta.encoder.clone(), params, true)?;
    Ok((meta, enc))
}

pub fn load_cleaner(root: &Path, enc: &EncoderState, needed_by: &str) -> Result<(CheckpointMeta, Cleaner)> {
    let (meta, params) = require(root, Stage::Cleaner, needed_by)?;
    let info = meta.cleaner.clone().ok_or_else(|| Error::CorruptCheckpoint {
        path: stage_dir(root, Stage::Cleaner),
        msg: "no cleaner record in meta.json".into(),
    })?;
    let cleaner = Cleaner::from_params(info.mode, enc, &info.adapter, params)?;
    Ok((meta, cleaner))
}

/// Loads a vocoder stage with its discriminators, ready to continue
/// training or to run inference.
pub fn load_vocoder(root: &Path, stage: Stage, needed_by: &str) -> Result<(CheckpointMeta, TrainedVocoder)> {
    let (meta, params) = require(root, stage, needed_by)?;
    let corrupt = |msg: &str| Error::CorruptCheckpoint {
        path: stage_dir(root, stage),
        msg: msg.to_string(),
    };
    let cfg = meta.vocoder.clone().ok_or_else(|| corrupt("no vocoder record in meta.json"))?;
    let width = meta.disc_width.ok_or_else(|| corrupt("no discriminator width in meta.json"))?;
    let disc_params = ParamStore::load(stage_dir(root, stage).join(DISC_FILE), meta.seed)?;
    let vocoder = Vocoder::from_params(&cfg, params)?;
    let discriminators = Discriminators::with_params(disc_params, width)?;
    Ok((
        meta,
        TrainedVocoder {
            vocoder,
            discriminators,
            curve: Vec::new(),
        },
    ))
}

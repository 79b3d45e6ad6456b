//! Writing simulated noisy/clean sets to disk.

use std::fs;
use std::path::{Path, PathBuf};

use tracing::info;

use resyn_core::degradation::{degrade, sample_recipe, NoiseBank, RoomSampler};
use resyn_core::manifest::{read_audio_manifest, write_audio_manifest, write_pair_manifest, AudioItem, PairItem};
use resyn_core::signal::{read_wav, write_wav, WavEncoding};
use resyn_core::{synth, Waveform};

use crate::error::{Error, Result};

pub const PAIRS_MANIFEST: &str = "pairs.tsv";
pub const NOISY_MANIFEST: &str = "noisy.tsv";

/// `count` procedural utterances named `utt_0000`, `utt_0001`, ...
pub fn synthetic_clean(seed: u64, count: usize, seconds: f64) -> Vec<(String, Waveform)> {
    (0..count)
        .map(|i| {
            let w = synth::speech_utterance(seed.wrapping_mul(0x2545_f491).wrapping_add(i as u64), seconds);
            (format!("utt_{i:04}"), w)
        })
        .collect()
}

/// Clean files listed in an audio manifest, named by file stem.
pub fn manifest_clean(path: &Path) -> Result<Vec<(String, Waveform)>> {
    read_audio_manifest(path)?
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let stem = item
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("utt_{i:04}"));
            Ok((stem, read_wav(&item.path)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradedSet {
    pub pairs: Vec<PairItem>,
    pub noisy: Vec<AudioItem>,
}

/// Degrades each clean item with a recipe drawn from `seed` and its index.
/// Writes `noisy/`, `clean/`, `recipes/` plus `pairs.tsv` and `noisy.tsv`
/// (paths relative to `out`).
pub fn write_degraded_set(
    clean: &[(String, Waveform)],
    bank: &NoiseBank,
    rooms: &RoomSampler,
    seed: u64,
    out: &Path,
) -> Result<DegradedSet> {
    for sub in ["noisy", "clean", "recipes"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rel_pairs = Vec::new();
    let mut rel_noisy = Vec::new();
    let mut set = DegradedSet {
        pairs: Vec::new(),
        noisy: Vec::new(),
    };
    for (i, (id, wave)) in clean.iter().enumerate() {
        let recipe = sample_recipe(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), bank, rooms)?;
        let pair = degrade(wave, &recipe, bank)?;
        let noisy_rel = PathBuf::from("noisy").join(format!("{id}.wav"));
        let clean_rel = PathBuf::from("clean").join(format!("{id}.wav"));
        write_wav(out.join(&noisy_rel), &pair.noisy, WavEncoding::Float32)?;
        write_wav(out.join(&clean_rel), &pair.clean, WavEncoding::Float32)?;
        let recipe_path = out.join("recipes").join(format!("{id}.json"));
        fs::write(&recipe_path, recipe.to_json()?).map_err(|e| Error::io(&recipe_path, e))?;
        let duration_seconds = pair.noisy.duration_seconds();
        rel_pairs.push(PairItem {
            noisy: noisy_rel.clone(),
            clean: clean_rel.clone(),
        });
        rel_noisy.push(AudioItem {
            path: noisy_rel.clone(),
            duration_seconds,
        });
        set.pairs.push(PairItem {
            noisy: out.join(&noisy_rel),
            clean: out.join(&clean_rel),
        });
        set.noisy.push(AudioItem {
            path: out.join(&noisy_rel),
            duration_seconds,
        });
    }
    write_pair_manifest(out.join(PAIRS_MANIFEST), &rel_pairs)?;
    write_audio_manifest(out.join(NOISY_MANIFEST), &rel_noisy)?;
    info!(items = clean.len(), out = %out.display(), "wrote degraded set");
    Ok(set)
}

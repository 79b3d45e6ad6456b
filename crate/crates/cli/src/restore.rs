//! Batched restoration of audio files: chunk, clean features, vocode,
//! crossfade back together.
//!
//! A reader thread prefetches and chunks files, the calling thread runs
//! inference on batches of chunks drawn across files, and a writer thread
//! saves finished files. Each chunk's vocoder noise is seeded by
//! `(seed, manifest index, chunk index)`, so output does not depend on batch
//! size, shard layout or file order.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use candle_core::DType;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use resyn_core::signal::{chunk, read_wav, rejoin, write_wav, ChunkLayout, WavEncoding};
use resyn_core::Waveform;
use resyn_models::adapter::Cleaner;
use resyn_models::encoder::EncoderState;
use resyn_models::vocoder::Vocoder;

use crate::checkpoint;
use crate::config::RestoreConfig;
use crate::error::{Error, Result};
use crate::pipeline::Stage;
use crate::shard::ShardManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub chunk_seconds: f64,
    pub overlap_seconds: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub prefetch: usize,
}

impl From<&RestoreConfig> for BatchPlan {
    fn from(c: &RestoreConfig) -> Self {
        Self {
            chunk_seconds: c.chunk_seconds,
            overlap_seconds: c.overlap_seconds,
            batch_size: c.batch,
            seed: c.seed,
            prefetch: c.prefetch,
        }
    }
}

pub fn chunk_seed(seed: u64, item: usize, chunk: usize) -> u64 {
    let mut z = seed ^ ((item as u64) << 24 | chunk as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The inference path: frozen encoder, trained cleaner, finetuned vocoder.
pub struct Restorer {
    pub encoder: EncoderState,
    pub cleaner: Cleaner,
    pub vocoder: Vocoder,
}

impl Restorer {
    /// Loads the finetuned vocoder and everything upstream of it.
    pub fn load(checkpoints: &Path) -> Result<Self> {
        let (_, encoder) = checkpoint::load_encoder(checkpoints, "restore")?;
        let (_, cleaner) = checkpoint::load_cleaner(checkpoints, &encoder, "restore")?;
        let (_, trained) = checkpoint::load_vocoder(checkpoints, Stage::VocoderFinetune, "restore")?;
        Ok(Self {
            encoder,
            cleaner,
            vocoder: trained.vocoder,
        })
    }

    pub fn num_params(&self) -> usize {
        let shared = match self.cleaner.mode {
            resyn_models::adapter::CleanerMode::FullFinetune => 0,
            _ => self.encoder.params.num_params(),
        };
        shared + self.cleaner.params.num_params() + self.vocoder.num_params()
    }

    /// Restores equal-length chunks; chunk `i` draws its noise from
    /// `seeds[i]`. Chunks are zero-padded to whole vocoder frames and the
    /// output is cut back to the input length.
    pub fn process(&self, chunks: &[&[f32]], seeds: &[u64]) -> Result<Vec<Vec<f32>>> {
        let len = chunks.first().map(|c| c.len()).unwrap_or(0);
        if chunks.iter().any(|c| c.len() != len) {
            return Err(Error::Config("chunks in one batch must have equal length".into()));
        }
        if chunks.is_empty() {
            return Ok(Vec::new());
        }
        let hop = self.vocoder.config.hop();
        let padded_len = len.div_ceil(hop).max(1) * hop;
        let padded: Vec<Vec<f32>> = chunks
            .iter()
            .map(|c| {
                let mut v = c.to_vec();
                v.resize(padded_len, 0.0);
                v
            })
            .collect();
        let slices: Vec<&[f32]> = padded.iter().map(Vec::as_slice).collect();
        let feats = self.cleaner.features(&self.encoder, &slices)?;
        let y = self.vocoder.synthesize(&feats, seeds)?.to_dtype(DType::F32)?;
        let rows: Vec<Vec<f32>> = y.to_vec2()?;
        Ok(rows.into_iter().map(|mut r| {
            r.truncate(len);
            r
        }).collect())
    }

    /// Restores one waveform, `plan.batch_size` chunks at a time.
    pub fn restore(&self, wave: &Waveform, plan: &BatchPlan, item: usize) -> Result<Waveform> {
        let (chunks, layout) = chunk(wave, plan.chunk_seconds, plan.overlap_seconds)?;
        let mut out = Vec::with_capacity(chunks.len());
        for (b, group) in chunks.chunks(plan.batch_size.max(1)).enumerate() {
            let seeds: Vec<u64> = (0..group.len())
                .map(|j| chunk_seed(plan.seed, item, b * plan.batch_size + j))
                .collect();
            let slices: Vec<&[f32]> = group.iter().map(|c| c.samples.as_slice()).collect();
            out.extend(self.process(&slices, &seeds)?.into_iter().map(Waveform::from_samples));
        }
        Ok(rejoin(&out, &layout)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileStatus {
    Ok,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub index: usize,
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub status: FileStatus,
    pub duration_seconds: f64,
    pub chunks: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct RestoreReport {
    pub outcomes: Vec<FileOutcome>,
    pub wall_seconds: f64,
}

impl RestoreReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == FileStatus::Skipped).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,input,output,status,duration_seconds,chunks,message\n");
        for o in &self.outcomes {
            let status = match o.status {
                FileStatus::Ok => "ok",
                FileStatus::Skipped => "skipped",
            };
            s.push_str(&format!(
                "{},{},{},{},{:.6},{},\"{}\"\n",
                o.index,
                o.input.display(),
                o.output.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                status,
                o.duration_seconds,
                o.chunks,
                o.message.replace('"', "'")
            ));
        }
        s
    }
}

struct Loaded {
    index: usize,
    input: PathBuf,
    result: Result<(Vec<Waveform>, ChunkLayout)>,
}

struct Pending {
    index: usize,
    input: PathBuf,
    layout: ChunkLayout,
    outputs: Vec<Option<Waveform>>,
    remaining: usize,
}

struct Written {
    index: usize,
    input: PathBuf,
    output: PathBuf,
    duration_seconds: f64,
    chunks: usize,
    result: Result<()>,
}

fn output_path(out_dir: &Path, input: &Path) -> PathBuf {
    out_dir.join(input.file_name().unwrap_or(input.as_os_str()))
}

fn skipped(index: usize, input: PathBuf, e: &Error) -> FileOutcome {
    warn!(file = %input.display(), error = %e, "skipping");
    FileOutcome {
        index,
        input,
        output: None,
        status: FileStatus::Skipped,
        duration_seconds: 0.0,
        chunks: 0,
        message: e.to_string(),
    }
}

/// Restores every file of `shard` into `out_dir` (named after the input
/// file). Unreadable inputs are logged and skipped.
pub fn restore_shard(restorer: &Restorer, shard: &ShardManifest, plan: &BatchPlan, out_dir: &Path) -> Result<RestoreReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let start = Instant::now();
    let batch = plan.batch_size.max(1);
    let mut outcomes = Vec::new();

    std::thread::scope(|scope| -> Result<()> {
        let (load_tx, load_rx) = mpsc::sync_channel::<Loaded>(plan.prefetch.max(1));
        let (write_tx, write_rx) = mpsc::channel::<(usize, PathBuf, Waveform)>();
        let (done_tx, done_rx) = mpsc::channel::<Written>();

        let items = &shard.items;
        scope.spawn(move || {
            for (index, item) in items {
                let result = read_wav(&item.path)
                    .map_err(Error::from)
                    .and_then(|w| Ok(chunk(&w, plan.chunk_seconds, plan.overlap_seconds)?));
                let msg = Loaded {
                    index: *index,
                    input: item.path.clone(),
                    result,
                };
                if load_tx.send(msg).is_err() {
                    break;
                }
            }
        });

        scope.spawn(move || {
            for (index, input, wave) in write_rx {
                let output = output_path(out_dir, &input);
                let result = write_wav(&output, &wave, WavEncoding::Float32).map_err(Error::from);
                let chunks = 0;
                let written = Written {
                    index,
                    input,
                    output,
                    duration_seconds: wave.duration_seconds(),
                    chunks,
                    result,
                };
                if done_tx.send(written).is_err() {
                    break;
                }
            }
        });

        let mut files: BTreeMap<usize, Pending> = BTreeMap::new();
        let mut queue: VecDeque<(usize, usize, Waveform)> = VecDeque::new();
        let mut chunk_counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut loads = load_rx.into_iter();
        let mut exhausted = false;
        loop {
            while queue.len() < batch && !exhausted {
                match loads.next() {
                    None => exhausted = true,
                    Some(Loaded { index, input, result }) => match result {
                        Err(e) => outcomes.push(skipped(index, input, &e)),
                        Ok((chunks, layout)) => {
                            chunk_counts.insert(index, chunks.len());
                            files.insert(
                                index,
                                Pending {
                                    index,
                                    input,
                                    layout,
                                    outputs: vec![None; chunks.len()],
                                    remaining: chunks.len(),
                                },
                            );
                            queue.extend(chunks.into_iter().enumerate().map(|(k, c)| (index, k, c)));
                        }
                    },
                }
            }
            if queue.is_empty() {
                break;
            }
            let group: Vec<(usize, usize, Waveform)> = queue.drain(..batch.min(queue.len())).collect();
            let seeds: Vec<u64> = group.iter().map(|(i, k, _)| chunk_seed(plan.seed, *i, *k)).collect();
            let slices: Vec<&[f32]> = group.iter().map(|(_, _, c)| c.samples.as_slice()).collect();
            match restorer.process(&slices, &seeds) {
                Ok(restored) => {
                    for ((index, k, _), samples) in group.iter().zip(restored) {
                        if let Some(p) = files.get_mut(index) {
                            p.outputs[*k] = Some(Waveform::from_samples(samples));
                            p.remaining -= 1;
                        }
                    }
                }
                Err(e) => {
                    for (index, _, _) in &group {
                        if let Some(p) = files.remove(index) {
                            outcomes.push(skipped(p.index, p.input, &e));
                        }
                    }
                    queue.retain(|(i, _, _)| files.contains_key(i));
                }
            }
            let finished: Vec<usize> = files.iter().filter(|(_, p)| p.remaining == 0).map(|(i, _)| *i).collect();
            for index in finished {
                let p = files.remove(&index).expect("listed above");
                let chunks: Vec<Waveform> = p.outputs.into_iter().map(|o| o.expect("all chunks done")).collect();
                match rejoin(&chunks, &p.layout) {
                    Ok(wave) => {
                        let _ = write_tx.send((p.index, p.input, wave));
                    }
                    Err(e) => outcomes.push(skipped(p.index, p.input, &e.into())),
                }
            }
        }
        drop(write_tx);
        for w in done_rx {
            let chunks = chunk_counts.get(&w.index).copied().unwrap_or(w.chunks);
            outcomes.push(match w.result {
                Ok(()) => {
                    info!(file = %w.input.display(), chunks, "restored");
                    FileOutcome {
                        index: w.index,
                        input: w.input,
                        output: Some(w.output),
                        status: FileStatus::Ok,
                        duration_seconds: w.duration_seconds,
                        chunks,
                        message: String::new(),
                    }
                }
                Err(e) => skipped(w.index, w.input, &e),
            });
        }
        Ok(())
    })?;

    outcomes.sort_by_key(|o| o.index);
    Ok(RestoreReport {
        outcomes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

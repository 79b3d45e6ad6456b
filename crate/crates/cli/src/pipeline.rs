//! Staged training: encoder → cleaner → vocoder pretraining → vocoder
//! finetuning. Every stage reads its inputs from checkpoints on disk, so
//! stages can run separately, resume after interruption, or be repeated.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::info;

use resyn_core::degradation::NoiseBank;
use resyn_core::manifest::{read_audio_manifest, read_pair_manifest};
use resyn_core::synth::noise_bank;
use resyn_models::adapter::{train_cleaner_with, Cleaner, CleanerMode, CleanerPoint, CLEANER_CURVE_HEADER};
use resyn_models::bestrq::{pretrain_bestrq, RandomQuantizer};
use resyn_models::data::{ClipSource, FileClips, FilePairs, PairSource, SyntheticClips, SyntheticPairs};
use resyn_models::encoder::{EncoderState, MEL_FRAMES_PER_FRAME};
use resyn_models::vocoder::{finetune_vocoder, pretrain_vocoder, VocoderPoint, VOCODER_CURVE_HEADER};

use crate::checkpoint::{self, CheckpointMeta, CleanerMeta};
use crate::config::{Config, DataConfig};
use crate::error::{Error, Result};
use crate::plot::{self, Panel, Series};

const NOISE_SALT: u64 = 0x6e6f_6973_65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Encoder,
    Cleaner,
    VocoderPretrain,
    VocoderFinetune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Encoder, Stage::Cleaner, Stage::VocoderPretrain, Stage::VocoderFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::Cleaner => "cleaner",
            Stage::VocoderPretrain => "vocoder-pretrain",
            Stage::VocoderFinetune => "vocoder-finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Output directory layout of a pipeline run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn plot(&self) -> PathBuf {
        self.root.join("curves.svg")
    }

    pub fn curve(&self, name: &str) -> PathBuf {
        self.curves().join(format!("{name}.csv"))
    }
}

pub struct Datasets {
    pub pairs: Box<dyn PairSource>,
    pub clips: Box<dyn ClipSource>,
}

pub fn bank(data: &DataConfig, seed: u64) -> Result<NoiseBank> {
    Ok(match &data.noise_manifest {
        Some(p) => NoiseBank::from_manifest(p)?,
        None => noise_bank(seed ^ NOISE_SALT, data.noise_per_kind, data.noise_seconds)?,
    })
}

fn synthetic_clips(data: &DataConfig, seed: u64) -> SyntheticClips {
    SyntheticClips::hours(seed, data.synthetic_hours, data.clip_seconds)
}

/// Training sources named by the config; synthetic when no manifest is set.
pub fn datasets(data: &DataConfig, seed: u64) -> Result<Datasets> {
    let pairs: Box<dyn PairSource> = match &data.pair_manifest {
        Some(p) => Box::new(FilePairs(read_pair_manifest(p)?)),
        None => Box::new(SyntheticPairs {
            clips: synthetic_clips(data, seed),
            bank: bank(data, seed)?,
            rooms: data.rooms.clone(),
        }),
    };
    let clips: Box<dyn ClipSource> = match (&data.clean_manifest, &data.pair_manifest) {
        (Some(p), _) => Box::new(FileClips(read_audio_manifest(p)?.into_iter().map(|i| i.path).collect())),
        (None, Some(p)) => Box::new(FilePairs(read_pair_manifest(p)?)),
        (None, None) => Box::new(synthetic_clips(data, seed)),
    };
    Ok(Datasets { pairs, clips })
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_cleaner_curve(path: &Path, curve: &[CleanerPoint]) -> Result<()> {
    write_csv(path, CLEANER_CURVE_HEADER, curve.iter().map(CleanerPoint::csv_row))
}

fn progress(stage: Stage, steps: usize) -> impl FnMut(usize, f64) {
    let every = (steps / 10).max(1);
    move |step, total| {
        if (step + 1) % every == 0 || step + 1 == steps {
            info!(%stage, step = step + 1, steps, loss = total, "training");
        }
    }
}

/// Runs one stage unconditionally, overwriting its checkpoint.
pub fn run_stage(cfg: &Config, ws: &Workspace, stage: Stage) -> Result<CheckpointMeta> {
    cfg.validate()?;
    let ck = ws.checkpoints();
    let mut meta = CheckpointMeta::new(stage, &cfg.encoder.model, cfg.reference);
    info!(%stage, "starting stage");
    match stage {
        Stage::Encoder => {
            let enc = if cfg.encoder.pretrain {
                let data = datasets(&cfg.data, cfg.seed)?;
                let opts = &cfg.encoder.options;
                let q = RandomQuantizer::for_mel(
                    cfg.encoder.quantizer_seed,
                    cfg.encoder.model.mel_bins,
                    MEL_FRAMES_PER_FRAME,
                    opts.vocab,
                )?;
                let out = pretrain_bestrq(data.clips.as_ref(), &cfg.encoder.model, &q, opts)?;
                if out.quantizer_hash_before != out.quantizer_hash_after {
                    return Err(resyn_models::Error::FrozenViolation {
                        what: "quantizer",
                        before: out.quantizer_hash_before,
                        after: out.quantizer_hash_after,
                    }
                    .into());
                }
                write_csv(
                    &ws.curve("encoder_pretrain"),
                    "step,seconds,loss,accuracy",
                    out.curve
                        .iter()
                        .map(|p| format!("{},{:.6},{:.8},{:.8}", p.step, p.seconds, p.loss, p.accuracy)),
                )?;
                meta.steps = opts.steps;
                meta.quantizer_hash = Some(out.quantizer_hash_after);
                out.encoder
            } else {
                EncoderState::init(cfg.encoder.model.clone(), cfg.seed)?
            };
            checkpoint::save(&ck, meta, &enc.params, None)
        }
        Stage::Cleaner => {
            let (enc_meta, enc) = checkpoint::load_encoder(&ck, stage.name())?;
            let data = datasets(&cfg.data, cfg.seed)?;
            let opts = cfg.cleaner.train.clone();
            let opts = resyn_models::adapter::CleanerTrainOptions {
                reference_steps: cfg.reference.adapter_steps,
                reference_batch: cfg.reference.batch,
                ..opts
            };
            let mode = cfg.cleaner.mode;
            let cleaner = Cleaner::init(mode, &enc, &cfg.cleaner.adapter, opts.seed)?;
            let mut log = progress(stage, opts.steps);
            let trained = train_cleaner_with(data.pairs.as_ref(), &enc, cleaner, &opts, |p| log(p.step, p.total))?;
            write_cleaner_curve(&ws.curve(&format!("cleaner_{}", mode.name())), &trained.curve)?;
            meta.steps = opts.steps;
            meta.cleaner = Some(CleanerMeta {
                mode,
                adapter: cfg.cleaner.adapter.clone(),
            });
            meta.upstream.insert(Stage::Encoder.name().into(), enc_meta.content_hash);
            checkpoint::save(&ck, meta, &trained.cleaner.params, None)
        }
        Stage::VocoderPretrain => {
            let (enc_meta, enc) = checkpoint::load_encoder(&ck, stage.name())?;
            let data = datasets(&cfg.data, cfg.seed)?;
            let mut opts = cfg.vocoder.pretrain.clone();
            opts.reference_steps = cfg.reference.vocoder_pretrain_steps;
            opts.reference_batch = cfg.reference.batch;
            let mut log = progress(stage, opts.steps);
            let trained = pretrain_vocoder(data.clips.as_ref(), &enc, &cfg.vocoder.model, &opts, |p| {
                log(p.step, p.total)
            })?;
            write_vocoder_curve(&ws.curve("vocoder_pretrain"), &trained.curve)?;
            meta.steps = opts.steps;
            meta.vocoder = Some(cfg.vocoder.model.clone());
            meta.disc_width = Some(opts.disc_width);
            meta.upstream.insert(Stage::Encoder.name().into(), enc_meta.content_hash);
            checkpoint::save(&ck, meta, &trained.vocoder.params, Some(&trained.discriminators.params))
        }
        Stage::VocoderFinetune => {
            let (enc_meta, enc) = checkpoint::load_encoder(&ck, stage.name())?;
            let (cleaner_meta, cleaner) = checkpoint::load_cleaner(&ck, &enc, stage.name())?;
            let (voc_meta, start) = checkpoint::load_vocoder(&ck, Stage::VocoderPretrain, stage.name())?;
            let data = datasets(&cfg.data, cfg.seed)?;
            let mut opts = cfg.vocoder.finetune.clone();
            opts.reference_steps = cfg.reference.vocoder_finetune_steps;
            opts.reference_batch = cfg.reference.batch;
            let mut log = progress(stage, opts.steps);
            let trained = finetune_vocoder(data.pairs.as_ref(), &enc, Some(&cleaner), &start, &opts, |p| {
                log(p.step, p.total)
            })?;
            write_vocoder_curve(&ws.curve("vocoder_finetune"), &trained.curve)?;
            meta.steps = opts.steps;
            meta.vocoder = Some(start.vocoder.config.clone());
            meta.disc_width = Some(opts.disc_width);
            meta.cleaner = cleaner_meta.cleaner.clone();
            meta.upstream.insert(Stage::Encoder.name().into(), enc_meta.content_hash);
            meta.upstream.insert(Stage::Cleaner.name().into(), cleaner_meta.content_hash);
            meta.upstream.insert(Stage::VocoderPretrain.name().into(), voc_meta.content_hash);
            checkpoint::save(&ck, meta, &trained.vocoder.params, Some(&trained.discriminators.params))
        }
    }
}

fn write_vocoder_curve(path: &Path, curve: &[VocoderPoint]) -> Result<()> {
    write_csv(path, VOCODER_CURVE_HEADER, curve.iter().map(VocoderPoint::csv_row))
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Stop once this stage is done, as if interrupted.
    pub stop_after: Option<Stage>,
    /// Rerun stages even when a valid checkpoint exists.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub plot: Option<PathBuf>,
}

/// Runs every stage in order, skipping those with a valid checkpoint.
pub fn run_pipeline(cfg: &Config, ws: &Workspace, opts: &PipelineOptions) -> Result<PipelineReport> {
    cfg.validate()?;
    cfg.write_resolved(&ws.root)?;
    let mut report = PipelineReport {
        ran: Vec::new(),
        skipped: Vec::new(),
        plot: None,
    };
    for stage in Stage::ALL {
        if !opts.force && checkpoint::is_complete(&ws.checkpoints(), stage) {
            info!(%stage, "checkpoint present, skipping");
            report.skipped.push(stage);
        } else {
            run_stage(cfg, ws, stage)?;
            report.ran.push(stage);
        }
        if opts.stop_after == Some(stage) {
            break;
        }
    }
    report.plot = Some(write_plot(ws)?);
    Ok(report)
}

/// Parses a numeric CSV with a header row into `(header, rows)`.
pub fn read_curve(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((header, rows))
}

fn series(path: &Path, label: &str, y_col: &str) -> Result<Option<Series>> {
    if !path.exists() {
        return Ok(None);
    }
    let (header, rows) = read_curve(path)?;
    let (Some(x), Some(y)) = (
        header.iter().position(|h| h == "seconds"),
        header.iter().position(|h| h == y_col),
    ) else {
        return Ok(None);
    };
    Ok(Some(Series {
        label: label.to_string(),
        points: rows.iter().map(|r| (r[x], r[y])).collect(),
    }))
}

/// Loss-vs-wall-clock chart of every curve in the workspace: cleaner modes
/// share one panel, vocoder stages another.
pub fn write_plot(ws: &Workspace) -> Result<PathBuf> {
    let cleaners: Vec<Series> = CleanerMode::ALL
        .iter()
        .map(|m| series(&ws.curve(&format!("cleaner_{}", m.name())), m.name(), "total"))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let vocoders: Vec<Series> = [("vocoder_pretrain", "pretrain"), ("vocoder_finetune", "finetune")]
        .iter()
        .map(|(file, label)| series(&ws.curve(file), label, "total"))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut panels = Vec::new();
    if !cleaners.is_empty() {
        panels.push(Panel {
            title: "Feature cleaner training".into(),
            x_label: "wall-clock seconds".into(),
            y_label: "feature loss".into(),
            series: cleaners,
        });
    }
    if !vocoders.is_empty() {
        panels.push(Panel {
            title: "Vocoder training".into(),
            x_label: "wall-clock seconds".into(),
            y_label: "generator loss".into(),
            series: vocoders,
        });
    }
    let path = ws.plot();
    fs::create_dir_all(&ws.root).map_err(|e| Error::io(&ws.root, e))?;
    fs::write(&path, plot::render(&panels)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
        assert!("vocoder".parse::<Stage>().is_err());
    }

    #[test]
    fn curve_parser_reads_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "step,seconds,total\n0,0.5,2\n1,1.0,1.5\n").unwrap();
        let (h, rows) = read_curve(&p).unwrap();
        assert_eq!(h, vec!["step", "seconds", "total"]);
        assert_eq!(rows, vec![vec![0.0, 0.5, 2.0], vec![1.0, 1.0, 1.5]]);
    }
}

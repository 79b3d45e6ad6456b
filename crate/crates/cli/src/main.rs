use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing::{error, info};

use resyn_cli::benchmark::{benchmark, load_models};
use resyn_cli::config::Config;
use resyn_cli::dataset::{manifest_clean, synthetic_clean, write_degraded_set};
use resyn_cli::evaluate::{eval_items, evaluate, write_report};
use resyn_cli::pipeline::{bank, run_pipeline, run_stage, write_plot, PipelineOptions, Stage, Workspace};
use resyn_cli::restore::{restore_shard, BatchPlan, Restorer};
use resyn_cli::shard::shard;
use resyn_cli::{checkpoint, Error, Result};
use resyn_core::manifest::{read_audio_manifest, read_pair_manifest};
use resyn_models::adapter::CleanerMode;
use resyn_models::vocoder::Variant;

#[derive(Parser)]
#[command(name = "resyn", version, about = "Speech restoration: training, batched inference and benchmarking")]
struct Cli {
    /// TOML config; desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory holding checkpoints, curves and reports.
    #[arg(long, global = true, default_value = "run")]
    workdir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Tiny,
}

#[derive(Subcommand)]
enum Command {
    /// Print a complete config.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Simulate a noisy/clean set from clean speech.
    Degrade {
        #[arg(long)]
        out: PathBuf,
        /// Clean audio manifest; synthetic speech when omitted.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 4.0)]
        seconds: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    PretrainEncoder,
    TrainCleaner {
        #[arg(long)]
        mode: Option<String>,
    },
    PretrainVocoder,
    FinetuneVocoder,
    /// Run all training stages, resuming from existing checkpoints.
    RunPipeline {
        #[arg(long)]
        stop_after: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Restore the files of one manifest shard.
    Restore {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        shard_index: usize,
        #[arg(long, default_value_t = 1)]
        num_shards: usize,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Peak memory and real-time factor per batch size.
    Benchmark {
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        chunk_seconds: Option<f64>,
        #[arg(long)]
        memory_budget_mb: Option<f64>,
        /// Report path; defaults to `<workdir>/benchmark_<variant>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score restored files against clean references.
    Eval {
        /// `noisy<TAB>clean` manifest.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Redraw the loss-curve plot from the CSVs in the run directory.
    Plot,
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Config(e.to_string()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ws = Workspace::new(&cli.workdir);
    let stage = |cfg: &Config, stage: Stage| -> Result<ExitCode> {
        cfg.validate()?;
        cfg.write_resolved(&ws.root)?;
        let meta = run_stage(cfg, &ws, stage)?;
        info!(%stage, hash = %meta.content_hash, "checkpoint written");
        Ok(ExitCode::SUCCESS)
    };
    match cli.command {
        Command::Config { preset } => {
            let c = match preset {
                Preset::Desk => Config::default(),
                Preset::Tiny => Config::tiny(),
            };
            print!("{}", c.to_toml()?);
        }
        Command::Degrade {
            out,
            clean,
            count,
            seconds,
            seed,
        } => {
            let items = match clean {
                Some(m) => manifest_clean(&m)?,
                None => synthetic_clean(seed, count, seconds),
            };
            cfg.write_resolved(&out)?;
            let noise = bank(&cfg.data, cfg.seed)?;
            write_degraded_set(&items, &noise, &cfg.data.rooms, seed, &out)?;
        }
        Command::PretrainEncoder => {
            cfg.encoder.pretrain = true;
            return stage(&cfg, Stage::Encoder);
        }
        Command::TrainCleaner { mode } => {
            if let Some(m) = mode {
                cfg.cleaner.mode = parse::<CleanerMode>(&m)?;
            }
            return stage(&cfg, Stage::Cleaner);
        }
        Command::PretrainVocoder => return stage(&cfg, Stage::VocoderPretrain),
        Command::FinetuneVocoder => return stage(&cfg, Stage::VocoderFinetune),
        Command::RunPipeline { stop_after, force } => {
            let opts = PipelineOptions {
                stop_after: stop_after.as_deref().map(parse::<Stage>).transpose()?,
                force,
            };
            let report = run_pipeline(&cfg, &ws, &opts)?;
            info!(ran = ?report.ran, skipped = ?report.skipped, "pipeline done");
        }
        Command::Restore {
            manifest,
            out,
            shard_index,
            num_shards,
            batch,
        } => {
            if let Some(b) = batch {
                cfg.restore.batch = b;
            }
            cfg.validate()?;
            cfg.write_resolved(&out)?;
            let items = read_audio_manifest(&manifest)?;
            let part = shard(&items, shard_index, num_shards)?;
            let restorer = Restorer::load(&ws.checkpoints())?;
            let report = restore_shard(&restorer, &part, &BatchPlan::from(&cfg.restore), &out)?;
            let log = out.join(format!("restore_log_{shard_index}_of_{num_shards}.csv"));
            fs::write(&log, report.to_csv()).map_err(|e| Error::io(&log, e))?;
            info!(files = report.outcomes.len(), failed = report.failed(), seconds = report.wall_seconds, "restore done");
            if report.failed() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Benchmark {
            batch_sizes,
            variant,
            chunk_seconds,
            memory_budget_mb,
            out,
        } => {
            let bench = &mut cfg.benchmark;
            if let Some(b) = batch_sizes {
                bench.batch_sizes = b;
            }
            if let Some(v) = variant {
                bench.variant = parse::<Variant>(&v)?;
            }
            if let Some(c) = chunk_seconds {
                bench.chunk_seconds = c;
            }
            if memory_budget_mb.is_some() {
                bench.memory_budget_mb = memory_budget_mb;
            }
            cfg.validate()?;
            cfg.write_resolved(&ws.root)?;
            let ckpt = ws.checkpoints();
            let (restorer, random) = load_models(Some(&ckpt), &cfg, cfg.benchmark.variant)?;
            if random {
                info!("no trained vocoder of this variant; timing random weights");
            }
            let report = benchmark(&restorer, random, &cfg.benchmark)?;
            let path = out.unwrap_or_else(|| ws.root.join(format!("benchmark_{}.json", cfg.benchmark.variant.name())));
            write_json(&path, &report)?;
            for r in &report.rows {
                println!(
                    "batch {:>2}  {:?}  peak {:>10.2} MB  rtf {}",
                    r.batch_size,
                    r.status,
                    r.peak_memory_mb,
                    r.rtf.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
                );
            }
        }
        Command::Eval {
            pairs,
            restored,
            out,
            seed,
        } => {
            cfg.write_resolved(&out)?;
            let (_, encoder) = checkpoint::load_encoder(&ws.checkpoints(), "eval")?;
            let items = eval_items(&read_pair_manifest(&pairs)?, &restored);
            let report = evaluate(&items, &encoder, seed)?;
            write_report(&report, &out)?;
            let s = &report.summary;
            println!(
                "items {}  si-snr gain {:.3} dB [{:.3}, {:.3}]  feature sc reduction {:.1}%",
                s.items,
                s.si_snr_gain_db.mean,
                s.si_snr_gain_db.ci_low,
                s.si_snr_gain_db.ci_high,
                100.0 * s.feat_sc_reduction
            );
            if !report.is_complete() {
                error!(missing = ?s.missing, "some items could not be scored");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Plot => {
            let path = write_plot(&ws)?;
            info!(path = %path.display(), "plot written");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

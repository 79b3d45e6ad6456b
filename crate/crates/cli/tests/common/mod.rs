#![allow(dead_code)]

use std::path::Path;

use resyn_cli::config::Config;
use resyn_core::signal::{write_wav, WavEncoding};
use resyn_core::{synth, Waveform};

/// The tiny preset cut to a couple of optimizer steps per stage.
pub fn quick_config() -> Config {
    let mut cfg = Config::tiny();
    cfg.data.synthetic_hours = 0.01;
    cfg.encoder.options.steps = 2;
    cfg.cleaner.train.steps = 3;
    cfg.cleaner.train.batch = 2;
    cfg.vocoder.pretrain.steps = 2;
    cfg.vocoder.finetune.steps = 2;
    cfg
}

pub fn speech(seed: u64, seconds: f64) -> Waveform {
    synth::speech_utterance(seed, seconds)
}

pub fn write_speech(path: &Path, seed: u64, seconds: f64) -> Waveform {
    let w = speech(seed, seconds);
    write_wav(path, &w, WavEncoding::Float32).unwrap();
    w
}

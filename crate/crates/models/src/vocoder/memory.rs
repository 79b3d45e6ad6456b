//! Activation accounting for one denoiser pass at inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Variant, VocoderConfig};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemEvent {
    Alloc { name: String, shape: Vec<usize> },
    Free { name: String },
}

/// Collects [`MemEvent`]s from a forward pass when enabled.
#[derive(Debug, Default)]
pub struct Recorder {
    events: Option<Vec<MemEvent>>,
}

impl Recorder {
    pub fn off() -> Self {
        Self { events: None }
    }

    pub fn on() -> Self {
        Self { events: Some(Vec::new()) }
    }

    pub fn alloc(&mut self, name: &str, shape: &[usize]) {
        if let Some(e) = &mut self.events {
            e.push(MemEvent::Alloc {
                name: name.to_string(),
                shape: shape.to_vec(),
            });
        }
    }

    pub fn free(&mut self, name: &str) {
        if let Some(e) = &mut self.events {
            e.push(MemEvent::Free { name: name.to_string() });
        }
    }

    pub fn into_events(self) -> Vec<MemEvent> {
        self.events.unwrap_or_default()
    }
}

/// Largest total element count live at once; unknown frees are ignored.
pub fn peak_activation(events: &[MemEvent]) -> usize {
    let mut live: BTreeMap<&str, usize> = BTreeMap::new();
    let (mut cur, mut peak) = (0usize, 0usize);
    for e in events {
        match e {
            MemEvent::Alloc { name, shape } => {
                let n: usize = shape.iter().product();
                cur += n;
                if let Some(old) = live.insert(name, n) {
                    cur -= old;
                }
                peak = peak.max(cur);
            }
            MemEvent::Free { name } => {
                if let Some(n) = live.remove(name.as_str()) {
                    cur -= n;
                }
            }
        }
    }
    peak
}

/// The event sequence of [`Denoiser`](super::Denoiser) conditioning plus one
/// denoising pass, derived from the configuration alone.
pub fn activation_schedule(cfg: &VocoderConfig, batch: usize, frames: usize) -> Result<Vec<MemEvent>> {
    cfg.validate()?;
    let mut r = Recorder::on();
    let b = batch;
    let len = frames * cfg.hop();
    let n = cfg.up_factors.len();
    let cond_len = frames * cfg.repeat_factor;

    r.alloc("prenet", &[b, frames, cfg.prenet_dim]);
    r.alloc("cond", &[b, cfg.prenet_dim, cond_len]);
    r.free("prenet");
    r.alloc("y", &[b, len]);

    // resolution of source s, which feeds up block n - 1 - s
    let mut src_len = vec![len];
    let mut src_ch = vec![cfg.stem_dim];
    for (k, f) in cfg.down_factors.iter().enumerate() {
        src_len.push(src_len[k] / f);
        src_ch.push(cfg.down_dims[k]);
    }
    let src_name = |s: usize| if s == 0 { "stem".to_string() } else { format!("down{}", s - 1) };
    r.alloc("stem", &[b, cfg.stem_dim, len]);
    for s in 0..n {
        let j = n - 1 - s;
        let has_film = !(cfg.variant == Variant::MemoryEfficient && j == n - 1);
        if has_film {
            r.alloc(&format!("film{j}.hidden"), &[b, src_ch[s], src_len[s]]);
            r.alloc(&format!("film{j}"), &[b, cfg.film_multiplier() * cfg.up_dims[j], src_len[s]]);
            r.free(&format!("film{j}.hidden"));
        }
        if s + 1 < n {
            let (c, l) = (cfg.down_dims[s], src_len[s + 1]);
            r.alloc(&format!("down{s}.pooled"), &[b, src_ch[s], l]);
            r.alloc(&format!("down{s}.skip"), &[b, c, l]);
            r.alloc(&format!("down{s}"), &[b, c, l]);
            r.free(&format!("down{s}.pooled"));
            r.free(&format!("down{s}.skip"));
        }
        r.free(&src_name(s));
    }
    let mut cur_len = cond_len;
    let mut cur_ch = cfg.prenet_dim;
    for j in 0..n {
        let l = cur_len * cfg.up_factors[j];
        let c = cfg.up_dims[j];
        r.alloc(&format!("up{j}.upsampled"), &[b, cur_ch, l]);
        r.alloc(&format!("up{j}.skip"), &[b, c, l]);
        r.alloc(&format!("up{j}.a"), &[b, c, l]);
        r.free(&format!("up{j}.upsampled"));
        r.alloc(&format!("up{j}.b"), &[b, c, l]);
        r.free(&format!("up{j}.a"));
        r.free(&format!("up{j}.skip"));
        r.alloc(&format!("up{j}"), &[b, c, l]);
        r.free(&format!("up{j}.b"));
        r.free(&format!("film{j}"));
        if j > 0 {
            r.free(&format!("up{}", j - 1));
        }
        cur_len = l;
        cur_ch = c;
    }
    r.alloc("out", &[b, 1, len]);
    r.free(&format!("up{}", n - 1));
    Ok(r.into_events())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub variant: Variant,
    pub batch: usize,
    pub peak_elements: usize,
    pub peak_bytes_fp16: usize,
}

impl MemoryReport {
    pub fn analytic(cfg: &VocoderConfig, batch: usize, frames: usize) -> Result<Self> {
        let peak = peak_activation(&activation_schedule(cfg, batch, frames)?);
        Ok(Self {
            variant: cfg.variant,
            batch,
            peak_elements: peak,
            peak_bytes_fp16: 2 * peak,
        })
    }
}

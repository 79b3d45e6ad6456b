//! Slow, obviously-correct reference implementations shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Image source found by explicit mirroring.
#[derive(Debug, Clone)]
pub struct OracleImage {
    pub position: [f64; 3],
    /// Reflection count per wall: x=0, x=L, y=0, y=L, z=0, z=L.
    pub hits: [u32; 6],
}

fn mirror(p: [f64; 3], wall: usize, dims: &[f64; 3]) -> [f64; 3] {
    let axis = wall / 2;
    let mut q = p;
    q[axis] = if wall % 2 == 0 { -p[axis] } else { 2.0 * dims[axis] - p[axis] };
    q
}

/// Enumerates every sequence of wall reflections of length `<= max_order`
/// (never the same wall twice in a row) and mirrors the source through it.
/// Sequences reaching an already-seen point are dropped, so each image keeps
/// the hit counts of its shortest path.
pub fn mirrored_images(dims: [f64; 3], source: [f64; 3], max_order: u32) -> Vec<OracleImage> {
    let mut found: BTreeMap<[i64; 3], OracleImage> = BTreeMap::new();
    let key = |p: &[f64; 3]| p.map(|v| (v * 1e6).round() as i64);
    let mut frontier = vec![(source, [0u32; 6], usize::MAX)];
    found.insert(key(&source), OracleImage { position: source, hits: [0; 6] });
    for _ in 0..max_order {
        let mut next = Vec::new();
        for (p, hits, last) in frontier {
            for wall in 0..6 {
                if wall == last {
                    continue;
                }
                let q = mirror(p, wall, &dims);
                let mut h = hits;
                h[wall] += 1;
                if let std::collections::btree_map::Entry::Vacant(e) = found.entry(key(&q)) {
                    e.insert(OracleImage { position: q, hits: h });
                    next.push((q, h, wall));
                }
            }
        }
        frontier = next;
    }
    found.into_values().collect()
}

pub fn oracle_amplitude(img: &OracleImage, absorption: &[f64; 6], mic: [f64; 3]) -> (f64, f64) {
    let d = (0..3).map(|i| (img.position[i] - mic[i]).powi(2)).sum::<f64>().sqrt();
    let mut g = 1.0;
    for w in 0..6 {
        for _ in 0..img.hits[w] {
            g *= (1.0 - absorption[w]).sqrt();
        }
    }
    (d, g / (4.0 * PI * d))
}

/// 81-tap Hann-windowed sinc placed around each arrival's rounded delay.
pub fn render_rir(arrivals: &[(f64, f64)], len: usize) -> Vec<f64> {
    let half = 40i64;
    let mut h = vec![0.0; len];
    for &(delay, amp) in arrivals {
        let c = delay.round() as i64;
        for i in c - half..=c + half {
            if i < 0 || i as usize >= len {
                continue;
            }
            let x = i as f64 - delay;
            let w = 0.5 * (1.0 + (PI * x / 41.0).cos());
            let s = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            h[i as usize] += amp * w * s;
        }
    }
    h
}

/// Direct O(N²) DFT magnitude of one frame.
pub fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Continuous µ-law (µ = 255) with 255 uniform levels in the companded
/// domain.
pub fn mulaw_round_trip(x: f64) -> f64 {
    let mu = 255.0f64;
    let x = x.clamp(-1.0, 1.0);
    let y = x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln();
    let yq = (y * 127.0).round() / 127.0;
    yq.signum() * ((1.0 + mu).powf(yq.abs()) - 1.0) / mu
}

/// Largest error possible for `x`: distance from the reconstruction level
/// to the farther edge of its cell, edges lying halfway between codes in the
/// companded domain.
pub fn mulaw_max_error(x: f64) -> f64 {
    let mu = 255.0f64;
    let y = (1.0 + mu * x.abs().min(1.0)).ln() / (1.0 + mu).ln();
    let k = (y * 127.0).round();
    let expand = |c: f64| ((1.0 + mu).powf((c / 127.0).clamp(0.0, 1.0)) - 1.0) / mu;
    (expand(k + 0.5) - expand(k)).max(expand(k) - expand(k - 0.5))
}

/// Mean-square SNR in dB.
pub fn snr_db(speech: &[f32], noise_scaled: &[f64]) -> f64 {
    let ps: f64 = speech.iter().map(|&v| (v as f64).powi(2)).sum();
    let pn: f64 = noise_scaled.iter().map(|v| v * v).sum();
    10.0 * (ps / pn).log10()
}

/// Lag in `-max_lag..=max_lag` maximising the cross-correlation of `y`
/// against `x` (positive lag: `y` is late).
pub fn xcorr_peak_lag(x: &[f32], y: &[f32], max_lag: i64) -> i64 {
    let mut best = (f64::MIN, 0);
    for lag in -max_lag..=max_lag {
        let mut acc = 0.0;
        for (i, &xv) in x.iter().enumerate() {
            let j = i as i64 + lag;
            if j >= 0 && (j as usize) < y.len() {
                acc += xv as f64 * y[j as usize] as f64;
            }
        }
        if acc > best.0 {
            best = (acc, lag);
        }
    }
    best.1
}

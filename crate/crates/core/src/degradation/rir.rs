//! Shoebox room impulse responses by the image-source method.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Taps of the fractional-delay kernel used to render each arrival.
pub const SINC_TAPS: usize = 81;
const HALF_TAPS: i64 = (SINC_TAPS / 2) as i64;
/// Orders above this make the image count explode.
pub const MAX_ORDER_LIMIT: u32 = 10;

/// Axis-aligned box room. Walls are ordered `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub absorption: [f64; 6],
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    pub max_order: u32,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    /// Room with the same absorption on all six walls.
    pub fn uniform(dimensions: [f64; 3], absorption: f64, source_pos: [f64; 3], mic_pos: [f64; 3], max_order: u32) -> Self {
        Self {
            dimensions,
            absorption: [absorption; 6],
            source_pos,
            mic_pos,
            max_order,
            speed_of_sound: default_speed_of_sound(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let l = self.dimensions[axis];
            if !(l > 0.0) {
                return Err(Error::InvalidRoom(format!("dimension {axis} = {l}")));
            }
            for (name, p) in [("source", self.source_pos), ("mic", self.mic_pos)] {
                if !(p[axis] > 0.0 && p[axis] < l) {
                    return Err(Error::InvalidRoom(format!(
                        "{name} coordinate {axis} = {} outside (0, {l})",
                        p[axis]
                    )));
                }
            }
        }
        if self.source_pos == self.mic_pos {
            return Err(Error::InvalidRoom("source and mic coincide".into()));
        }
        if let Some(a) = self.absorption.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::InvalidRoom(format!("absorption {a} outside (0, 1]")));
        }
        if self.max_order > MAX_ORDER_LIMIT {
            return Err(Error::InvalidRoom(format!(
                "max_order {} exceeds {MAX_ORDER_LIMIT}",
                self.max_order
            )));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidRoom("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + y * z + x * z)
    }

    pub fn direct_distance(&self) -> f64 {
        distance(&self.source_pos, &self.mic_pos)
    }

    /// Direct-path delay in (fractional) samples.
    pub fn direct_delay(&self, sample_rate: u32) -> f64 {
        self.direct_distance() / self.speed_of_sound * sample_rate as f64
    }

    /// Sabine reverberation time with the mean wall absorption.
    pub fn sabine_t60(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        let areas = [y * z, y * z, x * z, x * z, x * y, x * y];
        let absorbing: f64 = areas.iter().zip(&self.absorption).map(|(s, a)| s * a).sum();
        0.161 * self.volume() / absorbing
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// One image source as heard at the microphone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub position: [f64; 3],
    /// Number of wall reflections on the path.
    pub order: u32,
    pub distance: f64,
    /// Fractional delay in samples.
    pub delay: f64,
    pub amplitude: f64,
}

/// Enumerates image sources of total reflection order `<= room.max_order`.
///
/// Along each axis an image is indexed by `(n, p)` with coordinate
/// `(1 - 2p) * s + 2 n L`; it has hit the wall at 0 `|n - p|` times and the
/// wall at `L` `|n|` times.
pub fn image_sources(room: &RoomSpec, sample_rate: u32) -> Result<Vec<Arrival>> {
    room.validate()?;
    Ok(enumerate_images(room, sample_rate, room.max_order))
}

fn enumerate_images(room: &RoomSpec, sample_rate: u32, max_order: u32) -> Vec<Arrival> {
    let order = max_order as i64;
    let refl: Vec<f64> = room.absorption.iter().map(|a| (1.0 - a).sqrt()).collect();

    // per-axis candidates: (coordinate, hits_low, hits_high)
    let axis_images = |axis: usize| -> Vec<(f64, u32, u32)> {
        let l = room.dimensions[axis];
        let s = room.source_pos[axis];
        let mut out = Vec::new();
        for n in -order..=order {
            for p in 0..=1i64 {
                let low = (n - p).unsigned_abs() as u32;
                let high = n.unsigned_abs() as u32;
                if (low + high) as i64 <= order {
                    out.push(((1 - 2 * p) as f64 * s + 2.0 * n as f64 * l, low, high));
                }
            }
        }
        out
    };
    let xs = axis_images(0);
    let ys = axis_images(1);
    let zs = axis_images(2);

    let mut arrivals = Vec::new();
    for &(x, xl, xh) in &xs {
        for &(y, yl, yh) in &ys {
            let oxy = xl + xh + yl + yh;
            if oxy > max_order {
                continue;
            }
            for &(z, zl, zh) in &zs {
                let total = oxy + zl + zh;
                if total > max_order {
                    continue;
                }
                let position = [x, y, z];
                let d = distance(&position, &room.mic_pos);
                let gain = refl[0].powi(xl as i32)
                    * refl[1].powi(xh as i32)
                    * refl[2].powi(yl as i32)
                    * refl[3].powi(yh as i32)
                    * refl[4].powi(zl as i32)
                    * refl[5].powi(zh as i32);
                arrivals.push(Arrival {
                    position,
                    order: total,
                    distance: d,
                    delay: d / room.speed_of_sound * sample_rate as f64,
                    amplitude: gain / (4.0 * PI * d),
                });
            }
        }
    }
    arrivals.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    arrivals
}

/// Hann-windowed sinc evaluated `x` samples from the kernel centre.
fn windowed_sinc(x: f64) -> f64 {
    let half = HALF_TAPS as f64 + 1.0;
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (PI * x / half).cos());
    let s = if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    w * s
}

/// Renders the impulse response; long enough to hold the latest arrival and
/// its kernel tail.
pub fn generate_rir(room: &RoomSpec, sample_rate: u32) -> Result<Waveform> {
    let arrivals = image_sources(room, sample_rate)?;
    let max_delay = arrivals.iter().map(|a| a.delay).fold(0.0, f64::max);
    let len = max_delay.ceil() as usize + HALF_TAPS as usize + 2;
    let mut h = vec![0.0f64; len];
    for a in &arrivals {
        if a.amplitude == 0.0 {
            continue;
        }
        let centre = a.delay.round() as i64;
        for k in -HALF_TAPS..=HALF_TAPS {
            let i = centre + k;
            if i < 0 || i as usize >= len {
                continue;
            }
            h[i as usize] += a.amplitude * windowed_sinc(i as f64 - a.delay);
        }
    }
    Ok(Waveform {
        samples: h.into_iter().map(|v| v as f32).collect(),
        sample_rate,
    })
}

/// Schroeder backward-integrated energy decay curve, in dB re. total energy.
pub fn energy_decay_curve(rir: &[f32]) -> Vec<f64> {
    let mut acc = 0.0f64;
    let mut edc: Vec<f64> = rir
        .iter()
        .rev()
        .map(|&s| {
            acc += (s as f64) * (s as f64);
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    edc.iter().map(|e| 10.0 * (e / total).max(1e-30).log10()).collect()
}

/// T60 extrapolated from a least-squares fit of the decay curve between
/// `hi_db` and `lo_db` (e.g. -5 and -25 for T20).
pub fn decay_time(rir: &[f32], sample_rate: u32, hi_db: f64, lo_db: f64) -> Option<f64> {
    let edc = energy_decay_curve(rir);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &db)| db <= hi_db && db >= lo_db)
        .map(|(i, &db)| (i as f64 / sample_rate as f64, db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

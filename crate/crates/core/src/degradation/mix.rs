use crate::error::{Error, Result};
use crate::signal::{power_of, Waveform};

pub const MIN_SNR_DB: f64 = 5.0;
pub const MAX_SNR_DB: f64 = 30.0;

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Gain applied to the noise.
    pub noise_gain: f64,
}

/// Noise cropped, or tiled when shorter, to `len` samples.
pub fn fit_noise(noise: &[f32], len: usize) -> Vec<f32> {
    (0..len).map(|i| noise[i % noise.len()]).collect()
}

/// `speech + g * noise` with `g` chosen so that the SNR is exactly `snr_db`.
/// With `strict`, SNRs outside [5, 30] dB are rejected.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64, strict: bool) -> Result<Mixture> {
    if strict && !(MIN_SNR_DB..=MAX_SNR_DB).contains(&snr_db) {
        return Err(Error::SnrOutOfRange(snr_db));
    }
    if noise.is_empty() {
        return Err(Error::Silent("noise"));
    }
    let noise = fit_noise(&noise.samples, speech.len());
    let ps = power_of(&speech.samples)?;
    let pn = power_of(&noise)?;
    if ps == 0.0 {
        return Err(Error::Silent("speech"));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = speech
        .samples
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| (s as f64 + g * n as f64) as f32)
        .collect();
    Ok(Mixture {
        mixture: Waveform {
            samples,
            sample_rate: speech.sample_rate,
        },
        noise_gain: g,
    })
}

/// SNR of `speech` against `noise` scaled by `gain`, in dB.
pub fn measured_snr_db(speech: &[f32], noise: &[f32], gain: f64) -> f64 {
    let ps: f64 = speech.iter().map(|&s| (s as f64).powi(2)).sum();
    let pn: f64 = noise.iter().map(|&n| (gain * n as f64).powi(2)).sum();
    10.0 * (ps / pn).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, amp: f32, period: usize) -> Waveform {
        Waveform::from_samples(
            (0..len)
                .map(|i| amp * (2.0 * std::f32::consts::PI * i as f32 / period as f32).sin())
                .collect(),
        )
    }

    #[test]
    fn equal_powers_at_zero_db_give_unit_gain() {
        let s = tone(1600, 0.5, 16);
        let n = tone(1600, 0.5, 32);
        let m = mix_at_snr(&s, &n, 0.0, false).unwrap();
        assert!((m.noise_gain - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gain_formula_example() {
        // constant signals with exactly known powers 1 and 4
        let s = Waveform::from_samples(vec![1.0; 1000]);
        let n = Waveform::from_samples(vec![2.0; 1000]);
        let m = mix_at_snr(&s, &n, 10.0, true).unwrap();
        assert!((m.noise_gain - (1.0f64 / 40.0).sqrt()).abs() < 1e-12);
        assert!((m.noise_gain - 0.15811).abs() < 1e-5);
        let snr = measured_snr_db(&s.samples, &n.samples, m.noise_gain);
        assert!((snr - 10.0).abs() < 1e-4);
    }

    #[test]
    fn strict_range() {
        let s = tone(1000, 0.5, 10);
        let n = tone(1000, 0.5, 7);
        assert!(matches!(mix_at_snr(&s, &n, 4.0, true), Err(Error::SnrOutOfRange(_))));
        assert!(mix_at_snr(&s, &n, 4.0, false).is_ok());
        assert!(mix_at_snr(&s, &n, 30.0, true).is_ok());
        assert!(mix_at_snr(&s, &n, 30.5, true).is_err());
    }

    #[test]
    fn silent_inputs_are_errors() {
        let s = tone(1000, 0.5, 10);
        let z = Waveform::zeros(1000);
        assert!(matches!(mix_at_snr(&z, &s, 10.0, true), Err(Error::Silent("speech"))));
        assert!(matches!(mix_at_snr(&s, &z, 10.0, true), Err(Error::Silent("noise"))));
    }

    #[test]
    fn short_noise_is_tiled() {
        let s = tone(1000, 0.5, 10);
        let n = Waveform::from_samples(vec![0.1, -0.2, 0.3]);
        let m = mix_at_snr(&s, &n, 12.0, true).unwrap();
        assert_eq!(m.mixture.len(), 1000);
        let tiled = fit_noise(&n.samples, 1000);
        assert_eq!(tiled[3], 0.1);
        assert!((measured_snr_db(&s.samples, &tiled, m.noise_gain) - 12.0).abs() < 1e-4);
    }
}

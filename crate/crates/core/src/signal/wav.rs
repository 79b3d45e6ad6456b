use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a mono 16 kHz WAV. 16-bit PCM is scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            got: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::WavFormat(format!(
                "{}: {bits}-bit {fmt:?} not supported",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &wave.samples {
                let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(wav_err)?;
            }
        }
        WavEncoding::Float32 => {
            for &s in &wave.samples {
                writer.write_sample(s).map_err(wav_err)?;
            }
        }
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let codes: Vec<i16> = vec![-32768, -1, 0, 1, 12345, 32767];
        let wave = Waveform::from_samples(codes.iter().map(|&c| c as f32 / 32768.0).collect());
        write_wav(&path, &wave, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, wave);
        write_wav(&path, &back, WavEncoding::Pcm16).unwrap();
        assert_eq!(read_wav(&path).unwrap(), wave);
    }

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let wave = Waveform::from_samples(vec![0.1, -0.25, 0.333_333, 1.5]);
        write_wav(&path, &wave, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&path).unwrap(), wave);
    }

    #[test]
    fn rejects_other_rates_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let wave = Waveform {
            samples: vec![0.0; 10],
            sample_rate: 22050,
        };
        write_wav(&path, &wave, WavEncoding::Pcm16).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::SampleRate { got: 22050, .. })));

        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let stereo = dir.path().join("s.wav");
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::WavFormat(_))));
        assert!(read_wav(dir.path().join("missing.wav")).is_err());
    }
}

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, AUDIO_SAMPLE_RATE};
use crate::error::{ensure, invalid, Error, Result};

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => invalid!("wav: {other}"),
    }
}

/// Writes mono 32-bit float samples.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Reads a mono 16 kHz WAV file with 16-bit integer or 32-bit float samples.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    ensure!(
        spec.sample_rate == AUDIO_SAMPLE_RATE,
        "{} is sampled at {} Hz; resample to {AUDIO_SAMPLE_RATE} Hz first",
        path.display(),
        spec.sample_rate
    );
    ensure!(
        spec.channels == 1,
        "{} has {} channels; only mono is supported",
        path.display(),
        spec.channels
    );
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (f, b) => {
            return Err(invalid!(
                "{}: unsupported sample format {f:?}/{b}",
                path.display()
            ))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

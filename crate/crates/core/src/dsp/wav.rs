//! 16-bit PCM mono WAV I/O.

use std::path::Path;

use super::AudioClip;
use crate::{Error, Result};

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let bytes = encode_wav(clip)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in clip.samples() {
            writer.write_sample(quantize(s))?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

fn quantize(s: f64) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32767.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioClip::from_clamped(samples, spec.sample_rate)
}

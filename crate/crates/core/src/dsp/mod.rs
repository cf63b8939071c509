//! Frame-level acoustic analysis.
//!
//! Everything here is a pure function over borrowed inputs, so corpus
//! extraction can run per utterance on any number of threads.

mod features;
mod griffin_lim;
mod mel;
mod pitch;
pub mod wav;

pub use features::{frame_energy, silence_mask, spectral_tilt, FrameFeatures, SILENCE_RANGE_DB};
pub use griffin_lim::griffin_lim;
pub use mel::{mel_spectrogram, spectral_balance, MelConfig, MelSpectrogram, MEL_FLOOR};
pub use pitch::{
    estimate_pitch_acf, estimate_pitch_cepstral, estimate_pitch_cmnd, median_smooth, vote_pitch, PitchBand,
    PitchCandidate, PitchTrack,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("audio clip is empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !(s.abs() <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a clip after clamping every sample into `[-1, 1]` (NaN becomes 0).
    pub fn from_clamped(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Frame length and shift in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
        }
    }
}

impl GridParams {
    pub fn frame_length(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Number of whole frames that fit in `n_samples`, or `None` if not even one does.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> Option<usize> {
        frame_count(
            n_samples,
            self.frame_length(sample_rate),
            self.frame_shift(sample_rate),
        )
    }

    /// Sample count whose framing yields exactly `n_frames` frames.
    pub fn samples_for_frames(&self, n_frames: usize, sample_rate: u32) -> usize {
        assert!(n_frames >= 1);
        (n_frames - 1) * self.frame_shift(sample_rate) + self.frame_length(sample_rate)
    }
}

/// `floor((n - length) / shift) + 1`, `None` when `n < length`.
pub fn frame_count(n_samples: usize, length: usize, shift: usize) -> Option<usize> {
    if length == 0 || shift == 0 || n_samples < length {
        None
    } else {
        Some((n_samples - length) / shift + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub params: GridParams,
    pub sample_rate: u32,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn frame_length(&self) -> usize {
        self.params.frame_length(self.sample_rate)
    }

    pub fn frame_shift(&self) -> usize {
        self.params.frame_shift(self.sample_rate)
    }
}

/// A clip cut into overlapping frames; frame `i` starts at sample `i * shift`.
#[derive(Debug, Clone)]
pub struct Frames<'a> {
    pub grid: FrameGrid,
    frames: Vec<&'a [f64]>,
}

impl<'a> Frames<'a> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        self.frames.iter().copied()
    }

    pub fn get(&self, i: usize) -> &'a [f64] {
        self.frames[i]
    }
}

/// Frame-level pitch, energy, tilt and silence for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub grid: FrameGrid,
    pub pitch: PitchTrack,
    pub features: FrameFeatures,
}

/// Frames the clip, votes pitch across the three estimators and computes
/// energy (non-silent frames) and tilt (voiced, non-silent frames).
pub fn analyze(clip: &AudioClip, params: GridParams, band: PitchBand) -> Result<Analysis> {
    let frames = frame_signal(clip, params)?;
    let pitch = pitch::track_pitch(&frames, band)?;
    let silence = silence_mask(&frames, SILENCE_RANGE_DB);
    let energy_db = frame_energy(&frames, &silence);
    let tilt_mask: Vec<bool> = pitch
        .voiced
        .iter()
        .zip(&silence)
        .map(|(&v, &s)| v && !s)
        .collect();
    let tilt = spectral_tilt(&frames, &tilt_mask);
    Ok(Analysis {
        grid: frames.grid,
        pitch,
        features: FrameFeatures {
            energy_db,
            tilt,
            silence,
        },
    })
}

pub fn frame_signal(clip: &AudioClip, params: GridParams) -> Result<Frames<'_>> {
    frame_samples(clip.samples(), clip.sample_rate(), params)
}

pub(crate) fn frame_samples(samples: &[f64], sample_rate: u32, params: GridParams) -> Result<Frames<'_>> {
    let length = params.frame_length(sample_rate);
    let shift = params.frame_shift(sample_rate);
    if shift == 0 || length < shift {
        return Err(Error::InvalidArgument(format!(
            "frame length {length} must be >= shift {shift} > 0"
        )));
    }
    let n_frames = frame_count(samples.len(), length, shift).ok_or(Error::TooShort {
        samples: samples.len(),
        frame_length: length,
    })?;
    let frames = (0..n_frames)
        .map(|i| &samples[i * shift..i * shift + length])
        .collect();
    Ok(Frames {
        grid: FrameGrid {
            params,
            sample_rate,
            n_frames,
        },
        frames,
    })
}

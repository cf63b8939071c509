//! Synthesis with utterance-level bias and word emphasis, and measurement
//! of the prosody a synthesis actually realizes.

use serde::{Deserialize, Serialize};

use crate::corpus::{phone_positions, words, CorpusStats, Feature, PhoneToken, ProsodyVector};
use crate::dsp::{griffin_lim, spectral_balance, AudioClip, MelConfig, MelSpectrogram};
use crate::model::FrontEndModel;
use crate::{stats, Error, Result};

pub const GRIFFIN_LIM_ITERS: usize = 32;
pub const FRAME_SHIFT_MS: f64 = 10.0;

/// Offsets added to the predicted utterance features, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    pub pitch: f64,
    pub pitch_range: f64,
    pub duration: f64,
    pub energy: f64,
    pub tilt: f64,
}

impl BiasSpec {
    pub fn single(feature: Feature, value: f64) -> Self {
        let mut v = ProsodyVector::default();
        v.set(feature, value);
        Self::from_vector(&v)
    }

    pub fn from_vector(v: &ProsodyVector) -> Self {
        let [pitch, pitch_range, duration, energy, tilt] = v.0;
        Self {
            pitch,
            pitch_range,
            duration,
            energy,
            tilt,
        }
    }

    pub fn to_vector(&self) -> ProsodyVector {
        ProsodyVector([self.pitch, self.pitch_range, self.duration, self.energy, self.tilt])
    }

    pub fn validate(&self) -> Result<()> {
        for f in Feature::ALL {
            let v = self.to_vector().get(f);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("bias {} is not finite", f.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmphasisSpec {
    pub word_index: usize,
    pub pitch_range_bias: f64,
    pub duration_bias: f64,
}

impl EmphasisSpec {
    pub fn word(word_index: usize) -> Self {
        Self {
            word_index,
            pitch_range_bias: 0.5,
            duration_bias: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub tokens: Vec<PhoneToken>,
    pub mel: MelSpectrogram,
    /// Frames per phone (phones only, in order).
    pub durations: Vec<usize>,
    /// Predicted per-phone pitch in Hz.
    pub pitch_contour: Vec<f64>,
    /// Predicted per-phone energy in dB.
    pub energy_contour: Vec<f64>,
    /// Pooled utterance prediction before bias, normalized units.
    pub u_hat: ProsodyVector,
    /// Utterance conditioning after bias, normalized units.
    pub u_used: ProsodyVector,
    pub audio: Option<AudioClip>,
}

/// Per-token offsets that put the emphasis biases on one word's phones.
pub fn emphasis_offsets(tokens: &[PhoneToken], emphasis: &EmphasisSpec) -> Result<Vec<ProsodyVector>> {
    let ws = words(tokens);
    let word = ws.get(emphasis.word_index).ok_or(Error::WordIndexOutOfRange {
        index: emphasis.word_index,
        words: ws.len(),
    })?;
    if !emphasis.pitch_range_bias.is_finite() || !emphasis.duration_bias.is_finite() {
        return Err(Error::InvalidArgument("emphasis biases must be finite".into()));
    }
    let mut out = vec![ProsodyVector::default(); tokens.len()];
    for &i in word {
        out[i].set(Feature::PitchRange, emphasis.pitch_range_bias);
        out[i].set(Feature::Duration, emphasis.duration_bias);
    }
    Ok(out)
}

pub fn synthesize(
    model: &FrontEndModel,
    stats: &CorpusStats,
    tokens: &[PhoneToken],
    bias: &BiasSpec,
    emphasis: Option<&EmphasisSpec>,
    with_audio: bool,
) -> Result<SynthesisResult> {
    bias.validate()?;
    let phone_bias = emphasis.map(|e| emphasis_offsets(tokens, e)).transpose()?;
    let inf = model.infer(tokens, stats, Some(&bias.to_vector()), phone_bias.as_deref())?;
    let phones = phone_positions(tokens);
    let audio = if with_audio {
        Some(griffin_lim(&inf.mel, &MelConfig::default(), GRIFFIN_LIM_ITERS)?)
    } else {
        None
    };
    Ok(SynthesisResult {
        tokens: tokens.to_vec(),
        durations: phones.iter().map(|&i| inf.durations[i]).collect(),
        pitch_contour: phones.iter().map(|&i| inf.log_pitch[i].exp()).collect(),
        energy_contour: phones.iter().map(|&i| inf.energy_db[i]).collect(),
        u_hat: inf.u_hat,
        u_used: inf.u_used,
        mel: inf.mel,
        audio,
    })
}

/// Utterance features in raw units from per-phone frames, log-pitch and
/// energy plus a Mel. Pitch statistics run over the frames of voiced
/// phones; energy is frame-weighted; tilt goes through the calibration.
pub fn measure_prosody(
    tokens: &[PhoneToken],
    durations: &[usize],
    log_pitch: &[f64],
    energy_db: &[f64],
    mel: &MelSpectrogram,
    stats: &CorpusStats,
) -> Result<ProsodyVector> {
    let phones = phone_positions(tokens);
    let n = phones.len();
    if durations.len() != n || log_pitch.len() != n || energy_db.len() != n {
        return Err(Error::Shape(format!(
            "{n} phones but {}/{}/{} durations/pitch/energy values",
            durations.len(),
            log_pitch.len(),
            energy_db.len()
        )));
    }
    let mut pitch_frames = Vec::new();
    for (k, &i) in phones.iter().enumerate() {
        if tokens[i].is_voiced_phone() {
            pitch_frames.extend(std::iter::repeat(log_pitch[k]).take(durations[k]));
        }
    }
    if pitch_frames.is_empty() {
        return Err(Error::UnvoicedUtterance);
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    let pitch = stats::mean(&pitch_frames).unwrap_or_default();
    let range = stats::quantile(&pitch_frames, 0.95).unwrap_or_default()
        - stats::quantile(&pitch_frames, 0.05).unwrap_or_default();
    let duration = durations
        .iter()
        .map(|&d| (d as f64 * FRAME_SHIFT_MS).ln())
        .sum::<f64>()
        / n as f64;
    let energy = durations
        .iter()
        .zip(energy_db)
        .map(|(&d, e)| d as f64 * e)
        .sum::<f64>()
        / total as f64;
    let tilt = stats
        .tilt_calibration
        .tilt(spectral_balance(mel, &MelConfig::default()));
    Ok(ProsodyVector([pitch, range, duration, energy, tilt]))
}

/// Realized utterance features of a synthesis, normalized without clipping
/// so extrapolated biases stay distinguishable.
pub fn realized_prosody(result: &SynthesisResult, stats: &CorpusStats) -> Result<ProsodyVector> {
    let log_pitch: Vec<f64> = result.pitch_contour.iter().map(|hz| hz.ln()).collect();
    let raw = measure_prosody(
        &result.tokens,
        &result.durations,
        &log_pitch,
        &result.energy_contour,
        &result.mel,
        stats,
    )?;
    Ok(stats.norm.normalize_unclipped(&raw))
}

//! Synthetic corpus: random phone strings rendered with a pulse-train or noise
//! source through a one-pole filter, with known prosody targets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::alignment::PhoneAlignment;
use super::symbols::{PhoneToken, PHONES};
use crate::dsp::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::stats;
use crate::Result;

const FRAME_SHIFT: usize = 240;
const HALF_OVERHANG: usize = 180;
const VOICED_NOISE: f64 = 0.02;

/// What the generator aimed for. Energy is the duration-weighted mean phone
/// level in dB of mean absolute amplitude; tilt is minus the filter pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTargets {
    pub pitch_hz: f64,
    pub pitch_range: f64,
    pub duration_ms: f64,
    pub energy_db: f64,
    pub tilt: f64,
}

/// Utterance-level knobs before rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub f0_hz: f64,
    /// Log-f0 spread between the 5% and 95% quantiles of the frame contour.
    pub pitch_range: f64,
    /// Geometric mean phone duration in ms.
    pub duration_ms: f64,
    /// Position of the energy target inside the feasible interval, in `[0, 1]`.
    pub energy_position: f64,
    pub pole: f64,
}

impl ToyParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            f0_hz: (rng.gen_range(120f64.ln()..300f64.ln())).exp(),
            pitch_range: rng.gen_range(0.05..0.5),
            duration_ms: (rng.gen_range(60f64.ln()..130f64.ln())).exp(),
            energy_position: rng.gen_range(0.0..1.0),
            pole: rng.gen_range(0.85..0.99),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub tokens: Vec<PhoneToken>,
    pub alignment: PhoneAlignment,
    pub audio: AudioClip,
    pub targets: ToyTargets,
}

/// Fixed per-symbol offsets: (log-duration, pitch shape, energy dB).
fn symbol_offsets() -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a11);
    PHONES
        .iter()
        .map(|&p| {
            let t = PhoneToken::from_symbol(p).expect("phone table");
            let dur = rng.gen_range(-0.3..0.3);
            let shape = rng.gen_range(-0.25..0.25);
            let energy = if t.is_voiced_phone() {
                rng.gen_range(-4.0..0.0)
            } else {
                rng.gen_range(-6.0..-3.0)
            };
            (dur, shape, energy)
        })
        .collect()
}

/// Two to four words of two to four phones, at least two of them voiced.
pub fn random_sentence(rng: &mut impl Rng) -> Vec<PhoneToken> {
    let phones: Vec<PhoneToken> = PHONES
        .iter()
        .map(|p| PhoneToken::from_symbol(p).expect("phone table"))
        .collect();
    let boundary = PhoneToken::from_symbol("#").expect("boundary");
    let comma = PhoneToken::from_symbol(",").expect("comma");
    loop {
        let n_words = rng.gen_range(2..=4);
        let mut out = Vec::new();
        for w in 0..n_words {
            if w > 0 {
                if rng.gen_bool(0.15) {
                    out.push(comma);
                }
                out.push(boundary);
            }
            for _ in 0..rng.gen_range(2..=4) {
                out.push(*phones.choose(rng).expect("non-empty"));
            }
        }
        let end = if rng.gen_bool(0.1) { "?" } else { "." };
        out.push(PhoneToken::from_symbol(end).expect("punctuation"));
        if out.iter().filter(|t| t.is_voiced_phone()).count() >= 2 {
            return out;
        }
    }
}

/// Renders `tokens` with the given knobs. All remaining randomness (phone
/// durations, excitation noise) is drawn from `rng`.
pub fn render(tokens: &[PhoneToken], params: &ToyParams, rng: &mut impl Rng) -> Result<ToyUtterance> {
    let offsets = symbol_offsets();
    let phones: Vec<PhoneToken> = tokens.iter().copied().filter(PhoneToken::is_phone).collect();
    let jitter = Normal::new(0.0, 0.05).expect("valid normal");

    let frames: Vec<usize> = phones
        .iter()
        .map(|t| {
            let ms = (params.duration_ms.ln() + offsets[t.id as usize].0 + jitter.sample(rng))
                .exp()
                .clamp(40.0, 200.0);
            ((ms / 10.0).round() as usize).max(1)
        })
        .collect();
    let alignment = PhoneAlignment::from_durations(&frames);
    let total: usize = frames.iter().sum();
    let weights: Vec<f64> = frames.iter().map(|&d| d as f64).collect();

    // Pitch shape over voiced phones, scaled so the frame contour has the
    // requested quantile spread and duration-weighted mean ln f0.
    let n = phones.len();
    let raw_shape: Vec<f64> = phones
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let decl = if n > 1 { 0.25 - 0.5 * i as f64 / (n - 1) as f64 } else { 0.0 };
            offsets[t.id as usize].1 + decl
        })
        .collect();
    let voiced_frames: Vec<f64> = phones
        .iter()
        .zip(&raw_shape)
        .zip(&frames)
        .filter(|((t, _), _)| t.is_voiced_phone())
        .flat_map(|((_, &s), &d)| std::iter::repeat(s).take(d))
        .collect();
    let centre = stats::mean(&voiced_frames).unwrap_or(0.0);
    let spread = stats::quantile(&voiced_frames, 0.95).unwrap_or(0.0)
        - stats::quantile(&voiced_frames, 0.05).unwrap_or(0.0);
    let scale = if spread > 1e-3 { params.pitch_range / spread } else { 0.0 };
    let log_f0: Vec<f64> = raw_shape
        .iter()
        .map(|s| params.f0_hz.ln() + scale * (s - centre))
        .collect();

    let raw_energy: Vec<f64> = phones.iter().map(|t| offsets[t.id as usize].2).collect();
    let energy_mean = weighted_mean(&raw_energy, &weights);
    let energy_offset: Vec<f64> = raw_energy.iter().map(|e| e - energy_mean).collect();

    // Excitation, one continuous filter, then per-phone gains.
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let n_samples = FRAME_SHIFT * total + 2 * HALF_OVERHANG;
    let spans: Vec<(usize, usize)> = alignment
        .intervals
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let lo = if i == 0 { 0 } else { FRAME_SHIFT * s + HALF_OVERHANG };
            let hi = if i + 1 == n { n_samples } else { FRAME_SHIFT * e + HALF_OVERHANG };
            (lo, hi)
        })
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut y = vec![0.0; n_samples];
    let mut since = 0usize;
    let mut state = 0.0;
    for (i, &(lo, hi)) in spans.iter().enumerate() {
        let voiced = phones[i].is_voiced_phone();
        let period = ((sr / log_f0[i].exp()).round() as usize).max(1);
        for v in &mut y[lo..hi] {
            // Whole-sample period per phone: a rounded, jittering period
            // would carry a real subharmonic.
            let e = if voiced {
                since += 1;
                let pulse = if since >= period {
                    since = 0;
                    1.0
                } else {
                    0.0
                };
                pulse + VOICED_NOISE * unit.sample(rng)
            } else {
                unit.sample(rng)
            };
            state = params.pole * state + e;
            *v = state;
        }
    }

    // Highest level each phone can take before its peak clips.
    let levels: Vec<(f64, f64)> = spans
        .iter()
        .map(|&(lo, hi)| {
            let seg = &y[lo..hi];
            let mean_abs = seg.iter().map(|v| v.abs()).sum::<f64>() / seg.len() as f64;
            let peak = seg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (mean_abs, peak)
        })
        .collect();
    let cap = levels
        .iter()
        .zip(&energy_offset)
        .map(|(&(m, p), o)| -20.0 * (p / m).log10() - o - 0.5)
        .fold(f64::INFINITY, f64::min);
    let hi = cap.min(-10.0);
    let lo = (-35.0f64).min(hi - 1.0);
    let energy_db = lo + params.energy_position * (hi - lo);

    for ((&(lo, hi), &(mean_abs, _)), o) in spans.iter().zip(&levels).zip(&energy_offset) {
        let gain = 10f64.powf((energy_db + o) / 20.0) / mean_abs;
        for v in &mut y[lo..hi] {
            *v *= gain;
        }
    }
    let audio = AudioClip::from_clamped(y, DEFAULT_SAMPLE_RATE)?;

    Ok(ToyUtterance {
        tokens: tokens.to_vec(),
        alignment,
        audio,
        targets: ToyTargets {
            pitch_hz: params.f0_hz,
            pitch_range: params.pitch_range,
            duration_ms: params.duration_ms,
            energy_db,
            tilt: -params.pole,
        },
    })
}

fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
}

/// One random utterance: sentence, knobs and rendering all from `rng`.
pub fn generate_utterance(rng: &mut impl Rng) -> Result<ToyUtterance> {
    let tokens = random_sentence(rng);
    let params = ToyParams::sample(rng);
    render(&tokens, &params, rng)
}

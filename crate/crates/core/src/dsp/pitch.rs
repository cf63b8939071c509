//! Three independent pitch estimators and a majority vote over them.
//!
//! The estimators fail in different ways (autocorrelation tends to pick
//! sub-harmonics, the difference function is sensitive to amplitude
//! modulation, the cepstrum needs a harmonic-rich spectrum), which is what
//! makes voting over them worthwhile.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Frames;
use crate::{Error, Result};

/// Search band for the fundamental, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchBand {
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for PitchBand {
    fn default() -> Self {
        Self {
            f_min: 70.0,
            f_max: 500.0,
        }
    }
}

impl PitchBand {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq4 = sample_rate as f64 / 4.0;
        if !(self.f_min >= 20.0 && self.f_min < self.f_max && self.f_max <= nyq4) {
            return Err(Error::InvalidArgument(format!(
                "pitch band [{}, {}] must satisfy 20 <= f_min < f_max <= {nyq4}",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, hz: f64) -> bool {
        hz >= self.f_min && hz <= self.f_max
    }

    fn lag_range(&self, sample_rate: u32, max_lag: usize) -> (usize, usize) {
        let sr = sample_rate as f64;
        let lo = (sr / self.f_max).floor().max(2.0) as usize;
        let hi = ((sr / self.f_min).ceil() as usize).min(max_lag);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchCandidate {
    /// `None` marks the frame unvoiced for this estimator.
    pub hz: Option<f64>,
    pub confidence: f64,
}

impl PitchCandidate {
    pub const UNVOICED: Self = Self {
        hz: None,
        confidence: 0.0,
    };
}

/// Voted pitch contour; `f0[i] > 0` exactly when `voiced[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PitchTrack {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_log_f0(&self) -> Vec<f64> {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(f, _)| f.ln())
            .collect()
    }
}

const ACF_VOICING: f64 = 0.5;
const ACF_PEAK_RATIO: f64 = 0.9;
const CMND_THRESHOLD: f64 = 0.15;
const CMND_VOICING: f64 = 0.3;
const CEPSTRUM_VOICING_Z: f64 = 5.0;
const OCTAVE_TOLERANCE: f64 = 0.03;

fn centered(frame: &[f64]) -> Option<Vec<f64>> {
    let m = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - m).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    (energy > 1e-12 * frame.len() as f64).then_some(x)
}

/// Vertex offset of the parabola through three equally spaced points.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-18 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

fn in_band(hz: f64, band: &PitchBand) -> Option<f64> {
    // interpolation can nudge an edge lag fractionally outside the band
    let slack = 1e-3;
    if hz >= band.f_min * (1.0 - slack) && hz <= band.f_max * (1.0 + slack) {
        Some(hz.clamp(band.f_min, band.f_max))
    } else {
        None
    }
}

/// Normalized cross-correlation peak picking.
pub fn estimate_pitch_acf(frames: &Frames<'_>, band: PitchBand) -> Result<Vec<PitchCandidate>> {
    let sr = frames.grid.sample_rate;
    band.validate(sr)?;
    Ok(frames.iter().map(|f| acf_frame(f, sr, &band)).collect())
}

fn acf_frame(frame: &[f64], sr: u32, band: &PitchBand) -> PitchCandidate {
    let Some(x) = centered(frame) else {
        return PitchCandidate::UNVOICED;
    };
    let n = x.len();
    let (lo, hi) = band.lag_range(sr, n.saturating_sub(n / 4));
    if hi <= lo + 1 {
        return PitchCandidate::UNVOICED;
    }
    let nccf = |tau: usize| {
        let (a, b) = (&x[..n - tau], &x[tau..]);
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for (p, q) in a.iter().zip(b) {
            xy += p * q;
            xx += p * p;
            yy += q * q;
        }
        if xx <= 0.0 || yy <= 0.0 {
            0.0
        } else {
            xy / (xx * yy).sqrt()
        }
    };
    let r: Vec<f64> = (lo - 1..=hi + 1).map(nccf).collect();
    let at = |tau: usize| r[tau + 1 - lo];
    let peaks: Vec<usize> = (lo..=hi)
        .filter(|&t| at(t) > at(t - 1) && at(t) >= at(t + 1))
        .collect();
    let Some(best) = peaks.iter().copied().reduce(|a, b| if at(b) > at(a) { b } else { a }) else {
        return PitchCandidate::UNVOICED;
    };
    // the earliest peak close to the global maximum guards against sub-harmonics
    let tau = peaks
        .into_iter()
        .find(|&t| at(t) >= ACF_PEAK_RATIO * at(best))
        .unwrap_or(best);
    let confidence = at(tau).clamp(0.0, 1.0);
    let lag = tau as f64 + parabolic_offset(at(tau - 1), at(tau), at(tau + 1));
    match in_band(sr as f64 / lag, band) {
        Some(hz) if confidence >= ACF_VOICING => PitchCandidate {
            hz: Some(hz),
            confidence,
        },
        _ => PitchCandidate {
            hz: None,
            confidence,
        },
    }
}

/// Cumulative-mean-normalized difference function (YIN-style) with an
/// absolute threshold.
pub fn estimate_pitch_cmnd(frames: &Frames<'_>, band: PitchBand) -> Result<Vec<PitchCandidate>> {
    let sr = frames.grid.sample_rate;
    band.validate(sr)?;
    Ok(frames.iter().map(|f| cmnd_frame(f, sr, &band)).collect())
}

fn cmnd_frame(frame: &[f64], sr: u32, band: &PitchBand) -> PitchCandidate {
    let Some(x) = centered(frame) else {
        return PitchCandidate::UNVOICED;
    };
    let n = x.len();
    let (lo, hi) = band.lag_range(sr, n / 2);
    if hi <= lo + 1 {
        return PitchCandidate::UNVOICED;
    }
    let window = n - hi - 1;
    let mut d = vec![0.0; hi + 2];
    for (tau, slot) in d.iter_mut().enumerate().skip(1) {
        *slot = x[..window]
            .iter()
            .zip(&x[tau..tau + window])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    let mut cmnd = vec![1.0; hi + 2];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        cmnd[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let tau = match (lo..=hi).find(|&t| cmnd[t] < CMND_THRESHOLD) {
        Some(mut t) => {
            while t < hi && cmnd[t + 1] < cmnd[t] {
                t += 1;
            }
            t
        }
        None => (lo..=hi)
            .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
            .unwrap(),
    };
    let value = cmnd[tau];
    let confidence = (1.0 - value).clamp(0.0, 1.0);
    let lag = tau as f64 + parabolic_offset(cmnd[tau - 1], value, cmnd[tau + 1]);
    match in_band(sr as f64 / lag, band) {
        Some(hz) if value < CMND_VOICING => PitchCandidate {
            hz: Some(hz),
            confidence,
        },
        _ => PitchCandidate {
            hz: None,
            confidence,
        },
    }
}

/// Real-cepstrum peak picking over the quefrency band.
pub fn estimate_pitch_cepstral(
    frames: &Frames<'_>,
    band: PitchBand,
) -> Result<Vec<PitchCandidate>> {
    let sr = frames.grid.sample_rate;
    band.validate(sr)?;
    let n = frames.grid.frame_length();
    let nfft = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let ifft = planner.plan_fft_inverse(nfft);
    let window = super::mel::hann(n);
    Ok(frames
        .iter()
        .map(|f| cepstral_frame(f, sr, &band, &window, &fft, &ifft))
        .collect())
}

fn cepstral_frame(
    frame: &[f64],
    sr: u32,
    band: &PitchBand,
    window: &[f64],
    fft: &Arc<dyn Fft<f64>>,
    ifft: &Arc<dyn Fft<f64>>,
) -> PitchCandidate {
    let Some(x) = centered(frame) else {
        return PitchCandidate::UNVOICED;
    };
    let nfft = fft.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .zip(window)
        .map(|(v, w)| Complex::new(v * w, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    fft.process(&mut buf);
    let peak_mag = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = peak_mag * 1e-6;
    for c in buf.iter_mut() {
        *c = Complex::new((c.norm() + floor).ln(), 0.0);
    }
    ifft.process(&mut buf);
    let ceps: Vec<f64> = buf.iter().map(|c| c.re / nfft as f64).collect();
    let (lo, hi) = band.lag_range(sr, x.len() - 1);
    if hi <= lo + 1 {
        return PitchCandidate::UNVOICED;
    }
    let slice = &ceps[lo..=hi];
    let mean = slice.iter().sum::<f64>() / slice.len() as f64;
    let std = (slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / slice.len() as f64)
        .sqrt();
    if std <= 0.0 {
        return PitchCandidate::UNVOICED;
    }
    let q = (lo..=hi)
        .max_by(|&a, &b| ceps[a].total_cmp(&ceps[b]))
        .unwrap();
    let z = (ceps[q] - mean) / std;
    let confidence = ((z - 3.0) / 6.0).clamp(0.0, 1.0);
    let lag = q as f64 + parabolic_offset(ceps[q - 1], ceps[q], ceps[q + 1]);
    match in_band(sr as f64 / lag, band) {
        Some(hz) if z >= CEPSTRUM_VOICING_Z => PitchCandidate {
            hz: Some(hz),
            confidence,
        },
        _ => PitchCandidate {
            hz: None,
            confidence,
        },
    }
}

fn near_ratio(value: f64, reference: f64, ratio: f64) -> bool {
    let target = reference * ratio;
    (value - target).abs() <= OCTAVE_TOLERANCE * target
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn vote_frame(cands: [PitchCandidate; 3], band: &PitchBand) -> Option<f64> {
    let voiced: Vec<(f64, f64)> = cands
        .iter()
        .filter_map(|c| c.hz.map(|h| (h, c.confidence)))
        .collect();
    match voiced.len() {
        3 => {
            let mut corrected: Vec<f64> = (0..3)
                .map(|i| {
                    let hz = voiced[i].0;
                    let mut others: Vec<f64> = (0..3)
                        .filter(|&j| j != i)
                        .map(|j| voiced[j].0)
                        .collect();
                    let reference = median_of(&mut others);
                    let fixed = if near_ratio(hz, reference, 2.0) {
                        hz / 2.0
                    } else if near_ratio(hz, reference, 0.5) {
                        hz * 2.0
                    } else {
                        hz
                    };
                    if band.contains(fixed) {
                        fixed
                    } else {
                        hz
                    }
                })
                .collect();
            Some(median_of(&mut corrected))
        }
        2 => {
            let (a, b) = (voiced[0], voiced[1]);
            let octave = near_ratio(a.0, b.0, 2.0) || near_ratio(a.0, b.0, 0.5);
            if octave {
                // disagreeing by an octave: trust the more confident one, lower on ties
                let pick = match a.1.total_cmp(&b.1) {
                    std::cmp::Ordering::Greater => a.0,
                    std::cmp::Ordering::Less => b.0,
                    std::cmp::Ordering::Equal => a.0.min(b.0),
                };
                Some(pick)
            } else {
                Some(0.5 * (a.0 + b.0))
            }
        }
        _ => None,
    }
}

/// Majority voicing plus octave-corrected median over three candidate tracks.
pub fn vote_pitch(
    acf: &[PitchCandidate],
    cmnd: &[PitchCandidate],
    cepstral: &[PitchCandidate],
    band: PitchBand,
) -> Result<PitchTrack> {
    if acf.len() != cmnd.len() || acf.len() != cepstral.len() {
        return Err(Error::Shape(format!(
            "candidate tracks have lengths {}, {}, {}",
            acf.len(),
            cmnd.len(),
            cepstral.len()
        )));
    }
    let mut track = PitchTrack {
        f0: Vec::with_capacity(acf.len()),
        voiced: Vec::with_capacity(acf.len()),
    };
    for i in 0..acf.len() {
        match vote_frame([acf[i], cmnd[i], cepstral[i]], &band) {
            Some(hz) if hz > 0.0 => {
                track.f0.push(hz);
                track.voiced.push(true);
            }
            _ => {
                track.f0.push(0.0);
                track.voiced.push(false);
            }
        }
    }
    Ok(track)
}

/// Runs all three estimators and votes.
pub(crate) fn track_pitch(frames: &Frames<'_>, band: PitchBand) -> Result<PitchTrack> {
    let a = estimate_pitch_acf(frames, band)?;
    let b = estimate_pitch_cmnd(frames, band)?;
    let c = estimate_pitch_cepstral(frames, band)?;
    let voted = vote_pitch(&a, &b, &c, band)?;
    Ok(median_smooth(&voted, SMOOTH_HALF_WIDTH))
}

pub const SMOOTH_HALF_WIDTH: usize = 2;

fn voiced_runs(voiced: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < voiced.len() {
        if voiced[i] {
            let start = i;
            while i < voiced.len() && voiced[i] {
                i += 1;
            }
            runs.push((start, i));
        } else {
            i += 1;
        }
    }
    runs
}

/// Running median of `ln f0` over each voiced run. Near run edges the
/// window is shifted inward rather than cut, so onset frames that straddle
/// a voicing transition are outvoted too. Genuine steps survive.
pub fn median_smooth(track: &PitchTrack, half_width: usize) -> PitchTrack {
    let mut f0 = track.f0.clone();
    for (start, end) in voiced_runs(&track.voiced) {
        let run: Vec<f64> = track.f0[start..end].iter().map(|f| f.ln()).collect();
        for k in 0..run.len() {
            let width = (2 * half_width + 1).min(run.len());
            let lo = k.saturating_sub(half_width).min(run.len() - width);
            let hi = lo + width;
            let mut w = run[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = if w.len() % 2 == 1 {
                w[w.len() / 2]
            } else {
                0.5 * (w[w.len() / 2 - 1] + w[w.len() / 2])
            };
            f0[start + k] = m.exp();
        }
    }
    PitchTrack {
        f0,
        voiced: track.voiced.clone(),
    }
}

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{frame_samples, AudioClip, FrameGrid, GridParams};
use crate::Result;

/// Power floor applied before the log.
pub const MEL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub n_fft: usize,
    pub pre_emphasis: f64,
    pub grid: GridParams,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min: 0.0,
            f_max: 12_000.0,
            n_fft: 2048,
            pre_emphasis: 0.97,
            grid: GridParams::default(),
        }
    }
}

/// Log-Mel magnitudes, row-major `n_frames x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Vec<f64>,
    pub n_mels: usize,
    pub grid: FrameGrid,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        if self.n_mels == 0 {
            0
        } else {
            self.frames.len() / self.n_mels
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.frames[i * self.n_mels..(i + 1) * self.n_mels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks_exact(self.n_mels.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    // periodic Hann, which overlap-adds cleanly
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peaks; neighbouring filters sum to one
/// between the first and last centre frequency.
#[derive(Debug, Clone)]
pub(crate) struct MelBank {
    /// `n_mels x n_bins`
    weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    pub centers_hz: Vec<f64>,
    areas: Vec<f64>,
}

impl MelBank {
    pub fn new(cfg: &MelConfig, sample_rate: u32) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                if w > 0.0 {
                    weights[m * n_bins + k] = w;
                }
            }
        }
        let areas = (0..cfg.n_mels)
            .map(|m| weights[m * n_bins..(m + 1) * n_bins].iter().sum::<f64>())
            .collect();
        Self {
            weights,
            n_mels: cfg.n_mels,
            n_bins,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            areas,
        }
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let w = &self.weights[m * self.n_bins..(m + 1) * self.n_bins];
            *o = w.iter().zip(power).map(|(a, b)| a * b).sum();
        }
    }

    /// Spreads each band's power evenly back over the bins it covers.
    pub fn invert(&self, mel_power: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..self.n_mels {
            if self.areas[m] <= 0.0 {
                continue;
            }
            let per_bin = mel_power[m] / self.areas[m];
            let w = &self.weights[m * self.n_bins..(m + 1) * self.n_bins];
            for (o, wk) in out.iter_mut().zip(w) {
                *o += wk * per_bin;
            }
        }
    }
}

/// Short-time Fourier analysis/synthesis pair sharing one window and FFT plan.
pub(crate) struct Stft {
    pub window: Vec<f64>,
    pub hop: usize,
    pub n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(length: usize, hop: usize, n_fft: usize) -> Self {
        let n_fft = n_fft.max(length.next_power_of_two());
        let mut planner = FftPlanner::new();
        Self {
            window: hann(length),
            hop,
            n_fft,
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// One-sided spectrum of a single windowed frame.
    pub fn analyze(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>) {
        buf.clear();
        buf.extend(
            frame
                .iter()
                .zip(&self.window)
                .map(|(x, w)| Complex::new(x * w, 0.0)),
        );
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(buf);
        buf.truncate(self.n_bins());
    }

    /// Weighted overlap-add of one-sided spectra back to a signal.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let len = self.window.len();
        let n = (spectra.len().max(1) - 1) * self.hop + len;
        let mut out = vec![0.0; n];
        let mut norm = vec![0.0; n];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (i, spec) in spectra.iter().enumerate() {
            for k in 0..self.n_fft {
                buf[k] = if k < spec.len() {
                    spec[k]
                } else {
                    spec[self.n_fft - k].conj()
                };
            }
            self.ifft.process(&mut buf);
            let start = i * self.hop;
            for j in 0..len {
                let w = self.window[j];
                out[start + j] += buf[j].re / self.n_fft as f64 * w;
                norm[start + j] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-8 {
                *o /= w;
            }
        }
        out
    }
}

pub(crate) fn pre_emphasize(samples: &[f64], coef: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = 0.0;
    for &s in samples {
        out.push(s - coef * prev);
        prev = s;
    }
    out
}

pub(crate) fn de_emphasize(samples: &[f64], coef: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = 0.0;
    for &s in samples {
        prev = s + coef * prev;
        out.push(prev);
    }
    out
}

/// 80-band log-Mel spectrogram of the pre-emphasized clip.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let emphasized = pre_emphasize(clip.samples(), cfg.pre_emphasis);
    let frames = frame_samples(&emphasized, clip.sample_rate(), cfg.grid)?;
    let grid = frames.grid;
    let stft = Stft::new(grid.frame_length(), grid.frame_shift(), cfg.n_fft);
    let bank = MelBank::new(cfg, clip.sample_rate());
    let mut out = vec![0.0; grid.n_frames * cfg.n_mels];
    let mut buf = Vec::with_capacity(stft.n_fft);
    let mut power = vec![0.0; stft.n_bins()];
    for (i, frame) in frames.iter().enumerate() {
        stft.analyze(frame, &mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let row = &mut out[i * cfg.n_mels..(i + 1) * cfg.n_mels];
        bank.apply(&power, row);
        for v in row.iter_mut() {
            *v = v.max(MEL_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        frames: out,
        n_mels: cfg.n_mels,
        grid,
    })
}

/// Spectral balance of a Mel-spectrogram: the normalized lag-one
/// autocorrelation of the signal implied by the band powers, with the
/// pre-emphasis response divided back out. Averaged over frames. For an
/// all-pole source with pole `a` this tracks `a`, so it serves as a
/// tilt proxy when only a Mel is available.
pub fn spectral_balance(mel: &MelSpectrogram, cfg: &MelConfig) -> f64 {
    let sr = mel.grid.sample_rate as f64;
    let centers = MelBank::new(cfg, mel.grid.sample_rate).centers_hz;
    let (cosines, deemph): (Vec<f64>, Vec<f64>) = centers
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f / sr;
            let pe = 1.0 - 2.0 * cfg.pre_emphasis * w.cos() + cfg.pre_emphasis * cfg.pre_emphasis;
            (w.cos(), 1.0 / pe)
        })
        .unzip();
    let n = mel.n_frames();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for row in mel.rows() {
        let (mut num, mut den) = (0.0, 0.0);
        for m in 0..mel.n_mels {
            let p = row[m].exp() * deemph[m];
            num += p * cosines[m];
            den += p;
        }
        total += if den > 0.0 { num / den } else { 0.0 };
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 24_000;

    fn sine(hz: f64, n: usize) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / SR as f64).sin())
                .collect(),
            SR,
        )
        .unwrap()
    }

    #[test]
    fn one_second_is_98_by_80() {
        let mel = mel_spectrogram(&sine(440.0, 24_000), &MelConfig::default()).unwrap();
        assert_eq!(mel.n_frames(), 98);
        assert_eq!(mel.n_mels, 80);
        assert!(mel.is_finite());
    }

    #[test]
    fn zero_clip_is_floor() {
        let clip = AudioClip::new(vec![0.0; 4800], SR).unwrap();
        let mel = mel_spectrogram(&clip, &MelConfig::default()).unwrap();
        assert!(mel.frames.iter().all(|&v| v == MEL_FLOOR.ln()));
    }

    #[test]
    fn stationary_sine_has_constant_argmax() {
        let mel = mel_spectrogram(&sine(1000.0, 12_000), &MelConfig::default()).unwrap();
        let argmax = |row: &[f64]| {
            (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap()
        };
        let first = argmax(mel.row(0));
        assert!(mel.rows().all(|r| argmax(r) == first));
        let bank = MelBank::new(&MelConfig::default(), SR);
        assert!((bank.centers_hz[first] - 1000.0).abs() < 60.0);
    }

    #[test]
    fn filters_partition_unity_inside_range() {
        let cfg = MelConfig::default();
        let bank = MelBank::new(&cfg, SR);
        let bin_hz = SR as f64 / cfg.n_fft as f64;
        for k in 0..bank.n_bins {
            let f = k as f64 * bin_hz;
            if f > bank.centers_hz[0] && f < bank.centers_hz[79] {
                let s: f64 = (0..80).map(|m| bank.weights[m * bank.n_bins + k]).sum();
                assert!((s - 1.0).abs() < 1e-9, "bin {k}: {s}");
            }
        }
        assert!(bank.areas.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn emphasis_round_trip() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let y = de_emphasize(&pre_emphasize(&x, 0.97), 0.97);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stft_round_trip_reconstructs_interior() {
        let x: Vec<f64> = (0..4800).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
        let stft = Stft::new(600, 240, 2048);
        let n_frames = (x.len() - 600) / 240 + 1;
        let mut buf = Vec::new();
        let spectra: Vec<_> = (0..n_frames)
            .map(|i| {
                stft.analyze(&x[i * 240..i * 240 + 600], &mut buf);
                buf.clone()
            })
            .collect();
        let y = stft.synthesize(&spectra);
        for i in 10..y.len() - 10 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::mel::{de_emphasize, MelBank, Stft};
use super::{AudioClip, MelConfig, MelSpectrogram};
use crate::Result;

const PHASE_SEED: u64 = 0x6772_6966;

/// Iterative phase reconstruction from a log-Mel spectrogram. The Mel is
/// first spread back to linear-frequency magnitudes, then `n_iters` rounds
/// of STFT/ISTFT projection estimate a consistent phase. De-emphasis is
/// applied to the result.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &MelConfig, n_iters: usize) -> Result<AudioClip> {
    let sr = mel.grid.sample_rate;
    let stft = Stft::new(mel.grid.frame_length(), mel.grid.frame_shift(), cfg.n_fft);
    let bank = MelBank::new(cfg, sr);
    let n_bins = stft.n_bins();
    let mut power = vec![0.0; n_bins];
    let magnitudes: Vec<Vec<f64>> = mel
        .rows()
        .map(|row| {
            let mel_power: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            bank.invert(&mel_power, &mut power);
            power.iter().map(|p| p.max(0.0).sqrt()).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
    let mut spectra: Vec<Vec<Complex<f64>>> = magnitudes
        .iter()
        .map(|mag| {
            mag.iter()
                .map(|&m| Complex::from_polar(m, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)))
                .collect()
        })
        .collect();

    let len = stft.window.len();
    let mut buf = Vec::with_capacity(stft.n_fft);
    for _ in 0..n_iters.max(1) {
        let signal = stft.synthesize(&spectra);
        for (i, (spec, mag)) in spectra.iter_mut().zip(&magnitudes).enumerate() {
            let start = i * stft.hop;
            stft.analyze(&signal[start..start + len], &mut buf);
            for ((s, &m), c) in spec.iter_mut().zip(mag).zip(&buf) {
                let norm = c.norm();
                *s = if norm > 0.0 { c * (m / norm) } else { Complex::new(m, 0.0) };
            }
        }
    }
    let signal = stft.synthesize(&spectra);
    AudioClip::from_clamped(de_emphasize(&signal, cfg.pre_emphasis), sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;
    use rustfft::FftPlanner;
    use std::f64::consts::PI;

    const SR: u32 = 24_000;

    fn dominant_hz(x: &[f64]) -> f64 {
        let n = x.len().next_power_of_two();
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        k as f64 * SR as f64 / n as f64
    }

    #[test]
    fn sine_reconstruction_keeps_frequency() {
        let clip = AudioClip::new(
            (0..12_000)
                .map(|i| 0.3 * (2.0 * PI * 440.0 * i as f64 / SR as f64).sin())
                .collect(),
            SR,
        )
        .unwrap();
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&clip, &cfg).unwrap();
        let out = griffin_lim(&mel, &cfg, 32).unwrap();
        let hz = dominant_hz(out.samples());
        assert!((hz - 440.0).abs() <= 0.05 * 440.0, "{hz}");
    }

    #[test]
    fn floor_mel_is_near_silent() {
        let clip = AudioClip::new(vec![0.0; 4800], SR).unwrap();
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&clip, &cfg).unwrap();
        let out = griffin_lim(&mel, &cfg, 8).unwrap();
        let peak = out.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.01, "{peak}");
    }

    #[test]
    fn round_trip_error_decreases_with_iterations() {
        // two-tone chirp-like test clip with some amplitude modulation
        let clip = AudioClip::new(
            (0..14_400)
                .map(|i| {
                    let t = i as f64 / SR as f64;
                    0.2 * (2.0 * PI * 300.0 * t).sin() * (1.0 + 0.5 * (2.0 * PI * 3.0 * t).sin()) / 1.5
                        + 0.1 * (2.0 * PI * (900.0 + 400.0 * t) * t).sin()
                })
                .collect(),
            SR,
        )
        .unwrap();
        let cfg = MelConfig::default();
        let target = mel_spectrogram(&clip, &cfg).unwrap();
        let errors: Vec<f64> = [1, 2, 4, 8, 16, 32]
            .iter()
            .map(|&n| {
                let out = griffin_lim(&target, &cfg, n).unwrap();
                let again = mel_spectrogram(&out, &cfg).unwrap();
                let frames = again.n_frames().min(target.n_frames());
                let m = target.n_mels;
                (0..frames * m)
                    .map(|i| (again.frames[i] - target.frames[i]).abs())
                    .sum::<f64>()
                    / (frames * m) as f64
            })
            .collect();
        for w in errors.windows(2) {
            assert!(w[1] < w[0], "{errors:?}");
        }
    }
}

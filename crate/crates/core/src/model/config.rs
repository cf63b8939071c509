use serde::{Deserialize, Serialize};

use crate::corpus::VOCAB_SIZE;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub utterance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 1.0,
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
            utterance: 1.0,
        }
    }
}

/// Network shape plus the data-derived constants the network needs at
/// inference (quantization ranges, Mel scaling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub attn_heads: usize,
    pub encoder_conv_kernel: usize,
    pub encoder_conv_filters: usize,
    pub decoder_blocks: usize,
    pub decoder_dilations: Vec<usize>,
    pub decoder_kernel: usize,
    pub decoder_filters: usize,
    pub predictor_kernel: usize,
    pub predictor_filters: usize,
    pub dropout: f64,
    pub layernorm_eps: f64,
    pub n_mels: usize,
    pub pitch_bins: usize,
    pub energy_bins: usize,
    /// Standardized phone log-pitch range covered by the pitch buckets.
    pub pitch_range: [f64; 2],
    /// Standardized phone energy range covered by the energy buckets.
    pub energy_range: [f64; 2],
    /// The decoder predicts `(mel - mel_mean) / mel_std` per bin.
    pub mel_mean: Vec<f64>,
    pub mel_std: f64,
    pub loss_weights: LossWeights,
    pub init_seed: u64,
    /// Optimizer steps taken; zero means untrained.
    pub trained_steps: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            embed_dim: 64,
            encoder_layers: 2,
            attn_heads: 2,
            encoder_conv_kernel: 9,
            encoder_conv_filters: 128,
            decoder_blocks: 1,
            decoder_dilations: vec![1, 2, 4, 8, 16, 32],
            decoder_kernel: 3,
            decoder_filters: 64,
            predictor_kernel: 3,
            predictor_filters: 64,
            dropout: 0.2,
            layernorm_eps: 1e-6,
            n_mels: 80,
            pitch_bins: 256,
            energy_bins: 256,
            pitch_range: [-3.0, 3.0],
            energy_range: [-3.0, 3.0],
            mel_mean: vec![0.0; 80],
            mel_std: 1.0,
            loss_weights: LossWeights::default(),
            init_seed: 0,
            trained_steps: 0,
        }
    }
}

impl ModelConfig {
    /// Layer counts and widths from the original large-scale setup.
    pub fn paper_scale() -> Self {
        Self {
            embed_dim: 256,
            encoder_layers: 4,
            encoder_conv_filters: 1024,
            decoder_blocks: 2,
            decoder_filters: 256,
            predictor_filters: 256,
            ..Self::default()
        }
    }

    /// Tiny network for gradient checks.
    pub fn micro() -> Self {
        Self {
            embed_dim: 8,
            encoder_layers: 1,
            attn_heads: 2,
            encoder_conv_kernel: 3,
            encoder_conv_filters: 8,
            decoder_blocks: 1,
            decoder_dilations: vec![1, 2],
            decoder_kernel: 3,
            decoder_filters: 8,
            predictor_kernel: 3,
            predictor_filters: 8,
            dropout: 0.0,
            n_mels: 6,
            pitch_bins: 8,
            energy_bins: 8,
            mel_mean: vec![0.0; 6],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("encoder_layers", self.encoder_layers),
            ("attn_heads", self.attn_heads),
            ("encoder_conv_kernel", self.encoder_conv_kernel),
            ("encoder_conv_filters", self.encoder_conv_filters),
            ("decoder_blocks", self.decoder_blocks),
            ("decoder_kernel", self.decoder_kernel),
            ("decoder_filters", self.decoder_filters),
            ("predictor_kernel", self.predictor_kernel),
            ("predictor_filters", self.predictor_filters),
            ("n_mels", self.n_mels),
        ];
        for (name, v) in counts {
            if v < 1 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        for (name, k) in [
            ("encoder_conv_kernel", self.encoder_conv_kernel),
            ("decoder_kernel", self.decoder_kernel),
            ("predictor_kernel", self.predictor_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd"));
            }
        }
        if self.embed_dim % self.attn_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by attn_heads {}",
                self.embed_dim, self.attn_heads
            ));
        }
        if self.decoder_dilations.is_empty() || self.decoder_dilations.contains(&0) {
            return bad("decoder_dilations must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.pitch_bins < 2 || self.energy_bins < 2 {
            return bad("quantization needs at least 2 bins".into());
        }
        for (name, r) in [("pitch_range", self.pitch_range), ("energy_range", self.energy_range)] {
            if !(r[0] < r[1]) {
                return bad(format!("{name} must have lo < hi"));
            }
        }
        if self.mel_mean.len() != self.n_mels || !(self.mel_std > 0.0) {
            return bad("mel_mean must have n_mels entries and mel_std must be positive".into());
        }
        if !(self.layernorm_eps > 0.0) {
            return bad("layernorm_eps must be positive".into());
        }
        Ok(())
    }

    /// Frames seen by one output frame of a single decoder block.
    pub fn decoder_receptive_field(&self) -> usize {
        1 + (self.decoder_kernel - 1) * self.decoder_dilations.iter().sum::<usize>()
    }
}

/// `clamp(floor((v - lo) / (hi - lo) * bins), 0, bins - 1)`.
pub fn bucket(v: f64, range: [f64; 2], bins: usize) -> usize {
    let [lo, hi] = range;
    let b = ((v - lo) / (hi - lo) * bins as f64).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket(-1.0, [-1.0, 1.0], 256), 0);
        assert_eq!(bucket(1.0, [-1.0, 1.0], 256), 255);
        assert_eq!(bucket(0.0, [-1.0, 1.0], 256), 128);
        assert_eq!(bucket(-7.0, [-1.0, 1.0], 256), 0);
        assert_eq!(bucket(f64::NAN, [-1.0, 1.0], 256), 0);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::micro().validate().is_ok());
        let c = ModelConfig {
            attn_heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn receptive_field_of_one_block() {
        assert_eq!(ModelConfig::default().decoder_receptive_field(), 127);
    }
}

//! Prosodia: a desk-scale, non-autoregressive TTS front-end with hierarchical
//! prosody modeling and control.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`dsp`] extracts frame-level pitch, energy, spectral tilt and Mel-spectrograms.
//! 2. [`corpus`] aggregates those to phone and utterance level, fits the `[-1, 1]`
//!    normalization and persists datasets (including a synthetic toy corpus).
//! 3. [`model`] is the network itself: an FFT-block encoder, an utterance-level
//!    variance adaptor whose five outputs condition the phone-level duration, pitch
//!    and energy predictors, a length regulator and a dilated-convolution decoder,
//!    all running on a small reverse-mode differentiation core.
//! 4. [`training`] runs Adam with warmup over teacher-forced utterances.
//! 5. [`control`] and [`evalharness`] synthesize with utterance-level bias and
//!    word-level emphasis, and measure how well the realized prosody follows the bias.

pub mod binfmt;
pub mod control;
pub mod corpus;
pub mod dsp;
mod error;
pub mod evalharness;
pub mod model;
pub mod stats;
pub mod training;

pub use error::{Error, Result};

/// Caps rayon parallelism when `PROSODIA_THREADS` is set. Safe to call repeatedly.
pub fn init_thread_pool() {
    if let Some(n) = std::env::var("PROSODIA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

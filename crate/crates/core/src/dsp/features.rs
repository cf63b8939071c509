use super::Frames;

/// Frames quieter than the loudest frame by more than this are silence.
pub const SILENCE_RANGE_DB: f64 = 40.0;

/// Per-frame energy and spectral tilt; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameFeatures {
    pub energy_db: Vec<Option<f64>>,
    pub tilt: Vec<Option<f64>>,
    pub silence: Vec<bool>,
}

fn mean_abs(frame: &[f64]) -> f64 {
    frame.iter().map(|v| v.abs()).sum::<f64>() / frame.len() as f64
}

fn level_db(frame: &[f64]) -> Option<f64> {
    let m = mean_abs(frame);
    (m > 0.0).then(|| 20.0 * m.log10())
}

/// Marks frames whose level is more than `range_db` below the loudest frame,
/// and all-zero frames.
pub fn silence_mask(frames: &Frames<'_>, range_db: f64) -> Vec<bool> {
    let levels: Vec<Option<f64>> = frames.iter().map(level_db).collect();
    let Some(loudest) = levels.iter().flatten().copied().reduce(f64::max) else {
        return vec![true; levels.len()];
    };
    levels
        .iter()
        .map(|l| l.map_or(true, |db| db < loudest - range_db))
        .collect()
}

/// `20 log10(mean |x|)` on non-silent frames. A frame with zero mean
/// amplitude is reported as silent (no value) even if the mask says otherwise.
pub fn frame_energy(frames: &Frames<'_>, silence: &[bool]) -> Vec<Option<f64>> {
    frames
        .iter()
        .zip(silence)
        .map(|(f, &silent)| if silent { None } else { level_db(f) })
        .collect()
}

/// First-order linear-predictor coefficient `-r(1)/r(0)` on voiced frames.
/// Natural voiced speech lands near -0.95.
pub fn spectral_tilt(frames: &Frames<'_>, voiced: &[bool]) -> Vec<Option<f64>> {
    frames
        .iter()
        .zip(voiced)
        .map(|(f, &v)| if v { tilt_of(f) } else { None })
        .collect()
}

pub(crate) fn tilt_of(frame: &[f64]) -> Option<f64> {
    let r0: f64 = frame.iter().map(|v| v * v).sum();
    if r0 <= 0.0 {
        return None;
    }
    let r1: f64 = frame.windows(2).map(|w| w[0] * w[1]).sum();
    Some((-r1 / r0).clamp(-1.0, 1.0))
}

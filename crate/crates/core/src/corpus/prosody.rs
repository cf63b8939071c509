use serde::{Deserialize, Serialize};

use super::alignment::PhoneAlignment;
use crate::dsp::{FrameFeatures, PitchTrack};
use crate::stats;
use crate::{Error, Result};

/// The five utterance-level features, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Pitch,
    PitchRange,
    Duration,
    Energy,
    Tilt,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Pitch,
        Feature::PitchRange,
        Feature::Duration,
        Feature::Energy,
        Feature::Tilt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Pitch => "pitch",
            Feature::PitchRange => "pitch_range",
            Feature::Duration => "duration",
            Feature::Energy => "energy",
            Feature::Tilt => "tilt",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Unit of the raw feature.
    pub fn unit(self) -> &'static str {
        match self {
            Feature::Pitch => "log Hz",
            Feature::PitchRange => "log Hz",
            Feature::Duration => "log ms",
            Feature::Energy => "dB",
            Feature::Tilt => "",
        }
    }
}

/// Pitch (log Hz), pitch range (log Hz), duration (log ms), energy (dB), tilt.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProsodyVector(pub [f64; 5]);

impl ProsodyVector {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.0[f.index()] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Per-phone aggregates. `None` where no usable frame fell inside the phone.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhoneProsody {
    pub duration_frames: Vec<usize>,
    pub log_pitch: Vec<Option<f64>>,
    pub energy_db: Vec<Option<f64>>,
}

/// Per-phone targets with gaps filled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhoneTargets {
    pub duration_frames: Vec<usize>,
    pub log_pitch: Vec<f64>,
    pub energy_db: Vec<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean log-f0 over voiced frames and mean energy over non-silent frames,
/// per phone.
pub fn aggregate_phone(pitch: &PitchTrack, feats: &FrameFeatures, align: &PhoneAlignment) -> Result<PhoneProsody> {
    let n = pitch.len();
    if feats.energy_db.len() != n || align.end_frame() > n {
        return Err(Error::Shape(format!(
            "pitch track has {n} frames, features {}, alignment ends at {}",
            feats.energy_db.len(),
            align.end_frame()
        )));
    }
    let mut out = PhoneProsody::default();
    for &(s, e) in &align.intervals {
        out.duration_frames.push(e - s);
        out.log_pitch
            .push(mean_of((s..e).filter(|&i| pitch.voiced[i]).map(|i| pitch.f0[i].ln())));
        out.energy_db.push(mean_of((s..e).filter_map(|i| feats.energy_db[i])));
    }
    Ok(out)
}

/// Fills gaps by linear interpolation in phone index between the nearest
/// known neighbours; the mean of known values is used past either edge.
/// Returns `None` when nothing is known.
pub fn impute(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let fill = mean_of(known.iter().map(|k| k.1))?;
    Some(
        (0..values.len())
            .map(|i| {
                if let Some(v) = values[i] {
                    return v;
                }
                let after = known.partition_point(|k| k.0 < i);
                match (after.checked_sub(1).map(|j| known[j]), known.get(after)) {
                    (Some((i0, v0)), Some(&(i1, v1))) => {
                        v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                    }
                    _ => fill,
                }
            })
            .collect(),
    )
}

impl PhoneProsody {
    pub fn impute(&self) -> Result<PhoneTargets> {
        Ok(PhoneTargets {
            duration_frames: self.duration_frames.clone(),
            log_pitch: impute(&self.log_pitch).ok_or(Error::UnvoicedUtterance)?,
            energy_db: impute(&self.energy_db)
                .ok_or_else(|| Error::InvalidArgument("utterance is entirely silent".into()))?,
        })
    }
}

/// Raw utterance-level features from frame tracks and phone durations.
pub fn utterance_prosody(
    pitch: &PitchTrack,
    feats: &FrameFeatures,
    phone: &PhoneProsody,
    frame_shift_ms: f64,
) -> Result<ProsodyVector> {
    let logf0 = pitch.voiced_log_f0();
    if logf0.is_empty() {
        return Err(Error::UnvoicedUtterance);
    }
    if phone.duration_frames.is_empty() {
        return Err(Error::InvalidArgument("no phones".into()));
    }
    let pitch_mean = stats::mean(&logf0).unwrap_or_default();
    let range = stats::quantile(&logf0, 0.95).unwrap_or_default()
        - stats::quantile(&logf0, 0.05).unwrap_or_default();
    let duration = mean_of(
        phone
            .duration_frames
            .iter()
            .map(|&d| (d as f64 * frame_shift_ms).ln()),
    )
    .unwrap_or_default();
    let energy = mean_of(feats.energy_db.iter().flatten().copied())
        .ok_or_else(|| Error::InvalidArgument("utterance is entirely silent".into()))?;
    let tilt = mean_of(feats.tilt.iter().flatten().copied()).ok_or(Error::UnvoicedUtterance)?;
    Ok(ProsodyVector([pitch_mean, range, duration, energy, tilt]))
}

/// Median and population standard deviation of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub median: f64,
    pub sigma: f64,
}

impl FeatureStats {
    /// `clip((v - M) / 3 sigma, -1, 1)`.
    pub fn normalize(&self, v: f64) -> f64 {
        self.normalize_unclipped(v).clamp(-1.0, 1.0)
    }

    pub fn normalize_unclipped(&self, v: f64) -> f64 {
        (v - self.median) / (3.0 * self.sigma)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.median + 3.0 * self.sigma * y
    }
}

/// Per-feature normalization, serialized as `{"pitch": {"median", "sigma"}, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pitch: FeatureStats,
    pub pitch_range: FeatureStats,
    pub duration: FeatureStats,
    pub energy: FeatureStats,
    pub tilt: FeatureStats,
}

impl NormStats {
    pub fn from_array(a: [FeatureStats; 5]) -> Self {
        Self {
            pitch: a[0],
            pitch_range: a[1],
            duration: a[2],
            energy: a[3],
            tilt: a[4],
        }
    }

    pub fn get(&self, f: Feature) -> &FeatureStats {
        match f {
            Feature::Pitch => &self.pitch,
            Feature::PitchRange => &self.pitch_range,
            Feature::Duration => &self.duration,
            Feature::Energy => &self.energy,
            Feature::Tilt => &self.tilt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in Feature::ALL {
            let s = self.get(f);
            if !(s.sigma > 0.0 && s.sigma.is_finite() && s.median.is_finite()) {
                return Err(Error::DegenerateFeature(f.name()));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, v: &ProsodyVector) -> ProsodyVector {
        ProsodyVector(Feature::ALL.map(|f| self.get(f).normalize(v.get(f))))
    }

    pub fn normalize_unclipped(&self, v: &ProsodyVector) -> ProsodyVector {
        ProsodyVector(Feature::ALL.map(|f| self.get(f).normalize_unclipped(v.get(f))))
    }

    pub fn denormalize(&self, v: &ProsodyVector) -> ProsodyVector {
        ProsodyVector(Feature::ALL.map(|f| self.get(f).denormalize(v.get(f))))
    }
}

/// Median and population standard deviation per feature. Needs at least two
/// vectors and a non-constant value for every feature.
pub fn fit_norm_stats(vectors: &[ProsodyVector]) -> Result<NormStats> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 utterances to fit statistics, got {}",
            vectors.len()
        )));
    }
    let mut out = [FeatureStats {
        median: 0.0,
        sigma: 0.0,
    }; 5];
    for f in Feature::ALL {
        let mut col: Vec<f64> = vectors.iter().map(|v| v.get(f)).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite {} value", f.name())));
        }
        // Summation order fixed by value, so the result ignores utterance order.
        col.sort_by(f64::total_cmp);
        let sigma = stats::std_dev(&col).unwrap_or_default();
        if sigma <= 0.0 {
            return Err(Error::DegenerateFeature(f.name()));
        }
        out[f.index()] = FeatureStats {
            median: stats::median(&col).unwrap_or_default(),
            sigma,
        };
    }
    Ok(NormStats::from_array(out))
}

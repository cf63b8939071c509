use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::alignment::{format_alignment, read_alignment, PhoneAlignment};
use super::prosody::{aggregate_phone, fit_norm_stats, utterance_prosody, NormStats, PhoneTargets, ProsodyVector};
use super::symbols::{format_phones, parse_phones, PhoneToken};
use super::toy::{generate_utterance, random_sentence, ToyTargets};
use crate::binfmt::{self, Matrix, FEATURE_MAGIC, MEL_MAGIC};
use crate::dsp::{
    self, mel_spectrogram, spectral_balance, wav, FrameGrid, GridParams, MelConfig, MelSpectrogram, PitchBand,
    DEFAULT_SAMPLE_RATE,
};
use crate::stats;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const STATS: &str = "stats.json";
pub const TEST_SENTENCES: &str = "test_sentences.txt";
pub const FEATURES_DIR: &str = "features";
pub const N_TEST_SENTENCES: usize = 50;

/// Alignments further than this from the Mel frame count are rejected;
/// closer ones have their last phone stretched or trimmed.
const MAX_END_MISMATCH: usize = 2;

/// One manifest line. Paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: String,
    pub alignment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<ToyTargets>,
}

/// A featurized utterance, ready for training.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<PhoneToken>,
    pub alignment: PhoneAlignment,
    pub phone: PhoneTargets,
    pub prosody: ProsodyVector,
    pub mel: MelSpectrogram,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.mel.n_frames()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub utterances: Vec<Utterance>,
    pub test_sentences: Vec<Vec<PhoneToken>>,
}

/// Mean and standard deviation used to standardize a phone-level target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let mean = stats::mean(values).ok_or_else(|| Error::InvalidArgument("no values".into()))?;
        let std = stats::std_dev(values).unwrap_or_default();
        if std <= 0.0 {
            return Err(Error::InvalidArgument("constant phone-level target".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// Phone-level target scaling. Duration is in log frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhoneTargetStats {
    pub log_duration: Standardizer,
    pub log_pitch: Standardizer,
    pub energy: Standardizer,
}

/// Straight line mapping the Mel spectral balance to frame-level tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltCalibration {
    pub intercept: f64,
    pub slope: f64,
}

impl TiltCalibration {
    pub fn tilt(&self, balance: f64) -> f64 {
        self.intercept + self.slope * balance
    }
}

/// Everything fitted on a corpus: the `[-1, 1]` normalization, phone target
/// scaling and the tilt calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    #[serde(flatten)]
    pub norm: NormStats,
    pub phone_targets: PhoneTargetStats,
    pub tilt_calibration: TiltCalibration,
}

impl CorpusStats {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: CorpusStats =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        s.norm.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn grid_for(n_frames: usize) -> FrameGrid {
    FrameGrid {
        params: GridParams::default(),
        sample_rate: DEFAULT_SAMPLE_RATE,
        n_frames,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn utterance_id(i: usize) -> String {
    format!("utt{i:05}")
}

/// Writes a synthetic corpus of `size` utterances plus held-out test sentences.
/// The output depends only on `size` and `seed`.
pub fn generate_toy_corpus(out: &Path, size: usize, seed: u64) -> Result<()> {
    if size < 10 {
        return Err(Error::InvalidArgument(format!("corpus size must be >= 10, got {size}")));
    }
    create_dir(&out.join("wav"))?;
    create_dir(&out.join("align"))?;
    let shift_ms = GridParams::default().frame_shift_ms;
    let entries = (0..size)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let utt = generate_utterance(&mut rng)?;
            let id = utterance_id(i);
            let entry = ManifestEntry {
                wav: format!("wav/{id}.wav"),
                alignment: format!("align/{id}.tsv"),
                text: Some(format_phones(&utt.tokens)),
                targets: Some(utt.targets),
                id,
            };
            wav::write_wav(&out.join(&entry.wav), &utt.audio)?;
            let tsv = format_alignment(&utt.tokens, &utt.alignment, shift_ms);
            write_file(&out.join(&entry.alignment), tsv.as_bytes())?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut manifest, e)?;
        manifest.push(b'\n');
    }
    write_file(&out.join(MANIFEST), &manifest)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut tests = String::new();
    for _ in 0..N_TEST_SENTENCES {
        tests.push_str(&format_phones(&random_sentence(&mut rng)));
        tests.push('\n');
    }
    write_file(&out.join(TEST_SENTENCES), tests.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_test_sentences(dir: &Path) -> Result<Vec<Vec<PhoneToken>>> {
    let path = dir.join(TEST_SENTENCES);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_phones).collect()
}

fn feature_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{id}.{ext}"))
}

/// Extracts Mel, phone and utterance features for one manifest entry.
pub fn featurize_entry(dir: &Path, entry: &ManifestEntry) -> Result<Utterance> {
    let cfg = MelConfig::default();
    let clip = wav::read_wav(&dir.join(&entry.wav))?;
    let align_path = dir.join(&entry.alignment);
    let (tokens, mut alignment) = read_alignment(&align_path, cfg.grid.frame_shift_ms)?;
    if !alignment.is_contiguous() {
        return Err(Error::format(&align_path, "alignment has gaps between phones"));
    }
    let mel = mel_spectrogram(&clip, &cfg)?;
    let analysis = dsp::analyze(&clip, cfg.grid, PitchBand::default())?;
    let n = mel.n_frames();
    let end = alignment.end_frame();
    if end.abs_diff(n) > MAX_END_MISMATCH {
        return Err(Error::format(
            &align_path,
            format!("alignment covers {end} frames but audio has {n}"),
        ));
    }
    if let Some(last) = alignment.intervals.last_mut() {
        last.1 = n.max(last.0 + 1);
    }
    if alignment.end_frame() != n {
        return Err(Error::format(&align_path, "last phone cannot absorb frame mismatch"));
    }
    let raw = aggregate_phone(&analysis.pitch, &analysis.features, &alignment)?;
    let prosody = utterance_prosody(&analysis.pitch, &analysis.features, &raw, cfg.grid.frame_shift_ms)
        .map_err(|e| Error::format(dir.join(&entry.wav), e.to_string()))?;
    let phone = raw.impute()?;
    Ok(Utterance {
        id: entry.id.clone(),
        tokens,
        alignment,
        phone,
        prosody,
        mel,
    })
}

fn phone_matrix(p: &PhoneTargets) -> Matrix {
    let data: Vec<f64> = (0..p.duration_frames.len())
        .flat_map(|i| [p.duration_frames[i] as f64, p.log_pitch[i], p.energy_db[i]])
        .collect();
    Matrix::from_f64(p.duration_frames.len(), 3, &data)
}

fn save_features(dir: &Path, u: &Utterance) -> Result<()> {
    binfmt::write(
        &feature_path(dir, &u.id, "mel"),
        MEL_MAGIC,
        &Matrix::from_f64(u.mel.n_frames(), u.mel.n_mels, &u.mel.frames),
    )?;
    binfmt::write(&feature_path(dir, &u.id, "phone"), FEATURE_MAGIC, &phone_matrix(&u.phone))?;
    binfmt::write(
        &feature_path(dir, &u.id, "utt"),
        FEATURE_MAGIC,
        &Matrix::from_f64(1, 5, &u.prosody.0),
    )
}

/// Featurizes every manifest entry and caches the tensors under `features/`.
/// Returns the number of utterances.
pub fn featurize(dir: &Path) -> Result<usize> {
    let entries = read_manifest(dir)?;
    create_dir(&dir.join(FEATURES_DIR))?;
    entries
        .par_iter()
        .map(|e| {
            let u = featurize_entry(dir, e)?;
            save_features(dir, &u)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(entries.len())
}

fn load_utterance(dir: &Path, entry: &ManifestEntry) -> Result<Utterance> {
    let align_path = dir.join(&entry.alignment);
    let (tokens, _) = read_alignment(&align_path, GridParams::default().frame_shift_ms)?;
    let mel_path = feature_path(dir, &entry.id, "mel");
    let m = binfmt::read(&mel_path, MEL_MAGIC)?;
    let p = binfmt::read(&feature_path(dir, &entry.id, "phone"), FEATURE_MAGIC)?;
    let utt_path = feature_path(dir, &entry.id, "utt");
    let u = binfmt::read(&utt_path, FEATURE_MAGIC)?;
    if p.cols != 3 || u.rows != 1 || u.cols != 5 {
        return Err(Error::format(&utt_path, "unexpected feature dimensions"));
    }
    let pv = p.to_f64();
    let phone = PhoneTargets {
        duration_frames: pv.chunks(3).map(|r| r[0] as usize).collect(),
        log_pitch: pv.chunks(3).map(|r| r[1]).collect(),
        energy_db: pv.chunks(3).map(|r| r[2]).collect(),
    };
    let alignment = PhoneAlignment::from_durations(&phone.duration_frames);
    if alignment.end_frame() != m.rows {
        return Err(Error::format(
            &mel_path,
            format!("{} Mel frames but phone durations sum to {}", m.rows, alignment.end_frame()),
        ));
    }
    if alignment.len() != tokens.iter().filter(|t| t.is_phone()).count() {
        return Err(Error::format(&align_path, "phone count differs from cached features"));
    }
    let uv = u.to_f64();
    Ok(Utterance {
        id: entry.id.clone(),
        tokens,
        alignment,
        phone,
        prosody: ProsodyVector([uv[0], uv[1], uv[2], uv[3], uv[4]]),
        mel: MelSpectrogram {
            frames: m.to_f64(),
            n_mels: m.cols,
            grid: grid_for(m.rows),
        },
    })
}

/// Loads a featurized corpus. Test sentences are optional.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries = read_manifest(dir)?;
    let utterances = entries
        .par_iter()
        .map(|e| load_utterance(dir, e))
        .collect::<Result<Vec<_>>>()?;
    let test_sentences = if dir.join(TEST_SENTENCES).exists() {
        read_test_sentences(dir)?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        dir: dir.to_path_buf(),
        entries,
        utterances,
        test_sentences,
    })
}

/// Fits normalization, phone target scaling and the tilt calibration.
pub fn fit_corpus_stats(utterances: &[Utterance]) -> Result<CorpusStats> {
    let vectors: Vec<ProsodyVector> = utterances.iter().map(|u| u.prosody).collect();
    let norm = fit_norm_stats(&vectors)?;
    let collect = |f: &dyn Fn(&PhoneTargets) -> Vec<f64>| -> Vec<f64> {
        let mut v: Vec<f64> = utterances.iter().flat_map(|u| f(&u.phone)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let phone_targets = PhoneTargetStats {
        log_duration: Standardizer::fit(&collect(&|p| {
            p.duration_frames.iter().map(|&d| (d as f64).ln()).collect()
        }))?,
        log_pitch: Standardizer::fit(&collect(&|p| p.log_pitch.clone()))?,
        energy: Standardizer::fit(&collect(&|p| p.energy_db.clone()))?,
    };
    let cfg = MelConfig::default();
    let balance: Vec<f64> = utterances.iter().map(|u| spectral_balance(&u.mel, &cfg)).collect();
    let tilt: Vec<f64> = utterances.iter().map(|u| u.prosody.0[4]).collect();
    let (intercept, slope) = stats::linear_fit(&balance, &tilt)
        .ok_or_else(|| Error::InvalidArgument("cannot calibrate tilt on constant spectra".into()))?;
    Ok(CorpusStats {
        norm,
        phone_targets,
        tilt_calibration: TiltCalibration { intercept, slope },
    })
}

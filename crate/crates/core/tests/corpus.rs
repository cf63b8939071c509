use std::fs;
use std::path::Path;

use proptest::prelude::*;
use prosodia::corpus::toy::{render, ToyParams};
use prosodia::corpus::{
    featurize, featurize_entry, fit_corpus_stats, fit_norm_stats, generate_toy_corpus, load_dataset, parse_phones,
    read_manifest, Feature, FeatureStats, ManifestEntry, ProsodyVector,
};
use prosodia::dsp::wav::write_wav;
use prosodia::stats::spearman;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toy_corpus_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_toy_corpus(a.path(), 50, 7).unwrap();
    generate_toy_corpus(b.path(), 50, 7).unwrap();
    let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(x.len(), 2 * 50 + 2);
    assert!(x == y);
}

#[test]
fn toy_corpus_rejects_tiny_size() {
    let d = tempfile::tempdir().unwrap();
    assert!(generate_toy_corpus(d.path(), 9, 1).is_err());
}

fn single(params: ToyParams, seed: u64) -> (ProsodyVector, prosodia::corpus::Utterance) {
    let tokens = parse_phones("M AA N # L IY V Z # AH W EY .").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utt = render(&tokens, &params, &mut rng).unwrap();
    let d = tempfile::tempdir().unwrap();
    fs::create_dir_all(d.path().join("wav")).unwrap();
    fs::create_dir_all(d.path().join("align")).unwrap();
    write_wav(&d.path().join("wav/x.wav"), &utt.audio).unwrap();
    fs::write(
        d.path().join("align/x.tsv"),
        prosodia::corpus::format_alignment(&utt.tokens, &utt.alignment, 10.0),
    )
    .unwrap();
    let entry = ManifestEntry {
        id: "x".into(),
        wav: "wav/x.wav".into(),
        alignment: "align/x.tsv".into(),
        text: None,
        targets: None,
    };
    let u = featurize_entry(d.path(), &entry).unwrap();
    (u.prosody, u)
}

#[test]
fn extracted_pitch_and_tilt_match_generator() {
    for seed in 0..4 {
        let params = ToyParams {
            f0_hz: 220.0,
            pitch_range: 0.2,
            duration_ms: 90.0,
            energy_position: 0.5,
            pole: 0.95,
        };
        let (v, u) = single(params, seed);
        let hz = v.get(Feature::Pitch).exp();
        assert!((hz / 220.0 - 1.0).abs() <= 0.03, "pitch {hz}");
        let tilt = v.get(Feature::Tilt);
        assert!((tilt + 0.95).abs() <= 0.02, "tilt {tilt}");
        let total: usize = u.phone.duration_frames.iter().sum();
        assert_eq!(total, u.mel.n_frames());
    }
}

#[test]
fn featurized_toy_corpus_tracks_targets() {
    let d = tempfile::tempdir().unwrap();
    generate_toy_corpus(d.path(), 60, 3).unwrap();
    assert_eq!(featurize(d.path()).unwrap(), 60);
    let ds = load_dataset(d.path()).unwrap();
    let manifest = read_manifest(d.path()).unwrap();
    assert_eq!(ds.test_sentences.len(), 50);
    for u in &ds.utterances {
        let total: usize = u.phone.duration_frames.iter().sum();
        assert_eq!(total, u.n_frames(), "{}", u.id);
        assert_eq!(u.alignment.len(), u.tokens.iter().filter(|t| t.is_phone()).count());
    }
    let targets: Vec<[f64; 5]> = manifest
        .iter()
        .map(|e| {
            let t = e.targets.unwrap();
            [t.pitch_hz.ln(), t.pitch_range, t.duration_ms.ln(), t.energy_db, t.tilt]
        })
        .collect();
    for f in Feature::ALL {
        let x: Vec<f64> = targets.iter().map(|t| t[f.index()]).collect();
        let y: Vec<f64> = ds.utterances.iter().map(|u| u.prosody.get(f)).collect();
        let rho = spearman(&x, &y).unwrap();
        assert!(rho > 0.9, "{}: rho {rho}", f.name());
    }
    let stats = fit_corpus_stats(&ds.utterances).unwrap();
    assert!(stats.tilt_calibration.slope.is_finite());
    let path = d.path().join("stats.json");
    stats.save(&path).unwrap();
    let back = prosodia::corpus::CorpusStats::load(&path).unwrap();
    assert_eq!(back, stats);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for f in Feature::ALL {
        assert!(json[f.name()]["median"].is_number());
        assert!(json[f.name()]["sigma"].is_number());
    }
}

#[test]
fn table_one_energy_row() {
    let s = FeatureStats {
        median: -20.3,
        sigma: 4.3 / 3.0,
    };
    assert!((s.normalize(-24.6) + 1.0).abs() < 1e-6);
    assert!(s.normalize(-20.3).abs() < 1e-6);
    assert!((s.normalize(-15.9) - 1.0).abs() < 1e-6);
}

fn prosody_vec() -> impl Strategy<Value = ProsodyVector> {
    prop::array::uniform5(-50.0f64..50.0).prop_map(ProsodyVector)
}

proptest! {
    #[test]
    fn normalize_round_trips(m in -50.0f64..50.0, sigma in 1e-3f64..20.0, y in -1.0f64..=1.0) {
        let s = FeatureStats { median: m, sigma };
        let back = s.normalize(s.denormalize(y));
        prop_assert!((back - y).abs() <= 1e-9 * y.abs().max(1.0));
        let v = m + 3.0 * sigma * y;
        let again = s.denormalize(s.normalize(v));
        prop_assert!((again - v).abs() <= 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn normalized_values_stay_in_unit_box(v in prosody_vec(), m in -10.0f64..10.0, sigma in 1e-3f64..5.0) {
        let s = FeatureStats { median: m, sigma };
        let stats = prosodia::corpus::NormStats::from_array([s; 5]);
        for x in stats.normalize(&v).0 {
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn norm_stats_ignore_order(mut vs in prop::collection::vec(prosody_vec(), 3..20), seed in 0u64..1000) {
        let a = fit_norm_stats(&vs);
        use rand::seq::SliceRandom;
        vs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = fit_norm_stats(&vs);
        prop_assert_eq!(a.ok(), b.ok());
    }
}

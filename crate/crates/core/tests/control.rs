use std::sync::OnceLock;

use prosodia::control::{
    emphasis_offsets, measure_prosody, realized_prosody, synthesize, BiasSpec, EmphasisSpec,
};
use prosodia::corpus::{
    featurize, fit_corpus_stats, generate_toy_corpus, load_dataset, parse_phones, words, CorpusStats, Dataset,
    Feature, ProsodyVector,
};
use prosodia::evalharness::{emit_report, linspace, run_sweep, SweepSpec};
use prosodia::model::{FrontEndModel, ModelConfig};
use prosodia::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    data: Dataset,
    stats: CorpusStats,
    model: FrontEndModel,
}

/// Small featurized toy corpus plus an initialized model marked as trained,
/// enough for plumbing checks that do not depend on learned behavior.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        generate_toy_corpus(dir.path(), 40, 5).unwrap();
        featurize(dir.path()).unwrap();
        let data = load_dataset(dir.path()).unwrap();
        let stats = fit_corpus_stats(&data.utterances).unwrap();
        let model = FrontEndModel::new(ModelConfig {
            trained_steps: 1,
            n_mels: 80,
            mel_mean: vec![-6.0; 80],
            mel_std: 2.0,
            ..ModelConfig::micro()
        })
        .unwrap();
        Fixture {
            _dir: dir,
            data,
            stats,
            model,
        }
    })
}

#[test]
fn ground_truth_measurement_reproduces_stored_prosody() {
    let f = fixture();
    let mut worst = [0.0f64; 5];
    for u in &f.data.utterances {
        let raw = measure_prosody(
            &u.tokens,
            &u.phone.duration_frames,
            &u.phone.log_pitch,
            &u.phone.energy_db,
            &u.mel,
            &f.stats,
        )
        .unwrap();
        let got = f.stats.norm.normalize_unclipped(&raw);
        let want = f.stats.norm.normalize_unclipped(&u.prosody);
        for (w, (a, b)) in worst.iter_mut().zip(got.0.iter().zip(&want.0)) {
            *w = w.max((a - b).abs());
        }
    }
    for (feat, w) in Feature::ALL.iter().zip(worst) {
        assert!(w <= 0.1, "{}: worst deviation {w}", feat.name());
    }
}

#[test]
fn medians_measure_as_zero() {
    let f = fixture();
    let tokens = parse_phones("M AA # N OW .").unwrap();
    let n = &f.stats.norm;
    // Two voiced phones with the median pitch; durations chosen so the mean
    // log duration equals the median.
    let frames = (n.duration.median.exp() / 10.0).round() as usize;
    let log_pitch = vec![n.pitch.median; 4];
    let energy = vec![n.energy.median; 4];
    let u = &f.data.utterances[0];
    let v = measure_prosody(&tokens, &[frames; 4], &log_pitch, &energy, &u.mel, &f.stats).unwrap();
    let z = n.normalize_unclipped(&v);
    assert!(z.get(Feature::Pitch).abs() < 1e-9);
    assert!(z.get(Feature::Energy).abs() < 1e-9);
    let step = (10.0 * frames as f64).ln() - n.duration.median;
    assert!((z.get(Feature::Duration) - step / (3.0 * n.duration.sigma)).abs() < 1e-9);
}

#[test]
fn zero_bias_matches_plain_inference_bit_for_bit() {
    let f = fixture();
    for s in f.data.test_sentences.iter().take(5) {
        let plain = f.model.infer(s, &f.stats, None, None).unwrap();
        let r = synthesize(&f.model, &f.stats, s, &BiasSpec::default(), None, false).unwrap();
        assert_eq!(r.mel, plain.mel);
        assert_eq!(r.mel.n_frames(), r.durations.iter().sum::<usize>());
        assert!(r.u_used.is_finite());
    }
}

#[test]
fn tilt_extrapolation_stays_finite() {
    let f = fixture();
    let s = &f.data.test_sentences[0];
    for b in linspace(-3.0, 3.0, 13) {
        let r = synthesize(&f.model, &f.stats, s, &BiasSpec::single(Feature::Tilt, b), None, false).unwrap();
        assert!(r.mel.is_finite());
        assert_eq!(r.u_used.get(Feature::Tilt), r.u_hat.get(Feature::Tilt) + b);
        assert!(realized_prosody(&r, &f.stats).unwrap().is_finite());
    }
}

#[test]
fn emphasis_touches_only_the_chosen_word() {
    let tokens = parse_phones("DH AH # K AE T , # S AE T .").unwrap();
    let ws = words(&tokens);
    let off = emphasis_offsets(&tokens, &EmphasisSpec::word(1)).unwrap();
    for (i, o) in off.iter().enumerate() {
        if ws[1].contains(&i) {
            assert_eq!(o.0, [0.0, 0.5, 0.5, 0.0, 0.0]);
        } else {
            assert_eq!(o, &ProsodyVector::default());
        }
    }
    let err = emphasis_offsets(&tokens, &EmphasisSpec::word(3)).unwrap_err();
    assert!(matches!(err, Error::WordIndexOutOfRange { index: 3, words: 3 }));
}

#[test]
fn bad_inputs_are_rejected() {
    let f = fixture();
    let s = &f.data.test_sentences[0];
    let nan = BiasSpec {
        energy: f64::NAN,
        ..BiasSpec::default()
    };
    assert!(synthesize(&f.model, &f.stats, s, &nan, None, false).is_err());
    assert!(synthesize(&f.model, &f.stats, s, &BiasSpec::default(), Some(&EmphasisSpec::word(99)), false).is_err());
    assert!(parse_phones("HH XX").is_err());
}

#[test]
fn synthesis_with_audio() {
    let f = fixture();
    let s = parse_phones("HH AH # L OW .").unwrap();
    let r = synthesize(&f.model, &f.stats, &s, &BiasSpec::default(), None, true).unwrap();
    let audio = r.audio.unwrap();
    assert!(audio.samples().iter().all(|v| v.is_finite()));
    assert_eq!(r.durations.len(), 4);
    assert_eq!(r.pitch_contour.len(), 4);
}

#[test]
fn sweep_counts_and_files() {
    let f = fixture();
    let sentences: Vec<_> = f.data.test_sentences.iter().take(20).cloned().collect();
    let spec = SweepSpec::standard(sentences.clone());
    assert_eq!(spec.synthesis_count(), 820);
    let report = run_sweep(&f.model, &f.stats, &spec).unwrap();
    assert_eq!(report.syntheses, 820);
    assert_eq!(report.points.len(), 45);
    // The zero point is shared, so its mean is the same plain synthesis
    // measured in every dimension.
    let plain: Vec<ProsodyVector> = sentences
        .iter()
        .map(|s| {
            let r = synthesize(&f.model, &f.stats, s, &BiasSpec::default(), None, false).unwrap();
            realized_prosody(&r, &f.stats).unwrap()
        })
        .collect();
    for p in report.points.iter().filter(|p| p.bias == 0.0) {
        let want = plain.iter().map(|v| v.get(p.dimension)).sum::<f64>() / plain.len() as f64;
        assert!((p.mean - want).abs() < 1e-12);
    }

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(&report, &f.stats, a.path()).unwrap();
    let again = run_sweep(&f.model, &f.stats, &spec).unwrap();
    emit_report(&again, &f.stats, b.path()).unwrap();
    let sweep = std::fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 45);
    assert_eq!(sweep.lines().next(), Some("dimension,bias,mean,std,n"));
    let endpoints = std::fs::read_to_string(a.path().join("endpoints.csv")).unwrap();
    assert_eq!(endpoints.lines().count(), 1 + 5);
    for line in endpoints.lines().skip(1) {
        assert_eq!(line.split(',').count(), 5);
    }
    let svgs = std::fs::read_dir(a.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 5);
    for name in ["sweep.csv", "endpoints.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn all_zero_grid_is_the_plain_synthesis() {
    let f = fixture();
    let sentences: Vec<_> = f.data.test_sentences.iter().take(4).cloned().collect();
    let spec = SweepSpec {
        dimensions: vec![Feature::Duration],
        grid: vec![0.0],
        sentences: sentences.clone(),
    };
    let report = run_sweep(&f.model, &f.stats, &spec).unwrap();
    assert_eq!(report.syntheses, 4);
    assert_eq!(report.points.len(), 1);
    let bad = SweepSpec {
        grid: vec![0.5, 0.0],
        ..spec
    };
    assert!(run_sweep(&f.model, &f.stats, &bad).is_err());
}

#[test]
fn untrained_model_cannot_sweep() {
    let f = fixture();
    let fresh = FrontEndModel::new(ModelConfig {
        trained_steps: 0,
        ..f.model.config.clone()
    })
    .unwrap();
    let spec = SweepSpec::standard(f.data.test_sentences[..2].to_vec());
    assert!(run_sweep(&fresh, &f.stats, &spec).is_err());
}

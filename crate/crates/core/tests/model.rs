use proptest::prelude::*;
use prosodia::corpus::{
    parse_phones, CorpusStats, FeatureStats, NormStats, PhoneTargetStats, ProsodyVector, Standardizer,
    TiltCalibration, VOCAB_SIZE,
};
use prosodia::model::{length_regulate_index, FrontEndModel, LossWeights, ModelConfig, Tensor, TrainExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stats() -> CorpusStats {
    let f = |median, sigma| FeatureStats { median, sigma };
    CorpusStats {
        norm: NormStats {
            pitch: f(5.2, 0.3),
            pitch_range: f(0.25, 0.1),
            duration: f(4.5, 0.2),
            energy: f(-30.0, 3.0),
            tilt: f(-0.9, 0.04),
        },
        phone_targets: PhoneTargetStats {
            log_duration: Standardizer { mean: 2.1, std: 0.4 },
            log_pitch: Standardizer { mean: 5.2, std: 0.3 },
            energy: Standardizer { mean: -30.0, std: 4.0 },
        },
        tilt_calibration: TiltCalibration {
            intercept: 0.0,
            slope: -1.0,
        },
    }
}

/// Random teacher-forcing example over `ids`; non-phone ids get no frames.
fn example(cfg: &ModelConfig, ids: &[usize], rng: &mut ChaCha8Rng) -> TrainExample {
    let phone = |i: usize| i < 39;
    let phone_rows: Vec<usize> = (0..ids.len()).filter(|&i| phone(ids[i])).collect();
    let durations: Vec<usize> = ids.iter().map(|&i| if phone(i) { rng.gen_range(1..4) } else { 0 }).collect();
    let n_frames: usize = durations.iter().sum();
    let mut z = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let p = phone_rows.len();
    TrainExample {
        ids: ids.to_vec(),
        u: z(5).try_into().unwrap(),
        dur_target: z(p),
        pitch_target: z(p),
        energy_target: z(p),
        pitch_buckets: ids.iter().map(|_| rng.gen_range(0..cfg.pitch_bins)).collect(),
        energy_buckets: ids.iter().map(|_| rng.gen_range(0..cfg.energy_bins)).collect(),
        mel_target: (0..n_frames * cfg.n_mels).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        durations,
        n_frames,
        phone_rows,
    }
}

fn trained(cfg: ModelConfig) -> FrontEndModel {
    FrontEndModel::new(ModelConfig {
        trained_steps: 1,
        ..cfg
    })
    .unwrap()
}

#[test]
fn gradients_match_central_differences_per_block() {
    let cfg = ModelConfig::micro();
    let mut model = FrontEndModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Every block: perturb the parameters away from their init so LayerNorm
    // gains, biases and tables all see non-trivial gradients.
    for b in &mut model.params.blocks {
        for v in &mut b.data {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    // Three tokens: two phones and a word boundary (id 43).
    let mut ex = example(&cfg, &[3, 43, 17], &mut rng);
    // Make sure both visited buckets and unvisited ones exist.
    ex.pitch_buckets = vec![2, 0, 5];
    let (_, grads) = model.loss_and_grads(&ex, None).unwrap();
    let h = 1e-4;
    let loss = |m: &FrontEndModel| m.loss_and_grads(&ex, None).unwrap().0.total;
    for bi in 0..model.params.blocks.len() {
        let mut numeric = Vec::new();
        for j in 0..model.params.blocks[bi].data.len() {
            let orig = model.params.blocks[bi].data[j];
            model.params.blocks[bi].data[j] = orig + h;
            let up = loss(&model);
            model.params.blocks[bi].data[j] = orig - h;
            let down = loss(&model);
            model.params.blocks[bi].data[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        let err = grads[bi]
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let name = &model.params.blocks[bi].name;
        assert!(err / scale <= 1e-3, "{name}: relative error {}", err / scale);
    }
}

#[test]
fn unvisited_table_rows_get_zero_gradient() {
    let cfg = ModelConfig::micro();
    let model = FrontEndModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ex = example(&cfg, &[3, 17, 20], &mut rng);
    ex.pitch_buckets = vec![1, 1, 4];
    let (_, grads) = model.loss_and_grads(&ex, None).unwrap();
    let table = model.params.blocks.iter().position(|b| b.name == "pitch_table").unwrap();
    let d = cfg.embed_dim;
    for row in 0..cfg.pitch_bins {
        let g = &grads[table][row * d..(row + 1) * d];
        if row == 1 || row == 4 {
            assert!(g.iter().any(|v| *v != 0.0));
        } else {
            assert!(g.iter().all(|v| *v == 0.0), "row {row}");
        }
    }
}

#[test]
fn doubling_loss_weights_doubles_gradients() {
    let cfg = ModelConfig::micro();
    let double = ModelConfig {
        loss_weights: LossWeights {
            mel: 2.0,
            duration: 2.0,
            pitch: 2.0,
            energy: 2.0,
            utterance: 2.0,
        },
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ex = example(&cfg, &[1, 2, 43, 7], &mut rng);
    let (l1, g1) = FrontEndModel::new(cfg).unwrap().loss_and_grads(&ex, None).unwrap();
    let (l2, g2) = FrontEndModel::new(double).unwrap().loss_and_grads(&ex, None).unwrap();
    assert_eq!(l2.total, 2.0 * l1.total);
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn perfect_predictions_give_zero_loss() {
    let cfg = ModelConfig::micro();
    let model = FrontEndModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ex = example(&cfg, &[4, 5, 40, 6], &mut rng);
    let (out, _) = model.forward_train(&ex).unwrap();
    let rows = ex.phone_rows.clone();
    ex.dur_target = rows.iter().map(|&r| out.dur_pred[r]).collect();
    ex.pitch_target = rows.iter().map(|&r| out.pitch_pred[r]).collect();
    ex.energy_target = rows.iter().map(|&r| out.energy_pred[r]).collect();
    ex.mel_target = out.mel.data.clone();
    let (_, losses) = model.forward_train(&ex).unwrap();
    for (name, v) in [
        ("mel", losses.mel),
        ("dur", losses.duration),
        ("pitch", losses.pitch),
        ("energy", losses.energy),
    ] {
        assert_eq!(v, 0.0, "{name}");
    }
    assert_eq!(out.mel.rows, ex.n_frames);
}

#[test]
fn frame_mismatch_is_an_error() {
    let cfg = ModelConfig::micro();
    let model = FrontEndModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ex = example(&cfg, &[4, 5], &mut rng);
    ex.n_frames += 1;
    assert!(model.forward_train(&ex).is_err());
}

fn hand_count(c: &ModelConfig) -> usize {
    let d = c.embed_dim;
    let lin = |i: usize, o: usize| i * o + o;
    let conv = |i: usize, o: usize, k: usize| k * i * o + o;
    let ln = |n: usize| 2 * n;
    let encoder = 4 * lin(d, d)
        + conv(d, c.encoder_conv_filters, c.encoder_conv_kernel)
        + conv(c.encoder_conv_filters, d, c.encoder_conv_kernel)
        + 2 * ln(d);
    let f = c.predictor_filters;
    let predictor = |i: usize, o: usize| {
        conv(i, f, c.predictor_kernel) + conv(f, f, c.predictor_kernel) + 2 * ln(f) + lin(f, o)
    };
    let fd = c.decoder_filters;
    c.vocab_size * d
        + c.encoder_layers * encoder
        + predictor(d, 5)
        + predictor(d + 1, 1)
        + predictor(d + 2, 1)
        + predictor(d + 1, 1)
        + (c.pitch_bins + c.energy_bins) * d
        + lin(d + 1, d)
        + lin(d, fd)
        + c.decoder_blocks * c.decoder_dilations.len() * (conv(fd, fd, c.decoder_kernel) + ln(fd))
        + lin(fd, c.n_mels)
}

#[test]
fn parameter_count_is_a_function_of_config() {
    let desk = ModelConfig::default();
    let m = FrontEndModel::new(desk.clone()).unwrap();
    assert_eq!(m.parameter_count(), hand_count(&desk));
    assert_eq!(m.parameter_count(), 554_264);
    let micro = ModelConfig::micro();
    assert_eq!(FrontEndModel::new(micro.clone()).unwrap().parameter_count(), hand_count(&micro));
    let seeded = FrontEndModel::new(ModelConfig {
        init_seed: 99,
        ..desk
    })
    .unwrap();
    assert_eq!(seeded.parameter_count(), 554_264);
}

#[test]
fn decoder_receptive_field_by_impulse() {
    let cfg = ModelConfig::default();
    let model = FrontEndModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t, d) = (400, cfg.embed_dim);
    let base = Tensor::new(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut poked = base.clone();
    let at = 200;
    for v in &mut poked.data[at * d..(at + 1) * d] {
        *v += 3.0;
    }
    let a = model.decode_frames(&base).unwrap();
    let b = model.decode_frames(&poked).unwrap();
    let changed: Vec<usize> = (0..t).filter(|&r| a.row(r) != b.row(r)).collect();
    assert_eq!(changed.len(), 127);
    assert_eq!(changed.first(), Some(&(at - 63)));
    assert_eq!(changed.last(), Some(&(at + 63)));
    assert_eq!(cfg.decoder_receptive_field(), 127);
    assert_eq!(a.shape(), (t, cfg.n_mels));
}

#[test]
fn length_regulation_cases() {
    assert_eq!(length_regulate_index(&[2, 0, 3]).unwrap(), vec![0, 0, 2, 2, 2]);
    assert_eq!(length_regulate_index(&[1]).unwrap(), vec![0]);
    assert!(length_regulate_index(&[0, 0]).is_err());
    assert_eq!(length_regulate_index(&[0, 4]).unwrap().len(), 4);
}

#[test]
fn inference_rejects_untrained_and_non_finite_models() {
    let tokens = parse_phones("HH AH L OW").unwrap();
    let fresh = FrontEndModel::new(ModelConfig::micro()).unwrap();
    assert!(fresh.infer(&tokens, &stats(), None, None).is_err());
    let mut m = trained(ModelConfig::micro());
    m.params.blocks[3].data[0] = f64::NAN;
    assert!(m.infer(&tokens, &stats(), None, None).is_err());
}

#[test]
fn zero_bias_is_bit_identical_and_eval_is_deterministic() {
    let m = trained(ModelConfig::default());
    let tokens = parse_phones("DH AH # K AE T , S AE T .").unwrap();
    let s = stats();
    let plain = m.infer(&tokens, &s, None, None).unwrap();
    let again = m.infer(&tokens, &s, None, None).unwrap();
    assert_eq!(plain, again);
    let zero = ProsodyVector([0.0; 5]);
    let zeros = vec![zero; tokens.len()];
    let biased = m.infer(&tokens, &s, Some(&zero), Some(&zeros)).unwrap();
    assert_eq!(plain, biased);
    let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&plain.mel.frames), bits(&biased.mel.frames));
    let total: usize = plain.durations.iter().sum();
    assert_eq!(plain.mel.n_frames(), total);
    for (t, &d) in tokens.iter().zip(&plain.durations) {
        assert_eq!(d >= 1, t.is_phone());
    }
}

#[test]
fn bias_is_not_clamped() {
    let m = trained(ModelConfig::micro());
    let tokens = parse_phones("AA B AA").unwrap();
    let big = ProsodyVector([0.0, 0.0, 3.0, 0.0, -3.0]);
    let out = m.infer(&tokens, &stats(), Some(&big), None).unwrap();
    assert_eq!(out.u_used.0[2], out.u_hat.0[2] + 3.0);
    assert_eq!(out.u_used.0[4], out.u_hat.0[4] - 3.0);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = trained(ModelConfig::micro());
    let path = dir.path().join("m.pfe");
    m.save(&path).unwrap();
    let back = FrontEndModel::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), m.to_bytes().unwrap());
    let tokens = parse_phones("S IY # Y UW").unwrap();
    assert_eq!(
        back.infer(&tokens, &stats(), None, None).unwrap(),
        m.infer(&tokens, &stats(), None, None).unwrap()
    );
    let bytes = m.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"PFE1");
    assert!(FrontEndModel::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(FrontEndModel::from_bytes(&wrong).is_err());
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..3,
        prop::sample::select(vec![(4usize, 1usize), (4, 2), (6, 3), (8, 2)]),
        prop::sample::select(vec![1usize, 3, 5]),
        prop::collection::vec(1usize..5, 1..4),
        2usize..6,
        1usize..9,
        any::<u64>(),
    )
        .prop_map(|(layers, (d, heads), k, dil, n_mels, filters, seed)| ModelConfig {
            embed_dim: d,
            attn_heads: heads,
            encoder_layers: layers,
            encoder_conv_kernel: k,
            encoder_conv_filters: filters,
            decoder_dilations: dil,
            decoder_filters: filters,
            predictor_filters: filters,
            n_mels,
            mel_mean: vec![0.0; n_mels],
            pitch_bins: 8,
            energy_bins: 8,
            init_seed: seed,
            trained_steps: 1,
            ..ModelConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_hold_for_small_configs(
        cfg in small_config(),
        ids in prop::collection::vec(0usize..VOCAB_SIZE, 1..12),
        seed in any::<u64>(),
    ) {
        let mut ids = ids;
        ids.push(0);
        let model = FrontEndModel::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = example(&cfg, &ids, &mut rng);
        let (out, losses) = model.forward_train(&ex).unwrap();
        prop_assert_eq!(out.mel.shape(), (ex.n_frames, cfg.n_mels));
        prop_assert_eq!(out.dur_pred.len(), ids.len());
        prop_assert_eq!(out.utt_pred.shape(), (ids.len(), 5));
        prop_assert!(losses.total.is_finite());

        let tokens: Vec<_> = ids.iter().map(|&i| prosodia::corpus::PhoneToken::from_id(i as u16).unwrap()).collect();
        let inf = model.infer(&tokens, &stats(), None, None).unwrap();
        prop_assert_eq!(inf.mel.n_frames(), inf.durations.iter().sum::<usize>());
        prop_assert_eq!(inf.mel.n_mels, cfg.n_mels);
    }
}

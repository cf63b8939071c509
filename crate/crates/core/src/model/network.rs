use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{bucket, ModelConfig};
use super::graph::{Graph, Var};
use super::params::{Init, ParamId, Params};
use super::tensor::Tensor;
use crate::corpus::{phone_positions, CorpusStats, Feature, PhoneToken, ProsodyVector, Utterance};
use crate::dsp::MelSpectrogram;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    kernel: usize,
    dilation: usize,
}

#[derive(Debug, Clone)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: Norm,
    conv1: Conv,
    conv2: Conv,
    ln2: Norm,
}

/// conv -> ReLU -> LN -> dropout, twice, then a linear head.
#[derive(Debug, Clone)]
struct Predictor {
    conv1: Conv,
    ln1: Norm,
    conv2: Conv,
    ln2: Norm,
    out: Linear,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    conv: Conv,
    ln: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    utterance: Predictor,
    duration: Predictor,
    pitch: Predictor,
    energy: Predictor,
    pitch_table: ParamId,
    energy_table: ParamId,
    tilt: Linear,
    dec_in: Linear,
    decoder: Vec<DecoderLayer>,
    dec_out: Linear,
}

struct Builder<'a> {
    params: Params,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, out: usize) -> Linear {
        Linear {
            w: self.params.add(format!("{name}.w"), fan_in, out, Init::FanIn(fan_in), self.rng),
            b: self.params.add(format!("{name}.b"), 1, out, Init::Zeros, self.rng),
        }
    }

    fn conv(&mut self, name: &str, input: usize, out: usize, kernel: usize, dilation: usize) -> Conv {
        let fan_in = kernel * input;
        Conv {
            w: self.params.add(format!("{name}.w"), fan_in, out, Init::FanIn(fan_in), self.rng),
            b: self.params.add(format!("{name}.b"), 1, out, Init::Zeros, self.rng),
            kernel,
            dilation,
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            g: self.params.add(format!("{name}.g"), 1, dim, Init::Ones, self.rng),
            b: self.params.add(format!("{name}.b"), 1, dim, Init::Zeros, self.rng),
        }
    }

    fn predictor(&mut self, name: &str, input: usize, cfg: &ModelConfig, out: usize) -> Predictor {
        let (k, f) = (cfg.predictor_kernel, cfg.predictor_filters);
        Predictor {
            conv1: self.conv(&format!("{name}.conv1"), input, f, k, 1),
            ln1: self.norm(&format!("{name}.ln1"), f),
            conv2: self.conv(&format!("{name}.conv2"), f, f, k, 1),
            ln2: self.norm(&format!("{name}.ln2"), f),
            out: self.linear(&format!("{name}.out"), f, out),
        }
    }
}

/// Canonical parameter order: embedding, encoder layers, utterance adaptor,
/// duration/pitch/energy predictors, pitch and energy tables, tilt
/// projection, decoder input, decoder layers, output projection.
fn build(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (Params, Layout) {
    let d = cfg.embed_dim;
    let mut b = Builder {
        params: Params::default(),
        rng,
    };
    let embedding = b.params.add("embedding".into(), cfg.vocab_size, d, Init::Normal(0.01), b.rng);
    let encoder = (0..cfg.encoder_layers)
        .map(|l| {
            let n = |s: &str| format!("encoder.{l}.{s}");
            EncoderLayer {
                q: b.linear(&n("attn.q"), d, d),
                k: b.linear(&n("attn.k"), d, d),
                v: b.linear(&n("attn.v"), d, d),
                o: b.linear(&n("attn.o"), d, d),
                ln1: b.norm(&n("ln1"), d),
                conv1: b.conv(&n("conv1"), d, cfg.encoder_conv_filters, cfg.encoder_conv_kernel, 1),
                conv2: b.conv(&n("conv2"), cfg.encoder_conv_filters, d, cfg.encoder_conv_kernel, 1),
                ln2: b.norm(&n("ln2"), d),
            }
        })
        .collect();
    let utterance = b.predictor("utterance", d, cfg, 5);
    let duration = b.predictor("duration", d + 1, cfg, 1);
    let pitch = b.predictor("pitch", d + 2, cfg, 1);
    let energy = b.predictor("energy", d + 1, cfg, 1);
    let pitch_table = b.params.add("pitch_table".into(), cfg.pitch_bins, d, Init::Normal(0.01), b.rng);
    let energy_table = b.params.add("energy_table".into(), cfg.energy_bins, d, Init::Normal(0.01), b.rng);
    let tilt = b.linear("tilt", d + 1, d);
    let fd = cfg.decoder_filters;
    let dec_in = b.linear("decoder.in", d, fd);
    let mut decoder = Vec::new();
    for blk in 0..cfg.decoder_blocks {
        for (j, &dil) in cfg.decoder_dilations.iter().enumerate() {
            decoder.push(DecoderLayer {
                conv: b.conv(&format!("decoder.{blk}.{j}.conv"), fd, fd, cfg.decoder_kernel, dil),
                ln: b.norm(&format!("decoder.{blk}.{j}.ln"), fd),
            });
        }
    }
    let dec_out = b.linear("decoder.out", fd, cfg.n_mels);
    let layout = Layout {
        embedding,
        encoder,
        utterance,
        duration,
        pitch,
        energy,
        pitch_table,
        energy_table,
        tilt,
        dec_in,
        decoder,
        dec_out,
    };
    (b.params, layout)
}

/// Sinusoidal position encodings, `rows x dim`.
pub fn positional_encoding(rows: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, dim);
    for pos in 0..rows {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 / rate;
            t.data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    t
}

/// Expands token rows by their frame counts. Errors when every count is zero.
pub fn length_regulate_index(durations: &[usize]) -> Result<Vec<usize>> {
    let index: Vec<usize> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat(i).take(d))
        .collect();
    if index.is_empty() {
        return Err(Error::InvalidArgument("all durations are zero".into()));
    }
    Ok(index)
}

/// Teacher-forcing inputs and targets for one utterance.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub ids: Vec<usize>,
    pub phone_rows: Vec<usize>,
    /// Normalized utterance features, clipped to `[-1, 1]`.
    pub u: [f64; 5],
    /// Frames per token; zero for punctuation and boundaries.
    pub durations: Vec<usize>,
    /// Standardized per-phone targets.
    pub dur_target: Vec<f64>,
    pub pitch_target: Vec<f64>,
    pub energy_target: Vec<f64>,
    pub pitch_buckets: Vec<usize>,
    pub energy_buckets: Vec<usize>,
    /// Standardized Mel, `n_frames x n_mels`.
    pub mel_target: Vec<f64>,
    pub n_frames: usize,
}

impl TrainExample {
    pub fn new(utt: &Utterance, stats: &CorpusStats, cfg: &ModelConfig) -> Result<Self> {
        let phone_rows = phone_positions(&utt.tokens);
        let p = &utt.phone;
        if phone_rows.len() != p.duration_frames.len() {
            return Err(Error::Shape(format!(
                "{}: {} phones but {} phone targets",
                utt.id,
                phone_rows.len(),
                p.duration_frames.len()
            )));
        }
        let n_frames: usize = p.duration_frames.iter().sum();
        if n_frames != utt.mel.n_frames() || utt.mel.n_mels != cfg.n_mels {
            return Err(Error::Shape(format!(
                "{}: durations sum to {n_frames} but Mel is {}x{}",
                utt.id,
                utt.mel.n_frames(),
                utt.mel.n_mels
            )));
        }
        let pt = &stats.phone_targets;
        let dur_target: Vec<f64> = p
            .duration_frames
            .iter()
            .map(|&d| pt.log_duration.apply((d as f64).ln()))
            .collect();
        let pitch_target: Vec<f64> = p.log_pitch.iter().map(|&v| pt.log_pitch.apply(v)).collect();
        let energy_target: Vec<f64> = p.energy_db.iter().map(|&v| pt.energy.apply(v)).collect();
        let mut durations = vec![0; utt.tokens.len()];
        let mut pitch_tok = vec![0.0; utt.tokens.len()];
        let mut energy_tok = vec![0.0; utt.tokens.len()];
        for (k, &row) in phone_rows.iter().enumerate() {
            durations[row] = p.duration_frames[k];
            pitch_tok[row] = pitch_target[k];
            energy_tok[row] = energy_target[k];
        }
        let mel_target = utt
            .mel
            .rows()
            .flat_map(|r| r.iter().zip(&cfg.mel_mean).map(|(v, m)| (v - m) / cfg.mel_std))
            .collect();
        Ok(Self {
            ids: utt.tokens.iter().map(|t| t.id as usize).collect(),
            u: stats.norm.normalize(&utt.prosody).0,
            durations,
            dur_target,
            pitch_buckets: pitch_tok.iter().map(|&v| bucket(v, cfg.pitch_range, cfg.pitch_bins)).collect(),
            energy_buckets: energy_tok
                .iter()
                .map(|&v| bucket(v, cfg.energy_range, cfg.energy_bins))
                .collect(),
            pitch_target,
            energy_target,
            mel_target,
            n_frames,
            phone_rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub utterance: f64,
}

impl Losses {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("total", self.total),
            ("l_mel", self.mel),
            ("l_dur", self.duration),
            ("l_pitch", self.pitch),
            ("l_energy", self.energy),
            ("l_utt", self.utterance),
        ]
    }
}

/// Network outputs in model units: standardized per-token predictions,
/// per-token utterance predictions and the Mel in log-power units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub mel: Tensor,
    pub dur_pred: Vec<f64>,
    pub pitch_pred: Vec<f64>,
    pub energy_pred: Vec<f64>,
    pub utt_pred: Tensor,
}

/// Result of bias-conditioned inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub output: ForwardOutput,
    /// Frames per token; zero for punctuation and boundaries.
    pub durations: Vec<usize>,
    /// Denormalized per-token predictions.
    pub log_pitch: Vec<f64>,
    pub energy_db: Vec<f64>,
    /// Mean utterance prediction over phones, normalized units.
    pub u_hat: ProsodyVector,
    /// `u_hat` plus the utterance bias.
    pub u_used: ProsodyVector,
    pub mel: MelSpectrogram,
}

#[derive(Debug, Clone)]
pub struct FrontEndModel {
    pub config: ModelConfig,
    pub params: Params,
    layout: Layout,
}

struct Heads {
    utt: Var,
    dur: Var,
    pitch: Var,
    energy: Var,
}

impl FrontEndModel {
    /// Fresh model initialized from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (params, layout) = build(&config, &mut rng);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Replaces all parameter values; shapes must match this config.
    pub(crate) fn with_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(config)?;
        if values.len() != m.params.count() {
            return Err(Error::BadModel(format!(
                "config implies {} parameters, found {}",
                m.params.count(),
                values.len()
            )));
        }
        let mut it = values.into_iter();
        for b in &mut m.params.blocks {
            for v in &mut b.data {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(m)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn lin(&self, g: &mut Graph, x: Var, l: &Linear) -> Var {
        let (w, b) = (g.param(l.w), g.param(l.b));
        let y = g.matmul(x, w, false);
        g.add_row(y, b)
    }

    fn conv(&self, g: &mut Graph, x: Var, c: &Conv) -> Var {
        let cols = g.im2col(x, c.kernel, c.dilation);
        let (w, b) = (g.param(c.w), g.param(c.b));
        let y = g.matmul(cols, w, false);
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let (gm, b) = (g.param(n.g), g.param(n.b));
        g.layer_norm(x, gm, b, self.config.layernorm_eps)
    }

    fn attention(&self, g: &mut Graph, x: Var, l: &EncoderLayer) -> Var {
        let d = self.config.embed_dim;
        let h = self.config.attn_heads;
        let dh = d / h;
        let q = self.lin(g, x, &l.q);
        let k = self.lin(g, x, &l.k);
        let v = self.lin(g, x, &l.v);
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..h)
            .map(|i| {
                let qh = g.slice_cols(q, i * dh, dh);
                let kh = g.slice_cols(k, i * dh, dh);
                let vh = g.slice_cols(v, i * dh, dh);
                let s = g.matmul(qh, kh, true);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                g.matmul(a, vh, false)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.lin(g, cat, &l.o)
    }

    /// Token embeddings plus positions through the FFT blocks: `L x d`.
    fn encode(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let p = self.config.dropout;
        let emb = g.param(self.layout.embedding);
        let x = g.gather_rows(emb, ids.to_vec());
        let pe = g.constant(positional_encoding(ids.len(), self.config.embed_dim));
        let mut x = g.add(x, pe);
        for l in &self.layout.encoder {
            let a = self.attention(g, x, l);
            let a = g.dropout(a, p);
            let r = g.add(x, a);
            x = self.norm(g, r, &l.ln1);
            let c = self.conv(g, x, &l.conv1);
            let c = g.relu(c);
            let c = self.conv(g, c, &l.conv2);
            let c = g.dropout(c, p);
            let r = g.add(x, c);
            x = self.norm(g, r, &l.ln2);
        }
        x
    }

    fn predictor(&self, g: &mut Graph, x: Var, pr: &Predictor) -> Var {
        let p = self.config.dropout;
        let mut h = x;
        for (c, n) in [(&pr.conv1, &pr.ln1), (&pr.conv2, &pr.ln2)] {
            h = self.conv(g, h, c);
            h = g.relu(h);
            h = self.norm(g, h, n);
            h = g.dropout(h, p);
        }
        self.lin(g, h, &pr.out)
    }

    fn column(g: &mut Graph, cond: &[[f64; 5]], features: &[Feature]) -> Var {
        let data = cond
            .iter()
            .flat_map(|c| features.iter().map(|f| c[f.index()]))
            .collect();
        g.constant(Tensor {
            rows: cond.len(),
            cols: features.len(),
            data,
        })
    }

    /// Utterance adaptor on `h`, then the three phone-level predictors on
    /// `h` concatenated with their conditioning columns from `cond`.
    fn heads(&self, g: &mut Graph, h: Var, cond: &[[f64; 5]]) -> Heads {
        let utt = self.predictor(g, h, &self.layout.utterance);
        let c = Self::column(g, cond, &[Feature::Duration]);
        let x = g.concat_cols(&[h, c]);
        let dur = self.predictor(g, x, &self.layout.duration);
        let c = Self::column(g, cond, &[Feature::Pitch, Feature::PitchRange]);
        let x = g.concat_cols(&[h, c]);
        let pitch = self.predictor(g, x, &self.layout.pitch);
        let c = Self::column(g, cond, &[Feature::Energy]);
        let x = g.concat_cols(&[h, c]);
        let energy = self.predictor(g, x, &self.layout.energy);
        Heads {
            utt,
            dur,
            pitch,
            energy,
        }
    }

    /// Tilt projection, pitch/energy embeddings, length regulation and the
    /// dilated-convolution decoder. Returns the standardized Mel.
    fn decode(
        &self,
        g: &mut Graph,
        h: Var,
        cond: &[[f64; 5]],
        pitch_buckets: Vec<usize>,
        energy_buckets: Vec<usize>,
        durations: &[usize],
    ) -> Result<Var> {
        let c = Self::column(g, cond, &[Feature::Tilt]);
        let x = g.concat_cols(&[h, c]);
        let ht = self.lin(g, x, &self.layout.tilt);
        let pt = g.param(self.layout.pitch_table);
        let pe = g.gather_rows(pt, pitch_buckets);
        let et = g.param(self.layout.energy_table);
        let ee = g.gather_rows(et, energy_buckets);
        let x = g.add(ht, pe);
        let x = g.add(x, ee);
        let frames = g.gather_rows(x, length_regulate_index(durations)?);
        let n = g.value(frames).rows;
        let pos = g.constant(positional_encoding(n, self.config.embed_dim));
        let x = g.add(frames, pos);
        let mut x = self.lin(g, x, &self.layout.dec_in);
        let p = self.config.dropout;
        for l in &self.layout.decoder {
            let y = self.conv(g, x, &l.conv);
            let y = g.relu(y);
            let y = self.norm(g, y, &l.ln);
            let y = g.dropout(y, p);
            x = g.add(x, y);
        }
        Ok(self.lin(g, x, &self.layout.dec_out))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::UnknownSymbol(format!("token id {bad}")));
        }
        Ok(())
    }

    /// Records the teacher-forced forward pass and returns the weighted total
    /// loss plus the five component nodes.
    pub(crate) fn record_train(&self, g: &mut Graph, ex: &TrainExample) -> Result<(Var, [Var; 5], Heads2)> {
        self.check_ids(&ex.ids)?;
        if ex.durations.iter().sum::<usize>() != ex.n_frames {
            return Err(Error::Shape("durations do not sum to the frame count".into()));
        }
        let h = self.encode(g, &ex.ids);
        let cond = vec![ex.u; ex.ids.len()];
        let heads = self.heads(g, h, &cond);
        let mel = self.decode(
            g,
            h,
            &cond,
            ex.pitch_buckets.clone(),
            ex.energy_buckets.clone(),
            &ex.durations,
        )?;
        let rows = ex.phone_rows.clone();
        let l_mel = g.mse(mel, ex.mel_target.clone());
        let d = g.gather_rows(heads.dur, rows.clone());
        let l_dur = g.mse(d, ex.dur_target.clone());
        let p = g.gather_rows(heads.pitch, rows.clone());
        let l_pitch = g.mse(p, ex.pitch_target.clone());
        let e = g.gather_rows(heads.energy, rows.clone());
        let l_energy = g.mse(e, ex.energy_target.clone());
        let u = g.gather_rows(heads.utt, rows.clone());
        let repeated = rows.iter().flat_map(|_| ex.u).collect();
        let l_utt = g.mse(u, repeated);
        let w = &self.config.loss_weights;
        let total = g.weighted_sum(&[
            (l_mel, w.mel),
            (l_dur, w.duration),
            (l_pitch, w.pitch),
            (l_energy, w.energy),
            (l_utt, w.utterance),
        ]);
        Ok((
            total,
            [l_mel, l_dur, l_pitch, l_energy, l_utt],
            Heads2 {
                mel,
                utt: heads.utt,
                dur: heads.dur,
                pitch: heads.pitch,
                energy: heads.energy,
            },
        ))
    }

    /// Teacher-forced losses and parameter gradients. Dropout is active when
    /// `rng` is given.
    pub fn loss_and_grads(&self, ex: &TrainExample, rng: Option<ChaCha8Rng>) -> Result<(Losses, Vec<Vec<f64>>)> {
        let mut g = match rng {
            Some(r) => Graph::training(&self.params, r),
            None => Graph::new(&self.params),
        };
        let (total, terms, _) = self.record_train(&mut g, ex)?;
        let v = |x: Var| g.value(x).data[0];
        let losses = Losses {
            total: v(total),
            mel: v(terms[0]),
            duration: v(terms[1]),
            pitch: v(terms[2]),
            energy: v(terms[3]),
            utterance: v(terms[4]),
        };
        let grads = g.backward(total);
        Ok((losses, grads))
    }

    /// Teacher-forced forward pass in evaluation mode.
    pub fn forward_train(&self, ex: &TrainExample) -> Result<(ForwardOutput, Losses)> {
        let mut g = Graph::new(&self.params);
        let (total, terms, h) = self.record_train(&mut g, ex)?;
        let v = |x: Var| g.value(x).data[0];
        let losses = Losses {
            total: v(total),
            mel: v(terms[0]),
            duration: v(terms[1]),
            pitch: v(terms[2]),
            energy: v(terms[3]),
            utterance: v(terms[4]),
        };
        Ok((self.collect(&g, &h), losses))
    }

    fn collect(&self, g: &Graph, h: &Heads2) -> ForwardOutput {
        let mut mel = g.value(h.mel).clone();
        let n = self.config.n_mels;
        for (i, v) in mel.data.iter_mut().enumerate() {
            *v = self.config.mel_mean[i % n] + self.config.mel_std * *v;
        }
        ForwardOutput {
            mel,
            dur_pred: g.value(h.dur).data.clone(),
            pitch_pred: g.value(h.pitch).data.clone(),
            energy_pred: g.value(h.energy).data.clone(),
            utt_pred: g.value(h.utt).clone(),
        }
    }

    /// Encoder output for a token sequence (evaluation mode), `L x d`.
    pub fn encode_tokens(&self, tokens: &[PhoneToken]) -> Result<Tensor> {
        let ids: Vec<usize> = tokens.iter().map(|t| t.id as usize).collect();
        self.check_ids(&ids)?;
        let mut g = Graph::new(&self.params);
        let h = self.encode(&mut g, &ids);
        Ok(g.value(h).clone())
    }

    /// Bias-conditioned inference. `bias` is added to the pooled utterance
    /// prediction without clamping; `phone_bias` (one entry per token) is
    /// added on top for individual tokens.
    pub fn infer(
        &self,
        tokens: &[PhoneToken],
        stats: &CorpusStats,
        bias: Option<&ProsodyVector>,
        phone_bias: Option<&[ProsodyVector]>,
    ) -> Result<Inference> {
        if self.config.trained_steps == 0 {
            return Err(Error::BadModel("model is untrained".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::BadModel("non-finite parameters".into()));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| t.id as usize).collect();
        self.check_ids(&ids)?;
        let phone_rows = phone_positions(tokens);
        if phone_rows.is_empty() {
            return Err(Error::InvalidArgument("no phones to synthesize".into()));
        }
        if let Some(pb) = phone_bias {
            if pb.len() != tokens.len() {
                return Err(Error::Shape(format!(
                    "{} phone biases for {} tokens",
                    pb.len(),
                    tokens.len()
                )));
            }
        }
        let mut g = Graph::new(&self.params);
        let h = self.encode(&mut g, &ids);
        // The adaptor does not depend on the conditioning, so run it first.
        let utt = self.predictor(&mut g, h, &self.layout.utterance);
        let up = g.value(utt);
        let mut u_hat = [0.0; 5];
        for &r in &phone_rows {
            for (j, u) in u_hat.iter_mut().enumerate() {
                *u += up.get(r, j);
            }
        }
        for u in &mut u_hat {
            *u /= phone_rows.len() as f64;
        }
        let mut u_used = u_hat;
        if let Some(b) = bias {
            for (u, &b) in u_used.iter_mut().zip(&b.0) {
                if b != 0.0 {
                    *u += b;
                }
            }
        }
        let cond: Vec<[f64; 5]> = (0..tokens.len())
            .map(|i| {
                let mut c = u_used;
                if let Some(pb) = phone_bias {
                    for (v, &b) in c.iter_mut().zip(&pb[i].0) {
                        if b != 0.0 {
                            *v += b;
                        }
                    }
                }
                c
            })
            .collect();
        let heads = self.heads(&mut g, h, &cond);
        let pt = stats.phone_targets;
        let dur_pred = g.value(heads.dur).data.clone();
        let pitch_pred = g.value(heads.pitch).data.clone();
        let energy_pred = g.value(heads.energy).data.clone();
        let durations: Vec<usize> = tokens
            .iter()
            .zip(&dur_pred)
            .map(|(t, &z)| {
                if t.is_phone() {
                    let frames = pt.log_duration.invert(z).exp().round();
                    if frames.is_finite() {
                        (frames as usize).max(1)
                    } else {
                        1
                    }
                } else {
                    0
                }
            })
            .collect();
        let cfg = &self.config;
        let pb = pitch_pred.iter().map(|&v| bucket(v, cfg.pitch_range, cfg.pitch_bins)).collect();
        let eb = energy_pred.iter().map(|&v| bucket(v, cfg.energy_range, cfg.energy_bins)).collect();
        let mel = self.decode(&mut g, h, &cond, pb, eb, &durations)?;
        let out = self.collect(
            &g,
            &Heads2 {
                mel,
                utt: heads.utt,
                dur: heads.dur,
                pitch: heads.pitch,
                energy: heads.energy,
            },
        );
        if !out.mel.is_finite() {
            return Err(Error::BadModel("non-finite Mel output".into()));
        }
        let n_frames = out.mel.rows;
        Ok(Inference {
            durations,
            log_pitch: pitch_pred.iter().map(|&z| pt.log_pitch.invert(z)).collect(),
            energy_db: energy_pred.iter().map(|&z| pt.energy.invert(z)).collect(),
            u_hat: ProsodyVector(u_hat),
            u_used: ProsodyVector(u_used),
            mel: MelSpectrogram {
                frames: out.mel.data.clone(),
                n_mels: cfg.n_mels,
                grid: crate::corpus::grid_for(n_frames),
            },
            output: out,
        })
    }

    /// Runs only the decoder stack on a frame sequence (`T x d`) in
    /// evaluation mode, returning the standardized Mel. Exposed for
    /// receptive-field and shape checks.
    pub fn decode_frames(&self, frames: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let x = g.constant(frames.clone());
        let mut x = self.lin(&mut g, x, &self.layout.dec_in);
        for l in &self.layout.decoder {
            let y = self.conv(&mut g, x, &l.conv);
            let y = g.relu(y);
            let y = self.norm(&mut g, y, &l.ln);
            x = g.add(x, y);
        }
        let out = self.lin(&mut g, x, &self.layout.dec_out);
        Ok(g.value(out).clone())
    }
}

pub(crate) struct Heads2 {
    mel: Var,
    utt: Var,
    dur: Var,
    pitch: Var,
    energy: Var,
}

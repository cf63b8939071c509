//! Adam with linear warmup over teacher-forced utterances.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, Utterance};
use crate::model::{FrontEndModel, Losses, ModelConfig, Params, TrainExample};
use crate::{Error, Result};

pub const LOG_HEADER: &str = "step,total,l_mel,l_dur,l_pitch,l_energy,l_utt,seconds";
pub const FINAL_CHECKPOINT: &str = "model.pfe";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Zero disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 200,
            seed: 7,
            checkpoint_every: 500,
            log_every: 50,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.steps < 1 {
            return bad("steps must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.log_every < 1 {
            return bad("log_every must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }

    /// `lr * min(t / warmup, 1)` for 1-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected update. Parameters are rounded to `f32` afterwards.
    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.blocks.len()
            || grads.iter().zip(&params.blocks).any(|(g, b)| g.len() != b.data.len())
        {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (bi, block) in params.blocks.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[bi], &mut self.v[bi]);
            for (j, p) in block.data.iter_mut().enumerate() {
                let g = grads[bi][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *p -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        params.quantize_f32();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub losses: Losses,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn at(&self, step: usize) -> Option<&LogRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            let l = &r.losses;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                r.step, l.total, l.mel, l.duration, l.pitch, l.energy, l.utterance, r.seconds
            ));
        }
        s
    }
}

/// Fills in the data-derived parts of a model config: Mel standardization
/// and the pitch/energy quantization ranges (min/max of the standardized
/// phone targets).
pub fn fit_model_config(base: ModelConfig, utterances: &[Utterance], stats: &CorpusStats) -> Result<ModelConfig> {
    if utterances.is_empty() {
        return Err(Error::InvalidArgument("no training utterances".into()));
    }
    let n_mels = utterances[0].mel.n_mels;
    let mut sum = vec![0.0; n_mels];
    let mut frames = 0usize;
    for u in utterances {
        if u.mel.n_mels != n_mels {
            return Err(Error::Shape(format!("{}: {} Mel bins, expected {n_mels}", u.id, u.mel.n_mels)));
        }
        for row in u.mel.rows() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            frames += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / frames as f64).collect();
    let mut ss = 0.0;
    for u in utterances {
        for row in u.mel.rows() {
            ss += row.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>();
        }
    }
    let std = (ss / (frames * n_mels) as f64).sqrt();
    let pt = &stats.phone_targets;
    let range = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo < hi {
            [lo, hi]
        } else {
            [lo - 1.0, lo + 1.0]
        }
    };
    let pitch_range = range(
        &mut utterances
            .iter()
            .flat_map(|u| u.phone.log_pitch.iter().map(|&v| pt.log_pitch.apply(v))),
    );
    let energy_range = range(
        &mut utterances
            .iter()
            .flat_map(|u| u.phone.energy_db.iter().map(|&v| pt.energy.apply(v))),
    );
    let cfg = ModelConfig {
        n_mels,
        mel_mean: mean,
        mel_std: if std > 0.0 { std } else { 1.0 },
        pitch_range,
        energy_range,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dropout_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 20) | index as u64);
    rng
}

fn check_finite(l: &Losses, step: usize) -> Result<()> {
    for (name, v) in l.terms() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                step,
            });
        }
    }
    Ok(())
}

/// Trains a fresh model initialized from `train.seed`. With `out_dir`,
/// writes `ckpt_<step>.pfe` every `checkpoint_every` steps, then
/// `model.pfe` and `train_log.csv`. Progress goes to standard error.
pub fn train(
    utterances: &[Utterance],
    stats: &CorpusStats,
    model_config: ModelConfig,
    train: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(FrontEndModel, TrainLog)> {
    train.validate()?;
    let cfg = ModelConfig {
        init_seed: train.seed,
        trained_steps: 0,
        ..fit_model_config(model_config, utterances, stats)?
    };
    let examples = utterances
        .iter()
        .map(|u| TrainExample::new(u, stats, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut model = FrontEndModel::new(cfg)?;
    let mut adam = Adam::new(&model.params, train.beta1, train.beta2, train.epsilon);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = TrainLog::default();
    let start = Instant::now();

    for step in 1..=train.steps {
        let batch: Vec<usize> = (0..train.batch_size)
            .map(|_| {
                if cursor == order.len() {
                    order = (0..examples.len()).collect();
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                cursor += 1;
                order[cursor - 1]
            })
            .collect();
        let results = batch
            .par_iter()
            .enumerate()
            .map(|(i, &ex)| model.loss_and_grads(&examples[ex], Some(dropout_rng(train.seed, step, i))))
            .collect::<Vec<_>>();
        let inv = 1.0 / batch.len() as f64;
        let mut grads = model.params.zeros_like();
        let mut mean = Losses::default();
        for r in results {
            let (l, g) = r?;
            check_finite(&l, step)?;
            mean.total += l.total * inv;
            mean.mel += l.mel * inv;
            mean.duration += l.duration * inv;
            mean.pitch += l.pitch * inv;
            mean.energy += l.energy * inv;
            mean.utterance += l.utterance * inv;
            for (acc, g) in grads.iter_mut().zip(&g) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v * inv;
                }
            }
        }
        adam.step(&mut model.params, &grads, train.lr_at(step))?;
        if !model.params.is_finite() {
            return Err(Error::NonFinite {
                term: "parameters".into(),
                step,
            });
        }
        model.config.trained_steps = step as u64;

        if step == 1 || step % train.log_every == 0 || step == train.steps {
            let row = LogRow {
                step,
                losses: mean,
                seconds: start.elapsed().as_secs_f64(),
            };
            eprintln!(
                "step {step:>6}  total {:.4}  mel {:.4}  dur {:.4}  pitch {:.4}  energy {:.4}  utt {:.4}  {:.1}s",
                mean.total, mean.mel, mean.duration, mean.pitch, mean.energy, mean.utterance, row.seconds
            );
            log.rows.push(row);
        }
        if let Some(dir) = out_dir {
            if train.checkpoint_every > 0 && step % train.checkpoint_every == 0 {
                model.save(&dir.join(format!("ckpt_{step:06}.pfe")))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        model.save(&dir.join(FINAL_CHECKPOINT))?;
        let path = dir.join(TRAIN_LOG);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(log.to_csv().as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok((model, log))
}

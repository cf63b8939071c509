//! Argument definitions and subcommand dispatch for the `prosodia` binary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use prosodia::binfmt::{self, Matrix, MEL_MAGIC};
use prosodia::control::{synthesize, BiasSpec, EmphasisSpec};
use prosodia::corpus::{
    featurize, fit_corpus_stats, generate_toy_corpus, load_dataset, parse_phones, read_test_sentences, CorpusStats,
    Feature, PhoneToken, STATS,
};
use prosodia::dsp::wav::write_wav;
use prosodia::evalharness::{emit_report, linspace, run_sweep, SweepSpec};
use prosodia::model::{FrontEndModel, ModelConfig};
use prosodia::training::{train, TrainConfig};
use prosodia_service::{response_json, serve, ServiceState, DEFAULT_PORT};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "prosodia", version, about = "TTS front-end with hierarchical prosody control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic toy corpus.
    GenCorpus {
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract Mel, pitch, energy and prosody features for a corpus.
    Featurize {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fit normalization statistics on a featurized corpus.
    FitStats {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to `<corpus>/stats.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a featurized corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to `<corpus>/stats.json`.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// JSON file with optional `model` and `train` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize one utterance.
    Synth(SynthArgs),
    /// Sweep single-dimension biases over held-out sentences.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to `<corpus>/stats.json`.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Comma-separated feature names.
        #[arg(long, default_value = "pitch,pitch_range,duration,energy,tilt")]
        dims: String,
        /// `lo:hi:n` or a comma-separated list.
        #[arg(long, default_value = "-1:1:9", allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value_t = 20)]
        sentences: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    /// A file of phone symbols, or the symbols inline, e.g. "HH AH # L OW .".
    #[arg(long)]
    pub phones: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_pitch_range: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_duration: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_energy: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_tilt: f64,
    #[arg(long)]
    pub emphasize_word: Option<usize>,
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub mel: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

impl SynthArgs {
    pub fn bias(&self) -> BiasSpec {
        BiasSpec {
            pitch: self.bias_pitch,
            pitch_range: self.bias_pitch_range,
            duration: self.bias_duration,
            energy: self.bias_energy,
            tilt: self.bias_tilt,
        }
    }
}

/// Parses `lo:hi:n` (inclusive, evenly spaced) or `a,b,c`.
pub fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let s = s.trim();
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().context("grid start")?;
        let hi: f64 = parts[1].trim().parse().context("grid end")?;
        let n: usize = parts[2].trim().parse().context("grid point count")?;
        if n < 2 || !(lo < hi) {
            bail!("grid `{s}` needs lo < hi and at least 2 points");
        }
        return Ok(linspace(lo, hi, n));
    }
    if parts.len() != 1 {
        bail!("grid `{s}` is neither lo:hi:n nor a comma-separated list");
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("grid value `{v}`")))
        .collect()
}

pub fn parse_dims(s: &str) -> anyhow::Result<Vec<Feature>> {
    s.split(',')
        .map(|n| Feature::from_name(n.trim()).with_context(|| format!("unknown dimension `{}`", n.trim())))
        .collect()
}

/// Reads `arg` as a file when one exists at that path, else as inline symbols.
pub fn read_phones(arg: &str) -> anyhow::Result<Vec<PhoneToken>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else {
        arg.to_string()
    };
    Ok(parse_phones(&text)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn stats_path(corpus: &Path, stats: Option<PathBuf>) -> PathBuf {
    stats.unwrap_or_else(|| corpus.join(STATS))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    prosodia::init_thread_pool();
    match cli.command {
        Command::GenCorpus { size, seed, out } => {
            generate_toy_corpus(&out, size, seed)?;
            eprintln!("wrote {size} utterances to {}", out.display());
        }
        Command::Featurize { corpus } => {
            let n = featurize(&corpus)?;
            eprintln!("featurized {n} utterances");
        }
        Command::FitStats { corpus, out } => {
            let data = load_dataset(&corpus)?;
            let stats = fit_corpus_stats(&data.utterances)?;
            let out = stats_path(&corpus, out);
            stats.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Train {
            corpus,
            stats,
            config,
            out,
            steps,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let stats_file = stats_path(&corpus, stats);
            let stats = CorpusStats::load(&stats_file)?;
            let data = load_dataset(&corpus)?;
            let (model, log) = train(&data.utterances, &stats, cfg.model, &cfg.train, Some(&out))?;
            stats.save(&out.join(STATS))?;
            if let Some(last) = log.rows.last() {
                eprintln!(
                    "trained {} steps ({} parameters), final loss {:.4}",
                    last.step,
                    model.parameter_count(),
                    last.losses.total
                );
            }
        }
        Command::Synth(args) => synth(&args)?,
        Command::Sweep {
            model,
            corpus,
            stats,
            dims,
            grid,
            sentences,
            out,
        } => {
            let grid = parse_grid(&grid)?;
            let dimensions = parse_dims(&dims)?;
            let stats = CorpusStats::load(&stats_path(&corpus, stats))?;
            let model = FrontEndModel::load(&model)?;
            let mut held_out = read_test_sentences(&corpus)?;
            if held_out.len() < sentences {
                bail!("corpus has {} test sentences, {sentences} requested", held_out.len());
            }
            held_out.truncate(sentences);
            let spec = SweepSpec {
                dimensions,
                grid,
                sentences: held_out,
            };
            let report = run_sweep(&model, &stats, &spec)?;
            emit_report(&report, &stats, &out)?;
            for s in &report.summaries {
                eprintln!("{:<12} rho {:.3}", s.dimension.name(), s.spearman);
            }
            eprintln!("{} syntheses, report in {}", report.syntheses, out.display());
        }
        Command::Serve {
            model,
            stats,
            port,
            host,
        } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let state = ServiceState::empty();
                let loader = state.clone();
                tokio::task::spawn_blocking(move || {
                    let loaded = FrontEndModel::load(&model).and_then(|m| Ok((m, CorpusStats::load(&stats)?)));
                    match loaded {
                        Ok((m, s)) => {
                            loader.load(m, s);
                            eprintln!("model loaded");
                        }
                        Err(e) => {
                            eprintln!("error: {e}");
                            std::process::exit(EXIT_RUNTIME);
                        }
                    }
                });
                serve(addr, state).await
            })?;
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let model = FrontEndModel::load(&args.model)?;
    let stats = CorpusStats::load(&args.stats)?;
    let tokens = read_phones(&args.phones)?;
    let emphasis = args.emphasize_word.map(EmphasisSpec::word);
    let r = synthesize(&model, &stats, &tokens, &args.bias(), emphasis.as_ref(), args.wav.is_some())?;
    if let (Some(path), Some(clip)) = (&args.wav, &r.audio) {
        write_wav(path, clip)?;
    }
    if let Some(path) = &args.mel {
        binfmt::write(path, MEL_MAGIC, &Matrix::from_f64(r.mel.n_frames(), r.mel.n_mels, &r.mel.frames))?;
    }
    if let Some(path) = &args.json {
        let mut body = response_json(&stats, &r)?;
        body["u_hat"] = serde_json::to_value(r.u_hat.0)?;
        let text = serde_json::to_string_pretty(&body)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    let u: Vec<String> = Feature::ALL
        .iter()
        .map(|&f| format!("{}={:+.3}", f.name(), r.u_used.get(f)))
        .collect();
    println!(
        "{} frames, {} phones, u_used {}",
        r.mel.n_frames(),
        r.durations.len(),
        u.join(" ")
    );
    Ok(())
}

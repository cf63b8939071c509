//! Bias sweeps: synthesize test sentences under single-dimension biases,
//! measure the realized prosody and summarize how well it follows.

mod svg;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{realized_prosody, synthesize, BiasSpec};
use crate::corpus::{CorpusStats, Feature, PhoneToken, ProsodyVector};
use crate::model::FrontEndModel;
use crate::{stats, Error, Result};

pub use svg::line_chart;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const ENDPOINTS_CSV: &str = "endpoints.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub dimensions: Vec<Feature>,
    pub grid: Vec<f64>,
    pub sentences: Vec<Vec<PhoneToken>>,
}

impl SweepSpec {
    /// All five dimensions over nine points in `[-1, 1]`.
    pub fn standard(sentences: Vec<Vec<PhoneToken>>) -> Self {
        Self {
            dimensions: Feature::ALL.to_vec(),
            grid: linspace(-1.0, 1.0, 9),
            sentences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::InvalidArgument("no sweep dimensions".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid must be non-empty and finite".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        if self.sentences.is_empty() {
            return Err(Error::InvalidArgument("no sweep sentences".into()));
        }
        Ok(())
    }

    /// Distinct syntheses the sweep performs: the zero-bias run of each
    /// sentence is shared by every dimension.
    pub fn synthesis_count(&self) -> usize {
        let nonzero = self.grid.iter().filter(|&&v| v != 0.0).count();
        let zero = usize::from(self.grid.len() > nonzero);
        self.sentences.len() * (zero + self.dimensions.len() * nonzero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub dimension: Feature,
    pub bias: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionSummary {
    pub dimension: Feature,
    /// Mean over sentences of the per-sentence Spearman correlation
    /// between bias and realized value.
    pub spearman: f64,
    /// Spearman correlation over all (bias, realized) pairs.
    pub spearman_pooled: f64,
    /// Spearman correlation between the grid and the per-point means.
    pub spearman_of_means: f64,
    /// Realized means at bias -1, 0, +1 in physical units, when the grid
    /// spans them.
    pub endpoints: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub summaries: Vec<DimensionSummary>,
    /// `realized[d][g][s]`: realized normalized value of dimension `d` at
    /// grid point `g` for sentence `s`.
    pub realized: Vec<Vec<Vec<f64>>>,
    pub syntheses: usize,
}

/// Physical value and unit of a normalized feature: pitch in Hz, pitch
/// range in semitones, duration in ms, energy in dB, tilt unitless.
pub fn physical(stats: &CorpusStats, f: Feature, normalized: f64) -> (f64, &'static str) {
    let raw = stats.norm.get(f).denormalize(normalized);
    match f {
        Feature::Pitch => (raw.exp(), "Hz"),
        Feature::PitchRange => (raw * 12.0 / std::f64::consts::LN_2, "semitones"),
        Feature::Duration => (raw.exp(), "ms"),
        Feature::Energy => (raw, "dB"),
        Feature::Tilt => (raw, "-"),
    }
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> Option<f64> {
    let i = grid.iter().position(|&g| g >= x)?;
    if grid[i] == x {
        return Some(values[i]);
    }
    if i == 0 {
        return None;
    }
    let t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    Some(values[i - 1] + t * (values[i] - values[i - 1]))
}

pub fn run_sweep(model: &FrontEndModel, stats: &CorpusStats, spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    // Job list: shared zero point first, then every (dimension, nonzero bias).
    let mut jobs: Vec<(Option<Feature>, f64)> = Vec::new();
    if spec.grid.contains(&0.0) {
        jobs.push((None, 0.0));
    }
    for &d in &spec.dimensions {
        for &b in spec.grid.iter().filter(|&&b| b != 0.0) {
            jobs.push((Some(d), b));
        }
    }
    let tasks: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..spec.sentences.len()).map(move |s| (j, s)))
        .collect();
    let measured: Vec<ProsodyVector> = tasks
        .par_iter()
        .map(|&(j, s)| {
            let (dim, b) = jobs[j];
            let bias = dim.map(|d| BiasSpec::single(d, b)).unwrap_or_default();
            let r = synthesize(model, stats, &spec.sentences[s], &bias, None, false)?;
            realized_prosody(&r, stats)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_sent = spec.sentences.len();
    let at = |j: usize, s: usize| measured[j * n_sent + s];
    let job_of = |d: Feature, b: f64| {
        jobs.iter()
            .position(|&(jd, jb)| jb == b && (b == 0.0 || jd == Some(d)))
            .expect("job exists")
    };

    let mut points = Vec::new();
    let mut summaries = Vec::new();
    let mut realized = Vec::new();
    for &d in &spec.dimensions {
        let per_grid: Vec<Vec<f64>> = spec
            .grid
            .iter()
            .map(|&b| {
                let j = job_of(d, b);
                (0..n_sent).map(|s| at(j, s).get(d)).collect()
            })
            .collect();
        let means: Vec<f64> = per_grid.iter().map(|v| stats::mean(v).unwrap_or(f64::NAN)).collect();
        for (g, vals) in per_grid.iter().enumerate() {
            points.push(SweepPoint {
                dimension: d,
                bias: spec.grid[g],
                mean: means[g],
                std: stats::std_dev(vals).unwrap_or(f64::NAN),
                n: vals.len(),
            });
        }
        let rho = |x: &[f64], y: &[f64]| stats::spearman(x, y).unwrap_or(0.0);
        let per_sentence: Vec<f64> = (0..n_sent)
            .map(|s| {
                let y: Vec<f64> = per_grid.iter().map(|v| v[s]).collect();
                rho(&spec.grid, &y)
            })
            .collect();
        let pooled_x: Vec<f64> = spec.grid.iter().flat_map(|&b| std::iter::repeat(b).take(n_sent)).collect();
        let pooled_y: Vec<f64> = per_grid.iter().flatten().copied().collect();
        let endpoints = [-1.0, 0.0, 1.0]
            .map(|x| interpolate(&spec.grid, &means, x).map(|m| physical(stats, d, m).0));
        summaries.push(DimensionSummary {
            dimension: d,
            spearman: stats::mean(&per_sentence).unwrap_or(0.0),
            spearman_pooled: rho(&pooled_x, &pooled_y),
            spearman_of_means: rho(&spec.grid, &means),
            endpoints: match endpoints {
                [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                _ => None,
            },
        });
        realized.push(per_grid);
    }
    Ok(SweepReport {
        grid: spec.grid.clone(),
        points,
        summaries,
        realized,
        syntheses: measured.len(),
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `sweep.csv`, `endpoints.csv`, `summary.csv` and one
/// `sweep_<dimension>.svg` per dimension.
pub fn emit_report(report: &SweepReport, stats: &CorpusStats, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut sweep = String::from("dimension,bias,mean,std,n\n");
    for p in &report.points {
        sweep.push_str(&format!("{},{},{},{},{}\n", p.dimension.name(), p.bias, p.mean, p.std, p.n));
    }
    write(&out_dir.join(SWEEP_CSV), &sweep)?;

    let mut endpoints = String::from("feature,unit,minus_one,zero,plus_one\n");
    let mut summary = String::from("dimension,spearman,spearman_pooled,spearman_of_means\n");
    for s in &report.summaries {
        let unit = physical(stats, s.dimension, 0.0).1;
        match s.endpoints {
            Some([a, b, c]) => endpoints.push_str(&format!("{},{unit},{a},{b},{c}\n", s.dimension.name())),
            None => endpoints.push_str(&format!("{},{unit},,,\n", s.dimension.name())),
        }
        summary.push_str(&format!(
            "{},{},{},{}\n",
            s.dimension.name(),
            s.spearman,
            s.spearman_pooled,
            s.spearman_of_means
        ));
    }
    write(&out_dir.join(ENDPOINTS_CSV), &endpoints)?;
    write(&out_dir.join(SUMMARY_CSV), &summary)?;

    for s in &report.summaries {
        let pts: Vec<&SweepPoint> = report.points.iter().filter(|p| p.dimension == s.dimension).collect();
        let chart = line_chart(
            &format!("{} (rho {:.2})", s.dimension.name(), s.spearman),
            "bias",
            "realized (normalized)",
            &pts.iter().map(|p| (p.bias, p.mean, p.std)).collect::<Vec<_>>(),
        );
        write(&out_dir.join(format!("sweep_{}.svg", s.dimension.name())), &chart)?;
    }
    Ok(())
}

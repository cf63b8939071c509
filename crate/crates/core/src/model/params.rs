use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Handle to one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// All learnable values, in construction order. Values are kept exactly
/// representable in `f32` so checkpoints round-trip bit for bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub blocks: Vec<ParamBlock>,
}

pub(crate) enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
    Zeros,
    Ones,
}

impl Params {
    pub(crate) fn add(&mut self, name: String, rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> ParamId {
        let n = rows * cols;
        let data: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let a = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.blocks.push(ParamBlock {
            name,
            rows,
            cols,
            data: data.into_iter().map(|v| v as f32 as f64).collect(),
        });
        ParamId(self.blocks.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn count(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for b in &mut self.blocks {
            for v in &mut b.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| vec![0.0; b.data.len()]).collect()
    }
}

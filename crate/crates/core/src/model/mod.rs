//! The front-end network and its differentiation core.

mod checkpoint;
mod config;
mod graph;
mod network;
mod params;
mod tensor;

pub use checkpoint::CHECKPOINT_MAGIC;
pub use config::{bucket, LossWeights, ModelConfig};
pub use graph::{Graph, Var};
pub use network::{
    length_regulate_index, positional_encoding, ForwardOutput, FrontEndModel, Inference, Losses, TrainExample,
};
pub use params::{ParamBlock, ParamId, Params};
pub use tensor::Tensor;

//! Parameterized layers composed from tape ops: fully-connected, Conv1D
//! stacks, LSTM/BiLSTM, multi-head self-attention, and the Post-Net refiner.
//!
//! Layers own their hyperparameters and stable parameter names
//! ("block.index.role"); the tensors themselves live in a
//! [`ModelParams`](crate::params::ModelParams) registry.

pub mod attention;
pub mod conv;
pub mod fc;
pub mod lstm;
pub mod postnet;

pub use attention::Mhsa;
pub use conv::{Conv1dLayer, ConvStack};
pub use fc::Fc;
pub use lstm::{Lstm, LstmOutput};
pub use postnet::PostNet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Kinds that matter for regularization targeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Fc,
    Conv,
    Lstm,
    Bilstm,
    Mhsa,
    Postnet,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerKind::Fc => "fc",
            LayerKind::Conv => "conv1d",
            LayerKind::Lstm => "lstm",
            LayerKind::Bilstm => "bilstm",
            LayerKind::Mhsa => "mhsa",
            LayerKind::Postnet => "postnet",
        };
        f.write_str(s)
    }
}

/// Metadata for one 2-D weight matrix, used to build group partitions.
/// `width` is the quantity the "greater than 128" targeting rule tests:
/// output width for FC layers, hidden width per direction for LSTMs.
#[derive(Debug, Clone)]
pub struct WeightDesc {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: LayerKind,
    pub width: usize,
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
    Tensor::from_vec(dims.to_vec(), data).expect("consistent dims")
}

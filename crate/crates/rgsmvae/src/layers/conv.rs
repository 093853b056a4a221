//! 1-D convolution layer and the repeated conv blocks used by encoder and
//! decoder (kernel 5, padding 2, stride 1 under the default configuration,
//! which keeps the frame count unchanged).

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

use super::uniform_fan_in;

#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1dLayer {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv1dLayer { name: name.into(), in_channels, out_channels, kernel, stride, pad }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        let fan_in = self.in_channels * self.kernel;
        params.insert(
            &self.weight_name(),
            uniform_fan_in(rng, &[self.out_channels, self.in_channels, self.kernel], fan_in),
        )?;
        params.insert(&self.bias_name(), uniform_fan_in(rng, &[self.out_channels], fan_in))
    }

    /// x: (batch, in_channels, time) -> (batch, out_channels, time_out)
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let w = tape.param(&self.weight_name(), params.get(&self.weight_name())?)?;
        let b = tape.param(&self.bias_name(), params.get(&self.bias_name())?)?;
        let y = tape.conv1d(x, &w, self.stride, self.pad)?;
        tape.add_bias(&y, &b, 1)
    }
}

/// A stack of same-kernel conv layers with ReLU after each one.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub layers: Vec<Conv1dLayer>,
}

impl ConvStack {
    /// `channels` lists the channel counts including input, e.g.
    /// [80, 512, 512, 512] builds three layers.
    pub fn new(name: &str, channels: &[usize], kernel: usize, stride: usize, pad: usize) -> Self {
        let layers = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv1dLayer::new(format!("{name}.{i}"), w[0], w[1], kernel, stride, pad))
            .collect();
        ConvStack { layers }
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in &self.layers {
            l.init(params, rng)?;
        }
        Ok(())
    }

    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let mut h = x.clone();
        for l in &self.layers {
            let y = l.forward(tape, params, &h)?;
            h = tape.relu(&y)?;
        }
        Ok(h)
    }
}

//! Post-Net: a residual convolutional refiner applied to the decoder
//! output. Five conv1d layers (kernel 5, pad 2, stride 1) mapping
//! mel -> hidden x3 -> mel, tanh after every layer except the last.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

use super::conv::Conv1dLayer;

#[derive(Debug, Clone)]
pub struct PostNet {
    pub layers: Vec<Conv1dLayer>,
}

impl PostNet {
    pub fn new(name: &str, mel: usize, hidden: usize, depth: usize, kernel: usize) -> Self {
        assert!(depth >= 2, "post-net needs at least input and output layers");
        let pad = kernel / 2;
        let mut channels = vec![mel];
        channels.extend(std::iter::repeat(hidden).take(depth - 1));
        channels.push(mel);
        let layers = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv1dLayer::new(format!("{name}.{i}"), w[0], w[1], kernel, 1, pad))
            .collect();
        PostNet { layers }
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in &self.layers {
            l.init(params, rng)?;
        }
        Ok(())
    }

    /// xhat: (batch, mel, T) -> residual of the same shape.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        xhat: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let mel = self.layers[0].in_channels;
        if xhat.dims().len() != 3 || xhat.dims()[1] != mel {
            return Err(Error::dim("postnet", xhat.dims(), format!("(batch, {mel}, T)")));
        }
        let mut h = xhat.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, params, &h)?;
            if i != last {
                h = tape.tanh(&h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_give_zero_residual() {
        let pn = PostNet::new("post", 6, 8, 5, 5);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pn.init(&mut params, &mut rng).unwrap();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for n in names {
            for v in params.get_mut(&n).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::<f32>::new(1);
        let x = tape.draw_standard_normal(&[2, 6, 10]);
        let r = pn.forward(&mut tape, &params, &x).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input_for_various_lengths() {
        let pn = PostNet::new("post", 80, 32, 5, 5);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        pn.init(&mut params, &mut rng).unwrap();
        for t_len in [16usize, 64] {
            let mut tape = Tape::<f32>::new(0);
            let x = tape.draw_standard_normal(&[1, 80, t_len]);
            let r = pn.forward(&mut tape, &params, &x).unwrap();
            assert_eq!(r.dims(), &[1, 80, t_len]);
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let pn = PostNet::new("post", 8, 4, 5, 5);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pn.init(&mut params, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let x = Tensor::zeros(&[1, 7, 10]);
        assert!(pn.forward(&mut tape, &params, &x).is_err());
    }
}

//! Fully-connected layer: y = x W^T + b, weight stored (out, in) so each
//! column indexes one input feature.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

use super::{uniform_fan_in, LayerKind, WeightDesc};

#[derive(Debug, Clone)]
pub struct Fc {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Fc {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Fc { name: name.into(), input, output }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        params.insert(
            &self.weight_name(),
            uniform_fan_in(rng, &[self.output, self.input], self.input),
        )?;
        params.insert(&self.bias_name(), uniform_fan_in(rng, &[self.output], self.input))
    }

    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let w = tape.param(&self.weight_name(), params.get(&self.weight_name())?)?;
        let b = tape.param(&self.bias_name(), params.get(&self.bias_name())?)?;
        let y = tape.matmul_nt(x, &w)?;
        tape.add_bias(&y, &b, 1)
    }

    pub fn weight_descs(&self) -> Vec<WeightDesc> {
        vec![WeightDesc {
            name: self.weight_name(),
            rows: self.output,
            cols: self.input,
            kind: LayerKind::Fc,
            width: self.output,
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_weight_passes_input_through() {
        let fc = Fc::new("t", 3, 3);
        let mut params = ModelParams::new();
        params.insert("t.weight", Tensor::eye(3)).unwrap();
        params.insert("t.bias", Tensor::zeros(&[3])).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let x = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let y = fc.forward(&mut tape, &params, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let fc = Fc::new("t", 2, 4);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        fc.init(&mut params, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let x = Tensor::zeros(&[3, 2]);
        let y = fc.forward(&mut tape, &params, &x).unwrap();
        let b = params.get("t.bias").unwrap();
        for row in 0..3 {
            assert_eq!(&y.data()[row * 4..(row + 1) * 4], b.data());
        }
    }

    #[test]
    fn random_case_matches_naive_triple_loop() {
        let fc = Fc::new("t", 3, 2);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        fc.init(&mut params, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new(2);
        let x = tape.draw_standard_normal(&[2, 3]);
        let y = fc.forward(&mut tape, &params, &x).unwrap();
        let w = params.get("t.weight").unwrap();
        let b = params.get("t.bias").unwrap();
        for i in 0..2 {
            for o in 0..2 {
                let mut acc = b.data()[o] as f64;
                for k in 0..3 {
                    acc += (x.data()[i * 3 + k] * w.data()[o * 3 + k]) as f64;
                }
                let got = y.data()[i * 2 + o] as f64;
                assert!((got - acc).abs() < 1e-6, "({i},{o}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn zeroed_column_ignores_that_input_feature() {
        // structural meaning of a pruned group: column j zero -> output
        // invariant to input feature j
        let fc = Fc::new("t", 3, 5);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        fc.init(&mut params, &mut rng).unwrap();
        {
            let w = params.get_mut("t.weight").unwrap();
            let data = w.data_mut();
            for r in 0..5 {
                data[r * 3 + 1] = 0.0; // zero column 1
            }
        }
        let x1 = Tensor::from_vec(vec![1, 3], vec![0.3, -7.0, 0.9]).unwrap();
        let x2 = Tensor::from_vec(vec![1, 3], vec![0.3, 123.0, 0.9]).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let y1 = fc.forward(&mut tape, &params, &x1).unwrap();
        let y2 = fc.forward(&mut tape, &params, &x2).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let fc = Fc::new("t", 3, 2);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fc.init(&mut params, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let x = Tensor::zeros(&[2, 4]);
        assert!(fc.forward(&mut tape, &params, &x).is_err());
    }
}

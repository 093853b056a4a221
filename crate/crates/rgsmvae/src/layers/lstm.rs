//! Multi-layer LSTM / BiLSTM over (time, batch, features) sequences.
//!
//! Standard recurrence with sigmoid input/forget/output gates and tanh cell
//! candidate. Gates are stacked in (i, f, g, o) order inside the 4H-row
//! weight matrices, so one column of `w_x`/`w_h` carries one input feature
//! across all four gates.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

use super::{uniform_fan_in, LayerKind, WeightDesc};

#[derive(Debug, Clone)]
pub struct Lstm {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

/// Per-frame outputs plus the last (h, c) of every layer and direction,
/// ordered layer-major then direction (fwd before bwd).
pub struct LstmOutput<E: Scalar> {
    pub output: Tensor<E>,
    pub finals: Vec<(Tensor<E>, Tensor<E>)>,
}

impl Lstm {
    pub fn new(
        name: impl Into<String>,
        input: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
    ) -> Self {
        Lstm { name: name.into(), input, hidden, layers, bidirectional }
    }

    fn dirs(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            self.hidden * self.dirs()
        }
    }

    fn pname(&self, layer: usize, dir: usize, role: &str) -> String {
        let d = if dir == 0 { "fwd" } else { "bwd" };
        format!("{}.l{layer}.{d}.{role}", self.name)
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        for layer in 0..self.layers {
            let in_w = self.layer_input(layer);
            for dir in 0..self.dirs() {
                params.insert(
                    &self.pname(layer, dir, "w_x"),
                    uniform_fan_in(rng, &[4 * self.hidden, in_w], self.hidden),
                )?;
                params.insert(
                    &self.pname(layer, dir, "w_h"),
                    uniform_fan_in(rng, &[4 * self.hidden, self.hidden], self.hidden),
                )?;
                params.insert(
                    &self.pname(layer, dir, "b"),
                    uniform_fan_in(rng, &[4 * self.hidden], self.hidden),
                )?;
            }
        }
        Ok(())
    }

    /// x: (T, batch, input) -> output (T, batch, hidden * dirs).
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<LstmOutput<E>> {
        if x.dims().len() != 3 {
            return Err(Error::dim("lstm", x.dims(), "(T, batch, features)"));
        }
        if x.dims()[0] == 0 {
            return Err(Error::Contract("lstm: empty sequence (T == 0)".into()));
        }
        if x.dims()[2] != self.input {
            return Err(Error::dim("lstm", x.dims(), self.input));
        }

        let mut h_seq = x.clone();
        let mut finals = Vec::with_capacity(self.layers * self.dirs());
        for layer in 0..self.layers {
            let mut dir_outputs = Vec::with_capacity(self.dirs());
            for dir in 0..self.dirs() {
                let (out, h_last, c_last) = self.run_direction(tape, params, &h_seq, layer, dir)?;
                dir_outputs.push(out);
                finals.push((h_last, c_last));
            }
            h_seq = if self.bidirectional {
                tape.concat(&[&dir_outputs[0], &dir_outputs[1]], 2)?
            } else {
                dir_outputs.pop().expect("one direction")
            };
        }
        Ok(LstmOutput { output: h_seq, finals })
    }

    fn run_direction<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
        layer: usize,
        dir: usize,
    ) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
        let (t_len, batch, in_w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let h = self.hidden;
        let w_x = tape.param(&self.pname(layer, dir, "w_x"), params.get(&self.pname(layer, dir, "w_x"))?)?;
        let w_h = tape.param(&self.pname(layer, dir, "w_h"), params.get(&self.pname(layer, dir, "w_h"))?)?;
        let b = tape.param(&self.pname(layer, dir, "b"), params.get(&self.pname(layer, dir, "b"))?)?;

        // input contributions for all frames in one product
        let flat = tape.reshape(x, &[t_len * batch, in_w])?;
        let xw = tape.matmul_nt(&flat, &w_x)?;
        let xw = tape.add_bias(&xw, &b, 1)?;
        let xw = tape.reshape(&xw, &[t_len, batch, 4 * h])?;

        let mut h_t = Tensor::zeros(&[batch, h]);
        let mut c_t = Tensor::zeros(&[batch, h]);
        let mut outputs: Vec<Tensor<E>> = Vec::with_capacity(t_len);
        let order: Vec<usize> = if dir == 0 {
            (0..t_len).collect()
        } else {
            (0..t_len).rev().collect()
        };
        for &t in &order {
            let x_t = tape.slice(&xw, 0, t, 1)?;
            let x_t = tape.reshape(&x_t, &[batch, 4 * h])?;
            let hw = tape.matmul_nt(&h_t, &w_h)?;
            let gates = tape.add(&x_t, &hw)?;
            let i_g = tape.slice(&gates, 1, 0, h)?;
            let f_g = tape.slice(&gates, 1, h, h)?;
            let g_g = tape.slice(&gates, 1, 2 * h, h)?;
            let o_g = tape.slice(&gates, 1, 3 * h, h)?;
            let i_g = tape.sigmoid(&i_g)?;
            let f_g = tape.sigmoid(&f_g)?;
            let g_g = tape.tanh(&g_g)?;
            let o_g = tape.sigmoid(&o_g)?;
            let fc = tape.mul(&f_g, &c_t)?;
            let ig = tape.mul(&i_g, &g_g)?;
            c_t = tape.add(&fc, &ig)?;
            let c_tanh = tape.tanh(&c_t)?;
            h_t = tape.mul(&o_g, &c_tanh)?;
            outputs.push(tape.reshape(&h_t, &[1, batch, h])?);
        }
        if dir == 1 {
            outputs.reverse(); // restore frame order
        }
        let refs: Vec<&Tensor<E>> = outputs.iter().collect();
        let out = tape.concat(&refs, 0)?;
        Ok((out, h_t, c_t))
    }

    pub fn weight_descs(&self) -> Vec<WeightDesc> {
        let kind = if self.bidirectional { LayerKind::Bilstm } else { LayerKind::Lstm };
        let mut descs = Vec::new();
        for layer in 0..self.layers {
            let in_w = self.layer_input(layer);
            for dir in 0..self.dirs() {
                descs.push(WeightDesc {
                    name: self.pname(layer, dir, "w_x"),
                    rows: 4 * self.hidden,
                    cols: in_w,
                    kind,
                    width: self.hidden,
                });
                descs.push(WeightDesc {
                    name: self.pname(layer, dir, "w_h"),
                    rows: 4 * self.hidden,
                    cols: self.hidden,
                    kind,
                    width: self.hidden,
                });
            }
        }
        descs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_params(lstm: &Lstm) -> ModelParams<f32> {
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        lstm.init(&mut params, &mut rng).unwrap();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for n in names {
            let t = params.get_mut(&n).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        params
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let lstm = Lstm::new("l", 3, 4, 2, true);
        let params = zero_params(&lstm);
        let mut tape = Tape::<f32>::new(1);
        let x = tape.draw_standard_normal(&[5, 2, 3]);
        let out = lstm.forward(&mut tape, &params, &x).unwrap();
        assert_eq!(out.output.dims(), &[5, 2, 8]);
        assert!(out.output.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.finals.len(), 4);
    }

    #[test]
    fn single_cell_matches_hand_evaluated_gates() {
        // T=1, scalar everything; compare against the four gate formulas
        let lstm = Lstm::new("l", 1, 1, 1, false);
        let mut params = ModelParams::new();
        let (wi, wf, wg, wo) = (0.5f32, -0.3f32, 0.8f32, 0.2f32);
        let (bi, bf, bg, bo) = (0.1f32, 0.2f32, -0.1f32, 0.05f32);
        params
            .insert("l.l0.fwd.w_x", Tensor::from_vec(vec![4, 1], vec![wi, wf, wg, wo]).unwrap())
            .unwrap();
        params
            .insert("l.l0.fwd.w_h", Tensor::from_vec(vec![4, 1], vec![0.0; 4]).unwrap())
            .unwrap();
        params
            .insert("l.l0.fwd.b", Tensor::from_vec(vec![4], vec![bi, bf, bg, bo]).unwrap())
            .unwrap();
        let xv = 0.7f32;
        let mut tape = Tape::<f32>::new(0);
        let x = Tensor::from_vec(vec![1, 1, 1], vec![xv]).unwrap();
        let out = lstm.forward(&mut tape, &params, &x).unwrap();

        let sig = |v: f32| 1.0 / (1.0 + (-v).exp());
        let i = sig(wi * xv + bi);
        let f = sig(wf * xv + bf);
        let g = (wg * xv + bg).tanh();
        let o = sig(wo * xv + bo);
        let c = f * 0.0 + i * g;
        let h = o * c.tanh();
        let got = out.output.data()[0];
        assert!((got - h).abs() < 1e-6, "{got} vs {h}");
        assert!((out.finals[0].1.data()[0] - c).abs() < 1e-6);
    }

    #[test]
    fn shared_weights_on_palindrome_give_time_reversed_halves() {
        let lstm = Lstm::new("l", 2, 3, 1, true);
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        lstm.init(&mut params, &mut rng).unwrap();
        // copy fwd weights onto bwd
        for role in ["w_x", "w_h", "b"] {
            let src = params.get(&format!("l.l0.fwd.{role}")).unwrap().clone();
            *params.get_mut(&format!("l.l0.bwd.{role}")).unwrap() = src;
        }
        // palindromic input: x[t] == x[T-1-t]
        let t_len = 5;
        let mut data = vec![0.0f32; t_len * 2];
        for t in 0..t_len {
            let m = t.min(t_len - 1 - t) as f32;
            data[t * 2] = 0.3 * m + 0.1;
            data[t * 2 + 1] = -0.2 * m;
        }
        let x = Tensor::from_vec(vec![t_len, 1, 2], data).unwrap();
        let mut tape = Tape::<f32>::new(0);
        let out = lstm.forward(&mut tape, &params, &x).unwrap();
        for t in 0..t_len {
            for j in 0..3 {
                let fwd = out.output.data()[t * 6 + j];
                let bwd = out.output.data()[(t_len - 1 - t) * 6 + 3 + j];
                assert!((fwd - bwd).abs() < 1e-6, "t={t} j={j}: {fwd} vs {bwd}");
            }
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let lstm = Lstm::new("l", 2, 2, 1, false);
        let params = zero_params(&lstm);
        let mut tape = Tape::<f32>::new(0);
        // zero-T tensors cannot be constructed through from_vec; emulate via
        // the internal constructor to exercise the guard
        let bad = Tensor::tracked(vec![0, 1, 2], std::rc::Rc::new(Vec::new()), None);
        assert!(lstm.forward(&mut tape, &params, &bad).is_err());
    }
}

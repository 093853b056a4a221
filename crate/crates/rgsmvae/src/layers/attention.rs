//! Multi-head self-attention over the time axis: unmasked, no positional
//! encoding, scaled dot-product per head, optionally residual.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

use super::{uniform_fan_in, LayerKind, WeightDesc};

#[derive(Debug, Clone)]
pub struct Mhsa {
    pub name: String,
    pub heads: usize,
    pub head_dim: usize,
    pub residual: bool,
}

impl Mhsa {
    pub fn new(name: impl Into<String>, heads: usize, head_dim: usize, residual: bool) -> Self {
        Mhsa { name: name.into(), heads, head_dim, residual }
    }

    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn pname(&self, role: &str) -> String {
        format!("{}.{role}", self.name)
    }

    pub fn init(&self, params: &mut ModelParams<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.width();
        for role in ["q", "k", "v", "out"] {
            params.insert(&self.pname(&format!("{role}.weight")), uniform_fan_in(rng, &[d, d], d))?;
            params.insert(&self.pname(&format!("{role}.bias")), uniform_fan_in(rng, &[d], d))?;
        }
        Ok(())
    }

    fn project<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        flat: &Tensor<E>,
        role: &str,
    ) -> Result<Tensor<E>> {
        let w = tape.param(
            &self.pname(&format!("{role}.weight")),
            params.get(&self.pname(&format!("{role}.weight")))?,
        )?;
        let b = tape.param(
            &self.pname(&format!("{role}.bias")),
            params.get(&self.pname(&format!("{role}.bias")))?,
        )?;
        let y = tape.matmul_nt(flat, &w)?;
        tape.add_bias(&y, &b, 1)
    }

    /// (T*B, D) -> (B*H, T, head_dim)
    fn to_heads<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        t_len: usize,
        batch: usize,
    ) -> Result<Tensor<E>> {
        let split = tape.reshape(x, &[t_len, batch, self.heads, self.head_dim])?;
        let perm = tape.permute(&split, &[1, 2, 0, 3])?;
        tape.reshape(&perm, &[batch * self.heads, t_len, self.head_dim])
    }

    /// x: (T, batch, D) -> (output (T, batch, D), attention (B*H, T, T)).
    /// Attention rows are softmax-normalized over source frames.
    pub fn forward_with_weights<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let d = self.width();
        if x.dims().len() != 3 || x.dims()[2] != d {
            return Err(Error::dim("mhsa", x.dims(), format!("(T, batch, {d})")));
        }
        let (t_len, batch) = (x.dims()[0], x.dims()[1]);
        let flat = tape.reshape(x, &[t_len * batch, d])?;
        let q = self.project(tape, params, &flat, "q")?;
        let k = self.project(tape, params, &flat, "k")?;
        let v = self.project(tape, params, &flat, "v")?;
        let qh = self.to_heads(tape, &q, t_len, batch)?;
        let kh = self.to_heads(tape, &k, t_len, batch)?;
        let vh = self.to_heads(tape, &v, t_len, batch)?;

        let scores = tape.bmm(&qh, &kh, true)?;
        let scores = tape.scale(&scores, 1.0 / (self.head_dim as f64).sqrt())?;
        let attn = tape.softmax_last(&scores)?;

        let ctx = tape.bmm(&attn, &vh, false)?;
        let ctx = tape.reshape(&ctx, &[batch, self.heads, t_len, self.head_dim])?;
        let ctx = tape.permute(&ctx, &[2, 0, 1, 3])?;
        let ctx = tape.reshape(&ctx, &[t_len * batch, d])?;
        let out = self.project(tape, params, &ctx, "out")?;
        let out = tape.reshape(&out, &[t_len, batch, d])?;
        let out = if self.residual { tape.add(&out, x)? } else { out };
        Ok((out, attn))
    }

    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ModelParams<E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        Ok(self.forward_with_weights(tape, params, x)?.0)
    }

    pub fn weight_descs(&self) -> Vec<WeightDesc> {
        let d = self.width();
        ["q", "k", "v", "out"]
            .iter()
            .map(|role| WeightDesc {
                name: self.pname(&format!("{role}.weight")),
                rows: d,
                cols: d,
                kind: LayerKind::Mhsa,
                width: d,
            })
            .collect()
    }
}

//! Central-difference gradient verification.
//!
//! Analytic gradients come from one tape backward; numeric gradients from
//! central differences of the same function. Both sides run in `f64` so the
//! comparison is limited by truncation error, not by float32 rounding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Tape, Tensor};

/// Maximum relative error between analytic and central-difference gradients
/// over sampled parameter coordinates.
///
/// `f` must be deterministic given the parameters (seed any internal
/// randomness from the tape). At most `max_coords_per_tensor` coordinates of
/// each parameter tensor are probed, chosen from a stream seeded by `seed`.
pub fn grad_check<F>(
    f: F,
    params: &ModelParams<f64>,
    eps: f64,
    max_coords_per_tensor: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ModelParams<f64>) -> Result<Tensor<f64>>,
{
    if eps <= 0.0 {
        return Err(Error::Contract("grad_check: eps must be positive".into()));
    }
    let eval = |p: &ModelParams<f64>| -> Result<f64> {
        let mut tape = Tape::inference(seed);
        let v = f(&mut tape, p)?.item()?;
        if !v.is_finite() {
            return Err(Error::Domain(format!("grad_check: f returned {v}")));
        }
        Ok(v)
    };

    // Analytic side.
    let mut tape = Tape::new(seed);
    let loss = f(&mut tape, params)?;
    if !loss.is_finite() {
        return Err(Error::Domain("grad_check: non-finite loss".into()));
    }
    let grads = tape.backward(&loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut work = params.clone();
    let mut max_rel = 0.0f64;

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let Some(analytic) = grads.get(name) else {
            continue; // parameter not reachable from the loss
        };
        let analytic = analytic.to_vec();
        let numel = params.get(name)?.numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        if numel > max_coords_per_tensor {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords_per_tensor);
        }
        for &i in &coords {
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

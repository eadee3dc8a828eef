//! KNRM: tanh(w · (s·φ(M)) + b) over the kernel-pooled similarity matrix.

use rand::Rng;

use super::{init_uniform, kernel_pool, RankerConfig};
use crate::error::Result;
use crate::numeric::{Array, BoundParams, ParamSet, Tape, Var};

pub(super) fn init<R: Rng + ?Sized>(config: &RankerConfig, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    init_uniform(&mut p, "w", &[config.kernels.len(), 1], rng);
    init_uniform(&mut p, "b", &[1], rng);
    p
}

pub(super) fn forward(
    config: &RankerConfig,
    tape: &mut Tape,
    params: &BoundParams,
    phi: &Array,
) -> Result<Var> {
    let k = phi.len();
    let scaled = phi.map(|x| x * config.feature_scale).reshape(&[1, k])?;
    let x = tape.constant(scaled);
    let z = tape.affine(x, params.var("w")?, params.var("b")?)?;
    let s = tape.tanh(z)?;
    tape.reshape(s, &[1])
}

/// KNRM score of a similarity matrix under explicit parameters.
pub fn knrm_score(config: &RankerConfig, params: &ParamSet, m: &Array) -> Result<f64> {
    let phi = Array::vector(kernel_pool(m, &config.kernels));
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let s = forward(config, &mut tape, &bound, &phi)?;
    Ok(tape.value(s).item())
}

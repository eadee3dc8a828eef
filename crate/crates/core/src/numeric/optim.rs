use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Contract("adam_step: parameter, gradient and state layouts differ".into()));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// A differentiable scalar objective over a parameter set.
pub trait Objective: Sync {
    fn loss(&self, params: &ParamSet) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)>;
}

/// Central-difference gradient check. Returns the largest
/// |g_analytic − g_fd| / max(1e-8, |g_analytic| + |g_fd|) over all coordinates.
pub fn grad_check<O: Objective + ?Sized>(objective: &O, params: &ParamSet, h: f64, exec: Exec) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Contract("grad_check needs h > 0".into()));
    }
    let (_, analytic) = objective.loss_and_grad(params)?;
    let analytic = analytic.flat();
    let errors = exec.map_range(analytic.len(), |i| -> Result<f64> {
        let mut p = params.clone();
        let x0 = *p.coord_mut(i);
        *p.coord_mut(i) = x0 + h;
        let up = objective.loss(&p)?;
        *p.coord_mut(i) = x0 - h;
        let down = objective.loss(&p)?;
        let fd = (up - down) / (2.0 * h);
        let ga = analytic[i];
        Ok((ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8))
    });
    let mut worst: f64 = 0.0;
    for e in errors {
        worst = worst.max(e?);
    }
    Ok(worst)
}

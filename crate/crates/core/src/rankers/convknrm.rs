//! ConvKNRM: n-gram embeddings from 1-D convolutions, kernel pooling of
//! every cross-order similarity matrix, then a tanh-linear layer.

use rand::Rng;

use super::{init_uniform, kernel_pool_graph, RankerConfig};
use crate::error::{Error, Result};
use crate::numeric::{Array, BoundParams, ParamSet, Tape, Var};

pub(super) fn init<R: Rng + ?Sized>(config: &RankerConfig, dim: usize, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    for &h in &config.ngram_orders {
        init_uniform(&mut p, &format!("conv{h}.filters"), &[config.filters, h, dim], rng);
        p.insert(format!("conv{h}.bias"), Array::zeros(&[config.filters]));
    }
    let n = config.ngram_orders.len();
    init_uniform(&mut p, "w", &[config.kernels.len() * n * n, 1], rng);
    init_uniform(&mut p, "b", &[1], rng);
    p
}

fn ngrams(tape: &mut Tape, params: &BoundParams, x: Var, len: usize, orders: &[usize]) -> Result<Vec<Option<Var>>> {
    orders
        .iter()
        .map(|&h| {
            if len < h {
                return Ok(None);
            }
            let f = params.var(&format!("conv{h}.filters"))?;
            let b = params.var(&format!("conv{h}.bias"))?;
            let c = tape.conv1d(x, f, b)?;
            let r = tape.relu(c)?;
            Ok(Some(tape.normalize_rows(r)?))
        })
        .collect()
}

pub(super) fn forward(
    config: &RankerConfig,
    tape: &mut Tape,
    params: &BoundParams,
    query: &Array,
    doc: &Array,
) -> Result<Var> {
    let (n, m) = (query.rows(), doc.rows());
    let orders = &config.ngram_orders;
    let q = tape.constant(query.clone());
    let d = tape.constant(doc.clone());
    let qg = ngrams(tape, params, q, n, orders)?;
    let dg = ngrams(tape, params, d, m, orders)?;

    let k = config.kernels.len();
    let mut feats = Vec::with_capacity(orders.len() * orders.len());
    let mut any = false;
    for qh in &qg {
        for dh in &dg {
            match (qh, dh) {
                (Some(a), Some(b)) => {
                    let sim = tape.matmul_t(*a, *b)?;
                    feats.push(kernel_pool_graph(tape, sim, &config.kernels)?);
                    any = true;
                }
                // orders longer than the text contribute zero features
                _ => feats.push(tape.constant(Array::zeros(&[k]))),
            }
        }
    }
    if !any {
        return Err(Error::EmptyInput(format!(
            "no n-gram order fits a {n}-token query and {m}-token document"
        )));
    }
    let phi = tape.concat(&feats)?;
    let phi = tape.scale(phi, config.feature_scale)?;
    let width = tape.value(phi).len();
    let x = tape.reshape(phi, &[1, width])?;
    let z = tape.affine(x, params.var("w")?, params.var("b")?)?;
    let s = tape.tanh(z)?;
    tape.reshape(s, &[1])
}

/// ConvKNRM score of a query/document embedding pair under explicit parameters.
pub fn convknrm_score(config: &RankerConfig, params: &ParamSet, query: &Array, doc: &Array) -> Result<f64> {
    if query.rows() == 0 || doc.rows() == 0 {
        return Err(Error::EmptyInput("convknrm needs at least one token on each side".into()));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let s = forward(config, &mut tape, &bound, query, doc)?;
    Ok(tape.value(s).item())
}

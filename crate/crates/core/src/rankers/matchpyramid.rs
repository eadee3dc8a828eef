//! MatchPyramid: the similarity matrix as a one-channel image, three
//! conv → relu → max-pool blocks, adaptive max pooling to a fixed grid and a
//! linear read-out.

use rand::Rng;

use super::{init_uniform, RankerConfig};
use crate::error::{Error, Result};
use crate::numeric::{Array, BoundParams, ParamSet, Tape, Var};

/// Spatial size after the conv/pool stack, or `None` if it collapses.
fn feature_map_size(config: &RankerConfig) -> Option<(usize, usize)> {
    let (mut h, mut w) = config.canvas;
    for _ in 0..config.conv_layers {
        h = h.checked_sub(config.conv_size - 1)?;
        w = w.checked_sub(config.conv_size - 1)?;
        h /= config.pool.0;
        w /= config.pool.1;
        if h == 0 || w == 0 {
            return None;
        }
    }
    Some((h, w))
}

pub(super) fn validate(config: &RankerConfig) -> Result<()> {
    if config.conv_layers == 0
        || config.channels == 0
        || config.conv_size == 0
        || config.pool.0 == 0
        || config.pool.1 == 0
        || config.grid.0 == 0
        || config.grid.1 == 0
    {
        return Err(Error::Config("matchpyramid sizes must be positive".into()));
    }
    if feature_map_size(config).is_none() {
        return Err(Error::Config(format!(
            "canvas {:?} is too small for {} conv/pool blocks",
            config.canvas, config.conv_layers
        )));
    }
    Ok(())
}

pub(super) fn init<R: Rng + ?Sized>(config: &RankerConfig, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    let k = config.conv_size;
    let mut cin = 1;
    for l in 1..=config.conv_layers {
        init_uniform(&mut p, &format!("conv{l}.filters"), &[config.channels, cin, k, k], rng);
        p.insert(format!("conv{l}.bias"), Array::zeros(&[config.channels]));
        cin = config.channels;
    }
    let flat = config.channels * config.grid.0 * config.grid.1;
    init_uniform(&mut p, "dense.w", &[flat, 1], rng);
    init_uniform(&mut p, "dense.b", &[1], rng);
    p
}

pub(super) fn forward(
    config: &RankerConfig,
    tape: &mut Tape,
    params: &BoundParams,
    canvas: &Array,
) -> Result<Var> {
    let mut x = tape.constant(canvas.clone());
    for l in 1..=config.conv_layers {
        let f = params.var(&format!("conv{l}.filters"))?;
        let b = params.var(&format!("conv{l}.bias"))?;
        let c = tape.conv2d(x, f, b)?;
        let r = tape.relu(c)?;
        x = tape.maxpool2d(r, config.pool)?;
    }
    let pooled = tape.adaptive_maxpool2d(x, config.grid)?;
    let flat = tape.value(pooled).len();
    let row = tape.reshape(pooled, &[1, flat])?;
    let s = tape.affine(row, params.var("dense.w")?, params.var("dense.b")?)?;
    tape.reshape(s, &[1])
}

/// MatchPyramid score of a similarity matrix under explicit parameters.
pub fn matchpyramid_score(config: &RankerConfig, params: &ParamSet, m: &Array) -> Result<f64> {
    let (h, w) = config.canvas;
    let canvas = m.place_on_canvas(h, w).reshape(&[1, h, w])?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let s = forward(config, &mut tape, &bound, &canvas)?;
    Ok(tape.value(s).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankers::{Arch, Ranker};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> RankerConfig {
        RankerConfig {
            canvas: (24, 32),
            ..RankerConfig::new(Arch::MatchPyramid)
        }
    }

    #[test]
    fn default_geometry() {
        let cfg = RankerConfig::new(Arch::MatchPyramid);
        // 150×400 → 148×398 → 74×199 → 72×197 → 36×98 → 34×96 → 17×48
        assert_eq!(feature_map_size(&cfg), Some((17, 48)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = Ranker::init(cfg, 8, &mut rng).unwrap();
        assert_eq!(r.params.get("dense.w").unwrap().shape(), &[640, 1]);
        assert_eq!(r.params.get("conv2.filters").unwrap().shape(), &[16, 16, 3, 3]);
        assert_eq!(r.params.get("conv1.filters").unwrap().shape(), &[16, 1, 3, 3]);
    }

    #[test]
    fn too_small_canvas_is_rejected() {
        let cfg = RankerConfig {
            canvas: (10, 10),
            ..RankerConfig::new(Arch::MatchPyramid)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_matrix_scores_dense_bias() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = init(&cfg, &mut rng);
        p.get_mut("dense.b").unwrap().data_mut()[0] = 0.37;
        let m = Array::zeros(&[5, 7]);
        assert_eq!(matchpyramid_score(&cfg, &p, &m).unwrap(), 0.37);
    }

    /// Naive single-channel-input reference with all-ones 3×3 filters, zero
    /// biases and relu/pool by explicit loops.
    fn naive_ones(canvas: &[Vec<f64>], cfg: &RankerConfig, dense_w: &[f64]) -> f64 {
        let mut maps: Vec<Vec<Vec<f64>>> = vec![canvas.to_vec()];
        for _ in 0..cfg.conv_layers {
            let (h, w) = (maps[0].len(), maps[0][0].len());
            let mut conv = vec![vec![0.0; w - 2]; h - 2];
            for (i, row) in conv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    for m in &maps {
                        for a in 0..3 {
                            for b in 0..3 {
                                *v += m[i + a][j + b];
                            }
                        }
                    }
                    *v = v.max(0.0);
                }
            }
            let (ph, pw) = ((h - 2) / 2, (w - 2) / 2);
            let mut pooled = vec![vec![f64::NEG_INFINITY; pw]; ph];
            for i in 0..ph {
                for j in 0..pw {
                    for a in 0..2 {
                        for b in 0..2 {
                            pooled[i][j] = pooled[i][j].max(conv[2 * i + a][2 * j + b]);
                        }
                    }
                }
            }
            // all channels identical with all-ones filters
            maps = vec![pooled; cfg.channels];
        }
        let (h, w) = (maps[0].len(), maps[0][0].len());
        let (gh, gw) = cfg.grid;
        let mut s = 0.0;
        for (ch, m) in maps.iter().enumerate() {
            for gi in 0..gh {
                for gj in 0..gw {
                    let (r0, r1) = (gi * h / gh, ((gi + 1) * h).div_ceil(gh));
                    let (c0, c1) = (gj * w / gw, ((gj + 1) * w).div_ceil(gw));
                    let mut best = f64::NEG_INFINITY;
                    for row in &m[r0..r1] {
                        for &v in &row[c0..c1] {
                            best = best.max(v);
                        }
                    }
                    s += best * dense_w[(ch * gh + gi) * gw + gj];
                }
            }
        }
        s
    }

    #[test]
    fn ones_filters_match_naive_reference() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init(&cfg, &mut rng);
        for (name, a) in p.iter_mut() {
            if name.ends_with(".filters") {
                a.data_mut().fill(1.0);
            }
        }
        p.get_mut("dense.b").unwrap().data_mut()[0] = 0.0;
        let m = Array::full(&[6, 9], 0.25);
        let canvas: Vec<Vec<f64>> = {
            let c = m.place_on_canvas(24, 32);
            (0..24).map(|i| c.row(i).to_vec()).collect()
        };
        let want = naive_ones(&canvas, &cfg, p.get("dense.w").unwrap().data());
        let got = matchpyramid_score(&cfg, &p, &m).unwrap();
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn not_invariant_to_doc_token_order() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init(&cfg, &mut rng);
        for l in 1..=3 {
            p.insert(format!("conv{l}.bias"), Array::uniform(&[16], -0.1, 0.1, &mut rng));
        }
        // reverse the document token order
        let m = Array::uniform(&[6, 20], -1.0, 1.0, &mut rng);
        let rev: Vec<f64> = (0..6).flat_map(|i| m.row(i).iter().rev().copied().collect::<Vec<_>>()).collect();
        let swapped = Array::new(vec![6, 20], rev).unwrap();
        let a = matchpyramid_score(&cfg, &p, &m).unwrap();
        let b = matchpyramid_score(&cfg, &p, &swapped).unwrap();
        assert!((a - b).abs() > 1e-9, "{a} vs {b}");
    }
}

//! Neural re-rankers over the cross-lingual similarity matrix.
//!
//! All three architectures read only embeddings, so the same code scores an
//! untranslated English query or a translated Arabic one against Arabic
//! documents.

mod checkpoint;
mod convknrm;
mod knrm;
mod matchpyramid;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Array, BoundParams, ParamSet, Tape, Var, LOG_FLOOR};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use convknrm::convknrm_score;
pub use knrm::knrm_score;
pub use matchpyramid::matchpyramid_score;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelBank {
    kernels: Vec<Kernel>,
}

/// Soft-match kernel means, −0.9 to 0.9 in steps of 0.2.
const SOFT_MEANS: [f64; 10] = [-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9];

impl Default for KernelBank {
    /// One exact-match kernel (μ=1, σ=1e-3) followed by ten soft-match
    /// kernels with σ=0.1.
    fn default() -> Self {
        let mut kernels = vec![Kernel { mu: 1.0, sigma: 1e-3 }];
        kernels.extend(SOFT_MEANS.iter().map(|&mu| Kernel { mu, sigma: 0.1 }));
        KernelBank { kernels }
    }
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() || kernels.iter().any(|k| !(k.sigma > 0.0) || !k.mu.is_finite()) {
            return Err(Error::Config("kernel bank needs at least one kernel, each with sigma > 0".into()));
        }
        Ok(KernelBank { kernels })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// n×m matrix of cosine similarities between query rows and document rows.
pub fn sim_matrix(q: &Array, d: &Array) -> Result<Array> {
    if q.ndim() != 2 || d.ndim() != 2 || q.shape()[1] != d.shape()[1] {
        return Err(Error::shape("sim_matrix", format!("{:?} vs {:?}", q.shape(), d.shape())));
    }
    let (n, m) = (q.shape()[0], d.shape()[0]);
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput(format!("similarity matrix of {n} query and {m} document tokens")));
    }
    let norms = |a: &Array| -> Vec<f64> {
        (0..a.rows()).map(|i| a.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
    };
    let (qn, dn) = (norms(q), norms(d));
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            if qn[i] == 0.0 || dn[j] == 0.0 {
                out.push(0.0);
                continue;
            }
            let dot: f64 = q.row(i).iter().zip(d.row(j)).map(|(a, b)| a * b).sum();
            out.push((dot / (qn[i] * dn[j])).clamp(-1.0, 1.0));
        }
    }
    Array::new(vec![n, m], out)
}

/// φ_k = Σ_i log(max(1e-10, Σ_j exp(−(M_ij − μ_k)² / (2σ_k²)))).
pub fn kernel_pool(m: &Array, bank: &KernelBank) -> Vec<f64> {
    let (n, cols) = (m.shape()[0], m.shape()[1]);
    bank.kernels
        .iter()
        .map(|k| {
            let denom = 2.0 * k.sigma * k.sigma;
            (0..n)
                .map(|i| {
                    let mass: f64 = m.data()[i * cols..(i + 1) * cols]
                        .iter()
                        .map(|&x| (-(x - k.mu) * (x - k.mu) / denom).exp())
                        .sum();
                    mass.max(LOG_FLOOR).ln()
                })
                .sum()
        })
        .collect()
}

/// Differentiable kernel pooling of an [n, m] similarity node into a
/// [|bank|] feature vector.
pub(crate) fn kernel_pool_graph(tape: &mut Tape, m: Var, bank: &KernelBank) -> Result<Var> {
    let mut feats = Vec::with_capacity(bank.len());
    for k in bank.kernels() {
        let g = tape.gaussian(m, k.mu, k.sigma)?;
        let mass = tape.sum(g, Some(1))?;
        let logs = tape.log(mass)?;
        feats.push(tape.sum(logs, None)?);
    }
    tape.concat(&feats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Knrm,
    ConvKnrm,
    MatchPyramid,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Knrm => "knrm",
            Arch::ConvKnrm => "convknrm",
            Arch::MatchPyramid => "matchpyramid",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knrm" => Ok(Arch::Knrm),
            "convknrm" | "conv-knrm" | "conv_knrm" => Ok(Arch::ConvKnrm),
            "matchpyramid" | "match-pyramid" | "match_pyramid" => Ok(Arch::MatchPyramid),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters. Defaults: 11 kernels, 128 ConvKNRM filters
/// over uni- and bigrams, and a 150×400 MatchPyramid canvas with three
/// 3×3/16-channel conv layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub arch: Arch,
    pub kernels: KernelBank,
    /// Multiplier on kernel-pooled features before the linear layer.
    pub feature_scale: f64,
    pub ngram_orders: Vec<usize>,
    pub filters: usize,
    pub canvas: (usize, usize),
    pub conv_layers: usize,
    pub channels: usize,
    pub conv_size: usize,
    pub pool: (usize, usize),
    pub grid: (usize, usize),
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            arch: Arch::Knrm,
            kernels: KernelBank::default(),
            feature_scale: 0.01,
            ngram_orders: vec![1, 2],
            filters: 128,
            canvas: (150, 400),
            conv_layers: 3,
            channels: 16,
            conv_size: 3,
            pool: (2, 2),
            grid: (4, 10),
        }
    }
}

impl RankerConfig {
    pub fn new(arch: Arch) -> Self {
        RankerConfig {
            arch,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.arch {
            Arch::Knrm => {}
            Arch::ConvKnrm => {
                if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) || self.filters == 0 {
                    return Err(Error::Config("convknrm needs positive n-gram orders and filters".into()));
                }
            }
            Arch::MatchPyramid => matchpyramid::validate(self)?,
        }
        if !self.feature_scale.is_finite() || self.feature_scale <= 0.0 {
            return Err(Error::Config("feature_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Pair representation that stays fixed while parameters change.
#[derive(Debug, Clone, PartialEq)]
pub enum Prepared {
    /// Raw kernel-pooled features of the similarity matrix.
    Features(Array),
    /// Truncated query and document embeddings.
    Embeddings { query: Array, doc: Array },
    /// Similarity matrix placed on the fixed zero canvas, shape [1, H, W].
    Canvas(Array),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    pub config: RankerConfig,
    pub dim: usize,
    pub params: ParamSet,
}

impl Ranker {
    /// Uniform(−0.1, 0.1) initialization with zero convolution biases.
    pub fn init<R: Rng + ?Sized>(config: RankerConfig, dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let params = match config.arch {
            Arch::Knrm => knrm::init(&config, rng),
            Arch::ConvKnrm => convknrm::init(&config, dim, rng),
            Arch::MatchPyramid => matchpyramid::init(&config, rng),
        };
        Ok(Ranker { config, dim, params })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn prepare(&self, query: &Array, doc: &Array) -> Result<Prepared> {
        match self.config.arch {
            Arch::Knrm => {
                let m = sim_matrix(query, doc)?;
                Ok(Prepared::Features(Array::vector(kernel_pool(&m, &self.config.kernels))))
            }
            Arch::ConvKnrm => {
                if query.rows() == 0 || doc.rows() == 0 || query.ndim() != 2 || doc.ndim() != 2 {
                    return Err(Error::EmptyInput(format!(
                        "convknrm input of {:?} query and {:?} document",
                        query.shape(),
                        doc.shape()
                    )));
                }
                if query.shape()[1] != self.dim || doc.shape()[1] != self.dim {
                    return Err(Error::shape(
                        "convknrm",
                        format!("embeddings of width {} and {}, model expects {}", query.shape()[1], doc.shape()[1], self.dim),
                    ));
                }
                Ok(Prepared::Embeddings {
                    query: query.clone(),
                    doc: doc.clone(),
                })
            }
            Arch::MatchPyramid => {
                let m = sim_matrix(query, doc)?;
                let (h, w) = self.config.canvas;
                Ok(Prepared::Canvas(m.place_on_canvas(h, w).reshape(&[1, h, w])?))
            }
        }
    }

    /// Records the score graph for one prepared pair; returns a [1] node.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, input: &Prepared) -> Result<Var> {
        match (self.config.arch, input) {
            (Arch::Knrm, Prepared::Features(phi)) => knrm::forward(&self.config, tape, params, phi),
            (Arch::ConvKnrm, Prepared::Embeddings { query, doc }) => {
                convknrm::forward(&self.config, tape, params, query, doc)
            }
            (Arch::MatchPyramid, Prepared::Canvas(c)) => matchpyramid::forward(&self.config, tape, params, c),
            (arch, _) => Err(Error::Contract(format!("{arch}: prepared input of another architecture"))),
        }
    }

    pub fn score_prepared(&self, input: &Prepared) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let s = self.forward(&mut tape, &bound, input)?;
        Ok(tape.value(s).item())
    }

    /// Score of one (query, document) embedding pair.
    pub fn score(&self, query: &Array, doc: &Array) -> Result<f64> {
        self.score_prepared(&self.prepare(query, doc)?)
    }

    /// Score with the empty-input sentinel: pairs without any embedded
    /// token on either side get `-inf`.
    pub fn score_or_sentinel(&self, query: &Array, doc: &Array) -> Result<f64> {
        match self.score(query, doc) {
            Err(Error::EmptyInput(_)) => Ok(f64::NEG_INFINITY),
            other => other,
        }
    }
}

fn init_uniform<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, shape: &[usize], rng: &mut R) {
    params.insert(name, Array::uniform(shape, -0.1, 0.1, rng));
}

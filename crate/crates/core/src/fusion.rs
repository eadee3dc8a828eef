//! Rank fusion of per-component lists.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranked::{Component, Entry, RankedList, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Rrf,
    CombSum,
    CombMnz,
    Isr,
}

impl FusionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::Rrf => "rrf",
            FusionMethod::CombSum => "combsum",
            FusionMethod::CombMnz => "combmnz",
            FusionMethod::Isr => "isr",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rrf" => Ok(FusionMethod::Rrf),
            "combsum" => Ok(FusionMethod::CombSum),
            "combmnz" => Ok(FusionMethod::CombMnz),
            "isr" => Ok(FusionMethod::Isr),
            other => Err(Error::Config(format!("unknown fusion method `{other}`"))),
        }
    }
}

/// A fusion method with its RRF constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fusion {
    pub method: FusionMethod,
    pub rrf_k: f64,
}

pub const DEFAULT_RRF_K: f64 = 10.0;

impl Fusion {
    pub fn new(method: FusionMethod) -> Self {
        Fusion {
            method,
            rrf_k: DEFAULT_RRF_K,
        }
    }

    pub fn fuse(&self, lists: &[RankedList]) -> Result<RankedList> {
        match self.method {
            FusionMethod::Rrf => rrf(lists, self.rrf_k),
            FusionMethod::CombSum => combsum(lists),
            FusionMethod::CombMnz => combmnz(lists),
            FusionMethod::Isr => isr(lists),
        }
    }
}

fn common_topic(lists: &[RankedList]) -> Result<String> {
    let first = lists
        .first()
        .ok_or_else(|| Error::EmptyInput("fusion needs at least one list".into()))?;
    if let Some(other) = lists.iter().find(|l| l.topic != first.topic) {
        return Err(Error::Contract(format!(
            "cannot fuse lists of topics {} and {}",
            first.topic, other.topic
        )));
    }
    Ok(first.topic.clone())
}

/// Per-document sums of `contrib` in list order, with occurrence counts.
fn accumulate(lists: &[RankedList], mut contrib: impl FnMut(usize, &Entry) -> f64) -> BTreeMap<String, (f64, usize)> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (li, l) in lists.iter().enumerate() {
        for e in l.entries() {
            let slot = acc.entry(e.doc.clone()).or_insert((0.0, 0));
            slot.0 += contrib(li, e);
            slot.1 += 1;
        }
    }
    acc
}

fn finish(topic: String, scored: impl IntoIterator<Item = (String, f64)>) -> RankedList {
    RankedList::from_scores(topic, Component::Fused, Stage::Final, scored.into_iter().collect())
}

/// S_d = Σ 1 / (r_d + k) over the lists containing d.
pub fn rrf(lists: &[RankedList], k: f64) -> Result<RankedList> {
    let topic = common_topic(lists)?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("rrf k must be positive, got {k}")));
    }
    let acc = accumulate(lists, |_, e| 1.0 / (e.rank as f64 + k));
    Ok(finish(topic, acc.into_iter().map(|(d, (s, _))| (d, s))))
}

/// S_d = n_d · Σ 1 / r_d².
pub fn isr(lists: &[RankedList]) -> Result<RankedList> {
    let topic = common_topic(lists)?;
    let acc = accumulate(lists, |_, e| 1.0 / (e.rank as f64 * e.rank as f64));
    Ok(finish(topic, acc.into_iter().map(|(d, (s, n))| (d, n as f64 * s))))
}

/// Min-max normalized scores of one list. A constant list maps to 0.5;
/// `-inf` entries are left out of the range and map to 0.
pub fn minmax(list: &RankedList) -> Vec<f64> {
    let finite = list.entries().iter().map(|e| e.score).filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    list.entries()
        .iter()
        .map(|e| {
            if !e.score.is_finite() {
                0.0
            } else if hi == lo {
                0.5
            } else {
                (e.score - lo) / (hi - lo)
            }
        })
        .collect()
}

fn combsum_acc(lists: &[RankedList]) -> Result<(String, BTreeMap<String, (f64, usize)>)> {
    let topic = common_topic(lists)?;
    let norms: Vec<Vec<f64>> = lists.iter().map(minmax).collect();
    let acc = accumulate(lists, |li, e| norms[li][e.rank - 1]);
    Ok((topic, acc))
}

/// S_d = Σ of min-max normalized scores over the lists containing d.
pub fn combsum(lists: &[RankedList]) -> Result<RankedList> {
    let (topic, acc) = combsum_acc(lists)?;
    Ok(finish(topic, acc.into_iter().map(|(d, (s, _))| (d, s))))
}

/// CombSUM score times the number of lists containing d.
pub fn combmnz(lists: &[RankedList]) -> Result<RankedList> {
    let (topic, acc) = combsum_acc(lists)?;
    Ok(finish(topic, acc.into_iter().map(|(d, (s, n))| (d, s * n as f64))))
}

/// The three fused lists of the two-step topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStep {
    pub bm25_fused: RankedList,
    pub neural_fused: RankedList,
    pub final_run: RankedList,
}

/// Fuses each family separately, then fuses the two results with the same
/// method. An empty family passes the other family's fused list through.
pub fn two_step_fuse(bm25: &[RankedList], neural: &[RankedList], fusion: &Fusion) -> Result<TwoStep> {
    let step = |lists: &[RankedList], stage| -> Result<Option<RankedList>> {
        let present: Vec<RankedList> = lists.iter().filter(|l| !l.is_empty()).cloned().collect();
        if present.is_empty() {
            return Ok(None);
        }
        Ok(Some(fusion.fuse(&present)?.with_stage(stage)))
    };
    let b = step(bm25, Stage::Bm25Fused)?;
    let n = step(neural, Stage::NeuralFused)?;
    let topic = bm25
        .iter()
        .chain(neural)
        .map(|l| l.topic.clone())
        .next()
        .ok_or_else(|| Error::EmptyInput("two-step fusion with no input lists".into()))?;
    let final_run = match (&b, &n) {
        (Some(b), Some(n)) => fusion.fuse(&[b.clone(), n.clone()])?,
        (Some(only), None) | (None, Some(only)) => {
            warn!("topic {topic}: one fusion family is empty; passing the other through");
            only.clone()
        }
        (None, None) => RankedList::empty(&topic, Component::Fused, Stage::Final),
    };
    Ok(TwoStep {
        bm25_fused: b.unwrap_or_else(|| RankedList::empty(&topic, Component::Fused, Stage::Bm25Fused)),
        neural_fused: n.unwrap_or_else(|| RankedList::empty(&topic, Component::Fused, Stage::NeuralFused)),
        final_run: final_run.with_stage(Stage::Final),
    })
}

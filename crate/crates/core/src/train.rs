//! ListNet training over pre-selected candidate pools.
//!
//! Every candidate list holds one known-relevant document and `L − 1`
//! sampled non-example documents. One model is trained across all topics
//! with one Adam step per list; checkpoints are kept every few epochs and the
//! one with the lowest held-out list loss is selected.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numeric::{adam_step, AdamState, Array, Objective, ParamSet, Tape, Var};
use crate::ranked::{Component, RankedList};
use crate::rankers::{Arch, Checkpoint, Prepared, Ranker, RankerConfig};
use crate::text::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub list_size: usize,
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub lr: f64,
    pub lists_per_example_per_epoch: usize,
    pub seed: u64,
    pub q_max: usize,
    pub d_max: usize,
    /// Share of one epoch's worth of lists held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            list_size: 50,
            epochs: 21,
            checkpoint_every: 3,
            lr: 1e-4,
            lists_per_example_per_epoch: 8,
            seed: 0,
            q_max: 150,
            d_max: 400,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.list_size < 2 {
            return bad("list_size must be at least 2");
        }
        if self.epochs == 0 || self.checkpoint_every == 0 || self.checkpoint_every > self.epochs {
            return bad("need epochs ≥ checkpoint_every ≥ 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.lists_per_example_per_epoch == 0 || self.q_max == 0 || self.d_max == 0 {
            return bad("list count and length caps must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One training list: the positive comes first, followed by sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub topic: String,
    pub component: Component,
    /// Index of the training group whose query this list is scored against.
    pub query: usize,
    pub docs: Vec<String>,
    pub labels: Vec<f64>,
}

/// One neural query with its known positives and BM25 candidate pool.
#[derive(Debug, Clone)]
pub struct TrainGroup {
    pub topic: String,
    pub component: Component,
    pub query: TokenSequence,
    pub positives: Vec<String>,
    pub pool: RankedList,
}

/// p = softmax(labels), q = softmax(scores), loss = −Σ p log max(q, 1e-10).
pub fn listnet_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let p = softmax(labels);
    let q = softmax(scores);
    Ok(-p
        .iter()
        .zip(&q)
        .map(|(p, q)| p * q.max(crate::numeric::LOG_FLOOR).ln())
        .sum::<f64>())
}

/// ListNet loss of an [L] score node; returns a [1] node.
pub fn listnet_graph(tape: &mut Tape, scores: Var, labels: &[f64]) -> Result<Var> {
    check_lengths(tape.value(scores).len(), labels.len())?;
    let q = tape.softmax(scores)?;
    let logq = tape.log(q)?;
    let p = Array::vector(softmax(labels).into_iter().map(|x| -x).collect());
    let weighted = tape.mul_const(logq, p)?;
    tape.sum(weighted, None)
}

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores != labels || scores < 2 {
        return Err(Error::shape("listnet", format!("{scores} scores vs {labels} labels (need ≥ 2)")));
    }
    Ok(())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per positive, `lists_per_example_per_epoch` lists of that positive plus
/// `L − 1` pool docs that are not positives, sampled without replacement.
/// Pools that are too small yield no lists.
pub fn sample_lists(pool: &RankedList, positives: &[String], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<CandidateList> {
    let excluded: BTreeSet<&str> = positives.iter().map(String::as_str).collect();
    let negatives: Vec<&str> = pool.docs().filter(|d| !excluded.contains(d)).collect();
    let need = cfg.list_size - 1;
    if negatives.len() < need {
        warn!(
            "topic {} {}: {} non-example candidates, need {need}; skipped",
            pool.topic,
            pool.component,
            negatives.len()
        );
        return Vec::new();
    }
    let mut labels = vec![0.0; cfg.list_size];
    labels[0] = 1.0;
    let mut out = Vec::with_capacity(positives.len() * cfg.lists_per_example_per_epoch);
    for pos in positives {
        for _ in 0..cfg.lists_per_example_per_epoch {
            let mut docs = Vec::with_capacity(cfg.list_size);
            docs.push(pos.clone());
            docs.extend(index::sample(rng, negatives.len(), need).into_iter().map(|i| negatives[i].to_owned()));
            out.push(CandidateList {
                topic: pool.topic.clone(),
                component: pool.component,
                query: 0,
                docs,
                labels: labels.clone(),
            });
        }
    }
    out
}

/// Frozen embeddings for every query and candidate, plus cached KNRM
/// features.
#[derive(Debug, Clone)]
pub struct TrainData {
    groups: Vec<TrainGroup>,
    queries: Vec<Array>,
    docs: BTreeMap<String, Array>,
    features: BTreeMap<(usize, String), Prepared>,
    exec: Exec,
}

impl TrainData {
    /// Embeds queries and documents. Groups whose query has no embedded
    /// token are dropped; documents without embedded tokens leave the pools.
    pub fn new(
        groups: Vec<TrainGroup>,
        doc_tokens: &BTreeMap<String, TokenSequence>,
        emb: &EmbeddingTable,
        cfg: &TrainConfig,
        exec: Exec,
    ) -> Result<Self> {
        let mut wanted: BTreeSet<&str> = BTreeSet::new();
        for g in &groups {
            wanted.extend(g.positives.iter().map(String::as_str));
            wanted.extend(g.pool.docs());
        }
        let ids: Vec<&str> = wanted.into_iter().collect();
        let embedded = exec.map(&ids, |id| doc_tokens.get(*id).map(|t| emb.embed(t, cfg.d_max)));
        let mut docs = BTreeMap::new();
        for (id, e) in ids.iter().zip(embedded) {
            match e {
                None => return Err(Error::UnknownDoc((*id).to_owned())),
                Some(a) if a.rows() > 0 => {
                    docs.insert((*id).to_owned(), a);
                }
                Some(_) => {}
            }
        }

        let mut kept = Vec::new();
        let mut queries = Vec::new();
        for mut g in groups {
            let q = emb.embed(&g.query, cfg.q_max);
            if q.rows() == 0 {
                warn!("topic {} {}: query has no embedded token; not trained on", g.topic, g.component);
                continue;
            }
            g.pool.retain(|d| docs.contains_key(d));
            g.positives.retain(|d| docs.contains_key(d));
            if g.positives.is_empty() {
                continue;
            }
            kept.push(g);
            queries.push(q);
        }
        Ok(TrainData {
            groups: kept,
            queries,
            docs,
            features: BTreeMap::new(),
            exec,
        })
    }

    pub fn groups(&self) -> &[TrainGroup] {
        &self.groups
    }

    /// Precomputes the pooled features of every (query, candidate) pair for
    /// KNRM, whose input does not depend on parameters.
    pub fn cache_features(&mut self, ranker: &Ranker) -> Result<()> {
        if ranker.arch() != Arch::Knrm {
            return Ok(());
        }
        let mut pairs = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            let docs: BTreeSet<&str> = g.pool.docs().chain(g.positives.iter().map(String::as_str)).collect();
            pairs.extend(docs.into_iter().map(|d| (gi, d.to_owned())));
        }
        let prepared = self
            .exec
            .try_map(&pairs, |(gi, d)| ranker.prepare(&self.queries[*gi], &self.docs[d]))?;
        self.features = pairs.into_iter().zip(prepared).collect();
        Ok(())
    }

    fn prepare(&self, ranker: &Ranker, query: usize, doc: &str) -> Result<Prepared> {
        if let Some(p) = self.features.get(&(query, doc.to_owned())) {
            return Ok(p.clone());
        }
        let d = self.docs.get(doc).ok_or_else(|| Error::UnknownDoc(doc.to_owned()))?;
        let q = self
            .queries
            .get(query)
            .ok_or_else(|| Error::Contract(format!("no training query #{query}")))?;
        ranker.prepare(q, d)
    }

    /// All lists of one epoch in group order, each tagged with its group.
    pub fn sample_epoch(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<CandidateList> {
        let mut out = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            for mut l in sample_lists(&g.pool, &g.positives, cfg, rng) {
                l.query = gi;
                out.push(l);
            }
        }
        out
    }

    /// ListNet loss of one list and, optionally, its parameter gradient.
    ///
    /// Each document is scored on its own tape; the loss gradient with
    /// respect to the scores then weights the per-document backward passes.
    pub fn list_loss(
        &self,
        ranker: &Ranker,
        params: &ParamSet,
        list: &CandidateList,
        with_grad: bool,
    ) -> Result<(f64, Option<ParamSet>)> {
        let per_doc = self.exec.try_map(&list.docs, |doc| -> Result<(f64, Option<ParamSet>)> {
            let input = self.prepare(ranker, list.query, doc)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let s = ranker.forward(&mut tape, &bound, &input)?;
            let value = tape.value(s).item();
            if !with_grad {
                return Ok((value, None));
            }
            let mut g = tape.backward(s)?;
            Ok((value, Some(bound.collect(&mut g, params))))
        })?;

        let scores: Vec<f64> = per_doc.iter().map(|(s, _)| *s).collect();
        let mut tape = Tape::new();
        let sv = tape.param(Array::vector(scores));
        let loss = listnet_graph(&mut tape, sv, &list.labels)?;
        let value = tape.value(loss).item();
        if !with_grad {
            return Ok((value, None));
        }
        let mut dscores = tape.backward(loss)?;
        let dscores = dscores.take(sv).unwrap_or_else(|| Array::zeros(&[list.docs.len()]));

        let mut total = params.zeros_like();
        for ((_, g), &w) in per_doc.into_iter().zip(dscores.data()) {
            let mut g = g.expect("gradient requested");
            g.scale(w);
            total.add_assign(&g);
        }
        Ok((value, Some(total)))
    }

    /// Mean ListNet loss of `lists` under `ranker`'s parameters.
    pub fn mean_loss(&self, ranker: &Ranker, lists: &[CandidateList]) -> Result<f64> {
        if lists.is_empty() {
            return Err(Error::EmptyInput("no lists to evaluate".into()));
        }
        let mut sum = 0.0;
        for l in lists {
            sum += self.list_loss(ranker, &ranker.params, l, false)?.0;
        }
        Ok(sum / lists.len() as f64)
    }
}

/// Mean ListNet loss over a fixed set of lists as a function of the ranker
/// parameters.
pub struct ListNetObjective<'a> {
    pub ranker: &'a Ranker,
    pub data: &'a TrainData,
    pub lists: &'a [CandidateList],
}

impl Objective for ListNetObjective<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        let mut sum = 0.0;
        for l in self.lists {
            sum += self.data.list_loss(self.ranker, params, l, false)?.0;
        }
        Ok(sum / self.lists.len() as f64)
    }

    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)> {
        let mut sum = 0.0;
        let mut grad = params.zeros_like();
        for l in self.lists {
            let (v, g) = self.data.list_loss(self.ranker, params, l, true)?;
            sum += v;
            grad.add_assign(&g.expect("gradient requested"));
        }
        let n = self.lists.len() as f64;
        grad.scale(1.0 / n);
        Ok((sum / n, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub validation: Vec<CandidateList>,
    pub log: Vec<EpochLog>,
}

const STREAM_INIT: u64 = 0;
const STREAM_VALIDATION: u64 = 1;
const STREAM_EPOCH0: u64 = 2;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Trains one ranker on all groups and returns the periodic checkpoints.
pub fn train(config: RankerConfig, data: &mut TrainData, dim: usize, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut ranker = Ranker::init(config, dim, &mut stream(cfg.seed, STREAM_INIT))?;
    train_from(&mut ranker, data, cfg)
}

/// Same as [`train`] but starting from given parameters.
pub fn train_from(ranker: &mut Ranker, data: &mut TrainData, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    data.cache_features(ranker)?;

    let mut held_out = data.sample_epoch(cfg, &mut stream(cfg.seed, STREAM_VALIDATION));
    if held_out.is_empty() {
        return Err(Error::EmptyInput(
            "no candidate lists could be formed; pools are smaller than the list size".into(),
        ));
    }
    held_out.shuffle(&mut stream(cfg.seed, STREAM_VALIDATION + 1000));
    let n_val = ((held_out.len() as f64 * cfg.val_fraction).ceil() as usize).max(1);
    held_out.truncate(n_val);

    let mut adam = AdamState::new(&ranker.params);
    let mut checkpoints = Vec::new();
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = stream(cfg.seed, STREAM_EPOCH0 + epoch as u64);
        let mut lists = data.sample_epoch(cfg, &mut rng);
        lists.shuffle(&mut rng);

        let mut sum = 0.0;
        for (i, list) in lists.iter().enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged(format!(
                    "epoch {epoch}, list {i} (topic {}, {}): non-finite value in {op}",
                    list.topic, list.component
                )),
                other => other,
            };
            let (loss, grad) = data.list_loss(ranker, &ranker.params, list, true).map_err(diverged)?;
            let grad = grad.expect("gradient requested");
            adam_step(&mut ranker.params, &grad, &mut adam, cfg.lr)?;
            if ranker.params.iter().any(|(_, a)| !a.is_finite()) {
                return Err(diverged(Error::NonFinite { op: "adam" }));
            }
            sum += loss;
        }
        let mean_loss = sum / lists.len() as f64;
        let val_loss = data.mean_loss(ranker, &held_out)?;
        log.push(EpochLog {
            epoch,
            mean_loss,
            val_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        log::info!("epoch {epoch}: train {mean_loss:.6} val {val_loss:.6}");
        if epoch % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                epoch,
                train_loss: mean_loss,
                val_loss: Some(val_loss),
                ranker: ranker.clone(),
            });
        }
    }
    Ok(TrainOutput {
        checkpoints,
        validation: held_out,
        log,
    })
}

/// The checkpoint with the lowest mean loss on `validation`; ties go to the
/// earliest.
pub fn select_checkpoint<'a>(
    checkpoints: &'a [Checkpoint],
    validation: &[CandidateList],
    data: &TrainData,
) -> Result<&'a Checkpoint> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for ck in checkpoints {
        let loss = if validation.is_empty() {
            ck.val_loss.unwrap_or(ck.train_loss)
        } else {
            data.mean_loss(&ck.ranker, validation)?
        };
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((ck, loss));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::EmptyInput("no checkpoints to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;
    use crate::ranked::Stage;
    use crate::text::Lang;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_scores_give_ln_l() {
        let mut labels = vec![0.0; 50];
        labels[7] = 1.0;
        let loss = listnet_loss(&[0.3; 50], &labels).unwrap();
        assert!((loss - 50f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn large_margin_limit() {
        let mut labels = vec![0.0; 50];
        labels[0] = 1.0;
        let e = std::f64::consts::E;
        // p = (e, 1, …, 1)/(e + 49); q → one-hot as C grows, clamped at 1e-10
        let p0 = e / (e + 49.0);
        let want = -(p0 * 1f64.ln() + (1.0 - p0) * 1e-10f64.ln());
        let c = 1e3;
        let scores: Vec<f64> = labels.iter().map(|l| l * c).collect();
        assert!((listnet_loss(&scores, &labels).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn rejects_short_or_mismatched_lists() {
        assert!(listnet_loss(&[1.0], &[1.0]).is_err());
        assert!(listnet_loss(&[1.0, 2.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn graph_matches_plain_and_closed_form_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let l = rng.random_range(2..60);
            let scores: Vec<f64> = (0..l).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels = vec![0.0; l];
            labels[rng.random_range(0..l)] = 1.0;
            let mut tape = Tape::new();
            let s = tape.param(Array::vector(scores.clone()));
            let loss = listnet_graph(&mut tape, s, &labels).unwrap();
            assert!((tape.value(loss).item() - listnet_loss(&scores, &labels).unwrap()).abs() < 1e-12);
            let g = tape.backward(loss).unwrap();
            let (q, p) = (softmax(&scores), softmax(&labels));
            for (i, gi) in g.get(s).unwrap().data().iter().enumerate() {
                assert!((gi - (q[i] - p[i])).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn loss_is_a_proper_cross_entropy(
            scores in prop::collection::vec(-20.0f64..20.0, 2..40),
            pos in any::<prop::sample::Index>(),
            shift in 0usize..40,
        ) {
            let l = scores.len();
            let mut labels = vec![0.0; l];
            labels[pos.index(l)] = 1.0;
            let (p, q) = (softmax(&labels), softmax(&scores));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let loss = listnet_loss(&scores, &labels).unwrap();
            prop_assert!(loss >= 0.0);
            // joint rotation leaves the loss unchanged
            let k = shift % l;
            let rot = |v: &[f64]| -> Vec<f64> { v[k..].iter().chain(&v[..k]).copied().collect() };
            let again = listnet_loss(&rot(&scores), &rot(&labels)).unwrap();
            prop_assert!((loss - again).abs() < 1e-12);
        }
    }

    fn pool(topic: &str, n: usize) -> RankedList {
        RankedList::from_scores(
            topic,
            Component::Title,
            Stage::Bm25,
            (0..n).map(|i| (format!("d{i:04}"), 1.0 / (i + 1) as f64)).collect(),
        )
    }

    #[test]
    fn lists_have_one_positive_and_distinct_negatives() {
        let cfg = TrainConfig::default();
        let mut p = pool("t1", 1000);
        p.retain(|d| d != "d0003");
        let positives = vec!["d0003".to_owned(), "d0500".to_owned()];
        let lists = sample_lists(&p, &positives, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(lists.len(), 16);
        for (i, l) in lists.iter().enumerate() {
            assert_eq!(l.docs.len(), 50);
            assert_eq!(l.labels.iter().sum::<f64>(), 1.0);
            assert_eq!(l.labels[0], 1.0);
            assert_eq!(l.docs[0], positives[i / 8]);
            let set: BTreeSet<_> = l.docs.iter().collect();
            assert_eq!(set.len(), 50);
            assert!(l.docs[1..].iter().all(|d| !positives.contains(d)));
        }
        let again = sample_lists(&p, &positives, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(lists, again);
    }

    #[test]
    fn small_pool_is_skipped() {
        let cfg = TrainConfig::default();
        let lists = sample_lists(&pool("t", 30), &["d0001".to_owned()], &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(lists.is_empty());
    }

    /// Dimension 4 world: topic words point along e0, noise along e1..e3.
    fn toy_data(n_docs: usize, list_size: usize) -> (BTreeMap<String, TokenSequence>, EmbeddingTable, Vec<TrainGroup>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rows = vec![("topic".to_owned(), vec![1.0, 0.05, 0.0, 0.0])];
        for w in 0..20 {
            let v: Vec<f64> = (0..4).map(|k| if k == 0 { 0.1 } else { rng.random_range(-1.0..1.0) }).collect();
            rows.push((format!("noise{w}"), v));
        }
        let emb = EmbeddingTable::from_rows(4, rows).unwrap();
        let mut docs = BTreeMap::new();
        for i in 0..n_docs {
            let mut toks: Vec<String> = (0..6).map(|_| format!("noise{}", rng.random_range(0..20))).collect();
            if i < 3 {
                toks.push("topic".into());
                toks.push("topic".into());
            }
            docs.insert(format!("d{i:03}"), TokenSequence::from_tokens(toks, Lang::Ar));
        }
        let pool = RankedList::from_scores(
            "t1",
            Component::Title,
            Stage::Bm25,
            docs.keys().map(|d| (d.clone(), 1.0)).collect(),
        );
        let _ = list_size;
        let groups = vec![TrainGroup {
            topic: "t1".into(),
            component: Component::Title,
            query: TokenSequence::from_tokens(["topic"], Lang::En),
            positives: vec!["d000".into(), "d001".into(), "d002".into()],
            pool,
        }];
        (docs, emb, groups)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            list_size: 8,
            epochs: 6,
            checkpoint_every: 3,
            lr: 1e-2,
            lists_per_example_per_epoch: 4,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn seven_checkpoints_by_default_schedule() {
        let (docs, emb, groups) = toy_data(40, 8);
        let cfg = TrainConfig {
            list_size: 8,
            lists_per_example_per_epoch: 1,
            ..Default::default()
        };
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let out = train(RankerConfig::new(Arch::Knrm), &mut data, 4, &cfg).unwrap();
        let epochs: Vec<usize> = out.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![3, 6, 9, 12, 15, 18, 21]);
        assert_eq!(out.log.len(), 21);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (docs, emb, groups) = toy_data(40, 8);
        let cfg = TrainConfig { lr: 0.0, ..quick_cfg() };
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let out = train(RankerConfig::new(Arch::Knrm), &mut data, 4, &cfg).unwrap();
        let first = &out.checkpoints[0].ranker.params;
        assert!(out.checkpoints.iter().all(|c| &c.ranker.params == first));
        let init = Ranker::init(RankerConfig::new(Arch::Knrm), 4, &mut stream(cfg.seed, STREAM_INIT)).unwrap();
        assert_eq!(&init.params, first);
    }

    #[test]
    fn planted_overlap_is_learned() {
        let (docs, emb, groups) = toy_data(60, 8);
        let cfg = TrainConfig {
            epochs: 9,
            ..quick_cfg()
        };
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let out = train(RankerConfig::new(Arch::Knrm), &mut data, 4, &cfg).unwrap();
        let (first, last) = (out.log[0].mean_loss, out.log.last().unwrap().mean_loss);
        assert!(last < first, "{first} → {last}");
    }

    #[test]
    fn training_is_reproducible_and_policy_independent() {
        let (docs, emb, groups) = toy_data(40, 8);
        let cfg = quick_cfg();
        let run = |exec| {
            let mut data = TrainData::new(groups.clone(), &docs, &emb, &cfg, exec).unwrap();
            let out = train(RankerConfig::new(Arch::Knrm), &mut data, 4, &cfg).unwrap();
            out.checkpoints.iter().map(|c| c.to_json().unwrap()).collect::<Vec<_>>()
        };
        let a = run(Exec::Sequential);
        assert_eq!(a, run(Exec::Sequential));
        assert_eq!(a, run(Exec::Parallel));
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let (docs, emb, groups) = toy_data(20, 5);
        let cfg = TrainConfig {
            list_size: 5,
            ..quick_cfg()
        };
        let data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let lists = data.sample_epoch(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let ranker = Ranker::init(RankerConfig::new(Arch::Knrm), 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let obj = ListNetObjective {
            ranker: &ranker,
            data: &data,
            lists: &lists[..2],
        };
        let err = grad_check(&obj, &ranker.params, 1e-5, Exec::Sequential).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    /// KNRM checkpoints w = c·u for growing c: the positive first pulls ahead,
    /// then tanh saturation flattens every score and the loss climbs back.
    #[test]
    fn selection_picks_interior_minimum_of_u_shape() {
        let (docs, emb, groups) = toy_data(40, 8);
        let cfg = quick_cfg();
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let base = Ranker::init(RankerConfig::new(Arch::Knrm), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        data.cache_features(&base).unwrap();
        let lists = data.sample_epoch(&cfg, &mut ChaCha8Rng::seed_from_u64(8));

        // direction: exact-match kernel plus the high soft kernels
        let u = vec![0.0, -1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut cks = Vec::new();
        for (i, c) in [0.0, 0.5, 2.0, 8.0, 30.0, 200.0, 2000.0].iter().enumerate() {
            let mut r = base.clone();
            r.params.insert("w", Array::new(vec![11, 1], u.iter().map(|x| x * c).collect()).unwrap());
            r.params.insert("b", Array::scalar(0.0));
            cks.push(Checkpoint {
                epoch: 3 * (i + 1),
                train_loss: 0.0,
                val_loss: None,
                ranker: r,
            });
        }
        let losses: Vec<f64> = cks.iter().map(|c| data.mean_loss(&c.ranker, &lists).unwrap()).collect();
        let chosen = select_checkpoint(&cks, &lists, &data).unwrap();
        let idx = cks.iter().position(|c| c.epoch == chosen.epoch).unwrap();
        assert!(idx > 0 && idx < cks.len() - 1, "{losses:?}");
        assert!(losses[idx] < losses[0] && losses[idx] < losses[cks.len() - 1]);

        assert_eq!(select_checkpoint(&cks[..1], &lists, &data).unwrap().epoch, 3);
        assert!(select_checkpoint(&[], &lists, &data).is_err());
    }

    #[test]
    fn selection_follows_decreasing_loss_to_the_end() {
        let (docs, emb, groups) = toy_data(60, 8);
        let cfg = TrainConfig {
            epochs: 9,
            ..quick_cfg()
        };
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let out = train(RankerConfig::new(Arch::Knrm), &mut data, 4, &cfg).unwrap();
        let vals: Vec<f64> = out.checkpoints.iter().map(|c| c.val_loss.unwrap()).collect();
        let chosen = select_checkpoint(&out.checkpoints, &out.validation, &data).unwrap();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(chosen.val_loss.unwrap(), min);
        if vals.windows(2).all(|w| w[1] < w[0]) {
            assert_eq!(chosen.epoch, 9);
        }
    }

    #[test]
    fn divergence_names_the_list() {
        let (docs, emb, groups) = toy_data(40, 8);
        let cfg = quick_cfg();
        let mut data = TrainData::new(groups, &docs, &emb, &cfg, Exec::Sequential).unwrap();
        let mut ranker = Ranker::init(RankerConfig::new(Arch::Knrm), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (_, a) in ranker.params.iter_mut() {
            a.data_mut().fill(f64::NAN);
        }
        match train_from(&mut ranker, &mut data, &cfg) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("epoch 1, list 0"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

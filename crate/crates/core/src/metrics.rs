//! Precision, recall and nDCG at a cutoff, with macro-averaged reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::ranked::Entry;
use crate::trec::{load_qrels, load_run, Qrels, Run};

fn is_rel(grades: &BTreeMap<String, u32>, doc: &str) -> bool {
    grades.get(doc).is_some_and(|&g| g > 0)
}

fn hits(entries: &[Entry], grades: &BTreeMap<String, u32>, k: usize) -> usize {
    entries.iter().take(k).filter(|e| is_rel(grades, &e.doc)).count()
}

/// Relevant documents in the top `k`, divided by `k`.
pub fn precision_at_k(entries: &[Entry], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(entries, grades, k) as f64 / k as f64
}

/// Share of all relevant documents found in the top `k`; `None` when the
/// topic has no relevant document.
pub fn recall_at_k(entries: &[Entry], grades: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let total = grades.values().filter(|&&g| g > 0).count();
    (total > 0).then(|| hits(entries, grades, k) as f64 / total as f64)
}

/// Binary-gain nDCG with rel / log2(i + 1) discounts.
pub fn ndcg_at_k(entries: &[Entry], grades: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let total = grades.values().filter(|&&g| g > 0).count();
    if total == 0 {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = entries
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, e)| is_rel(grades, &e.doc))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..total.min(k)).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicRow {
    pub topic: String,
    pub scores: Scores,
    /// Judged topic with no list in the run (scored as zeros).
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub k: usize,
    pub rows: Vec<TopicRow>,
    pub mean: Scores,
}

/// Scores every judged topic that has at least one relevant document.
/// Judged topics absent from the run score zero and are counted; run topics
/// without judgments are ignored.
pub fn evaluate_run(run: &Run, qrels: &Qrels, k: usize) -> Result<Report> {
    if k == 0 {
        return Err(Error::Config("cutoff k must be at least 1".into()));
    }
    for t in run.keys() {
        if qrels.topic(t).is_none() {
            warn!("topic {t} has no judgments; not evaluated");
        }
    }
    let mut rows = Vec::new();
    for t in qrels.topics() {
        let grades = qrels.topic(t).expect("listed topic");
        if qrels.num_relevant(t) == 0 {
            warn!("topic {t} has no relevant document; excluded from averages");
            continue;
        }
        let row = match run.get(t) {
            None => TopicRow {
                topic: t.to_owned(),
                scores: Scores::default(),
                missing: true,
            },
            Some(list) => {
                let e = list.entries();
                TopicRow {
                    topic: t.to_owned(),
                    scores: Scores {
                        precision: precision_at_k(e, grades, k),
                        recall: recall_at_k(e, grades, k).unwrap_or(0.0),
                        ndcg: ndcg_at_k(e, grades, k).unwrap_or(0.0),
                    },
                    missing: false,
                }
            }
        };
        rows.push(row);
    }
    let n = rows.len().max(1) as f64;
    let mean = Scores {
        precision: rows.iter().map(|r| r.scores.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.scores.recall).sum::<f64>() / n,
        ndcg: rows.iter().map(|r| r.scores.ndcg).sum::<f64>() / n,
    };
    Ok(Report { k, rows, mean })
}

pub fn evaluate_files(run: impl AsRef<Path>, qrels: impl AsRef<Path>, k: usize) -> Result<Report> {
    evaluate_run(&load_run(run)?, &load_qrels(qrels)?, k)
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = self.k;
        writeln!(f, "topic\tP@{k}\tR@{k}\tnDCG@{k}")?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, s: &Scores| {
            writeln!(f, "{name}\t{:.5}\t{:.5}\t{:.5}", s.precision, s.recall, s.ndcg)
        };
        for r in &self.rows {
            row(f, &r.topic, &r.scores)?;
        }
        row(f, "all", &self.mean)
    }
}

//! TREC run and qrels files.
//!
//! Runs are `topic Q0 doc rank score tag`, qrels are `topic 0 doc rel`; both
//! whitespace separated, one entry per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::ranked::{Component, RankedList, Stage};

/// Ranked lists keyed by topic id.
pub type Run = BTreeMap<String, RankedList>;

/// Relevance grades keyed by topic, then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.grades.entry(topic.into()).or_default().insert(doc.into(), grade);
    }

    pub fn grade(&self, topic: &str, doc: &str) -> u32 {
        self.grades.get(topic).and_then(|t| t.get(doc)).copied().unwrap_or(0)
    }

    /// Judgments of one topic; empty when the topic is unjudged.
    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn num_relevant(&self, topic: &str) -> usize {
        self.grades.get(topic).map_or(0, |t| t.values().filter(|&&g| g > 0).count())
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (t, docs) in &self.grades {
            for (d, g) in docs {
                let _ = writeln!(out, "{t} 0 {d} {g}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_trec().as_bytes())
    }
}

pub fn parse_qrels(text: &str, source: impl AsRef<Path>) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(Error::parse(&source, i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let grade: u32 = f[3]
            .parse()
            .map_err(|_| Error::parse(&source, i + 1, format!("grade `{}` is not a non-negative integer", f[3])))?;
        q.insert(f[0], f[2], grade);
    }
    Ok(q)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels(&read_to_string(path)?, path)
}

/// Run lines for one list, ranks and scores as stored.
pub fn format_list(list: &RankedList, tag: &str, out: &mut String) {
    for e in list.entries() {
        let _ = writeln!(out, "{} Q0 {} {} {} {tag}", list.topic, e.doc, e.rank, e.score);
    }
}

/// Lists in topic order as run text.
pub fn format_run<'a>(lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> String {
    let mut sorted: Vec<&RankedList> = lists.into_iter().collect();
    sorted.sort_by(|a, b| a.topic.cmp(&b.topic));
    let mut out = String::new();
    for l in sorted {
        format_list(l, tag, &mut out);
    }
    out
}

pub fn save_run<'a>(path: impl AsRef<Path>, lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> Result<()> {
    write_atomic(path.as_ref(), format_run(lists, tag).as_bytes())
}

/// Parses run text. Entries are re-ordered by descending score with ties
/// broken by ascending doc id; the stored ranks are ignored.
pub fn parse_run(text: &str, source: impl AsRef<Path>) -> Result<Run> {
    let mut by_topic: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(&source, i + 1, msg);
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        f[3].parse::<usize>()
            .map_err(|_| err(format!("rank `{}` is not a positive integer", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| err(format!("score `{}` is not a number", f[4])))?;
        if score.is_nan() {
            return Err(err("score is NaN".into()));
        }
        if let Some(prev) = seen.insert((f[0].to_owned(), f[2].to_owned()), i + 1) {
            return Err(err(format!("doc `{}` repeats line {prev} for topic {}", f[2], f[0])));
        }
        by_topic.entry(f[0].to_owned()).or_default().push((f[2].to_owned(), score));
    }
    Ok(by_topic
        .into_iter()
        .map(|(t, scored)| {
            let l = RankedList::from_scores(t.clone(), Component::Fused, Stage::Final, scored);
            (t, l)
        })
        .collect())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    parse_run(&read_to_string(path)?, path)
}

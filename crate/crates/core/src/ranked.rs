//! Ranked lists exchanged between the retrieval stages.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Topic component a list was produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Title,
    Background,
    EventKnowledge,
    Example,
    Fused,
}

impl Component {
    /// The four query components of a topic, in canonical order.
    pub const QUERY: [Component; 4] = [
        Component::Title,
        Component::Background,
        Component::EventKnowledge,
        Component::Example,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Title => "title",
            Component::Background => "background",
            Component::EventKnowledge => "event_knowledge",
            Component::Example => "example",
            Component::Fused => "fused",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "title" => Component::Title,
            "background" => Component::Background,
            "event_knowledge" | "description" => Component::EventKnowledge,
            "example" | "examples" => Component::Example,
            "fused" => Component::Fused,
            other => return Err(Error::Config(format!("unknown component `{other}`"))),
        })
    }
}

/// Pipeline stage a list belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bm25,
    Neural,
    Bm25Fused,
    NeuralFused,
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Bm25 => "bm25",
            Stage::Neural => "neural",
            Stage::Bm25Fused => "bm25_fused",
            Stage::NeuralFused => "neural_fused",
            Stage::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub doc: String,
    pub rank: usize,
    pub score: f64,
}

/// Descending score, then ascending doc id. NaN never reaches here: every
/// producer emits finite scores or the `-inf` sentinel.
pub(crate) fn by_score_then_id(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// An ordered list with contiguous ranks 1..n, non-increasing scores and
/// unique doc ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub topic: String,
    pub component: Component,
    pub stage: Stage,
    entries: Vec<Entry>,
}

impl RankedList {
    pub fn empty(topic: impl Into<String>, component: Component, stage: Stage) -> Self {
        RankedList {
            topic: topic.into(),
            component,
            stage,
            entries: Vec::new(),
        }
    }

    /// Sorts `(doc, score)` pairs by descending score (ties: ascending id),
    /// drops repeated ids after their first, best-placed occurrence and
    /// assigns ranks 1..n.
    pub fn from_scores(
        topic: impl Into<String>,
        component: Component,
        stage: Stage,
        mut scored: Vec<(String, f64)>,
    ) -> Self {
        scored.sort_by(by_score_then_id);
        let mut seen = std::collections::HashSet::with_capacity(scored.len());
        let entries = scored
            .into_iter()
            .filter(|(d, _)| seen.insert(d.clone()))
            .enumerate()
            .map(|(i, (doc, score))| Entry {
                doc,
                rank: i + 1,
                score,
            })
            .collect();
        RankedList {
            topic: topic.into(),
            component,
            stage,
            entries,
        }
    }

    /// Takes docs in the given order; scores must already be non-increasing.
    pub fn from_ordered(
        topic: impl Into<String>,
        component: Component,
        stage: Stage,
        ordered: Vec<(String, f64)>,
    ) -> Result<Self> {
        let topic = topic.into();
        let mut seen = std::collections::HashSet::with_capacity(ordered.len());
        let mut entries = Vec::with_capacity(ordered.len());
        for (doc, score) in ordered {
            if !seen.insert(doc.clone()) {
                return Err(Error::Contract(format!("topic {topic}: doc `{doc}` listed twice")));
            }
            if let Some(prev) = entries.last().map(|e: &Entry| e.score) {
                if score > prev {
                    return Err(Error::Contract(format!(
                        "topic {topic}: scores increase at doc `{doc}`"
                    )));
                }
            }
            entries.push(Entry {
                rank: entries.len() + 1,
                doc,
                score,
            });
        }
        Ok(RankedList {
            topic,
            component,
            stage,
            entries,
        })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docs(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc.as_str())
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn with_component(mut self, component: Component) -> Self {
        self.component = component;
        self
    }

    /// Removes docs not accepted by `keep` and re-assigns ranks.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|e| keep(&e.doc));
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i + 1;
        }
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_scores_orders_and_ranks() {
        let l = RankedList::from_scores(
            "t",
            Component::Title,
            Stage::Bm25,
            vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0), ("z".into(), f64::NEG_INFINITY)],
        );
        let docs: Vec<_> = l.docs().collect();
        assert_eq!(docs, ["c", "a", "b", "z"]);
        assert_eq!(l.entries().iter().map(|e| e.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    }

    #[test]
    fn retain_reranks() {
        let mut l = RankedList::from_scores(
            "t",
            Component::Title,
            Stage::Bm25,
            vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)],
        );
        l.retain(|d| d != "a");
        assert_eq!(l.entries()[0].doc, "b");
        assert_eq!(l.entries()[0].rank, 1);
    }

    #[test]
    fn from_ordered_rejects_bad_input() {
        let dup = vec![("a".to_string(), 1.0), ("a".to_string(), 0.5)];
        assert!(RankedList::from_ordered("t", Component::Fused, Stage::Final, dup).is_err());
        let up = vec![("a".to_string(), 1.0), ("b".to_string(), 2.0)];
        assert!(RankedList::from_ordered("t", Component::Fused, Stage::Final, up).is_err());
    }
}

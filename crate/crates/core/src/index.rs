//! Inverted index over the Arabic corpus with BM25 scoring and top-k
//! pre-selection.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ranked::{Component, RankedList, Stage};
use crate::text::{tokenize, Lang, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: TokenSequence,
}

impl Document {
    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Document {
            id: id.into(),
            tokens: tokenize(text, Lang::Ar),
        }
    }
}

/// One line of the JSON-lines corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "bm25 needs k1 > 0 and b in [0, 1], got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

/// Non-negative BM25 idf: ln(1 + (N − df + 0.5) / (df + 0.5)).
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn build_index(docs: &[Document], params: Bm25Params) -> Result<InvertedIndex> {
    build_index_with(docs, params, Exec::default())
}

pub fn build_index_with(docs: &[Document], params: Bm25Params, exec: Exec) -> Result<InvertedIndex> {
    params.validate()?;
    let mut lookup = HashMap::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        if lookup.insert(d.id.clone(), i as u32).is_some() {
            return Err(Error::DuplicateDoc(d.id.clone()));
        }
    }

    let counts: Vec<BTreeMap<&str, u32>> = exec.map_range(docs.len(), |i| {
        let mut tf = BTreeMap::new();
        for t in docs[i].tokens.iter() {
            *tf.entry(t).or_insert(0u32) += 1;
        }
        tf
    });

    // merge in document order so postings are sorted by doc index
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    for (i, tf) in counts.iter().enumerate() {
        for (&term, &n) in tf {
            postings
                .entry(term.to_owned())
                .or_default()
                .push(Posting { doc: i as u32, tf: n });
        }
    }
    let doc_len: Vec<u32> = docs.iter().map(|d| d.tokens.len() as u32).collect();
    let avgdl = if docs.is_empty() {
        0.0
    } else {
        doc_len.iter().map(|&l| l as f64).sum::<f64>() / docs.len() as f64
    };

    Ok(InvertedIndex {
        params,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        doc_len,
        avgdl,
        postings,
        lookup,
    })
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_len(&self, doc: &str) -> Option<usize> {
        self.lookup.get(doc).map(|&i| self.doc_len[i as usize] as usize)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc: &str) -> bool {
        self.lookup.contains_key(doc)
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `(doc id, tf)` pairs for a term, in corpus order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn term_weight(&self, tf: u32, dl: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avgdl > 0.0 { dl as f64 / self.avgdl } else { 1.0 };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    pub fn bm25_score(&self, query: &TokenSequence, doc: &str) -> Result<f64> {
        let &i = self
            .lookup
            .get(doc)
            .ok_or_else(|| Error::UnknownDoc(doc.to_owned()))?;
        let n = self.num_docs();
        let dl = self.doc_len[i as usize];
        let mut score = 0.0;
        for t in query.iter() {
            let Some(ps) = self.postings.get(t) else { continue };
            if let Ok(pos) = ps.binary_search_by_key(&i, |p| p.doc) {
                score += idf(n, ps.len()) * self.term_weight(ps[pos].tf, dl);
            }
        }
        Ok(score)
    }

    /// Top-`threshold` documents with a positive BM25 score, ranked by
    /// descending score with ties broken by ascending doc id.
    pub fn preselect(&self, topic: &str, component: Component, query: &TokenSequence, threshold: usize) -> RankedList {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let n = self.num_docs();
        // term-at-a-time; repeated query terms contribute once per occurrence
        let mut qtf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in query.iter() {
            *qtf.entry(t).or_insert(0) += 1;
        }
        for (t, times) in qtf {
            let Some(ps) = self.postings.get(t) else { continue };
            let w = idf(n, ps.len());
            for p in ps {
                let s = w * self.term_weight(p.tf, self.doc_len[p.doc as usize]);
                *acc.entry(p.doc).or_insert(0.0) += s * times as f64;
            }
        }
        let scored: Vec<(String, f64)> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
            .collect();
        let mut list = RankedList::from_scores(topic, component, Stage::Bm25, scored);
        list.truncate(threshold.max(1));
        list
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        crate::io::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ix: InvertedIndex = serde_json::from_str(&text)?;
        ix.lookup = ix
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        Ok(ix)
    }
}

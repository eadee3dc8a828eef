//! Seeded bilingual test collections with planted topic clusters.
//!
//! Every concept has an English and an Arabic surface word whose embeddings
//! are small perturbations of one concept vector. Each topic owns a cluster
//! of concepts placed near a topic centroid; its relevant and example
//! documents mix cluster words into background text, and a few distractor
//! documents carry a single cluster word.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Topic;
use crate::embed::{cosine, EmbeddingTable, Lexicon};
use crate::error::{Error, Result};
use crate::index::RawDocument;
use crate::io::write_atomic;
use crate::trec::Qrels;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub docs: usize,
    pub topics: usize,
    pub relevant_per_topic: usize,
    pub examples_per_topic: usize,
    pub seed: u64,
    pub dim: usize,
    pub cluster_size: usize,
    pub background_vocab: usize,
    pub doc_len: (usize, usize),
    pub distractors_per_topic: usize,
    /// Minimum pool size a topic needs (the training list size).
    pub list_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            docs: 1000,
            topics: 5,
            relevant_per_topic: 20,
            examples_per_topic: 2,
            seed: 7,
            dim: 32,
            cluster_size: 12,
            background_vocab: 400,
            doc_len: (30, 60),
            distractors_per_topic: 30,
            list_size: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<RawDocument>,
    pub topics: Vec<Topic>,
    pub lexicon: Lexicon,
    pub embeddings: EmbeddingTable,
    pub qrels: Qrels,
    /// (English, Arabic) word of every concept.
    pub pairs: Vec<(String, String)>,
}

/// Arabic letters that tokenization leaves unchanged.
const ARABIC: &[char] = &[
    'ب', 'ت', 'ث', 'ج', 'ح', 'خ', 'د', 'ذ', 'ر', 'ز', 'س', 'ش', 'ص', 'ض', 'ط', 'ظ', 'ع', 'غ', 'ف', 'ق', 'ك', 'ل', 'م',
    'ن', 'ه', 'و', 'ي', 'ا',
];
const FATHA: char = '\u{064E}';

impl SynthSpec {
    fn check(&self) -> Result<()> {
        let planted = self.topics * (self.relevant_per_topic + self.examples_per_topic);
        let fail = |m: String| Err(Error::Infeasible(m));
        if self.topics == 0 || self.relevant_per_topic == 0 || self.examples_per_topic == 0 {
            return fail("topics, relevant_per_topic and examples_per_topic must be at least 1".into());
        }
        if self.docs < planted {
            return fail(format!(
                "docs = {} but planted documents need {planted} (topics × (relevant + examples))",
                self.docs
            ));
        }
        if self.docs < self.list_size + self.examples_per_topic {
            return fail(format!(
                "docs = {} but each topic pool needs at least list_size + examples = {}",
                self.docs,
                self.list_size + self.examples_per_topic
            ));
        }
        if self.dim < 2 || self.cluster_size < 3 || self.background_vocab < 10 {
            return fail("dim ≥ 2, cluster_size ≥ 3 and background_vocab ≥ 10 are required".into());
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return fail(format!("doc_len range {:?} is empty", self.doc_len));
        }
        Ok(())
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(dim: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("finite sd");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn word(rng: &mut ChaCha8Rng, alphabet: &[char], taken: &mut BTreeSet<String>) -> String {
    loop {
        let len = rng.random_range(4..=7);
        let w: String = (0..len).map(|_| *alphabet.choose(rng).expect("alphabet")).collect();
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

pub fn make_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latin: Vec<char> = ('a'..='z').collect();
    let n_concepts = spec.topics * spec.cluster_size + spec.background_vocab;

    let mut taken_en = BTreeSet::new();
    let mut taken_ar = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n_concepts);
    for _ in 0..n_concepts {
        pairs.push((word(&mut rng, &latin, &mut taken_en), word(&mut rng, ARABIC, &mut taken_ar)));
    }

    // concept vectors: clusters around topic centroids, background uniform
    let mut concept_vecs = Vec::with_capacity(n_concepts);
    for _ in 0..spec.topics {
        let centroid = unit(gaussian(spec.dim, 1.0, &mut rng));
        for _ in 0..spec.cluster_size {
            let noise = gaussian(spec.dim, 0.5 / (spec.dim as f64).sqrt(), &mut rng);
            concept_vecs.push(unit(centroid.iter().zip(noise).map(|(c, n)| c + n).collect()));
        }
    }
    for _ in 0..spec.background_vocab {
        concept_vecs.push(unit(gaussian(spec.dim, 1.0, &mut rng)));
    }

    let mut rows = Vec::with_capacity(2 * n_concepts);
    let mut lexicon = Lexicon::new();
    for ((en, ar), v) in pairs.iter().zip(&concept_vecs) {
        let sd = 0.1 / (spec.dim as f64).sqrt();
        let (e, a) = loop {
            let e: Vec<f64> = v.iter().zip(gaussian(spec.dim, sd, &mut rng)).map(|(x, n)| x + n).collect();
            let a: Vec<f64> = v.iter().zip(gaussian(spec.dim, sd, &mut rng)).map(|(x, n)| x + n).collect();
            if cosine(&e, &a)? >= 0.9 {
                break (e, a);
            }
        };
        rows.push((en.clone(), e));
        rows.push((ar.clone(), a));
        lexicon.insert(en, ar);
    }
    let embeddings = EmbeddingTable::from_rows(spec.dim, rows)?;

    let cluster = |t: usize| t * spec.cluster_size..(t + 1) * spec.cluster_size;
    let background: Vec<usize> = (spec.topics * spec.cluster_size..n_concepts).collect();
    // frequent background words, shared by many documents and by topic text
    let common = &background[..background.len() / 10];

    let mut ids: Vec<String> = (0..spec.docs).map(|i| format!("doc{i:05}")).collect();
    ids.shuffle(&mut rng);
    let mut role: Vec<Option<(usize, bool)>> = vec![None; spec.docs];
    let mut next = 0;
    let mut topics = Vec::with_capacity(spec.topics);
    let mut qrels = Qrels::new();
    for t in 0..spec.topics {
        let tid = format!("T{:02}", t + 1);
        let mut examples = Vec::new();
        for j in 0..spec.relevant_per_topic + spec.examples_per_topic {
            let is_example = j < spec.examples_per_topic;
            role[next] = Some((t, is_example));
            if is_example {
                examples.push(ids[next].clone());
            } else {
                qrels.insert(&tid, &ids[next], 1);
            }
            next += 1;
        }
        let c: Vec<usize> = cluster(t).collect();
        let en = |idx: &[usize]| idx.iter().map(|&i| pairs[i].0.as_str()).collect::<Vec<_>>().join(" ");
        let pick = |n: usize, from: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
            from.choose_multiple(rng, n.min(from.len())).copied().collect()
        };
        let mut title = pick(2, &c, &mut rng);
        title.extend(pick(1, common, &mut rng));
        let mut bg = pick(5, &c, &mut rng);
        bg.extend(pick(6, common, &mut rng));
        bg.shuffle(&mut rng);
        let mut ev = pick(4, &c, &mut rng);
        ev.extend(pick(5, common, &mut rng));
        ev.shuffle(&mut rng);
        topics.push(Topic {
            id: tid,
            title: format!("{}.", en(&title)),
            background: format!("{}.", en(&bg)),
            event_knowledge: format!("{}, {}.", en(&ev[..ev.len() / 2]), en(&ev[ev.len() / 2..])),
            example_doc_ids: examples,
        });
    }

    let mut docs = Vec::with_capacity(spec.docs);
    let mut distractors_left = vec![spec.distractors_per_topic; spec.topics];
    for (i, id) in ids.iter().enumerate() {
        let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
        let mut toks: Vec<usize> = Vec::with_capacity(len + 8);
        for _ in 0..len {
            let from = if rng.random_bool(0.3) { common } else { &background[..] };
            toks.push(*from.choose(&mut rng).expect("background"));
        }
        match role[i] {
            Some((t, _)) => {
                let c: Vec<usize> = cluster(t).collect();
                let n = rng.random_range(4..=8);
                for _ in 0..n {
                    toks.push(*c.choose(&mut rng).expect("cluster"));
                }
            }
            None => {
                let t = rng.random_range(0..spec.topics);
                if distractors_left[t] > 0 {
                    distractors_left[t] -= 1;
                    toks.push(*cluster(t).collect::<Vec<_>>().choose(&mut rng).expect("cluster"));
                }
            }
        }
        toks.shuffle(&mut rng);
        let mut text = String::new();
        for (j, &w) in toks.iter().enumerate() {
            if j > 0 {
                text.push(if rng.random_bool(0.05) { '،' } else { ' ' });
                if text.ends_with('،') {
                    text.push(' ');
                }
            }
            let ar = &pairs[w].1;
            if rng.random_bool(0.05) {
                // a diacritic that normalization strips again
                let mut cs = ar.chars();
                text.extend(cs.next());
                text.push(FATHA);
                text.extend(cs);
            } else {
                text.push_str(ar);
            }
        }
        docs.push(RawDocument { id: id.clone(), text });
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(SynthCorpus {
        docs,
        topics,
        lexicon,
        embeddings,
        qrels,
        pairs,
    })
}

impl SynthCorpus {
    /// Writes corpus.jsonl, topics.json, lexicon.tsv, embeddings.txt and
    /// qrels.txt into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut corpus = String::new();
        for d in &self.docs {
            corpus.push_str(&serde_json::to_string(d)?);
            corpus.push('\n');
        }
        write_atomic(&dir.join("corpus.jsonl"), corpus.as_bytes())?;
        write_atomic(&dir.join("topics.json"), serde_json::to_string_pretty(&self.topics)?.as_bytes())?;
        let mut lex = Vec::new();
        self.lexicon.write(&mut lex).map_err(|e| Error::io(dir.join("lexicon.tsv"), e))?;
        write_atomic(&dir.join("lexicon.tsv"), &lex)?;
        let mut emb = Vec::new();
        self.embeddings.write(&mut emb).map_err(|e| Error::io(dir.join("embeddings.txt"), e))?;
        write_atomic(&dir.join("embeddings.txt"), &emb)?;
        self.qrels.save(dir.join("qrels.txt"))
    }
}

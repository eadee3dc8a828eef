//! Shared English–Arabic embedding space and the word-level lexicon.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Array;
use crate::text::{normalize_key, truncate, Lang, TokenSequence};

/// Immutable V×D embedding matrix with a normalized-token vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
    duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from (token, vector) rows; later duplicates (after key
    /// normalization) are ignored and counted.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::Contract("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            vocab: HashMap::new(),
            tokens: Vec::new(),
            matrix: Vec::new(),
            dim,
            duplicates: 0,
        };
        for (i, (token, row)) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Contract(format!(
                    "row {i} (`{token}`) has {} values, expected {dim}",
                    row.len()
                )));
            }
            table.push(&token, &row);
        }
        Ok(table)
    }

    fn push(&mut self, token: &str, row: &[f64]) {
        let key = normalize_key(token);
        if self.vocab.contains_key(&key) {
            self.duplicates += 1;
            return;
        }
        self.vocab.insert(key.clone(), self.tokens.len());
        self.tokens.push(key);
        self.matrix.extend_from_slice(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of rows skipped during loading because their token was a repeat.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    /// Row for `token`, or `None` when out of vocabulary.
    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        let idx = match self.vocab.get(token) {
            Some(&i) => i,
            None => *self.vocab.get(&normalize_key(token))?,
        };
        Some(&self.matrix[idx * self.dim..(idx + 1) * self.dim])
    }

    /// Embeds the first `max_len` tokens of `seq` as an n×D array, skipping
    /// out-of-vocabulary tokens.
    pub fn embed(&self, seq: &TokenSequence, max_len: usize) -> Array {
        let cut = truncate(seq, max_len);
        let mut data = Vec::with_capacity(cut.len() * self.dim);
        let mut rows = 0;
        for t in cut.iter() {
            if let Some(row) = self.lookup(t) {
                data.extend_from_slice(row);
                rows += 1;
            }
        }
        Array::from_parts(vec![rows, self.dim], data)
    }

    /// Writes the table in word2vec text format.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, token) in self.tokens.iter().enumerate() {
            write!(out, "{token}")?;
            for x in &self.matrix[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_embeddings(BufReader::new(file), path)?;
    if table.duplicate_count() > 0 {
        log::warn!(
            "{}: ignored {} duplicate embedding rows",
            path.display(),
            table.duplicate_count()
        );
    }
    Ok(table)
}

/// Parses word2vec text: a "V D" header followed by V rows of "token v1 .. vD".
/// `source` only labels error messages.
pub fn read_embeddings<R: BufRead>(reader: R, source: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let source = source.as_ref();
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(source, e))?,
        None => return Err(Error::parse(source, 1, "missing \"V D\" header")),
    };
    let mut fields = header.split_whitespace();
    let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    let (rows, dim) = match (parse_usize(fields.next()), parse_usize(fields.next()), fields.next()) {
        (Some(v), Some(d), None) if d > 0 => (v, d),
        _ => return Err(Error::parse(source, 1, format!("malformed header `{header}`"))),
    };

    let mut table = EmbeddingTable {
        vocab: HashMap::with_capacity(rows),
        tokens: Vec::with_capacity(rows),
        matrix: Vec::with_capacity(rows * dim),
        dim,
        duplicates: 0,
    };
    let mut row = Vec::with_capacity(dim);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(Error::parse(source, lineno, format!("more than the {rows} rows announced in the header")));
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        row.clear();
        for p in parts {
            let x: f64 = p
                .parse()
                .map_err(|_| Error::parse(source, lineno, format!("bad number `{p}`")))?;
            row.push(x);
        }
        if row.len() != dim {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {dim} values, found {}", row.len()),
            ));
        }
        table.push(token, &row);
        seen += 1;
    }
    if seen != rows {
        return Err(Error::parse(source, seen + 2, format!("header announced {rows} rows, found {seen}")));
    }
    Ok(table)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// English → Arabic word-level lookup table.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, english: &str, arabic: &str) {
        self.entries
            .entry(normalize_key(english))
            .or_default()
            .push(normalize_key(arabic));
    }

    pub fn get(&self, english: &str) -> Option<&[String]> {
        self.entries.get(english).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (en, ars) in &self.entries {
            for ar in ars {
                writeln!(out, "{en}\t{ar}")?;
            }
        }
        Ok(())
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text, path)
}

pub fn parse_lexicon(text: &str, source: impl AsRef<Path>) -> Result<Lexicon> {
    let mut lex = Lexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(en), Some(ar), None) if !en.trim().is_empty() && !ar.trim().is_empty() => {
                lex.insert(en.trim(), ar.trim())
            }
            _ => {
                return Err(Error::parse(
                    source.as_ref(),
                    i + 1,
                    "expected exactly one tab separating english and arabic",
                ))
            }
        }
    }
    Ok(lex)
}

/// Replaces each English token by its first lexicon entry; untranslatable
/// tokens are dropped.
pub fn translate_tokens(lex: &Lexicon, seq: &TokenSequence) -> TokenSequence {
    debug_assert_eq!(seq.lang(), Lang::En);
    TokenSequence::from_tokens(
        seq.iter()
            .filter_map(|t| lex.get(t).and_then(|v| v.first()).cloned()),
        Lang::Ar,
    )
}

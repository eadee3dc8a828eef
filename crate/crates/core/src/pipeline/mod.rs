//! End-to-end orchestration: BM25 pre-selection, neural re-ranking, two-step
//! fusion and evaluation, with every stage persisted to disk.
//!
//! Output layout under `output`:
//!
//! ```text
//! index.json
//! runs/bm25.<component>.run    runs/neural.<component>.run
//! runs/bm25_fused.run          runs/neural_fused.run        runs/final.run
//! checkpoints/epoch_NN.json    checkpoints/selected.json    train_log.jsonl
//! report.txt
//! ```

mod config;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{Mode, PipelineConfig, DATA_DIR_ENV};

use crate::embed::{load_embeddings, load_lexicon, translate_tokens, EmbeddingTable, Lexicon};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fusion::{rrf, two_step_fuse, Fusion};
use crate::index::{build_index_with, load_corpus, Document, InvertedIndex};
use crate::io::{read_to_string, write_atomic};
use crate::metrics::{evaluate_run, Report};
use crate::numeric::Array;
use crate::ranked::{Component, RankedList, Stage};
use crate::rankers::{Checkpoint, Ranker};
use crate::text::{tokenize, Lang, TokenSequence};
use crate::train::{select_checkpoint, train, EpochLog, TrainData, TrainGroup};
use crate::trec::{load_qrels, load_run, save_run, Qrels, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub event_knowledge: String,
    #[serde(default, alias = "examples")]
    pub example_doc_ids: Vec<String>,
}

impl Topic {
    pub fn text(&self, c: Component) -> &str {
        match c {
            Component::Title => &self.title,
            Component::Background => &self.background,
            Component::EventKnowledge => &self.event_knowledge,
            Component::Example | Component::Fused => "",
        }
    }
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<Topic>> {
    let path = path.as_ref();
    let topics: Vec<Topic> = serde_json::from_str(&read_to_string(path)?)?;
    let mut seen = BTreeSet::new();
    for t in &topics {
        if !seen.insert(&t.id) {
            return Err(Error::Config(format!("topic `{}` appears twice in {}", t.id, path.display())));
        }
        if t.title.trim().is_empty()
            && t.background.trim().is_empty()
            && t.event_knowledge.trim().is_empty()
            && t.example_doc_ids.is_empty()
        {
            return Err(Error::Config(format!("topic `{}` has no non-empty component", t.id)));
        }
    }
    Ok(topics)
}

/// Everything loaded from the input files.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub docs: BTreeMap<String, TokenSequence>,
    pub index: InvertedIndex,
    pub topics: Vec<Topic>,
    pub embeddings: EmbeddingTable,
    pub lexicon: Lexicon,
    pub qrels: Option<Qrels>,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig, exec: Exec) -> Result<Self> {
        cfg.check_inputs()?;
        let raw = load_corpus(&cfg.corpus)?;
        let docs: Vec<Document> = exec.map(&raw, |r| Document::from_text(r.id.clone(), &r.text));
        let index = build_index_with(&docs, cfg.bm25(), exec)?;
        let docs: BTreeMap<String, TokenSequence> = docs.into_iter().map(|d| (d.id, d.tokens)).collect();
        let topics = load_topics(&cfg.topics)?;
        for t in &topics {
            if let Some(missing) = t.example_doc_ids.iter().find(|d| !docs.contains_key(*d)) {
                return Err(Error::UnknownDoc(format!("{missing} (example of topic {})", t.id)));
            }
        }
        Ok(Inputs {
            docs,
            index,
            topics,
            embeddings: load_embeddings(&cfg.embeddings)?,
            lexicon: load_lexicon(&cfg.lexicon)?,
            qrels: cfg.qrels.as_ref().map(load_qrels).transpose()?,
        })
    }

    /// BM25 query (always Arabic): translated English text, or the
    /// concatenated example documents.
    pub fn bm25_query(&self, topic: &Topic, c: Component) -> TokenSequence {
        match c {
            Component::Example => topic
                .example_doc_ids
                .iter()
                .filter_map(|d| self.docs.get(d))
                .fold(TokenSequence::empty(Lang::Ar), |acc, t| acc.concat(t)),
            _ => translate_tokens(&self.lexicon, &tokenize(topic.text(c), Lang::En)),
        }
    }

    /// Neural queries of one component: one per example document for the
    /// example component, otherwise the text in the mode's language.
    pub fn neural_queries(&self, topic: &Topic, c: Component, mode: Mode) -> Vec<(Option<String>, TokenSequence)> {
        match c {
            Component::Example => topic
                .example_doc_ids
                .iter()
                .filter_map(|d| self.docs.get(d).map(|t| (Some(d.clone()), t.clone())))
                .collect(),
            _ => {
                let en = tokenize(topic.text(c), Lang::En);
                let q = match mode {
                    Mode::EngAra => en,
                    Mode::FullAra => translate_tokens(&self.lexicon, &en),
                };
                vec![(None, q)]
            }
        }
    }
}

/// Per-component runs of one stage.
pub type ComponentRuns = BTreeMap<Component, Run>;

fn runs_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output.join("runs")
}

fn checkpoints_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output.join("checkpoints")
}

pub fn selected_checkpoint_path(cfg: &PipelineConfig) -> PathBuf {
    checkpoints_dir(cfg).join("selected.json")
}

fn component_run_path(cfg: &PipelineConfig, stage: Stage, c: Component) -> PathBuf {
    runs_dir(cfg).join(format!("{}.{}.run", stage.as_str(), c.as_str()))
}

pub fn stage_run_path(cfg: &PipelineConfig, stage: Stage) -> PathBuf {
    runs_dir(cfg).join(format!("{}.run", stage.as_str()))
}

fn tag(stage: Stage, c: Option<Component>) -> String {
    match c {
        Some(c) => format!("qbe.{}.{}", stage.as_str(), c.as_str()),
        None => format!("qbe.{}", stage.as_str()),
    }
}

pub fn save_component_runs(cfg: &PipelineConfig, stage: Stage, runs: &ComponentRuns) -> Result<()> {
    for (c, run) in runs {
        save_run(component_run_path(cfg, stage, *c), run.values(), &tag(stage, Some(*c)))?;
    }
    Ok(())
}

/// Reads back the per-component runs of `stage` for the configured components.
pub fn load_component_runs(cfg: &PipelineConfig, stage: Stage) -> Result<ComponentRuns> {
    let mut out = ComponentRuns::new();
    for &c in &cfg.components {
        let path = component_run_path(cfg, stage, c);
        if !path.exists() {
            warn!("{} missing; component {c} treated as empty", path.display());
            continue;
        }
        let run = load_run(&path)?
            .into_iter()
            .map(|(t, l)| (t, l.with_component(c).with_stage(stage)))
            .collect();
        out.insert(c, run);
    }
    Ok(out)
}

/// BM25 pool of every topic and enabled component. Example documents leave
/// the pools when `exclude_examples` is set.
pub fn preselect_stage(inputs: &Inputs, cfg: &PipelineConfig, exec: Exec) -> ComponentRuns {
    let mut jobs = Vec::new();
    for t in &inputs.topics {
        for &c in &cfg.components {
            jobs.push((t, c));
        }
    }
    let lists = exec.map(&jobs, |(t, c)| {
        let q = inputs.bm25_query(t, *c);
        if q.is_empty() {
            warn!("topic {} {c}: empty BM25 query after translation; skipped", t.id);
        }
        let mut l = inputs.index.preselect(&t.id, *c, &q, cfg.threshold);
        if cfg.exclude_examples {
            let ex: BTreeSet<&str> = t.example_doc_ids.iter().map(String::as_str).collect();
            l.retain(|d| !ex.contains(d));
        }
        l
    });
    let mut out = ComponentRuns::new();
    for ((t, c), l) in jobs.into_iter().zip(lists) {
        if !l.is_empty() {
            out.entry(c).or_default().insert(t.id.clone(), l);
        }
    }
    out
}

/// Training groups: each English component against all examples, and each
/// example against the others.
pub fn train_groups(inputs: &Inputs, cfg: &PipelineConfig, pools: &ComponentRuns) -> Vec<TrainGroup> {
    let mut groups = Vec::new();
    for t in &inputs.topics {
        for &c in &cfg.components {
            let Some(pool) = pools.get(&c).and_then(|r| r.get(&t.id)) else { continue };
            let mut pool = pool.clone();
            let ex: BTreeSet<&str> = t.example_doc_ids.iter().map(String::as_str).collect();
            pool.retain(|d| !ex.contains(d));
            for (query_doc, q) in inputs.neural_queries(t, c, cfg.mode) {
                let positives: Vec<String> = t
                    .example_doc_ids
                    .iter()
                    .filter(|d| Some(*d) != query_doc.as_ref())
                    .cloned()
                    .collect();
                if positives.is_empty() {
                    continue;
                }
                groups.push(TrainGroup {
                    topic: t.id.clone(),
                    component: c,
                    query: q,
                    positives,
                    pool: pool.clone(),
                });
            }
        }
    }
    groups
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoints: Vec<Checkpoint>,
    pub selected: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains on the pools, writes every checkpoint, the selected one and the
/// epoch log.
pub fn train_stage(inputs: &Inputs, cfg: &PipelineConfig, pools: &ComponentRuns, exec: Exec) -> Result<TrainResult> {
    let tcfg = cfg.train_config();
    let groups = train_groups(inputs, cfg, pools);
    let mut data = TrainData::new(groups, &inputs.docs, &inputs.embeddings, &tcfg, exec)?;
    info!("training {} on {} query groups", cfg.model, data.groups().len());
    let out = train(cfg.ranker_config(), &mut data, inputs.embeddings.dim(), &tcfg)?;
    let selected = select_checkpoint(&out.checkpoints, &out.validation, &data)?.clone();

    let dir = checkpoints_dir(cfg);
    for ck in &out.checkpoints {
        ck.save(dir.join(format!("epoch_{:02}.json", ck.epoch)))?;
    }
    selected.save(selected_checkpoint_path(cfg))?;
    let mut log = String::new();
    for rec in &out.log {
        log.push_str(&serde_json::to_string(rec)?);
        log.push('\n');
    }
    write_atomic(&cfg.output.join("train_log.jsonl"), log.as_bytes())?;
    info!("selected checkpoint of epoch {}", selected.epoch);
    Ok(TrainResult {
        checkpoints: out.checkpoints,
        selected,
        log: out.log,
    })
}

pub fn load_checkpoint(cfg: &PipelineConfig) -> Result<Checkpoint> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| selected_checkpoint_path(cfg));
    if !path.exists() {
        return Err(Error::Config(format!(
            "no model checkpoint at {}; run the train stage first or pass --checkpoint",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

/// Re-ranks every pool with the neural model. Multiple example queries are
/// RRF-fused into one example list.
pub fn rerank_stage(inputs: &Inputs, cfg: &PipelineConfig, ranker: &Ranker, pools: &ComponentRuns, exec: Exec) -> Result<ComponentRuns> {
    if ranker.dim != inputs.embeddings.dim() {
        return Err(Error::shape(
            "rerank",
            format!("model expects {}-d embeddings, table has {}", ranker.dim, inputs.embeddings.dim()),
        ));
    }
    let d_max = cfg.train.d_max;
    let q_max = cfg.train.q_max;
    let mut wanted: BTreeSet<&str> = BTreeSet::new();
    for run in pools.values() {
        for l in run.values() {
            wanted.extend(l.docs());
        }
    }
    let ids: Vec<&str> = wanted.into_iter().collect();
    let embedded = exec.map(&ids, |d| {
        inputs.docs.get(*d).map(|t| inputs.embeddings.embed(t, d_max))
    });
    let mut doc_emb: BTreeMap<&str, Array> = BTreeMap::new();
    for (id, e) in ids.into_iter().zip(embedded) {
        doc_emb.insert(id, e.ok_or_else(|| Error::UnknownDoc(id.to_owned()))?);
    }

    let topics: BTreeMap<&str, &Topic> = inputs.topics.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out = ComponentRuns::new();
    for (&c, run) in pools {
        for (tid, pool) in run {
            let Some(topic) = topics.get(tid.as_str()) else { continue };
            let mut variants = Vec::new();
            for (_, q) in inputs.neural_queries(topic, c, cfg.mode) {
                let qe = inputs.embeddings.embed(&q, q_max);
                if qe.rows() == 0 {
                    continue;
                }
                let docs: Vec<&str> = pool.docs().collect();
                let scores = exec.try_map(&docs, |d| ranker.score_or_sentinel(&qe, &doc_emb[d]))?;
                let scored = docs.iter().map(|d| d.to_string()).zip(scores).collect();
                variants.push(RankedList::from_scores(tid.clone(), c, Stage::Neural, scored));
            }
            let list = match variants.len() {
                0 => {
                    warn!("topic {tid} {c}: no query token has an embedding; skipped");
                    continue;
                }
                1 => variants.pop().expect("one variant"),
                _ => rrf(&variants, cfg.rrf_k)?.with_component(c).with_stage(Stage::Neural),
            };
            out.entry(c).or_default().insert(tid.clone(), list);
        }
    }
    Ok(out)
}

/// Fused runs of the three fusion stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusedRuns {
    pub bm25_fused: Run,
    pub neural_fused: Run,
    pub final_run: Run,
}

impl FusedRuns {
    pub fn get(&self, stage: Stage) -> Option<&Run> {
        match stage {
            Stage::Bm25Fused => Some(&self.bm25_fused),
            Stage::NeuralFused => Some(&self.neural_fused),
            Stage::Final => Some(&self.final_run),
            _ => None,
        }
    }
}

pub const FUSED_STAGES: [Stage; 3] = [Stage::Bm25Fused, Stage::NeuralFused, Stage::Final];

pub fn fuse_stage(topics: &[Topic], bm25: &ComponentRuns, neural: &ComponentRuns, fusion: &Fusion) -> Result<FusedRuns> {
    let collect = |runs: &ComponentRuns, t: &str| -> Vec<RankedList> {
        runs.values().filter_map(|r| r.get(t)).cloned().collect()
    };
    let mut out = FusedRuns::default();
    for t in topics {
        let (b, n) = (collect(bm25, &t.id), collect(neural, &t.id));
        if b.is_empty() && n.is_empty() {
            warn!("topic {}: no component produced a list", t.id);
            continue;
        }
        let fused = two_step_fuse(&b, &n, fusion)?;
        for (run, list) in [
            (&mut out.bm25_fused, fused.bm25_fused),
            (&mut out.neural_fused, fused.neural_fused),
            (&mut out.final_run, fused.final_run),
        ] {
            run.insert(t.id.clone(), list);
        }
    }
    Ok(out)
}

pub fn save_fused(cfg: &PipelineConfig, fused: &FusedRuns) -> Result<()> {
    for stage in FUSED_STAGES {
        let run = fused.get(stage).expect("fused stage");
        save_run(stage_run_path(cfg, stage), run.values().filter(|l| !l.is_empty()), &tag(stage, None))?;
    }
    Ok(())
}

/// Table of macro metrics per fused stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub k: usize,
    pub rows: Vec<(Stage, Report)>,
}

impl StageReport {
    pub fn stage(&self, stage: Stage) -> Option<&Report> {
        self.rows.iter().find(|(s, _)| *s == stage).map(|(_, r)| r)
    }
}

impl std::fmt::Display for StageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = self.k;
        writeln!(f, "stage\tP@{k}\tR@{k}\tnDCG@{k}")?;
        for (s, r) in &self.rows {
            writeln!(f, "{s}\t{:.5}\t{:.5}\t{:.5}", r.mean.precision, r.mean.recall, r.mean.ndcg)?;
        }
        Ok(())
    }
}

pub fn evaluate_stages(fused: &FusedRuns, qrels: &Qrels, k: usize) -> Result<StageReport> {
    let mut rows = Vec::new();
    for stage in FUSED_STAGES {
        // topics whose stage list is empty count as missing
        let run: Run = fused
            .get(stage)
            .expect("fused stage")
            .iter()
            .filter(|(_, l)| !l.is_empty())
            .map(|(t, l)| (t.clone(), l.clone()))
            .collect();
        rows.push((stage, evaluate_run(&run, qrels, k)?));
    }
    Ok(StageReport { k, rows })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bm25: ComponentRuns,
    pub neural: ComponentRuns,
    pub fused: FusedRuns,
    pub train: Option<TrainResult>,
    pub report: Option<StageReport>,
}

pub fn save_report(cfg: &PipelineConfig, report: &StageReport) -> Result<()> {
    write_atomic(&cfg.output.join("report.txt"), report.to_string().as_bytes())
}

/// Runs every stage and persists its outputs.
pub fn run_pipeline(cfg: &PipelineConfig, exec: Exec) -> Result<PipelineOutput> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg, exec)?;
    inputs.index.save(cfg.output.join("index.json"))?;

    let bm25 = preselect_stage(&inputs, cfg, exec);
    save_component_runs(cfg, Stage::Bm25, &bm25)?;

    let (ranker, train) = match &cfg.checkpoint {
        Some(_) => (load_checkpoint(cfg)?.ranker, None),
        None => {
            let t = train_stage(&inputs, cfg, &bm25, exec)?;
            (t.selected.ranker.clone(), Some(t))
        }
    };

    let neural = rerank_stage(&inputs, cfg, &ranker, &bm25, exec)?;
    save_component_runs(cfg, Stage::Neural, &neural)?;

    let fused = fuse_stage(&inputs.topics, &bm25, &neural, &cfg.fusion())?;
    save_fused(cfg, &fused)?;

    let report = match &inputs.qrels {
        Some(q) => {
            let r = evaluate_stages(&fused, q, cfg.eval_k)?;
            save_report(cfg, &r)?;
            Some(r)
        }
        None => None,
    };
    Ok(PipelineOutput {
        bm25,
        neural,
        fused,
        train,
        report,
    })
}

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use qbe::fusion::{Fusion, FusionMethod};
use qbe::index::{build_index_with, load_corpus, Document};
use qbe::metrics::evaluate_files;
use qbe::pipeline::synth::{make_synthetic_corpus, SynthSpec};
use qbe::pipeline::{
    evaluate_stages, fuse_stage, load_checkpoint, load_component_runs, preselect_stage, rerank_stage, run_pipeline,
    save_component_runs, save_fused, save_report, train_stage, Inputs, Mode, PipelineConfig,
};
use qbe::ranked::{Component, RankedList, Stage};
use qbe::rankers::Arch;
use qbe::trec::{format_run, load_run};
use qbe::{Error, Exec, Result};

/// Query-by-example cross-lingual retrieval: BM25 pre-selection, neural
/// re-ranking and rank fusion.
#[derive(Parser)]
#[command(name = "qbe", version)]
struct Cli {
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the corpus and write the BM25 index to <output>/index.json.
    Index(ConfigArgs),
    /// Write the BM25 pool of every topic and component to <output>/runs.
    Preselect(ConfigArgs),
    /// Train the ranker on the BM25 pools; writes <output>/checkpoints.
    Train(ConfigArgs),
    /// Re-rank the BM25 pools, then write the fused runs and the report.
    Rerank(ConfigArgs),
    /// Fuse TREC run files and print the fused run.
    Fuse(FuseArgs),
    /// Print P@k, R@k and nDCG@k of a run.
    Eval(EvalArgs),
    /// Run every stage.
    Pipeline(ConfigArgs),
    /// Write a synthetic bilingual dataset.
    Synth(SynthArgs),
}

/// Config file plus overrides. Flags win over the file, the file wins over
/// defaults.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base directory for relative paths (default: config key, then $QBE_DATA_DIR, then .).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Use this checkpoint instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// BM25 pool size per query.
    #[arg(long)]
    threshold: Option<usize>,
    /// knrm, convknrm or matchpyramid.
    #[arg(long)]
    model: Option<Arch>,
    /// engara or fullara.
    #[arg(long)]
    mode: Option<Mode>,
    /// rrf, combsum, combmnz or isr.
    #[arg(long)]
    fusion: Option<FusionMethod>,
    #[arg(long)]
    rrf_k: Option<f64>,
    /// Comma-separated subset of title, background, event_knowledge, example.
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<Component>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Keep each topic's example documents in its runs.
    #[arg(long)]
    keep_examples: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
        if let Some(v) = &self.qrels {
            cfg.qrels = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
        if let Some(v) = self.rrf_k {
            cfg.rrf_k = v;
        }
        if let Some(v) = &self.components {
            cfg.components = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if self.keep_examples {
            cfg.exclude_examples = false;
        }
        let cfg = cfg.resolve(self.data_dir.as_deref());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, default_value = "rrf")]
    method: FusionMethod,
    /// RRF rank offset.
    #[arg(long, default_value_t = qbe::fusion::DEFAULT_RRF_K)]
    k: f64,
    /// Run tag written in the last column.
    #[arg(long, default_value = "qbe.fused")]
    tag: String,
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    run: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 5)]
    topics: usize,
    #[arg(long, default_value_t = 20)]
    relevant: usize,
    #[arg(long, default_value_t = 2)]
    examples: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn index(cfg: &PipelineConfig, exec: Exec) -> Result<()> {
    let raw = load_corpus(&cfg.corpus)?;
    let docs: Vec<Document> = exec.map(&raw, |r| Document::from_text(r.id.clone(), &r.text));
    let index = build_index_with(&docs, cfg.bm25(), exec)?;
    let path = cfg.output.join("index.json");
    index.save(&path)?;
    info!("indexed {} documents into {}", index.num_docs(), path.display());
    Ok(())
}

fn preselect(cfg: &PipelineConfig, exec: Exec) -> Result<()> {
    let inputs = Inputs::load(cfg, exec)?;
    save_component_runs(cfg, Stage::Bm25, &preselect_stage(&inputs, cfg, exec))
}

fn train(cfg: &PipelineConfig, exec: Exec) -> Result<()> {
    let inputs = Inputs::load(cfg, exec)?;
    let pools = load_component_runs(cfg, Stage::Bm25)?;
    let out = train_stage(&inputs, cfg, &pools, exec)?;
    for rec in &out.log {
        info!("epoch {:>2} loss {:.6}", rec.epoch, rec.mean_loss);
    }
    Ok(())
}

fn rerank(cfg: &PipelineConfig, exec: Exec) -> Result<()> {
    let inputs = Inputs::load(cfg, exec)?;
    let ranker = load_checkpoint(cfg)?.ranker;
    let bm25 = load_component_runs(cfg, Stage::Bm25)?;
    let neural = rerank_stage(&inputs, cfg, &ranker, &bm25, exec)?;
    save_component_runs(cfg, Stage::Neural, &neural)?;
    let fused = fuse_stage(&inputs.topics, &bm25, &neural, &cfg.fusion())?;
    save_fused(cfg, &fused)?;
    if let Some(q) = &inputs.qrels {
        let report = evaluate_stages(&fused, q, cfg.eval_k)?;
        save_report(cfg, &report)?;
        print(&report.to_string())?;
    }
    Ok(())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let fusion = Fusion {
        method: args.method,
        rrf_k: args.k,
    };
    let mut by_topic: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
    for path in &args.runs {
        for (topic, list) in load_run(path)? {
            by_topic.entry(topic).or_default().push(list);
        }
    }
    let fused = by_topic
        .values()
        .map(|lists| fusion.fuse(lists))
        .collect::<Result<Vec<_>>>()?;
    print(&format_run(&fused, &args.tag))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let corpus = make_synthetic_corpus(&SynthSpec {
        docs: args.docs,
        topics: args.topics,
        relevant_per_topic: args.relevant,
        examples_per_topic: args.examples,
        dim: args.dim,
        seed: args.seed,
        ..Default::default()
    })?;
    corpus.save(&args.output)?;
    info!("wrote {} documents, {} topics to {}", corpus.docs.len(), corpus.topics.len(), args.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::Index(a) => index(&a.resolve()?, exec),
        Command::Preselect(a) => preselect(&a.resolve()?, exec),
        Command::Train(a) => train(&a.resolve()?, exec),
        Command::Rerank(a) => rerank(&a.resolve()?, exec),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => print(&evaluate_files(&a.run, &a.qrels, a.k)?.to_string()),
        Command::Pipeline(a) => {
            let out = run_pipeline(&a.resolve()?, exec)?;
            match out.report {
                Some(r) => print(&r.to_string()),
                None => Ok(()),
            }
        }
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

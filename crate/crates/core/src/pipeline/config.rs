use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionMethod, DEFAULT_RRF_K};
use crate::index::Bm25Params;
use crate::io::read_to_string;
use crate::ranked::Component;
use crate::rankers::{Arch, RankerConfig};
use crate::train::TrainConfig;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "QBE_DATA_DIR";

/// Language of the neural-stage query for the English components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// English tokens scored directly in the shared embedding space.
    EngAra,
    /// Word-by-word translated to Arabic first.
    FullAra,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "engara" => Ok(Mode::EngAra),
            "fullara" => Ok(Mode::FullAra),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base for relative paths below.
    pub data_dir: Option<PathBuf>,
    pub corpus: PathBuf,
    pub topics: PathBuf,
    pub embeddings: PathBuf,
    pub lexicon: PathBuf,
    pub qrels: Option<PathBuf>,
    pub output: PathBuf,
    /// Existing ranker checkpoint; when set, the train stage is skipped.
    pub checkpoint: Option<PathBuf>,
    pub threshold: usize,
    pub model: Arch,
    pub mode: Mode,
    pub fusion: FusionMethod,
    pub rrf_k: f64,
    pub components: Vec<Component>,
    pub seed: u64,
    pub k1: f64,
    pub b: f64,
    pub exclude_examples: bool,
    pub eval_k: usize,
    pub train: TrainConfig,
    pub ranker: RankerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        PipelineConfig {
            data_dir: None,
            corpus: "corpus.jsonl".into(),
            topics: "topics.json".into(),
            embeddings: "embeddings.txt".into(),
            lexicon: "lexicon.tsv".into(),
            qrels: None,
            output: "out".into(),
            checkpoint: None,
            threshold: 1000,
            model: Arch::Knrm,
            mode: Mode::EngAra,
            fusion: FusionMethod::Rrf,
            rrf_k: DEFAULT_RRF_K,
            components: Component::QUERY.to_vec(),
            seed: 0,
            k1: bm25.k1,
            b: bm25.b,
            exclude_examples: true,
            eval_k: 10,
            train: TrainConfig::default(),
            ranker: RankerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, source: impl AsRef<Path>) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source, line, e.message().to_owned())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn fusion(&self) -> Fusion {
        Fusion {
            method: self.fusion,
            rrf_k: self.rrf_k,
        }
    }

    /// Ranker hyperparameters with the configured architecture.
    pub fn ranker_config(&self) -> RankerConfig {
        RankerConfig {
            arch: self.model,
            ..self.ranker.clone()
        }
    }

    /// Training settings sharing the pipeline seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Makes relative paths absolute against the data directory: the
    /// explicit argument, then the `data_dir` key, then `$QBE_DATA_DIR`,
    /// then the current directory.
    pub fn resolve(mut self, data_dir: Option<&Path>) -> Self {
        let base = data_dir
            .map(Path::to_path_buf)
            .or_else(|| self.data_dir.clone())
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.topics);
        fix(&mut self.embeddings);
        fix(&mut self.lexicon);
        fix(&mut self.output);
        if let Some(p) = self.qrels.as_mut() {
            fix(p);
        }
        if let Some(p) = self.checkpoint.as_mut() {
            fix(p);
        }
        self.data_dir = Some(base);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 {
            return Err(Error::Config("threshold must be at least 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("eval_k must be at least 1".into()));
        }
        if self.components.is_empty() || self.components.contains(&Component::Fused) {
            return Err(Error::Config(
                "components must be a non-empty subset of title, background, event_knowledge, example".into(),
            ));
        }
        if !(self.rrf_k > 0.0) {
            return Err(Error::Config("rrf_k must be positive".into()));
        }
        self.bm25().validate()?;
        self.ranker_config().validate()?;
        self.train_config().validate()
    }

    /// Fails if an input file is missing.
    pub fn check_inputs(&self) -> Result<()> {
        let mut required = vec![&self.corpus, &self.topics, &self.embeddings, &self.lexicon];
        required.extend(self.qrels.as_ref());
        for p in required {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file does not exist"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = PipelineConfig::from_toml(
            "threshold = 5000\nmodel = \"convknrm\"\ncomponents = [\"title\", \"example\"]\n[train]\nepochs = 6\n",
            "c.toml",
        )
        .unwrap();
        assert_eq!(cfg.threshold, 5000);
        assert_eq!(cfg.model, Arch::ConvKnrm);
        assert_eq!(cfg.ranker_config().arch, Arch::ConvKnrm);
        assert_eq!(cfg.train.epochs, 6);
        assert_eq!(cfg.train.list_size, 50);
        assert_eq!(cfg.rrf_k, 10.0);
        assert!(cfg.exclude_examples);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), "c").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_report_their_line() {
        match PipelineConfig::from_toml("seed = 1\nthreshhold = 5\n", "c.toml") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relative_paths_follow_the_data_dir() {
        let cfg = PipelineConfig {
            data_dir: Some("/cfg".into()),
            qrels: Some("q.txt".into()),
            lexicon: "/abs/lex.tsv".into(),
            ..Default::default()
        };
        let a = cfg.clone().resolve(Some(Path::new("/flag")));
        assert_eq!(a.corpus, Path::new("/flag/corpus.jsonl"));
        assert_eq!(a.lexicon, Path::new("/abs/lex.tsv"));
        let b = cfg.resolve(None);
        assert_eq!(b.qrels.unwrap(), Path::new("/cfg/q.txt"));
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            threshold: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            components: vec![Component::Fused],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

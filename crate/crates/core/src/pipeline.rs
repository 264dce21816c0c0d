//! Loading pipeline inputs from disk and running the stages in one process.

use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::assembly::{ground_all, AssembledGraph, AssemblyError, GroundingResources};
use crate::concreteness::{ConcretenessLexicon, LexiconError, Stopwords};
use crate::config::{ConfigError, PipelineConfig};
use crate::embedding::{load_store, EmbeddingError, EmbeddingStore};
use crate::kg::{parse_triples, RejectionReport, Triple};
use crate::noun_index::{load_index, read_captions, IndexError, LexiconTagger, NounIndex};
use crate::web::LocalManifestFetcher;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input `{what}`{}", path.as_ref().map(|p| format!(": {}", p.display())).unwrap_or_default())]
    MissingInput { what: &'static str, path: Option<PathBuf> },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

impl PipelineError {
    pub fn is_missing_input(&self) -> bool {
        matches!(self, PipelineError::MissingInput { .. })
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Resolves a configured path that must exist.
pub fn require<'a>(what: &'static str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
    match path {
        Some(p) if p.exists() => Ok(p),
        other => Err(PipelineError::MissingInput {
            what,
            path: other.cloned(),
        }),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_triples(cfg: &PipelineConfig) -> Result<(Vec<Triple>, RejectionReport)> {
    let path = require("triples", cfg.triples.as_ref())?;
    parse_triples(open(path)?).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_stopwords(cfg: &PipelineConfig) -> Result<Stopwords> {
    match &cfg.stopwords {
        None => Ok(Stopwords::english()),
        Some(_) => {
            let path = require("stopwords", cfg.stopwords.as_ref())?;
            Stopwords::from_reader(open(path)?).map_err(|source| PipelineError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    }
}

pub fn load_lexicon(cfg: &PipelineConfig) -> Result<ConcretenessLexicon> {
    let path = require("lexicon", cfg.lexicon.as_ref())?;
    Ok(ConcretenessLexicon::from_reader(open(path)?, load_stopwords(cfg)?)?)
}

/// Merges every configured EMB1 file into one store. Phrase, noun and image
/// ids share the namespace; identical duplicates are tolerated.
pub fn load_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingStore> {
    let Some(first) = cfg.embeddings.first() else {
        return Err(PipelineError::MissingInput {
            what: "embeddings",
            path: None,
        });
    };
    let mut store = load_store(require("embeddings", Some(first))?)?;
    for p in &cfg.embeddings[1..] {
        store.merge(&load_store(require("embeddings", Some(p))?)?)?;
    }
    info!("loaded {} embeddings of dim {}", store.len(), store.dim());
    Ok(store)
}

/// Loads a saved index, or builds one from the caption corpus.
pub fn load_or_build_index(cfg: &PipelineConfig, store: &EmbeddingStore) -> Result<NounIndex> {
    if let Some(p) = &cfg.index {
        if p.exists() {
            return Ok(load_index(p)?);
        }
        if cfg.captions.is_none() {
            return Err(PipelineError::MissingInput {
                what: "index",
                path: Some(p.clone()),
            });
        }
    }
    let path = require("captions", cfg.captions.as_ref())?;
    let captions = read_captions(open(path)?)?;
    let (index, report) = NounIndex::build(&captions, &LexiconTagger::english(), store, cfg.worker_bound)?;
    info!(
        "indexed {} nouns over {} captions ({} nouns without embeddings)",
        index.noun_count(),
        captions.len(),
        report.missing_embeddings.len()
    );
    Ok(index)
}

pub fn load_fetcher(cfg: &PipelineConfig, store: &EmbeddingStore) -> Result<LocalManifestFetcher> {
    let fetcher = match &cfg.manifest {
        None => LocalManifestFetcher::default(),
        Some(_) => {
            let path = require("manifest", cfg.manifest.as_ref())?;
            LocalManifestFetcher::from_reader(open(path)?).map_err(|source| PipelineError::Io {
                path: path.to_path_buf(),
                source,
            })?
        }
    };
    Ok(fetcher.with_embeddings(store.clone()))
}

/// Everything needed to ground a triple file.
pub struct LoadedInputs {
    pub triples: Vec<Triple>,
    pub rejections: RejectionReport,
    pub lexicon: ConcretenessLexicon,
    pub store: EmbeddingStore,
    pub index: NounIndex,
    pub fetcher: LocalManifestFetcher,
}

impl LoadedInputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let (triples, rejections) = load_triples(cfg)?;
        let lexicon = load_lexicon(cfg)?;
        let store = load_embeddings(cfg)?;
        let index = load_or_build_index(cfg, &store)?;
        let fetcher = load_fetcher(cfg, &store)?;
        Ok(Self {
            triples,
            rejections,
            lexicon,
            store,
            index,
            fetcher,
        })
    }

    pub fn resources(&self) -> GroundingResources<'_> {
        GroundingResources {
            lexicon: &self.lexicon,
            index: &self.index,
            text_store: &self.store,
            image_store: &self.store,
            fetcher: &self.fetcher,
        }
    }
}

/// Ingest, index, ground and assemble in one process.
pub fn run_end_to_end(cfg: &PipelineConfig) -> Result<AssembledGraph> {
    let inputs = LoadedInputs::load(cfg)?;
    info!("{} triples accepted; rejected: {}", inputs.triples.len(), inputs.rejections);
    Ok(ground_all(&inputs.triples, &inputs.resources(), &cfg.grounding_params()))
}

/// Config pointing at the files written by `DemoFixture::write_to`.
pub fn demo_config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        triples: Some(dir.join("triples.tsv")),
        captions: Some(dir.join("captions.tsv")),
        lexicon: Some(dir.join("lexicon.tsv")),
        manifest: Some(dir.join("fetch_manifest.tsv")),
        embeddings: ["text.emb", "images.emb", "web.emb"].iter().map(|f| dir.join(f)).collect(),
        ..PipelineConfig::default()
    }
}

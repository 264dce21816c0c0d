//! Pipeline configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::concreteness::{DEFAULT_THRESHOLD, MAX_RATING, MIN_RATING};
use crate::noun_index::{IndexedParams, DEFAULT_PREFILTER_M, DEFAULT_RETAIN_K, DEFAULT_SIM_THRESHOLD};
use crate::web::{RetryPolicy, DEFAULT_FETCH_MAX};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

/// Numeric knobs used while grounding phrases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingParams {
    pub concreteness_threshold: f64,
    pub indexed: IndexedParams,
    pub fetch_max: usize,
    pub retry: RetryPolicy,
    pub workers: usize,
}

impl Default for GroundingParams {
    fn default() -> Self {
        PipelineConfig::default().grounding_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub concreteness_threshold: f64,
    pub sim_threshold: f32,
    pub retain_k: usize,
    pub prefilter_m: usize,
    pub fetch_max: usize,
    pub worker_bound: usize,
    pub fetch_attempts: u32,
    pub fetch_backoff_ms: u64,
    pub seed: u64,
    pub triples: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub groundings: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            concreteness_threshold: DEFAULT_THRESHOLD,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            retain_k: DEFAULT_RETAIN_K,
            prefilter_m: DEFAULT_PREFILTER_M,
            fetch_max: DEFAULT_FETCH_MAX,
            worker_bound: 4,
            fetch_attempts: 3,
            fetch_backoff_ms: 250,
            seed: 0,
            triples: None,
            captions: None,
            embeddings: Vec::new(),
            lexicon: None,
            stopwords: None,
            manifest: None,
            index: None,
            groundings: None,
            graph: None,
            out: None,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| invalid(key, format!("`{value}` is not a number")))
}

impl PipelineConfig {
    pub fn grounding_params(&self) -> GroundingParams {
        GroundingParams {
            concreteness_threshold: self.concreteness_threshold,
            indexed: IndexedParams {
                prefilter_m: self.prefilter_m,
                sim_threshold: self.sim_threshold,
                retain_k: self.retain_k,
            },
            fetch_max: self.fetch_max,
            retry: RetryPolicy {
                attempts: self.fetch_attempts,
                base_backoff: Duration::from_millis(self.fetch_backoff_ms),
            },
            workers: self.worker_bound,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(MIN_RATING..=MAX_RATING).contains(&self.concreteness_threshold) {
            return Err(invalid("concreteness_threshold", format!("must lie in [{MIN_RATING}, {MAX_RATING}]")));
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return Err(invalid("sim_threshold", "must lie in [0, 1]"));
        }
        for (key, v) in [
            ("retain_k", self.retain_k),
            ("prefilter_m", self.prefilter_m),
            ("fetch_max", self.fetch_max),
            ("worker_bound", self.worker_bound),
            ("fetch_attempts", self.fetch_attempts as usize),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = || Some(PathBuf::from(value));
        match key {
            "concreteness_threshold" => self.concreteness_threshold = parse_num(key, value)?,
            "sim_threshold" => self.sim_threshold = parse_num(key, value)?,
            "retain_k" => self.retain_k = parse_num(key, value)?,
            "prefilter_m" => self.prefilter_m = parse_num(key, value)?,
            "fetch_max" => self.fetch_max = parse_num(key, value)?,
            "worker_bound" | "workers" => self.worker_bound = parse_num(key, value)?,
            "fetch_attempts" => self.fetch_attempts = parse_num(key, value)?,
            "fetch_backoff_ms" => self.fetch_backoff_ms = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "triples" => self.triples = path(),
            "captions" => self.captions = path(),
            "embeddings" => {
                self.embeddings = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "lexicon" => self.lexicon = path(),
            "stopwords" => self.stopwords = path(),
            "manifest" => self.manifest = path(),
            "index" => self.index = path(),
            "groundings" => self.groundings = path(),
            "graph" => self.graph = path(),
            "out" => self.out = path(),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Overlays settings from a config file onto `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "expected key = value".into(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Renders the effective configuration; [`PipelineConfig::parse`] of the
    /// output reproduces `self`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "concreteness_threshold = {:?}", self.concreteness_threshold);
        let _ = writeln!(s, "sim_threshold = {:?}", self.sim_threshold);
        let _ = writeln!(s, "retain_k = {}", self.retain_k);
        let _ = writeln!(s, "prefilter_m = {}", self.prefilter_m);
        let _ = writeln!(s, "fetch_max = {}", self.fetch_max);
        let _ = writeln!(s, "worker_bound = {}", self.worker_bound);
        let _ = writeln!(s, "fetch_attempts = {}", self.fetch_attempts);
        let _ = writeln!(s, "fetch_backoff_ms = {}", self.fetch_backoff_ms);
        let _ = writeln!(s, "seed = {}", self.seed);
        let paths = [
            ("triples", &self.triples),
            ("captions", &self.captions),
            ("lexicon", &self.lexicon),
            ("stopwords", &self.stopwords),
            ("manifest", &self.manifest),
            ("index", &self.index),
            ("groundings", &self.groundings),
            ("graph", &self.graph),
            ("out", &self.out),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        if !self.embeddings.is_empty() {
            let joined: Vec<String> = self.embeddings.iter().map(|p| p.display().to_string()).collect();
            let _ = writeln!(s, "embeddings = {}", joined.join(","));
        }
        s
    }
}

//! Web grounding for abstract phrases: query construction, the fetch
//! contract with retry, and re-ranking of fetched images.
//!
//! Fetchers only return image ids and locators; embeddings for fetched
//! images are looked up in a separately supplied EMB1 store.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concreteness::{clean_token, RouteKind, Stopwords};
use crate::embedding::{cosine_slices, Embedding, EmbeddingError, EmbeddingStore, SimCounter};
use crate::kg::Phrase;
use crate::noun_index::GroundingResult;
use crate::rank::{threshold_top_k, Scored};

pub const DEFAULT_FETCH_MAX: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("fetcher reported: {0}")]
    Remote(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport(_) | FetchError::Remote(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("phrase `{0}` has no content words to search for")]
pub struct EmptyQuery(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebQuery {
    #[serde(rename = "query")]
    pub text: String,
    pub max_results: usize,
}

pub fn build_query(phrase: &Phrase, max_results: usize, stopwords: &Stopwords) -> Result<WebQuery, EmptyQuery> {
    let has_content = phrase
        .tokens
        .iter()
        .map(|t| clean_token(t))
        .any(|t| !t.is_empty() && !stopwords.contains(t));
    if !has_content {
        return Err(EmptyQuery(phrase.normalized.clone()));
    }
    Ok(WebQuery {
        text: phrase.normalized.clone(),
        max_results: max_results.max(1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedImage {
    pub image_id: String,
    pub uri: String,
    pub embedding: Option<Embedding>,
}

pub trait ImageFetcher: Sync {
    fn fetch(&self, query: &WebQuery) -> Result<Vec<FetchedImage>, FetchError>;
}

/// Keeps the first occurrence of each id and at most `max` entries.
fn sanitize(images: Vec<FetchedImage>, max: usize) -> Vec<FetchedImage> {
    let mut seen = HashSet::new();
    images
        .into_iter()
        .filter(|i| seen.insert(i.image_id.clone()))
        .take(max)
        .collect()
}

fn attach(embeddings: Option<&EmbeddingStore>, image_id: String, uri: String) -> FetchedImage {
    let embedding = embeddings.and_then(|s| s.get(&image_id));
    FetchedImage { image_id, uri, embedding }
}

/// Serves images from a `query \t image_id \t uri` manifest.
#[derive(Debug, Clone, Default)]
pub struct LocalManifestFetcher {
    entries: HashMap<String, Vec<(String, String)>>,
    embeddings: Option<EmbeddingStore>,
}

impl LocalManifestFetcher {
    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut entries: HashMap<String, Vec<(String, String)>> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.splitn(3, '\t');
            let (Some(q), Some(id), Some(uri)) = (f.next(), f.next(), f.next()) else {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("fetch manifest line {}: expected query<TAB>image_id<TAB>uri", i + 1),
                ));
            };
            entries
                .entry(q.trim().to_string())
                .or_default()
                .push((id.trim().to_string(), uri.trim().to_string()));
        }
        Ok(Self { entries, embeddings: None })
    }

    pub fn load(path: &std::path::Path) -> io::Result<Self> {
        Self::from_reader(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn insert(&mut self, query: &str, image_id: &str, uri: &str) {
        self.entries
            .entry(query.to_string())
            .or_default()
            .push((image_id.to_string(), uri.to_string()));
    }

    pub fn with_embeddings(mut self, store: EmbeddingStore) -> Self {
        self.embeddings = Some(store);
        self
    }

    pub fn lookup(&self, query: &str) -> &[(String, String)] {
        self.entries.get(query).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every image id the manifest can return, with its uri.
    pub fn images(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.entries.values().flatten().map(|(id, uri)| (id.as_str(), uri.as_str()))
    }
}

impl ImageFetcher for LocalManifestFetcher {
    fn fetch(&self, query: &WebQuery) -> Result<Vec<FetchedImage>, FetchError> {
        let images = self
            .lookup(&query.text)
            .iter()
            .map(|(id, uri)| attach(self.embeddings.as_ref(), id.clone(), uri.clone()))
            .collect();
        Ok(sanitize(images, query.max_results))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(attempts: u32) -> Self {
        Self {
            attempts,
            base_backoff: Duration::ZERO,
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        self.base_backoff.saturating_mul(1u32 << (retry - 1).min(16))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub images: Vec<FetchedImage>,
    pub retries: u32,
}

/// Calls the fetcher up to `policy.attempts` times, backing off
/// exponentially between retryable failures.
pub fn fetch_with_retry(fetcher: &dyn ImageFetcher, query: &WebQuery, policy: RetryPolicy) -> Result<FetchOutcome, FetchError> {
    let attempts = policy.attempts.max(1);
    let mut retries = 0;
    loop {
        match fetcher.fetch(query) {
            Ok(images) => {
                return Ok(FetchOutcome {
                    images: sanitize(images, query.max_results),
                    retries,
                })
            }
            Err(e) if e.is_retryable() && retries + 1 < attempts => {
                retries += 1;
                warn!("fetch for {:?} failed ({e}); retry {retries}/{}", query.text, attempts - 1);
                std::thread::sleep(policy.backoff(retries));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Re-ranks fetched images by cosine to the phrase. Images without an
/// embedding are dropped and counted.
pub fn ground_phrase_web(
    phrase_id: &str,
    phrase_emb: &Embedding,
    fetched: &[FetchedImage],
    sim_threshold: f32,
    retain_k: usize,
    counter: &mut SimCounter,
) -> Result<GroundingResult, EmbeddingError> {
    let start = counter.count();
    let mut missing = 0;
    let mut scored = Vec::with_capacity(fetched.len());
    for img in fetched {
        match &img.embedding {
            Some(e) => scored.push(Scored::new(img.image_id.as_str(), cosine_slices(phrase_emb.values(), e.values(), counter)?)),
            None => missing += 1,
        }
    }
    let candidates = scored.len();
    Ok(GroundingResult {
        phrase_id: phrase_id.to_string(),
        ranked: threshold_top_k(scored, sim_threshold, retain_k),
        sims_used: counter.count() - start,
        route_taken: RouteKind::WebSearch,
        candidates,
        missing_embeddings: missing,
    })
}

/// One image in an exchange response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeImage {
    pub image_id: String,
    pub uri: String,
}

/// A response line: either `{"images": [...]}` or `{"error": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExchangeResponse {
    Images { images: Vec<ExchangeImage> },
    Error { error: String },
}

/// Client side of the line-delimited JSON fetch exchange.
pub struct ExchangeFetcher<R, W> {
    conn: Mutex<(R, W)>,
    embeddings: Option<EmbeddingStore>,
}

impl<R: BufRead + Send, W: Write + Send> ExchangeFetcher<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            conn: Mutex::new((reader, writer)),
            embeddings: None,
        }
    }

    pub fn with_embeddings(mut self, store: EmbeddingStore) -> Self {
        self.embeddings = Some(store);
        self
    }

    fn exchange(&self, query: &WebQuery) -> Result<ExchangeResponse, FetchError> {
        let mut guard = self.conn.lock().map_err(|_| FetchError::Transport("connection poisoned".into()))?;
        let (reader, writer) = &mut *guard;
        let mut line = serde_json::to_string(query).expect("query serializes");
        line.push('\n');
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let mut resp = String::new();
        match reader.read_line(&mut resp) {
            Ok(0) => Err(FetchError::Transport("connection closed".into())),
            Ok(_) => serde_json::from_str(resp.trim_end()).map_err(|e| FetchError::Protocol(e.to_string())),
            Err(e) => Err(FetchError::Transport(e.to_string())),
        }
    }
}

impl ExchangeFetcher<BufReader<TcpStream>, TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self::new(BufReader::new(stream.try_clone()?), stream))
    }
}

impl<R: BufRead + Send, W: Write + Send> ImageFetcher for ExchangeFetcher<R, W> {
    fn fetch(&self, query: &WebQuery) -> Result<Vec<FetchedImage>, FetchError> {
        match self.exchange(query)? {
            ExchangeResponse::Images { images } => Ok(sanitize(
                images
                    .into_iter()
                    .map(|i| attach(self.embeddings.as_ref(), i.image_id, i.uri))
                    .collect(),
                query.max_results,
            )),
            ExchangeResponse::Error { error } => Err(FetchError::Remote(error)),
        }
    }
}

/// Server side of the exchange: answers request lines until EOF. Malformed
/// requests get an error record and the loop continues.
pub fn serve_exchange<R, W, F>(reader: R, mut writer: W, mut backend: F) -> io::Result<usize>
where
    R: BufRead,
    W: Write,
    F: FnMut(&WebQuery) -> Result<Vec<ExchangeImage>, String>,
{
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WebQuery>(&line) {
            Ok(q) if q.max_results >= 1 && !q.text.is_empty() => match backend(&q) {
                Ok(mut images) => {
                    images.truncate(q.max_results);
                    ExchangeResponse::Images { images }
                }
                Err(error) => ExchangeResponse::Error { error },
            },
            Ok(_) => ExchangeResponse::Error {
                error: "query must be non-empty and max_results >= 1".into(),
            },
            Err(e) => ExchangeResponse::Error {
                error: format!("malformed request: {e}"),
            },
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        served += 1;
    }
    Ok(served)
}

/// Adapts a [`LocalManifestFetcher`] as an exchange backend.
pub fn manifest_backend(fetcher: &LocalManifestFetcher) -> impl FnMut(&WebQuery) -> Result<Vec<ExchangeImage>, String> + '_ {
    move |q| {
        Ok(fetcher
            .lookup(&q.text)
            .iter()
            .take(q.max_results)
            .map(|(id, uri)| ExchangeImage {
                image_id: id.clone(),
                uri: uri.clone(),
            })
            .collect())
    }
}

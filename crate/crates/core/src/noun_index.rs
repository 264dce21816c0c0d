//! Noun-indexed candidate pruning.
//!
//! Captions are reduced to lemmatized nouns and inverted into posting lists.
//! Grounding a phrase first compares its embedding against the noun
//! vocabulary, takes the top-`m` nouns, unions their postings, and only then
//! scores the phrase against the surviving images. The number of cosine
//! evaluations drops from `|images|` to `|nouns| + |candidates|`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Read, Write};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::concreteness::{RouteKind, Stopwords};
use crate::embedding::{
    cosine_slices, parse_store, write_store, ByteCursor, Embedding, EmbeddingError, EmbeddingStore, SimCounter,
};
use crate::rank::{rank_top_k, threshold_top_k, Scored};

pub const DEFAULT_PREFILTER_M: usize = 20;
pub const DEFAULT_SIM_THRESHOLD: f32 = 0.15;
pub const DEFAULT_RETAIN_K: usize = 15;

const NOUN_LIST: &str = include_str!("../data/nouns.txt");

/// The closed noun vocabulary behind [`LexiconTagger::english`].
pub fn shipped_nouns() -> impl Iterator<Item = &'static str> {
    NOUN_LIST.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("image id `{0}` appears more than once in the caption corpus")]
    DuplicateImage(String),
    #[error("caption corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("tagger failed: {0}")]
pub struct TagError(pub String);

/// Anything that can pull lemmatized nouns out of a caption.
pub trait NounTagger: Sync {
    /// Nouns in caption order, possibly repeated.
    fn tag_nouns(&self, caption: &str) -> Result<Vec<String>, TagError>;
}

/// Closed-vocabulary noun detector with suffix heuristics for derived nouns
/// (`-tion`, `-ness`, ...). Deterministic and dependency free.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    nouns: HashSet<String>,
    stopwords: Stopwords,
}

const NOUN_SUFFIXES: &[&str] = &["tion", "sion", "ness", "ment", "ity", "ship", "hood", "ism", "ance", "ence"];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("buses", "bus"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("loaves", "loaf"),
    ("halves", "half"),
    ("lives", "life"),
    ("oxen", "ox"),
];

/// Singularizes an English noun with a small rule set.
pub fn lemmatize_noun(word: &str) -> String {
    if let Some((_, lemma)) = IRREGULAR_PLURALS.iter().find(|(plural, _)| *plural == word) {
        return lemma.to_string();
    }
    if word.len() > 4 {
        if let Some(stem) = word.strip_suffix("ies") {
            return format!("{stem}y");
        }
    }
    for sibilant in ["ches", "shes", "sses", "xes", "zes"] {
        if word.len() > sibilant.len() && word.ends_with(sibilant) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

impl LexiconTagger {
    pub fn new(nouns: impl IntoIterator<Item = String>, stopwords: Stopwords) -> Self {
        Self {
            nouns: nouns.into_iter().map(|n| n.to_lowercase()).collect(),
            stopwords,
        }
    }

    /// The shipped noun list and English stopwords.
    pub fn english() -> Self {
        Self::new(shipped_nouns().map(str::to_string), Stopwords::english())
    }

    pub fn is_known_noun(&self, lemma: &str) -> bool {
        self.nouns.contains(lemma)
    }

    fn noun_lemma(&self, token: &str) -> Option<String> {
        if self.stopwords.contains(token) {
            return None;
        }
        let lemma = lemmatize_noun(token);
        if self.nouns.contains(&lemma) {
            return Some(lemma);
        }
        if self.nouns.contains(token) {
            return Some(token.to_string());
        }
        let derived = lemma.len() > 5 && NOUN_SUFFIXES.iter().any(|s| lemma.ends_with(s));
        derived.then_some(lemma)
    }
}

impl Default for LexiconTagger {
    fn default() -> Self {
        Self::english()
    }
}

impl NounTagger for LexiconTagger {
    fn tag_nouns(&self, caption: &str) -> Result<Vec<String>, TagError> {
        let lowered = caption.to_lowercase();
        Ok(lowered
            .split(|c: char| !c.is_alphabetic())
            .filter(|t| !t.is_empty())
            .filter_map(|t| self.noun_lemma(t))
            .collect())
    }
}

/// Unique noun lemmas in first-occurrence order. A tagger failure yields an
/// empty list and a warning.
pub fn extract_nouns(caption: &str, tagger: &dyn NounTagger) -> Vec<String> {
    match tagger.tag_nouns(caption) {
        Ok(nouns) => {
            let mut seen = HashSet::new();
            nouns.into_iter().filter(|n| seen.insert(n.clone())).collect()
        }
        Err(e) => {
            warn!("noun extraction failed for caption {caption:?}: {e}");
            Vec::new()
        }
    }
}

/// Source of noun vectors, normally the text-embedding store.
pub trait NounEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, noun: &str) -> Option<Embedding>;
}

impl NounEmbedder for EmbeddingStore {
    fn dim(&self) -> usize {
        EmbeddingStore::dim(self)
    }

    fn embed(&self, noun: &str) -> Option<Embedding> {
        self.get(noun)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub source: String,
    pub caption: String,
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, source: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            source: source.into(),
            caption: caption.into(),
        }
    }
}

/// Reads `image_id \t source \t caption` rows.
pub fn read_captions<R: BufRead>(reader: R) -> Result<Vec<CaptionRecord>, IndexError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.splitn(3, '\t');
        match (f.next(), f.next(), f.next()) {
            (Some(id), Some(source), Some(caption)) if !id.trim().is_empty() => {
                out.push(CaptionRecord::new(id.trim(), source.trim(), caption.trim()))
            }
            _ => {
                return Err(IndexError::Corpus {
                    line: i + 1,
                    message: "expected image_id<TAB>source<TAB>caption".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_captions<W: Write>(records: &[CaptionRecord], mut w: W) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.image_id, r.source, r.caption)?;
    }
    w.flush()
}

/// Nouns that could not be embedded during a build.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexBuildReport {
    pub missing_embeddings: Vec<String>,
    pub images_without_nouns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NounIndex {
    postings: BTreeMap<String, Vec<String>>,
    noun_embeddings: EmbeddingStore,
}

type Postings = BTreeMap<String, Vec<String>>;

fn merge_postings(mut a: Postings, b: Postings) -> Postings {
    for (noun, ids) in b {
        a.entry(noun).or_default().extend(ids);
    }
    a
}

impl NounIndex {
    pub fn empty(dim: usize) -> Result<Self, IndexError> {
        Ok(Self {
            postings: BTreeMap::new(),
            noun_embeddings: EmbeddingStore::new(dim)?,
        })
    }

    /// Builds the index over `corpus`, split into `shards` chunks processed in
    /// parallel. The result does not depend on `shards`.
    pub fn build(
        corpus: &[CaptionRecord],
        tagger: &dyn NounTagger,
        embedder: &dyn NounEmbedder,
        shards: usize,
    ) -> Result<(Self, IndexBuildReport), IndexError> {
        let mut seen = HashSet::with_capacity(corpus.len());
        for r in corpus {
            if !seen.insert(r.image_id.as_str()) {
                return Err(IndexError::DuplicateImage(r.image_id.clone()));
            }
        }

        let chunk = corpus.len().div_ceil(shards.max(1)).max(1);
        let (postings, images_without_nouns) = corpus
            .par_chunks(chunk)
            .map(|shard| {
                let mut local = Postings::new();
                let mut bare = 0usize;
                for rec in shard {
                    let nouns = extract_nouns(&rec.caption, tagger);
                    if nouns.is_empty() {
                        bare += 1;
                    }
                    for n in nouns {
                        local.entry(n).or_default().push(rec.image_id.clone());
                    }
                }
                (local, bare)
            })
            .reduce(|| (Postings::new(), 0), |(a, x), (b, y)| (merge_postings(a, b), x + y));

        let mut postings = postings;
        for ids in postings.values_mut() {
            ids.sort_unstable();
            ids.dedup();
        }

        let mut noun_embeddings = EmbeddingStore::new(embedder.dim())?;
        let mut report = IndexBuildReport {
            images_without_nouns,
            ..Default::default()
        };
        for noun in postings.keys() {
            match embedder.embed(noun) {
                Some(e) => noun_embeddings.insert(noun.clone(), &e)?,
                None => report.missing_embeddings.push(noun.clone()),
            }
        }
        if !report.missing_embeddings.is_empty() {
            warn!("{} nouns have no embedding and are excluded from prefiltering", report.missing_embeddings.len());
        }
        Ok((
            Self {
                postings,
                noun_embeddings,
            },
            report,
        ))
    }

    pub fn noun_count(&self) -> usize {
        self.postings.len()
    }

    /// Nouns that take part in prefiltering.
    pub fn embedded_noun_count(&self) -> usize {
        self.noun_embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.noun_embeddings.dim()
    }

    pub fn postings(&self, noun: &str) -> Option<&[String]> {
        self.postings.get(noun).map(Vec::as_slice)
    }

    pub fn iter_postings(&self) -> impl Iterator<Item = (&str, &[String])> + '_ {
        self.postings.iter().map(|(n, ids)| (n.as_str(), ids.as_slice()))
    }

    pub fn noun_embeddings(&self) -> &EmbeddingStore {
        &self.noun_embeddings
    }

    /// Top-`m` nouns by cosine to the phrase, ranked.
    pub fn top_nouns(&self, phrase_emb: &Embedding, m: usize, counter: &mut SimCounter) -> Result<Vec<Scored>, IndexError> {
        if phrase_emb.dim() != self.dim() {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim(),
                actual: phrase_emb.dim(),
            }
            .into());
        }
        let scored = self
            .noun_embeddings
            .iter()
            .map(|(noun, v)| cosine_slices(phrase_emb.values(), v, counter).map(|s| Scored::new(noun, s)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rank_top_k(scored, m))
    }

    /// Union of the posting lists of the top-`m` nouns, sorted ascending.
    /// Costs one similarity per embedded noun.
    pub fn candidate_images(&self, phrase_emb: &Embedding, m: usize, counter: &mut SimCounter) -> Result<Vec<String>, IndexError> {
        let top = self.top_nouns(phrase_emb, m, counter)?;
        let mut union = BTreeSet::new();
        for noun in &top {
            if let Some(ids) = self.postings.get(&noun.id) {
                union.extend(ids.iter().map(String::as_str));
            }
        }
        Ok(union.into_iter().map(str::to_string).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedParams {
    pub prefilter_m: usize,
    pub sim_threshold: f32,
    pub retain_k: usize,
}

impl Default for IndexedParams {
    fn default() -> Self {
        Self {
            prefilter_m: DEFAULT_PREFILTER_M,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            retain_k: DEFAULT_RETAIN_K,
        }
    }
}

/// Ranked image evidence for one phrase plus the work it took.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub phrase_id: String,
    pub ranked: Vec<Scored>,
    pub sims_used: u64,
    pub route_taken: RouteKind,
    /// Images that were scored (candidate set for the indexed route, fetched
    /// images with embeddings for the web route).
    pub candidates: usize,
    /// Candidates skipped because no embedding was available.
    pub missing_embeddings: usize,
}

impl GroundingResult {
    pub fn no_candidates(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Two-stage retrieval: noun prefilter, then phrase-image cosine over the
/// candidate set, thresholded and cut to `retain_k`.
pub fn ground_phrase_indexed(
    phrase_id: &str,
    phrase_emb: &Embedding,
    index: &NounIndex,
    image_store: &EmbeddingStore,
    params: IndexedParams,
    counter: &mut SimCounter,
) -> Result<GroundingResult, IndexError> {
    if phrase_emb.dim() != image_store.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: image_store.dim(),
            actual: phrase_emb.dim(),
        }
        .into());
    }
    let start = counter.count();
    let candidates = index.candidate_images(phrase_emb, params.prefilter_m, counter)?;
    let mut missing = 0;
    let mut scored = Vec::with_capacity(candidates.len());
    for id in &candidates {
        match image_store.get_slice(id) {
            Some(v) => scored.push(Scored::new(id.as_str(), cosine_slices(phrase_emb.values(), v, counter)?)),
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("phrase {phrase_id:?}: {missing} candidate images have no embedding");
    }
    Ok(GroundingResult {
        phrase_id: phrase_id.to_string(),
        ranked: threshold_top_k(scored, params.sim_threshold, params.retain_k),
        sims_used: counter.count() - start,
        route_taken: RouteKind::EmbeddingMatch,
        candidates: candidates.len() - missing,
        missing_embeddings: missing,
    })
}

const NIX_MAGIC: &[u8; 4] = b"NIX1";

/// NIX1 layout (little-endian): magic, u32 noun count, then per noun a u32
/// length + UTF-8 noun, u32 posting count and per posting a u32 length +
/// UTF-8 image id; followed by an EMB1 block holding the noun embeddings.
pub fn write_index<W: Write>(index: &NounIndex, mut w: W) -> io::Result<()> {
    fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(s.as_bytes())
    }
    w.write_all(NIX_MAGIC)?;
    w.write_all(&(index.postings.len() as u32).to_le_bytes())?;
    for (noun, ids) in &index.postings {
        put_str(&mut w, noun)?;
        w.write_all(&(ids.len() as u32).to_le_bytes())?;
        for id in ids {
            put_str(&mut w, id)?;
        }
    }
    write_store(&index.noun_embeddings, &mut w)
}

pub fn index_to_bytes(index: &NounIndex) -> Vec<u8> {
    let mut buf = Vec::new();
    write_index(index, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_index<R: Read>(mut r: R) -> Result<NounIndex, IndexError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = ByteCursor::new(&buf, 0);
    if cur.take(4, "magic")? != NIX_MAGIC {
        return Err(EmbeddingError::Format {
            offset: 0,
            message: "bad magic, expected NIX1".into(),
        }
        .into());
    }
    let nouns = cur.u32("noun count")?;
    let mut postings = BTreeMap::new();
    for _ in 0..nouns {
        let at = cur.offset();
        let noun = cur.string("noun")?;
        let n = cur.u32("posting count")?;
        let ids = (0..n).map(|_| cur.string("image id")).collect::<Result<Vec<_>, _>>()?;
        if !ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(EmbeddingError::Format {
                offset: at,
                message: format!("postings for `{noun}` are not sorted and unique"),
            }
            .into());
        }
        if postings.insert(noun.clone(), ids).is_some() {
            return Err(EmbeddingError::Format {
                offset: at,
                message: format!("noun `{noun}` listed twice"),
            }
            .into());
        }
    }
    let noun_embeddings = parse_store(&mut cur)?;
    if !cur.is_at_end() {
        return Err(cur.error("trailing bytes after noun embeddings").into());
    }
    Ok(NounIndex {
        postings,
        noun_embeddings,
    })
}

pub fn save_index(index: &NounIndex, path: &std::path::Path) -> io::Result<()> {
    write_index(index, io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_index(path: &std::path::Path) -> Result<NounIndex, IndexError> {
    read_index(io::BufReader::new(std::fs::File::open(path)?))
}

//! Graph assembly: route and ground every unique phrase once, decorate the
//! triples with the results, persist the graph and compute per-relation
//! statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::{self, BufRead, Write};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concreteness::{phrase_concreteness, route, ConcretenessLexicon, Route, RouteKind};
use crate::config::GroundingParams;
use crate::embedding::{EmbeddingStore, SimCounter};
use crate::kg::{Phrase, Relation, Triple};
use crate::noun_index::{ground_phrase_indexed, CaptionRecord, NounIndex};
use crate::rank::Scored;
use crate::web::{build_query, fetch_with_retry, ground_phrase_web, ImageFetcher, LocalManifestFetcher};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything grounding reads from.
pub struct GroundingResources<'a> {
    pub lexicon: &'a ConcretenessLexicon,
    pub index: &'a NounIndex,
    /// Phrase embeddings keyed by normalized phrase text.
    pub text_store: &'a EmbeddingStore,
    /// Embeddings of corpus images.
    pub image_store: &'a EmbeddingStore,
    pub fetcher: &'a dyn ImageFetcher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason", content = "detail")]
pub enum SkipReason {
    MissingPhraseEmbedding,
    EmptyQuery,
    FetchFailed(String),
    NoCandidates,
    Error(String),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::MissingPhraseEmbedding => f.write_str("missing-phrase-embedding"),
            SkipReason::EmptyQuery => f.write_str("empty-query"),
            SkipReason::FetchFailed(e) => write!(f, "fetch-failed: {e}"),
            SkipReason::NoCandidates => f.write_str("no-candidates"),
            SkipReason::Error(e) => write!(f, "error: {e}"),
        }
    }
}

/// Outcome of grounding one unique phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseGrounding {
    pub phrase: String,
    pub route: Route,
    pub images: Vec<Scored>,
    pub sims_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<SkipReason>,
}

/// Unique phrases (heads and tails) in sorted order of normalized text.
pub fn unique_phrases(triples: &[Triple]) -> Vec<Phrase> {
    let mut seen: BTreeMap<&str, &Phrase> = BTreeMap::new();
    for t in triples {
        seen.entry(&t.head.normalized).or_insert(&t.head);
        seen.entry(&t.tail.normalized).or_insert(&t.tail);
    }
    seen.into_values().cloned().collect()
}

fn ground_web(phrase: &Phrase, emb: &crate::embedding::Embedding, mut route: Route, res: &GroundingResources<'_>, params: &GroundingParams, sims: u64) -> PhraseGrounding {
    let done = |route: Route, images: Vec<Scored>, sims_used: u64, skip: Option<SkipReason>| PhraseGrounding {
        phrase: phrase.normalized.clone(),
        route,
        images,
        sims_used,
        skip,
    };
    if route.kind != RouteKind::WebSearch {
        route = route.escalate();
    }
    let query = match build_query(phrase, params.fetch_max, res.lexicon.stopwords()) {
        Ok(q) => q,
        Err(_) => return done(route, Vec::new(), sims, Some(SkipReason::EmptyQuery)),
    };
    let fetched = match fetch_with_retry(res.fetcher, &query, params.retry) {
        Ok(out) => out.images,
        Err(e) => return done(route, Vec::new(), sims, Some(SkipReason::FetchFailed(e.to_string()))),
    };
    let mut counter = SimCounter::new();
    match ground_phrase_web(
        &phrase.normalized,
        emb,
        &fetched,
        params.indexed.sim_threshold,
        params.indexed.retain_k,
        &mut counter,
    ) {
        Ok(r) if r.ranked.is_empty() => done(route, r.ranked, sims + r.sims_used, Some(SkipReason::NoCandidates)),
        Ok(r) => done(route, r.ranked, sims + r.sims_used, None),
        Err(e) => done(route, Vec::new(), sims, Some(SkipReason::Error(e.to_string()))),
    }
}

/// Routes and grounds a single phrase.
pub fn ground_phrase(phrase: &Phrase, res: &GroundingResources<'_>, params: &GroundingParams) -> PhraseGrounding {
    let route = route(phrase, res.lexicon, params.concreteness_threshold);
    let Some(emb) = res.text_store.get(&phrase.normalized) else {
        return PhraseGrounding {
            phrase: phrase.normalized.clone(),
            route,
            images: Vec::new(),
            sims_used: 0,
            skip: Some(SkipReason::MissingPhraseEmbedding),
        };
    };
    if route.kind == RouteKind::EmbeddingMatch {
        let mut counter = SimCounter::new();
        match ground_phrase_indexed(&phrase.normalized, &emb, res.index, res.image_store, params.indexed, &mut counter) {
            Ok(r) if !r.ranked.is_empty() => {
                return PhraseGrounding {
                    phrase: phrase.normalized.clone(),
                    route,
                    images: r.ranked,
                    sims_used: r.sims_used,
                    skip: None,
                }
            }
            Ok(r) => return ground_web(phrase, &emb, route, res, params, r.sims_used),
            Err(e) => warn!("indexed grounding failed for {:?}: {e}; falling back to web", phrase.normalized),
        }
        return ground_web(phrase, &emb, route, res, params, counter.count());
    }
    ground_web(phrase, &emb, route, res, params, 0)
}

/// Grounds each phrase once on a pool of `params.workers` threads. Output
/// order follows input order.
pub fn ground_phrases(phrases: &[Phrase], res: &GroundingResources<'_>, params: &GroundingParams) -> Vec<PhraseGrounding> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| phrases.par_iter().map(|p| ground_phrase(p, res, params)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalTriple {
    pub triple: Triple,
    pub head_images: Vec<Scored>,
    pub tail_images: Vec<Scored>,
    pub head_route: Route,
    pub tail_route: Route,
}

/// Phrases that ended up without images, with the reason.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipReport {
    pub entries: Vec<(String, SkipReason)>,
}

impl SkipReport {
    pub fn from_groundings(groundings: &[PhraseGrounding]) -> Self {
        Self {
            entries: groundings
                .iter()
                .filter_map(|g| g.skip.clone().map(|s| (g.phrase.clone(), s)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Joins triples with per-phrase groundings. Phrases absent from
/// `groundings` get empty image lists and a web route.
pub fn decorate(triples: &[Triple], groundings: &[PhraseGrounding]) -> Vec<MultimodalTriple> {
    let by_phrase: HashMap<&str, &PhraseGrounding> = groundings.iter().map(|g| (g.phrase.as_str(), g)).collect();
    let lookup = |p: &Phrase| -> (Vec<Scored>, Route) {
        match by_phrase.get(p.normalized.as_str()) {
            Some(g) => (g.images.clone(), g.route),
            None => (
                Vec::new(),
                Route {
                    kind: RouteKind::WebSearch,
                    score: None,
                    escalated: false,
                },
            ),
        }
    };
    triples
        .iter()
        .map(|t| {
            let (head_images, head_route) = lookup(&t.head);
            let (tail_images, tail_route) = lookup(&t.tail);
            MultimodalTriple {
                triple: t.clone(),
                head_images,
                tail_images,
                head_route,
                tail_route,
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct AssembledGraph {
    pub graph: Vec<MultimodalTriple>,
    pub groundings: Vec<PhraseGrounding>,
    pub stats: GraphStats,
    pub skips: SkipReport,
}

/// Full construction: unique phrases, grounding, decoration and stats.
pub fn ground_all(triples: &[Triple], res: &GroundingResources<'_>, params: &GroundingParams) -> AssembledGraph {
    let phrases = unique_phrases(triples);
    info!("grounding {} unique phrases from {} triples", phrases.len(), triples.len());
    let groundings = ground_phrases(&phrases, res, params);
    let graph = decorate(triples, &groundings);
    let stats = compute_stats(&graph, res.lexicon);
    let skips = SkipReport::from_groundings(&groundings);
    AssembledGraph {
        graph,
        groundings,
        stats,
        skips,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    head: String,
    head_raw: String,
    relation: Relation,
    tail: String,
    tail_raw: String,
    line: usize,
    head_images: Vec<Scored>,
    tail_images: Vec<Scored>,
    head_route: Route,
    tail_route: Route,
}

fn rebuild_phrase(raw: String, normalized: String) -> Phrase {
    let tokens = normalized.split(' ').map(str::to_string).collect();
    Phrase { raw, normalized, tokens }
}

/// One JSON object per line, in graph order.
pub fn write_graph<W: Write>(graph: &[MultimodalTriple], mut sink: W) -> io::Result<()> {
    for mt in graph {
        let rec = GraphRecord {
            head: mt.triple.head.normalized.clone(),
            head_raw: mt.triple.head.raw.clone(),
            relation: mt.triple.relation,
            tail: mt.triple.tail.normalized.clone(),
            tail_raw: mt.triple.tail.raw.clone(),
            line: mt.triple.source_line,
            head_images: mt.head_images.clone(),
            tail_images: mt.tail_images.clone(),
            head_route: mt.head_route,
            tail_route: mt.tail_route,
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn graph_to_bytes(graph: &[MultimodalTriple]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_graph(graph, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_graph<R: BufRead>(source: R) -> Result<Vec<MultimodalTriple>, AssemblyError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| AssemblyError::Format { line: i + 1, message };
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.head.is_empty() || rec.tail.is_empty() {
            return Err(err("empty head or tail".into()));
        }
        out.push(MultimodalTriple {
            triple: Triple {
                head: rebuild_phrase(rec.head_raw, rec.head),
                relation: rec.relation,
                tail: rebuild_phrase(rec.tail_raw, rec.tail),
                source_line: rec.line,
            },
            head_images: rec.head_images,
            tail_images: rec.tail_images,
            head_route: rec.head_route,
            tail_route: rec.tail_route,
        });
    }
    Ok(out)
}

pub fn write_groundings<W: Write>(groundings: &[PhraseGrounding], mut sink: W) -> io::Result<()> {
    for g in groundings {
        serde_json::to_writer(&mut sink, g)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn read_groundings<R: BufRead>(source: R) -> Result<Vec<PhraseGrounding>, AssemblyError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AssemblyError::Format {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes accepted triples back as `head \t relation \t tail \t line` using
/// the raw phrase text, so that re-parsing reproduces them.
pub fn write_triples<W: Write>(triples: &[Triple], mut sink: W) -> io::Result<()> {
    for t in triples {
        writeln!(sink, "{}\t{}\t{}\t{}", t.head.raw, t.relation, t.tail.raw, t.source_line)?;
    }
    sink.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: String,
    pub uri: String,
    pub caption: Option<String>,
}

/// `image_id \t source \t uri \t caption` table of every known image.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImageManifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl ImageManifest {
    pub fn from_sources(captions: &[CaptionRecord], fetcher: Option<&LocalManifestFetcher>) -> Self {
        let mut entries = BTreeMap::new();
        for c in captions {
            entries.insert(
                c.image_id.clone(),
                ManifestEntry {
                    source: c.source.clone(),
                    uri: String::new(),
                    caption: Some(c.caption.clone()),
                },
            );
        }
        if let Some(f) = fetcher {
            for (id, uri) in f.images() {
                entries.entry(id.to_string()).or_insert_with(|| ManifestEntry {
                    source: "web".into(),
                    uri: uri.to_string(),
                    caption: None,
                });
            }
        }
        Self { entries }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Restricts the manifest to images referenced by the graph.
    pub fn restrict_to(&self, graph: &[MultimodalTriple]) -> Self {
        let used: BTreeSet<&str> = graph
            .iter()
            .flat_map(|m| m.head_images.iter().chain(&m.tail_images))
            .map(|s| s.id.as_str())
            .collect();
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(id, _)| used.contains(id.as_str()))
                .map(|(id, e)| (id.clone(), e.clone()))
                .collect(),
        }
    }

    /// Image ids in the graph that the manifest does not know.
    pub fn unresolved<'g>(&self, graph: &'g [MultimodalTriple]) -> BTreeSet<&'g str> {
        graph
            .iter()
            .flat_map(|m| m.head_images.iter().chain(&m.tail_images))
            .map(|s| s.id.as_str())
            .filter(|id| !self.contains(id))
            .collect()
    }

    pub fn write<W: Write>(&self, mut sink: W) -> io::Result<()> {
        for (id, e) in &self.entries {
            writeln!(sink, "{id}\t{}\t{}\t{}", e.source, e.uri, e.caption.as_deref().unwrap_or(""))?;
        }
        sink.flush()
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, AssemblyError> {
        let mut entries = BTreeMap::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() < 3 || f[0].is_empty() {
                return Err(AssemblyError::Format {
                    line: i + 1,
                    message: "expected image_id<TAB>source<TAB>uri[<TAB>caption]".into(),
                });
            }
            let caption = f.get(3).filter(|c| !c.is_empty()).map(|c| c.to_string());
            entries.insert(
                f[0].to_string(),
                ManifestEntry {
                    source: f[1].to_string(),
                    uri: f[2].to_string(),
                    caption,
                },
            );
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationStats {
    pub relation: Relation,
    pub triple_count: usize,
    /// Mean concreteness over the relation's unique scored phrases.
    pub avg_concreteness: Option<f64>,
    pub scored_phrases: usize,
    pub unique_heads: usize,
    pub unique_tails: usize,
    pub heads_web: usize,
    pub tails_web: usize,
    pub pct_heads_web: f64,
    pub pct_tails_web: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    /// All 19 relations in canonical order.
    pub relations: Vec<RelationStats>,
    pub triples: usize,
    pub unique_phrases: usize,
    /// Phrase-image links summed over unique phrases.
    pub total_image_links: usize,
    pub unique_images: usize,
}

pub fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Default)]
struct RelationAcc<'g> {
    triples: usize,
    heads: BTreeMap<&'g str, bool>,
    tails: BTreeMap<&'g str, bool>,
    phrases: BTreeMap<&'g str, &'g Phrase>,
}

pub fn compute_stats(graph: &[MultimodalTriple], lexicon: &ConcretenessLexicon) -> GraphStats {
    let mut acc: BTreeMap<Relation, RelationAcc<'_>> = BTreeMap::new();
    let mut phrase_images: BTreeMap<&str, &[Scored]> = BTreeMap::new();
    for mt in graph {
        let t = &mt.triple;
        let a = acc.entry(t.relation).or_default();
        a.triples += 1;
        a.heads.insert(&t.head.normalized, mt.head_route.is_web());
        a.tails.insert(&t.tail.normalized, mt.tail_route.is_web());
        a.phrases.insert(&t.head.normalized, &t.head);
        a.phrases.insert(&t.tail.normalized, &t.tail);
        phrase_images.insert(&t.head.normalized, &mt.head_images);
        phrase_images.insert(&t.tail.normalized, &mt.tail_images);
    }

    let relations = Relation::ALL
        .iter()
        .map(|&relation| {
            let Some(a) = acc.get(&relation) else {
                return RelationStats {
                    relation,
                    triple_count: 0,
                    avg_concreteness: None,
                    scored_phrases: 0,
                    unique_heads: 0,
                    unique_tails: 0,
                    heads_web: 0,
                    tails_web: 0,
                    pct_heads_web: 0.0,
                    pct_tails_web: 0.0,
                };
            };
            let scores: Vec<f64> = a.phrases.values().filter_map(|p| phrase_concreteness(p, lexicon)).collect();
            let heads_web = a.heads.values().filter(|w| **w).count();
            let tails_web = a.tails.values().filter(|w| **w).count();
            RelationStats {
                relation,
                triple_count: a.triples,
                avg_concreteness: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                scored_phrases: scores.len(),
                unique_heads: a.heads.len(),
                unique_tails: a.tails.len(),
                heads_web,
                tails_web,
                pct_heads_web: percentage(heads_web, a.heads.len()),
                pct_tails_web: percentage(tails_web, a.tails.len()),
            }
        })
        .collect();

    let unique_images: BTreeSet<&str> = phrase_images.values().flat_map(|imgs| imgs.iter().map(|s| s.id.as_str())).collect();
    GraphStats {
        relations,
        triples: graph.len(),
        unique_phrases: phrase_images.len(),
        total_image_links: phrase_images.values().map(|imgs| imgs.len()).sum(),
        unique_images: unique_images.len(),
    }
}

impl GraphStats {
    /// Three side-by-side sub-tables (average concreteness, % heads searched,
    /// % tails searched), each sorted ascending, followed by a global block.
    pub fn to_table(&self) -> String {
        let mut by_conc: Vec<&RelationStats> = self.relations.iter().collect();
        by_conc.sort_by(|a, b| match (a.avg_concreteness, b.avg_concreteness) {
            (Some(x), Some(y)) => x.total_cmp(&y).then(a.relation.cmp(&b.relation)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.relation.cmp(&b.relation),
        });
        let mut by_heads: Vec<&RelationStats> = self.relations.iter().collect();
        by_heads.sort_by(|a, b| a.pct_heads_web.total_cmp(&b.pct_heads_web).then(a.relation.cmp(&b.relation)));
        let mut by_tails: Vec<&RelationStats> = self.relations.iter().collect();
        by_tails.sort_by(|a, b| a.pct_tails_web.total_cmp(&b.pct_tails_web).then(a.relation.cmp(&b.relation)));

        let mut s = String::from("relation\tavg_concreteness\trelation\tpct_heads_searched\trelation\tpct_tails_searched\n");
        for i in 0..self.relations.len() {
            let c = by_conc[i];
            let avg = c.avg_concreteness.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{} ({})\t{}\t{}\t{:.2}\t{}\t{:.2}",
                c.relation, c.scored_phrases, avg, by_heads[i].relation, by_heads[i].pct_heads_web, by_tails[i].relation, by_tails[i].pct_tails_web
            );
        }
        s.push('\n');
        let _ = writeln!(s, "# global");
        let _ = writeln!(s, "relations\t{}", self.relations.iter().filter(|r| r.triple_count > 0).count());
        let _ = writeln!(s, "triples\t{}", self.triples);
        let _ = writeln!(s, "unique_phrases\t{}", self.unique_phrases);
        let _ = writeln!(s, "total_image_links\t{}", self.total_image_links);
        let _ = writeln!(s, "unique_images\t{}", self.unique_images);
        s
    }

    pub fn relation(&self, r: Relation) -> &RelationStats {
        self.relations.iter().find(|s| s.relation == r).expect("all relations present")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concreteness::Stopwords;
    use crate::embedding::Embedding;
    use crate::kg::parse_triples;
    use crate::web::{FetchError, FetchedImage, WebQuery};
    use std::sync::Mutex;

    struct CountingFetcher {
        inner: LocalManifestFetcher,
        calls: Mutex<Vec<String>>,
    }

    impl ImageFetcher for CountingFetcher {
        fn fetch(&self, q: &WebQuery) -> Result<Vec<FetchedImage>, FetchError> {
            self.calls.lock().unwrap().push(q.text.clone());
            self.inner.fetch(q)
        }
    }

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn shared_phrase_is_grounded_once() {
        let (triples, _) = parse_triples("PersonX relaxes\tIntent\tto rest\nPersonX relaxes\tWant\tto sleep\n".as_bytes()).unwrap();
        let lex = ConcretenessLexicon::new(Stopwords::english());
        let mut text = EmbeddingStore::new(2).unwrap();
        for p in ["person relaxes", "to rest", "to sleep"] {
            text.insert(p, &emb(&[1.0, 0.0])).unwrap();
        }
        let mut web_store = EmbeddingStore::new(2).unwrap();
        web_store.insert("w1", &emb(&[1.0, 0.1])).unwrap();
        let mut manifest = LocalManifestFetcher::default();
        manifest.insert("person relaxes", "w1", "http://w1");
        let fetcher = CountingFetcher {
            inner: manifest.with_embeddings(web_store),
            calls: Mutex::new(Vec::new()),
        };
        let index = NounIndex::empty(2).unwrap();
        let images = EmbeddingStore::new(2).unwrap();
        let res = GroundingResources {
            lexicon: &lex,
            index: &index,
            text_store: &text,
            image_store: &images,
            fetcher: &fetcher,
        };
        let out = ground_all(&triples, &res, &GroundingParams::default());
        let calls = fetcher.calls.lock().unwrap();
        assert_eq!(calls.iter().filter(|c| *c == "person relaxes").count(), 1);
        assert_eq!(calls.len(), 3);
        assert_eq!(out.graph[0].head_images, out.graph[1].head_images);
        assert_eq!(out.graph[0].head_images[0].id, "w1");
        // unrated phrases all go to the web; two tails find nothing
        assert_eq!(out.skips.len(), 2);
        assert_eq!(out.stats.unique_phrases, 3);
    }

    #[test]
    fn empty_graph_stats_are_zero() {
        let lex = ConcretenessLexicon::new(Stopwords::english());
        let stats = compute_stats(&[], &lex);
        assert_eq!(stats.triples, 0);
        assert_eq!(stats.unique_phrases, 0);
        assert_eq!(stats.relations.len(), 19);
        assert!(stats.relations.iter().all(|r| r.pct_heads_web == 0.0 && r.avg_concreteness.is_none()));
        let table = stats.to_table();
        assert_eq!(table.lines().count(), 1 + 19 + 1 + 6);
    }

    #[test]
    fn graph_record_missing_field_reports_line() {
        let good = r#"{"head":"a","head_raw":"a","relation":"Intent","tail":"b","tail_raw":"b","line":1,"head_images":[],"tail_images":[],"head_route":{"kind":"web_search","score":null,"escalated":false},"tail_route":{"kind":"web_search","score":null,"escalated":false}}"#;
        let bad = good.replace(r#""tail_images":[],"#, "");
        let src = format!("{good}\n{good}\n{bad}\n");
        match read_graph(src.as_bytes()) {
            Err(AssemblyError::Format { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("tail_images"), "{message}");
            }
            other => panic!("unexpected {:?}", other.map(|g| g.len())),
        }
        assert!(read_graph("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let caps = vec![CaptionRecord::new("i1", "coco", "a dog"), CaptionRecord::new("i2", "vist", "a cat")];
        let m = ImageManifest::from_sources(&caps, None);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(ImageManifest::read(&buf[..]).unwrap(), m);
    }
}

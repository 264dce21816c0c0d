//! Brute-force vs noun-indexed similarity counts on a synthetic corpus.

use std::fmt;
use std::time::{Duration, Instant};

use crate::embedding::{brute_force_topk, SimCounter};
use crate::noun_index::{ground_phrase_indexed, IndexError, IndexedParams, LexiconTagger, NounIndex};
use crate::synth::{pruning_corpus, PruningCorpusConfig};

/// Reduction factor reported for the original large-scale build.
pub const PUBLISHED_REDUCTION: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub corpus: PruningCorpusConfig,
    pub prefilter_m: usize,
    pub embedded_nouns: usize,
    pub queries: usize,
    pub brute_sims_per_query: u64,
    pub brute_sims_total: u64,
    pub indexed_sims_total: u64,
    /// Per query: (indexed sims, candidate count).
    pub per_query: Vec<(u64, usize)>,
    pub max_candidates: usize,
    pub mean_candidates: f64,
    /// Fraction of queries whose indexed top-1 equals the brute-force top-1.
    pub top1_agreement: f64,
    pub brute_elapsed: Duration,
    pub indexed_elapsed: Duration,
}

impl BenchReport {
    pub fn reduction_factor(&self) -> f64 {
        self.brute_sims_total as f64 / self.indexed_sims_total.max(1) as f64
    }
}

pub fn run_pruning_bench(corpus_cfg: &PruningCorpusConfig, params: IndexedParams, shards: usize) -> Result<BenchReport, IndexError> {
    let corpus = pruning_corpus(corpus_cfg);
    let (index, _) = NounIndex::build(&corpus.captions, &LexiconTagger::english(), &corpus.noun_store, shards)?;

    let mut brute = SimCounter::new();
    let started = Instant::now();
    let brute_top: Vec<Option<String>> = corpus
        .queries
        .iter()
        .map(|(_, q)| {
            brute_force_topk(&corpus.image_store, q, 1, &mut brute)
                .map(|r| r.into_iter().find(|s| s.score >= params.sim_threshold).map(|s| s.id))
        })
        .collect::<Result<_, _>>()?;
    let brute_elapsed = started.elapsed();

    let started = Instant::now();
    let mut indexed_total = 0;
    let mut per_query = Vec::with_capacity(corpus.queries.len());
    let mut agree = 0usize;
    for ((id, q), expected) in corpus.queries.iter().zip(&brute_top) {
        let mut c = SimCounter::new();
        let r = ground_phrase_indexed(id, q, &index, &corpus.image_store, params, &mut c)?;
        indexed_total += r.sims_used;
        per_query.push((r.sims_used, r.candidates));
        if r.ranked.first().map(|s| &s.id) == expected.as_ref() {
            agree += 1;
        }
    }
    let indexed_elapsed = started.elapsed();

    let n = corpus.queries.len().max(1);
    Ok(BenchReport {
        corpus: *corpus_cfg,
        prefilter_m: params.prefilter_m,
        embedded_nouns: index.embedded_noun_count(),
        queries: corpus.queries.len(),
        brute_sims_per_query: corpus.image_store.len() as u64,
        brute_sims_total: brute.count(),
        indexed_sims_total: indexed_total,
        max_candidates: per_query.iter().map(|p| p.1).max().unwrap_or(0),
        mean_candidates: per_query.iter().map(|p| p.1 as f64).sum::<f64>() / n as f64,
        per_query,
        top1_agreement: agree as f64 / n as f64,
        brute_elapsed,
        indexed_elapsed,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images\t{}", self.corpus.images)?;
        writeln!(f, "embedded_nouns\t{}", self.embedded_nouns)?;
        writeln!(f, "prefilter_m\t{}", self.prefilter_m)?;
        writeln!(f, "queries\t{}", self.queries)?;
        writeln!(f, "brute_force_sims_per_query\t{}", self.brute_sims_per_query)?;
        writeln!(f, "indexed_sims_per_query_mean\t{:.1}", self.indexed_sims_total as f64 / self.queries.max(1) as f64)?;
        writeln!(f, "candidates_mean\t{:.1}", self.mean_candidates)?;
        writeln!(f, "candidates_max\t{}", self.max_candidates)?;
        writeln!(f, "top1_agreement\t{:.4}", self.top1_agreement)?;
        writeln!(f, "brute_force_ms\t{:.2}", self.brute_elapsed.as_secs_f64() * 1e3)?;
        writeln!(f, "indexed_ms\t{:.2}", self.indexed_elapsed.as_secs_f64() * 1e3)?;
        write!(
            f,
            "reduction_factor\t{:.1}x (published large-scale figure: ~{PUBLISHED_REDUCTION:.0}x)",
            self.reduction_factor()
        )
    }
}

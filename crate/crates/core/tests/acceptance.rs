//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use mmground_core::assembly::{compute_stats, graph_to_bytes, read_graph, AssemblyError, MultimodalTriple};
use mmground_core::bench::{run_pruning_bench, PUBLISHED_REDUCTION};
use mmground_core::concreteness::{route, ConcretenessLexicon, Route, RouteKind, Stopwords};
use mmground_core::downstream::{retrieve_for_vqa, score_phrase, PhraseEntry, PhraseTable};
use mmground_core::embedding::{
    brute_force_topk, cosine, cosine_slices, read_store, store_to_bytes, Embedding, EmbeddingError, EmbeddingStore, SimCounter,
};
use mmground_core::kg::{normalize_phrase, parse_triples, Phrase, Relation, Triple};
use mmground_core::noun_index::{extract_nouns, ground_phrase_indexed, IndexedParams, LexiconTagger, NounIndex};
use mmground_core::pipeline::{demo_config, run_end_to_end};
use mmground_core::rank::{threshold_top_k, Scored};
use mmground_core::synth::{demo_fixture, planted_target_corpus, random_corpus, rng, PruningCorpusConfig};
use mmground_core::web::{ground_phrase_web, FetchedImage};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian_emb(r: &mut impl Rng, dim: usize) -> Embedding {
    Embedding::new((0..dim).map(|_| r.sample::<f32, _>(StandardNormal)).collect()).unwrap()
}

// 1
fn pruning_factor() -> Outcome {
    let cfg = PruningCorpusConfig::default();
    let params = IndexedParams::default();
    let started = Instant::now();
    let report = run_pruning_bench(&cfg, params, 4).map_err(|e| e.to_string())?;
    ensure(cfg.images == 10_000 && cfg.vocab <= 200 && params.prefilter_m == 20, || "wrong corpus shape".into())?;
    ensure(report.brute_sims_per_query == 10_000, || format!("brute sims/query {}", report.brute_sims_per_query))?;
    ensure(report.brute_sims_total == 10_000 * report.queries as u64, || "brute total mismatch".into())?;
    for (sims, cands) in &report.per_query {
        ensure(*sims <= 200 + *cands as u64, || format!("indexed sims {sims} > 200 + {cands}"))?;
        ensure(*sims == (report.embedded_nouns + cands) as u64, || "accounting mismatch".into())?;
    }
    ensure(report.max_candidates <= 150, || format!("candidate set {} > 150", report.max_candidates))?;
    let factor = report.reduction_factor();
    ensure(factor >= 50.0, || format!("factor {factor:.1}x < 50x"))?;
    Ok(format!(
        "factor {factor:.1}x (published ~{PUBLISHED_REDUCTION:.0}x), mean candidates {:.1}, top-1 agreement {:.3}, {:.1}s",
        report.mean_candidates,
        report.top1_agreement,
        started.elapsed().as_secs_f64()
    ))
}

// 2
fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let corpus = random_corpus(2000, 100, 1000, 32, 11);
    let tagger = LexiconTagger::english();
    let (index, _) = NounIndex::build(&corpus.captions, &tagger, &corpus.noun_store, 4).map_err(|e| e.to_string())?;
    let params = IndexedParams::default();

    // Independent postings straight from the captions.
    let mut postings: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for c in &corpus.captions {
        for n in extract_nouns(&c.caption, &tagger) {
            postings.entry(n).or_default().insert(&c.image_id);
        }
    }
    let mut nonempty = 0;
    for (qid, q) in &corpus.queries {
        let mut c = SimCounter::new();
        let got = ground_phrase_indexed(qid, q, &index, &corpus.image_store, params, &mut c).map_err(|e| e.to_string())?;

        let mut nouns: Vec<(f32, &str)> = corpus
            .noun_store
            .iter()
            .map(|(n, v)| (cosine_slices(q.values(), v, &mut SimCounter::new()).unwrap(), n))
            .collect();
        nouns.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let cands: BTreeSet<&str> = nouns
            .iter()
            .take(params.prefilter_m)
            .filter_map(|(_, n)| postings.get(*n))
            .flatten()
            .copied()
            .collect();
        let restricted = corpus.image_store.subset(cands.iter().copied());
        let brute = brute_force_topk(&restricted, q, restricted.len(), &mut SimCounter::new()).unwrap();
        let mut expected: Vec<Scored> = brute.into_iter().filter(|s| s.score >= params.sim_threshold).collect();
        expected.truncate(params.retain_k);

        ensure(got.ranked == expected, || format!("{qid}: indexed result differs from restricted brute force"))?;
        ensure(got.sims_used == (corpus.noun_store.len() + cands.len()) as u64, || format!("{qid}: sims_used"))?;
        nonempty += usize::from(!expected.is_empty());
    }
    Ok(format!("1000/1000 exact, {nonempty} non-empty, {:.1}s", started.elapsed().as_secs_f64()))
}

// 3
fn planted_recall() -> Outcome {
    let trials = 1000;
    let mut hits = 0;
    let tagger = LexiconTagger::english();
    for seed in 0..trials {
        let (corpus, _target) = planted_target_corpus(300, 60, 32, seed);
        let (index, _) = NounIndex::build(&corpus.captions, &tagger, &corpus.noun_store, 1).map_err(|e| e.to_string())?;
        let (qid, q) = &corpus.queries[0];
        let brute = brute_force_topk(&corpus.image_store, q, 1, &mut SimCounter::new()).unwrap();
        let got = ground_phrase_indexed(qid, q, &index, &corpus.image_store, IndexedParams::default(), &mut SimCounter::new())
            .map_err(|e| e.to_string())?;
        if got.ranked.first().map(|s| &s.id) == brute.first().map(|s| &s.id) {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    ensure(rate >= 0.99, || format!("recall {rate:.3} < 0.99"))?;
    Ok(format!("top-1 agreement {hits}/{trials}"))
}

fn fixture_lexicon() -> ConcretenessLexicon {
    ConcretenessLexicon::load(&fixtures().join("lexicon.tsv"), Stopwords::english()).expect("fixture lexicon")
}

// 4
fn routing_fidelity() -> Outcome {
    let lex = fixture_lexicon();
    let text = std::fs::read_to_string(fixtures().join("routing_phrases.tsv")).map_err(|e| e.to_string())?;
    let mut n = 0;
    let mut web = 0;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let mut f = line.split('\t');
        let (Some(p), Some(score), Some(expected)) = (f.next(), f.next(), f.next()) else {
            return Err(format!("bad fixture line {line:?}"));
        };
        let phrase = normalize_phrase(p).map_err(|e| e.to_string())?;
        let r = route(&phrase, &lex, 4.0);
        let want_score = (score != "NA").then(|| score.parse::<f64>().unwrap());
        ensure(r.score == want_score, || format!("{p:?}: score {:?} != {want_score:?}", r.score))?;
        let kind = match expected {
            "embedding_match" => RouteKind::EmbeddingMatch,
            _ => RouteKind::WebSearch,
        };
        ensure(r.kind == kind, || format!("{p:?}: routed {:?}, expected {kind:?}", r.kind))?;
        // A phrase concrete enough at a higher threshold stays concrete at every lower one.
        let kinds: Vec<RouteKind> = [3.0, 3.5, 4.0, 4.5].iter().map(|t| route(&phrase, &lex, *t).kind).collect();
        for w in kinds.windows(2) {
            ensure(!(w[0] == RouteKind::WebSearch && w[1] == RouteKind::EmbeddingMatch), || format!("{p:?}: not monotone"))?;
        }
        n += 1;
        web += usize::from(r.is_web());
    }
    ensure(n == 200, || format!("expected 200 fixture phrases, found {n}"))?;
    Ok(format!("200/200 agree ({web} web), monotone over thresholds 3.0..4.5"))
}

// 5
fn threshold_retention() -> Outcome {
    let mut r = rng(5);
    let (threshold, k) = (0.15f32, 15usize);
    let mut retained = 0usize;
    for case in 0..10_000 {
        let n = r.random_range(0..80);
        let dim = r.random_range(2..12);
        let phrase = gaussian_emb(&mut r, dim);
        let ranked = if case % 2 == 0 {
            let fetched: Vec<FetchedImage> = (0..n)
                .map(|i| FetchedImage {
                    image_id: format!("w{i}"),
                    uri: String::new(),
                    embedding: r.random_bool(0.9).then(|| gaussian_emb(&mut r, dim)),
                })
                .collect();
            ground_phrase_web("p", &phrase, &fetched, threshold, k, &mut SimCounter::new()).unwrap().ranked
        } else {
            let grid = [-1.0, 0.0, 0.1, 0.149_999, 0.15, 0.150_001, 0.5, 1.0];
            let items = (0..n)
                .map(|i| {
                    let s = if r.random_bool(0.3) { *grid.choose(&mut r).unwrap() } else { r.random_range(-1.0..=1.0) };
                    Scored::new(format!("c{i}"), s)
                })
                .collect();
            threshold_top_k(items, threshold, k)
        };
        ensure(ranked.len() <= k, || format!("case {case}: {} > retain_k", ranked.len()))?;
        ensure(ranked.iter().all(|s| s.score >= threshold), || format!("case {case}: score below threshold"))?;
        ensure(
            ranked.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id)),
            || format!("case {case}: not ranked"),
        )?;
        retained += ranked.len();
    }
    Ok(format!("10000 lists, {retained} retained images, none below 0.15 or beyond 15"))
}

fn stats_graph(lex: &ConcretenessLexicon) -> Vec<MultimodalTriple> {
    let (triples, report) = parse_triples(std::fs::read(fixtures().join("stats_triples.tsv")).unwrap().as_slice()).unwrap();
    assert_eq!(report.total(), 0);
    triples
        .into_iter()
        .map(|t| MultimodalTriple {
            head_route: route(&t.head, lex, 4.0),
            tail_route: route(&t.tail, lex, 4.0),
            head_images: Vec::new(),
            tail_images: Vec::new(),
            triple: t,
        })
        .collect()
}

// 6
fn stats_shape() -> Outcome {
    let lex = fixture_lexicon();
    let graph = stats_graph(&lex);
    ensure(graph.len() == 20, || format!("fixture has {} triples", graph.len()))?;
    let stats = compute_stats(&graph, &lex);
    let text = std::fs::read_to_string(fixtures().join("stats_expected.tsv")).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        let rel: Relation = f[0].parse().map_err(|_| format!("bad relation {}", f[0]))?;
        let s = stats.relation(rel);
        let avg = (f[2] != "NA").then(|| f[2].parse::<f64>().unwrap());
        let num = |i: usize| f[i].parse::<usize>().unwrap();
        ensure(s.triple_count == num(1), || format!("{rel}: triples {}", s.triple_count))?;
        ensure(s.avg_concreteness == avg, || format!("{rel}: avg {:?} != {avg:?}", s.avg_concreteness))?;
        ensure(s.scored_phrases == num(3) && s.unique_heads == num(4) && s.unique_tails == num(5), || format!("{rel}: counts"))?;
        ensure(s.pct_heads_web == f[6].parse::<f64>().unwrap(), || format!("{rel}: pct heads {}", s.pct_heads_web))?;
        ensure(s.pct_tails_web == f[7].parse::<f64>().unwrap(), || format!("{rel}: pct tails {}", s.pct_tails_web))?;
        seen.insert(rel);
    }
    for s in &stats.relations {
        if !seen.contains(&s.relation) {
            ensure(s.triple_count == 0 && s.avg_concreteness.is_none(), || format!("{}: should be empty", s.relation))?;
        }
    }

    let table = stats.to_table();
    let lines: Vec<&str> = table.lines().collect();
    ensure(lines[0].split('\t').count() == 6, || "header is not three sub-tables".into())?;
    let rows: Vec<Vec<&str>> = lines[1..20].iter().map(|l| l.split('\t').collect()).collect();
    ensure(rows.iter().all(|r| r.len() == 6), || "row width".into())?;
    for col in 0..3 {
        let names: BTreeSet<&str> = rows.iter().map(|r| r[2 * col].split(' ').next().unwrap()).collect();
        ensure(names.len() == 19, || format!("sub-table {col} does not list all relations"))?;
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[2 * col + 1].parse().ok()).collect();
        ensure(vals.windows(2).all(|w| w[0] <= w[1]), || format!("sub-table {col} not sorted"))?;
    }
    ensure(lines[20].is_empty() && lines[21] == "# global", || "global block".into())?;
    Ok(format!("{} relations match the oracle exactly; table has 3 sorted sub-tables", seen.len()))
}

fn f64_cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

// 7
fn downstream_scoring() -> Outcome {
    let mut r = rng(77);
    for case in 0..100 {
        let dim = r.random_range(4..24);
        let n = r.random_range(1..50);
        let entries: Vec<PhraseEntry> = (0..n)
            .map(|i| PhraseEntry {
                phrase_id: format!("p{i:03}"),
                text: String::new(),
                phrase_emb: gaussian_emb(&mut r, dim),
                associated_images: Vec::new(),
            })
            .collect();
        let img = gaussian_emb(&mut r, dim);
        let q = gaussian_emb(&mut r, dim);
        let k = r.random_range(1..n + 3);
        let table = PhraseTable::new(entries.clone());
        let got = retrieve_for_vqa(&table, &img, &q, k).map_err(|e| e.to_string())?;

        let mut oracle: Vec<(f64, &str)> = entries
            .iter()
            .map(|e| (f64_cos(img.values(), e.phrase_emb.values()) + f64_cos(q.values(), e.phrase_emb.values()), e.phrase_id.as_str()))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        oracle.truncate(k);
        let got_ids: Vec<&str> = got.ranked_phrases.iter().map(|s| s.id.as_str()).collect();
        let want_ids: Vec<&str> = oracle.iter().map(|o| o.1).collect();
        ensure(got_ids == want_ids, || format!("case {case}: ranking differs"))?;
        for (g, o) in got.ranked_phrases.iter().zip(&oracle) {
            ensure((g.score as f64 - o.0).abs() < 1e-5, || format!("case {case}: score {} vs {}", g.score, o.0))?;
        }

        // Additivity and positive-scale invariance.
        let p = &entries[0].phrase_emb;
        let mut c = SimCounter::new();
        let s = score_phrase(&img, &q, p).unwrap();
        let sum = cosine(&img, p, &mut c).unwrap() + cosine(&q, p, &mut c).unwrap();
        ensure(s == sum, || format!("case {case}: not additive"))?;
        let (a, b, d) = (r.random_range(0.01..100.0), r.random_range(0.01..100.0), r.random_range(0.01..100.0));
        let scaled = score_phrase(&img.scaled(a), &q.scaled(b), &p.scaled(d)).unwrap();
        ensure((scaled - s).abs() < 1e-5, || format!("case {case}: scale changed score"))?;
        let q_only = score_phrase(&q, &q, p).unwrap();
        ensure((q_only - 2.0 * cosine(&q, p, &mut c).unwrap()).abs() < 1e-6, || "identical inputs".into())?;
    }
    Ok("100/100 rankings match the two-term oracle; additive and scale invariant".into())
}

fn random_text(r: &mut impl Rng, max: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'z', ' ', 'é', '字', '"', '\\', '_', 'Q', '0', '\u{1F600}'];
    let n = r.random_range(1..=max);
    (0..n).map(|_| *ALPHABET.choose(r).unwrap()).collect()
}

fn random_phrase(r: &mut impl Rng) -> Phrase {
    loop {
        if let Ok(p) = normalize_phrase(&random_text(r, 16)) {
            return p;
        }
    }
}

fn random_route(r: &mut impl Rng) -> Route {
    Route {
        kind: if r.random_bool(0.5) { RouteKind::WebSearch } else { RouteKind::EmbeddingMatch },
        score: r.random_bool(0.7).then(|| r.random_range(1.0..=5.0)),
        escalated: r.random_bool(0.2),
    }
}

fn random_images(r: &mut impl Rng) -> Vec<Scored> {
    (0..r.random_range(0..6))
        .map(|_| Scored::new(random_text(r, 10), r.random_range(-1.0f32..=1.0)))
        .collect()
}

// 8
fn persistence() -> Outcome {
    let mut r = rng(88);
    for case in 0..1000 {
        let dim = r.random_range(1..17);
        let mut store = EmbeddingStore::new(dim).unwrap();
        for i in 0..r.random_range(0..20) {
            let id = format!("{i}:{}", random_text(&mut r, 12));
            let v: Vec<f32> = (0..dim).map(|_| f32::from_bits(r.random())).collect();
            store.insert(id, &Embedding::new(v).unwrap()).unwrap();
        }
        let bytes = store_to_bytes(&store);
        let back = read_store(bytes.as_slice()).map_err(|e| format!("EMB1 case {case}: {e}"))?;
        ensure(store_to_bytes(&back) == bytes, || format!("EMB1 case {case}: bytes differ"))?;

        let graph: Vec<MultimodalTriple> = (0..r.random_range(0..8))
            .map(|line| MultimodalTriple {
                triple: Triple {
                    head: random_phrase(&mut r),
                    relation: *Relation::ALL.choose(&mut r).unwrap(),
                    tail: random_phrase(&mut r),
                    source_line: line + 1,
                },
                head_images: random_images(&mut r),
                tail_images: random_images(&mut r),
                head_route: random_route(&mut r),
                tail_route: random_route(&mut r),
            })
            .collect();
        let bytes = graph_to_bytes(&graph);
        let back = read_graph(bytes.as_slice()).map_err(|e| format!("graph case {case}: {e}"))?;
        ensure(back == graph, || format!("graph case {case}: values differ"))?;
        ensure(graph_to_bytes(&back) == bytes, || format!("graph case {case}: bytes differ"))?;
    }

    // Corrupted fixtures.
    let mut store = EmbeddingStore::new(2).unwrap();
    store.insert("ab", &Embedding::new(vec![1.0, 2.0]).unwrap()).unwrap();
    store.insert("cd", &Embedding::new(vec![3.0, 4.0]).unwrap()).unwrap();
    let bytes = store_to_bytes(&store);
    // header 16, record "ab" 4+2+8 = 14 -> second record starts at 30, its vector at 36
    let offset = |b: &[u8]| match read_store(b) {
        Err(EmbeddingError::Format { offset, .. }) => Some(offset),
        _ => None,
    };
    ensure(offset(&bytes[..40]) == Some(36), || format!("truncated EMB1 offset {:?}", offset(&bytes[..40])))?;
    let mut bad = bytes.clone();
    bad[0] = b'X';
    ensure(offset(&bad) == Some(0), || "bad magic offset".into())?;
    let mut long = bytes.clone();
    long.push(0);
    ensure(offset(&long) == Some(bytes.len() as u64), || "trailing bytes offset".into())?;

    let mut text = String::from_utf8(graph_to_bytes(&stats_graph(&fixture_lexicon())[..4])).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = lines[2].replacen("\"tail_images\"", "\"tail_imgs\"", 1);
    text = lines.join("\n");
    match read_graph(text.as_bytes()) {
        Err(AssemblyError::Format { line: 3, .. }) => {}
        other => return Err(format!("corrupted graph: {:?}", other.map(|g| g.len()))),
    }
    Ok("1000 EMB1 + 1000 graph round trips byte-exact; corrupt offsets 36/0/tail and graph line 3 reported".into())
}

// 9
fn determinism() -> Outcome {
    let run = |workers: usize| -> Result<Vec<u8>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        demo_fixture(2024).write_to(dir.path()).map_err(|e| e.to_string())?;
        let mut cfg = demo_config(dir.path());
        cfg.worker_bound = workers;
        let out = run_end_to_end(&cfg).map_err(|e| e.to_string())?;
        Ok(graph_to_bytes(&out.graph))
    };
    let a = run(4)?;
    let b = run(4)?;
    let c = run(1)?;
    ensure(!a.is_empty(), || "empty graph".into())?;
    ensure(a == b, || "two runs differ".into())?;
    ensure(a == c, || "worker count changes output".into())?;
    Ok(format!("graph files identical ({} bytes, 1 and 4 workers)", a.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("pruning-factor", pruning_factor),
        ("oracle-equivalence", oracle_equivalence),
        ("planted-recall", planted_recall),
        ("routing-fidelity", routing_fidelity),
        ("threshold-retention", threshold_retention),
        ("stats-shape", stats_shape),
        ("downstream-scoring", downstream_scoring),
        ("persistence", persistence),
        ("end-to-end-determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

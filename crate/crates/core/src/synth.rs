//! Seeded synthetic data: a bag-of-words hash encoder that stands in for a
//! real joint encoder, corpora for pruning and equivalence experiments, and
//! a small end-to-end demo fixture.
//!
//! Everything here is deterministic in the seed.

use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::concreteness::Stopwords;
use crate::embedding::{brute_force_topk, save_store, Embedding, EmbeddingStore, SimCounter};
use crate::kg::{normalize_phrase, parse_triples};
use crate::assembly::unique_phrases;
use crate::noun_index::{lemmatize_noun, shipped_nouns, CaptionRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a, used to derive stable per-word seeds.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x as f64 / n) as f32).collect()
}

fn add_scaled(a: &mut [f32], b: &[f32], s: f32) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

/// Gaussian vector of expected norm `scale`.
fn noise(rng: &mut impl Rng, dim: usize, scale: f32) -> Vec<f32> {
    let f = scale / (dim as f32).sqrt();
    gaussian(rng, dim).into_iter().map(|x| x * f).collect()
}

/// Deterministic toy text encoder: every content word maps to a seeded
/// Gaussian vector and a text is the normalized sum of its words.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    pub dim: usize,
    pub seed: u64,
    stopwords: Stopwords,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            stopwords: Stopwords::english(),
        }
    }

    pub fn word_vector(&self, word: &str) -> Vec<f32> {
        gaussian(&mut rng(fnv1a(word) ^ self.seed), self.dim)
    }

    pub fn encode_raw(&self, text: &str) -> Option<Vec<f32>> {
        let lowered = text.to_lowercase();
        let mut sum = vec![0f32; self.dim];
        let mut any = false;
        for tok in lowered.split(|c: char| !c.is_alphabetic()).filter(|t| !t.is_empty()) {
            if self.stopwords.contains(tok) {
                continue;
            }
            add_scaled(&mut sum, &self.word_vector(&lemmatize_noun(tok)), 1.0);
            any = true;
        }
        any.then(|| unit(sum))
    }

    pub fn encode(&self, text: &str) -> Option<Embedding> {
        self.encode_raw(text).map(|v| Embedding::new(v).expect("dim > 0"))
    }
}

/// Nouns from the shipped list that singularize to themselves.
pub fn vocabulary(n: usize, seed: u64) -> Vec<String> {
    let mut nouns: Vec<&str> = shipped_nouns().filter(|w| lemmatize_noun(w) == *w && w.len() > 2).collect();
    nouns.shuffle(&mut rng(seed));
    nouns.into_iter().take(n).map(str::to_string).collect()
}

pub fn caption_of(nouns: &[&str]) -> String {
    match nouns {
        [] => "there is nothing here".into(),
        [a] => format!("there is a {a} here"),
        [a, rest @ ..] => format!("there is a {a} next to a {}", rest.join(" and a ")),
    }
}

/// Shape of the long-tail corpus used to measure pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruningCorpusConfig {
    pub images: usize,
    pub vocab: usize,
    /// Rare nouns that queries are about; the rest is background vocabulary.
    pub focus_nouns: usize,
    /// Images whose caption mentions a focus noun.
    pub focus_images: usize,
    pub queries: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for PruningCorpusConfig {
    fn default() -> Self {
        Self {
            images: 10_000,
            vocab: 50,
            focus_nouns: 25,
            focus_images: 125,
            queries: 200,
            dim: 64,
            seed: 7,
        }
    }
}

pub struct SyntheticCorpus {
    pub captions: Vec<CaptionRecord>,
    pub noun_store: EmbeddingStore,
    pub image_store: EmbeddingStore,
    pub queries: Vec<(String, Embedding)>,
}

/// Long-tail corpus: background nouns cluster around one direction and fill
/// most captions; focus nouns cluster around an orthogonal direction and are
/// rare. Queries sit near focus nouns.
pub fn pruning_corpus(cfg: &PruningCorpusConfig) -> SyntheticCorpus {
    assert!(cfg.focus_nouns < cfg.vocab && cfg.dim > 4 && cfg.focus_nouns > 0);
    let mut r = rng(cfg.seed);
    let vocab = vocabulary(cfg.vocab, cfg.seed);
    let (focus, background) = vocab.split_at(cfg.focus_nouns);

    let clustered = |r: &mut ChaCha8Rng, axis: usize| {
        let mut spread = unit(gaussian(r, cfg.dim));
        spread[0] = 0.0;
        spread[1] = 0.0;
        let mut v: Vec<f32> = unit(spread).into_iter().map(|x| 0.6 * x).collect();
        v[axis] = 0.8;
        unit(v)
    };
    let mut noun_vecs = std::collections::HashMap::new();
    let mut noun_store = EmbeddingStore::new(cfg.dim).unwrap();
    for (i, n) in vocab.iter().enumerate() {
        let v = clustered(&mut r, if i < cfg.focus_nouns { 0 } else { 1 });
        noun_store.insert(n.as_str(), &Embedding::new(v.clone()).unwrap()).unwrap();
        noun_vecs.insert(n.as_str(), v);
    }

    let mut captions = Vec::with_capacity(cfg.images);
    let mut image_store = EmbeddingStore::new(cfg.dim).unwrap();
    for i in 0..cfg.images {
        let mut nouns: Vec<&str> = Vec::new();
        if i < cfg.focus_images {
            nouns.push(&focus[i % focus.len()]);
            nouns.push(&background[r.random_range(0..background.len())]);
        } else {
            let a = r.random_range(0..background.len());
            let mut b = r.random_range(0..background.len());
            if b == a {
                b = (b + 1) % background.len();
            }
            nouns.push(&background[a]);
            nouns.push(&background[b]);
        }
        let mut v = noise(&mut r, cfg.dim, 0.3);
        for n in &nouns {
            add_scaled(&mut v, &noun_vecs[n], 1.0);
        }
        let id = format!("img{i:05}");
        image_store.insert(id.as_str(), &Embedding::new(unit(v)).unwrap()).unwrap();
        captions.push(CaptionRecord::new(id, "synthetic", caption_of(&nouns)));
    }

    let queries = (0..cfg.queries)
        .map(|q| {
            let mut v = noise(&mut r, cfg.dim, 0.3);
            add_scaled(&mut v, &noun_vecs[focus[q % focus.len()].as_str()], 1.0);
            (format!("q{q:04}"), Embedding::new(unit(v)).unwrap())
        })
        .collect();

    SyntheticCorpus {
        captions,
        noun_store,
        image_store,
        queries,
    }
}

/// Unstructured corpus: random noun and image vectors, 1 to 3 random nouns
/// per caption, random queries.
pub fn random_corpus(images: usize, vocab: usize, queries: usize, dim: usize, seed: u64) -> SyntheticCorpus {
    let mut r = rng(seed);
    let vocab = vocabulary(vocab, seed ^ 0x5eed);
    let mut noun_store = EmbeddingStore::new(dim).unwrap();
    for n in &vocab {
        noun_store.insert(n.as_str(), &Embedding::new(gaussian(&mut r, dim)).unwrap()).unwrap();
    }
    let mut captions = Vec::with_capacity(images);
    let mut image_store = EmbeddingStore::new(dim).unwrap();
    for i in 0..images {
        let k = r.random_range(1..=3);
        let nouns: Vec<&str> = vocab.choose_multiple(&mut r, k).map(String::as_str).collect();
        let id = format!("img{i:05}");
        image_store.insert(id.as_str(), &Embedding::new(gaussian(&mut r, dim)).unwrap()).unwrap();
        captions.push(CaptionRecord::new(id, "random", caption_of(&nouns)));
    }
    let queries = (0..queries)
        .map(|q| (format!("q{q:04}"), Embedding::new(gaussian(&mut r, dim)).unwrap()))
        .collect();
    SyntheticCorpus {
        captions,
        noun_store,
        image_store,
        queries,
    }
}

/// A random corpus plus one planted target image: its caption contains the
/// query's top-1 noun and its embedding is a small perturbation of the
/// query. Returns the corpus (with a single query) and the target id.
pub fn planted_target_corpus(images: usize, vocab: usize, dim: usize, seed: u64) -> (SyntheticCorpus, String) {
    let mut corpus = random_corpus(images, vocab, 1, dim, seed);
    let mut r = rng(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let (_, query) = &corpus.queries[0];
    let top_noun = brute_force_topk(&corpus.noun_store, query, 1, &mut SimCounter::new()).unwrap()[0].id.clone();
    let other = corpus.noun_store.ids()[r.random_range(0..corpus.noun_store.len())].clone();
    let mut v = query.values().to_vec();
    let n = query.norm() as f32;
    add_scaled(&mut v, &noise(&mut r, dim, 0.1 * n), 1.0);
    let target = "target".to_string();
    corpus.image_store.insert(target.as_str(), &Embedding::new(v).unwrap()).unwrap();
    let nouns: Vec<&str> = if other == top_noun { vec![&top_noun] } else { vec![&other, &top_noun] };
    corpus.captions.push(CaptionRecord::new(target.as_str(), "planted", caption_of(&nouns)));
    (corpus, target)
}

const DEMO_TRIPLES: &str = "\
# demo commonsense triples
PersonX rows the boat\tIntent\tto relax on the lake
PersonX rows the boat\txWant\tto drink water
PersonX rows the boat\tisAfter\tPersonX walks to the lake
PersonX rows the boat\txNeed\ta paddle
PersonX rows the boat\txReact\thappy
PersonX rows the boat\toReact\trelieved
PersonX rows the boat\txEffect\tgets tired
PersonX rows the boat\txAttr\tstrong
PersonX bakes a cake\txIntent\tto celebrate
PersonX bakes a cake\txNeed\tan oven
PersonX bakes a cake\tHasSubEvent\tmix the flour
PersonX bakes a cake\tisBefore\tPersonX eats the cake
PersonX bakes a cake\tHinderedBy\tPersonX has no sugar
PersonX bakes a cake\tCauses\tthe kitchen smells sweet
PersonX bakes a cake\txReason\tit is a birthday
PersonX bakes a cake\txAttr\tgenerous
PersonX walks the dog\txIntent\tto exercise
PersonX walks the dog\txNeed\ta leash
PersonX walks the dog\tisBefore\tPersonX feeds the dog
PersonX walks the dog\txReact\tcalm
bread\tObjectUse\tmake a sandwich
bread\tAtLocation\tbakery
bread\tMadeUpOf\tflour
boat\tAtLocation\tlake
boat\tHasProperty\tfloats on water
boat\tMadeUpOf\twood
dog\tCapableOf\tchase a ball
dog\tDesires\ta bone
dog\tNotDesires\ta bath
dog\tAtLocation\tpark
cake\tObjectUse\tcelebrate a birthday
cake\tHasProperty\tsweet
PersonX eats ___\tisFilledBy\tfood
PersonX sings\txWant\t
PersonX sings\tLikes\tmusic
";

const DEMO_LEXICON: &[(&str, f64)] = &[
    ("boat", 4.93), ("lake", 4.86), ("bread", 4.9), ("dog", 4.85), ("bakery", 4.7), ("paddle", 4.75),
    ("oven", 4.9), ("bone", 4.8), ("flour", 4.85), ("cake", 4.9), ("kitchen", 4.7), ("sandwich", 4.9),
    ("ball", 4.9), ("water", 5.0), ("bath", 4.6), ("wood", 4.85), ("park", 4.6), ("leash", 4.7),
    ("sugar", 4.8), ("birthday", 3.9), ("row", 3.5), ("bake", 3.9), ("eat", 4.0), ("walk", 4.1),
    ("relax", 2.1), ("celebrate", 2.3), ("happy", 2.56), ("relieved", 2.0), ("tired", 2.6),
    ("strong", 2.9), ("generous", 1.6), ("calm", 2.1), ("exercise", 3.6), ("drink", 4.1),
    ("mix", 3.3), ("smell", 3.4), ("sweet", 3.6), ("float", 3.7), ("chase", 3.9), ("feed", 3.8),
    ("make", 2.3), ("person", 4.9),
];

const DEMO_CAPTION_NOUNS: &[&str] = &[
    "boat", "lake", "dog", "ball", "bread", "cake", "oven", "kitchen", "sandwich", "bone", "water", "bakery",
    "flour", "paddle", "wood", "park", "bath", "table", "tree", "man", "woman", "child",
];

/// Text artifacts and embedding stores for a small end-to-end run.
pub struct DemoFixture {
    pub triples_tsv: String,
    pub lexicon_tsv: String,
    pub captions: Vec<CaptionRecord>,
    pub fetch_manifest_tsv: String,
    /// Phrase and noun embeddings.
    pub text_store: EmbeddingStore,
    /// Corpus image embeddings.
    pub image_store: EmbeddingStore,
    /// Embeddings of images served by the fetch manifest.
    pub web_store: EmbeddingStore,
}

pub const DEMO_DIM: usize = 32;
pub const DEMO_IMAGES: usize = 120;

pub fn demo_fixture(seed: u64) -> DemoFixture {
    let enc = HashEncoder::new(DEMO_DIM, seed);
    let mut r = rng(seed);

    let mut lexicon_tsv = String::from("word\trating\n");
    for (w, v) in DEMO_LEXICON {
        lexicon_tsv.push_str(&format!("{w}\t{v}\n"));
    }

    let mut captions = Vec::new();
    let mut image_store = EmbeddingStore::new(DEMO_DIM).unwrap();
    for i in 0..DEMO_IMAGES {
        let k = r.random_range(1..=3);
        let nouns: Vec<&str> = DEMO_CAPTION_NOUNS.choose_multiple(&mut r, k).copied().collect();
        let caption = caption_of(&nouns);
        let mut v = enc.encode_raw(&caption).unwrap();
        add_scaled(&mut v, &noise(&mut r, DEMO_DIM, 0.4), 1.0);
        let id = format!("corpus/{i:04}");
        image_store.insert(id.as_str(), &Embedding::new(unit(v)).unwrap()).unwrap();
        let source = ["coco", "flickr30k", "vist"][i % 3];
        captions.push(CaptionRecord::new(id, source, caption));
    }

    let (triples, _) = parse_triples(DEMO_TRIPLES.as_bytes()).expect("in-memory read");
    let phrases = unique_phrases(&triples);
    let mut text_store = EmbeddingStore::new(DEMO_DIM).unwrap();
    for p in &phrases {
        if let Some(e) = enc.encode(&p.normalized) {
            text_store.insert(p.normalized.as_str(), &e).unwrap();
        }
    }
    for n in DEMO_CAPTION_NOUNS {
        if !text_store.contains(n) {
            text_store.insert(*n, &enc.encode(n).unwrap()).unwrap();
        }
    }

    let mut fetch_manifest_tsv = String::new();
    let mut web_store = EmbeddingStore::new(DEMO_DIM).unwrap();
    for p in &phrases {
        let Some(base) = enc.encode_raw(&p.normalized) else { continue };
        let tag = fnv1a(&p.normalized);
        for i in 0..12 {
            let id = format!("web/{tag:016x}/{i:02}");
            fetch_manifest_tsv.push_str(&format!("{}\t{id}\thttps://images.example.org/{tag:016x}/{i:02}.jpg\n", p.normalized));
            let mut v = base.clone();
            add_scaled(&mut v, &noise(&mut r, DEMO_DIM, 0.3 + 0.35 * i as f32), 1.0);
            web_store.insert(id.as_str(), &Embedding::new(unit(v)).unwrap()).unwrap();
        }
    }

    DemoFixture {
        triples_tsv: DEMO_TRIPLES.to_string(),
        lexicon_tsv,
        captions,
        fetch_manifest_tsv,
        text_store,
        image_store,
        web_store,
    }
}

impl DemoFixture {
    /// Writes `triples.tsv`, `lexicon.tsv`, `captions.tsv`,
    /// `fetch_manifest.tsv`, `text.emb`, `images.emb` and `web.emb`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("triples.tsv"), &self.triples_tsv)?;
        std::fs::write(dir.join("lexicon.tsv"), &self.lexicon_tsv)?;
        std::fs::write(dir.join("fetch_manifest.tsv"), &self.fetch_manifest_tsv)?;
        let mut caps = Vec::new();
        crate::noun_index::write_captions(&self.captions, &mut caps)?;
        std::fs::write(dir.join("captions.tsv"), caps)?;
        save_store(&self.text_store, &dir.join("text.emb"))?;
        save_store(&self.image_store, &dir.join("images.emb"))?;
        save_store(&self.web_store, &dir.join("web.emb"))?;
        Ok(())
    }
}

/// Normalized text of every phrase in the demo triples.
pub fn demo_phrases() -> Vec<String> {
    let (triples, _) = parse_triples(DEMO_TRIPLES.as_bytes()).expect("in-memory read");
    unique_phrases(&triples).into_iter().map(|p| p.normalized).collect()
}

/// Normalizes and encodes arbitrary text with the demo encoder.
pub fn demo_encode(text: &str, seed: u64) -> Option<Embedding> {
    let p = normalize_phrase(text).ok()?;
    HashEncoder::new(DEMO_DIM, seed).encode(&p.normalized)
}

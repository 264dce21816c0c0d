//! Index construction and pruned retrieval against brute-force oracles.

use std::collections::BTreeSet;

use mmground_core::embedding::{brute_force_topk, Embedding, EmbeddingStore, SimCounter};
use mmground_core::noun_index::{
    ground_phrase_indexed, index_to_bytes, read_index, CaptionRecord, IndexedParams, LexiconTagger, NounIndex,
};
use mmground_core::synth::{caption_of, random_corpus, vocabulary};
use proptest::prelude::*;

fn axis(dim: usize, i: usize) -> Embedding {
    let mut v = vec![0.01; dim];
    v[i] = 1.0;
    Embedding::new(v).unwrap()
}

/// 1000 images, 50 nouns, one rare noun present in exactly 15 captions.
#[test]
fn fifty_noun_fixture_counts() {
    let nouns = vocabulary(50, 3);
    let dim = 50;
    let mut noun_store = EmbeddingStore::new(dim).unwrap();
    for (i, n) in nouns.iter().enumerate() {
        noun_store.insert(n.as_str(), &axis(dim, i)).unwrap();
    }
    let mut captions = Vec::new();
    let mut images = EmbeddingStore::new(dim).unwrap();
    for i in 0..1000 {
        let noun = if i < 15 { &nouns[0] } else { &nouns[1 + i % 49] };
        let id = format!("i{i:04}");
        images.insert(id.as_str(), &axis(dim, if i < 15 { 0 } else { 1 + i % 49 })).unwrap();
        captions.push(CaptionRecord::new(id, "fixture", caption_of(&[noun.as_str()])));
    }
    let (index, _) = NounIndex::build(&captions, &LexiconTagger::english(), &noun_store, 2).unwrap();
    assert_eq!(index.embedded_noun_count(), 50);

    let params = IndexedParams {
        prefilter_m: 1,
        ..IndexedParams::default()
    };
    let mut c = SimCounter::new();
    let r = ground_phrase_indexed("p", &axis(dim, 0), &index, &images, params, &mut c).unwrap();
    assert_eq!(r.candidates, 15);
    assert_eq!(r.sims_used, 65);
    assert_eq!(c.count(), 65);
    assert_eq!(r.ranked.len(), 15);

    let mut brute = SimCounter::new();
    brute_force_topk(&images, &axis(dim, 0), 15, &mut brute).unwrap();
    assert_eq!(brute.count(), 1000);
    let factor = brute.count() as f64 / r.sims_used as f64;
    assert_eq!(format!("{factor:.1}"), "15.4");
}

#[test]
fn m_at_least_vocab_is_union_of_postings() {
    let corpus = random_corpus(200, 20, 5, 8, 4);
    let (index, _) = NounIndex::build(&corpus.captions, &LexiconTagger::english(), &corpus.noun_store, 1).unwrap();
    let all: BTreeSet<String> = index.iter_postings().flat_map(|(_, p)| p.iter().cloned()).collect();
    for (_, q) in &corpus.queries {
        let got = index.candidate_images(q, 1000, &mut SimCounter::new()).unwrap();
        assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sharded_build_is_byte_identical(seed in 0u64..10_000, images in 0usize..120, shards in 2usize..9) {
        let corpus = random_corpus(images, 15, 0, 6, seed);
        let tagger = LexiconTagger::english();
        let (seq, _) = NounIndex::build(&corpus.captions, &tagger, &corpus.noun_store, 1).unwrap();
        let (par, _) = NounIndex::build(&corpus.captions, &tagger, &corpus.noun_store, shards).unwrap();
        let bytes = index_to_bytes(&seq);
        prop_assert_eq!(&bytes, &index_to_bytes(&par));
        prop_assert_eq!(index_to_bytes(&read_index(bytes.as_slice()).unwrap()), bytes);
    }

    #[test]
    fn accounting_and_threshold_hold(seed in 0u64..10_000, m in 1usize..30, k in 1usize..20, t in 0.0f32..0.6) {
        let corpus = random_corpus(150, 25, 4, 8, seed);
        let (index, _) = NounIndex::build(&corpus.captions, &LexiconTagger::english(), &corpus.noun_store, 3).unwrap();
        let params = IndexedParams { prefilter_m: m, sim_threshold: t, retain_k: k };
        for (id, q) in &corpus.queries {
            let mut c = SimCounter::new();
            let r = ground_phrase_indexed(id, q, &index, &corpus.image_store, params, &mut c).unwrap();
            prop_assert_eq!(r.sims_used, (index.embedded_noun_count() + r.candidates) as u64);
            prop_assert!(r.ranked.len() <= k);
            prop_assert!(r.ranked.iter().all(|s| s.score >= t));
        }
    }
}

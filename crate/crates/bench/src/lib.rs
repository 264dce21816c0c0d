//! Shared setup for the criterion benches.

use mmground_core::noun_index::{LexiconTagger, NounIndex};
use mmground_core::synth::{pruning_corpus, PruningCorpusConfig, SyntheticCorpus};

pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub index: NounIndex,
}

/// The pruning corpus at a given image count, indexed.
pub fn prepare(images: usize) -> Prepared {
    let cfg = PruningCorpusConfig {
        images,
        queries: 32,
        ..PruningCorpusConfig::default()
    };
    let corpus = pruning_corpus(&cfg);
    let (index, _) = NounIndex::build(&corpus.captions, &LexiconTagger::english(), &corpus.noun_store, 4).expect("synthetic corpus indexes");
    Prepared { corpus, index }
}

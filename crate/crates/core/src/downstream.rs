//! Serving grounded phrases to downstream vision-language consumers.
//!
//! Two retrieval modes are supported: question answering, where a phrase is
//! scored by `cos(image, phrase) + cos(question, phrase)`, and captioning,
//! where a phrase is scored by how close its own grounded images are to the
//! input image.

use std::collections::BTreeMap;

use crate::assembly::MultimodalTriple;
use crate::embedding::{cosine, cosine_slices, Embedding, EmbeddingError, EmbeddingStore, SimCounter};
use crate::rank::{rank_top_k, Scored};

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEntry {
    pub phrase_id: String,
    /// Raw text of the first occurrence, for prompt building.
    pub text: String,
    pub phrase_emb: Embedding,
    pub associated_images: Vec<String>,
}

/// Retrievable head and tail phrases of a graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhraseTable {
    entries: Vec<PhraseEntry>,
    /// Phrases left out because the text store had no embedding for them.
    pub missing_embeddings: usize,
}

impl PhraseTable {
    pub fn new(entries: Vec<PhraseEntry>) -> Self {
        Self {
            entries,
            missing_embeddings: 0,
        }
    }

    /// Indexes both heads and tails, keyed by normalized text. Embeddings
    /// come from the same text store used during grounding.
    pub fn from_graph(graph: &[MultimodalTriple], text_store: &EmbeddingStore) -> Self {
        let mut seen: BTreeMap<&str, (&str, &[crate::rank::Scored])> = BTreeMap::new();
        for mt in graph {
            let t = &mt.triple;
            seen.entry(&t.head.normalized).or_insert((&t.head.raw, &mt.head_images));
            seen.entry(&t.tail.normalized).or_insert((&t.tail.raw, &mt.tail_images));
        }
        let mut table = PhraseTable::default();
        for (id, (raw, images)) in seen {
            match text_store.get(id) {
                Some(phrase_emb) => table.entries.push(PhraseEntry {
                    phrase_id: id.to_string(),
                    text: raw.to_string(),
                    phrase_emb,
                    associated_images: images.iter().map(|s| s.id.clone()).collect(),
                }),
                None => table.missing_embeddings += 1,
            }
        }
        table
    }

    pub fn entries(&self) -> &[PhraseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, phrase_id: &str) -> Option<&PhraseEntry> {
        self.entries.iter().find(|e| e.phrase_id == phrase_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionResult {
    pub ranked_phrases: Vec<Scored>,
    pub k: usize,
    /// Entries that could not be scored.
    pub skipped: usize,
}

/// `cos(image, phrase) + cos(question, phrase)`.
pub fn score_phrase(image_emb: &Embedding, question_emb: &Embedding, phrase_emb: &Embedding) -> Result<f32, EmbeddingError> {
    let mut c = SimCounter::new();
    Ok(cosine(image_emb, phrase_emb, &mut c)? + cosine(question_emb, phrase_emb, &mut c)?)
}

pub fn retrieve_for_vqa(table: &PhraseTable, image_emb: &Embedding, question_emb: &Embedding, k: usize) -> Result<InjectionResult, EmbeddingError> {
    let scored = table
        .entries
        .iter()
        .map(|e| score_phrase(image_emb, question_emb, &e.phrase_emb).map(|s| Scored::new(e.phrase_id.as_str(), s)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InjectionResult {
        ranked_phrases: rank_top_k(scored, k),
        k,
        skipped: 0,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ImageAggregate {
    #[default]
    Max,
    Mean,
}

/// Scores each phrase by the max (or mean) cosine between the input image
/// and the phrase's grounded images. Phrases none of whose images have an
/// embedding are skipped.
pub fn retrieve_for_captioning(
    table: &PhraseTable,
    image_store: &EmbeddingStore,
    input_image_emb: &Embedding,
    k: usize,
    aggregate: ImageAggregate,
) -> Result<InjectionResult, EmbeddingError> {
    if input_image_emb.dim() != image_store.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: image_store.dim(),
            actual: input_image_emb.dim(),
        });
    }
    let mut counter = SimCounter::new();
    let mut scored = Vec::with_capacity(table.len());
    let mut skipped = 0;
    for e in &table.entries {
        let sims = e
            .associated_images
            .iter()
            .filter_map(|id| image_store.get_slice(id))
            .map(|v| cosine_slices(input_image_emb.values(), v, &mut counter))
            .collect::<Result<Vec<f32>, _>>()?;
        if sims.is_empty() {
            skipped += 1;
            continue;
        }
        let score = match aggregate {
            ImageAggregate::Max => sims.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            ImageAggregate::Mean => (sims.iter().map(|s| *s as f64).sum::<f64>() / sims.len() as f64) as f32,
        };
        scored.push(Scored::new(e.phrase_id.as_str(), score));
    }
    Ok(InjectionResult {
        ranked_phrases: rank_top_k(scored, k),
        k,
        skipped,
    })
}

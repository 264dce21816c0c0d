//! Multimodal commonsense grounding engine.
//!
//! Attaches ranked image evidence to the head and tail phrases of
//! commonsense triples. Concrete phrases are matched against a captioned
//! image corpus through a noun-indexed inverted index that prunes the
//! candidate set before embedding re-ranking; abstract phrases (low average
//! concreteness) are routed to a pluggable web image fetcher. The assembled
//! graph can then be queried for knowledge injection in VQA and captioning.
//!
//! Embeddings are inputs: this crate never runs an encoder.

pub mod assembly;
pub mod bench;
pub mod concreteness;
pub mod config;
pub mod downstream;
pub mod embedding;
pub mod kg;
pub mod noun_index;
pub mod pipeline;
pub mod rank;
pub mod synth;
pub mod web;

pub use assembly::{
    compute_stats, ground_all, read_graph, write_graph, GraphStats, GroundingResources, ImageManifest, MultimodalTriple,
    PhraseGrounding, SkipReason, SkipReport,
};
pub use concreteness::{phrase_concreteness, route, ConcretenessLexicon, Route, RouteKind, Stopwords};
pub use config::{GroundingParams, PipelineConfig};
pub use downstream::{retrieve_for_captioning, retrieve_for_vqa, score_phrase, InjectionResult, PhraseTable};
pub use embedding::{brute_force_topk, cosine, Embedding, EmbeddingError, EmbeddingStore, SimCounter};
pub use kg::{normalize_phrase, parse_triples, Phrase, Relation, RelationGroup, Triple};
pub use noun_index::{
    extract_nouns, ground_phrase_indexed, CaptionRecord, GroundingResult, IndexedParams, LexiconTagger, NounIndex, NounTagger,
};
pub use rank::Scored;
pub use web::{build_query, ground_phrase_web, FetchedImage, ImageFetcher, LocalManifestFetcher, WebQuery};

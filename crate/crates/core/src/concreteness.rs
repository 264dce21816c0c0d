//! Phrase concreteness scoring and embedding-vs-web routing.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Phrase;

pub const DEFAULT_THRESHOLD: f64 = 4.0;
pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

/// Placeholder token produced by phrase normalization.
pub const PLACEHOLDER: &str = "person";

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    /// One word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_reader<R: BufRead>(mut r: R) -> io::Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Ok(Self::parse(&s))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::english()
    }
}

/// Trims punctuation and a possessive `'s` from a phrase token.
pub fn clean_token(token: &str) -> &str {
    let t = token.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
    let t = t.strip_suffix("'s").unwrap_or(t);
    t.trim_matches(|c: char| !c.is_alphanumeric())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcretenessLexicon {
    ratings: HashMap<String, f64>,
    stopwords: Stopwords,
    /// Multi-word entries in the source file, which are not indexable by token.
    pub skipped_multiword: usize,
}

impl ConcretenessLexicon {
    pub fn new(stopwords: Stopwords) -> Self {
        Self {
            ratings: HashMap::new(),
            stopwords,
            skipped_multiword: 0,
        }
    }

    pub fn insert(&mut self, word: &str, rating: f64) -> Result<(), String> {
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(format!("rating {rating} outside [{MIN_RATING}, {MAX_RATING}]"));
        }
        let key = word.trim().to_lowercase();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("`{word}` is not a single word"));
        }
        self.ratings.insert(key, rating);
        Ok(())
    }

    /// Reads `word \t rating` rows. A first line whose rating column is not
    /// numeric is treated as a header. Multi-word entries are counted and
    /// skipped.
    pub fn from_reader<R: BufRead>(reader: R, stopwords: Stopwords) -> Result<Self, LexiconError> {
        let mut lex = Self::new(stopwords);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or_default().trim();
            let Some(raw) = fields.next() else {
                return Err(LexiconError::Format {
                    line: line_no,
                    message: "expected word<TAB>rating".into(),
                });
            };
            let rating: f64 = match raw.trim().parse() {
                Ok(r) => r,
                Err(_) if line_no == 1 => continue,
                Err(_) => {
                    return Err(LexiconError::Format {
                        line: line_no,
                        message: format!("rating `{}` is not a number", raw.trim()),
                    })
                }
            };
            if word.contains(char::is_whitespace) {
                lex.skipped_multiword += 1;
                continue;
            }
            lex.insert(word, rating)
                .map_err(|message| LexiconError::Format { line: line_no, message })?;
        }
        Ok(lex)
    }

    pub fn load(path: &std::path::Path, stopwords: Stopwords) -> Result<Self, LexiconError> {
        Self::from_reader(io::BufReader::new(std::fs::File::open(path)?), stopwords)
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    /// Exact match first, then the stem left after removing `-es`, `-s`,
    /// `-ing` or `-ed`.
    pub fn lookup(&self, token: &str) -> Option<f64> {
        if let Some(r) = self.ratings.get(token) {
            return Some(*r);
        }
        ["es", "s", "ing", "ed"]
            .iter()
            .filter_map(|suffix| token.strip_suffix(suffix))
            .filter(|stem| stem.chars().count() >= 2)
            .find_map(|stem| self.ratings.get(stem).copied())
    }

    /// Ratings of the phrase's content tokens that the lexicon knows.
    pub fn token_ratings<'a>(&'a self, phrase: &'a Phrase) -> impl Iterator<Item = f64> + 'a {
        phrase
            .tokens
            .iter()
            .map(|t| clean_token(t))
            .filter(|t| !t.is_empty() && *t != PLACEHOLDER && !self.stopwords.contains(t))
            .filter_map(|t| self.lookup(t))
    }
}

/// Mean rating of the phrase's rated content tokens; `None` when nothing is
/// rated.
pub fn phrase_concreteness(phrase: &Phrase, lexicon: &ConcretenessLexicon) -> Option<f64> {
    let (sum, n) = lexicon
        .token_ratings(phrase)
        .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    EmbeddingMatch,
    WebSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub kind: RouteKind,
    pub score: Option<f64>,
    /// Set when embedding matching produced nothing and the phrase fell back
    /// to web search despite its concreteness.
    #[serde(default)]
    pub escalated: bool,
}

impl Route {
    pub fn is_web(&self) -> bool {
        self.kind == RouteKind::WebSearch
    }

    pub fn escalate(self) -> Route {
        Route {
            kind: RouteKind::WebSearch,
            escalated: true,
            ..self
        }
    }
}

/// Scores below `threshold` (or unscored phrases) go to web search.
pub fn route(phrase: &Phrase, lexicon: &ConcretenessLexicon, threshold: f64) -> Route {
    route_score(phrase_concreteness(phrase, lexicon), threshold)
}

pub fn route_score(score: Option<f64>, threshold: f64) -> Route {
    debug_assert!((MIN_RATING..=MAX_RATING).contains(&threshold));
    let kind = match score {
        Some(s) if s >= threshold => RouteKind::EmbeddingMatch,
        _ => RouteKind::WebSearch,
    };
    Route {
        kind,
        score,
        escalated: false,
    }
}

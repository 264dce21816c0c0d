//! Commonsense triples: parsing, phrase normalization and the closed
//! relation taxonomy.
//!
//! Source files are tab-separated `head \t relation \t tail` rows. Rows with
//! missing fields, unknown relations or the `isFilledBy` relation are counted
//! in a [`RejectionReport`] and skipped; a bad row is never fatal.

use std::fmt;
use std::io::{self, BufRead};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("phrase `{0}` is empty after normalization")]
    EmptyPhrase(String),
}

/// Coarse relation family used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationGroup {
    Physical,
    Eventive,
    Social,
}

impl fmt::Display for RelationGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationGroup::Physical => "physical",
            RelationGroup::Eventive => "eventive",
            RelationGroup::Social => "social",
        })
    }
}

macro_rules! relations {
    ($( $variant:ident => $name:literal, $group:ident; )*) => {
        /// The 19 retained commonsense relations.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Relation {
            $( $variant, )*
        }

        impl Relation {
            pub const ALL: [Relation; 19] = [ $( Relation::$variant, )* ];

            pub fn name(self) -> &'static str {
                match self {
                    $( Relation::$variant => $name, )*
                }
            }

            pub fn group(self) -> RelationGroup {
                match self {
                    $( Relation::$variant => RelationGroup::$group, )*
                }
            }

            fn from_canonical(name: &str) -> Option<Relation> {
                match name {
                    $( $name => Some(Relation::$variant), )*
                    _ => None,
                }
            }
        }
    };
}

relations! {
    ObjectUse => "ObjectUse", Physical;
    AtLocation => "AtLocation", Physical;
    MadeUpOf => "MadeUpOf", Physical;
    HasProperty => "HasProperty", Physical;
    CapableOf => "CapableOf", Physical;
    Desires => "Desires", Physical;
    NotDesires => "NotDesires", Physical;
    IsAfter => "isAfter", Eventive;
    HasSubEvent => "HasSubEvent", Eventive;
    IsBefore => "isBefore", Eventive;
    HinderedBy => "HinderedBy", Eventive;
    Causes => "Causes", Eventive;
    Reason => "Reason", Eventive;
    Need => "Need", Social;
    Attr => "Attr", Social;
    Effect => "Effect", Social;
    React => "React", Social;
    Want => "Want", Social;
    Intent => "Intent", Social;
}

/// Relation name of the placeholder-filling relation that is always dropped.
pub const FILLED_BY: &str = "isFilledBy";

impl FromStr for Relation {
    type Err = KgError;

    /// Accepts the canonical names plus the agent/other prefixed forms used
    /// in raw ATOMIC dumps (`xIntent`, `oReact`, `xReason`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(r) = Relation::from_canonical(s) {
            return Ok(r);
        }
        if let Some(rest) = s.strip_prefix('x').or_else(|| s.strip_prefix('o')) {
            if let Some(r) = Relation::from_canonical(rest) {
                if matches!(r.group(), RelationGroup::Social) || r == Relation::Reason {
                    return Ok(r);
                }
            }
        }
        Err(KgError::UnknownRelation(s.to_string()))
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Relation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn relation_group(name: &str) -> Result<RelationGroup, KgError> {
    name.parse::<Relation>().map(Relation::group)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phrase {
    pub raw: String,
    pub normalized: String,
    pub tokens: Vec<String>,
}

impl Phrase {
    pub fn as_str(&self) -> &str {
        &self.normalized
    }
}

/// Characters stripped from both ends of a phrase.
const EDGE_MARKERS: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '`', '-', '(', ')', '[', ']'];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bperson[xyz]\b").unwrap())
}

fn blank_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"_{2,}").unwrap())
}

/// Lowercases, maps PersonX/Y/Z to `person`, removes `___` blanks, trims
/// edge punctuation and collapses whitespace.
pub fn normalize_phrase(raw: &str) -> Result<Phrase, KgError> {
    let lowered = raw.to_lowercase();
    let unblanked = blank_re().replace_all(&lowered, " ");
    let resolved = placeholder_re().replace_all(&unblanked, "person");
    let trimmed = resolved.trim_matches(|c: char| c.is_whitespace() || EDGE_MARKERS.contains(&c));
    let tokens: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(KgError::EmptyPhrase(raw.to_string()));
    }
    let normalized = tokens.join(" ");
    Ok(Phrase {
        raw: raw.to_string(),
        normalized,
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub head: Phrase,
    pub relation: Relation,
    pub tail: Phrase,
    /// 1-based line number in the source file.
    pub source_line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    EmptyField,
    FilledBy,
    UnknownRelation,
    Malformed,
}

/// Per-reason counts of skipped lines. Comment lines are tallied separately
/// so that accepted + skipped always equals the number of non-blank lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub empty_field: usize,
    pub filled_by: usize,
    pub unknown_relation: usize,
    pub malformed: usize,
    pub comments: usize,
}

impl RejectionReport {
    fn record(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::EmptyField => self.empty_field += 1,
            RejectReason::FilledBy => self.filled_by += 1,
            RejectReason::UnknownRelation => self.unknown_relation += 1,
            RejectReason::Malformed => self.malformed += 1,
        }
    }

    pub fn rejected(&self) -> usize {
        self.empty_field + self.filled_by + self.unknown_relation + self.malformed
    }

    pub fn total(&self) -> usize {
        self.rejected() + self.comments
    }
}

impl fmt::Display for RejectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "empty-field={} isFilledBy={} unknown-relation={} malformed={} comments={}",
            self.empty_field, self.filled_by, self.unknown_relation, self.malformed, self.comments
        )
    }
}

/// ATOMIC marks missing inferences with a literal `none`.
fn is_incomplete(p: &Phrase) -> bool {
    p.normalized == "none"
}

fn parse_line(line: &str, line_no: usize) -> Result<Triple, RejectReason> {
    let mut fields = line.split('\t');
    let (Some(head), Some(rel), Some(tail)) = (fields.next(), fields.next(), fields.next()) else {
        return Err(RejectReason::Malformed);
    };
    // Re-ingested files carry the original line number in a fourth column.
    let source_line = match fields.next() {
        Some(n) => n.trim().parse().map_err(|_| RejectReason::Malformed)?,
        None => line_no,
    };
    let rel = rel.trim();
    if rel.is_empty() {
        return Err(RejectReason::EmptyField);
    }
    if rel == FILLED_BY {
        return Err(RejectReason::FilledBy);
    }
    let relation: Relation = rel.parse().map_err(|_| RejectReason::UnknownRelation)?;
    let head = normalize_phrase(head).map_err(|_| RejectReason::EmptyField)?;
    let tail = normalize_phrase(tail).map_err(|_| RejectReason::EmptyField)?;
    if is_incomplete(&head) || is_incomplete(&tail) {
        return Err(RejectReason::EmptyField);
    }
    Ok(Triple {
        head,
        relation,
        tail,
        source_line,
    })
}

/// Streams triples from a tab-separated source. Only I/O failures are
/// errors; lines that are not valid UTF-8 count as malformed.
pub fn parse_triples<R: BufRead>(mut reader: R) -> io::Result<(Vec<Triple>, RejectionReport)> {
    let mut triples = Vec::new();
    let mut report = RejectionReport::default();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let Ok(text) = std::str::from_utf8(&buf) else {
            report.record(RejectReason::Malformed);
            continue;
        };
        let line = text.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            report.comments += 1;
            continue;
        }
        match parse_line(line, line_no) {
            Ok(t) => triples.push(t),
            Err(reason) => report.record(reason),
        }
    }
    Ok((triples, report))
}

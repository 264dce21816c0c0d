//! Joint-space embedding vectors, the id-keyed store, the EMB1 container and
//! exhaustive top-k search.
//!
//! Similarity is cosine on raw stored values with `f64` accumulation. Every
//! pairwise evaluation bumps a [`SimCounter`], which is how pruning savings
//! are measured.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::rank::{rank_top_k, Scored};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("EMB1 format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Number of pairwise similarity evaluations performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimCounter(u64);

impl SimCounter {
    pub fn new() -> Self {
        Self(0)
    }

    #[inline]
    pub fn tick(&mut self) {
        self.0 += 1;
    }

    pub fn count(&self) -> u64 {
        self.0
    }

    /// Folds a shard-local counter into this one.
    pub fn absorb(&mut self, other: SimCounter) {
        self.0 += other.0;
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= 1e-4
    }

    /// Returns a unit-length copy. Zero vectors are rejected.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self {
            values: self.values.iter().map(|v| (*v as f64 / n) as f32).collect(),
        })
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

impl PartialEq for Embedding {
    fn eq(&self, other: &Self) -> bool {
        bits_eq(&self.values, &other.values)
    }
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Cosine similarity between two raw slices.
pub fn cosine_slices(a: &[f32], b: &[f32], counter: &mut SimCounter) -> Result<f32> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    counter.tick();
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32)
}

pub fn cosine(a: &Embedding, b: &Embedding, counter: &mut SimCounter) -> Result<f32> {
    cosine_slices(&a.values, &b.values, counter)
}

/// Id-keyed vectors of a single dimension, kept in insertion order.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            lookup: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, emb: &Embedding) -> Result<()> {
        self.insert_slice(id.into(), emb.values())
    }

    fn insert_slice(&mut self, id: String, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.lookup.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.lookup.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup.contains_key(id)
    }

    pub fn get_slice(&self, id: &str) -> Option<&[f32]> {
        self.lookup.get(id).map(|&i| self.row(i))
    }

    pub fn get(&self, id: &str) -> Option<Embedding> {
        self.get_slice(id).map(|v| Embedding { values: v.to_vec() })
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Merges `other` into `self`. An id present in both is accepted only
    /// when the vectors are bit-identical.
    pub fn merge(&mut self, other: &EmbeddingStore) -> Result<()> {
        if other.dim != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        for (id, v) in other.iter() {
            match self.get_slice(id) {
                Some(existing) if bits_eq(existing, v) => {}
                Some(_) => return Err(EmbeddingError::DuplicateId(id.to_string())),
                None => self.insert_slice(id.to_string(), v)?,
            }
        }
        Ok(())
    }

    /// Copies the listed ids into a new store, skipping unknown ones.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> EmbeddingStore {
        let mut out = EmbeddingStore::new(self.dim).expect("dim already validated");
        for id in ids {
            if let Some(v) = self.get_slice(id) {
                if !out.contains(id) {
                    out.insert_slice(id.to_string(), v).expect("same dim");
                }
            }
        }
        out
    }
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && bits_eq(&self.data, &other.data)
    }
}

/// Exhaustive cosine search. Adds exactly `store.len()` to `counter`.
pub fn brute_force_topk(
    store: &EmbeddingStore,
    query: &Embedding,
    k: usize,
    counter: &mut SimCounter,
) -> Result<Vec<Scored>> {
    if query.dim() != store.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    let scored = store
        .iter()
        .map(|(id, v)| cosine_slices(query.values(), v, counter).map(|s| Scored::new(id, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_top_k(scored, k))
}

const MAGIC: &[u8; 4] = b"EMB1";

/// Writes the store as EMB1: magic, u32 dim, u64 count, then per record a
/// u32 id length, id bytes and `dim` f32 values (all little-endian).
pub fn write_store<W: Write>(store: &EmbeddingStore, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (id, values) in store.iter() {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn store_to_bytes(store: &EmbeddingStore) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + store.len() * (8 + 4 * store.dim));
    write_store(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_store<R: Read>(mut r: R) -> Result<EmbeddingStore> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = ByteCursor::new(&buf, 0);
    let store = parse_store(&mut cur)?;
    if !cur.is_at_end() {
        return Err(cur.error("trailing bytes after last record"));
    }
    Ok(store)
}

pub fn load_store(path: &std::path::Path) -> Result<EmbeddingStore> {
    read_store(io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_store(store: &EmbeddingStore, path: &std::path::Path) -> io::Result<()> {
    write_store(store, io::BufWriter::new(std::fs::File::create(path)?))
}

/// Parses one EMB1 block starting at the cursor. Used directly by the noun
/// index container, which embeds an EMB1 block.
pub(crate) fn parse_store(cur: &mut ByteCursor<'_>) -> Result<EmbeddingStore> {
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(EmbeddingError::Format {
            offset: cur.offset() - 4,
            message: "bad magic, expected EMB1".into(),
        });
    }
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(EmbeddingError::Format {
            offset: cur.offset() - 4,
            message: "dimension must be positive".into(),
        });
    }
    let count = cur.u64("record count")?;
    let mut store = EmbeddingStore::new(dim)?;
    let mut values = vec![0f32; dim];
    for _ in 0..count {
        let id = cur.string("id")?;
        let raw = cur.take(dim * 4, "vector")?;
        for (slot, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        if store.contains(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        store.insert_slice(id, &values)?;
    }
    Ok(store)
}

/// Little-endian reader that reports absolute byte offsets on failure.
pub(crate) struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> EmbeddingError {
        EmbeddingError::Format {
            offset: self.offset(),
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} available",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.offset();
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| EmbeddingError::Format {
            offset: start,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let mut c = SimCounter::new();
        let a = emb(&[0.3, -1.2, 2.0]);
        assert!((cosine(&a, &a, &mut c).unwrap() - 1.0).abs() < 1e-6);
        assert!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0]), &mut c).unwrap().abs() < 1e-6);
        // 1/sqrt(2) to 8 places
        let s = cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 1.0]), &mut c).unwrap();
        assert!((s as f64 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(c.count(), 3);
    }

    #[test]
    fn cosine_errors() {
        let mut c = SimCounter::new();
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0]), &mut c),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert!(matches!(cosine(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0]), &mut c), Err(EmbeddingError::ZeroNorm)));
        assert_eq!(c.count(), 0);
        assert!(Embedding::new(vec![]).is_err());
    }

    fn store_of(rows: &[(&str, &[f32])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.insert(*id, &emb(v)).unwrap();
        }
        s
    }

    #[test]
    fn empty_store_round_trip() {
        let s = EmbeddingStore::new(4).unwrap();
        let bytes = store_to_bytes(&s);
        assert_eq!(bytes.len(), 16);
        let back = read_store(&bytes[..]).unwrap();
        assert_eq!(back.dim(), 4);
        assert!(back.is_empty());
    }

    #[test]
    fn three_entry_round_trip_is_bit_exact() {
        let s = store_of(&[("a", &[1.5, -0.0]), ("bé", &[f32::MIN_POSITIVE, 3.0]), ("c", &[f32::NAN, 1.0])]);
        let bytes = store_to_bytes(&s);
        let back = read_store(&bytes[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(store_to_bytes(&back), bytes);
    }

    #[test]
    fn layout_is_little_endian() {
        let s = store_of(&[("x", &[1.0])]);
        let bytes = store_to_bytes(&s);
        let expected: Vec<u8> = [
            &b"EMB1"[..],
            &1u32.to_le_bytes(),
            &1u64.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"x",
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncation_reports_offset() {
        let s = store_of(&[("ab", &[1.0, 2.0]), ("cd", &[3.0, 4.0])]);
        let bytes = store_to_bytes(&s);
        // header 16, record 1 = 4 + 2 + 8 = 14, record 2 id ends at 16+14+6 = 36
        let cut = &bytes[..40];
        match read_store(cut) {
            Err(EmbeddingError::Format { offset, .. }) => assert_eq!(offset, 36),
            other => panic!("unexpected {other:?}"),
        }
        match read_store(&b"EMB2"[..]) {
            Err(EmbeddingError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_in_file() {
        let mut bytes = store_to_bytes(&store_of(&[("a", &[1.0])]));
        bytes[8..16].copy_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(b"a");
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(read_store(&bytes[..]), Err(EmbeddingError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn brute_force_examples() {
        let s = store_of(&[("x", &[1.0, 2.0])]);
        let mut c = SimCounter::new();
        let r = brute_force_topk(&s, &emb(&[1.0, 2.0]), 5, &mut c).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].id, "x");
        assert!((r[0].score - 1.0).abs() < 1e-6);
        assert_eq!(c.count(), 1);

        let s = store_of(&[("b", &[1.0, 0.0]), ("a", &[1.0, 0.0]), ("c", &[0.0, 1.0])]);
        let r = brute_force_topk(&s, &emb(&[1.0, 0.1]), 10, &mut c).unwrap();
        let ids: Vec<_> = r.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn merge_rules() {
        let mut a = store_of(&[("x", &[1.0])]);
        a.merge(&store_of(&[("x", &[1.0]), ("y", &[2.0])])).unwrap();
        assert_eq!(a.len(), 2);
        assert!(matches!(a.merge(&store_of(&[("y", &[3.0])])), Err(EmbeddingError::DuplicateId(_))));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-10.0f32..10.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in vec_strategy(6), b in vec_strategy(6), scale in 0.01f32..100.0) {
            let (a, b) = (emb(&a), emb(&b));
            let mut c = SimCounter::new();
            let ab = cosine(&a, &b, &mut c).unwrap();
            let ba = cosine(&b, &a, &mut c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-6);
            let sab = cosine(&a.scaled(scale), &b, &mut c).unwrap();
            prop_assert!((ab - sab).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn brute_force_counts_store_and_is_deterministic(
            rows in proptest::collection::vec(vec_strategy(4), 1..30),
            q in vec_strategy(4),
            k in 1usize..40,
        ) {
            let mut s = EmbeddingStore::new(4).unwrap();
            for (i, r) in rows.iter().enumerate() {
                s.insert(format!("id{i:03}"), &emb(r)).unwrap();
            }
            let q = emb(&q);
            let mut c1 = SimCounter::new();
            let r1 = brute_force_topk(&s, &q, k, &mut c1).unwrap();
            let mut c2 = SimCounter::new();
            let r2 = brute_force_topk(&s, &q, k, &mut c2).unwrap();
            prop_assert_eq!(c1.count(), s.len() as u64);
            prop_assert_eq!(r1.len(), k.min(s.len()));
            prop_assert_eq!(&r1, &r2);
            for w in r1.windows(2) {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
            }
        }
    }
}

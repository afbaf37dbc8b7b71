use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::hash::{fnv1a64, hex_fingerprint, Fnv1a, FNV_OFFSET};

const MAGIC: &[u8; 4] = b"DNSE";
const VERSION: u8 = 0x01;
const KIND_TOKEN: u8 = 0x00;
const KIND_SENTENCE: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    TokenTable,
    SentenceTable,
    /// Deterministic per-token vectors from [`hash_embed`].
    Hash { seed: u64 },
}

/// Lowercased, whitespace-collapsed, NFC-normalized lookup key.
pub fn normalize_key(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.to_lowercase().nfc().collect()
}

/// Deterministic unit vector for `key`.
///
/// Component `i` hashes the key bytes followed by `i` as a little-endian u32
/// with FNV-1a 64, starting from the FNV offset basis XOR `seed`. The top 53
/// bits of each hash map to `[-1, 1)`; the vector is then L2-normalized in
/// f64 and rounded to f32.
pub fn hash_embed(key: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 1, "hash_embed needs dim >= 1");
    let raw: Vec<f64> = (0..dim as u32)
        .map(|i| {
            let h = Fnv1a::with_state(FNV_OFFSET ^ seed)
                .write(key.as_bytes())
                .write(&i.to_le_bytes())
                .finish();
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        return v;
    }
    raw.into_iter().map(|x| (x / norm) as f32).collect()
}

/// Source of dense features: an exported token or sentence table, or the
/// hash embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseProvider {
    kind: ProviderKind,
    dim: usize,
    table: BTreeMap<String, Vec<f32>>,
    fingerprint: u64,
    source: Option<String>,
}

/// What a trained model records about the provider it was trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub kind: ProviderKind,
    pub dim: usize,
    pub fingerprint: String,
    /// The `hash:DIM:SEED` / `file:PATH` spec it was created from, if any.
    pub source: Option<String>,
}

impl DenseProvider {
    pub fn hash(dim: usize, seed: u64) -> Self {
        let fp = Fnv1a::default()
            .write(b"hash")
            .write(&(dim as u64).to_le_bytes())
            .write(&seed.to_le_bytes())
            .finish();
        DenseProvider {
            kind: ProviderKind::Hash { seed },
            dim,
            table: BTreeMap::new(),
            fingerprint: fp,
            source: Some(format!("hash:{dim}:{seed}")),
        }
    }

    pub fn token_table(dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        Self::from_entries(ProviderKind::TokenTable, dim, entries)
    }

    pub fn sentence_table(dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        Self::from_entries(ProviderKind::SentenceTable, dim, entries)
    }

    fn from_entries(kind: ProviderKind, dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DenseFormat("dimension must be positive".into()));
        }
        let mut table = BTreeMap::new();
        for (k, v) in entries {
            if v.len() != dim {
                return Err(Error::DenseFormat(format!(
                    "vector for {k:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            let key = normalize_key(&k);
            if table.insert(key.clone(), v).is_some() {
                return Err(Error::DenseFormat(format!("duplicate key {key:?}")));
            }
        }
        let mut p = DenseProvider {
            kind,
            dim,
            table,
            fingerprint: 0,
            source: None,
        };
        p.fingerprint = fnv1a64(&p.to_dnse_bytes()?);
        Ok(p)
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: self.kind,
            dim: self.dim,
            fingerprint: hex_fingerprint(self.fingerprint),
            source: self.source.clone(),
        }
    }

    /// Raw table lookup by already-normalized key.
    pub fn lookup(&self, key: &str) -> Option<&[f32]> {
        self.table.get(key).map(Vec::as_slice)
    }

    /// Vector for a token; misses yield the zero vector.
    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let key = normalize_key(token);
        match self.kind {
            ProviderKind::Hash { seed } => hash_embed(&key, self.dim, seed),
            _ => self
                .table
                .get(&key)
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.dim]),
        }
    }

    /// Sentence embedding of raw utterance text. Only sentence tables hold
    /// these, and a missing entry is an error.
    pub fn sentence_vector(&self, text: &str) -> Result<Vec<f32>> {
        let key = normalize_key(text);
        self.table.get(&key).cloned().ok_or_else(|| {
            Error::ProviderMismatch(format!("no sentence embedding for {key:?}"))
        })
    }

    pub fn to_dnse_bytes(&self) -> Result<Vec<u8>> {
        let kind = match self.kind {
            ProviderKind::TokenTable => KIND_TOKEN,
            ProviderKind::SentenceTable => KIND_SENTENCE,
            ProviderKind::Hash { .. } => {
                return Err(Error::DenseFormat(
                    "hash providers have no table; use write_hash_table".into(),
                ))
            }
        };
        let mut out = Vec::with_capacity(14 + self.table.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(kind);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.table.len() as u32).to_le_bytes());
        for (k, v) in &self.table {
            let kb = k.as_bytes();
            let len = u16::try_from(kb.len())
                .map_err(|_| Error::DenseFormat(format!("key too long: {} bytes", kb.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(kb);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_dnse_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::DenseFormat("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::DenseFormat(format!("unsupported version {version}")));
        }
        let kind = match r.take(1)?[0] {
            KIND_TOKEN => ProviderKind::TokenTable,
            KIND_SENTENCE => ProviderKind::SentenceTable,
            k => return Err(Error::DenseFormat(format!("unknown kind byte {k:#04x}"))),
        };
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::DenseFormat("dimension must be positive".into()));
        }
        let mut table = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let klen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let key = std::str::from_utf8(r.take(klen)?)
                .map_err(|e| Error::DenseFormat(format!("key is not UTF-8: {e}")))?
                .to_string();
            if let Some(p) = &prev {
                if p.as_bytes() >= key.as_bytes() {
                    return Err(Error::DenseFormat(format!(
                        "keys not strictly ascending at {key:?} (after {p:?})"
                    )));
                }
            }
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            prev = Some(key.clone());
            table.insert(key, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::DenseFormat(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - r.pos
            )));
        }
        Ok(DenseProvider {
            kind,
            dim,
            table,
            fingerprint: fnv1a64(bytes),
            source: None,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::DenseFormat(format!(
                "truncated payload: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_dense_file(path: impl AsRef<Path>) -> Result<DenseProvider> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(DenseProvider::from_dnse_bytes(&bytes)?.with_source(format!("file:{}", path.display())))
}

pub fn write_dense_file(provider: &DenseProvider, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, provider.to_dnse_bytes()?).map_err(|e| Error::io(path, e))
}

/// Token table holding `hash_embed` vectors for the normalized, deduplicated
/// keys. This is the reference writer the hash-mode exporter must match.
pub fn write_hash_table<'a>(
    keys: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> Result<DenseProvider> {
    let mut uniq: BTreeMap<String, ()> = BTreeMap::new();
    for k in keys {
        uniq.insert(normalize_key(k), ());
    }
    let entries = uniq
        .into_keys()
        .map(|k| {
            let v = hash_embed(&k, dim, seed);
            (k, v)
        })
        .collect();
    DenseProvider::token_table(dim, entries)
}

/// Parses `hash:DIM:SEED`, `file:PATH` or `none`.
pub fn parse_provider_spec(spec: &str) -> Result<Option<DenseProvider>> {
    if spec == "none" {
        return Ok(None);
    }
    if let Some(rest) = spec.strip_prefix("hash:") {
        let (dim, seed) = rest
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected hash:DIM:SEED, got {spec:?}")))?;
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::Config(format!("bad dimension in {spec:?}")))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::Config(format!("bad seed in {spec:?}")))?;
        if dim == 0 {
            return Err(Error::Config("hash dimension must be positive".into()));
        }
        return Ok(Some(DenseProvider::hash(dim, seed)));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return load_dense_file(path).map(Some);
    }
    Err(Error::Config(format!(
        "dense provider must be hash:DIM:SEED, file:PATH or none; got {spec:?}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("yes", 8, 42);
        assert_eq!(a, hash_embed("yes", 8, 42));
        assert_ne!(a, hash_embed("yes", 8, 43));
        assert_ne!(a, hash_embed("no", 8, 42));
        for (k, d, s) in [("yes", 8, 42), ("a longer key", 300, 0), ("x", 1, 7)] {
            let v = hash_embed(k, d, s);
            let n: f64 = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hash_embed_golden() {
        // Independent evaluation of the documented scheme.
        let raw: Vec<f64> = (0u32..8)
            .map(|i| {
                let mut h: u64 = 0xcbf29ce484222325 ^ 42;
                for b in b"yes".iter().chain(&i.to_le_bytes()) {
                    h ^= u64::from(*b);
                    h = h.wrapping_mul(0x100000001b3);
                }
                (h >> 11) as f64 / 9007199254740992.0 * 2.0 - 1.0
            })
            .collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f32> = raw.iter().map(|x| (x / n) as f32).collect();
        assert_eq!(hash_embed("yes", 8, 42), expected);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_key("  Hello \t World "), "hello world");
        // e + combining acute composes to U+00E9
        assert_eq!(normalize_key("Cafe\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn dnse_layout() {
        let p = DenseProvider::token_table(
            2,
            vec![("b".into(), vec![1.0, 2.0]), ("a".into(), vec![3.0, 4.0])],
        )
        .unwrap();
        let bytes = p.to_dnse_bytes().unwrap();
        assert_eq!(&bytes[..6], b"DNSE\x01\x00");
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..17], &[1, 0, b'a']);
        assert_eq!(&bytes[17..21], &3f32.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 2 * (2 + 1 + 8));
    }

    #[test]
    fn two_keys_lookup() {
        let p = DenseProvider::token_table(
            4,
            vec![("yes".into(), vec![1.0; 4]), ("no".into(), vec![0.5; 4])],
        )
        .unwrap();
        let q = DenseProvider::from_dnse_bytes(&p.to_dnse_bytes().unwrap()).unwrap();
        assert_eq!(q.dim(), 4);
        assert_eq!(q.lookup("yes"), Some(&[1.0f32; 4][..]));
        assert_eq!(q.lookup("no"), Some(&[0.5f32; 4][..]));
        assert_eq!(q.lookup("maybe"), None);
    }

    #[test]
    fn unsorted_keys_rejected() {
        let mut bytes = b"DNSE\x01\x00".to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        for k in [b'b', b'a'] {
            bytes.extend(1u16.to_le_bytes());
            bytes.push(k);
            bytes.extend(0f32.to_le_bytes());
        }
        let err = DenseProvider::from_dnse_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("\"a\""), "{err}");
    }

    #[test]
    fn bad_headers_and_truncation() {
        assert!(DenseProvider::from_dnse_bytes(b"NOPE\x01\x00").is_err());
        assert!(DenseProvider::from_dnse_bytes(b"DNSE\x02\x00\x01\0\0\0\0\0\0\0").is_err());
        let p = DenseProvider::token_table(3, vec![("k".into(), vec![1.0; 3])]).unwrap();
        let bytes = p.to_dnse_bytes().unwrap();
        let err = DenseProvider::from_dnse_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn random_table_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let entries: Vec<(String, Vec<f32>)> = (0..50)
            .map(|i| {
                let v = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                (format!("key{i:02}"), v)
            })
            .collect();
        let p = DenseProvider::sentence_table(6, entries.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dnse");
        write_dense_file(&p, &path).unwrap();
        let q = load_dense_file(&path).unwrap();
        assert_eq!(q.kind(), ProviderKind::SentenceTable);
        assert_eq!(q.fingerprint(), p.fingerprint());
        for (k, v) in &entries {
            assert_eq!(q.lookup(k).unwrap(), v.as_slice());
        }
    }

    #[test]
    fn provider_specs() {
        assert!(parse_provider_spec("none").unwrap().is_none());
        let p = parse_provider_spec("hash:16:7").unwrap().unwrap();
        assert_eq!((p.dim(), p.kind()), (16, ProviderKind::Hash { seed: 7 }));
        assert!(parse_provider_spec("hash:0:7").is_err());
        assert!(parse_provider_spec("glove").is_err());
        assert!(parse_provider_spec("file:/definitely/missing.dnse").is_err());
    }

    #[test]
    fn hash_table_writer_dedups_normalized_keys() {
        let p = write_hash_table(["Yes", "yes", "no"], 8, 42).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.lookup("yes").unwrap(), hash_embed("yes", 8, 42).as_slice());
    }
}

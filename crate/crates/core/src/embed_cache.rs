//! Cached per-token transformer states and learned layer pooling.
//!
//! Binary layout (`TEC1`), all integers `u32` little-endian:
//!
//! ```text
//! magic "TEC1" | version = 1 | H | L | record count
//! per record: id byte length | id UTF-8 bytes | N | N*L*H f32 LE values
//! ```
//!
//! Values are ordered token-major, then layer, then dimension.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TEC1";
const VERSION: u32 = 1;

/// Default right-truncation length for token sequences.
pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub doc_id: String,
    pub num_tokens: usize,
    /// `num_tokens * L * H` values, token-major.
    pub states: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub records: Vec<CacheRecord>,
}

impl EmbeddingCache {
    pub fn new(hidden_dim: usize, num_layers: usize) -> Self {
        Self {
            hidden_dim,
            num_layers,
            records: Vec::new(),
        }
    }

    /// Appends a record given as an `N x L x H` tensor.
    pub fn push(&mut self, doc_id: impl Into<String>, states: &Array3<f32>) -> Result<()> {
        let (n, l, h) = states.dim();
        if l != self.num_layers || h != self.hidden_dim {
            return Err(Error::Dimension(format!(
                "record is {n}x{l}x{h}, cache expects Nx{}x{}",
                self.num_layers, self.hidden_dim
            )));
        }
        self.records.push(CacheRecord {
            doc_id: doc_id.into(),
            num_tokens: n,
            states: states.iter().copied().collect(),
        });
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.doc_id.as_str(), i))
            .collect()
    }

    /// Promotes a record to `f64`, keeping at most `max_tokens` leading tokens.
    pub fn states(&self, record: usize, max_tokens: usize) -> Array3<f64> {
        let r = &self.records[record];
        let n = r.num_tokens.min(max_tokens);
        let per_token = self.num_layers * self.hidden_dim;
        let data: Vec<f64> = r.states[..n * per_token].iter().map(|&v| f64::from(v)).collect();
        Array3::from_shape_vec((n, self.num_layers, self.hidden_dim), data)
            .expect("record length checked on construction")
    }

    fn validate(&self) -> Result<()> {
        let per_token = self.num_layers * self.hidden_dim;
        let mut seen = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.states.len() != r.num_tokens * per_token {
                return Err(Error::Dimension(format!(
                    "record {i} holds {} values, expected {}",
                    r.states.len(),
                    r.num_tokens * per_token
                )));
            }
            if r.states.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("record {i} contains non-finite values")));
            }
            if seen.insert(r.doc_id.as_str(), i).is_some() {
                return Err(Error::Validation(format!("duplicate doc id {:?}", r.doc_id)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            to_u32(self.hidden_dim)?,
            to_u32(self.num_layers)?,
            to_u32(self.records.len())?,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&to_u32(r.doc_id.len())?.to_le_bytes());
            out.extend_from_slice(r.doc_id.as_bytes());
            out.extend_from_slice(&to_u32(r.num_tokens)?.to_le_bytes());
            for v in &r.states {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        let header =
            |rd: &mut Reader| -> Option<(u32, u32, u32, u32)> { Some((rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?)) };
        if rd.take(4) != Some(MAGIC.as_slice()) {
            return Err(Error::CacheFormat("bad magic, expected TEC1".into()));
        }
        let (version, h, l, count) = header(&mut rd).ok_or_else(|| Error::CacheFormat("truncated header".into()))?;
        if version != VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        let (h, l) = (h as usize, l as usize);
        let mut cache = EmbeddingCache::new(h, l);
        let mut ids = HashMap::new();
        for record in 0..count as usize {
            let corrupt = |message: &str| Error::CacheCorrupt {
                record,
                message: message.to_string(),
            };
            let id_len = rd.u32().ok_or_else(|| corrupt("truncated id length"))? as usize;
            let id_bytes = rd.take(id_len).ok_or_else(|| corrupt("truncated id"))?;
            let doc_id = std::str::from_utf8(id_bytes)
                .map_err(|_| corrupt("doc id is not UTF-8"))?
                .to_string();
            let n = rd.u32().ok_or_else(|| corrupt("truncated token count"))? as usize;
            let len = n
                .checked_mul(l)
                .and_then(|v| v.checked_mul(h))
                .ok_or_else(|| corrupt("tensor size overflows"))?;
            let payload = len
                .checked_mul(4)
                .and_then(|b| rd.take(b))
                .ok_or_else(|| corrupt("truncated payload"))?;
            let states: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if states.iter().any(|v| !v.is_finite()) {
                return Err(corrupt("non-finite value"));
            }
            if ids.insert(doc_id.clone(), record).is_some() {
                return Err(corrupt("duplicate doc id"));
            }
            cache.records.push(CacheRecord {
                doc_id,
                num_tokens: n,
                states,
            });
        }
        if rd.pos != bytes.len() {
            return Err(Error::CacheFormat(format!(
                "{} trailing bytes after last record",
                bytes.len() - rd.pos
            )));
        }
        Ok(cache)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_cache(cache: &EmbeddingCache, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = cache.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingCache::from_bytes(&bytes)
}

/// Trainable layer-mixing weights `b`, one per transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights(pub Array1<f64>);

impl PoolingWeights {
    /// Uniform `1/L`, i.e. the layer average.
    pub fn uniform(num_layers: usize) -> Self {
        Self(Array1::from_elem(num_layers, 1.0 / num_layers as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `x_e[d] = sum_l states[l][d] * b[l]` for one token's `L x H` states.
pub fn pool_layers(states: ArrayView2<'_, f64>, b: &PoolingWeights) -> Result<Array1<f64>> {
    if states.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "{} layers in states, {} pooling weights",
            states.nrows(),
            b.len()
        )));
    }
    Ok(states.t().dot(&b.0))
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stand-in for transformer states: each distinct token string maps, through
/// a hash of the token and `seed`, to a fixed `L x H` block of values in
/// [-1, 1]. Output is `N x L x H`.
pub fn synthetic_embed<S: AsRef<str>>(tokens: &[S], hidden_dim: usize, num_layers: usize, seed: u64) -> Array3<f32> {
    let mut out = Array3::zeros((tokens.len(), num_layers, hidden_dim));
    let mut memo: HashMap<&str, Array2<f32>> = HashMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        let block = memo.entry(tok).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(tok.as_bytes(), seed));
            Array2::from_shape_fn((num_layers, hidden_dim), |_| rng.random_range(-1.0f32..=1.0))
        });
        out.slice_mut(ndarray::s![i, .., ..]).assign(block);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn pooling_selects_and_averages() {
        let states = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let one_hot = PoolingWeights(array![0.0, 1.0, 0.0]);
        assert_eq!(pool_layers(states.view(), &one_hot).unwrap(), array![3.0, 4.0]);
        let mean = pool_layers(states.view(), &PoolingWeights::uniform(3)).unwrap();
        assert_relative_eq!(mean[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(mean[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pooling_hand_arithmetic() {
        // 2 * 0.25 + 4 * 0.5
        let states = array![[2.0], [4.0]];
        let x = pool_layers(states.view(), &PoolingWeights(array![0.25, 0.5])).unwrap();
        assert_eq!(x, array![2.5]);
    }

    #[test]
    fn pooling_rejects_mismatched_layers() {
        let states = array![[2.0], [4.0]];
        assert!(pool_layers(states.view(), &PoolingWeights::uniform(3)).is_err());
    }

    #[test]
    fn synthetic_embeddings_are_token_keyed() {
        let e = synthetic_embed(&["a", "b", "a"], 8, 3, 7);
        assert_eq!(e.dim(), (3, 3, 8));
        assert_eq!(e.slice(ndarray::s![0, .., ..]), e.slice(ndarray::s![2, .., ..]));
        assert_ne!(e.slice(ndarray::s![0, .., ..]), e.slice(ndarray::s![1, .., ..]));
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));

        let again = synthetic_embed(&["a"], 8, 3, 7);
        assert_eq!(again.slice(ndarray::s![0, .., ..]), e.slice(ndarray::s![0, .., ..]));
        let other_seed = synthetic_embed(&["a"], 8, 3, 8);
        assert_ne!(other_seed, again);
    }

    fn sample_cache() -> EmbeddingCache {
        let mut c = EmbeddingCache::new(4, 2);
        c.push("d1", &synthetic_embed(&["x", "y", "z"], 4, 2, 1)).unwrap();
        c.push("d2", &synthetic_embed(&["w"], 4, 2, 1)).unwrap();
        c
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample_cache().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(EmbeddingCache::from_bytes(&bad), Err(Error::CacheFormat(_))));
        bytes[4] = 2;
        assert!(matches!(EmbeddingCache::from_bytes(&bytes), Err(Error::CacheFormat(_))));
    }

    #[test]
    fn truncated_record_names_its_index() {
        let bytes = sample_cache().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match EmbeddingCache::from_bytes(cut) {
            Err(Error::CacheCorrupt { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_keeps_leading_tokens() {
        let c = sample_cache();
        let s = c.states(0, 2);
        assert_eq!(s.dim(), (2, 2, 4));
        assert_eq!(s[[1, 1, 3]], f64::from(c.records[0].states[4 * 2 + 4 + 3]));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tec");
        let c = sample_cache();
        write_cache(&c, &path).unwrap();
        assert_eq!(read_cache(&path).unwrap(), c);
    }

    #[test]
    fn write_rejects_non_finite() {
        let mut c = sample_cache();
        c.records[0].states[0] = f32::NAN;
        assert!(c.to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_linear_in_weights(
            states in proptest::collection::vec(-10.0f64..10.0, 12),
            b1 in proptest::collection::vec(-3.0f64..3.0, 3),
            b2 in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let s = Array2::from_shape_vec((3, 4), states).unwrap();
            let p1 = pool_layers(s.view(), &PoolingWeights(Array1::from(b1.clone()))).unwrap();
            let p2 = pool_layers(s.view(), &PoolingWeights(Array1::from(b2.clone()))).unwrap();
            let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
            let p12 = pool_layers(s.view(), &PoolingWeights(Array1::from(sum))).unwrap();
            for d in 0..4 {
                let expect = p1[d] + p2[d];
                prop_assert!((p12[d] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}

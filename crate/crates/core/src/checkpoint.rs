//! Self-describing binary container for trained parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TMC1"            4 bytes
//! version           u32 (= 1)
//! header length     u32
//! header            UTF-8 JSON: dims, labels, background count,
//!                   epochs_done, optimizer_step (null when absent)
//! parameters        13 tensors of f64, in TENSOR_NAMES order
//! [first moments]   13 tensors, only when optimizer_step is set
//! [second moments]  13 tensors, only when optimizer_step is set
//! ```
//!
//! Tensor lengths follow from `dims`; matrices are row-major `out x in`,
//! and the topic-word matrix is `V x K`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams, TopicLayout};
use crate::training::AdamState;

const MAGIC: &[u8; 4] = b"TMC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layout: TopicLayout,
    pub params: ModelParams,
    pub epochs_done: usize,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    aspect_labels: Vec<String>,
    sentiment_labels: Vec<String>,
    background: usize,
    epochs_done: usize,
    optimizer_step: Option<u64>,
}

impl Checkpoint {
    pub fn new(layout: TopicLayout, params: ModelParams) -> Result<Self> {
        params.check_layout(&layout, params.dims().vocab)?;
        Ok(Self {
            layout,
            params,
            epochs_done: 0,
            optimizer: None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dims: self.params.dims(),
            aspect_labels: self.layout.aspect_labels().to_vec(),
            sentiment_labels: self.layout.sentiment_labels().to_vec(),
            background: self.layout.num_background(),
            epochs_done: self.epochs_done,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |p: &ModelParams| {
            for t in p.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        put(&self.params);
        if let Some(opt) = &self.optimizer {
            put(&opt.m);
            put(&opt.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing TMC1 magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        let layout = TopicLayout::new(header.aspect_labels, header.sentiment_labels, header.background)?;
        let d = header.dims;
        if d.topics != layout.num_topics()
            || d.aspects != layout.num_aspects()
            || d.sentiments != layout.num_sentiments()
        {
            return Err(bad("dims disagree with topic labels".into()));
        }
        let mut rest = &bytes[12 + hlen..];
        let mut take = || -> Result<ModelParams> {
            let mut p = ModelParams::zeros(d);
            for t in p.tensors_mut() {
                let n = t.len() * 8;
                if rest.len() < n {
                    return Err(bad("truncated tensor data".into()));
                }
                for (v, chunk) in t.iter_mut().zip(rest[..n].chunks_exact(8)) {
                    *v = f64::from_le_bytes(chunk.try_into().unwrap());
                }
                rest = &rest[n..];
            }
            Ok(p)
        };
        let params = take()?;
        let optimizer = match header.optimizer_step {
            Some(step) => Some(AdamState {
                m: take()?,
                v: take()?,
                step,
            }),
            None => None,
        };
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            layout,
            params,
            epochs_done: header.epochs_done,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(with_opt: bool) -> Checkpoint {
        let layout = TopicLayout::with_aspects(&["food", "service"], 2).unwrap();
        let d = ModelDims {
            vocab: 7,
            topics: 6,
            aspects: 2,
            sentiments: 2,
            hidden_dim: 3,
            num_layers: 2,
            encoder_width: 4,
            senti_width: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fill = || {
            let mut p = ModelParams::zeros(d);
            for t in p.tensors_mut() {
                t.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            }
            p
        };
        let params = fill();
        let optimizer = with_opt.then(|| AdamState {
            m: fill(),
            v: fill(),
            step: 42,
        });
        Checkpoint {
            layout,
            params,
            epochs_done: 3,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for opt in [false, true] {
            let c = sample(opt);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(true);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample(false).to_bytes();
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}

//! Topic-word matrix initialization from curated seed words.
//!
//! Seed file format:
//!
//! ```json
//! {
//!   "aspects": {"food": ["food", "pizza"], "service": ["service", "waiter"]},
//!   "sentiments": {"positive": ["great"], "negative": ["rude"]},
//!   "background": [["might", "may", "must", "could"], ["ok", "okay"]]
//! }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::TopicLayout;

/// Default seed increment.
pub const DEFAULT_SEED_VALUE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSpec {
    pub aspects: Vec<(String, Vec<String>)>,
    pub sentiments: Vec<(String, Vec<String>)>,
    pub background: Vec<Vec<String>>,
    pub seed_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedingMethod {
    Direct,
    Bootstrap,
}

impl std::str::FromStr for SeedingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SeedingMethod::Direct),
            "bootstrap" => Ok(SeedingMethod::Bootstrap),
            other => Err(Error::Config(format!("unknown seeding method {other:?}"))),
        }
    }
}

fn word_list(v: &Value, what: &str) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Validation(format!("{what}: expected a list of words")))?;
    arr.iter()
        .map(|w| {
            w.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Validation(format!("{what}: seed words must be strings")))
        })
        .collect()
}

fn labeled_lists(v: Option<&Value>, key: &str) -> Result<Vec<(String, Vec<String>)>> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Validation(format!("\"{key}\" must map labels to word lists")))?;
    obj.iter()
        .map(|(label, words)| Ok((label.clone(), word_list(words, &format!("{key}.{label}"))?)))
        .collect()
}

impl SeedSpec {
    pub fn empty(seed_value: f64) -> Self {
        Self {
            aspects: Vec::new(),
            sentiments: Vec::new(),
            background: Vec::new(),
            seed_value,
        }
    }

    pub fn from_json_str(text: &str, seed_value: f64) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Validation(format!("seed file: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Validation("seed file must be a JSON object".into()))?;
        if let Some(extra) = obj
            .keys()
            .find(|k| !["aspects", "sentiments", "background"].contains(&k.as_str()))
        {
            return Err(Error::Validation(format!("unexpected key {extra:?} in seed file")));
        }
        let background = match obj.get("background") {
            None => Vec::new(),
            Some(b) => b
                .as_array()
                .ok_or_else(|| Error::Validation("\"background\" must be a list of word lists".into()))?
                .iter()
                .enumerate()
                .map(|(i, l)| word_list(l, &format!("background[{i}]")))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            aspects: labeled_lists(obj.get("aspects"), "aspects")?,
            sentiments: labeled_lists(obj.get("sentiments"), "sentiments")?,
            background,
            seed_value,
        })
    }

    pub fn load(path: impl AsRef<Path>, seed_value: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, seed_value)
    }

    /// Inverse of [`SeedSpec::from_json_str`]; `seed_value` is not stored.
    pub fn to_json_string(&self) -> String {
        let lists = |l: &[(String, Vec<String>)]| {
            Value::Object(l.iter().map(|(k, w)| (k.clone(), Value::from(w.clone()))).collect())
        };
        let v = serde_json::json!({
            "aspects": lists(&self.aspects),
            "sentiments": lists(&self.sentiments),
            "background": self.background,
        });
        serde_json::to_string_pretty(&v).expect("seed lists serialize")
    }

    pub fn aspect_labels(&self) -> Vec<String> {
        self.aspects.iter().map(|(l, _)| l.clone()).collect()
    }

    /// Checks every seeded topic exists in `layout` and `seed_value > 0`.
    pub fn validate(&self, layout: &TopicLayout) -> Result<()> {
        if !(self.seed_value > 0.0 && self.seed_value.is_finite()) {
            return Err(Error::Config(format!(
                "seed value must be positive, got {}",
                self.seed_value
            )));
        }
        for (label, _) in &self.aspects {
            if !layout.aspect_labels().contains(label) {
                return Err(Error::Validation(format!(
                    "seed aspect {label:?} is not in the topic layout"
                )));
            }
        }
        for (label, _) in &self.sentiments {
            if !layout.sentiment_labels().contains(label) {
                return Err(Error::Validation(format!(
                    "seed sentiment {label:?} is not in the topic layout"
                )));
            }
        }
        if self.background.len() > layout.num_background() {
            return Err(Error::Validation(format!(
                "{} background seed lists for {} background topics",
                self.background.len(),
                layout.num_background()
            )));
        }
        Ok(())
    }

    /// Seed words resolved to topic indices.
    pub fn topic_seeds(&self, layout: &TopicLayout) -> Result<Vec<(usize, &[String])>> {
        self.validate(layout)?;
        let mut out = Vec::new();
        for (label, words) in &self.aspects {
            let k = layout
                .aspect_labels()
                .iter()
                .position(|l| l == label)
                .expect("validated");
            out.push((k, words.as_slice()));
        }
        for (label, words) in &self.sentiments {
            let k = layout
                .sentiment_labels()
                .iter()
                .position(|l| l == label)
                .expect("validated");
            out.push((layout.sentiments().start + k, words.as_slice()));
        }
        for (i, words) in self.background.iter().enumerate() {
            out.push((layout.backgrounds().start + i, words.as_slice()));
        }
        Ok(out)
    }

    /// Seed words missing from `vocab`, as `topic-name: word` strings.
    pub fn missing_words(&self, layout: &TopicLayout, vocab: &Vocabulary) -> Result<Vec<String>> {
        Ok(self
            .topic_seeds(layout)?
            .into_iter()
            .flat_map(|(k, words)| {
                words
                    .iter()
                    .filter(|w| vocab.get(w).is_none())
                    .map(move |w| format!("{}: {w}", layout.topic_name(k)))
            })
            .collect())
    }
}

/// Xavier-normal `V x K` matrix.
pub fn init_beta<R: Rng + ?Sized>(vocab: usize, topics: usize, rng: &mut R) -> Array2<f64> {
    let std = (2.0 / (vocab + topics) as f64).sqrt();
    Array2::from_shape_simple_fn((vocab, topics), || std * rng.sample::<f64, _>(StandardNormal))
}

fn seed_topic_direct(beta: &mut Array2<f64>, topic: usize, words: &[String], vocab: &Vocabulary, c: f64, name: &str) {
    let mut hit = 0;
    for w in words {
        match vocab.get(w) {
            Some(v) => {
                beta[[v, topic]] += c;
                hit += 1;
            }
            None => warn!("seed word {w:?} for {name} is not in the vocabulary"),
        }
    }
    if hit == 0 && !words.is_empty() {
        warn!("no seed word of {name} is in the vocabulary; topic left unseeded");
    }
}

/// Adds the seed value to `beta[v][t]` for every in-vocabulary seed word `v`
/// of topic `t`.
pub fn direct_seed(beta: &mut Array2<f64>, spec: &SeedSpec, layout: &TopicLayout, vocab: &Vocabulary) -> Result<()> {
    check_beta(beta, layout, vocab)?;
    for (k, words) in spec.topic_seeds(layout)? {
        seed_topic_direct(beta, k, words, vocab, spec.seed_value, &layout.topic_name(k));
    }
    Ok(())
}

fn check_beta(beta: &Array2<f64>, layout: &TopicLayout, vocab: &Vocabulary) -> Result<()> {
    if beta.dim() != (vocab.len(), layout.num_topics()) {
        return Err(Error::Dimension(format!(
            "beta is {:?}, expected ({}, {})",
            beta.dim(),
            vocab.len(),
            layout.num_topics()
        )));
    }
    Ok(())
}

/// Word vectors in plain text: one `word v1 ... vd` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddings {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl StaticEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} for dimension {}",
                v.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Parses the text format. A leading `count dim` header line, as written
    /// by common word2vec tools, is skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut emb: Option<StaticEmbeddings> = None;
        for (n, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.into(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let word = fields[0];
            let values = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(format!("non-numeric field {f:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(parse_err(format!("word {word:?} has no vector")));
            }
            let e = emb.get_or_insert_with(|| StaticEmbeddings::new(values.len()));
            if values.len() != e.dim {
                return Err(parse_err(format!("expected {} values, found {}", e.dim, values.len())));
            }
            e.vectors.insert(word.to_string(), values);
        }
        emb.ok_or_else(|| Error::EmptyInput(format!("no embeddings in {}", path.display())))
    }
}

pub fn load_static_embeddings(path: impl AsRef<Path>) -> Result<StaticEmbeddings> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StaticEmbeddings::parse(&text, path)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Seeds every vocabulary word with an embedding in proportion to its cosine
/// similarity to the mean embedding of the topic's seed words. Increments are
/// signed. A topic none of whose seeds has an embedding falls back to direct
/// seeding.
pub fn bootstrap_seed(
    beta: &mut Array2<f64>,
    spec: &SeedSpec,
    layout: &TopicLayout,
    vocab: &Vocabulary,
    emb: &StaticEmbeddings,
) -> Result<()> {
    check_beta(beta, layout, vocab)?;
    let vocab_vectors: Vec<Option<&[f64]>> = vocab.words().iter().map(|w| emb.get(w)).collect();
    if vocab_vectors.iter().all(Option::is_none) {
        return Err(Error::Validation("no vocabulary word has a static embedding".into()));
    }
    let c = spec.seed_value;
    for (k, words) in spec.topic_seeds(layout)? {
        let name = layout.topic_name(k);
        let mut mean = vec![0.0; emb.dim];
        let mut count = 0usize;
        for w in words {
            if let Some(v) = emb.get(w) {
                mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
                count += 1;
            }
        }
        if count == 0 {
            if !words.is_empty() {
                warn!("no seed word of {name} has an embedding; falling back to direct seeding");
            }
            seed_topic_direct(beta, k, words, vocab, c, &name);
            continue;
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for (v, u) in vocab_vectors.iter().enumerate() {
            if let Some(u) = u {
                beta[[v, k]] += c * cosine(&mean, u);
            }
        }
    }
    Ok(())
}

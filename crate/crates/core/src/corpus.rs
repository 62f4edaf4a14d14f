//! Corpus ingestion: tokenization, vocabulary building, bag-of-words vectors
//! and rating targets.
//!
//! Training documents and labeled evaluation sentences are both JSON-lines
//! files. Training lines look like `{"id": "d1", "text": "...", "rating": 5}`,
//! evaluation lines carry a `labels` array of `{"aspect", "sentiment"}` pairs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub min_token_length: usize,
    pub min_doc_frequency: usize,
    pub max_vocab_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_token_length: 2,
            min_doc_frequency: 2,
            max_vocab_size: 2000,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_vocab_size == 0 {
            return Err(Error::Config("max_vocab_size must be at least 1".into()));
        }
        if self.min_token_length == 0 {
            return Err(Error::Config("min_token_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Lowercases (when configured) and splits on runs of non-alphanumeric
/// characters, dropping tokens shorter than `min_token_length` characters.
pub fn preprocess_text(raw: &str, cfg: &PreprocessConfig) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().count() >= cfg.min_token_length)
        .map(|t| if cfg.lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Ordered BoW word list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, idx: usize) -> Option<&str> {
        self.words.get(idx).map(String::as_str)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// One word per line, line order = index order.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for w in &self.words {
            writeln!(out, "{w}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let word = line.trim_end_matches('\r');
            if word.is_empty() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    message: "empty vocabulary entry".into(),
                });
            }
            words.push(word.to_string());
        }
        Self::from_words(words)
    }
}

/// Keeps words with document frequency >= `min_doc_frequency`, then the
/// `max_vocab_size` most frequent by corpus count. Order is descending count,
/// ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(docs: &[Vec<S>], cfg: &PreprocessConfig) -> Result<Vocabulary> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyInput("no documents to build a vocabulary from".into()));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for doc in docs {
        let mut seen = BTreeSet::new();
        for tok in doc {
            let tok = tok.as_ref();
            let entry = counts.entry(tok).or_insert((0, 0));
            entry.0 += 1;
            if seen.insert(tok) {
                entry.1 += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, (_, df))| *df >= cfg.min_doc_frequency)
        .map(|(w, (count, _))| (w, count))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(cfg.max_vocab_size);
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w.to_string()).collect())
}

/// Raw counts of in-vocabulary tokens. Out-of-vocabulary tokens are ignored
/// and the result is not normalized.
pub fn bow_vector<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<u32> {
    let mut x = vec![0u32; vocab.len()];
    for t in tokens {
        if let Some(i) = vocab.get(t.as_ref()) {
            x[i] += 1;
        }
    }
    x
}

/// Maps a 1..=5 star rating linearly onto [0, 1].
pub fn rescale_rating(r: i64) -> Result<f64> {
    if !(1..=5).contains(&r) {
        return Err(Error::RatingOutOfRange(r));
    }
    Ok((r - 1) as f64 / 4.0)
}

/// One line of the training corpus, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    pub rating: Option<u8>,
    /// Rescaled rating; present iff `rating` is.
    pub y_s: Option<f64>,
    pub bow: Vec<u32>,
}

impl DocumentRecord {
    pub fn from_raw(raw: &RawDocument, vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<Self> {
        let y_s = raw.rating.map(rescale_rating).transpose()?;
        let tokens = preprocess_text(&raw.text, cfg);
        Ok(Self {
            id: raw.id.clone(),
            text: raw.text.clone(),
            rating: raw.rating.map(|r| r as u8),
            y_s,
            bow: bow_vector(&tokens, vocab),
        })
    }

    pub fn to_raw(&self) -> RawDocument {
        RawDocument {
            id: self.id.clone(),
            text: self.text.clone(),
            rating: self.rating.map(i64::from),
        }
    }
}

pub(crate) fn for_each_json_line<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> std::result::Result<(), String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: n + 1,
            message,
        };
        let value: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        f(n + 1, value).map_err(parse_err)?;
    }
    Ok(())
}

/// Reads a training corpus, validating every rating.
pub fn load_raw_documents(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    for_each_json_line(path, |_, doc: RawDocument| {
        if let Some(r) = doc.rating {
            rescale_rating(r).map_err(|e| e.to_string())?;
        }
        docs.push(doc);
        Ok(())
    })?;
    Ok(docs)
}

pub fn write_raw_documents(path: impl AsRef<Path>, docs: &[RawDocument]) -> Result<()> {
    write_json_lines(path, docs)
}

/// Reads a training corpus and featurizes it against `vocab`.
pub fn load_documents(
    path: impl AsRef<Path>,
    cfg: &PreprocessConfig,
    vocab: &Vocabulary,
) -> Result<Vec<DocumentRecord>> {
    load_raw_documents(path)?
        .iter()
        .map(|raw| DocumentRecord::from_raw(raw, vocab, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(Error::Validation(format!("unknown sentiment label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub aspect: String,
    pub sentiment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawLabeled {
    id: String,
    text: String,
    #[serde(default)]
    labels: Vec<GoldLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub gold: BTreeSet<(String, Polarity)>,
}

impl LabeledSentence {
    pub fn gold_aspects(&self) -> BTreeSet<&str> {
        self.gold.iter().map(|(a, _)| a.as_str()).collect()
    }
}

/// Reads labeled evaluation sentences. Aspects must come from `aspect_labels`.
pub fn load_labeled_eval(path: impl AsRef<Path>, aspect_labels: &[String]) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for_each_json_line(path, |_, raw: RawLabeled| {
        let mut gold = BTreeSet::new();
        for l in raw.labels {
            if !aspect_labels.contains(&l.aspect) {
                return Err(format!("unknown aspect label {:?}", l.aspect));
            }
            let pol: Polarity = l.sentiment.parse().map_err(|e: Error| e.to_string())?;
            gold.insert((l.aspect, pol));
        }
        out.push(LabeledSentence {
            id: raw.id,
            text: raw.text,
            gold,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_labeled_eval(path: impl AsRef<Path>, sentences: &[LabeledSentence]) -> Result<()> {
    let raw: Vec<RawLabeled> = sentences
        .iter()
        .map(|s| RawLabeled {
            id: s.id.clone(),
            text: s.text.clone(),
            labels: s
                .gold
                .iter()
                .map(|(a, p)| GoldLabel {
                    aspect: a.clone(),
                    sentiment: p.as_str().to_string(),
                })
                .collect(),
        })
        .collect();
    write_json_lines(path, &raw)
}

pub(crate) fn write_json_lines<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("JSON serialization of plain records");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizes_on_non_alphanumeric_runs() {
        let cfg = PreprocessConfig {
            min_token_length: 1,
            ..Default::default()
        };
        assert_eq!(
            preprocess_text("The steak is amazing!", &cfg),
            toks(&["the", "steak", "is", "amazing"])
        );
        assert!(preprocess_text("", &cfg).is_empty());
    }

    #[test]
    fn drops_short_tokens() {
        let cfg = PreprocessConfig::default();
        assert_eq!(preprocess_text("Wi-Fi 5x", &cfg), toks(&["wi", "fi", "5x"]));
        assert_eq!(preprocess_text("a b cd", &cfg), toks(&["cd"]));
    }

    #[test]
    fn vocab_orders_by_count_then_lexicographically() {
        let cfg = PreprocessConfig {
            max_vocab_size: 2,
            min_doc_frequency: 1,
            ..Default::default()
        };
        let docs = vec![toks(&["a", "b"]), toks(&["a", "c"])];
        let vocab = build_vocab(&docs, &cfg).unwrap();
        assert_eq!(vocab.words(), &toks(&["a", "b"])[..]);
        assert_eq!(vocab.get("b"), Some(1));
        assert_eq!(vocab.get("c"), None);
    }

    #[test]
    fn vocab_empty_after_filtering() {
        let cfg = PreprocessConfig {
            min_doc_frequency: 2,
            ..Default::default()
        };
        let err = build_vocab(&[toks(&["a"])], &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptyVocabulary));
    }

    #[test]
    fn doc_frequency_counts_documents_not_tokens() {
        let cfg = PreprocessConfig {
            min_doc_frequency: 2,
            ..Default::default()
        };
        let docs = vec![toks(&["x", "x", "x", "y"]), toks(&["y"])];
        let vocab = build_vocab(&docs, &cfg).unwrap();
        assert_eq!(vocab.words(), &toks(&["y"])[..]);
    }

    #[test]
    fn bow_counts_are_raw() {
        let vocab = Vocabulary::from_words(toks(&["a", "b", "c"])).unwrap();
        assert_eq!(bow_vector(&toks(&["a", "a", "b"]), &vocab), vec![2, 1, 0]);
        assert_eq!(bow_vector(&toks(&["zz", "qq"]), &vocab), vec![0, 0, 0]);
    }

    #[test]
    fn rescales_ratings() {
        assert_eq!(rescale_rating(1).unwrap(), 0.0);
        assert_eq!(rescale_rating(3).unwrap(), 0.5);
        assert_eq!(rescale_rating(5).unwrap(), 1.0);
        assert!(matches!(rescale_rating(0), Err(Error::RatingOutOfRange(0))));
        assert!(matches!(rescale_rating(7), Err(Error::RatingOutOfRange(7))));
        let scaled: Vec<f64> = (1..=5).map(|r| rescale_rating(r).unwrap()).collect();
        assert!(scaled.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn loads_documents_and_rejects_bad_rating() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"d1\",\"text\":\"good good food\",\"rating\":5}\n{\"id\":\"d2\",\"text\":\"meh\"}\n",
        )
        .unwrap();
        let vocab = Vocabulary::from_words(toks(&["good", "food"])).unwrap();
        let docs = load_documents(&path, &PreprocessConfig::default(), &vocab).unwrap();
        assert_eq!(docs[0].y_s, Some(1.0));
        assert_eq!(docs[0].bow, vec![2, 1]);
        assert_eq!(docs[1].rating, None);
        assert_eq!(docs[1].y_s, None);

        std::fs::write(
            &path,
            "{\"id\":\"d1\",\"text\":\"x\",\"rating\":5}\n{\"id\":\"d2\",\"text\":\"x\",\"rating\":7}\n",
        )
        .unwrap();
        match load_raw_documents(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains('7'));
            }
            e => panic!("unexpected error {e}"),
        }

        std::fs::write(&path, "{\"id\": 3}\n").unwrap();
        assert!(matches!(load_raw_documents(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn loads_labeled_sentences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"s1\",\"text\":\"...\",\"labels\":[{\"aspect\":\"food\",\"sentiment\":\"positive\"}]}\n",
        )
        .unwrap();
        let labels = toks(&["food", "service"]);
        let sents = load_labeled_eval(&path, &labels).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(
            sents[0].gold.iter().next().unwrap(),
            &("food".to_string(), Polarity::Positive)
        );

        std::fs::write(
            &path,
            "{\"id\":\"s1\",\"text\":\"...\",\"labels\":[{\"aspect\":\"decor\",\"sentiment\":\"positive\"}]}\n",
        )
        .unwrap();
        assert!(matches!(load_labeled_eval(&path, &labels), Err(Error::Parse { .. })));
        std::fs::write(
            &path,
            "{\"id\":\"s1\",\"text\":\"...\",\"labels\":[{\"aspect\":\"food\",\"sentiment\":\"great\"}]}\n",
        )
        .unwrap();
        assert!(load_labeled_eval(&path, &labels).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocabulary::from_words(toks(&["food", "staff", "great"])).unwrap();
        vocab.write(&path).unwrap();
        assert_eq!(Vocabulary::read(&path).unwrap(), vocab);
    }

    proptest! {
        #[test]
        fn bow_mass_bounded_by_token_count(
            tokens in proptest::collection::vec("[a-e]{1,2}", 0..40)
        ) {
            let vocab = Vocabulary::from_words(toks(&["a", "b", "c", "dd", "ee"])).unwrap();
            let x = bow_vector(&tokens, &vocab);
            let total: u32 = x.iter().sum();
            let all_in = tokens.iter().all(|t| vocab.get(t).is_some());
            prop_assert!(total as usize <= tokens.len());
            prop_assert_eq!(total as usize == tokens.len(), all_in);
        }

        #[test]
        fn vocab_is_deterministic(
            docs in proptest::collection::vec(proptest::collection::vec("[a-f]", 1..8), 1..10)
        ) {
            let cfg = PreprocessConfig { min_doc_frequency: 1, max_vocab_size: 4, ..Default::default() };
            let a = build_vocab(&docs, &cfg).unwrap();
            let b = build_vocab(&docs, &cfg).unwrap();
            prop_assert_eq!(a.words(), b.words());
            for (i, w) in a.words().iter().enumerate() {
                prop_assert_eq!(a.get(w), Some(i));
            }
        }

        #[test]
        fn corpus_file_round_trip(
            docs in proptest::collection::vec(("[a-z0-9]{1,6}", "[ -~]{0,30}", proptest::option::of(1i64..=5)), 0..12)
        ) {
            let raw: Vec<RawDocument> = docs
                .into_iter()
                .map(|(id, text, rating)| RawDocument { id, text, rating })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.jsonl");
            write_raw_documents(&path, &raw).unwrap();
            prop_assert_eq!(load_raw_documents(&path).unwrap(), raw);
        }
    }
}

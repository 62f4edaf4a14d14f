//! Generated corpora with planted aspect and sentiment word families, and
//! random parameter helpers for tests and demos.
//!
//! Every document mentions one or two aspects. A mention is a few words
//! from the aspect's family, zero to two words from one sentiment family,
//! and filler. The rating is `1 + round(4 * pos / (pos + neg))` over the
//! sentiment words in the document (3 when there are none).

use ndarray::{Array1, Array3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{
    build_vocab, preprocess_text, DocumentRecord, LabeledSentence, Polarity, PreprocessConfig, RawDocument, Vocabulary,
};
use crate::embed_cache::{synthetic_embed, EmbeddingCache, PoolingWeights};
use crate::error::Result;
use crate::infer::{evaluate, score, select_aspect_threshold, DocScores, EvalReport, InferenceConfig, Prediction};
use crate::model::{ModelDims, ModelParams, TopicLayout};
use crate::seeding::{SeedSpec, SeedingMethod, DEFAULT_SEED_VALUE};
use crate::training::{train, TrainConfig, TrainReport};

pub const ASPECT_FAMILIES: [(&str, [&str; 8]); 3] = [
    (
        "food",
        ["pizza", "pasta", "burger", "sushi", "salad", "steak", "dessert", "soup"],
    ),
    (
        "service",
        [
            "waiter",
            "staff",
            "waitress",
            "server",
            "manager",
            "host",
            "bartender",
            "hostess",
        ],
    ),
    (
        "ambience",
        [
            "music",
            "decor",
            "lighting",
            "atmosphere",
            "interior",
            "patio",
            "seating",
            "view",
        ],
    ),
];
pub const POSITIVE_WORDS: [&str; 6] = ["great", "excellent", "delicious", "friendly", "amazing", "lovely"];
pub const NEGATIVE_WORDS: [&str; 6] = ["terrible", "awful", "rude", "bland", "horrible", "dirty"];
pub const FILLER_WORDS: [&str; 24] = [
    "the", "was", "we", "it", "and", "our", "really", "very", "there", "this", "they", "had", "at", "of", "to", "in",
    "for", "on", "with", "just", "all", "so", "again", "here",
];

/// Seed words per family; the rest of each family is left to be learned.
pub const SEEDS_PER_FAMILY: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub two_aspect_fraction: f64,
    /// Probability that an aspect mention carries no sentiment words.
    pub neutral_fraction: f64,
    /// Probability that a training document has a rating.
    pub rated_fraction: f64,
    pub filler_range: (usize, usize),
    pub background_topics: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_docs: 2000,
            dev_docs: 200,
            test_docs: 400,
            two_aspect_fraction: 0.25,
            neutral_fraction: 0.15,
            rated_fraction: 0.9,
            filler_range: (2, 5),
            background_topics: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub layout: TopicLayout,
    pub seeds: SeedSpec,
    pub train: Vec<RawDocument>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

struct Generated {
    text: String,
    rating: i64,
    gold: Vec<(String, Polarity)>,
}

fn generate_one<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Generated {
    let n_aspects = if rng.random_bool(cfg.two_aspect_fraction) { 2 } else { 1 };
    let mut families: Vec<usize> = (0..ASPECT_FAMILIES.len()).collect();
    families.shuffle(rng);
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut words: Vec<&str> = Vec::new();
    let mut gold = Vec::new();
    for &f in &families[..n_aspects] {
        let (label, family) = ASPECT_FAMILIES[f];
        let polarity = if rng.random_bool(cfg.neutral_fraction) {
            Polarity::Neutral
        } else if rng.random_bool(0.5) {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        let mut clause: Vec<&str> = (0..rng.random_range(2..=3))
            .map(|_| *family.choose(rng).unwrap())
            .collect();
        let senti_words: &[&str] = match polarity {
            Polarity::Positive => &POSITIVE_WORDS,
            Polarity::Negative => &NEGATIVE_WORDS,
            Polarity::Neutral => &[],
        };
        if !senti_words.is_empty() {
            let count = rng.random_range(1..=2);
            for _ in 0..count {
                clause.push(senti_words.choose(rng).unwrap());
            }
            if polarity == Polarity::Positive {
                pos += count;
            } else {
                neg += count;
            }
        }
        let (lo, hi) = cfg.filler_range;
        for _ in 0..rng.random_range(lo..=hi) {
            clause.push(FILLER_WORDS.choose(rng).unwrap());
        }
        clause.shuffle(rng);
        words.extend(clause);
        gold.push((label.to_string(), polarity));
    }
    let rating = if pos + neg == 0 {
        3
    } else {
        1 + (4.0 * pos as f64 / (pos + neg) as f64).round() as i64
    };
    Generated {
        text: words.join(" "),
        rating,
        gold,
    }
}

pub fn synthetic_layout(background: usize) -> TopicLayout {
    let labels: Vec<&str> = ASPECT_FAMILIES.iter().map(|(l, _)| *l).collect();
    TopicLayout::with_aspects(&labels, background).expect("fixed labels are valid")
}

/// The first [`SEEDS_PER_FAMILY`] words of every aspect and sentiment family.
pub fn synthetic_seeds() -> SeedSpec {
    let take = |w: &[&str]| w[..SEEDS_PER_FAMILY].iter().map(|s| s.to_string()).collect::<Vec<_>>();
    SeedSpec {
        aspects: ASPECT_FAMILIES.iter().map(|(l, w)| (l.to_string(), take(w))).collect(),
        sentiments: vec![
            ("positive".into(), take(&POSITIVE_WORDS)),
            ("negative".into(), take(&NEGATIVE_WORDS)),
        ],
        background: Vec::new(),
        seed_value: DEFAULT_SEED_VALUE,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = (0..cfg.train_docs)
        .map(|i| {
            let g = generate_one(cfg, &mut rng);
            RawDocument {
                id: format!("train-{i:05}"),
                text: g.text,
                rating: rng.random_bool(cfg.rated_fraction).then_some(g.rating),
            }
        })
        .collect();
    let mut labeled = |prefix: &str, n: usize| -> Vec<LabeledSentence> {
        (0..n)
            .map(|i| {
                let g = generate_one(cfg, &mut rng);
                LabeledSentence {
                    id: format!("{prefix}-{i:05}"),
                    text: g.text,
                    gold: g.gold.into_iter().collect(),
                }
            })
            .collect()
    };
    let dev = labeled("dev", cfg.dev_docs);
    let test = labeled("test", cfg.test_docs);
    SyntheticCorpus {
        layout: synthetic_layout(cfg.background_topics),
        seeds: synthetic_seeds(),
        train,
        dev,
        test,
    }
}

/// Cache of [`synthetic_embed`] states for `(id, text)` pairs, tokenized
/// with `pre`.
pub fn embed_texts<'a>(
    docs: impl IntoIterator<Item = (&'a str, &'a str)>,
    pre: &PreprocessConfig,
    hidden_dim: usize,
    num_layers: usize,
    seed: u64,
) -> Result<EmbeddingCache> {
    let mut cache = EmbeddingCache::new(hidden_dim, num_layers);
    for (id, text) in docs {
        let tokens = preprocess_text(text, pre);
        cache.push(id, &synthetic_embed(&tokens, hidden_dim, num_layers, seed))?;
    }
    Ok(cache)
}

/// Parameters with independent `N(0, scale^2)` entries; pooling weights
/// are uniform plus the same noise.
pub fn random_params<R: Rng + ?Sized>(dims: ModelDims, scale: f64, rng: &mut R) -> ModelParams {
    let mut p = ModelParams::zeros(dims);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let uniform = PoolingWeights::uniform(dims.num_layers);
    p.pooling = PoolingWeights(&uniform.0 + &p.pooling.0);
    p
}

/// `N x L x H` token states with standard-normal entries.
pub fn random_states<R: Rng + ?Sized>(
    num_tokens: usize,
    num_layers: usize,
    hidden_dim: usize,
    rng: &mut R,
) -> Array3<f64> {
    Array3::from_shape_simple_fn((num_tokens, num_layers, hidden_dim), || rng.sample(StandardNormal))
}

/// A random bag of words over `vocab` entries with `1..=max_tokens` tokens.
pub fn random_bow<R: Rng + ?Sized>(vocab: usize, max_tokens: usize, rng: &mut R) -> Vec<u32> {
    let mut bow = vec![0u32; vocab];
    for _ in 0..rng.random_range(1..=max_tokens) {
        bow[rng.random_range(0..vocab)] += 1;
    }
    bow
}

/// Strictly positive random vector, for Dirichlet concentrations.
pub fn random_alpha<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(k, || rng.random_range(0.05..5.0))
}

/// Everything needed for one end-to-end run on a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub corpus: SyntheticConfig,
    pub train: TrainConfig,
    pub pre: PreprocessConfig,
    pub inference: InferenceConfig,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub embed_seed: u64,
    /// Aspect thresholds tried on the dev split.
    pub thresholds: Vec<f64>,
}

impl Default for Experiment {
    fn default() -> Self {
        let corpus = SyntheticConfig::default();
        let mut train = TrainConfig::new(synthetic_layout(corpus.background_topics));
        train.epochs = 30;
        train.learning_rate = 1e-2;
        // Generated documents are about ten tokens long, so reconstruction
        // needs a larger weight to balance the rating terms.
        train.weights.c2 = 1.0;
        train.encoder_width = 32;
        train.senti_width = 32;
        train.seeding = SeedingMethod::Direct;
        Self {
            corpus,
            train,
            pre: PreprocessConfig::default(),
            inference: InferenceConfig::default(),
            hidden_dim: 24,
            num_layers: 2,
            embed_seed: 1,
            thresholds: (1..20).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub corpus: SyntheticCorpus,
    pub vocab: Vocabulary,
    pub report: TrainReport,
    pub threshold: f64,
    pub dev_f1: f64,
    pub predictions: Vec<Prediction>,
    pub eval: EvalReport,
}

/// Generates a corpus, trains on it, tunes the aspect threshold on the dev
/// split and evaluates on the test split.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentResult> {
    let corpus = generate(&exp.corpus);
    let token_lists: Vec<Vec<String>> = corpus
        .train
        .iter()
        .map(|d| preprocess_text(&d.text, &exp.pre))
        .collect();
    let vocab = build_vocab(&token_lists, &exp.pre)?;
    let docs = corpus
        .train
        .iter()
        .map(|d| DocumentRecord::from_raw(d, &vocab, &exp.pre))
        .collect::<Result<Vec<_>>>()?;
    let embed = |pairs: Vec<(&str, &str)>| embed_texts(pairs, &exp.pre, exp.hidden_dim, exp.num_layers, exp.embed_seed);
    let cache = embed(corpus.train.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect())?;
    let report = train(&exp.train, &docs, &cache, &vocab, &corpus.seeds, None)?;

    let opts = exp.train.forward_options();
    let score_all = |sents: &[LabeledSentence]| -> Result<Vec<DocScores>> {
        let cache = embed(sents.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect())?;
        sents
            .iter()
            .enumerate()
            .map(|(i, s)| {
                score(
                    &s.id,
                    &cache.states(i, exp.train.max_tokens),
                    &report.params,
                    &corpus.layout,
                    opts,
                )
            })
            .collect()
    };
    let base = InferenceConfig {
        renormalize_theta_a: exp.train.renormalize_theta_a,
        ..exp.inference
    };
    let (threshold, dev_f1) = select_aspect_threshold(
        &score_all(&corpus.dev)?,
        &corpus.dev,
        &corpus.layout,
        &base,
        &exp.thresholds,
    )?;
    let icfg = InferenceConfig {
        aspect_threshold: threshold,
        ..base
    };
    let predictions: Vec<Prediction> = score_all(&corpus.test)?
        .iter()
        .map(|s| Prediction::from_scores(s, &corpus.layout, &icfg))
        .collect();
    let eval = evaluate(&predictions, &corpus.test, &corpus.layout)?;
    Ok(ExperimentResult {
        corpus,
        vocab,
        report,
        threshold,
        dev_f1,
        predictions,
        eval,
    })
}

//! A small model trained in the page on generated reviews, one epoch per
//! call.

use absa_core::corpus::{build_vocab, preprocess_text, DocumentRecord, PreprocessConfig, Vocabulary};
use absa_core::embed_cache::{synthetic_embed, EmbeddingCache};
use absa_core::infer::{score, top_words, InferenceConfig, Prediction};
use absa_core::model::ModelParams;
use absa_core::model::TopicLayout;
use absa_core::synthetic::{embed_texts, generate, Experiment, SyntheticConfig};
use absa_core::training::{init_params, AdamState, EpochLog, TrainConfig, Trainer};
use absa_core::{Error, Result};
use serde::Serialize;

pub struct Session {
    cfg: TrainConfig,
    pre: PreprocessConfig,
    hidden_dim: usize,
    num_layers: usize,
    embed_seed: u64,
    vocab: Vocabulary,
    docs: Vec<DocumentRecord>,
    cache: EmbeddingCache,
    params: ModelParams,
    optimizer: AdamState,
    epochs_done: usize,
    examples: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Topic {
    pub name: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AspectScore {
    pub aspect: String,
    pub weight: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub tokens: Vec<String>,
    /// Tokens the model never saw in training.
    pub unknown: Vec<String>,
    pub scores: Vec<AspectScore>,
    pub prediction: Prediction,
}

impl Session {
    /// Generates `train_docs` reviews and seeds a fresh model.
    pub fn new(train_docs: usize, seed: u64) -> Result<Self> {
        let exp = Experiment::default();
        let corpus = generate(&SyntheticConfig {
            train_docs,
            dev_docs: 0,
            test_docs: 8,
            seed,
            ..exp.corpus.clone()
        });
        let tokens: Vec<Vec<String>> = corpus
            .train
            .iter()
            .map(|d| preprocess_text(&d.text, &exp.pre))
            .collect();
        let vocab = build_vocab(&tokens, &exp.pre)?;
        let docs = corpus
            .train
            .iter()
            .map(|d| DocumentRecord::from_raw(d, &vocab, &exp.pre))
            .collect::<Result<Vec<_>>>()?;
        let cache = embed_texts(
            corpus.train.iter().map(|d| (d.id.as_str(), d.text.as_str())),
            &exp.pre,
            exp.hidden_dim,
            exp.num_layers,
            exp.embed_seed,
        )?;
        let mut cfg = exp.train.clone();
        cfg.rng_seed = seed;
        let params = init_params(&cfg, exp.hidden_dim, exp.num_layers, &vocab, &corpus.seeds, None)?;
        Ok(Self {
            optimizer: AdamState::new(&params),
            cfg,
            pre: exp.pre,
            hidden_dim: exp.hidden_dim,
            num_layers: exp.num_layers,
            embed_seed: exp.embed_seed,
            vocab,
            docs,
            cache,
            params,
            epochs_done: 0,
            examples: corpus.test.into_iter().map(|s| s.text).collect(),
        })
    }

    pub fn layout(&self) -> &TopicLayout {
        &self.cfg.layout
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn examples(&self) -> &[String] {
        &self.examples
    }

    pub fn train_epoch(&mut self) -> Result<EpochLog> {
        let mut trainer = Trainer::new(&self.cfg, self.params.clone(), &self.docs, &self.cache)?
            .with_state(self.optimizer.clone(), self.epochs_done)?;
        let log = trainer.run_epoch()?;
        self.params = trainer.params;
        self.optimizer = trainer.optimizer;
        self.epochs_done = trainer.epochs_done;
        Ok(log)
    }

    pub fn topics(&self, n: usize) -> Result<Vec<Topic>> {
        (0..self.layout().num_topics())
            .map(|k| {
                Ok(Topic {
                    name: self.layout().topic_name(k),
                    words: top_words(&self.params.beta, &self.vocab, k, n)?,
                })
            })
            .collect()
    }

    pub fn analyze(&self, text: &str, aspect_threshold: f64, sentiment_threshold: f64) -> Result<Analysis> {
        let icfg = InferenceConfig {
            aspect_threshold,
            sentiment_threshold,
            renormalize_theta_a: self.cfg.renormalize_theta_a,
            ..InferenceConfig::default()
        };
        icfg.validate()?;
        let tokens = preprocess_text(text, &self.pre);
        if tokens.is_empty() {
            return Err(Error::EmptyInput("no words left after preprocessing".into()));
        }
        let states = synthetic_embed(&tokens, self.hidden_dim, self.num_layers, self.embed_seed).mapv(f64::from);
        let scores = score(
            "input",
            &states,
            &self.params,
            self.layout(),
            self.cfg.forward_options(),
        )?;
        let prediction = Prediction::from_scores(&scores, self.layout(), &icfg);
        Ok(Analysis {
            unknown: tokens.iter().filter(|t| self.vocab.get(t).is_none()).cloned().collect(),
            scores: self
                .layout()
                .aspect_labels()
                .iter()
                .zip(scores.theta_a.iter().zip(&scores.coefficients))
                .map(|(a, (&w, &c))| AspectScore {
                    aspect: a.clone(),
                    weight: w,
                    coefficient: c,
                })
                .collect(),
            tokens,
            prediction,
        })
    }
}

//! Run configuration: a sectioned TOML file layered over a built-in domain
//! profile, with every key also accepted as a command-line flag.

use std::path::{Path, PathBuf};

use absa_core::corpus::PreprocessConfig;
use absa_core::infer::InferenceConfig;
use absa_core::model::TopicLayout;
use absa_core::objective::LossWeights;
use absa_core::seeding::{SeedSpec, SeedingMethod};
use absa_core::training::TrainConfig;
use absa_core::Error;
use serde::Deserialize;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Path,
    Str,
    Int,
    Float,
    Bool,
    List,
    FloatList,
}

pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn key(section: &'static str, name: &'static str, kind: Kind, help: &'static str) -> Key {
    Key {
        section,
        name,
        kind,
        help,
    }
}

use Kind::*;

pub const KEYS: &[Key] = &[
    key(
        "paths",
        "corpus",
        Path,
        "training corpus, JSON lines with id, text, rating",
    ),
    key("paths", "cache", Path, "token-state cache for the training corpus"),
    key("paths", "vocab", Path, "vocabulary file, one word per line"),
    key("paths", "checkpoint", Path, "model checkpoint"),
    key(
        "paths",
        "train_log",
        Path,
        "per-epoch loss log (default: <checkpoint>.log.jsonl)",
    ),
    key(
        "paths",
        "seeds",
        Path,
        "seed word file (default: the profile's seed words)",
    ),
    key("paths", "static_embeddings", Path, "word vectors for bootstrap seeding"),
    key("paths", "resume", Path, "checkpoint to continue training from"),
    key(
        "paths",
        "eval_data",
        Path,
        "sentences to label, JSON lines with id and text",
    ),
    key("paths", "eval_cache", Path, "token-state cache for eval_data"),
    key("paths", "dev_data", Path, "labeled sentences for threshold tuning"),
    key("paths", "dev_cache", Path, "token-state cache for dev_data"),
    key("paths", "predictions", Path, "predictions file"),
    key("paths", "report", Path, "evaluation report (default or empty: stdout)"),
    key("preprocess", "lowercase", Bool, ""),
    key("preprocess", "min_token_length", Int, ""),
    key("preprocess", "min_doc_frequency", Int, ""),
    key("preprocess", "max_vocab_size", Int, ""),
    key("layout", "aspects", List, "comma-separated aspect labels"),
    key("layout", "sentiments", List, "comma-separated sentiment labels"),
    key("layout", "background", Int, "number of background topics"),
    key("train", "epochs", Int, ""),
    key("train", "batch_size", Int, ""),
    key("train", "learning_rate", Float, ""),
    key("train", "adam_beta1", Float, ""),
    key("train", "adam_beta2", Float, ""),
    key("train", "adam_eps", Float, ""),
    key("train", "zero_lr_epochs", Int, ""),
    key("train", "warmup_epochs", Int, ""),
    key("train", "c1", Float, "prior divergence weight"),
    key("train", "c2", Float, "reconstruction weight"),
    key("train", "c3", Float, "aspect sentiment weight"),
    key("train", "c4", Float, "sentiment topic weight"),
    key("train", "alpha", Float, "symmetric Dirichlet concentration"),
    key("train", "rng_seed", Int, ""),
    key("train", "encoder_width", Int, ""),
    key("train", "senti_width", Int, ""),
    key("train", "seeding", Str, "direct or bootstrap"),
    key("train", "seed_value", Float, ""),
    key("train", "s_senti_init", Float, ""),
    key("train", "renormalize_theta_a", Bool, ""),
    key("train", "max_tokens", Int, ""),
    key("infer", "aspect_threshold", Float, ""),
    key("infer", "sentiment_threshold", Float, ""),
    key("infer", "sentiment_center", Float, ""),
    key("infer", "negative_threshold", Float, ""),
    key("infer", "tune_threshold", Bool, "pick aspect_threshold on dev_data"),
    key("infer", "threshold_candidates", FloatList, "comma-separated"),
    key("topics", "top_n", Int, ""),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Restaurants,
    Laptops,
}

impl Profile {
    fn defaults(self) -> &'static str {
        match self {
            Profile::Restaurants => include_str!("../profiles/restaurants.toml"),
            Profile::Laptops => include_str!("../profiles/laptops.toml"),
        }
    }

    fn seeds(self) -> &'static str {
        match self {
            Profile::Restaurants => include_str!("../seeds/restaurants.json"),
            Profile::Laptops => include_str!("../seeds/laptops.json"),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub static_embeddings: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub eval_cache: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,
    pub dev_cache: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub aspects: Vec<String>,
    pub sentiments: Vec<String>,
    pub background: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub zero_lr_epochs: usize,
    pub warmup_epochs: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub alpha: f64,
    pub rng_seed: u64,
    pub encoder_width: usize,
    pub senti_width: usize,
    pub seeding: String,
    pub seed_value: f64,
    pub s_senti_init: f64,
    pub renormalize_theta_a: bool,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub aspect_threshold: f64,
    pub sentiment_threshold: f64,
    pub sentiment_center: f64,
    pub negative_threshold: Option<f64>,
    pub tune_threshold: bool,
    pub threshold_candidates: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicsSection {
    pub top_n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    paths: Paths,
    preprocess: PreprocessConfig,
    layout: LayoutSection,
    train: TrainSection,
    infer: InferSection,
    topics: TopicsSection,
}

/// Fully merged and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub layout: TopicLayout,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub tune_threshold: bool,
    pub threshold_candidates: Vec<f64>,
    pub seed_value: f64,
    pub top_n: usize,
}

fn parse_toml(text: &str, origin: &str) -> Result<Table, CliError> {
    text.parse::<Table>()
        .map_err(|e| CliError::Validation(format!("{origin}: {}", e.message())))
}

/// Converts a flag value to the TOML type of its key.
pub fn flag_value(key: &Key, raw: &str) -> Result<Value, CliError> {
    let bad = |what: &str| CliError::Validation(format!("--{}: expected {what}, got {raw:?}", key.name));
    Ok(match key.kind {
        Path | Str => Value::String(raw.to_string()),
        Int => Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
        Float => Value::Float(raw.parse().map_err(|_| bad("a number"))?),
        Bool => Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
        List => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Value::String(s.to_string()))
                .collect(),
        ),
        FloatList => Value::Array(
            raw.split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map(Value::Float)
                        .map_err(|_| bad("comma-separated numbers"))
                })
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn set(table: &mut Table, key: &Key, value: Value) {
    let section = table.entry(key.section).or_insert_with(|| Value::Table(Table::new()));
    if let Value::Table(t) = section {
        // An empty path unsets the key.
        if key.kind == Path && value.as_str() == Some("") {
            t.remove(key.name);
            return;
        }
        // Integers are accepted wherever a float is expected.
        let value = match (key.kind, value) {
            (Float, Value::Integer(i)) => Value::Float(i as f64),
            (FloatList, Value::Array(a)) => Value::Array(
                a.into_iter()
                    .map(|v| match v {
                        Value::Integer(i) => Value::Float(i as f64),
                        other => other,
                    })
                    .collect(),
            ),
            (_, v) => v,
        };
        t.insert(key.name.to_string(), value);
    }
}

/// Layers `file` (a parsed config file living in `base_dir`) onto `into`,
/// rejecting unknown sections and keys. Relative paths resolve against
/// `base_dir`.
fn merge_file(into: &mut Table, file: Table, base_dir: &std::path::Path, origin: &str) -> Result<(), CliError> {
    for (section, body) in file {
        let Value::Table(body) = body else {
            return Err(CliError::Validation(format!(
                "{origin}: top-level key {section:?} must be a [section]"
            )));
        };
        for (name, value) in body {
            let key = KEYS
                .iter()
                .find(|k| k.section == section && k.name == name)
                .ok_or_else(|| CliError::Validation(format!("{origin}: unknown key {section}.{name}")))?;
            let value = match (key.kind, value) {
                (Path, Value::String(p)) if !p.is_empty() => {
                    Value::String(base_dir.join(p).to_string_lossy().into_owned())
                }
                (_, v) => v,
            };
            set(into, key, value);
        }
    }
    Ok(())
}

impl RunConfig {
    /// Profile defaults, then the config file, then `--seed`, then flags.
    pub fn load(
        profile: Profile,
        config_file: Option<&std::path::Path>,
        seed: Option<u64>,
        overrides: &[(&'static Key, String)],
    ) -> Result<Self, CliError> {
        let mut table = parse_toml(profile.defaults(), "built-in profile")?;
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("config file {}: {e}", path.display())))?;
            let file = parse_toml(&text, &path.display().to_string())?;
            let dir = path.parent().unwrap_or(std::path::Path::new("."));
            merge_file(&mut table, file, dir, &path.display().to_string())?;
        }
        if let Some(s) = seed {
            set(
                &mut table,
                find_key("rng_seed").expect("registered"),
                Value::Integer(s as i64),
            );
        }
        for (key, raw) in overrides {
            set(&mut table, key, flag_value(key, raw)?);
        }
        let raw: RawConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("configuration: {}", e.message())))?;
        Self::from_raw(profile, raw).map_err(|e| CliError::Validation(e.to_string()))
    }

    fn from_raw(profile: Profile, raw: RawConfig) -> absa_core::Result<Self> {
        let layout = TopicLayout::new(raw.layout.aspects, raw.layout.sentiments, raw.layout.background)?;
        let t = raw.train;
        let seeding: SeedingMethod = t.seeding.parse()?;
        let train = TrainConfig {
            layout: layout.clone(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            zero_lr_epochs: t.zero_lr_epochs,
            warmup_epochs: t.warmup_epochs,
            weights: LossWeights {
                c1: t.c1,
                c2: t.c2,
                c3: t.c3,
                c4: t.c4,
            },
            alpha: t.alpha,
            rng_seed: t.rng_seed,
            encoder_width: t.encoder_width,
            senti_width: t.senti_width,
            seeding,
            s_senti_init: t.s_senti_init,
            renormalize_theta_a: t.renormalize_theta_a,
            max_tokens: t.max_tokens,
        };
        let i = raw.infer;
        let inference = InferenceConfig {
            aspect_threshold: i.aspect_threshold,
            sentiment_threshold: i.sentiment_threshold,
            sentiment_center: i.sentiment_center,
            negative_threshold: i.negative_threshold,
            renormalize_theta_a: t.renormalize_theta_a,
        };
        raw.preprocess.validate()?;
        train.validate()?;
        inference.validate()?;
        if i.threshold_candidates.iter().any(|&c| !(c > 0.0 && c < 1.0)) || i.threshold_candidates.is_empty() {
            return Err(Error::Config(
                "threshold_candidates must be a non-empty list of values in (0, 1)".into(),
            ));
        }
        if raw.topics.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        let cfg = Self {
            profile,
            paths: raw.paths,
            preprocess: raw.preprocess,
            layout,
            train,
            inference,
            tune_threshold: i.tune_threshold,
            threshold_candidates: i.threshold_candidates,
            seed_value: t.seed_value,
            top_n: raw.topics.top_n,
        };
        cfg.seeds()?.validate(&cfg.layout)?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> absa_core::Result<SeedSpec> {
        Ok(match &self.paths.seeds {
            Some(p) => SeedSpec::load(p, self.seed_value)?,
            None => SeedSpec::from_json_str(self.profile.seeds(), self.seed_value)?,
        })
    }

    pub fn train_log(&self) -> Option<PathBuf> {
        self.paths.train_log.clone().or_else(|| {
            self.paths.checkpoint.as_ref().map(|c| {
                let mut s = c.clone().into_os_string();
                s.push(".log.jsonl");
                PathBuf::from(s)
            })
        })
    }
}

/// An input that must exist before a command starts.
pub fn input<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Validation(format!("missing input: set paths.{key} or --{key}")))?;
    if !p.is_file() {
        return Err(CliError::Validation(format!(
            "missing input: {key} file {} not found",
            p.display()
        )));
    }
    Ok(p)
}

/// An output location whose directory must exist.
pub fn output<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Validation(format!("no output path: set paths.{key} or --{key}")))?;
    let dir = p
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !dir.is_dir() {
        return Err(CliError::Validation(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restaurant_profile_matches_published_settings() {
        let c = RunConfig::load(Profile::Restaurants, None, None, &[]).unwrap();
        assert_eq!(c.train.learning_rate, 1e-5);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.layout.num_aspects(), 5);
        assert_eq!(c.layout.num_background(), 9);
        assert_eq!(c.train.alpha, 1.0);
        assert_eq!(c.train.weights, LossWeights::default());
        assert_eq!(c.train.seeding, SeedingMethod::Bootstrap);
        assert_eq!(c.inference.sentiment_threshold, 0.2);
        assert!(c.tune_threshold);
        assert_eq!(c.seed_value, 10.0);
        assert_eq!((c.train.zero_lr_epochs, c.train.warmup_epochs), (1, 1));
        assert_eq!(c.preprocess.max_vocab_size, 2000);
    }

    #[test]
    fn laptop_profile_matches_published_settings() {
        let c = RunConfig::load(Profile::Laptops, None, None, &[]).unwrap();
        assert_eq!(c.train.learning_rate, 5e-4);
        assert_eq!(c.train.epochs, 30);
        assert_eq!(c.layout.num_aspects(), 8);
        assert_eq!(c.train.seeding, SeedingMethod::Direct);
        assert_eq!(c.inference.sentiment_threshold, 3.0 / 16.0);
    }

    #[test]
    fn flags_override_file_and_seed_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[train]\nepochs = 3\nlearning_rate = 1\n[paths]\nvocab = \"v.txt\"\n",
        )
        .unwrap();
        let over = [(find_key("epochs").unwrap(), "7".to_string())];
        let c = RunConfig::load(Profile::Laptops, Some(&path), Some(42), &over).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.learning_rate, 1.0);
        assert_eq!(c.train.rng_seed, 42);
        assert_eq!(c.paths.vocab.unwrap(), dir.path().join("v.txt"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nepochz = 3\n").unwrap();
        assert!(matches!(
            RunConfig::load(Profile::Laptops, Some(&path), None, &[]),
            Err(CliError::Validation(_))
        ));
        let over = [(find_key("aspect_threshold").unwrap(), "1.5".to_string())];
        assert!(RunConfig::load(Profile::Laptops, None, None, &over).is_err());
        let over = [(find_key("epochs").unwrap(), "many".to_string())];
        assert!(RunConfig::load(Profile::Laptops, None, None, &over).is_err());
        let over = [(find_key("aspects").unwrap(), "food,service".to_string())];
        // the profile seed words name aspects outside this layout
        assert!(RunConfig::load(Profile::Laptops, None, None, &over).is_err());
    }
}

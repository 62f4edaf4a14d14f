use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use absa_core::checkpoint::Checkpoint;
use absa_core::corpus::{
    build_vocab as build_vocabulary, load_documents, load_labeled_eval, load_raw_documents, preprocess_text,
    write_labeled_eval, write_raw_documents, RawDocument, Vocabulary,
};
use absa_core::embed_cache::{read_cache, write_cache, EmbeddingCache};
use absa_core::infer::{
    evaluate, read_predictions, score, select_aspect_threshold, top_words, write_predictions, DocScores,
    InferenceConfig, Prediction,
};
use absa_core::seeding::{load_static_embeddings, SeedingMethod};
use absa_core::synthetic::{embed_texts, generate, Experiment, SyntheticConfig};
use absa_core::training::{init_params, Trainer};
use absa_core::Error;
use log::{info, warn};
use toml::{Table, Value};

use crate::config::{input, output, RunConfig};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn build_vocab(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = input(&cfg.paths.corpus, "corpus")?;
    let out = output(&cfg.paths.vocab, "vocab")?;
    let docs = load_raw_documents(corpus)?;
    let tokens: Vec<Vec<String>> = docs.iter().map(|d| preprocess_text(&d.text, &cfg.preprocess)).collect();
    let vocab = build_vocabulary(&tokens, &cfg.preprocess)?;
    let seeds = cfg.seeds()?;
    let missing = seeds.missing_words(&cfg.layout, &vocab)?;
    if !missing.is_empty() {
        warn!("seed words not in the vocabulary: {}", missing.join(", "));
    }
    vocab.write(out)?;
    println!(
        "{} words from {} documents -> {}",
        vocab.len(),
        docs.len(),
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = input(&cfg.paths.corpus, "corpus")?;
    let cache_path = input(&cfg.paths.cache, "cache")?;
    let vocab_path = input(&cfg.paths.vocab, "vocab")?;
    let resume = match &cfg.paths.resume {
        Some(_) => Some(input(&cfg.paths.resume, "resume")?),
        None => None,
    };
    let embeddings = match (&cfg.paths.static_embeddings, resume, cfg.train.seeding) {
        (Some(_), None, _) => Some(input(&cfg.paths.static_embeddings, "static_embeddings")?),
        (None, None, SeedingMethod::Bootstrap) => {
            return Err(CliError::Validation(
                "missing input: bootstrap seeding needs paths.static_embeddings (or use --seeding direct)".into(),
            ))
        }
        _ => None,
    };
    let ckpt_path = output(&cfg.paths.checkpoint, "checkpoint")?;
    let log_path = cfg.train_log().expect("checkpoint path is set");
    output(&Some(log_path.clone()), "train_log")?;

    let vocab = Vocabulary::read(vocab_path)?;
    let docs = load_documents(corpus, &cfg.preprocess, &vocab)?;
    let cache = read_cache(cache_path)?;
    let seeds = cfg.seeds()?;

    let trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.layout != cfg.layout {
                return Err(CliError::Validation(format!(
                    "{} was trained with a different topic layout",
                    path.display()
                )));
            }
            let optimizer = ckpt.optimizer.ok_or_else(|| {
                Error::Checkpoint(format!("{} has no optimizer state to resume from", path.display()))
            })?;
            info!("resuming from {} after {} epochs", path.display(), ckpt.epochs_done);
            Trainer::new(&cfg.train, ckpt.params, &docs, &cache)?.with_state(optimizer, ckpt.epochs_done)?
        }
        None => {
            let missing = seeds.missing_words(&cfg.layout, &vocab)?;
            if !missing.is_empty() {
                warn!("seed words not in the vocabulary: {}", missing.join(", "));
            }
            let vectors = embeddings.map(load_static_embeddings).transpose()?;
            let params = init_params(
                &cfg.train,
                cache.hidden_dim,
                cache.num_layers,
                &vocab,
                &seeds,
                vectors.as_ref(),
            )?;
            Trainer::new(&cfg.train, params, &docs, &cache)?
        }
    };
    info!(
        "training on {} documents, {} parameters",
        trainer.num_documents(),
        trainer.params.num_params()
    );

    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut trainer = trainer;
    while trainer.epochs_done < cfg.train.epochs {
        let entry = trainer.run_epoch()?;
        info!(
            "epoch {}: total {:.5} (kl {:.5}, recon {:.5}, s_asp {:.5}, s_senti {:.5}) lr {:.2e}",
            entry.epoch, entry.total, entry.kl, entry.recon, entry.s_asp, entry.s_senti, entry.lr
        );
        let line = serde_json::to_string(&entry).expect("log entries serialize");
        writeln!(log, "{line}").map_err(|e| io_err(&log_path, e))?;
    }
    let ckpt = Checkpoint {
        layout: cfg.layout.clone(),
        params: trainer.params,
        epochs_done: trainer.epochs_done,
        optimizer: Some(trainer.optimizer),
    };
    ckpt.save(ckpt_path)?;
    println!("{} epochs -> {}", ckpt.epochs_done, ckpt_path.display());
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let path = input(&cfg.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    if ckpt.layout != cfg.layout {
        return Err(CliError::Validation(format!(
            "{} was trained with a different topic layout than the configuration",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn score_documents(
    docs: &[RawDocument],
    cache: &EmbeddingCache,
    ckpt: &Checkpoint,
    cfg: &RunConfig,
) -> Result<Vec<DocScores>, CliError> {
    let lookup = cache.index();
    let opts = cfg.train.forward_options();
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let rec = *lookup
            .get(doc.id.as_str())
            .ok_or_else(|| Error::Data(format!("no cached embeddings for document {}", doc.id)))?;
        if cache.records[rec].num_tokens == 0 {
            warn!("document {} has no tokens; no aspects predicted", doc.id);
            out.push(DocScores {
                id: doc.id.clone(),
                theta_a: vec![0.0; cfg.layout.num_aspects()],
                coefficients: vec![0.0; cfg.layout.num_aspects()],
            });
            continue;
        }
        let states = cache.states(rec, cfg.train.max_tokens);
        out.push(score(&doc.id, &states, &ckpt.params, &cfg.layout, opts)?);
    }
    Ok(out)
}

pub fn infer(cfg: &RunConfig) -> Result<(), CliError> {
    let data = input(&cfg.paths.eval_data, "eval_data")?;
    let cache_path = input(&cfg.paths.eval_cache, "eval_cache")?;
    let dev = if cfg.tune_threshold {
        Some((
            input(&cfg.paths.dev_data, "dev_data")?,
            input(&cfg.paths.dev_cache, "dev_cache")?,
        ))
    } else {
        None
    };
    let out = output(&cfg.paths.predictions, "predictions")?;
    let ckpt = load_model(cfg)?;
    ckpt.params.check_layout(&cfg.layout, ckpt.params.beta.nrows())?;

    let base = cfg.inference;
    let icfg = match dev {
        Some((dev_data, dev_cache)) => {
            let gold = load_labeled_eval(dev_data, cfg.layout.aspect_labels())?;
            let raw: Vec<RawDocument> = gold
                .iter()
                .map(|s| RawDocument {
                    id: s.id.clone(),
                    text: s.text.clone(),
                    rating: None,
                })
                .collect();
            let scores = score_documents(&raw, &read_cache(dev_cache)?, &ckpt, cfg)?;
            let (t, f1) = select_aspect_threshold(&scores, &gold, &cfg.layout, &base, &cfg.threshold_candidates)?;
            info!("aspect threshold {t} (dev aspect macro-F1 {f1:.4})");
            InferenceConfig {
                aspect_threshold: t,
                ..base
            }
        }
        None => base,
    };
    let docs = load_raw_documents(data)?;
    let scores = score_documents(&docs, &read_cache(cache_path)?, &ckpt, cfg)?;
    let preds: Vec<Prediction> = scores
        .iter()
        .map(|s| Prediction::from_scores(s, &cfg.layout, &icfg))
        .collect();
    write_predictions(out, &preds)?;
    println!("{} predictions -> {}", preds.len(), out.display());
    Ok(())
}

pub fn topics(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab_path = input(&cfg.paths.vocab, "vocab")?;
    let ckpt = load_model(cfg)?;
    let vocab = Vocabulary::read(vocab_path)?;
    let mut text = String::new();
    for k in 0..cfg.layout.num_topics() {
        let words = top_words(&ckpt.params.beta, &vocab, k, cfg.top_n)?;
        text += &format!("{}: {}\n", cfg.layout.topic_name(k), words.join(" "));
    }
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let preds_path = input(&cfg.paths.predictions, "predictions")?;
    let gold_path = input(&cfg.paths.eval_data, "eval_data")?;
    let report_path = match &cfg.paths.report {
        Some(_) => Some(output(&cfg.paths.report, "report")?),
        None => None,
    };
    let preds = read_predictions(preds_path)?;
    let gold = load_labeled_eval(gold_path, cfg.layout.aspect_labels())?;
    let report = evaluate(&preds, &gold, &cfg.layout)?;
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    match report_path {
        Some(p) => {
            fs::write(p, json + "\n").map_err(|e| io_err(p, e))?;
            println!(
                "aspect macro-F1 {:.4}, aspect-sentiment macro-F1 {:.4} -> {}",
                report.aspect.macro_f1,
                report.aspect_sentiment.macro_f1,
                p.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Output directory (created if absent).
    pub dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train_docs: usize,
    #[arg(long, default_value_t = 200)]
    pub dev_docs: usize,
    #[arg(long, default_value_t = 400)]
    pub test_docs: usize,
    /// Seed for the generated text.
    #[arg(long, default_value_t = 7)]
    pub corpus_seed: u64,
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl`, their token-state
/// caches, `seeds.json` and a `config.toml` that points at all of them.
pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let exp = Experiment::default();
    let corpus = generate(&SyntheticConfig {
        train_docs: args.train_docs,
        dev_docs: args.dev_docs,
        test_docs: args.test_docs,
        seed: args.corpus_seed,
        ..exp.corpus.clone()
    });
    let dir = &args.dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let embed = |pairs: Vec<(&str, &str)>| embed_texts(pairs, &exp.pre, exp.hidden_dim, exp.num_layers, exp.embed_seed);

    write_raw_documents(dir.join("train.jsonl"), &corpus.train)?;
    write_cache(
        &embed(corpus.train.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect())?,
        dir.join("train.tec"),
    )?;
    for (name, split) in [("dev", &corpus.dev), ("test", &corpus.test)] {
        write_labeled_eval(dir.join(format!("{name}.jsonl")), split)?;
        write_cache(
            &embed(split.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect())?,
            dir.join(format!("{name}.tec")),
        )?;
    }
    let seeds_path = dir.join("seeds.json");
    fs::write(&seeds_path, corpus.seeds.to_json_string()).map_err(|e| io_err(&seeds_path, e))?;

    let t = &exp.train;
    let strings = |v: &[String]| Value::Array(v.iter().cloned().map(Value::String).collect());
    let section =
        |pairs: Vec<(&str, Value)>| Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect());
    let mut config = Table::new();
    config.insert(
        "paths".into(),
        section(
            [
                ("corpus", "train.jsonl"),
                ("cache", "train.tec"),
                ("vocab", "vocab.txt"),
                ("seeds", "seeds.json"),
                ("checkpoint", "model.tmc"),
                ("eval_data", "test.jsonl"),
                ("eval_cache", "test.tec"),
                ("dev_data", "dev.jsonl"),
                ("dev_cache", "dev.tec"),
                ("predictions", "predictions.jsonl"),
                ("report", "report.json"),
            ]
            .into_iter()
            .map(|(k, v)| (k, Value::String(v.into())))
            .collect(),
        ),
    );
    config.insert(
        "preprocess".into(),
        Value::try_from(&exp.pre).expect("preprocess settings serialize"),
    );
    config.insert(
        "layout".into(),
        section(vec![
            ("aspects", strings(corpus.layout.aspect_labels())),
            ("sentiments", strings(corpus.layout.sentiment_labels())),
            ("background", Value::Integer(corpus.layout.num_background() as i64)),
        ]),
    );
    config.insert(
        "train".into(),
        section(vec![
            ("epochs", Value::Integer(t.epochs as i64)),
            ("batch_size", Value::Integer(t.batch_size as i64)),
            ("learning_rate", Value::Float(t.learning_rate)),
            ("c1", Value::Float(t.weights.c1)),
            ("c2", Value::Float(t.weights.c2)),
            ("c3", Value::Float(t.weights.c3)),
            ("c4", Value::Float(t.weights.c4)),
            ("encoder_width", Value::Integer(t.encoder_width as i64)),
            ("senti_width", Value::Integer(t.senti_width as i64)),
            ("seeding", Value::String("direct".into())),
        ]),
    );
    config.insert(
        "infer".into(),
        section(vec![
            ("aspect_threshold", Value::Float(exp.inference.aspect_threshold)),
            ("sentiment_threshold", Value::Float(exp.inference.sentiment_threshold)),
            ("sentiment_center", Value::Float(exp.inference.sentiment_center)),
            ("tune_threshold", Value::Boolean(true)),
            (
                "threshold_candidates",
                Value::Array(exp.thresholds.iter().map(|&x| Value::Float(x)).collect()),
            ),
        ]),
    );
    let config_path = dir.join("config.toml");
    fs::write(&config_path, toml::to_string(&config).expect("config serializes"))
        .map_err(|e| io_err(&config_path, e))?;

    println!(
        "{} train, {} dev, {} test documents -> {} (run with --config {})",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        dir.display(),
        config_path.display()
    );
    Ok(())
}

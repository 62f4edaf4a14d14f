//! Multi-aspect prediction, three-class aspect sentiment, topic inspection
//! and macro-averaged evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{for_each_json_line, write_json_lines, LabeledSentence, Polarity, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{forward_with_noise, ForwardOptions, ModelParams, Noise, TopicLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// An aspect is predicted when its mixture weight exceeds this.
    pub aspect_threshold: f64,
    /// Half-width of the neutral band around `sentiment_center`.
    pub sentiment_threshold: f64,
    pub sentiment_center: f64,
    /// Half-width below the center for the negative side; defaults to
    /// `sentiment_threshold`.
    pub negative_threshold: Option<f64>,
    pub renormalize_theta_a: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            aspect_threshold: 0.2,
            sentiment_threshold: 0.2,
            sentiment_center: 0.0,
            negative_threshold: None,
            renormalize_theta_a: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.aspect_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!("aspect_threshold must lie in (0, 1), got {t}")));
        }
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.sentiment_threshold) || !self.negative_threshold.is_none_or(ok) {
            return Err(Error::Config("sentiment thresholds must be positive".into()));
        }
        if !self.sentiment_center.is_finite() {
            return Err(Error::Config("sentiment_center must be finite".into()));
        }
        Ok(())
    }

    pub fn classify(&self, s: f64) -> Polarity {
        let neg = self.negative_threshold.unwrap_or(self.sentiment_threshold);
        let d = s - self.sentiment_center;
        if d > self.sentiment_threshold {
            Polarity::Positive
        } else if d < -neg {
            Polarity::Negative
        } else {
            Polarity::Neutral
        }
    }
}

/// Labels whose weight is strictly above `t`, in layout order.
pub fn predict_aspects(theta_a: ArrayView1<'_, f64>, labels: &[String], t: f64) -> Vec<String> {
    theta_a
        .iter()
        .zip(labels)
        .filter(|(&w, _)| w > t)
        .map(|(_, l)| l.clone())
        .collect()
}

/// Symmetric band: positive above `tau`, negative below `-tau`.
pub fn classify_sentiment(s: f64, tau: f64) -> Polarity {
    if s > tau {
        Polarity::Positive
    } else if s < -tau {
        Polarity::Negative
    } else {
        Polarity::Neutral
    }
}

/// Threshold-free outputs of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DocScores {
    pub id: String,
    pub theta_a: Vec<f64>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub aspects: Vec<String>,
    /// Raw aspect sentiment coefficient for every aspect.
    pub coefficients: BTreeMap<String, f64>,
    /// Sentiment class for each predicted aspect only.
    pub sentiments: BTreeMap<String, Polarity>,
}

impl Prediction {
    pub fn from_scores(scores: &DocScores, layout: &TopicLayout, icfg: &InferenceConfig) -> Self {
        let labels = layout.aspect_labels();
        let aspects = predict_aspects(ArrayView1::from(&scores.theta_a), labels, icfg.aspect_threshold);
        let coefficients = labels
            .iter()
            .cloned()
            .zip(scores.coefficients.iter().copied())
            .collect();
        let sentiments = labels
            .iter()
            .zip(&scores.coefficients)
            .filter(|(l, _)| aspects.contains(l))
            .map(|(l, &s)| (l.clone(), icfg.classify(s)))
            .collect();
        Self {
            id: scores.id.clone(),
            aspects,
            coefficients,
            sentiments,
        }
    }

    /// Predicted `(aspect, sentiment)` pairs.
    pub fn pairs(&self) -> BTreeSet<(String, Polarity)> {
        self.sentiments.iter().map(|(a, p)| (a.clone(), *p)).collect()
    }
}

/// Deterministic (zero-noise) forward pass.
pub fn score(
    id: &str,
    states: &Array3<f64>,
    params: &ModelParams,
    layout: &TopicLayout,
    opts: ForwardOptions,
) -> Result<DocScores> {
    let noise = Noise::zeros(states.dim().0, layout.num_topics());
    let fw = forward_with_noise(states, params, layout, &noise, opts).map_err(|e| match e {
        Error::EmptyDocument(_) => Error::EmptyDocument(id.to_string()),
        other => other,
    })?;
    Ok(DocScores {
        id: id.to_string(),
        theta_a: fw.theta_a.to_vec(),
        coefficients: fw.s_asp.to_vec(),
    })
}

pub fn infer(
    id: &str,
    states: &Array3<f64>,
    params: &ModelParams,
    layout: &TopicLayout,
    icfg: &InferenceConfig,
) -> Result<Prediction> {
    let opts = ForwardOptions {
        renormalize_theta_a: icfg.renormalize_theta_a,
    };
    Ok(Prediction::from_scores(
        &score(id, states, params, layout, opts)?,
        layout,
        icfg,
    ))
}

/// The `n` words with the largest weight in `topic`, ties broken
/// lexicographically. `n` is clamped to the vocabulary size.
pub fn top_words(beta: &Array2<f64>, vocab: &Vocabulary, topic: usize, n: usize) -> Result<Vec<String>> {
    if topic >= beta.ncols() {
        return Err(Error::Validation(format!(
            "topic {topic} out of range (K={})",
            beta.ncols()
        )));
    }
    if beta.nrows() != vocab.len() {
        return Err(Error::Dimension(format!(
            "topic-word matrix has {} rows, vocabulary has {}",
            beta.nrows(),
            vocab.len()
        )));
    }
    let col = beta.column(topic);
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| {
        col[b]
            .total_cmp(&col[a])
            .then_with(|| vocab.words()[a].cmp(&vocab.words()[b]))
    });
    Ok(order.into_iter().take(n).map(|i| vocab.words()[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Gold occurrences (`tp + fn`).
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub fn from_counts(label: String, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            label,
            tp,
            fp,
            fn_,
            support: tp + fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Harmonic mean with `0/0 = 0`.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub classes: Vec<ClassMetrics>,
    /// Which classes enter the macro average.
    pub averaging: String,
    pub averaged_classes: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl TaskReport {
    fn macro_over(classes: Vec<ClassMetrics>, include: impl Fn(&ClassMetrics) -> bool, averaging: &str) -> Self {
        let picked: Vec<&ClassMetrics> = classes.iter().filter(|c| include(c)).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if picked.is_empty() {
                0.0
            } else {
                picked.iter().map(|c| f(c)).sum::<f64>() / picked.len() as f64
            }
        };
        Self {
            averaging: averaging.to_string(),
            averaged_classes: picked.len(),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub aspect: TaskReport,
    pub aspect_sentiment: TaskReport,
}

/// Per-class counts over both tasks. Predictions are matched to gold by id.
pub fn evaluate(preds: &[Prediction], gold: &[LabeledSentence], layout: &TopicLayout) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction id {}", p.id)));
        }
    }
    if preds.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} gold sentences",
            preds.len(),
            gold.len()
        )));
    }
    let labels = layout.aspect_labels();
    let pair_classes: Vec<(String, Polarity)> = labels
        .iter()
        .flat_map(|a| [Polarity::Positive, Polarity::Neutral, Polarity::Negative].map(|p| (a.clone(), p)))
        .collect();
    let mut aspect_counts = vec![[0usize; 3]; labels.len()];
    let mut pair_counts = vec![[0usize; 3]; pair_classes.len()];
    let mut seen = HashSet::with_capacity(gold.len());
    for g in gold {
        if !seen.insert(g.id.as_str()) {
            return Err(Error::Alignment(format!("duplicate gold id {}", g.id)));
        }
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no prediction for sentence {}", g.id)))?;
        let gold_aspects = g.gold_aspects();
        for (i, l) in labels.iter().enumerate() {
            tally(
                &mut aspect_counts[i],
                p.aspects.contains(l),
                gold_aspects.contains(l.as_str()),
            );
        }
        let pred_pairs = p.pairs();
        for (i, c) in pair_classes.iter().enumerate() {
            tally(&mut pair_counts[i], pred_pairs.contains(c), g.gold.contains(c));
        }
    }
    let metrics = |label: String, c: [usize; 3]| ClassMetrics::from_counts(label, c[0], c[1], c[2]);
    let aspect_classes = labels
        .iter()
        .cloned()
        .zip(aspect_counts)
        .map(|(l, c)| metrics(l, c))
        .collect();
    let pair_metrics = pair_classes
        .iter()
        .zip(pair_counts)
        .map(|((a, p), c)| metrics(format!("{a}:{p}"), c))
        .collect();
    Ok(EvalReport {
        sentences: gold.len(),
        aspect: TaskReport::macro_over(aspect_classes, |_| true, "all aspect classes"),
        aspect_sentiment: TaskReport::macro_over(
            pair_metrics,
            |c| c.support > 0,
            "aspect:sentiment classes with gold support",
        ),
    })
}

fn tally(c: &mut [usize; 3], predicted: bool, gold: bool) {
    match (predicted, gold) {
        (true, true) => c[0] += 1,
        (true, false) => c[1] += 1,
        (false, true) => c[2] += 1,
        (false, false) => {}
    }
}

/// Picks the aspect threshold with the best aspect macro-F1 on a dev set.
/// Ties go to the earliest candidate.
pub fn select_aspect_threshold(
    scores: &[DocScores],
    gold: &[LabeledSentence],
    layout: &TopicLayout,
    base: &InferenceConfig,
    candidates: &[f64],
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &t in candidates {
        let icfg = InferenceConfig {
            aspect_threshold: t,
            ..*base
        };
        icfg.validate()?;
        let preds: Vec<Prediction> = scores
            .iter()
            .map(|s| Prediction::from_scores(s, layout, &icfg))
            .collect();
        let f1 = evaluate(&preds, gold, layout)?.aspect.macro_f1;
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((t, f1));
        }
    }
    best.ok_or_else(|| Error::EmptyInput("no threshold candidates".into()))
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    write_json_lines(path, preds)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for_each_json_line(path.as_ref(), |_, p: Prediction| {
        out.push(p);
        Ok(())
    })?;
    Ok(out)
}

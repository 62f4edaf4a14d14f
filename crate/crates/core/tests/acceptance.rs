//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use absa_core::corpus::{LabeledSentence, Polarity};
use absa_core::embed_cache::{CacheRecord, EmbeddingCache};
use absa_core::grad::{DocInput, LossContext};
use absa_core::infer::{evaluate, write_predictions, Prediction};
use absa_core::model::{forward, ForwardOptions, Mode, ModelDims, TopicLayout};
use absa_core::objective::{dirichlet_prior_params, kl_loss, LossWeights, PriorParams};
use absa_core::synthetic::{random_alpha, random_bow, random_params, random_states, run_experiment, Experiment};
use absa_core::training::grad_check;
use absa_core::Error;
use ndarray::{Array1, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let layout = TopicLayout::with_aspects(&["a", "b", "c"], 3).map_err(|e| e.to_string())?;
    let (v, h, l) = (30, 16, 3);
    let dims = ModelDims {
        vocab: v,
        topics: layout.num_topics(),
        aspects: 3,
        sentiments: 2,
        hidden_dim: h,
        num_layers: l,
        encoder_width: 12,
        senti_width: 10,
    };
    let params = random_params(dims, 0.3, &mut rng);
    let docs: Vec<_> = (0..4)
        .map(|i| {
            let n = rng.random_range(1..=5);
            let y = (i != 1).then(|| rng.random_range(0.0..=1.0));
            (
                format!("d{i}"),
                random_states(n, l, h, &mut rng),
                random_bow(v, 12, &mut rng),
                y,
            )
        })
        .collect();
    let batch: Vec<DocInput<'_>> = docs
        .iter()
        .map(|(id, s, b, y)| DocInput {
            id,
            states: s,
            bow: b,
            y_s: *y,
        })
        .collect();
    let ctx = LossContext {
        layout: layout.clone(),
        prior: PriorParams::symmetric(1.0, layout.num_topics()).map_err(|e| e.to_string())?,
        weights: LossWeights::default(),
        opts: ForwardOptions::default(),
    };
    let r = grad_check(&params, &batch, &ctx, 1e-5, 32, &mut rng).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max rel error {:.2e} over {} coordinates in {} tensors, {secs:.2}s",
        r.max_rel_error,
        r.coordinates.len(),
        r.tensors_covered()
    );
    ensure(r.coordinates.len() >= 200 && r.tensors_covered() == 13, || {
        detail.clone()
    })?;
    ensure(r.max_rel_error < 1e-4 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

fn prior_closed_forms() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in [2usize, 4, 16] {
        let (mu, sigma) = dirichlet_prior_params(Array1::ones(k).view()).map_err(|e| e.to_string())?;
        ensure(mu.iter().all(|&m| m == 0.0), || {
            format!("K={k}: mean not exactly zero: {mu}")
        })?;
        // (1/1)(1 - 2/K) + K/K^2 = 1 - 1/K
        let expect = 1.0 - 1.0 / k as f64;
        for &s in &sigma {
            worst = worst.max((s - expect).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("variance off by {worst:e}"))?;
    Ok(format!(
        "K in {{2,4,16}}: mean 0 exactly, variance 1-1/K within {worst:.1e}"
    ))
}

fn kl_identity_and_positivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_identity: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let prior = PriorParams::from_alpha(random_alpha(k, &mut rng)).map_err(|e| e.to_string())?;
        let at_prior = kl_loss(prior.mu_p.view(), prior.sigma_p.view(), &prior).map_err(|e| e.to_string())?;
        max_identity = max_identity.max(at_prior.abs());
        let mu = Array1::from_shape_simple_fn(k, || 2.0 * rng.sample::<f64, _>(StandardNormal));
        let sigma = Array1::from_shape_simple_fn(k, || rng.random_range(0.01..5.0));
        min_kl = min_kl.min(kl_loss(mu.view(), sigma.view(), &prior).map_err(|e| e.to_string())?);
    }
    let detail = format!("max |KL(prior, prior)| {max_identity:.1e}, min KL over 1000 samples {min_kl:.3e}");
    ensure(max_identity <= 1e-9 && min_kl >= 0.0, || detail.clone())?;
    Ok(detail)
}

fn normalization_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layout = TopicLayout::with_aspects(&["a", "b", "c"], 3).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for pass in 0..1000 {
        let dims = ModelDims {
            vocab: 30,
            topics: layout.num_topics(),
            aspects: 3,
            sentiments: 2,
            hidden_dim: 8,
            num_layers: 2,
            encoder_width: 6,
            senti_width: 5,
        };
        let params = random_params(dims, 1.0, &mut rng);
        let states = random_states(rng.random_range(1..=8), 2, 8, &mut rng);
        let mode = if pass % 2 == 0 { Mode::Train } else { Mode::Infer };
        let (fw, _) =
            forward(&states, &params, &layout, mode, ForwardOptions::default(), &mut rng).map_err(|e| e.to_string())?;
        let mut dev = |s: f64| worst = worst.max((s - 1.0).abs());
        dev(fw.theta.sum());
        dev(fw.x_hat.sum());
        fw.theta_tokens.sum_axis(Axis(1)).iter().for_each(|&s| dev(s));
        fw.attention.sum_axis(Axis(0)).iter().for_each(|&s| dev(s));
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 passes, max deviation from 1 is {worst:.1e}"))
}

/// Expected macro-F1 of assigning each sentence one aspect uniformly at random.
fn random_baseline_f1(gold: &[LabeledSentence], layout: &TopicLayout, rng: &mut ChaCha8Rng) -> f64 {
    let trials = 200;
    let mut total = 0.0;
    for _ in 0..trials {
        let preds: Vec<Prediction> = gold
            .iter()
            .map(|g| Prediction {
                id: g.id.clone(),
                aspects: vec![layout.aspect_labels().choose(rng).unwrap().clone()],
                coefficients: BTreeMap::new(),
                sentiments: BTreeMap::new(),
            })
            .collect();
        total += evaluate(&preds, gold, layout).unwrap().aspect.macro_f1;
    }
    total / trials as f64
}

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let exp = Experiment::default();
    let r = run_experiment(&exp).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let f1 = r.eval.aspect.macro_f1;
    let baseline = random_baseline_f1(&r.corpus.test, &r.corpus.layout, &mut ChaCha8Rng::seed_from_u64(3));
    let totals: Vec<f64> = r.report.history.iter().map(|e| e.total).collect();
    let post = &totals[exp.train.zero_lr_epochs + exp.train.warmup_epochs..];
    let avg: Vec<f64> = post.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let monotone = avg.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!(
        "aspect macro-F1 {f1:.3} (random {baseline:.3}, t={:.2}), {} docs, {} epochs, \
         2-epoch average loss non-increasing: {monotone}, {secs:.1}s",
        r.threshold,
        r.corpus.train.len(),
        totals.len()
    );
    ensure(r.corpus.train.len() == 2000 && totals.len() <= 30, || detail.clone())?;
    ensure(f1 >= 0.7 && f1 >= 2.0 * baseline && monotone && secs < 600.0, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let exp = Experiment::default();
    let a = run_experiment(&exp).map_err(|e| e.to_string())?;
    let b = run_experiment(&exp).map_err(|e| e.to_string())?;
    let mut max_diff: f64 = 0.0;
    for (x, y) in a.report.history.iter().zip(&b.report.history) {
        for (p, q) in [
            (x.kl, y.kl),
            (x.recon, y.recon),
            (x.s_asp, y.s_asp),
            (x.s_senti, y.s_senti),
            (x.total, y.total),
        ] {
            max_diff = max_diff.max((p - q).abs());
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_predictions(&pa, &a.predictions).map_err(|e| e.to_string())?;
    write_predictions(&pb, &b.predictions).map_err(|e| e.to_string())?;
    let same_files = std::fs::read(&pa).map_err(|e| e.to_string())? == std::fs::read(&pb).map_err(|e| e.to_string())?;
    let detail = format!("max loss difference {max_diff:e}, prediction files identical: {same_files}");
    ensure(
        a.report.history.len() == b.report.history.len() && max_diff <= 1e-10 && same_files,
        || detail.clone(),
    )?;
    Ok(detail)
}

const POLARITIES: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

/// Counts true/false positives and false negatives by visiting every
/// (sentence, class) cell.
fn brute_force(
    preds: &[Prediction],
    gold: &[LabeledSentence],
    classes: &[String],
    predicted: impl Fn(&Prediction, &str) -> bool,
    actual: impl Fn(&LabeledSentence, &str) -> bool,
) -> Vec<(usize, usize, usize)> {
    classes
        .iter()
        .map(|c| {
            let mut cell = (0, 0, 0);
            for g in gold {
                let p = preds.iter().find(|p| p.id == g.id).unwrap();
                match (predicted(p, c), actual(g, c)) {
                    (true, true) => cell.0 += 1,
                    (true, false) => cell.1 += 1,
                    (false, true) => cell.2 += 1,
                    _ => {}
                }
            }
            cell
        })
        .collect()
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn macro_avg(cells: &[(usize, usize, usize)], keep: impl Fn(&(usize, usize, usize)) -> bool) -> (f64, f64, f64) {
    let kept: Vec<_> = cells.iter().filter(|c| keep(c)).collect();
    if kept.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = kept.len() as f64;
    let mut acc = (0.0, 0.0, 0.0);
    for c in &kept {
        let (p, r, f) = prf(c.0, c.1, c.2);
        acc.0 += p;
        acc.1 += r;
        acc.2 += f;
    }
    (acc.0 / n, acc.1 / n, acc.2 / n)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let a = rng.random_range(1..=4);
        let labels: Vec<String> = (0..a).map(|i| format!("asp{i}")).collect();
        let layout = TopicLayout::with_aspects(&labels, 1).map_err(|e| e.to_string())?;
        let n = rng.random_range(1..=8);
        let mut gold = Vec::new();
        let mut preds = Vec::new();
        for i in 0..n {
            let mut g = BTreeSet::new();
            let mut p = Prediction {
                id: format!("s{i}"),
                aspects: Vec::new(),
                coefficients: BTreeMap::new(),
                sentiments: BTreeMap::new(),
            };
            for l in &labels {
                if rng.random_bool(0.4) {
                    g.insert((l.clone(), *POLARITIES.choose(&mut rng).unwrap()));
                }
                if rng.random_bool(0.4) {
                    p.aspects.push(l.clone());
                    p.sentiments.insert(l.clone(), *POLARITIES.choose(&mut rng).unwrap());
                }
            }
            gold.push(LabeledSentence {
                id: format!("s{i}"),
                text: String::new(),
                gold: g,
            });
            preds.push(p);
        }
        preds.shuffle(&mut rng);
        let report = evaluate(&preds, &gold, &layout).map_err(|e| e.to_string())?;

        let aspect_cells = brute_force(
            &preds,
            &gold,
            &labels,
            |p, c| p.aspects.iter().any(|a| a == c),
            |g, c| g.gold.iter().any(|(a, _)| a == c),
        );
        let pair_labels: Vec<String> = labels
            .iter()
            .flat_map(|l| POLARITIES.iter().map(move |p| format!("{l}:{p}")))
            .collect();
        let pair_cells = brute_force(
            &preds,
            &gold,
            &pair_labels,
            |p, c| p.sentiments.iter().any(|(a, s)| format!("{a}:{s}") == c),
            |g, c| g.gold.iter().any(|(a, s)| format!("{a}:{s}") == c),
        );
        let got = |t: &absa_core::infer::TaskReport| {
            (
                t.classes.iter().map(|c| (c.tp, c.fp, c.fn_)).collect::<Vec<_>>(),
                (t.macro_precision, t.macro_recall, t.macro_f1),
            )
        };
        let want_aspect = (aspect_cells.clone(), macro_avg(&aspect_cells, |_| true));
        let want_pairs = (pair_cells.clone(), macro_avg(&pair_cells, |c| c.0 + c.2 > 0));
        ensure(got(&report.aspect) == want_aspect, || {
            format!("case {case}: aspect task differs")
        })?;
        ensure(got(&report.aspect_sentiment) == want_pairs, || {
            format!("case {case}: pair task differs")
        })?;
        for c in report.aspect.classes.iter().chain(&report.aspect_sentiment.classes) {
            let (p, r, f) = prf(c.tp, c.fp, c.fn_);
            ensure((c.precision, c.recall, c.f1) == (p, r, f), || {
                format!("case {case}: class {}", c.label)
            })?;
        }
    }
    Ok("100 randomized sets match the brute-force counts exactly".into())
}

fn random_cache(rng: &mut ChaCha8Rng) -> EmbeddingCache {
    let (h, l) = (rng.random_range(1..=6), rng.random_range(1..=4));
    let mut cache = EmbeddingCache::new(h, l);
    for i in 0..rng.random_range(0..=5) {
        let n = rng.random_range(0..=4);
        let states = (0..n * l * h).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        cache.records.push(CacheRecord {
            doc_id: format!("doc-{i}-é"),
            num_tokens: n,
            states,
        });
    }
    cache
}

fn cache_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("c.tec");
    let mut rejected = 0;
    for i in 0..100 {
        let c = random_cache(&mut rng);
        absa_core::embed_cache::write_cache(&c, &path).map_err(|e| e.to_string())?;
        let back = absa_core::embed_cache::read_cache(&path).map_err(|e| e.to_string())?;
        let bits = |c: &EmbeddingCache| -> Vec<Vec<u32>> {
            c.records
                .iter()
                .map(|r| r.states.iter().map(|v| v.to_bits()).collect())
                .collect()
        };
        ensure(back == c && bits(&back) == bits(&c), || {
            format!("cache {i} changed in round trip")
        })?;

        let bytes = c.to_bytes().map_err(|e| e.to_string())?;
        let mut magic = bytes.clone();
        magic[..4].copy_from_slice(b"XXXX");
        ensure(
            matches!(EmbeddingCache::from_bytes(&magic), Err(Error::CacheFormat(_))),
            || "bad magic accepted".into(),
        )?;
        let mut version = bytes.clone();
        version[4] = 2;
        ensure(
            matches!(EmbeddingCache::from_bytes(&version), Err(Error::CacheFormat(_))),
            || "bad version accepted".into(),
        )?;
        let mut trailing = bytes.clone();
        trailing.push(0);
        ensure(EmbeddingCache::from_bytes(&trailing).is_err(), || {
            "trailing byte accepted".into()
        })?;
        rejected += 3;
        if !c.records.is_empty() && bytes.len() > 20 {
            let cut = rng.random_range(20..bytes.len());
            let last_full = record_ends(&c).iter().filter(|&&e| e <= cut).count();
            match EmbeddingCache::from_bytes(&bytes[..cut]) {
                Err(Error::CacheCorrupt { record, .. }) if record == last_full => rejected += 1,
                other => {
                    return Err(format!(
                        "cut at {cut}: expected corruption in record {last_full}, got {other:?}"
                    ))
                }
            }
        }
    }
    Ok(format!(
        "100 round trips bit-exact, {rejected} corrupted files rejected"
    ))
}

/// Byte offset just past each record.
fn record_ends(c: &EmbeddingCache) -> Vec<usize> {
    let mut pos = 20;
    c.records
        .iter()
        .map(|r| {
            pos += 4 + r.doc_id.len() + 4 + 4 * r.states.len();
            pos
        })
        .collect()
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradient_correctness),
        ("prior closed forms", prior_closed_forms),
        ("KL identity and positivity", kl_identity_and_positivity),
        ("normalization invariants", normalization_invariants),
        ("synthetic recovery", synthetic_recovery),
        ("determinism", determinism),
        ("metric oracle", metric_oracle),
        ("cache format", cache_format),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

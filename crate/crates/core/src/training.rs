//! Parameter initialization, the optimization loop and gradient verification.

use std::time::Instant;

use log::{debug, warn};
use ndarray::{Array1, Array3};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{DocumentRecord, Vocabulary};
use crate::embed_cache::{EmbeddingCache, PoolingWeights, DEFAULT_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::grad::{DocInput, LossContext};
use crate::model::{
    Dense, Encoder, ForwardOptions, ModelDims, ModelParams, Noise, SentimentMlp, TopicLayout, TENSOR_NAMES,
};
use crate::objective::{LossBreakdown, LossWeights, PriorParams};
use crate::seeding::{bootstrap_seed, direct_seed, init_beta, SeedSpec, SeedingMethod, StaticEmbeddings};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layout: TopicLayout,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub zero_lr_epochs: usize,
    pub warmup_epochs: usize,
    pub weights: LossWeights,
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
    pub rng_seed: u64,
    pub encoder_width: usize,
    pub senti_width: usize,
    pub seeding: SeedingMethod,
    /// Initial `s_senti` magnitude: `+v` for `positive`, `-v` for `negative`.
    pub s_senti_init: f64,
    pub renormalize_theta_a: bool,
    pub max_tokens: usize,
}

impl TrainConfig {
    /// Restaurant-domain settings with the given layout.
    pub fn new(layout: TopicLayout) -> Self {
        Self {
            layout,
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            zero_lr_epochs: 1,
            warmup_epochs: 1,
            weights: LossWeights::default(),
            alpha: 1.0,
            rng_seed: 0,
            encoder_width: 100,
            senti_width: 100,
            seeding: SeedingMethod::Bootstrap,
            s_senti_init: 2.0,
            renormalize_theta_a: false,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if self.encoder_width == 0 || self.senti_width == 0 || self.max_tokens == 0 {
            return bad("MLP widths and max_tokens must be at least 1");
        }
        self.weights.validate()
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            renormalize_theta_a: self.renormalize_theta_a,
        }
    }

    pub fn loss_context(&self) -> Result<LossContext> {
        Ok(LossContext {
            layout: self.layout.clone(),
            prior: PriorParams::symmetric(self.alpha, self.layout.num_topics())?,
            weights: self.weights,
            opts: self.forward_options(),
        })
    }
}

/// Deterministic stream for epoch `epoch` (stream 0 is used for init).
fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial parameters: Xavier-normal MLP weights with zero biases, uniform
/// layer pooling, signed `s_senti`, and a seeded topic-word matrix.
pub fn init_params(
    cfg: &TrainConfig,
    hidden_dim: usize,
    num_layers: usize,
    vocab: &Vocabulary,
    seeds: &SeedSpec,
    static_embeddings: Option<&StaticEmbeddings>,
) -> Result<ModelParams> {
    cfg.validate()?;
    let layout = &cfg.layout;
    seeds.validate(layout)?;
    let mut rng = epoch_rng(cfg.rng_seed, 0);
    let (k, a) = (layout.num_topics(), layout.num_aspects());
    let encoder = Encoder {
        hidden: Dense::xavier(hidden_dim, cfg.encoder_width, &mut rng),
        mu: Dense::xavier(cfg.encoder_width, k, &mut rng),
        logvar: Dense::xavier(cfg.encoder_width, k, &mut rng),
    };
    let senti = SentimentMlp {
        hidden: Dense::xavier(hidden_dim, cfg.senti_width, &mut rng),
        out: Dense::xavier(cfg.senti_width, a, &mut rng),
    };
    let s_senti: Array1<f64> = layout
        .sentiment_labels()
        .iter()
        .map(|l| match l.as_str() {
            "positive" => cfg.s_senti_init,
            "negative" => -cfg.s_senti_init,
            _ => 0.0,
        })
        .collect();
    let mut beta = init_beta(vocab.len(), k, &mut rng);
    match (cfg.seeding, static_embeddings) {
        (SeedingMethod::Direct, _) => direct_seed(&mut beta, seeds, layout, vocab)?,
        (SeedingMethod::Bootstrap, Some(emb)) => bootstrap_seed(&mut beta, seeds, layout, vocab, emb)?,
        (SeedingMethod::Bootstrap, None) => {
            return Err(Error::Config("bootstrap seeding needs static word embeddings".into()))
        }
    }
    let params = ModelParams {
        pooling: PoolingWeights::uniform(num_layers),
        encoder,
        senti,
        beta,
        s_senti,
    };
    debug_assert_eq!(
        params.dims(),
        ModelDims {
            vocab: vocab.len(),
            topics: k,
            aspects: a,
            sentiments: layout.num_sentiments(),
            hidden_dim,
            num_layers,
            encoder_width: cfg.encoder_width,
            senti_width: cfg.senti_width,
        }
    );
    Ok(params)
}

/// Zero for the first `zero_lr_epochs`, a per-step linear ramp over
/// `warmup_epochs`, then constant.
pub fn lr_schedule(epoch: usize, step_fraction: f64, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.zero_lr_epochs {
        return 0.0;
    }
    let into = epoch - cfg.zero_lr_epochs;
    if into < cfg.warmup_epochs {
        cfg.learning_rate * (into as f64 + step_fraction) / cfg.warmup_epochs as f64
    } else {
        cfg.learning_rate
    }
}

/// First and second moment estimates of the adaptive optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected update. Moments advance even when `lr` is zero.
    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step_size = lr / c1;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step_size * m[i] / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Gradients of the summed batch objective for a fixed set of noise draws.
pub fn gradients_with_noise(
    params: &ModelParams,
    batch: &[DocInput<'_>],
    noises: &[Noise],
    ctx: &LossContext,
) -> Result<(ModelParams, LossBreakdown)> {
    let mut grads = params.zeros_like();
    let mut total = LossBreakdown::default();
    for (doc, noise) in batch.iter().zip(noises) {
        let loss = ctx.accumulate(params, *doc, noise, &mut grads)?;
        total.add(&loss);
    }
    Ok((grads, total))
}

/// Summed batch objective for a fixed set of noise draws.
pub fn batch_loss(params: &ModelParams, batch: &[DocInput<'_>], noises: &[Noise], ctx: &LossContext) -> Result<f64> {
    let mut total = 0.0;
    for (doc, noise) in batch.iter().zip(noises) {
        total += ctx.doc_loss(params, *doc, noise)?.1.total;
    }
    Ok(total)
}

pub fn sample_noises<R: Rng + ?Sized>(batch: &[DocInput<'_>], topics: usize, rng: &mut R) -> Vec<Noise> {
    batch
        .iter()
        .map(|d| Noise::sample(d.states.dim().0, topics, rng))
        .collect()
}

/// Draws one noise sample per document and returns the exact gradient of the
/// batch objective together with the noise used.
pub fn compute_gradients<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[DocInput<'_>],
    ctx: &LossContext,
    rng: &mut R,
) -> Result<(ModelParams, LossBreakdown, Vec<Noise>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let noises = sample_noises(batch, ctx.layout.num_topics(), rng);
    let (grads, loss) = gradients_with_noise(params, batch, &noises, ctx)?;
    Ok((grads, loss, noises))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateCheck {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coordinates
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn tensors_covered(&self) -> usize {
        let mut names: Vec<&str> = self.coordinates.iter().map(|c| c.tensor).collect();
        names.sort_unstable();
        names.dedup();
        names.len()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the batch objective
/// at up to `per_tensor` randomly chosen coordinates of every tensor.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_against<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[DocInput<'_>],
    noises: &[Noise],
    ctx: &LossContext,
    analytic: &ModelParams,
    h: f64,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut probe = params.clone();
    let mut coordinates = Vec::new();
    let analytic_tensors = analytic.tensors();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let len = params.tensors()[t].len();
        if len == 0 {
            continue;
        }
        for i in index::sample(rng, len, per_tensor.min(len)).into_iter() {
            let orig = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let plus = batch_loss(&probe, batch, noises, ctx)?;
            probe.tensors_mut()[t][i] = orig - h;
            let minus = batch_loss(&probe, batch, noises, ctx)?;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic_tensors[t][i];
            coordinates.push(CoordinateCheck {
                tensor: name,
                index: i,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        coordinates,
    })
}

/// Draws noise once, computes analytic gradients, and checks them against
/// central finite differences with step `h` using the same noise.
pub fn grad_check<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[DocInput<'_>],
    ctx: &LossContext,
    h: f64,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (analytic, _, noises) = compute_gradients(params, batch, ctx, rng)?;
    grad_check_against(params, batch, &noises, ctx, &analytic, h, per_tensor, rng)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub kl: f64,
    pub recon: f64,
    pub s_asp: f64,
    pub s_senti: f64,
    pub total: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

impl EpochLog {
    fn new(epoch: usize, mean: LossBreakdown, lr: f64) -> Self {
        Self {
            epoch,
            kl: mean.kl,
            recon: mean.recon,
            s_asp: mean.s_asp_mse,
            s_senti: mean.s_senti_mse,
            total: mean.total,
            lr,
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            kl: self.kl,
            recon: self.recon,
            s_asp_mse: self.s_asp,
            s_senti_mse: self.s_senti,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Per-document mean losses, one entry per epoch run.
    pub history: Vec<EpochLog>,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epochs_done: usize,
    pub seconds: f64,
}

/// Mini-batch optimizer over documents whose token states live in a cache.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    ctx: LossContext,
    documents: &'a [DocumentRecord],
    cache: &'a EmbeddingCache,
    /// `(document index, cache record index)` for every trainable document.
    items: Vec<(usize, usize)>,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epochs_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &'a TrainConfig,
        params: ModelParams,
        documents: &'a [DocumentRecord],
        cache: &'a EmbeddingCache,
    ) -> Result<Self> {
        cfg.validate()?;
        let vocab = params.beta.nrows();
        params.check_layout(&cfg.layout, vocab)?;
        if cache.hidden_dim != params.dims().hidden_dim || cache.num_layers != params.dims().num_layers {
            return Err(Error::Dimension(format!(
                "cache has H={}, L={}; model expects H={}, L={}",
                cache.hidden_dim,
                cache.num_layers,
                params.dims().hidden_dim,
                params.dims().num_layers
            )));
        }
        let lookup = cache.index();
        let mut items = Vec::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.bow.len() != vocab {
                return Err(Error::Dimension(format!(
                    "document {} has a BoW of length {}, vocabulary has {vocab}",
                    doc.id,
                    doc.bow.len()
                )));
            }
            let rec = *lookup
                .get(doc.id.as_str())
                .ok_or_else(|| Error::Data(format!("no cached embeddings for document {}", doc.id)))?;
            if cache.records[rec].num_tokens == 0 {
                warn!("document {} has no tokens; skipped", doc.id);
                continue;
            }
            items.push((i, rec));
        }
        if items.is_empty() {
            return Err(Error::EmptyInput("no trainable documents".into()));
        }
        let optimizer = AdamState::new(&params);
        Ok(Self {
            cfg,
            ctx: cfg.loss_context()?,
            documents,
            cache,
            items,
            params,
            optimizer,
            epochs_done: 0,
        })
    }

    /// Continues from a saved optimizer state and epoch count.
    pub fn with_state(mut self, optimizer: AdamState, epochs_done: usize) -> Result<Self> {
        if optimizer.m.dims() != self.params.dims() || optimizer.v.dims() != self.params.dims() {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.optimizer = optimizer;
        self.epochs_done = epochs_done;
        Ok(self)
    }

    pub fn num_documents(&self) -> usize {
        self.items.len()
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epochs_done;
        let mut rng = epoch_rng(self.cfg.rng_seed, epoch as u64 + 1);
        let mut order = self.items.clone();
        order.shuffle(&mut rng);
        let steps = order.len().div_ceil(self.cfg.batch_size);
        let mut sum = LossBreakdown::default();
        let mut lr = 0.0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let states: Vec<Array3<f64>> = chunk
                .iter()
                .map(|&(_, rec)| self.cache.states(rec, self.cfg.max_tokens))
                .collect();
            let batch: Vec<DocInput<'_>> = chunk
                .iter()
                .zip(&states)
                .map(|(&(d, _), s)| {
                    let doc = &self.documents[d];
                    DocInput {
                        id: &doc.id,
                        states: s,
                        bow: &doc.bow,
                        y_s: doc.y_s,
                    }
                })
                .collect();
            let (grads, loss, _) = compute_gradients(&self.params, &batch, &self.ctx, &mut rng)?;
            lr = lr_schedule(epoch, step as f64 / steps as f64, self.cfg);
            self.optimizer.update(&mut self.params, &grads, lr, self.cfg);
            sum.add(&loss);
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        self.epochs_done += 1;
        let log = EpochLog::new(epoch, sum.scaled(1.0 / order.len() as f64), lr);
        debug!("epoch {epoch}: total {:.6} lr {:.3e}", log.total, log.lr);
        Ok(log)
    }

    /// Runs the remaining epochs up to `cfg.epochs`.
    pub fn run(mut self) -> Result<TrainReport> {
        let start = Instant::now();
        let mut history = Vec::new();
        while self.epochs_done < self.cfg.epochs {
            history.push(self.run_epoch()?);
        }
        Ok(TrainReport {
            history,
            params: self.params,
            optimizer: self.optimizer,
            epochs_done: self.epochs_done,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Initializes parameters and trains for `cfg.epochs` epochs.
pub fn train(
    cfg: &TrainConfig,
    documents: &[DocumentRecord],
    cache: &EmbeddingCache,
    vocab: &Vocabulary,
    seeds: &SeedSpec,
    static_embeddings: Option<&StaticEmbeddings>,
) -> Result<TrainReport> {
    let params = init_params(cfg, cache.hidden_dim, cache.num_layers, vocab, seeds, static_embeddings)?;
    Trainer::new(cfg, params, documents, cache)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> TrainConfig {
        TrainConfig::new(TopicLayout::with_aspects(&["a", "b"], 1).unwrap())
    }

    #[test]
    fn schedule_examples() {
        let c = cfg();
        assert_eq!(lr_schedule(0, 0.0, &c), 0.0);
        assert_eq!(lr_schedule(0, 0.9, &c), 0.0);
        assert_abs_diff_eq!(lr_schedule(1, 0.5, &c), 0.5 * c.learning_rate, epsilon = 1e-20);
        assert_eq!(lr_schedule(5, 0.0, &c), c.learning_rate);
        // continuity at the warmup end
        assert_abs_diff_eq!(
            lr_schedule(1, 1.0 - 1e-12, &c),
            lr_schedule(2, 0.0, &c),
            epsilon = 1e-15
        );
        assert_eq!(lr_schedule(1, 0.0, &c), lr_schedule(0, 0.99, &c));
    }

    #[test]
    fn schedule_is_monotone_and_non_negative() {
        let mut c = cfg();
        c.zero_lr_epochs = 2;
        c.warmup_epochs = 3;
        let mut prev = 0.0;
        for e in 0..8 {
            for s in 0..10 {
                let lr = lr_schedule(e, s as f64 / 10.0, &c);
                assert!(lr >= prev && lr >= 0.0);
                prev = lr;
            }
        }
        assert_eq!(prev, c.learning_rate);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.adam_beta2 = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.weights.c3 = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(relative_error(1.0, 1.01), 0.01 / 1.01, epsilon = 1e-15);
        assert_abs_diff_eq!(relative_error(1e-12, 0.0), 1e-4, epsilon = 1e-15);
    }

    #[test]
    fn adam_with_zero_lr_only_moves_moments() {
        let d = ModelDims {
            vocab: 3,
            topics: 4,
            aspects: 2,
            sentiments: 2,
            hidden_dim: 2,
            num_layers: 1,
            encoder_width: 2,
            senti_width: 2,
        };
        let mut p = ModelParams::zeros(d);
        let mut g = ModelParams::zeros(d);
        g.beta.fill(1.0);
        let mut adam = AdamState::new(&p);
        adam.update(&mut p, &g, 0.0, &cfg());
        assert_eq!(p, ModelParams::zeros(d));
        assert_abs_diff_eq!(adam.m.beta[[0, 0]], 0.1, epsilon = 1e-15);
        adam.update(&mut p, &g, 0.1, &cfg());
        assert!(p.beta.iter().all(|&b| b < 0.0));
    }
}

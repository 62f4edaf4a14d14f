//! Forward pass of the topic model.
//!
//! Token states are pooled across layers, mapped by an MLP to per-token
//! Gaussian posteriors over topic logits, and mean-pooled into a document
//! posterior. The sampled document mixture reconstructs the bag of words
//! through a product of experts; per-token mixtures weight per-token
//! sentiment judgements into one coefficient per aspect topic, which feed
//! the two document-level sentiment heads.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed_cache::PoolingWeights;
use crate::error::{Error, Result};

/// Partition of the K topics into aspect, sentiment and background blocks,
/// in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicLayout {
    aspect_labels: Vec<String>,
    sentiment_labels: Vec<String>,
    background: usize,
}

impl TopicLayout {
    pub fn new(aspect_labels: Vec<String>, sentiment_labels: Vec<String>, background: usize) -> Result<Self> {
        if aspect_labels.is_empty() || sentiment_labels.is_empty() {
            return Err(Error::Config(
                "layout needs at least one aspect and one sentiment topic".into(),
            ));
        }
        let mut all: Vec<&String> = aspect_labels.iter().chain(&sentiment_labels).collect();
        all.sort();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("topic labels must be unique".into()));
        }
        Ok(Self {
            aspect_labels,
            sentiment_labels,
            background,
        })
    }

    /// Aspects as given, sentiments `positive`/`negative`.
    pub fn with_aspects<S: AsRef<str>>(aspects: &[S], background: usize) -> Result<Self> {
        Self::new(
            aspects.iter().map(|a| a.as_ref().to_string()).collect(),
            vec!["positive".into(), "negative".into()],
            background,
        )
    }

    pub fn num_aspects(&self) -> usize {
        self.aspect_labels.len()
    }

    pub fn num_sentiments(&self) -> usize {
        self.sentiment_labels.len()
    }

    pub fn num_background(&self) -> usize {
        self.background
    }

    pub fn num_topics(&self) -> usize {
        self.num_aspects() + self.num_sentiments() + self.background
    }

    pub fn aspect_labels(&self) -> &[String] {
        &self.aspect_labels
    }

    pub fn sentiment_labels(&self) -> &[String] {
        &self.sentiment_labels
    }

    pub fn aspects(&self) -> Range<usize> {
        0..self.num_aspects()
    }

    pub fn sentiments(&self) -> Range<usize> {
        self.num_aspects()..self.num_aspects() + self.num_sentiments()
    }

    pub fn backgrounds(&self) -> Range<usize> {
        self.num_aspects() + self.num_sentiments()..self.num_topics()
    }

    /// Human-readable name such as `aspect:food` or `background:2`.
    pub fn topic_name(&self, k: usize) -> String {
        let a = self.num_aspects();
        let s = self.num_sentiments();
        if k < a {
            format!("aspect:{}", self.aspect_labels[k])
        } else if k < a + s {
            format!("sentiment:{}", self.sentiment_labels[k - a])
        } else {
            format!("background:{}", k - a - s + 1)
        }
    }
}

/// Affine map `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Xavier-normal weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = (2.0 / (input + output) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || std * rng.sample::<f64, _>(StandardNormal)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to each row of `x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// Shared softplus hidden layer with mean and log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub hidden: Dense,
    pub mu: Dense,
    pub logvar: Dense,
}

/// One softplus hidden layer producing one coefficient per aspect topic.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentMlp {
    pub hidden: Dense,
    pub out: Dense,
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub pooling: PoolingWeights,
    pub encoder: Encoder,
    pub senti: SentimentMlp,
    /// Topic-word matrix, `V x K`.
    pub beta: Array2<f64>,
    pub s_senti: Array1<f64>,
}

/// Sizes that determine every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub topics: usize,
    pub aspects: usize,
    pub sentiments: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub encoder_width: usize,
    pub senti_width: usize,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "pooling",
    "encoder.hidden.weight",
    "encoder.hidden.bias",
    "encoder.mu.weight",
    "encoder.mu.bias",
    "encoder.logvar.weight",
    "encoder.logvar.bias",
    "senti.hidden.weight",
    "senti.hidden.bias",
    "senti.out.weight",
    "senti.out.bias",
    "beta",
    "s_senti",
];

impl ModelParams {
    pub fn zeros(d: ModelDims) -> Self {
        Self {
            pooling: PoolingWeights(Array1::zeros(d.num_layers)),
            encoder: Encoder {
                hidden: Dense::zeros(d.hidden_dim, d.encoder_width),
                mu: Dense::zeros(d.encoder_width, d.topics),
                logvar: Dense::zeros(d.encoder_width, d.topics),
            },
            senti: SentimentMlp {
                hidden: Dense::zeros(d.hidden_dim, d.senti_width),
                out: Dense::zeros(d.senti_width, d.aspects),
            },
            beta: Array2::zeros((d.vocab, d.topics)),
            s_senti: Array1::zeros(d.sentiments),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.beta.nrows(),
            topics: self.beta.ncols(),
            aspects: self.senti.out.output_dim(),
            sentiments: self.s_senti.len(),
            hidden_dim: self.encoder.hidden.input_dim(),
            num_layers: self.pooling.len(),
            encoder_width: self.encoder.hidden.output_dim(),
            senti_width: self.senti.hidden.output_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    /// Flat views of every tensor, in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 13] {
        fn v<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("parameters are contiguous")
        }
        [
            v(&self.pooling.0),
            v(&self.encoder.hidden.weight),
            v(&self.encoder.hidden.bias),
            v(&self.encoder.mu.weight),
            v(&self.encoder.mu.bias),
            v(&self.encoder.logvar.weight),
            v(&self.encoder.logvar.bias),
            v(&self.senti.hidden.weight),
            v(&self.senti.hidden.bias),
            v(&self.senti.out.weight),
            v(&self.senti.out.bias),
            v(&self.beta),
            v(&self.s_senti),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 13] {
        fn v<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are contiguous")
        }
        [
            v(&mut self.pooling.0),
            v(&mut self.encoder.hidden.weight),
            v(&mut self.encoder.hidden.bias),
            v(&mut self.encoder.mu.weight),
            v(&mut self.encoder.mu.bias),
            v(&mut self.encoder.logvar.weight),
            v(&mut self.encoder.logvar.bias),
            v(&mut self.senti.hidden.weight),
            v(&mut self.senti.hidden.bias),
            v(&mut self.senti.out.weight),
            v(&mut self.senti.out.bias),
            v(&mut self.beta),
            v(&mut self.s_senti),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks that every shape agrees with `layout` and the given vocabulary size.
    pub fn check_layout(&self, layout: &TopicLayout, vocab: usize) -> Result<()> {
        let d = self.dims();
        let enc = &self.encoder;
        let ok = d.vocab == vocab
            && d.topics == layout.num_topics()
            && d.aspects == layout.num_aspects()
            && d.sentiments == layout.num_sentiments()
            && enc.mu.input_dim() == d.encoder_width
            && enc.logvar.input_dim() == d.encoder_width
            && enc.mu.output_dim() == d.topics
            && enc.logvar.output_dim() == d.topics
            && self.senti.hidden.input_dim() == d.hidden_dim
            && self.senti.out.input_dim() == d.senti_width;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "parameters {d:?} do not match layout with K={} (A={}, S={}) and V={vocab}",
                layout.num_topics(),
                layout.num_aspects(),
                layout.num_sentiments()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    /// Rescale the aspect slice of the document mixture to sum to one before
    /// it weights the aspect sentiment coefficients.
    pub renormalize_theta_a: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Standard-normal reparameterization noise for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub doc: Array1<f64>,
    /// `N x K`, one row per token.
    pub tokens: Array2<f64>,
}

impl Noise {
    pub fn zeros(num_tokens: usize, topics: usize) -> Self {
        Self {
            doc: Array1::zeros(topics),
            tokens: Array2::zeros((num_tokens, topics)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(num_tokens: usize, topics: usize, rng: &mut R) -> Self {
        let doc = Array1::from_shape_simple_fn(topics, || rng.sample(StandardNormal));
        let tokens = Array2::from_shape_simple_fn((num_tokens, topics), || rng.sample(StandardNormal));
        Self { doc, tokens }
    }

    pub fn for_mode<R: Rng + ?Sized>(mode: Mode, num_tokens: usize, topics: usize, rng: &mut R) -> Self {
        match mode {
            Mode::Train => Self::sample(num_tokens, topics, rng),
            Mode::Infer => Self::zeros(num_tokens, topics),
        }
    }
}

/// Everything computed by [`forward`], including intermediates needed by the
/// backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    /// Layer-pooled token embeddings, `N x H`.
    pub x_e: Array2<f64>,
    pub enc_pre: Array2<f64>,
    pub enc_hidden: Array2<f64>,
    pub mu_tokens: Array2<f64>,
    pub sigma_tokens: Array2<f64>,
    pub mu_all: Array1<f64>,
    pub sigma_all: Array1<f64>,
    /// Document topic mixture.
    pub theta: Array1<f64>,
    pub theta_tokens: Array2<f64>,
    pub attention: Array2<f64>,
    pub senti_pre: Array2<f64>,
    pub senti_hidden: Array2<f64>,
    /// Per-token aspect sentiment judgements, `N x A`.
    pub s_tokens: Array2<f64>,
    pub s_asp: Array1<f64>,
    /// Aspect weights used by the aspect sentiment head: the raw aspect slice
    /// of `theta`, or that slice renormalized.
    pub theta_a: Array1<f64>,
    pub x_hat: Array1<f64>,
    pub y_hat_asp: f64,
    pub y_hat_senti: f64,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = z.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    for (row, mut dst) in z.rows().into_iter().zip(out.rows_mut()) {
        dst.assign(&softmax(row));
    }
    out
}

/// Pooled token embeddings for all tokens of a document (`N x L x H` -> `N x H`).
pub fn pool_document(states: &Array3<f64>, b: &PoolingWeights) -> Result<Array2<f64>> {
    let (n, l, h) = states.dim();
    if l != b.len() {
        return Err(Error::Dimension(format!(
            "{l} layers in states, {} pooling weights",
            b.len()
        )));
    }
    let mut x = Array2::zeros((n, h));
    for (layer, &w) in b.0.iter().enumerate() {
        x.scaled_add(w, &states.slice(s![.., layer, ..]));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub mu_tokens: Array2<f64>,
    pub sigma_tokens: Array2<f64>,
    pub mu_all: Array1<f64>,
    pub sigma_all: Array1<f64>,
}

struct EncoderPass {
    x_e: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    encoded: Encoded,
}

fn run_encoder(states: &Array3<f64>, params: &ModelParams) -> Result<EncoderPass> {
    if states.dim().0 == 0 {
        return Err(Error::EmptyDocument(String::new()));
    }
    if states.dim().2 != params.encoder.hidden.input_dim() {
        return Err(Error::Dimension(format!(
            "token states have H={}, encoder expects {}",
            states.dim().2,
            params.encoder.hidden.input_dim()
        )));
    }
    let x_e = pool_document(states, &params.pooling)?;
    let pre = params.encoder.hidden.apply(x_e.view());
    let hidden = pre.mapv(softplus);
    let mu_tokens = params.encoder.mu.apply(hidden.view());
    let sigma_tokens = params.encoder.logvar.apply(hidden.view()).mapv(f64::exp);
    let mu_all = mu_tokens.mean_axis(Axis(0)).expect("N >= 1");
    let sigma_all = sigma_tokens.mean_axis(Axis(0)).expect("N >= 1");
    Ok(EncoderPass {
        x_e,
        pre,
        hidden,
        encoded: Encoded {
            mu_tokens,
            sigma_tokens,
            mu_all,
            sigma_all,
        },
    })
}

/// Per-token posteriors and their token means. The variance head predicts
/// log-variance.
pub fn encode(states: &Array3<f64>, params: &ModelParams) -> Result<Encoded> {
    run_encoder(states, params).map(|p| p.encoded)
}

/// `softmax(mu + sqrt(sigma) * eps)`.
pub fn sample_theta(mu: ArrayView1<'_, f64>, sigma: ArrayView1<'_, f64>, eps: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut z = mu.to_owned();
    Zip::from(&mut z)
        .and(sigma)
        .and(eps)
        .for_each(|z, &s, &e| *z += s.sqrt() * e);
    softmax(z.view())
}

/// Product-of-experts decoder: `softmax(beta . theta)`.
pub fn reconstruct(theta: ArrayView1<'_, f64>, beta: &Array2<f64>) -> Array1<f64> {
    softmax(beta.dot(&theta).view())
}

/// Column-normalizes token mixtures: `a[i][k] = theta[i][k] / sum_j theta[j][k]`.
pub fn token_attention(theta_tokens: &Array2<f64>) -> Array2<f64> {
    let totals = theta_tokens.sum_axis(Axis(0));
    theta_tokens / &totals
}

/// Attention-weighted token sentiment per aspect topic, using the first `A`
/// attention columns.
pub fn aspect_sentiment_pool(attention: &Array2<f64>, s_tokens: &Array2<f64>) -> Array1<f64> {
    let a = s_tokens.ncols();
    (&attention.slice(s![.., ..a]) * s_tokens).sum_axis(Axis(0))
}

/// `(sigmoid(s_asp . theta_a), sigmoid(s_senti . theta_s))`.
pub fn doc_sentiment_heads(
    theta_a: ArrayView1<'_, f64>,
    s_asp: ArrayView1<'_, f64>,
    theta_s: ArrayView1<'_, f64>,
    s_senti: ArrayView1<'_, f64>,
) -> (f64, f64) {
    (sigmoid(s_asp.dot(&theta_a)), sigmoid(s_senti.dot(&theta_s)))
}

/// Full forward pass with explicit noise. All-zero noise gives the
/// deterministic inference pass.
pub fn forward_with_noise(
    states: &Array3<f64>,
    params: &ModelParams,
    layout: &TopicLayout,
    noise: &Noise,
    opts: ForwardOptions,
) -> Result<ForwardState> {
    let enc = run_encoder(states, params)?;
    let n = states.dim().0;
    let k = layout.num_topics();
    if noise.doc.len() != k || noise.tokens.dim() != (n, k) {
        return Err(Error::Dimension(format!(
            "noise shapes {} / {:?} for N={n}, K={k}",
            noise.doc.len(),
            noise.tokens.dim()
        )));
    }
    let Encoded {
        mu_tokens,
        sigma_tokens,
        mu_all,
        sigma_all,
    } = enc.encoded;

    let theta = sample_theta(mu_all.view(), sigma_all.view(), noise.doc.view());
    let x_hat = reconstruct(theta.view(), &params.beta);

    let z_tokens = &mu_tokens + &(sigma_tokens.mapv(f64::sqrt) * &noise.tokens);
    let theta_tokens = softmax_rows(&z_tokens);
    let attention = token_attention(&theta_tokens);

    let senti_pre = params.senti.hidden.apply(enc.x_e.view());
    let senti_hidden = senti_pre.mapv(softplus);
    let s_tokens = params.senti.out.apply(senti_hidden.view());
    let s_asp = aspect_sentiment_pool(&attention, &s_tokens);

    let raw_a = theta.slice(s![layout.aspects()]).to_owned();
    let theta_a = if opts.renormalize_theta_a {
        let total = raw_a.sum();
        raw_a / total
    } else {
        raw_a
    };
    let (y_hat_asp, y_hat_senti) = doc_sentiment_heads(
        theta_a.view(),
        s_asp.view(),
        theta.slice(s![layout.sentiments()]),
        params.s_senti.view(),
    );

    Ok(ForwardState {
        x_e: enc.x_e,
        enc_pre: enc.pre,
        enc_hidden: enc.hidden,
        mu_tokens,
        sigma_tokens,
        mu_all,
        sigma_all,
        theta,
        theta_tokens,
        attention,
        senti_pre,
        senti_hidden,
        s_tokens,
        s_asp,
        theta_a,
        x_hat,
        y_hat_asp,
        y_hat_senti,
    })
}

/// Forward pass drawing noise from `rng` in train mode and using zero noise
/// in infer mode. Returns the noise used alongside the state.
pub fn forward<R: Rng + ?Sized>(
    states: &Array3<f64>,
    params: &ModelParams,
    layout: &TopicLayout,
    mode: Mode,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<(ForwardState, Noise)> {
    let noise = Noise::for_mode(mode, states.dim().0, layout.num_topics(), rng);
    let state = forward_with_noise(states, params, layout, &noise, opts)?;
    Ok((state, noise))
}

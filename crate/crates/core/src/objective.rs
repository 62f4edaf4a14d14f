//! Loss terms. Both the KL term and the reconstruction term are stored as
//! non-negative penalties (KL divergence, negative log-likelihood), so
//! minimizing the weighted total maximizes the evidence lower bound.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardState;

/// Floor applied inside logarithms of reconstruction probabilities.
pub const LOG_FLOOR: f64 = 1e-10;

/// Logistic-normal approximation of a Dirichlet prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub alpha: Array1<f64>,
    pub mu_p: Array1<f64>,
    pub sigma_p: Array1<f64>,
}

impl PriorParams {
    pub fn from_alpha(alpha: Array1<f64>) -> Result<Self> {
        let (mu_p, sigma_p) = dirichlet_prior_params(alpha.view())?;
        Ok(Self { alpha, mu_p, sigma_p })
    }

    pub fn symmetric(alpha: f64, k: usize) -> Result<Self> {
        Self::from_alpha(Array1::from_elem(k, alpha))
    }
}

/// Mean and diagonal covariance of the Laplace approximation to
/// `Dirichlet(alpha)` in softmax coordinates.
pub fn dirichlet_prior_params(alpha: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if alpha.is_empty() {
        return Err(Error::Domain("alpha must be non-empty".into()));
    }
    if let Some(a) = alpha.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!(
            "Dirichlet concentration must be positive, got {a}"
        )));
    }
    let k = alpha.len() as f64;
    let logs = alpha.mapv(f64::ln);
    let mean_log = logs.sum() / k;
    let inv_sum: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let mu_p = logs.mapv(|l| l - mean_log);
    let sigma_p = alpha.mapv(|a| (1.0 / a) * (1.0 - 2.0 / k) + inv_sum / (k * k));
    Ok((mu_p, sigma_p))
}

/// `KL(N(mu_all, diag sigma_all) || N(mu_p, diag sigma_p))`.
pub fn kl_loss(mu_all: ArrayView1<'_, f64>, sigma_all: ArrayView1<'_, f64>, prior: &PriorParams) -> Result<f64> {
    if sigma_all.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::Domain("posterior variances must be positive".into()));
    }
    if mu_all.len() != prior.mu_p.len() || sigma_all.len() != prior.sigma_p.len() {
        return Err(Error::Dimension(format!(
            "posterior has {} topics, prior has {}",
            mu_all.len(),
            prior.mu_p.len()
        )));
    }
    let mut kl = 0.0;
    for k in 0..mu_all.len() {
        let sp = prior.sigma_p[k];
        let d = prior.mu_p[k] - mu_all[k];
        kl += sigma_all[k] / sp + d * d / sp - 1.0 + sp.ln() - sigma_all[k].ln();
    }
    Ok(0.5 * kl)
}

/// Negative log-likelihood `-sum_v x_v log x_hat_v` of raw counts.
pub fn recon_loss(x: &[u32], x_hat: ArrayView1<'_, f64>) -> f64 {
    x.iter()
        .zip(x_hat)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &p)| -f64::from(c) * p.max(LOG_FLOOR).ln())
        .sum()
}

pub fn sentiment_mse(y_hat: f64, y_s: f64) -> f64 {
    (y_hat - y_s).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            c1: 0.1,
            c2: 0.1,
            c3: 10.0,
            c4: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3, self.c4]
            .iter()
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub recon: f64,
    pub s_asp_mse: f64,
    pub s_senti_mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Builds one document's breakdown; the total is the weighted sum.
    pub fn weighted(kl: f64, recon: f64, s_asp_mse: f64, s_senti_mse: f64, w: &LossWeights) -> Self {
        Self {
            kl,
            recon,
            s_asp_mse,
            s_senti_mse,
            total: w.c1 * kl + w.c2 * recon + w.c3 * s_asp_mse + w.c4 * s_senti_mse,
        }
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.kl += other.kl;
        self.recon += other.recon;
        self.s_asp_mse += other.s_asp_mse;
        self.s_senti_mse += other.s_senti_mse;
        self.total += other.total;
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            kl: self.kl * f,
            recon: self.recon * f,
            s_asp_mse: self.s_asp_mse * f,
            s_senti_mse: self.s_senti_mse * f,
            total: self.total * f,
        }
    }
}

/// Batch objective: sum over documents of the weighted per-document terms.
/// Sentiment terms of unrated documents must already be zero.
pub fn total_loss(parts: &[LossBreakdown], w: &LossWeights) -> f64 {
    parts
        .iter()
        .map(|p| w.c1 * p.kl + w.c2 * p.recon + w.c3 * p.s_asp_mse + w.c4 * p.s_senti_mse)
        .sum()
}

/// Loss terms for one document given the forward outputs it needs.
pub fn document_loss(
    state: &ForwardState,
    bow: &[u32],
    y_s: Option<f64>,
    prior: &PriorParams,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let kl = kl_loss(state.mu_all.view(), state.sigma_all.view(), prior)?;
    let recon = recon_loss(bow, state.x_hat.view());
    let (s_asp, s_senti) = match y_s {
        Some(y) => (sentiment_mse(state.y_hat_asp, y), sentiment_mse(state.y_hat_senti, y)),
        None => (0.0, 0.0),
    };
    Ok(LossBreakdown::weighted(kl, recon, s_asp, s_senti, w))
}

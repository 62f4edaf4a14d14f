//! Samples from a symmetric Dirichlet and from its logistic-normal
//! (Laplace) approximation, summarized as histograms of one component.

use absa_core::objective::dirichlet_prior_params;
use absa_core::{Error, Result};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// Densities over equal-width bins of [0, 1].
    pub density: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorComparison {
    pub alpha: f64,
    pub topics: usize,
    pub samples: usize,
    pub dirichlet: Histogram,
    pub laplace: Histogram,
    /// Exact moments of one Dirichlet component.
    pub exact_mean: f64,
    pub exact_variance: f64,
}

fn histogram(values: &[f64], bins: usize) -> Histogram {
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Histogram {
        density: counts.iter().map(|&c| c as f64 * bins as f64 / n).collect(),
        mean,
        variance,
    }
}

fn dirichlet_component<R: Rng>(gamma: &Gamma<f64>, topics: usize, rng: &mut R) -> f64 {
    loop {
        let draws: Vec<f64> = (0..topics).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // all draws can underflow for tiny concentrations
        if sum > 0.0 {
            return draws[0] / sum;
        }
    }
}

fn laplace_component<R: Rng>(mu: &Array1<f64>, sd: &Array1<f64>, rng: &mut R) -> f64 {
    let z: Vec<f64> = mu
        .iter()
        .zip(sd)
        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    exps[0] / exps.iter().sum::<f64>()
}

pub fn compare_priors(alpha: f64, topics: usize, samples: usize, bins: usize, seed: u64) -> Result<PriorComparison> {
    if topics < 2 || samples == 0 || bins == 0 {
        return Err(Error::Validation("need at least 2 topics, 1 sample and 1 bin".into()));
    }
    let (mu, var) = dirichlet_prior_params(Array1::from_elem(topics, alpha).view())?;
    let sd = var.mapv(f64::sqrt);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..samples)
        .map(|_| dirichlet_component(&gamma, topics, &mut rng))
        .collect();
    let lap: Vec<f64> = (0..samples).map(|_| laplace_component(&mu, &sd, &mut rng)).collect();
    let k = topics as f64;
    let a0 = alpha * k;
    Ok(PriorComparison {
        alpha,
        topics,
        samples,
        dirichlet: histogram(&dir, bins),
        laplace: histogram(&lap, bins),
        exact_mean: 1.0 / k,
        exact_variance: (alpha * (a0 - alpha)) / (a0 * a0 * (a0 + 1.0)),
    })
}

use absa_core::grad::{DocInput, LossContext};
use absa_core::model::{ForwardOptions, ModelDims, ModelParams, TopicLayout};
use absa_core::objective::{LossWeights, PriorParams};
use absa_core::synthetic::{random_bow, random_params, random_states};
use absa_core::training::{compute_gradients, grad_check, grad_check_against, GradCheckReport};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 30;
const H: usize = 16;
const L: usize = 3;

/// (id, token states, bag of words, rescaled rating)
type Doc = (String, Array3<f64>, Vec<u32>, Option<f64>);

struct Setup {
    ctx: LossContext,
    params: ModelParams,
    docs: Vec<Doc>,
}

impl Setup {
    fn new(seed: u64, weights: LossWeights, renormalize: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = TopicLayout::with_aspects(&["a", "b", "c"], 3).unwrap();
        let dims = ModelDims {
            vocab: V,
            topics: layout.num_topics(),
            aspects: 3,
            sentiments: 2,
            hidden_dim: H,
            num_layers: L,
            encoder_width: 12,
            senti_width: 10,
        };
        let params = random_params(dims, 0.3, &mut rng);
        let docs = (0..4)
            .map(|i| {
                let n = rng.random_range(1..=5);
                let y = (i != 2).then(|| rng.random_range(0.0..=1.0));
                (
                    format!("d{i}"),
                    random_states(n, L, H, &mut rng),
                    random_bow(V, 12, &mut rng),
                    y,
                )
            })
            .collect();
        let alpha = absa_core::synthetic::random_alpha(layout.num_topics(), &mut rng);
        Self {
            ctx: LossContext {
                prior: PriorParams::from_alpha(alpha).unwrap(),
                layout,
                weights,
                opts: ForwardOptions {
                    renormalize_theta_a: renormalize,
                },
            },
            params,
            docs,
        }
    }

    fn batch(&self) -> Vec<DocInput<'_>> {
        self.docs
            .iter()
            .map(|(id, s, b, y)| DocInput {
                id,
                states: s,
                bow: b,
                y_s: *y,
            })
            .collect()
    }

    fn check(&self, seed: u64) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grad_check(&self.params, &self.batch(), &self.ctx, 1e-5, 32, &mut rng).unwrap()
    }
}

fn assert_passes(r: &GradCheckReport, what: &str) {
    assert!(
        r.coordinates.len() >= 200,
        "{what}: only {} coordinates",
        r.coordinates.len()
    );
    assert_eq!(r.tensors_covered(), 13, "{what}");
    assert!(r.max_rel_error < 1e-4, "{what}: worst {:?}", r.worst());
}

#[test]
fn full_objective_matches_finite_differences() {
    for seed in 0..3 {
        let s = Setup::new(seed, LossWeights::default(), false);
        assert_passes(&s.check(seed + 100), "default weights");
    }
}

#[test]
fn renormalized_aspect_weights_match_finite_differences() {
    let s = Setup::new(11, LossWeights::default(), true);
    assert_passes(&s.check(5), "renormalized");
}

#[test]
fn each_loss_term_matches_finite_differences() {
    let only = |i: usize| {
        let mut c = [0.0; 4];
        c[i] = 1.0;
        LossWeights {
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
        }
    };
    for term in 0..4 {
        let s = Setup::new(20 + term as u64, only(term), false);
        let r = s.check(7);
        // Terms that do not reach a tensor give exact zeros on both sides.
        assert!(r.max_rel_error < 1e-4, "term {term}: worst {:?}", r.worst());
    }
}

#[test]
fn zero_weights_give_zero_gradients() {
    let w = LossWeights {
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: 0.0,
    };
    let s = Setup::new(3, w, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (g, loss, _) = compute_gradients(&s.params, &s.batch(), &s.ctx, &mut rng).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn sentiment_coefficients_unused_without_document_sentiment_term() {
    let w = LossWeights {
        c4: 0.0,
        ..LossWeights::default()
    };
    let s = Setup::new(4, w, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (g, _, _) = compute_gradients(&s.params, &s.batch(), &s.ctx, &mut rng).unwrap();
    assert!(g.s_senti.iter().all(|&v| v == 0.0));
}

#[test]
fn checker_catches_a_one_percent_error() {
    let s = Setup::new(9, LossWeights::default(), false);
    let batch = s.batch();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut g, _, noises) = compute_gradients(&s.params, &batch, &s.ctx, &mut rng).unwrap();
    for t in g.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= 1.01);
    }
    let r = grad_check_against(&s.params, &batch, &noises, &s.ctx, &g, 1e-5, 24, &mut rng).unwrap();
    assert!(r.max_rel_error > 5e-3, "{}", r.max_rel_error);
}

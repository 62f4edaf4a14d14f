//! Reverse-mode gradients of the per-document objective, derived by hand.
//!
//! Gradients are taken with the frozen token states and the drawn
//! reparameterization noise held fixed. `crate::training::grad_check`
//! verifies them against central finite differences.

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::model::{forward_with_noise, sigmoid, ForwardOptions, ForwardState, ModelParams, Noise, TopicLayout};
use crate::objective::{document_loss, LossBreakdown, LossWeights, PriorParams, LOG_FLOOR};

/// Everything about the objective that is fixed across documents.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub layout: TopicLayout,
    pub prior: PriorParams,
    pub weights: LossWeights,
    pub opts: ForwardOptions,
}

/// One document's inputs to the objective.
#[derive(Debug, Clone, Copy)]
pub struct DocInput<'a> {
    pub id: &'a str,
    pub states: &'a Array3<f64>,
    pub bow: &'a [u32],
    pub y_s: Option<f64>,
}

impl LossContext {
    /// Forward pass and loss breakdown for one document.
    pub fn doc_loss(
        &self,
        params: &ModelParams,
        doc: DocInput<'_>,
        noise: &Noise,
    ) -> Result<(ForwardState, LossBreakdown)> {
        let state = forward_with_noise(doc.states, params, &self.layout, noise, self.opts).map_err(|e| match e {
            Error::EmptyDocument(_) => Error::EmptyDocument(doc.id.to_string()),
            other => other,
        })?;
        let loss = document_loss(&state, doc.bow, doc.y_s, &self.prior, &self.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(doc.id.to_string()));
        }
        Ok((state, loss))
    }

    /// Adds the gradient of this document's weighted loss to `grads` and
    /// returns its loss breakdown.
    pub fn accumulate(
        &self,
        params: &ModelParams,
        doc: DocInput<'_>,
        noise: &Noise,
        grads: &mut ModelParams,
    ) -> Result<LossBreakdown> {
        let (state, loss) = self.doc_loss(params, doc, noise)?;
        self.backward(params, doc, noise, &state, grads);
        Ok(loss)
    }

    fn backward(
        &self,
        params: &ModelParams,
        doc: DocInput<'_>,
        noise: &Noise,
        fw: &ForwardState,
        grads: &mut ModelParams,
    ) {
        let w = &self.weights;
        let layout = &self.layout;
        let n = fw.theta_tokens.nrows();
        let k = layout.num_topics();
        let a = layout.num_aspects();

        let mut d_theta = Array1::<f64>::zeros(k);

        // Reconstruction through the product-of-experts softmax.
        if w.c2 != 0.0 {
            let g: Array1<f64> = doc
                .bow
                .iter()
                .zip(&fw.x_hat)
                .map(|(&c, &p)| {
                    if c > 0 && p > LOG_FLOOR {
                        -w.c2 * f64::from(c) / p
                    } else {
                        0.0
                    }
                })
                .collect();
            let gx = g.dot(&fw.x_hat);
            let du = (&g - gx) * &fw.x_hat;
            let outer = du
                .view()
                .insert_axis(Axis(1))
                .dot(&fw.theta.view().insert_axis(Axis(0)));
            grads.beta += &outer;
            d_theta += &params.beta.t().dot(&du);
        }

        // Document sentiment heads.
        let mut d_s_asp = Array1::<f64>::zeros(a);
        if let Some(y) = doc.y_s {
            let r1 = w.c3 * 2.0 * (fw.y_hat_asp - y) * fw.y_hat_asp * (1.0 - fw.y_hat_asp);
            let r2 = w.c4 * 2.0 * (fw.y_hat_senti - y) * fw.y_hat_senti * (1.0 - fw.y_hat_senti);

            d_s_asp = &fw.theta_a * r1;
            let d_used = &fw.s_asp * r1;
            let d_raw = if self.opts.renormalize_theta_a {
                let total: f64 = fw.theta.slice(s![layout.aspects()]).sum();
                (&d_used - d_used.dot(&fw.theta_a)) / total
            } else {
                d_used
            };
            d_theta.slice_mut(s![layout.aspects()]).scaled_add(1.0, &d_raw);

            let theta_s = fw.theta.slice(s![layout.sentiments()]);
            d_theta
                .slice_mut(s![layout.sentiments()])
                .scaled_add(r2, &params.s_senti);
            grads.s_senti.scaled_add(r2, &theta_s);
        }

        // Document softmax, reparameterization and KL.
        let dz = softmax_backward(&fw.theta, &d_theta);
        let mut d_mu_all = dz.clone();
        let mut d_sigma_all = Array1::zeros(k);
        Zip::from(&mut d_sigma_all)
            .and(&dz)
            .and(&noise.doc)
            .and(&fw.sigma_all)
            .for_each(|d, &g, &e, &s| *d = g * e / (2.0 * s.sqrt()));
        if w.c1 != 0.0 {
            let prior = &self.prior;
            for j in 0..k {
                d_mu_all[j] += w.c1 * (fw.mu_all[j] - prior.mu_p[j]) / prior.sigma_p[j];
                d_sigma_all[j] += w.c1 * 0.5 * (1.0 / prior.sigma_p[j] - 1.0 / fw.sigma_all[j]);
            }
        }

        // Token means and variances enter the document posterior as averages.
        let inv_n = 1.0 / n as f64;
        let mut d_mu_tok = Array2::from_shape_fn((n, k), |(_, j)| d_mu_all[j] * inv_n);
        let mut d_sig_tok = Array2::from_shape_fn((n, k), |(_, j)| d_sigma_all[j] * inv_n);

        // Attention-weighted sentiment pooling over the aspect columns.
        let att_a = fw.attention.slice(s![.., ..a]);
        let d_s_tok = &att_a * &d_s_asp;
        if d_s_asp.iter().any(|&v| v != 0.0) {
            let mut d_att = Array2::<f64>::zeros((n, k));
            d_att.slice_mut(s![.., ..a]).assign(&(&fw.s_tokens * &d_s_asp));
            let totals = fw.theta_tokens.sum_axis(Axis(0));
            let weighted = (&d_att * &fw.attention).sum_axis(Axis(0));
            let d_theta_tok = (&d_att - &weighted) / &totals;
            let mut dz_tok = Array2::zeros((n, k));
            for ((mut dst, th), dt) in dz_tok
                .rows_mut()
                .into_iter()
                .zip(fw.theta_tokens.rows())
                .zip(d_theta_tok.rows())
            {
                let dot = th.dot(&dt);
                Zip::from(&mut dst)
                    .and(th)
                    .and(dt)
                    .for_each(|d, &t, &g| *d = t * (g - dot));
            }
            d_mu_tok += &dz_tok;
            Zip::from(&mut d_sig_tok)
                .and(&dz_tok)
                .and(&noise.tokens)
                .and(&fw.sigma_tokens)
                .for_each(|d, &g, &e, &s| *d += g * e / (2.0 * s.sqrt()));
        }
        let d_logvar = &d_sig_tok * &fw.sigma_tokens;

        // Encoder MLP.
        let enc = &params.encoder;
        let genc = &mut grads.encoder;
        genc.mu.weight += &d_mu_tok.t().dot(&fw.enc_hidden);
        genc.mu.bias += &d_mu_tok.sum_axis(Axis(0));
        genc.logvar.weight += &d_logvar.t().dot(&fw.enc_hidden);
        genc.logvar.bias += &d_logvar.sum_axis(Axis(0));
        let d_hidden = d_mu_tok.dot(&enc.mu.weight) + d_logvar.dot(&enc.logvar.weight);
        let d_pre = d_hidden * &fw.enc_pre.mapv(sigmoid);
        genc.hidden.weight += &d_pre.t().dot(&fw.x_e);
        genc.hidden.bias += &d_pre.sum_axis(Axis(0));
        let mut d_x = d_pre.dot(&enc.hidden.weight);

        // Token sentiment MLP.
        let senti = &params.senti;
        let gs = &mut grads.senti;
        gs.out.weight += &d_s_tok.t().dot(&fw.senti_hidden);
        gs.out.bias += &d_s_tok.sum_axis(Axis(0));
        let d_g = d_s_tok.dot(&senti.out.weight);
        let d_pre = d_g * &fw.senti_pre.mapv(sigmoid);
        gs.hidden.weight += &d_pre.t().dot(&fw.x_e);
        gs.hidden.bias += &d_pre.sum_axis(Axis(0));
        d_x += &d_pre.dot(&senti.hidden.weight);

        // Layer pooling weights.
        for (l, g) in grads.pooling.0.iter_mut().enumerate() {
            *g += (&doc.states.slice(s![.., l, ..]) * &d_x).sum();
        }
    }
}

fn softmax_backward(p: &Array1<f64>, d_p: &Array1<f64>) -> Array1<f64> {
    let dot = p.dot(d_p);
    p * &(d_p - dot)
}

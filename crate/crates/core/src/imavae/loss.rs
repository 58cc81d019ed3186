//! Loss terms of the training objective
//! `α · recon − β · elbo + pred`.

use super::model::{DiagGaussian, ImavaeModel, ModelVars, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::gradnet::{Tape, Var};
use crate::numkit::Matrix;

/// Per-batch averages of the three objective terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    /// Mean squared reconstruction error.
    pub recon: f64,
    /// Mean over rows of `log p(x | z) − KL(q(z|x,u) ‖ p(z|u))`.
    pub elbo: f64,
    /// Mean squared outcome error.
    pub pred: f64,
}

/// `α · recon − β · elbo + pred`.
pub fn total_loss(terms: &LossTerms, alpha: f64, beta: f64) -> f64 {
    alpha * terms.recon - beta * terms.elbo + terms.pred
}

/// `z = mean + exp(log_var / 2) ⊙ noise`.
pub fn reparam_sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::dim("reparameterisation noise", g.dim(), noise.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag_gauss(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::dim("kl_diag_gauss", q.dim(), p.dim()));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[i], q.log_var[i], p.mean[i], p.log_var[i]);
        kl += 0.5 * (lp - lq + ((lq.exp() + (mq - mp).powi(2)) * (-lp).exp()) - 1.0);
    }
    // rounding can leave a tiny negative value when q == p
    Ok(kl.max(0.0))
}

/// Graph nodes for one batch. All are `1×1`.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub recon: Var,
    pub log_lik: Var,
    pub kl: Var,
    pub pred: Var,
}

/// Inputs for one batch, already standardised.
pub struct BatchInputs<'a> {
    pub x: &'a Matrix,
    pub u: &'a Matrix,
    pub y: &'a [f64],
    /// Standard-normal noise, `rows × d`.
    pub noise: &'a Matrix,
}

/// Records the loss terms for a batch on `tape`.
pub(crate) fn build_loss_graph(
    tape: &mut Tape,
    vars: &ModelVars,
    model: &ImavaeModel,
    batch: &BatchInputs<'_>,
) -> LossGraph {
    let dims = model.dims();
    let d = dims.latent_dim;
    let rows = batch.x.rows();

    tape.set_scope("inputs");
    let x = tape.constant(batch.x.clone());
    let u = tape.constant(batch.u.clone());
    let y = tape.constant(Matrix::col_vector(batch.y));
    let noise = tape.constant(batch.noise.clone());

    // q(z | x, u)
    let enc_in = tape.concat_cols(&[x, u]);
    let enc_out = vars.encoder.forward(tape, enc_in, "encoder");
    tape.set_scope("encoder head");
    let mq = tape.slice_cols(enc_out, 0, d);
    let lq_raw = tape.slice_cols(enc_out, d, d);
    let lq = tape.clamp(lq_raw, LOG_VAR_MIN, LOG_VAR_MAX);

    // p(z | u)
    let prior_out = vars.prior_head.forward(tape, u, "prior");
    tape.set_scope("prior head");
    let mp = tape.slice_cols(prior_out, 0, d);
    let lp_raw = tape.slice_cols(prior_out, d, d);
    let lp = tape.clamp(lp_raw, LOG_VAR_MIN, LOG_VAR_MAX);

    // reparameterised draw
    tape.set_scope("reparameterisation");
    let half_lq = tape.scale(lq, 0.5);
    let sd = tape.exp(half_lq);
    let eps = tape.mul(sd, noise);
    let z = tape.add(mq, eps);

    // reconstruction
    let x_hat = vars.decoder.forward(tape, z, "decoder");
    tape.set_scope("reconstruction");
    let resid = tape.sub(x, x_hat);
    let sq = tape.square(resid);
    let recon = tape.mean_all(sq);
    let unit_lv = tape.constant(Matrix::zeros(rows, dims.x_dim));
    let ll_rows = tape.gauss_log_density(x, x_hat, unit_lv);
    let log_lik = tape.mean_all(ll_rows);

    // KL(q ‖ p), closed form, summed over latent dims
    tape.set_scope("kl");
    let diff = tape.sub(mq, mp);
    let diff_sq = tape.square(diff);
    let var_q = tape.exp(lq);
    let num = tape.add(var_q, diff_sq);
    let neg_lp = tape.scale(lp, -1.0);
    let prec_p = tape.exp(neg_lp);
    let ratio = tape.mul(num, prec_p);
    let lv_gap = tape.sub(lp, lq);
    let s = tape.add(lv_gap, ratio);
    let s = tape.add_scalar(s, -1.0);
    let kl_rows = tape.row_sum(s);
    let kl_sum = tape.mean_all(kl_rows);
    let kl = tape.scale(kl_sum, 0.5);

    // outcome
    tape.set_scope("predictor");
    let pred_in = tape.concat_cols(&[z, u]);
    let y_hat = tape.affine(pred_in, vars.pred_weight, vars.pred_bias);
    let y_resid = tape.sub(y, y_hat);
    let y_sq = tape.square(y_resid);
    let pred = tape.mean_all(y_sq);

    LossGraph {
        recon,
        log_lik,
        kl,
        pred,
    }
}

fn check_batch(model: &ImavaeModel, batch: &BatchInputs<'_>) -> Result<()> {
    let dims = model.dims();
    let n = batch.x.rows();
    if n == 0 {
        return Err(Error::Data("loss_terms: empty batch".into()));
    }
    for (name, got, want) in [
        ("batch feature columns", batch.x.cols(), dims.x_dim),
        ("batch aux columns", batch.u.cols(), dims.aux_dim()),
        ("batch aux rows", batch.u.rows(), n),
        ("batch outcomes", batch.y.len(), n),
        ("noise rows", batch.noise.rows(), n),
        ("noise columns", batch.noise.cols(), dims.latent_dim),
    ] {
        if got != want {
            return Err(Error::dim(name, want, got));
        }
    }
    Ok(())
}

/// Evaluates the three terms for one batch with caller-supplied noise.
/// Inputs are in the model's standardised units.
pub fn loss_terms(model: &ImavaeModel, batch: &BatchInputs<'_>) -> Result<LossTerms> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let vars = crate::gradnet::Differentiable::register(model, &mut tape);
    let g = build_loss_graph(&mut tape, &vars, model, batch);
    if let Some(scope) = tape.non_finite_scope() {
        return Err(Error::NonFinite {
            context: format!("loss terms ({scope})"),
        });
    }
    Ok(LossTerms {
        recon: tape.scalar(g.recon),
        elbo: tape.scalar(g.log_lik) - tape.scalar(g.kl),
        pred: tape.scalar(g.pred),
    })
}

/// Weights used to combine the graph into one scalar objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Multiplier on the KL term inside the ELBO (annealing).
    pub kl_weight: f64,
}

/// Objective value, unannealed terms and gradient for a batch.
pub fn objective_and_grad(
    model: &ImavaeModel,
    batch: &BatchInputs<'_>,
    w: ObjectiveWeights,
) -> Result<(f64, LossTerms, ImavaeModel)> {
    check_batch(model, batch)?;
    let mut terms = None;
    let (value, grads) = crate::gradnet::grad(model, |tape, vars| {
        let g = build_loss_graph(tape, vars, model, batch);
        terms = Some(LossTerms {
            recon: tape.scalar(g.recon),
            elbo: tape.scalar(g.log_lik) - tape.scalar(g.kl),
            pred: tape.scalar(g.pred),
        });
        tape.set_scope("objective");
        let kl_w = tape.scale(g.kl, w.kl_weight);
        let elbo = tape.sub(g.log_lik, kl_w);
        let a = tape.scale(g.recon, w.alpha);
        let b = tape.scale(elbo, -w.beta);
        let ab = tape.add(a, b);
        tape.add(ab, g.pred)
    })?;
    let reported = terms.expect("closure ran");
    Ok((value, reported, grads))
}

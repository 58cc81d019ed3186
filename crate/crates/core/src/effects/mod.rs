//! Post-fit effect estimation and latent diagnostics.

mod report;

pub use report::{error_vs_truth, EffectErrors, EffectReport};

use crate::baselines::ols_fit;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::imavae::ImavaeModel;
use crate::numkit::{dot, kahan_sum, solve_spd, streams, Matrix, RngStream};

pub const DEFAULT_MC_DRAWS: usize = 10_000;

fn check_compatible(model: &ImavaeModel, ds: &Dataset) -> Result<()> {
    let dims = model.dims();
    if ds.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    if ds.x_dim() != dims.x_dim {
        return Err(Error::dim("dataset feature columns", dims.x_dim, ds.x_dim()));
    }
    if ds.cov_dim() != dims.cov_dim {
        return Err(Error::dim("dataset covariate columns", dims.cov_dim, ds.cov_dim()));
    }
    Ok(())
}

/// Prior means and standard deviations for every row with the treatment
/// forced to `t`.
fn prior_arm(model: &ImavaeModel, ds: &Dataset, t: u8) -> Result<(Matrix, Matrix, Matrix)> {
    let u = model.aux_matrix(&vec![t; ds.n()], ds.w())?;
    let (mean, log_var) = model.prior_batch(&u)?;
    Ok((mean, log_var.map(|v| (0.5 * v).exp()), u))
}

/// Monte-Carlo ACME / ADE / ATE.
///
/// Every replicate draws one standard-normal vector per row and reuses it
/// for both counterfactual mediator values, so the identity
/// `ate = acme_t1 + ade_t0 = acme_t0 + ade_t1` holds to rounding.
pub fn estimate_effects(
    model: &ImavaeModel,
    ds: &Dataset,
    mc_draws: usize,
    seed: u64,
) -> Result<EffectReport> {
    if mc_draws == 0 {
        return Err(Error::InvalidConfig("mc_draws must be at least 1".into()));
    }
    check_compatible(model, ds)?;
    let d = model.dims().latent_dim;
    let n = ds.n();
    let (m0, s0, u0) = prior_arm(model, ds, 0)?;
    let (m1, s1, u1) = prior_arm(model, ds, 1)?;

    // predict_y(z, u) = intercept + cz·z + cu·u, split so the u part is
    // computed once per row and arm
    let (cz, cu) = model.predictor.coeffs.split_at(d);
    let base0: Vec<f64> = (0..n).map(|i| model.predictor.intercept + dot(cu, u0.row(i))).collect();
    let base1: Vec<f64> = (0..n).map(|i| model.predictor.intercept + dot(cu, u1.row(i))).collect();

    let root = RngStream::new(seed, streams::EFFECTS);
    let mut reps: [Vec<f64>; 5] = Default::default();
    let mut z0 = vec![0.0; d];
    let mut z1 = vec![0.0; d];
    let mut y = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for r in 0..mc_draws {
        let mut rng = root.substream(r as u64);
        y.iter_mut().for_each(Vec::clear);
        for i in 0..n {
            for k in 0..d {
                let e = rng.normal();
                z0[k] = m0.get(i, k) + s0.get(i, k) * e;
                z1[k] = m1.get(i, k) + s1.get(i, k) * e;
            }
            let (g0, g1) = (dot(cz, &z0), dot(cz, &z1));
            y[0].push(base1[i] + g1); // y(1, z(1))
            y[1].push(base1[i] + g0); // y(1, z(0))
            y[2].push(base0[i] + g1); // y(0, z(1))
            y[3].push(base0[i] + g0); // y(0, z(0))
        }
        let nf = n as f64;
        let [s11, s10, s01, s00] = [0, 1, 2, 3].map(|k| kahan_sum(y[k].iter().copied()));
        reps[0].push((s01 - s00) / nf);
        reps[1].push((s11 - s10) / nf);
        reps[2].push((s10 - s00) / nf);
        reps[3].push((s11 - s01) / nf);
        reps[4].push((s11 - s00) / nf);
    }

    let summary: Vec<(f64, f64)> = reps.iter().map(|v| mean_and_se(v)).collect();
    Ok(EffectReport {
        acme_t0: summary[0].0,
        acme_t1: summary[1].0,
        ade_t0: summary[2].0,
        ade_t1: summary[3].0,
        ate: summary[4].0,
        se_acme_t0: summary[0].1,
        se_acme_t1: summary[1].1,
        se_ade_t0: summary[2].1,
        se_ade_t1: summary[3].1,
        se_ate: summary[4].1,
        mc_draws,
    })
}

/// Mean and standard error of the mean (zero for a single value).
fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = kahan_sum(v.iter().copied()) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = kahan_sum(v.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Posterior means `E[z | x, u]` for every row (`n × d`).
pub fn posterior_means(model: &ImavaeModel, ds: &Dataset) -> Result<Matrix> {
    check_compatible(model, ds)?;
    let u = model.aux_matrix(ds.t(), ds.w())?;
    let x = model.scale_x_matrix(ds.x())?;
    Ok(model.encode_batch(&x, &u)?.0)
}

/// One draw from `p(z | u)` per row, at each row's observed treatment.
pub fn prior_samples(model: &ImavaeModel, ds: &Dataset, rng: &mut RngStream) -> Result<Matrix> {
    check_compatible(model, ds)?;
    let u = model.aux_matrix(ds.t(), ds.w())?;
    let (mean, log_var) = model.prior_batch(&u)?;
    let mut z = mean;
    for i in 0..z.rows() {
        for (k, v) in z.row_mut(i).iter_mut().enumerate() {
            *v += (0.5 * log_var.get(i, k)).exp() * rng.normal();
        }
    }
    Ok(z)
}

/// R² of an OLS fit of each true mediator dimension on the posterior means.
pub fn affine_recovery_score(model: &ImavaeModel, ds: &Dataset) -> Result<Vec<f64>> {
    let z_true = ds
        .z_true()
        .ok_or_else(|| Error::Data("affine recovery needs true mediator columns".into()))?;
    let dims = model.dims();
    let need = dims.latent_dim + dims.aux_dim() + 1;
    if ds.n() < need {
        return Err(Error::Data(format!(
            "affine recovery needs at least {need} rows, got {}",
            ds.n()
        )));
    }
    let latents = posterior_means(model, ds)?;
    (0..z_true.cols())
        .map(|j| Ok(ols_fit(&latents, &z_true.col(j))?.r_squared))
        .collect()
}

/// Two-fold cross-validated accuracy of a logistic separator predicting the
/// treatment from one prior sample per row.
pub fn disentanglement_score(model: &ImavaeModel, ds: &Dataset, seed: u64) -> Result<f64> {
    let treated = ds.treated_count();
    if treated == 0 || treated == ds.n() {
        return Err(Error::Data(
            "disentanglement needs both treatment arms".into(),
        ));
    }
    let mut rng = RngStream::new(seed, streams::DIAGNOSTICS);
    let z = prior_samples(model, ds, &mut rng)?;
    let labels: Vec<f64> = ds.t().iter().map(|&t| t as f64).collect();
    Ok(cross_validated_accuracy(&z, &labels, &mut rng))
}

pub(crate) fn cross_validated_accuracy(z: &Matrix, labels: &[f64], rng: &mut RngStream) -> f64 {
    let n = z.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let (a, b) = perm.split_at(n / 2);
    let mut correct = 0usize;
    for (train, test) in [(a, b), (b, a)] {
        let model = LogisticFit::fit(&z.select_rows(train), &train.iter().map(|&i| labels[i]).collect::<Vec<_>>());
        for &i in test {
            let hit = (model.linear(z.row(i)) >= 0.0) == (labels[i] == 1.0);
            correct += hit as usize;
        }
    }
    correct as f64 / n as f64
}

/// Ridge-stabilised logistic regression on standardised features.
struct LogisticFit {
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// Intercept first.
    beta: Vec<f64>,
}

impl LogisticFit {
    const RIDGE: f64 = 1e-6;
    const MAX_ITER: usize = 100;

    fn fit(x: &Matrix, labels: &[f64]) -> Self {
        let (n, p) = x.shape();
        let shift = x.col_means();
        let scale: Vec<f64> = (0..p)
            .map(|j| {
                let s = (x.col(j).iter().map(|v| (v - shift[j]).powi(2)).sum::<f64>()
                    / n.max(2) as f64)
                    .sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![1.0];
                r.extend(x.row(i).iter().enumerate().map(|(j, v)| (v - shift[j]) / scale[j]));
                r
            })
            .collect();
        let k = p + 1;
        let objective = |beta: &[f64]| {
            let mut ll = -0.5 * Self::RIDGE * dot(beta, beta);
            for (r, &yv) in rows.iter().zip(labels) {
                let eta = dot(r, beta);
                // log σ(η) and log(1 − σ(η)) without overflow
                ll += if yv == 1.0 { -softplus(-eta) } else { -softplus(eta) };
            }
            ll
        };
        let mut beta = vec![0.0; k];
        let mut current = objective(&beta);
        for _ in 0..Self::MAX_ITER {
            let mut grad: Vec<f64> = beta.iter().map(|b| -Self::RIDGE * b).collect();
            let mut hess = Matrix::identity(k).map(|v| v * Self::RIDGE);
            for (r, &yv) in rows.iter().zip(labels) {
                let p = sigmoid(dot(r, &beta));
                let w = p * (1.0 - p);
                for a in 0..k {
                    grad[a] += (yv - p) * r[a];
                    for b in 0..k {
                        hess.set(a, b, hess.get(a, b) + w * r[a] * r[b]);
                    }
                }
            }
            if dot(&grad, &grad).sqrt() < 1e-8 {
                break;
            }
            let Ok(step) = solve_spd(&hess, &grad) else { break };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let val = objective(&cand);
                if val.is_finite() && val >= current {
                    beta = cand;
                    current = val;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        LogisticFit { shift, scale, beta }
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.beta[0]
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.beta[j + 1] * (v - self.shift[j]) / self.scale[j])
                .sum::<f64>()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::{Layer, MlpParams};
    use crate::imavae::{CaseTag, InputScaling, LinearPredictor, ModelDims};

    fn linear(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> MlpParams {
        MlpParams::new(
            vec![Layer {
                weight: Matrix::from_rows(&weight).unwrap(),
                bias,
            }],
            vec![],
        )
        .unwrap()
    }

    /// Case-a model with identity encoder/decoder on `x = z` (D = d = 2),
    /// prior `N(shift·t·1, exp(lv)·I)` and predictor `coeffs`.
    fn toy_model(shift: f64, lv: f64, coeffs: Vec<f64>, intercept: f64) -> ImavaeModel {
        let dims = ModelDims::new(2, 2, 0, CaseTag::A).unwrap();
        ImavaeModel::from_parts(
            dims,
            linear(
                vec![
                    vec![1.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0],
                    vec![0.0; 3],
                    vec![0.0; 3],
                ],
                vec![0.0, 0.0, -4.0, -4.0],
            ),
            linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2]),
            linear(
                vec![vec![shift], vec![shift], vec![0.0], vec![0.0]],
                vec![0.0, 0.0, lv, lv],
            ),
            LinearPredictor { coeffs, intercept },
            InputScaling::identity(&dims),
        )
        .unwrap()
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 0);
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let z = Matrix::from_vec(n, 2, rng.normal_vec(2 * n)).unwrap();
        Dataset::new(t, vec![0.0; n], None, z.clone(), Some(z)).unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero_effects() {
        let m = toy_model(1.5, 0.0, vec![0.0; 3], 4.0);
        let r = estimate_effects(&m, &toy_data(50, 1), 20, 3).unwrap();
        for v in [r.acme_t0, r.acme_t1, r.ade_t0, r.ade_t1, r.ate] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn linear_predictor_is_exact_with_shared_noise() {
        let c = 0.75;
        let m = toy_model(c, 0.3, vec![1.0, 1.0, 1.0], -2.0);
        for draws in [1, 7] {
            let r = estimate_effects(&m, &toy_data(40, 2), draws, 9).unwrap();
            for (got, want) in [
                (r.acme_t0, 2.0 * c),
                (r.acme_t1, 2.0 * c),
                (r.ade_t0, 1.0),
                (r.ade_t1, 1.0),
                (r.ate, 2.0 * c + 1.0),
            ] {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    /// Mediator effect that depends on the noise: exact additivity still holds.
    #[test]
    fn additivity_and_determinism() {
        let mut m = toy_model(0.4, 0.8, vec![0.7, -1.3, 0.2], 0.1);
        // prior variance depends on t, so shared noise does not cancel
        m.prior_head.layers_mut()[0].weight.set(2, 0, 1.1);
        let ds = toy_data(64, 5);
        let r = estimate_effects(&m, &ds, 50, 11).unwrap();
        assert!(r.additivity_gap() < 1e-13, "{}", r.additivity_gap());
        assert_eq!(r, estimate_effects(&m, &ds, 50, 11).unwrap());
        assert_ne!(r, estimate_effects(&m, &ds, 50, 12).unwrap());
        assert!(r.se_acme_t1 > 0.0);
    }

    #[test]
    fn standard_error_scales_with_draws() {
        let mut m = toy_model(0.4, 0.8, vec![0.7, -1.3, 0.2], 0.1);
        m.prior_head.layers_mut()[0].weight.set(2, 0, 1.1);
        let ds = toy_data(8, 6);
        let small = estimate_effects(&m, &ds, 100, 1).unwrap().se_acme_t1;
        let large = estimate_effects(&m, &ds, 10_000, 1).unwrap().se_acme_t1;
        let ratio = small / large;
        assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn estimate_rejects_bad_inputs() {
        let m = toy_model(1.0, 0.0, vec![1.0; 3], 0.0);
        assert!(estimate_effects(&m, &toy_data(4, 1), 0, 1).is_err());
        let wrong = Dataset::new(vec![0, 1], vec![0.0; 2], None, Matrix::zeros(2, 3), None).unwrap();
        assert!(estimate_effects(&m, &wrong, 5, 1).is_err());
    }

    #[test]
    fn recovery_is_perfect_for_identity_and_affine_latents() {
        let m = toy_model(1.0, 0.0, vec![1.0; 3], 0.0);
        let ds = toy_data(200, 3);
        for r2 in affine_recovery_score(&m, &ds).unwrap() {
            assert!((r2 - 1.0).abs() < 1e-12);
        }
        // true z = A·latent + c with invertible A
        let lat = ds.x();
        let z: Vec<f64> = (0..200)
            .flat_map(|i| {
                let (a, b) = (lat.get(i, 0), lat.get(i, 1));
                [2.0 * a - b + 3.0, 0.5 * a + 1.5 * b - 1.0]
            })
            .collect();
        let affine = Dataset::new(
            ds.t().to_vec(),
            ds.y().to_vec(),
            None,
            lat.clone(),
            Some(Matrix::from_vec(200, 2, z).unwrap()),
        )
        .unwrap();
        for r2 in affine_recovery_score(&m, &affine).unwrap() {
            assert!((r2 - 1.0).abs() < 1e-12);
        }
        assert!(affine_recovery_score(&m, &toy_data(3, 1)).is_err());
        assert!(affine_recovery_score(&m, &ds.without_truth()).is_err());
    }

    #[test]
    fn identical_priors_are_not_separable() {
        let m = toy_model(0.0, 0.0, vec![1.0; 3], 0.0);
        let acc = disentanglement_score(&m, &toy_data(4000, 4), 8).unwrap();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn separated_priors_are_separable() {
        let m = toy_model(10.0, (0.01f64).ln(), vec![1.0; 3], 0.0);
        let acc = disentanglement_score(&m, &toy_data(2000, 5), 8).unwrap();
        assert!(acc > 0.999, "{acc}");
    }

    #[test]
    fn single_arm_rejected() {
        let m = toy_model(1.0, 0.0, vec![1.0; 3], 0.0);
        let ds = Dataset::new(vec![1; 5], vec![0.0; 5], None, Matrix::zeros(5, 2), None).unwrap();
        assert!(disentanglement_score(&m, &ds, 1).is_err());
    }

    #[test]
    fn logistic_recovers_direction() {
        let mut rng = RngStream::new(2, 2);
        let n = 4000;
        let x = Matrix::from_vec(n, 1, rng.normal_vec(n)).unwrap();
        let labels: Vec<f64> = (0..n)
            .map(|i| rng.bernoulli(sigmoid(0.3 + 1.2 * x.get(i, 0))) as u8 as f64)
            .collect();
        let fit = LogisticFit::fit(&x, &labels);
        let slope = fit.beta[1] / fit.scale[0];
        assert!((slope - 1.2).abs() < 0.15, "{slope}");
    }
}

use crate::error::{Error, Result};
use crate::numkit::{dot, inverse_mills, normal_log_cdf, solve_spd, Matrix};

/// Newton–Raphson settings for [`probit_fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbitOptions {
    /// Added to the negative Hessian before each solve.
    pub hessian_ridge: f64,
    /// L2 penalty `½·λ‖β‖²` on the log-likelihood; zero for plain maximum
    /// likelihood. A positive value keeps separated problems bounded.
    pub penalty: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        ProbitOptions {
            hessian_ridge: 1e-6,
            penalty: 0.0,
            tolerance: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbitFit {
    /// One coefficient per design column.
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Coefficient norm beyond which the likelihood is treated as unbounded.
const SEPARATION_NORM: f64 = 1e3;

/// Prepends a column of ones.
pub fn with_intercept(x: &Matrix) -> Matrix {
    let ones = Matrix::filled(x.rows(), 1, 1.0);
    Matrix::hstack(&[&ones, x]).expect("row counts agree")
}

/// Probit log-likelihood of `beta` (without any penalty).
pub fn probit_log_likelihood(x: &Matrix, labels: &[bool], beta: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| {
            let eta = dot(x.row(i), beta);
            if labels[i] {
                normal_log_cdf(eta)
            } else {
                normal_log_cdf(-eta)
            }
        })
        .sum()
}

/// Maximum-likelihood probit regression of `labels` on the columns of `x`.
/// Include an intercept column explicitly (see [`with_intercept`]).
pub fn probit_fit(x: &Matrix, labels: &[bool], opts: &ProbitOptions) -> Result<ProbitFit> {
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(Error::dim("probit labels", n, labels.len()));
    }
    if n == 0 || p == 0 {
        return Err(Error::Data("probit_fit needs a non-empty design".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if opts.penalty == 0.0 && (positives == 0 || positives == n) {
        return Err(Error::Separation {
            iterations: 0,
            norm: f64::INFINITY,
        });
    }
    let objective = |beta: &[f64]| {
        probit_log_likelihood(x, labels, beta) - 0.5 * opts.penalty * dot(beta, beta)
    };

    let mut beta = vec![0.0; p];
    let mut current = objective(&beta);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..opts.max_iter {
        // score λ_i x_i and negative Hessian Σ λ_i(λ_i + η_i) x_i x_iᵀ
        let mut grad: Vec<f64> = beta.iter().map(|b| -opts.penalty * b).collect();
        let mut neg_hess = Matrix::identity(p).map(|v| v * (opts.hessian_ridge + opts.penalty));
        for i in 0..n {
            let row = x.row(i);
            let eta = dot(row, &beta);
            let (lambda, curv) = if labels[i] {
                let l = inverse_mills(eta);
                (l, l * (l + eta))
            } else {
                let l = inverse_mills(-eta);
                (-l, l * (l - eta))
            };
            for a in 0..p {
                grad[a] += lambda * row[a];
                let ca = curv * row[a];
                for b in a..p {
                    let v = neg_hess.get(a, b) + ca * row[b];
                    neg_hess.set(a, b, v);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                neg_hess.set(a, b, neg_hess.get(b, a));
            }
        }
        grad_norm = dot(&grad, &grad).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                context: "probit score".into(),
            });
        }
        let step = solve_spd(&neg_hess, &grad)?;
        // expected gain of the Newton step; below rounding of the objective
        let decrement = 0.5 * dot(&grad, &step);
        if grad_norm < opts.tolerance || decrement < 1e-15 * (1.0 + current.abs()) {
            return Ok(ProbitFit {
                log_likelihood: probit_log_likelihood(x, labels, &beta),
                coefficients: beta,
                iterations: iter,
                grad_norm,
            });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let val = objective(&cand);
            if val.is_finite() && val >= current {
                beta = cand;
                current = val;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let norm = dot(&beta, &beta).sqrt();
        if norm > SEPARATION_NORM || (opts.penalty == 0.0 && current > -1e-9 * n as f64) {
            return Err(Error::Separation {
                iterations: iter + 1,
                norm,
            });
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{std_normal_cdf, RngStream};

    #[test]
    fn symmetric_data_has_zero_intercept() {
        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        // mirror image under (x, label) -> (-x, !label)
        for &x in &xs {
            for l in [x > 0.0, x > 0.0, x < 0.0] {
                rows.push(vec![x]);
                labels.push(l);
            }
        }
        let x = with_intercept(&Matrix::from_rows(&rows).unwrap());
        let fit = probit_fit(&x, &labels, &ProbitOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-6, "{:?}", fit.coefficients);
    }

    #[test]
    fn large_sample_consistency() {
        let mut rng = RngStream::new(42, 0);
        let n = 50_000;
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.bernoulli(0.5) as u8 as f64;
            let p = std_normal_cdf(0.5 + x).unwrap();
            rows.push(vec![x]);
            labels.push(rng.bernoulli(p));
        }
        let x = with_intercept(&Matrix::from_rows(&rows).unwrap());
        let fit = probit_fit(&x, &labels, &ProbitOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 0.5).abs() < 0.05, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] - 1.0).abs() < 0.05, "{:?}", fit.coefficients);
        assert!(fit.grad_norm < 1e-8);
    }

    #[test]
    fn optimum_beats_grid() {
        let mut rng = RngStream::new(7, 0);
        let n = 400;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal()]).collect();
        let labels: Vec<bool> = rows
            .iter()
            .map(|r| rng.bernoulli(std_normal_cdf(-0.3 + 0.8 * r[0]).unwrap()))
            .collect();
        let x = with_intercept(&Matrix::from_rows(&rows).unwrap());
        let fit = probit_fit(&x, &labels, &ProbitOptions::default()).unwrap();
        let best = probit_log_likelihood(&x, &labels, &fit.coefficients);
        assert!((best - fit.log_likelihood).abs() < 1e-9);
        for i in -10..=10 {
            for j in -10..=10 {
                let b = [
                    fit.coefficients[0] + 0.02 * i as f64,
                    fit.coefficients[1] + 0.02 * j as f64,
                ];
                assert!(probit_log_likelihood(&x, &labels, &b) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn separation_is_reported() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] > 0.0).collect();
        let x = with_intercept(&Matrix::from_rows(&rows).unwrap());
        let err = probit_fit(&x, &labels, &ProbitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
        assert!(err.to_string().contains("ridge"));
        let penalised = ProbitOptions {
            penalty: 1.0,
            ..Default::default()
        };
        assert!(probit_fit(&x, &labels, &penalised).is_ok());
        let constant = vec![true; 20];
        assert!(probit_fit(&x, &constant, &ProbitOptions::default()).is_err());
        assert!(probit_fit(&x, &constant, &penalised).is_ok());
    }
}

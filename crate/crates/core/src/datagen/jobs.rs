use serde::{Deserialize, Serialize};

use super::probit::{probit_fit, with_intercept, ProbitOptions};
use super::Dataset;
use crate::effects::EffectReport;
use crate::error::{Error, Result};
use crate::numkit::{dot, streams, Matrix, RngStream};

/// Zero-effect simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobsSimConfig {
    /// Strength of selection into the mediator.
    pub eta: f64,
    /// Target share of rows with `M' >= threshold`.
    pub mediated_fraction: f64,
    pub n: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for JobsSimConfig {
    fn default() -> Self {
        JobsSimConfig {
            eta: 1.0,
            mediated_fraction: 0.5,
            n: 500,
            threshold: 3.0,
            seed: 0,
        }
    }
}

impl JobsSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !self.eta.is_finite() || !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("eta and threshold must be finite".into()));
        }
        if !(self.mediated_fraction > 0.0 && self.mediated_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mediated_fraction must lie in (0, 1), got {}",
                self.mediated_fraction
            )));
        }
        Ok(())
    }
}

/// Allowed gap between the achieved and requested mediated share.
pub const FRACTION_TOLERANCE: f64 = 0.005;

/// Simulated data with its all-zero truth and the fitted nuisance values.
#[derive(Clone, Debug)]
pub struct JobsSimulation {
    /// `x0 = z0 = M'`; covariates are the resampled `W'`.
    pub dataset: Dataset,
    pub truth: EffectReport,
    pub alpha: f64,
    pub achieved_fraction: f64,
    /// Treatment probit, intercept first.
    pub beta: Vec<f64>,
    /// Mediator probit coefficient on the treatment.
    pub gamma: f64,
    /// Mediator probit on the covariates, intercept first.
    pub delta: Vec<f64>,
}

/// Stand-in for the job-search trial: six covariates (age, sex, race,
/// economic hardship, baseline depression, education), a randomised-looking
/// treatment, a 1–5 job-search efficacy score and a 1–5 depression outcome.
pub fn gen_jobs_base(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let m = 6;
    let mut rng = RngStream::new(seed, streams::DATA);
    let mut w = Matrix::zeros(n, m);
    let mut t = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = [
            rng.normal(),
            rng.bernoulli(0.54) as u8 as f64,
            rng.bernoulli(0.2) as u8 as f64,
            rng.normal(),
            rng.normal(),
            rng.normal(),
        ];
        w.row_mut(i).copy_from_slice(&row);
        let ti = (0.45 + 0.1 * row[3] - 0.05 * row[0] + rng.normal() > 0.0) as u8;
        let zi = (3.6 + 0.15 * ti as f64 + 0.1 * row[0] - 0.15 * row[4] + 0.1 * row[5]
            + 0.7 * rng.normal())
        .clamp(1.0, 5.0);
        let yi = (1.75 + 0.3 * row[4] - 0.1 * (zi - 3.6) + 0.05 * row[3] + 0.5 * rng.normal())
            .clamp(1.0, 5.0);
        t.push(ti);
        z.push(zi);
        y.push(yi);
    }
    let zm = Matrix::col_vector(&z);
    Dataset::new(t, y, Some(w), zm.clone(), Some(zm))
}

/// Resamples treated, mediated rows and re-simulates treatment and mediator
/// so that every causal effect is zero by construction.
pub fn simulate_jobs(base: &Dataset, cfg: &JobsSimConfig) -> Result<JobsSimulation> {
    cfg.validate()?;
    let w = base
        .w()
        .ok_or_else(|| Error::Data("jobs simulation needs covariate columns w0..".into()))?;
    let z = base
        .z_true()
        .filter(|z| z.cols() == 1)
        .ok_or_else(|| Error::Data("jobs simulation needs exactly one mediator column z0".into()))?
        .col(0);
    let n = base.n();
    let opts = ProbitOptions::default();

    // step 1: treatment and (thresholded) mediator probits
    let w1 = with_intercept(w);
    let t_labels: Vec<bool> = base.t().iter().map(|&t| t == 1).collect();
    let beta = probit_fit(&w1, &t_labels, &opts)?.coefficients;
    let t_col = Matrix::col_vector(&base.t().iter().map(|&t| t as f64).collect::<Vec<_>>());
    let tw1 = with_intercept(&Matrix::hstack(&[&t_col, w])?);
    // step 2: threshold the mediator
    let z_bin: Vec<bool> = z.iter().map(|&v| v >= cfg.threshold).collect();
    let med = probit_fit(&tw1, &z_bin, &opts)?.coefficients;
    let gamma = med[1];
    let delta: Vec<f64> = std::iter::once(med[0]).chain(med[2..].iter().copied()).collect();

    // step 3: keep treated, mediated rows
    let pool: Vec<usize> = (0..n).filter(|&i| t_labels[i] && z_bin[i]).collect();
    if pool.is_empty() {
        return Err(Error::Data("no treated and mediated rows remain after thresholding".into()));
    }

    // step 4: bootstrap
    let mut boot = RngStream::new(cfg.seed, streams::BOOTSTRAP);
    let idx: Vec<usize> = (0..cfg.n).map(|_| pool[boot.index(pool.len())]).collect();
    let ws = w.select_rows(&idx);
    let ys: Vec<f64> = idx.iter().map(|&i| base.y()[i]).collect();

    // step 5: pseudo treatment and mediator
    let mut rng = RngStream::new(cfg.seed, streams::DATA);
    let mut t_new = Vec::with_capacity(cfg.n);
    let mut selection = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let wi = ws.row(i);
        let lin_t = beta[0] + dot(&beta[1..], wi);
        let u = rng.normal();
        let v = rng.normal();
        let ti = (lin_t + u > 0.0) as u8;
        let lin_m = ti as f64 * gamma + delta[0] + dot(&delta[1..], wi);
        t_new.push(ti);
        selection.push(cfg.eta * lin_m + v);
    }
    let (alpha, achieved) = calibrate_offset(&selection, cfg.threshold, cfg.mediated_fraction)?;
    let m_new: Vec<f64> = selection.iter().map(|s| s + alpha).collect();
    let mm = Matrix::col_vector(&m_new);
    Ok(JobsSimulation {
        dataset: Dataset::new(t_new, ys, Some(ws), mm.clone(), Some(mm))?,
        truth: EffectReport::zero(),
        alpha,
        achieved_fraction: achieved,
        beta,
        gamma,
        delta,
    })
}

fn fraction_at_least(values: &[f64], offset: f64, threshold: f64) -> f64 {
    values.iter().filter(|&&v| v + offset >= threshold).count() as f64 / values.len() as f64
}

/// Bisection on `α` so that the share of `values + α >= threshold` is within
/// [`FRACTION_TOLERANCE`] of `target`.
fn calibrate_offset(values: &[f64], threshold: f64, target: f64) -> Result<(f64, f64)> {
    let lo_v = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_v = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = threshold - hi_v - 1.0;
    let mut hi = threshold - lo_v + 1.0;
    let (f_lo, f_hi) = (fraction_at_least(values, lo, threshold), fraction_at_least(values, hi, threshold));
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::Data(format!(
            "offset bisection does not bracket target {target} ({f_lo}..{f_hi})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = fraction_at_least(values, mid, threshold);
        if (f - target).abs() <= FRACTION_TOLERANCE {
            return Ok((mid, f));
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: 200,
        grad_norm: (fraction_at_least(values, 0.5 * (lo + hi), threshold) - target).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Dataset {
        gen_jobs_base(899, 11).unwrap()
    }

    #[test]
    fn truth_is_identically_zero() {
        let sim = simulate_jobs(&base(), &JobsSimConfig::default()).unwrap();
        assert_eq!(sim.truth, EffectReport::zero());
        assert_eq!(sim.dataset.n(), 500);
        assert_eq!(sim.dataset.cov_dim(), 6);
        assert_eq!(sim.dataset.x().col(0), sim.dataset.z_true().unwrap().col(0));
    }

    #[test]
    fn mediated_fraction_is_calibrated() {
        for (frac, n) in [(0.10, 500), (0.50, 1000)] {
            let cfg = JobsSimConfig {
                eta: 10.0,
                mediated_fraction: frac,
                n,
                seed: 3,
                ..Default::default()
            };
            let sim = simulate_jobs(&base(), &cfg).unwrap();
            let m = sim.dataset.x().col(0);
            let got = m.iter().filter(|&&v| v >= 3.0).count() as f64 / m.len() as f64;
            assert!((got - frac).abs() <= 0.005, "{got} vs {frac}");
            assert_eq!(got, sim.achieved_fraction);
        }
    }

    /// With no selection the mediator is `α + V`, unrelated to treatment.
    #[test]
    fn zero_eta_mediator_ignores_treatment() {
        let cfg = JobsSimConfig {
            eta: 0.0,
            n: 4000,
            seed: 9,
            ..Default::default()
        };
        let sim = simulate_jobs(&base(), &cfg).unwrap();
        let ds = &sim.dataset;
        let m = ds.x().col(0);
        let mean = |arm: u8| {
            let v: Vec<f64> = (0..ds.n()).filter(|&i| ds.t()[i] == arm).map(|i| m[i]).collect();
            (v.iter().sum::<f64>() / v.len() as f64, v.len() as f64)
        };
        let ((m0, n0), (m1, n1)) = (mean(0), mean(1));
        let se = (1.0 / n0 + 1.0 / n1).sqrt();
        assert!((m1 - m0).abs() < 4.0 * se, "{m0} {m1}");
        let centred: Vec<f64> = m.iter().map(|v| v - sim.alpha).collect();
        let var = centred.iter().map(|v| v * v).sum::<f64>() / centred.len() as f64;
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = JobsSimConfig::default();
        let a = simulate_jobs(&base(), &cfg).unwrap().dataset;
        let b = simulate_jobs(&base(), &cfg).unwrap().dataset;
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        assert!(simulate_jobs(&base(), &JobsSimConfig { n: 0, ..cfg.clone() }).is_err());
        assert!(simulate_jobs(&base().without_truth(), &cfg).is_err());
        let high = JobsSimConfig {
            threshold: 100.0,
            ..cfg
        };
        assert!(simulate_jobs(&base(), &high).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::effects::EffectReport;
use crate::error::{Error, Result};
use crate::gradnet::{Activation, MlpParams};
use crate::numkit::{dot, streams, Matrix, RngStream};

fn ones_times(v: f64, n: usize) -> Vec<f64> {
    vec![v; n]
}

/// Freshly initialised one-hidden-layer tanh network standing in for an
/// untrained nonlinear map.
pub(crate) fn untrained_net(sizes: &[usize], seed: u64, child: u64) -> MlpParams {
    let mut rng = RngStream::new(seed, streams::DATA_NET).substream(child);
    MlpParams::init(sizes, Activation::Tanh, &mut rng)
}

/// Treatment-only synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfigA {
    pub n: usize,
    pub x_dim: usize,
    pub latent_dim: usize,
    /// Treatment probability.
    pub p: f64,
    pub sigma_z: f64,
    /// Mediator shift under treatment.
    pub c: f64,
    pub mu_t: f64,
    /// Outcome weights on `z`; `0.5·1` when absent.
    pub mu_z: Option<Vec<f64>>,
    pub noise_x: f64,
    pub noise_y: f64,
    /// Hidden width of the feature map `f`.
    pub net_width: usize,
    pub seed: u64,
    /// Seed of the feature map; shared across replicates unless changed.
    pub net_seed: u64,
}

impl Default for SynthConfigA {
    fn default() -> Self {
        SynthConfigA {
            n: 6000,
            x_dim: 100,
            latent_dim: 2,
            p: 0.5,
            sigma_z: 0.7,
            c: 2.0,
            mu_t: 1.0,
            mu_z: None,
            noise_x: 0.1,
            noise_y: 0.1,
            net_width: 32,
            seed: 0,
            net_seed: 1234,
        }
    }
}

fn check_common(n: usize, x_dim: usize, d: usize, mu_z: &[f64], scales: &[(&str, f64)]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if d == 0 || x_dim < 5 * d {
        return Err(Error::InvalidConfig(format!(
            "need d >= 1 and D >= 5d, got D = {x_dim}, d = {d}"
        )));
    }
    if mu_z.len() != d {
        return Err(Error::dim("mu_z", d, mu_z.len()));
    }
    for (name, v) in scales {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
        }
    }
    Ok(())
}

impl SynthConfigA {
    pub fn mu_z(&self) -> Vec<f64> {
        self.mu_z.clone().unwrap_or_else(|| ones_times(0.5, self.latent_dim))
    }

    pub fn validate(&self) -> Result<()> {
        check_common(
            self.n,
            self.x_dim,
            self.latent_dim,
            &self.mu_z(),
            &[("sigma_z", self.sigma_z), ("noise_x", self.noise_x), ("noise_y", self.noise_y)],
        )?;
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidConfig(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.c.is_finite() && self.mu_t.is_finite()) || self.net_width == 0 {
            return Err(Error::InvalidConfig("c, mu_t must be finite and net_width positive".into()));
        }
        Ok(())
    }

    /// `ACME = c·Σμ_z`, `ADE = μ_t` in both arms.
    pub fn truth(&self) -> EffectReport {
        EffectReport::exact(self.c * self.mu_z().iter().sum::<f64>(), self.mu_t)
    }
}

/// Draws the case-a benchmark and its exact effects.
pub fn gen_synthetic_a(cfg: &SynthConfigA) -> Result<(Dataset, EffectReport)> {
    cfg.validate()?;
    let (n, dx, d) = (cfg.n, cfg.x_dim, cfg.latent_dim);
    let f = untrained_net(&[d, cfg.net_width, dx], cfg.net_seed, 0);
    let mu_z = cfg.mu_z();
    let mut rng = RngStream::new(cfg.seed, streams::DATA);

    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Matrix::zeros(n, d);
    let mut x = Matrix::zeros(n, dx);
    for i in 0..n {
        let ti = rng.bernoulli(cfg.p) as u8;
        let shift = cfg.c * ti as f64;
        for v in z.row_mut(i) {
            *v = cfg.sigma_z * rng.normal() + shift;
        }
        let fx = f.forward(z.row(i))?;
        for (xv, fv) in x.row_mut(i).iter_mut().zip(fx) {
            *xv = fv + cfg.noise_x * rng.normal();
        }
        y.push(cfg.mu_t * ti as f64 + dot(&mu_z, z.row(i)) + cfg.noise_y * rng.normal());
        t.push(ti);
    }
    Ok((Dataset::new(t, y, None, x, Some(z))?, cfg.truth()))
}

/// Synthetic benchmark with observed confounders `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfigB {
    pub n: usize,
    pub x_dim: usize,
    pub latent_dim: usize,
    pub cov_dim: usize,
    pub sigma_w: f64,
    pub sigma_z: f64,
    pub c1: f64,
    pub c2: f64,
    pub mu_t: f64,
    pub mu_z: Option<Vec<f64>>,
    /// Treatment-propensity weights; `0.5·1` when absent.
    pub mu_s: Option<Vec<f64>>,
    /// Outcome weights on `w`; `0.5·1` when absent.
    pub mu_w: Option<Vec<f64>>,
    pub noise_x: f64,
    pub noise_y: f64,
    pub net_width: usize,
    pub seed: u64,
    /// Seed of `f1` (covariates → mediator) and `f2` (mediator → features).
    pub net_seed: u64,
}

impl Default for SynthConfigB {
    fn default() -> Self {
        SynthConfigB {
            n: 6000,
            x_dim: 100,
            latent_dim: 2,
            cov_dim: 2,
            sigma_w: 1.0,
            sigma_z: 0.7,
            c1: 2.0,
            c2: 0.5,
            mu_t: 1.0,
            mu_z: None,
            mu_s: None,
            mu_w: None,
            noise_x: 0.1,
            noise_y: 0.1,
            net_width: 32,
            seed: 0,
            net_seed: 1234,
        }
    }
}

impl SynthConfigB {
    pub fn mu_z(&self) -> Vec<f64> {
        self.mu_z.clone().unwrap_or_else(|| ones_times(0.5, self.latent_dim))
    }

    pub fn mu_s(&self) -> Vec<f64> {
        self.mu_s.clone().unwrap_or_else(|| ones_times(0.5, self.cov_dim))
    }

    pub fn mu_w(&self) -> Vec<f64> {
        self.mu_w.clone().unwrap_or_else(|| ones_times(0.5, self.cov_dim))
    }

    pub fn validate(&self) -> Result<()> {
        check_common(
            self.n,
            self.x_dim,
            self.latent_dim,
            &self.mu_z(),
            &[
                ("sigma_w", self.sigma_w),
                ("sigma_z", self.sigma_z),
                ("noise_x", self.noise_x),
                ("noise_y", self.noise_y),
            ],
        )?;
        if self.cov_dim == 0 {
            return Err(Error::InvalidConfig("case (b) needs cov_dim >= 1".into()));
        }
        for (name, v) in [("mu_s", self.mu_s()), ("mu_w", self.mu_w())] {
            if v.len() != self.cov_dim {
                return Err(Error::dim(name, self.cov_dim, v.len()));
            }
        }
        if self.net_width == 0 {
            return Err(Error::InvalidConfig("net_width must be positive".into()));
        }
        Ok(())
    }

    /// `ACME = c1·Σμ_z`, `ADE = μ_t`; the covariate terms cancel in both
    /// contrasts.
    pub fn truth(&self) -> EffectReport {
        EffectReport::exact(self.c1 * self.mu_z().iter().sum::<f64>(), self.mu_t)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws the case-b benchmark and its exact effects.
pub fn gen_synthetic_b(cfg: &SynthConfigB) -> Result<(Dataset, EffectReport)> {
    cfg.validate()?;
    let (n, dx, d, m) = (cfg.n, cfg.x_dim, cfg.latent_dim, cfg.cov_dim);
    let f1 = untrained_net(&[m, cfg.net_width, d], cfg.net_seed, 1);
    let f2 = untrained_net(&[d, cfg.net_width, dx], cfg.net_seed, 2);
    let (mu_z, mu_s, mu_w) = (cfg.mu_z(), cfg.mu_s(), cfg.mu_w());
    let mut rng = RngStream::new(cfg.seed, streams::DATA);

    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Matrix::zeros(n, m);
    let mut z = Matrix::zeros(n, d);
    let mut x = Matrix::zeros(n, dx);
    for i in 0..n {
        for v in w.row_mut(i) {
            *v = cfg.sigma_w * rng.normal();
        }
        let ti = rng.bernoulli(sigmoid(dot(&mu_s, w.row(i)))) as u8;
        let g = f1.forward(w.row(i))?;
        let shift = cfg.c1 * ti as f64;
        for (v, gk) in z.row_mut(i).iter_mut().zip(g) {
            *v = cfg.sigma_z * rng.normal() + shift + cfg.c2 * gk;
        }
        let fx = f2.forward(z.row(i))?;
        for (xv, fv) in x.row_mut(i).iter_mut().zip(fx) {
            *xv = fv + cfg.noise_x * rng.normal();
        }
        y.push(
            cfg.mu_t * ti as f64
                + dot(&mu_z, z.row(i))
                + dot(&mu_w, w.row(i))
                + cfg.noise_y * rng.normal(),
        );
        t.push(ti);
    }
    Ok((Dataset::new(t, y, Some(w), x, Some(z))?, cfg.truth()))
}

use serde::{Deserialize, Serialize};

use super::synth::untrained_net;
use super::Dataset;
use crate::effects::EffectReport;
use crate::error::{Error, Result};
use crate::numkit::{dot, pca_fit, streams, Matrix, RngStream};

/// Spectral-feature surrogate: `x` has low-rank Gaussian structure, the
/// mediator is built from its leading principal component scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighDimConfig {
    pub n: usize,
    pub x_dim: usize,
    pub latent_dim: usize,
    /// Number of latent factors behind `x`.
    pub factors: usize,
    /// Factor `k` has standard deviation `factor_decay^k`.
    pub factor_decay: f64,
    pub noise_x: f64,
    pub p: f64,
    /// Adds a binary genotype covariate (case b).
    pub covariate: bool,
    pub mu_t: f64,
    /// Outcome weights on `z`; all ones when absent.
    pub mu_z: Option<Vec<f64>>,
    pub mu_w: f64,
    pub noise_y: f64,
    /// Regenerate `x` from `z` through a strongly nonlinear map.
    pub entangled: bool,
    pub entangle_width: usize,
    /// Multiplier on the hidden-layer weights of the entangling map.
    pub entangle_gain: f64,
    pub seed: u64,
    pub net_seed: u64,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        HighDimConfig {
            n: 2000,
            x_dim: 616,
            latent_dim: 2,
            factors: 10,
            factor_decay: 0.85,
            noise_x: 0.05,
            p: 0.5,
            covariate: false,
            mu_t: 1.0,
            mu_z: None,
            mu_w: 0.5,
            noise_y: 0.1,
            entangled: false,
            entangle_width: 64,
            entangle_gain: 2.5,
            seed: 0,
            net_seed: 4321,
        }
    }
}

impl HighDimConfig {
    pub fn mu_z(&self) -> Vec<f64> {
        self.mu_z.clone().unwrap_or_else(|| vec![1.0; self.latent_dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.latent_dim == 0 || self.x_dim < self.latent_dim {
            return Err(Error::InvalidConfig(format!(
                "need n >= 2 and 1 <= d <= D, got n = {}, D = {}, d = {}",
                self.n, self.x_dim, self.latent_dim
            )));
        }
        if self.mu_z().len() != self.latent_dim {
            return Err(Error::dim("mu_z", self.latent_dim, self.mu_z().len()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidConfig("p must lie in (0, 1)".into()));
        }
        if self.factors == 0 || self.entangle_width == 0 {
            return Err(Error::InvalidConfig("factors and entangle_width must be positive".into()));
        }
        Ok(())
    }

    /// Unit treatment shift on every mediator coordinate:
    /// `ACME = Σμ_z`, `ADE = μ_t`.
    pub fn truth(&self) -> EffectReport {
        EffectReport::exact(self.mu_z().iter().sum(), self.mu_t)
    }
}

/// Draws the surrogate. Fails with a rank error when `d` exceeds the
/// numerical rank of the base features.
pub fn gen_highdim_surrogate(cfg: &HighDimConfig) -> Result<(Dataset, EffectReport)> {
    cfg.validate()?;
    let (n, dx, d, r) = (cfg.n, cfg.x_dim, cfg.latent_dim, cfg.factors);

    // fixed loadings play the role of the recording montage
    let mut net_rng = RngStream::new(cfg.net_seed, streams::DATA_NET).substream(10);
    let scale = 1.0 / (dx as f64).sqrt();
    let loadings =
        Matrix::from_vec(r, dx, (0..r * dx).map(|_| scale * net_rng.normal()).collect())?;

    let mut rng = RngStream::new(cfg.seed, streams::DATA);
    let mut factors = Matrix::zeros(n, r);
    for i in 0..n {
        for (k, v) in factors.row_mut(i).iter_mut().enumerate() {
            *v = cfg.factor_decay.powi(k as i32) * rng.normal();
        }
    }
    let mut x0 = factors.matmul(&loadings)?;
    for v in x0.data_mut() {
        *v += cfg.noise_x * rng.normal();
    }
    let s = pca_fit(&x0, d)?.project(&x0)?;

    let t: Vec<u8> = (0..n).map(|_| rng.bernoulli(cfg.p) as u8).collect();
    let w: Option<Matrix> = cfg.covariate.then(|| {
        Matrix::col_vector(&(0..n).map(|_| rng.bernoulli(0.5) as u8 as f64).collect::<Vec<_>>())
    });
    let f = untrained_net(&[1, 32, d], cfg.net_seed, 11);

    let mut z = s;
    for i in 0..n {
        let shift = t[i] as f64;
        let fw = match &w {
            Some(w) => f.forward(w.row(i))?,
            None => vec![0.0; d],
        };
        for (v, fk) in z.row_mut(i).iter_mut().zip(fw) {
            *v += shift + fk;
        }
    }

    let mu_z = cfg.mu_z();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let wv = w.as_ref().map_or(0.0, |w| w.get(i, 0));
            cfg.mu_t * t[i] as f64 + dot(&mu_z, z.row(i)) + cfg.mu_w * wv + cfg.noise_y * rng.normal()
        })
        .collect();

    let x = if cfg.entangled {
        let mut g = untrained_net(&[d, cfg.entangle_width, cfg.entangle_width, dx], cfg.net_seed, 12);
        let last = g.layers().len() - 1;
        for layer in &mut g.layers_mut()[..last] {
            layer.weight = layer.weight.map(|v| v * cfg.entangle_gain);
        }
        let mut x = g.forward_batch(&z)?;
        for v in x.data_mut() {
            *v += cfg.noise_x * rng.normal();
        }
        x
    } else {
        x0
    };
    Ok((Dataset::new(t, y, w, x, Some(z))?, cfg.truth()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::symmetric_eigen;

    fn small() -> HighDimConfig {
        HighDimConfig {
            n: 300,
            x_dim: 40,
            ..Default::default()
        }
    }

    #[test]
    fn closed_form_truth() {
        let t = HighDimConfig {
            mu_z: Some(vec![0.0, 0.0]),
            ..Default::default()
        }
        .truth();
        assert_eq!(t.acme_t1, 0.0);
        let t = HighDimConfig::default().truth();
        assert_eq!((t.acme_t1, t.ade_t0, t.ate), (2.0, 1.0, 3.0));
    }

    /// Untreated mediator equals the leading PCA scores, whose variance
    /// matches the top covariance eigenvalues.
    #[test]
    fn mediator_is_shifted_pca_scores() {
        let cfg = small();
        let (ds, _) = gen_highdim_surrogate(&cfg).unwrap();
        let x = ds.x();
        let n = x.rows();
        let means = x.col_means();
        let mut xc = x.clone();
        for i in 0..n {
            for (v, m) in xc.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        let cov = xc.t_matmul(&xc).unwrap().map(|v| v / (n - 1) as f64);
        let eig = symmetric_eigen(&cov).unwrap();
        let z = ds.z_true().unwrap();
        for k in 0..2 {
            let s: Vec<f64> = (0..n).map(|i| z.get(i, k) - ds.t()[i] as f64).collect();
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - eig.values[k]).abs() < 1e-8 * eig.values[k].max(1.0));
        }
    }

    #[test]
    fn covariate_and_entangled_variants() {
        let cfg = HighDimConfig {
            covariate: true,
            entangled: true,
            ..small()
        };
        let (ds, _) = gen_highdim_surrogate(&cfg).unwrap();
        assert_eq!(ds.cov_dim(), 1);
        assert!(ds.w().unwrap().data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(ds.x_dim(), 40);
        let (again, _) = gen_highdim_surrogate(&cfg).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn rank_deficient_request_fails() {
        let cfg = HighDimConfig {
            factors: 1,
            noise_x: 0.0,
            ..small()
        };
        assert!(matches!(
            gen_highdim_surrogate(&cfg),
            Err(Error::DegenerateRank(_))
        ));
    }
}

//! Minibatch Adam fitting of [`ImavaeModel`] with a linear KL ramp.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gradnet::AdamState;
use crate::imavae::{
    objective_and_grad, total_loss, ArchConfig, BatchInputs, ImavaeModel, InputScaling, LossTerms,
    ModelDims, ObjectiveWeights,
};
use crate::numkit::{streams, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight on the reconstruction error.
    pub alpha: f64,
    /// Weight on the ELBO.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub anneal_epochs: usize,
    /// Latent draws per row in each batch.
    pub mc_train_draws: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 256,
            anneal_epochs: 50,
            mc_train_draws: 1,
            seed: 0,
            latent_dim: 2,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 || self.batch_size == 0 || self.mc_train_draws == 0 {
            return bad("epochs, batch_size and mc_train_draws must be at least 1".into());
        }
        if self.anneal_epochs > self.epochs {
            return bad(format!(
                "anneal_epochs ({}) exceeds epochs ({})",
                self.anneal_epochs, self.epochs
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return bad("alpha and beta must be finite".into());
        }
        if self.latent_dim == 0 || self.arch.hidden_width == 0 {
            return bad("latent_dim and hidden_width must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// KL multiplier for `epoch`: a linear ramp from 0 reaching 1 at
/// `anneal_epochs`.
pub fn anneal_weight(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.anneal_epochs == 0 || epoch >= cfg.anneal_epochs {
        1.0
    } else {
        epoch as f64 / cfg.anneal_epochs as f64
    }
}

/// Row-weighted epoch means of the unannealed loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub elbo: f64,
    pub pred: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
    /// SHA-256 of the serialized model, lowercase hex.
    pub model_checksum: String,
}

impl TrainReport {
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<train report>", e);
        writeln!(out, "epoch\trecon\telbo\tpred\ttotal").map_err(io)?;
        for r in &self.epochs {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", r.epoch, r.recon, r.elbo, r.pred, r.total)
                .map_err(io)?;
        }
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Mean total loss over the first and last `⌈epochs / 10⌉` epochs.
    pub fn head_tail_means(&self) -> (f64, f64) {
        let n = self.epochs.len();
        let k = n.div_ceil(10).max(1);
        let mean = |s: &[EpochRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
        (mean(&self.epochs[..k]), mean(&self.epochs[n - k..]))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn repeat_rows(m: &Matrix, times: usize) -> Matrix {
    if times == 1 {
        return m.clone();
    }
    let idx: Vec<usize> = (0..times).flat_map(|_| 0..m.rows()).collect();
    m.select_rows(&idx)
}

/// Fits a model to `ds`. The result depends only on the dataset and `cfg`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(ImavaeModel, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let started = Instant::now();
    let n = ds.n();
    let dims = ModelDims::new(ds.x_dim(), cfg.latent_dim, ds.cov_dim(), ds.case())?;
    let mut model = ImavaeModel::new(dims, &cfg.arch, &mut RngStream::new(cfg.seed, streams::INIT));
    model.scaling = InputScaling::fit(ds.x(), ds.w());
    model.predictor.intercept = ds.y().iter().sum::<f64>() / n as f64;
    let xs = model.scale_x_matrix(ds.x())?;
    let us = model.aux_matrix(ds.t(), ds.w())?;

    let mut shuffle = RngStream::new(cfg.seed, streams::SHUFFLE);
    let mut noise_rng = RngStream::new(cfg.seed, streams::TRAIN_NOISE);
    let mut adam = AdamState::new(&model, cfg.learning_rate);
    let batch_size = cfg.batch_size.min(n);
    let d = cfg.latent_dim;
    let draws = cfg.mc_train_draws;
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let weights = ObjectiveWeights {
            alpha: cfg.alpha,
            beta: cfg.beta,
            kl_weight: anneal_weight(epoch, cfg),
        };
        if batch_size < n {
            shuffle.shuffle(&mut order);
        }
        let mut sums = LossTerms::default();
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let x = repeat_rows(&xs.select_rows(idx), draws);
            let u = repeat_rows(&us.select_rows(idx), draws);
            let y: Vec<f64> = (0..draws).flat_map(|_| idx.iter().map(|&i| ds.y()[i])).collect();
            let rows = x.rows();
            let noise = Matrix::from_vec(rows, d, noise_rng.normal_vec(rows * d))?;
            let batch = BatchInputs {
                x: &x,
                u: &u,
                y: &y,
                noise: &noise,
            };
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch: b,
                detail,
            };
            let (value, terms, grads) = match objective_and_grad(&model, &batch, weights) {
                Ok(r) => r,
                Err(Error::NonFinite { context }) => return Err(diverged(context)),
                Err(e) => return Err(e),
            };
            if !value.is_finite() {
                return Err(diverged(format!("objective = {value}")));
            }
            adam.step_in_place(&mut model, &grads)
                .map_err(|e| diverged(e.to_string()))?;
            let share = idx.len() as f64;
            sums.recon += share * terms.recon;
            sums.elbo += share * terms.elbo;
            sums.pred += share * terms.pred;
        }
        let terms = LossTerms {
            recon: sums.recon / n as f64,
            elbo: sums.elbo / n as f64,
            pred: sums.pred / n as f64,
        };
        records.push(EpochRecord {
            epoch,
            recon: terms.recon,
            elbo: terms.elbo,
            pred: terms.pred,
            total: total_loss(&terms, cfg.alpha, cfg.beta),
        });
    }
    let checksum = sha256_hex(model.to_json()?.as_bytes());
    Ok((
        model,
        TrainReport {
            epochs: records,
            wall_time_secs: started.elapsed().as_secs_f64(),
            model_checksum: checksum,
        },
    ))
}

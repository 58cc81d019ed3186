use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradnet::{Activation, Differentiable, Gradients, MlpParams, MlpVars, Parameterized, Tape, Var};
use crate::numkit::{dot, Matrix, RngStream};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Which causal graph the model is built for: treatment only (`A`) or
/// treatment plus observed covariates (`B`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Feature dimension `D`.
    pub x_dim: usize,
    /// Latent mediator dimension `d`.
    pub latent_dim: usize,
    /// Covariate dimension `m` (zero in case a).
    pub cov_dim: usize,
    pub case: CaseTag,
}

impl ModelDims {
    pub fn new(x_dim: usize, latent_dim: usize, cov_dim: usize, case: CaseTag) -> Result<Self> {
        if x_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "feature and latent dimensions must be positive".into(),
            ));
        }
        match (case, cov_dim) {
            (CaseTag::B, 0) => Err(Error::InvalidConfig(
                "case (b) needs at least one covariate".into(),
            )),
            (CaseTag::A, m) if m > 0 => Err(Error::InvalidConfig(format!(
                "case (a) takes no covariates, got {m}"
            ))),
            _ => Ok(ModelDims {
                x_dim,
                latent_dim,
                cov_dim,
                case,
            }),
        }
    }

    /// Width of the auxiliary vector `u`: `1` in case a, `m + 1` in case b.
    pub fn aux_dim(&self) -> usize {
        match self.case {
            CaseTag::A => 1,
            CaseTag::B => self.cov_dim + 1,
        }
    }
}

/// Conditioning input: the treatment, plus covariates in case b.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxVar {
    t: u8,
    w: Option<Vec<f64>>,
}

impl AuxVar {
    pub fn new(t: u8, w: Option<Vec<f64>>) -> Result<Self> {
        if t > 1 {
            return Err(Error::InvalidConfig(format!("treatment must be 0 or 1, got {t}")));
        }
        Ok(AuxVar { t, w })
    }

    pub fn treatment(t: u8) -> Result<Self> {
        Self::new(t, None)
    }

    pub fn t(&self) -> u8 {
        self.t
    }

    pub fn w(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    pub fn with_t(&self, t: u8) -> AuxVar {
        AuxVar {
            t: t.min(1),
            w: self.w.clone(),
        }
    }

    /// Raw `u = (w, t)` for case b, `u = t` for case a.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.w.clone().unwrap_or_default();
        v.push(self.t as f64);
        v
    }

    fn check(&self, dims: &ModelDims) -> Result<()> {
        match (dims.case, &self.w) {
            (CaseTag::A, None) => Ok(()),
            (CaseTag::A, Some(_)) => Err(Error::InvalidConfig(
                "case (a) model given covariates".into(),
            )),
            (CaseTag::B, None) => Err(Error::InvalidConfig(
                "case (b) model needs covariates".into(),
            )),
            (CaseTag::B, Some(w)) if w.len() != dims.cov_dim => {
                Err(Error::dim("covariates", dims.cov_dim, w.len()))
            }
            _ => Ok(()),
        }
    }
}

/// Diagonal Gaussian in mean / log-variance form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::dim("DiagGaussian log_var", mean.len(), log_var.len()));
        }
        if !mean.iter().chain(&log_var).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DiagGaussian".into(),
            });
        }
        Ok(DiagGaussian { mean, log_var })
    }

    /// Splits a head output `[mean, log_var]` and clamps the log-variance.
    pub(crate) fn from_head(out: &[f64]) -> Result<Self> {
        let d = out.len() / 2;
        let log_var = out[d..]
            .iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        DiagGaussian::new(out[..d].to_vec(), log_var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| l.exp()).collect()
    }
}

/// `y ≈ intercept + coeffs · (z, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub coeffs: Vec<f64>,
    pub intercept: f64,
}

/// Affine standardisation applied to `x` and `w` before they enter a
/// network. Identity unless fitted to data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub w_shift: Vec<f64>,
    pub w_scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(dims: &ModelDims) -> Self {
        InputScaling {
            x_shift: vec![0.0; dims.x_dim],
            x_scale: vec![1.0; dims.x_dim],
            w_shift: vec![0.0; dims.cov_dim],
            w_scale: vec![1.0; dims.cov_dim],
        }
    }

    /// Column means and standard deviations; constant columns keep scale 1.
    pub fn fit(x: &Matrix, w: Option<&Matrix>) -> Self {
        let (x_shift, x_scale) = column_moments(x);
        let (w_shift, w_scale) = w.map(column_moments).unwrap_or_default();
        InputScaling {
            x_shift,
            x_scale,
            w_shift,
            w_scale,
        }
    }

    fn check(&self, dims: &ModelDims) -> Result<()> {
        for (name, len, want) in [
            ("x_shift", self.x_shift.len(), dims.x_dim),
            ("x_scale", self.x_scale.len(), dims.x_dim),
            ("w_shift", self.w_shift.len(), dims.cov_dim),
            ("w_scale", self.w_scale.len(), dims.cov_dim),
        ] {
            if len != want {
                return Err(Error::dim(format!("scaling {name}"), want, len));
            }
        }
        if self.x_scale.iter().chain(&self.w_scale).any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("scales must be positive and finite".into()));
        }
        Ok(())
    }
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let means = m.col_means();
    let n = m.rows();
    let mut var = vec![0.0; m.cols()];
    for r in 0..n {
        for ((v, x), mu) in var.iter_mut().zip(m.row(r)).zip(&means) {
            *v += (x - mu).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let s = (v / (n.max(2) - 1) as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (means, scale)
}

/// Hidden-layer layout shared by encoder, decoder and prior head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_layers: 2,
            hidden_width: 64,
            activation: Activation::Tanh,
        }
    }
}

impl ArchConfig {
    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(output);
        s
    }
}

/// Encoder, decoder, conditional prior and outcome predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImavaeModel {
    dims: ModelDims,
    /// `(D + dim u) → 2d`
    pub encoder: MlpParams,
    /// `d → D`
    pub decoder: MlpParams,
    /// `dim u → 2d`
    pub prior_head: MlpParams,
    pub predictor: LinearPredictor,
    pub scaling: InputScaling,
}

impl ImavaeModel {
    /// Freshly initialised model (Glorot weights, zero predictor).
    pub fn new(dims: ModelDims, arch: &ArchConfig, rng: &mut RngStream) -> Self {
        let (du, d) = (dims.aux_dim(), dims.latent_dim);
        let encoder = MlpParams::init(&arch.sizes(dims.x_dim + du, 2 * d), arch.activation, rng);
        let decoder = MlpParams::init(&arch.sizes(d, dims.x_dim), arch.activation, rng);
        let prior_head = MlpParams::init(&arch.sizes(du, 2 * d), arch.activation, rng);
        ImavaeModel {
            dims,
            encoder,
            decoder,
            prior_head,
            predictor: LinearPredictor {
                coeffs: vec![0.0; d + du],
                intercept: 0.0,
            },
            scaling: InputScaling::identity(&dims),
        }
    }

    pub fn from_parts(
        dims: ModelDims,
        encoder: MlpParams,
        decoder: MlpParams,
        prior_head: MlpParams,
        predictor: LinearPredictor,
        scaling: InputScaling,
    ) -> Result<Self> {
        let m = ImavaeModel {
            dims,
            encoder,
            decoder,
            prior_head,
            predictor,
            scaling,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = ModelDims::new(
            self.dims.x_dim,
            self.dims.latent_dim,
            self.dims.cov_dim,
            self.dims.case,
        )?;
        let (du, d, dx) = (dims.aux_dim(), dims.latent_dim, dims.x_dim);
        let checks = [
            ("encoder input", self.encoder.input_dim(), dx + du),
            ("encoder output", self.encoder.output_dim(), 2 * d),
            ("decoder input", self.decoder.input_dim(), d),
            ("decoder output", self.decoder.output_dim(), dx),
            ("prior input", self.prior_head.input_dim(), du),
            ("prior output", self.prior_head.output_dim(), 2 * d),
            ("predictor coefficients", self.predictor.coeffs.len(), d + du),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::dim(name, want, got));
            }
        }
        self.scaling.check(&dims)?;
        if !self.is_finite() {
            return Err(Error::NonFinite {
                context: "model parameters".into(),
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn scaled_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.x_dim {
            return Err(Error::dim("feature vector", self.dims.x_dim, x.len()));
        }
        Ok(x.iter()
            .zip(&self.scaling.x_shift)
            .zip(&self.scaling.x_scale)
            .map(|((v, s), k)| (v - s) / k)
            .collect())
    }

    /// Standardised `u` as seen by the networks.
    pub fn aux_input(&self, u: &AuxVar) -> Result<Vec<f64>> {
        u.check(&self.dims)?;
        let mut v: Vec<f64> = u
            .w()
            .unwrap_or_default()
            .iter()
            .zip(&self.scaling.w_shift)
            .zip(&self.scaling.w_scale)
            .map(|((v, s), k)| (v - s) / k)
            .collect();
        v.push(u.t() as f64);
        Ok(v)
    }

    /// Exact input vector fed to the encoder: `(x, u)` after scaling.
    pub fn encoder_input(&self, x: &[f64], u: &AuxVar) -> Result<Vec<f64>> {
        let mut v = self.scaled_x(x)?;
        v.extend(self.aux_input(u)?);
        Ok(v)
    }

    /// Variational posterior `q(z | x, u)`.
    pub fn encode(&self, x: &[f64], u: &AuxVar) -> Result<DiagGaussian> {
        let out = self.encoder.forward(&self.encoder_input(x, u)?)?;
        DiagGaussian::from_head(&out)
    }

    /// Conditional prior `p(z | u)`.
    pub fn prior(&self, u: &AuxVar) -> Result<DiagGaussian> {
        let out = self.prior_head.forward(&self.aux_input(u)?)?;
        DiagGaussian::from_head(&out)
    }

    /// Mean reconstruction of `x` in the original feature units.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dims.latent_dim {
            return Err(Error::dim("latent vector", self.dims.latent_dim, z.len()));
        }
        let out = self.decoder.forward(z)?;
        Ok(out
            .iter()
            .zip(&self.scaling.x_shift)
            .zip(&self.scaling.x_scale)
            .map(|((v, s), k)| v * k + s)
            .collect())
    }

    /// Linear outcome prediction `intercept + coeffs · (z, u)`.
    pub fn predict_y(&self, z: &[f64], u: &AuxVar) -> Result<f64> {
        if z.len() != self.dims.latent_dim {
            return Err(Error::dim("latent vector", self.dims.latent_dim, z.len()));
        }
        let mut input = z.to_vec();
        input.extend(self.aux_input(u)?);
        Ok(self.predictor.intercept + dot(&self.predictor.coeffs, &input))
    }

    /// Standardised aux matrix from raw treatment and covariate columns.
    pub fn aux_matrix(&self, t: &[u8], w: Option<&Matrix>) -> Result<Matrix> {
        let n = t.len();
        let du = self.dims.aux_dim();
        match (self.dims.case, w) {
            (CaseTag::B, None) => {
                return Err(Error::InvalidConfig("case (b) model needs covariates".into()))
            }
            (CaseTag::A, Some(_)) => {
                return Err(Error::InvalidConfig("case (a) model given covariates".into()))
            }
            (CaseTag::B, Some(w)) => {
                if w.rows() != n {
                    return Err(Error::dim("covariate rows", n, w.rows()));
                }
                if w.cols() != self.dims.cov_dim {
                    return Err(Error::dim("covariate columns", self.dims.cov_dim, w.cols()));
                }
            }
            _ => {}
        }
        let mut u = Matrix::zeros(n, du);
        for (r, &tr) in t.iter().enumerate() {
            let row = u.row_mut(r);
            if let Some(w) = w {
                for (j, v) in w.row(r).iter().enumerate() {
                    row[j] = (v - self.scaling.w_shift[j]) / self.scaling.w_scale[j];
                }
            }
            row[du - 1] = tr as f64;
        }
        Ok(u)
    }

    /// Standardised feature matrix.
    pub fn scale_x_matrix(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dims.x_dim {
            return Err(Error::dim("feature columns", self.dims.x_dim, x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, s), k) in out
                .row_mut(r)
                .iter_mut()
                .zip(&self.scaling.x_shift)
                .zip(&self.scaling.x_scale)
            {
                *v = (*v - s) / k;
            }
        }
        Ok(out)
    }

    /// Head outputs for a batch of standardised inputs, split and clamped.
    pub(crate) fn split_head(out: &Matrix) -> (Matrix, Matrix) {
        let d = out.cols() / 2;
        let mean = out.select_cols(0, d);
        let log_var = out
            .select_cols(d, d)
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        (mean, log_var)
    }

    /// Posterior means and log-variances for a batch (standardised inputs).
    pub fn encode_batch(&self, x_scaled: &Matrix, u: &Matrix) -> Result<(Matrix, Matrix)> {
        let input = Matrix::hstack(&[x_scaled, u])?;
        Ok(Self::split_head(&self.encoder.forward_batch(&input)?))
    }

    /// Prior means and log-variances for a batch of standardised `u`.
    pub fn prior_batch(&self, u: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok(Self::split_head(&self.prior_head.forward_batch(u)?))
    }
}

/// Tape handles for every parameter group of an [`ImavaeModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    pub prior_head: MlpVars,
    pub pred_weight: Var,
    pub pred_bias: Var,
}

impl Parameterized for ImavaeModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t.extend(self.prior_head.tensors());
        t.push(&self.predictor.coeffs);
        t.push(std::slice::from_ref(&self.predictor.intercept));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t.extend(self.prior_head.tensors_mut());
        t.push(&mut self.predictor.coeffs);
        t.push(std::slice::from_mut(&mut self.predictor.intercept));
        t
    }
}

impl Differentiable for ImavaeModel {
    type Vars = ModelVars;

    fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape),
            decoder: self.decoder.register(tape),
            prior_head: self.prior_head.register(tape),
            pred_weight: tape.param(Matrix::row_vector(&self.predictor.coeffs)),
            pred_bias: tape.param(Matrix::filled(1, 1, self.predictor.intercept)),
        }
    }

    fn collect_grads(&self, vars: &ModelVars, grads: &Gradients) -> Self {
        let k = self.predictor.coeffs.len();
        ImavaeModel {
            dims: self.dims,
            encoder: self.encoder.collect_grads(&vars.encoder, grads),
            decoder: self.decoder.collect_grads(&vars.decoder, grads),
            prior_head: self.prior_head.collect_grads(&vars.prior_head, grads),
            predictor: LinearPredictor {
                coeffs: grads.get_or_zeros(vars.pred_weight, 1, k).into_vec(),
                intercept: grads.get_or_zeros(vars.pred_bias, 1, 1).data()[0],
            },
            scaling: self.scaling.clone(),
        }
    }
}

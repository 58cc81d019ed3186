//! Product-of-coefficients mediation baselines.
//!
//! Both estimators are deterministic and fit plain Baron–Kenny regressions
//! without a treatment–mediator interaction, so ACME and ADE are the same
//! in both treatment arms.

mod ols;

pub use ols::{ols_fit, OlsFit, CONDITION_LIMIT};

use crate::datagen::Dataset;
use crate::effects::EffectReport;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

fn t_column(ds: &Dataset) -> Matrix {
    let t: Vec<f64> = ds.t().iter().map(|&v| v as f64).collect();
    Matrix::col_vector(&t)
}

fn mediators(ds: &Dataset) -> Result<&Matrix> {
    ds.z_true()
        .ok_or_else(|| Error::Data("baseline estimators need mediator columns z0..".into()))
}

/// Linear SEM over all mediator columns of `ds`.
pub fn lsem_estimate(ds: &Dataset) -> Result<EffectReport> {
    lsem_with_mediators(ds, mediators(ds)?)
}

/// Linear SEM with an explicit mediator matrix (`n × k`).
pub fn lsem_with_mediators(ds: &Dataset, z: &Matrix) -> Result<EffectReport> {
    if z.rows() != ds.n() {
        return Err(Error::dim("mediator rows", ds.n(), z.rows()));
    }
    let t = t_column(ds);
    let k = z.cols();

    // mediator models z_j ~ t + w
    let tw = ols::design(&[Some(&t), ds.w()])?;
    let mut a = Vec::with_capacity(k);
    let mut a_se = Vec::with_capacity(k);
    for j in 0..k {
        let fit = ols_fit(&tw, &z.col(j))?;
        a.push(fit.coefficients[0]);
        a_se.push(fit.std_errors[0]);
    }

    // outcome model y ~ t + z + w
    let tzw = ols::design(&[Some(&t), Some(z), ds.w()])?;
    let out = ols_fit(&tzw, ds.y())?;
    let tau = out.coefficients[0];
    let b = &out.coefficients[1..=k];
    let b_se = &out.std_errors[1..=k];

    let acme: f64 = a.iter().zip(b).map(|(a, b)| a * b).sum();
    let acme_var: f64 = (0..k)
        .map(|j| a[j].powi(2) * b_se[j].powi(2) + b[j].powi(2) * a_se[j].powi(2))
        .sum();

    let total = ols_fit(&tw, ds.y())?;
    Ok(EffectReport::symmetric(
        acme,
        tau,
        acme_var.sqrt(),
        out.std_errors[0],
        total.std_errors[0],
    ))
}

/// Pearson correlation; zero when either side is constant.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Index of the mediator column most correlated (in magnitude) with `y`;
/// ties go to the lowest index.
pub fn hima_select(z: &Matrix, y: &[f64]) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for j in 0..z.cols() {
        let c = correlation(&z.col(j), y).abs();
        if c > best_abs {
            best = j;
            best_abs = c;
        }
    }
    best
}

/// Single-mediator screen: the component with the strongest outcome
/// correlation is treated as the only mediator.
pub fn hima_lite(ds: &Dataset) -> Result<EffectReport> {
    hima_with_mediators(ds, mediators(ds)?)
}

pub fn hima_with_mediators(ds: &Dataset, z: &Matrix) -> Result<EffectReport> {
    if z.rows() != ds.n() {
        return Err(Error::dim("mediator rows", ds.n(), z.rows()));
    }
    let j = hima_select(z, ds.y());
    lsem_with_mediators(ds, &z.select_cols(j, 1))
}

use crate::error::{Error, Result};
use crate::numkit::{inverse_spd, symmetric_eigen, Matrix};

/// Largest acceptable condition number of the column-normalised normal matrix.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Ordinary least squares with an intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// `RSS / (n − p − 1)`.
    pub residual_variance: f64,
    pub n: usize,
    pub std_errors: Vec<f64>,
    pub intercept_se: f64,
    pub r_squared: f64,
}

/// Fits `y ~ 1 + x`. Columns are centred before forming the normal
/// equations, and the design is rejected if the condition number of `XᵀX` (after
/// scaling every centred column to unit length) exceeds [`CONDITION_LIMIT`].
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::dim("OLS response", n, y.len()));
    }
    if n <= p + 1 {
        return Err(Error::Data(format!(
            "OLS needs more than {} rows for {p} regressors, got {n}",
            p + 1
        )));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let x_mean = x.col_means();
    let mut xc = x.clone();
    for r in 0..n {
        for (v, m) in xc.row_mut(r).iter_mut().zip(&x_mean) {
            *v -= m;
        }
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let tss: f64 = yc.iter().map(|v| v * v).sum();

    if p == 0 {
        let s2 = tss / (nf - 1.0);
        return Ok(OlsFit {
            coefficients: vec![],
            intercept: y_mean,
            residual_variance: s2,
            n,
            std_errors: vec![],
            intercept_se: (s2 / nf).sqrt(),
            r_squared: 0.0,
        });
    }

    let xtx = xc.t_matmul(&xc)?;
    check_condition(&xtx)?;
    let xty = xc.t_matmul(&Matrix::col_vector(&yc))?.into_vec();
    let inv = inverse_spd(&xtx)?;
    let beta = inv.mat_vec(&xty)?;
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();

    let mut rss = 0.0;
    for r in 0..n {
        let fit: f64 = xc.row(r).iter().zip(&beta).map(|(a, b)| a * b).sum();
        rss += (yc[r] - fit).powi(2);
    }
    let s2 = rss / (nf - p as f64 - 1.0);
    let std_errors = (0..p).map(|j| (s2 * inv.get(j, j)).sqrt()).collect();
    let quad = inv.mat_vec(&x_mean)?;
    let xm_inv_xm: f64 = quad.iter().zip(&x_mean).map(|(a, b)| a * b).sum();
    Ok(OlsFit {
        coefficients: beta,
        intercept,
        residual_variance: s2,
        n,
        std_errors,
        intercept_se: (s2 * (1.0 / nf + xm_inv_xm)).sqrt(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

fn check_condition(xtx: &Matrix) -> Result<()> {
    let p = xtx.rows();
    let mut corr = xtx.clone();
    let diag: Vec<f64> = (0..p).map(|i| xtx.get(i, i)).collect();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Collinear {
            condition: f64::INFINITY,
            limit: CONDITION_LIMIT,
        });
    }
    for i in 0..p {
        for j in 0..p {
            corr.set(i, j, xtx.get(i, j) / (diag[i] * diag[j]).sqrt());
        }
    }
    let eig = symmetric_eigen(&corr)?;
    let max = eig.values[0];
    let min = eig.values[p - 1];
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > CONDITION_LIMIT {
        return Err(Error::Collinear {
            condition,
            limit: CONDITION_LIMIT,
        });
    }
    Ok(())
}

/// Horizontally stacks optional blocks, skipping `None`.
pub(crate) fn design(blocks: &[Option<&Matrix>]) -> Result<Matrix> {
    let parts: Vec<&Matrix> = blocks.iter().flatten().copied().collect();
    Matrix::hstack(&parts)
}

//! Numerical substrate: seeded random streams, dense linear algebra, the
//! standard normal CDF and PCA.

mod linalg;
mod matrix;
mod normal;
mod pca;
mod rng;

pub use linalg::{cholesky, inverse_spd, solve_spd, symmetric_eigen, SymmetricEigen};
pub use matrix::{axpy, dot, Matrix};
pub use normal::{std_normal_cdf, std_normal_pdf};
pub(crate) use normal::{inverse_mills, log_cdf as normal_log_cdf};
pub use pca::{pca_fit, pca_project, pca_reconstruct, Pca};
pub use rng::{streams, RngStream};

/// Kahan-compensated sum.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

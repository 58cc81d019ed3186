use super::linalg::symmetric_eigen;
use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Fitted principal axes.
#[derive(Clone, Debug)]
pub struct Pca {
    /// `k × D`, one orthonormal principal axis per row.
    pub components: Matrix,
    pub means: Vec<f64>,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

/// Relative eigenvalue floor below which a direction counts as rank-deficient.
const RANK_TOL: f64 = 1e-10;

/// Principal axes from the eigendecomposition of the sample covariance.
/// Each axis is sign-normalised so its largest-magnitude entry is positive.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, dim) = x.shape();
    if n < 2 {
        return Err(Error::dim("pca_fit rows (at least)", 2, n));
    }
    if k > dim || k == 0 {
        return Err(Error::InvalidConfig(format!(
            "pca_fit: k = {k} must lie in 1..={dim}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            context: "pca_fit input".into(),
        });
    }
    let means = x.col_means();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let mut cov = centered.t_matmul(&centered)?;
    let scale = 1.0 / (n - 1) as f64;
    cov.data_mut().iter_mut().for_each(|v| *v *= scale);

    let eig = symmetric_eigen(&cov)?;
    let top = eig.values[0].max(0.0);
    let floor = RANK_TOL * top.max(f64::MIN_POSITIVE);
    if eig.values[k - 1] <= floor {
        let rank = eig.values.iter().filter(|&&v| v > floor).count();
        return Err(Error::DegenerateRank(format!(
            "requested {k} components but numerical rank is {rank}"
        )));
    }

    let mut components = Matrix::zeros(k, dim);
    for i in 0..k {
        let mut axis: Vec<f64> = (0..dim).map(|r| eig.vectors.get(r, i)).collect();
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(i).copy_from_slice(&axis);
    }
    Ok(Pca {
        components,
        means,
        explained_variance: eig.values[..k].to_vec(),
        total_variance: eig.values.iter().map(|v| v.max(0.0)).sum(),
    })
}

/// `(X − means) · componentsᵀ`
pub fn pca_project(components: &Matrix, means: &[f64], x: &Matrix) -> Result<Matrix> {
    let dim = components.cols();
    if means.len() != dim {
        return Err(Error::dim("pca_project means", dim, means.len()));
    }
    if x.cols() != dim {
        return Err(Error::dim("pca_project input columns", dim, x.cols()));
    }
    let k = components.rows();
    let mut out = Matrix::zeros(x.rows(), k);
    let mut centered = vec![0.0; dim];
    for r in 0..x.rows() {
        for ((c, v), m) in centered.iter_mut().zip(x.row(r)).zip(means) {
            *c = v - m;
        }
        for j in 0..k {
            out.set(r, j, dot(&centered, components.row(j)));
        }
    }
    Ok(out)
}

/// Maps scores back to feature space: `scores · components + means`.
pub fn pca_reconstruct(components: &Matrix, means: &[f64], scores: &Matrix) -> Result<Matrix> {
    let mut out = scores.matmul(components)?;
    if means.len() != out.cols() {
        return Err(Error::dim("pca_reconstruct means", out.cols(), means.len()));
    }
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(means) {
            *v += m;
        }
    }
    Ok(out)
}

impl Pca {
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        pca_project(&self.components, &self.means, x)
    }

    pub fn reconstruct(&self, scores: &Matrix) -> Result<Matrix> {
        pca_reconstruct(&self.components, &self.means, scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;

    /// Classical Jacobi (largest off-diagonal pivot), independent of the
    /// cyclic solver used by `pca_fit`.
    fn jacobi_oracle(a: &Matrix) -> (Vec<f64>, Matrix) {
        let n = a.rows();
        let mut m = a.clone();
        let mut v = Matrix::identity(n);
        for _ in 0..10_000 {
            let (mut p, mut q, mut best) = (0, 1, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    if m.get(i, j).abs() > best {
                        best = m.get(i, j).abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if best < 1e-15 {
                break;
            }
            let phi = 0.5 * (2.0 * m.get(p, q)).atan2(m.get(q, q) - m.get(p, p));
            let (s, c) = phi.sin_cos();
            let mut g = Matrix::identity(n);
            g.set(p, p, c);
            g.set(q, q, c);
            g.set(p, q, s);
            g.set(q, p, -s);
            m = g.t_matmul(&m).unwrap().matmul(&g).unwrap();
            v = v.matmul(&g).unwrap();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
        let vals = idx.iter().map(|&i| m.get(i, i)).collect();
        let mut vecs = Matrix::zeros(n, n);
        for (d, &s) in idx.iter().enumerate() {
            for r in 0..n {
                vecs.set(d, r, v.get(r, s));
            }
        }
        (vals, vecs)
    }

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, 0);
        Matrix::from_vec(n, d, rng.normal_vec(n * d)).unwrap()
    }

    #[test]
    fn single_axis_data() {
        let x = Matrix::from_rows(&[
            vec![-2.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![0.5, 0.0],
        ])
        .unwrap();
        let p = pca_fit(&x, 1).unwrap();
        assert!((p.components.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(p.components.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn full_rank_round_trip() {
        let x = random(40, 5, 2);
        let p = pca_fit(&x, 5).unwrap();
        let rec = p.reconstruct(&p.project(&x).unwrap()).unwrap();
        let rel = {
            let mut diff = rec.clone();
            for (d, v) in diff.data_mut().iter_mut().zip(x.data()) {
                *d -= v;
            }
            diff.frobenius_norm() / x.frobenius_norm()
        };
        assert!(rel < 1e-8, "relative error {rel}");
        let gram = p.components.matmul_t(&p.components).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(5)) < 1e-8);
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn three_by_three_matches_jacobi_oracle() {
        let mut x = random(200, 3, 5);
        // give the cloud distinct spreads so axes are well defined
        for r in 0..200 {
            let row = x.row_mut(r);
            row[0] = 3.0 * row[0] + row[1];
            row[2] = 0.3 * row[2] - 0.5 * row[1];
        }
        let p = pca_fit(&x, 3).unwrap();
        let means = x.col_means();
        let mut cov = Matrix::zeros(3, 3);
        for r in 0..200 {
            for i in 0..3 {
                for j in 0..3 {
                    let v = cov.get(i, j)
                        + (x.get(r, i) - means[i]) * (x.get(r, j) - means[j]) / 199.0;
                    cov.set(i, j, v);
                }
            }
        }
        let (vals, vecs) = jacobi_oracle(&cov);
        for i in 0..3 {
            assert!((vals[i] - p.explained_variance[i]).abs() < 1e-6);
            let sign = dot(vecs.row(i), p.components.row(i)).signum();
            for j in 0..3 {
                assert!((sign * vecs.get(i, j) - p.components.get(i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_matches_naive_product() {
        let x = random(5, 4, 8);
        let comps = random(2, 4, 9);
        let means = vec![0.1, -0.2, 0.3, 0.0];
        let got = pca_project(&comps, &means, &x).unwrap();
        for r in 0..5 {
            for k in 0..2 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += (x.get(r, j) - means[j]) * comps.get(k, j);
                }
                assert!((got.get(r, k) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centering_and_identity() {
        let x = random(1, 3, 1);
        let means = x.row(0).to_vec();
        let z = pca_project(&Matrix::identity(3), &means, &x).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-15));
        let same = pca_project(&Matrix::identity(3), &[0.0; 3], &x).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn errors() {
        let x = random(10, 3, 1);
        assert!(pca_project(&Matrix::identity(2), &[0.0; 2], &x).is_err());
        assert!(pca_fit(&random(1, 3, 1), 1).is_err());
        assert!(pca_fit(&x, 4).is_err());
        // rank-one data, two components requested
        let line = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, -2.0]]).unwrap();
        assert!(matches!(pca_fit(&line, 2), Err(Error::DegenerateRank(_))));
    }
}

use nalgebra::{DMatrix, SymmetricEigen};

use super::{SampleMatrix, TrainingSet};
use crate::error::{Error, Result};

/// Top principal directions of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    /// Sample mean, length `D`.
    pub mean: Vec<f64>,
    /// `d × D`, orthonormal rows ordered by decreasing variance.
    pub basis: DMatrix<f64>,
    /// Variance captured by each row.
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `B (x − μ)`.
    pub fn project_vec(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..self.dim())
            .map(|j| {
                self.basis
                    .row(j)
                    .iter()
                    .zip(&centered)
                    .map(|(b, c)| b * c)
                    .sum()
            })
            .collect()
    }

    /// `μ + Bᵀ p`.
    pub fn reconstruct(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (j, &pj) in p.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(j).iter()) {
                *o += pj * b;
            }
        }
        out
    }

    /// `Bᵀ z`: maps reduced-space weights back to input space.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim()];
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                for (o, b) in out.iter_mut().zip(self.basis.row(j).iter()) {
                    *o += zj * b;
                }
            }
        }
        out
    }
}

/// Numerical rank and eigen-decomposition helper shared by both PCA routes.
fn top_eigen(mut m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    // Symmetrize to shave rounding asymmetry before the solver.
    let t = m.transpose();
    m = (&m + &t) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Fits a `d`-dimensional PCA basis on the rows of `data`.
///
/// Uses the `K × K` Gram matrix when there are fewer samples than features.
pub fn fit_pca_matrix(data: &SampleMatrix, d: usize) -> Result<PcaBasis> {
    fit(data, d, false)
}

/// Like [`fit_pca_matrix`] but keeps at most `d_max` directions, fewer when
/// the data rank is lower.
pub fn fit_pca_upto(data: &SampleMatrix, d_max: usize) -> Result<PcaBasis> {
    fit(data, d_max.min(data.len()).min(data.dim), true)
}

fn fit(data: &SampleMatrix, d: usize, clamp: bool) -> Result<PcaBasis> {
    let (k, dim) = (data.len(), data.dim);
    if d == 0 || d > k.min(dim) {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {d} must be in 1..={}",
            k.min(dim)
        )));
    }
    let mut mean = vec![0.0; dim];
    for i in 0..k {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let centered = DMatrix::from_fn(k, dim, |i, j| data.features[i * dim + j] - mean[j]);

    let (values, rows): (Vec<f64>, DMatrix<f64>) = if k < dim {
        let gram = &centered * centered.transpose();
        let (values, vecs) = top_eigen(gram);
        let lam_max = values.first().copied().unwrap_or(0.0).max(0.0);
        let rank = values.iter().filter(|&&v| v > 1e-10 * lam_max && v > 0.0).count();
        let d = check_rank(d, rank, clamp)?;
        let top = vecs.columns(0, d).into_owned();
        let mut rows = (centered.transpose() * top).transpose();
        for j in 0..d {
            let s = values[j].sqrt();
            rows.row_mut(j).iter_mut().for_each(|v| *v /= s);
        }
        (values, rows)
    } else {
        let cov = centered.transpose() * &centered;
        let (values, vecs) = top_eigen(cov);
        let lam_max = values.first().copied().unwrap_or(0.0).max(0.0);
        let rank = values.iter().filter(|&&v| v > 1e-10 * lam_max && v > 0.0).count();
        let d = check_rank(d, rank, clamp)?;
        (values, vecs.columns(0, d).transpose())
    };

    let d = rows.nrows();
    let mut basis = rows;
    for j in 0..d {
        // Deterministic sign: largest-magnitude entry positive.
        let (mut best, mut best_abs) = (0.0, -1.0);
        for &v in basis.row(j).iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            basis.row_mut(j).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(PcaBasis {
        mean,
        basis,
        variances: values[..d].iter().map(|v| v / k as f64).collect(),
    })
}

fn check_rank(d: usize, rank: usize, clamp: bool) -> Result<usize> {
    if rank == 0 {
        return Err(Error::InvalidArgument("PCA input has zero variance".into()));
    }
    if d > rank {
        if clamp {
            return Ok(rank);
        }
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {d} exceeds the data rank {rank}"
        )));
    }
    Ok(d)
}

/// Fits a `d`-dimensional PCA basis on the patches of a training set.
pub fn fit_pca(ts: &TrainingSet, d: usize) -> Result<PcaBasis> {
    fit_pca_matrix(&ts.to_matrix(), d)
}

/// Projects every sample into the reduced space, keeping labels and groups.
pub fn project(data: &SampleMatrix, basis: &PcaBasis) -> Result<SampleMatrix> {
    if data.dim != basis.input_dim() {
        return Err(Error::Dimension(format!(
            "samples have dimension {}, basis expects {}",
            data.dim,
            basis.input_dim()
        )));
    }
    let k = data.len();
    let dim = data.dim;
    let centered = DMatrix::from_fn(k, dim, |i, j| data.features[i * dim + j] - basis.mean[j]);
    let reduced = centered * basis.basis.transpose();
    let d = basis.dim();
    let mut features = Vec::with_capacity(k * d);
    for i in 0..k {
        features.extend(reduced.row(i).iter().copied());
    }
    SampleMatrix::new(d, features, data.labels.clone(), data.groups.clone())
}

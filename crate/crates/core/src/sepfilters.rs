//! Shared separable approximation of a trained filter bank.
//!
//! For every feature channel the `N·M` filters of that channel are written as
//! linear combinations of one shared dictionary of rank-1 filters `col · rowᵀ`.
//! Dense scoring then needs `S` separable correlations per channel instead of
//! `N·M` full 2D ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghh::{check_stack_fits, GhhModel, ScoreMap};
use crate::imagekit::{BorderMode, FeatureStack, PaddedChannel, NUM_CHANNELS};
use crate::numeric::axpy;

const MAX_ROUNDS: usize = 100;
const ROUND_TOL: f64 = 1e-6;
/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

/// Rank-1 filter with taps `col[i] · row[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableFilter {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelBank {
    pub filters: Vec<SeparableFilter>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableBank {
    /// Dictionary size requested (after clamping).
    #[serde(rename = "S")]
    pub s: usize,
    pub patch_size: usize,
    pub n: usize,
    pub m: usize,
    pub per_channel: Vec<ChannelBank>,
    /// `coefficients[n·M + m][channel][s]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// Frobenius reconstruction error per `[piece][channel]`.
    pub errors: Vec<Vec<f64>>,
    pub total_error: f64,
    pub model_hash: String,
}

impl SeparableBank {
    /// Reconstruction error of a whole hyperplane (all channels).
    pub fn piece_error(&self, n: usize, m: usize) -> f64 {
        self.errors[n * self.m + m].iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Bound on `|score_map_separable − score_map|` given the largest
    /// Euclidean norm of any feature patch in the image.
    pub fn score_error_bound(&self, max_patch_norm: f64) -> f64 {
        (0..self.n)
            .map(|n| (0..self.m).map(|m| self.piece_error(n, m)).fold(0.0, f64::max))
            .sum::<f64>()
            * max_patch_norm
    }

    /// Reconstructed 2D taps of one filter.
    pub fn reconstruct(&self, n: usize, m: usize, c: usize) -> Vec<f64> {
        let p = self.patch_size;
        let mut out = vec![0.0; p * p];
        let coef = &self.coefficients[n * self.m + m][c];
        for (a, f) in coef.iter().zip(&self.per_channel[c].filters) {
            for i in 0..p {
                axpy(a * f.col[i], &f.row, &mut out[i * p..(i + 1) * p]);
            }
        }
        out
    }

    pub fn check_model(&self, model: &GhhModel) -> Result<()> {
        if self.model_hash != model.content_hash() {
            return Err(Error::InvalidArgument(
                "separable bank was built for a different model".into(),
            ));
        }
        Ok(())
    }
}

struct Dictionary {
    cols: Vec<DVector<f64>>,
    rows: Vec<DVector<f64>>,
    /// K × S.
    coef: DMatrix<f64>,
}

impl Dictionary {
    fn empty(k: usize) -> Self {
        Self {
            cols: Vec::new(),
            rows: Vec::new(),
            coef: DMatrix::zeros(k, 0),
        }
    }

    fn len(&self) -> usize {
        self.cols.len()
    }

    fn approx(&self, k: usize, p: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(p, p);
        for s in 0..self.len() {
            let a = self.coef[(k, s)];
            if a != 0.0 {
                out.ger(a, &self.cols[s], &self.rows[s], 1.0);
            }
        }
        out
    }

    fn residuals(&self, filters: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        filters
            .iter()
            .enumerate()
            .map(|(k, f)| f - self.approx(k, f.nrows()))
            .collect()
    }

    fn error_sq(&self, filters: &[DMatrix<f64>]) -> f64 {
        self.residuals(filters).iter().map(|r| r.norm_squared()).sum()
    }

    /// Least-squares coefficients for the current atoms.
    fn solve_coefficients(&mut self, filters: &[DMatrix<f64>]) {
        let s = self.len();
        let k = filters.len();
        if s == 0 {
            self.coef = DMatrix::zeros(k, 0);
            return;
        }
        let gram = DMatrix::from_fn(s, s, |a, b| {
            self.cols[a].dot(&self.cols[b]) * self.rows[a].dot(&self.rows[b])
        });
        let rhs = DMatrix::from_fn(s, k, |a, j| self.cols[a].dot(&(&filters[j] * &self.rows[a])));
        // Pseudo-inverse through the eigendecomposition of the PSD Gram matrix.
        let eig = SymmetricEigen::new(gram);
        let eps = 1e-13 * eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let proj = eig.eigenvectors.tr_mul(&rhs);
        let scaled = DMatrix::from_fn(s, k, |i, j| {
            let l = eig.eigenvalues[i];
            if l > eps {
                proj[(i, j)] / l
            } else {
                0.0
            }
        });
        self.coef = (&eig.eigenvectors * scaled).transpose();
    }

    /// One alternating pass over every atom's column and row vector.
    fn update_atoms(&mut self, filters: &[DMatrix<f64>]) {
        let k = filters.len();
        for s in 0..self.len() {
            let energy: f64 = (0..k).map(|j| self.coef[(j, s)].powi(2)).sum();
            if energy <= 0.0 {
                continue;
            }
            let others: Vec<DMatrix<f64>> = (0..k)
                .map(|j| {
                    let mut r = filters[j].clone();
                    for t in 0..self.len() {
                        if t != s && self.coef[(j, t)] != 0.0 {
                            r.ger(-self.coef[(j, t)], &self.cols[t], &self.rows[t], 1.0);
                        }
                    }
                    r
                })
                .collect();
            let v = &self.rows[s];
            let mut col = DVector::zeros(v.len());
            for (j, r) in others.iter().enumerate() {
                col.gemv(self.coef[(j, s)], r, v, 1.0);
            }
            col /= energy * v.norm_squared();
            let mut row = DVector::zeros(col.len());
            for (j, r) in others.iter().enumerate() {
                row.gemv_tr(self.coef[(j, s)], r, &col, 1.0);
            }
            let cn = col.norm_squared();
            if cn <= 0.0 {
                continue;
            }
            row /= energy * cn;
            let (a, b) = (col.norm(), row.norm());
            if a > 0.0 && b > 0.0 {
                for j in 0..k {
                    self.coef[(j, s)] *= a * b;
                }
                self.cols[s] = col / a;
                self.rows[s] = row / b;
            }
        }
    }

    /// Best shared rank-1 atom for the residuals: leading left singular
    /// vector of the side-by-side stack, then the best row for it.
    fn push_leading_atom(&mut self, residuals: &[DMatrix<f64>]) {
        let p = residuals[0].nrows();
        let mut left = DMatrix::zeros(p, p);
        for r in residuals {
            left.gemm(1.0, r, &r.transpose(), 1.0);
        }
        let col = leading_eigenvector(left);
        let mut right = DMatrix::zeros(p, p);
        for r in residuals {
            let t = r.tr_mul(&col);
            right.ger(1.0, &t, &t, 1.0);
        }
        let row = leading_eigenvector(right);
        self.cols.push(col);
        self.rows.push(row);
        self.coef = self.coef.clone().insert_column(self.coef.ncols(), 0.0);
    }

    fn clone_state(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, DMatrix<f64>) {
        (self.cols.clone(), self.rows.clone(), self.coef.clone())
    }

    fn restore(&mut self, state: (Vec<DVector<f64>>, Vec<DVector<f64>>, DMatrix<f64>)) {
        self.cols = state.0;
        self.rows = state.1;
        self.coef = state.2;
    }
}

fn leading_eigenvector(sym: DMatrix<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(sym);
    let i = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(i).into_owned();
    let (j, _) = v.iter().enumerate().fold((0, 0.0), |acc, (j, x)| {
        if x.abs() > acc.1 {
            (j, x.abs())
        } else {
            acc
        }
    });
    if v[j] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Rank-1 terms `(F vᵢ) vᵢᵀ` over the eigenvectors of `FᵀF`; their sum is `F`.
fn rank_one_terms(f: &DMatrix<f64>) -> Vec<(DVector<f64>, DVector<f64>, f64)> {
    let eig = SymmetricEigen::new(f.tr_mul(f));
    let mut terms: Vec<_> = (0..f.ncols())
        .map(|i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let u = f * &v;
            let sv = u.norm();
            (u, v, sv)
        })
        .collect();
    terms.sort_by(|a, b| b.2.total_cmp(&a.2));
    terms
}

fn largest_singular_value(terms: &[Vec<(DVector<f64>, DVector<f64>, f64)>]) -> f64 {
    terms.iter().flatten().map(|t| t.2).fold(0.0, f64::max)
}

/// Exact decomposition: every filter's own rank-1 terms.
fn exact_dictionary(filters: &[DMatrix<f64>]) -> Dictionary {
    let k = filters.len();
    let terms: Vec<_> = filters.iter().map(rank_one_terms).collect();
    let scale = largest_singular_value(&terms);
    let mut dict = Dictionary::empty(k);
    let mut entries = Vec::new();
    for (j, list) in terms.into_iter().enumerate() {
        for (u, v, sv) in list {
            if sv > RANK_TOL * scale {
                dict.cols.push(u / sv);
                dict.rows.push(v);
                entries.push((j, sv));
            }
        }
    }
    dict.coef = DMatrix::zeros(k, dict.len());
    for (s, (j, sv)) in entries.into_iter().enumerate() {
        dict.coef[(j, s)] = sv;
    }
    dict
}

fn numerical_rank(filters: &[DMatrix<f64>]) -> usize {
    let terms: Vec<_> = filters.iter().map(rank_one_terms).collect();
    let scale = largest_singular_value(&terms);
    terms
        .iter()
        .flatten()
        .filter(|t| t.2 > RANK_TOL * scale)
        .count()
}

/// Grows the dictionary one atom at a time, refining with alternating least
/// squares after each addition, and snapshots it at every requested size.
fn fit_channel(filters: &[DMatrix<f64>], sizes: &[usize]) -> Vec<Dictionary> {
    let k = filters.len();
    let rank = numerical_rank(filters);
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let mut dict = Dictionary::empty(k);
    let mut err = dict.error_sq(filters);
    let mut out: Vec<Option<Dictionary>> = sizes.iter().map(|_| None).collect();
    let snapshot = |dict: &Dictionary| Dictionary {
        cols: dict.cols.clone(),
        rows: dict.rows.clone(),
        coef: dict.coef.clone(),
    };
    for (i, &s) in sizes.iter().enumerate() {
        if s == 0 {
            out[i] = Some(Dictionary::empty(k));
        } else if s >= rank {
            out[i] = Some(exact_dictionary(filters));
        }
    }
    let grow_to = sizes.iter().copied().filter(|&s| s < rank).max().unwrap_or(0);
    for size in 1..=grow_to.min(largest) {
        let residuals = dict.residuals(filters);
        dict.push_leading_atom(&residuals);
        let padded = dict.coef.clone();
        dict.solve_coefficients(filters);
        let e = dict.error_sq(filters);
        if e <= err {
            err = e;
        } else {
            dict.coef = padded;
        }
        for _ in 0..MAX_ROUNDS {
            let saved = dict.clone_state();
            dict.update_atoms(filters);
            dict.solve_coefficients(filters);
            let e = dict.error_sq(filters);
            if !(e <= err) {
                dict.restore(saved);
                break;
            }
            let gain = err - e;
            err = e;
            if gain <= ROUND_TOL * err.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        for (i, &s) in sizes.iter().enumerate() {
            if s == size {
                out[i] = Some(snapshot(&dict));
            }
        }
    }
    out.into_iter().map(|d| d.expect("every size visited")).collect()
}

fn channel_filters(model: &GhhModel, c: usize) -> Vec<DMatrix<f64>> {
    let p = model.patch_size();
    model
        .planes()
        .iter()
        .flatten()
        .map(|pl| DMatrix::from_row_slice(p, p, pl.filters[c].taps()))
        .collect()
}

/// Approximates every channel's filters with a shared bank of `s` separable
/// filters. `s` is clamped to `patch_size · N · M`, beyond which the
/// decomposition is exact anyway.
pub fn approximate_separable(model: &GhhModel, s: usize) -> Result<SeparableBank> {
    Ok(approximate_separable_sizes(model, &[s])?.pop().expect("one size"))
}

/// [`approximate_separable`] for several bank sizes sharing one growth path.
pub fn approximate_separable_sizes(model: &GhhModel, sizes: &[usize]) -> Result<Vec<SeparableBank>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument("separable bank size must be at least 1".into()));
    }
    let p = model.patch_size();
    let k = model.n() * model.m();
    let cap = p * k;
    let sizes: Vec<usize> = sizes
        .iter()
        .map(|&s| {
            if s > cap {
                log::warn!("separable bank size {s} clamped to {cap}");
            }
            s.min(cap)
        })
        .collect();
    let per_channel: Vec<Vec<Dictionary>> = (0..NUM_CHANNELS)
        .map(|c| fit_channel(&channel_filters(model, c), &sizes))
        .collect();
    let hash = model.content_hash();
    let mut banks = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        let mut coefficients = vec![vec![Vec::new(); NUM_CHANNELS]; k];
        let mut errors = vec![vec![0.0; NUM_CHANNELS]; k];
        let mut channels = Vec::with_capacity(NUM_CHANNELS);
        for (c, dicts) in per_channel.iter().enumerate() {
            let dict = &dicts[i];
            let filters = channel_filters(model, c);
            for (j, r) in dict.residuals(&filters).iter().enumerate() {
                errors[j][c] = r.norm();
                coefficients[j][c] = dict.coef.row(j).iter().copied().collect();
            }
            channels.push(ChannelBank {
                filters: dict
                    .cols
                    .iter()
                    .zip(&dict.rows)
                    .map(|(col, row)| SeparableFilter {
                        row: row.iter().copied().collect(),
                        col: col.iter().copied().collect(),
                    })
                    .collect(),
            });
        }
        let total_error = errors.iter().flatten().map(|e| e * e).sum::<f64>().sqrt();
        banks.push(SeparableBank {
            s,
            patch_size: p,
            n: model.n(),
            m: model.m(),
            per_channel: channels,
            coefficients,
            errors,
            total_error,
            model_hash: hash.clone(),
        });
    }
    Ok(banks)
}

/// Output rows scored together; keeps the per-band buffers cache-resident.
const BAND: usize = 32;

/// Dense score map using the separable bank; same border convention as
/// [`crate::ghh::score_map`].
pub fn score_map_separable(model: &GhhModel, bank: &SeparableBank, fs: &FeatureStack) -> Result<ScoreMap> {
    bank.check_model(model)?;
    let p = model.patch_size();
    check_stack_fits(fs, p)?;
    let r = model.radius();
    let (w, h) = (fs.width(), fs.height());
    let pw = w + 2 * r;
    let padded: Vec<PaddedChannel> = (0..NUM_CHANNELS)
        .map(|c| PaddedChannel::new(fs.channel(c), r, r, BorderMode::SameReplicate))
        .collect();
    let planes: Vec<f64> = model.planes().iter().flatten().map(|pl| pl.bias).collect();
    let m = model.m();
    let mut total = vec![0.0; w * h];
    total.par_chunks_mut(BAND * w).enumerate().for_each(|(b, out)| {
        let y0 = b * BAND;
        let rows = out.len() / w;
        let mut acc: Vec<Vec<f64>> = planes.iter().map(|&bias| vec![bias; rows * w]).collect();
        let mut mid = vec![0.0; (rows + 2 * r) * w];
        for c in 0..NUM_CHANNELS {
            let src = &padded[c].data;
            let filters = &bank.per_channel[c].filters;
            let mut resp = vec![vec![0.0; rows * w]; filters.len()];
            for (f, resp) in filters.iter().zip(resp.iter_mut()) {
                mid.fill(0.0);
                for (i, mid_row) in mid.chunks_mut(w).enumerate() {
                    let src_row = &src[(y0 + i) * pw..(y0 + i + 1) * pw];
                    for (j, &t) in f.row.iter().enumerate() {
                        if t != 0.0 {
                            axpy(t, &src_row[j..j + w], mid_row);
                        }
                    }
                }
                for (y, resp_row) in resp.chunks_mut(w).enumerate() {
                    for (i, &t) in f.col.iter().enumerate() {
                        if t != 0.0 {
                            axpy(t, &mid[(y + i) * w..(y + i + 1) * w], resp_row);
                        }
                    }
                }
            }
            for y in 0..rows {
                let span = y * w..(y + 1) * w;
                for (j, a) in acc.iter_mut().enumerate() {
                    let a_row = &mut a[span.clone()];
                    for (s, rs) in resp.iter().enumerate() {
                        let coef = bank.coefficients[j][c][s];
                        if coef != 0.0 {
                            axpy(coef, &rs[span.clone()], a_row);
                        }
                    }
                }
            }
        }
        for (n, &d) in model.delta().iter().enumerate() {
            let group = &acc[n * m..(n + 1) * m];
            for (k, o) in out.iter_mut().enumerate() {
                let best = group.iter().map(|a| a[k]).fold(f64::NEG_INFINITY, f64::max);
                *o += d as f64 * best;
            }
        }
    });
    ScoreMap::new(w, h, r, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghh::test_support::random_model;
    use crate::ghh::{score_map, Hyperplane};
    use crate::imagekit::{ChannelImage, Normalization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn consistent_stack(seed: u64, w: usize, h: usize) -> FeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ch: Vec<ChannelImage> = (0..5)
            .map(|_| ChannelImage::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let gx = ch[3].data().to_vec();
        let gy = ch[4].data().to_vec();
        ch.push(ChannelImage::new(w, h, gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()).unwrap());
        FeatureStack::from_channels(ch.try_into().unwrap()).unwrap()
    }

    fn separable_model(seed: u64, atoms: usize, p: usize) -> GhhModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..NUM_CHANNELS)
            .map(|_| {
                (0..atoms)
                    .map(|_| {
                        (
                            (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        let planes = (0..2)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let mut w = vec![0.0; NUM_CHANNELS * p * p];
                        for (c, atoms) in bank.iter().enumerate() {
                            for (col, row) in atoms {
                                let a: f64 = rng.random_range(-1.0..1.0);
                                for i in 0..p {
                                    for j in 0..p {
                                        w[c * p * p + i * p + j] += a * col[i] * row[j];
                                    }
                                }
                            }
                        }
                        Hyperplane::from_flat(p, &w, rng.random_range(-0.5..0.5)).unwrap()
                    })
                    .collect()
            })
            .collect();
        GhhModel::new(p, vec![1, -1], planes, Normalization::default()).unwrap()
    }

    fn assert_maps_close(model: &GhhModel, bank: &SeparableBank, fs: &FeatureStack, tol: f64) {
        let exact = score_map(model, fs).unwrap();
        let sep = score_map_separable(model, bank, fs).unwrap();
        let (x0, x1, y0, y1) = exact.interior();
        for y in y0..y1 {
            for x in x0..x1 {
                let (a, b) = (exact.get(x, y).unwrap(), sep.get(x, y).unwrap());
                assert!((a - b).abs() <= tol * (1.0 + a.abs()), "({x},{y}) {a} vs {b}");
            }
        }
    }

    #[test]
    fn separable_filters_are_recovered_exactly() {
        // Every filter is itself rank one; a bank of N·M atoms per channel suffices.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = 7;
        let planes = (0..2)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let mut w = Vec::with_capacity(NUM_CHANNELS * p * p);
                        for _ in 0..NUM_CHANNELS {
                            let col: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                            let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                            for i in 0..p {
                                w.extend(row.iter().map(|r| col[i] * r));
                            }
                        }
                        Hyperplane::from_flat(p, &w, 0.1).unwrap()
                    })
                    .collect()
            })
            .collect();
        let model = GhhModel::new(p, vec![1, 1], planes, Normalization::default()).unwrap();
        let bank = approximate_separable(&model, 4).unwrap();
        assert!(bank.total_error <= 1e-8, "error {}", bank.total_error);
        assert_maps_close(&model, &bank, &consistent_stack(1, 30, 25), 1e-8);
    }

    #[test]
    fn shared_atoms_are_found_approximately() {
        let model = separable_model(3, 2, 7);
        let bank = approximate_separable(&model, 2).unwrap();
        let norm: f64 = (0..NUM_CHANNELS)
            .flat_map(|c| channel_filters(&model, c))
            .map(|f| f.norm_squared())
            .sum::<f64>()
            .sqrt();
        assert!(bank.total_error <= 1e-3 * norm, "error {} of {norm}", bank.total_error);
        assert_maps_close(&model, &bank, &consistent_stack(1, 30, 25), 1e-2);
    }

    #[test]
    fn full_rank_bank_is_exact() {
        let model = random_model(5, 2, 2, 5);
        let bank = approximate_separable(&model, 5 * 4).unwrap();
        assert!(bank.total_error <= 1e-10);
        for n in 0..2 {
            for m in 0..2 {
                for c in 0..NUM_CHANNELS {
                    let r = bank.reconstruct(n, m, c);
                    for (a, b) in r.iter().zip(model.plane(n, m).filters[c].taps()) {
                        assert!((a - b).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn error_is_monotone_in_bank_size() {
        let model = random_model(8, 2, 3, 7);
        let sizes = [1, 2, 3, 4, 6, 8, 12, 20, 42, 60];
        let banks = approximate_separable_sizes(&model, &sizes).unwrap();
        for w in banks.windows(2) {
            assert!(w[1].total_error <= w[0].total_error, "{} > {}", w[1].total_error, w[0].total_error);
        }
        assert_eq!(banks.last().unwrap().s, 42);
        let single = approximate_separable(&model, 4).unwrap();
        assert_eq!(single.total_error, banks[3].total_error);
    }

    #[test]
    fn score_deviation_is_within_the_error_bound() {
        let model = random_model(11, 2, 2, 5);
        let bank = approximate_separable(&model, 3).unwrap();
        let fs = consistent_stack(2, 24, 20);
        let exact = score_map(&model, &fs).unwrap();
        let sep = score_map_separable(&model, &bank, &fs).unwrap();
        let (x0, x1, y0, y1) = exact.interior();
        let mut max_norm: f64 = 0.0;
        let mut max_dev: f64 = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                let patch = fs.patch(x, y, 5).unwrap();
                max_norm = max_norm.max(patch.data().iter().map(|v| v * v).sum::<f64>().sqrt());
                max_dev = max_dev.max((exact.get(x, y).unwrap() - sep.get(x, y).unwrap()).abs());
            }
        }
        assert!(max_dev <= bank.score_error_bound(max_norm) + 1e-12);
        assert!(max_dev > 0.0);
    }

    #[test]
    fn bank_rejects_other_models() {
        let model = random_model(1, 1, 2, 3);
        let bank = approximate_separable(&model, 2).unwrap();
        let other = random_model(2, 1, 2, 3);
        let fs = consistent_stack(0, 10, 10);
        assert!(score_map_separable(&other, &bank, &fs).is_err());
        assert!(approximate_separable(&model, 0).is_err());
    }

    #[test]
    fn oversized_bank_is_clamped() {
        let model = random_model(4, 1, 1, 3);
        let bank = approximate_separable(&model, 100).unwrap();
        assert_eq!(bank.s, 3);
        assert!(bank.total_error < 1e-10);
    }
}

//! Peaked response template and the Fourier-domain shape quadratic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ghh::{active_index, GhhModel};
use crate::imagekit::dft::RealDft2;
use crate::imagekit::{FeaturePatch, NUM_CHANNELS};
use crate::trainset::{PcaBasis, TrainingSet};

/// Desired response around a keypoint: `h(r) = exp(α (1 − r / β)) − 1`.
#[derive(Clone, Debug)]
pub struct ShapeTemplate {
    pub alpha: f64,
    pub beta: f64,
    size: usize,
    /// Row-major values with offset `(0,0)` at the patch center.
    values: Vec<f64>,
    /// Same values rolled so offset `(0,0)` sits at index 0 (circular layout).
    rolled: Vec<f64>,
    /// Real Fourier coordinates of `rolled`.
    spectrum: Vec<f64>,
}

pub fn shape_template(alpha: f64, beta: f64, size: usize) -> Result<ShapeTemplate> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "template parameters must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("template size must be odd, got {size}")));
    }
    let c = (size / 2) as isize;
    let h = |dx: isize, dy: isize| {
        let r = ((dx * dx + dy * dy) as f64).sqrt();
        (alpha * (1.0 - r / beta)).exp() - 1.0
    };
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size as isize {
        for x in 0..size as isize {
            values.push(h(x - c, y - c));
        }
    }
    let mut rolled = vec![0.0; size * size];
    for sy in 0..size {
        for sx in 0..size {
            let yy = (sy + c as usize) % size;
            let xx = (sx + c as usize) % size;
            rolled[sy * size + sx] = values[yy * size + xx];
        }
    }
    let spectrum = RealDft2::new(size).forward(&rolled);
    Ok(ShapeTemplate {
        alpha,
        beta,
        size,
        values,
        rolled,
        spectrum,
    })
}

impl ShapeTemplate {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Value at offset `(dx, dy)` from the center.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let c = (self.size / 2) as isize;
        self.values[((dy + c) as usize) * self.size + (dx + c) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values indexed by circular shift (shift 0 at index 0).
    pub fn rolled(&self) -> &[f64] {
        &self.rolled
    }

    /// Real Fourier coordinates `H` of the rolled template.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }
}

/// Mean over positives of `SᵢᵀSᵢ` per channel, in real Fourier coordinates,
/// plus the positive counts `K_nm` per hyperplane.
#[derive(Clone, Debug)]
pub struct ShapeQuadratic {
    size: usize,
    q: Vec<DMatrix<f64>>,
    occupancy: Vec<Vec<usize>>,
    num_positives: usize,
    revision: u64,
}

impl ShapeQuadratic {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Channel-`c` matrix (`size² × size²`).
    pub fn q(&self, c: usize) -> &DMatrix<f64> {
        &self.q[c]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    /// `K_nm`: positives whose active hyperplane in component `n` is `m`.
    pub fn occupancy(&self) -> &[Vec<usize>] {
        &self.occupancy
    }

    pub fn num_positives(&self) -> usize {
        self.num_positives
    }

    /// Model revision the occupancy was computed for.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Recomputes `K_nm` for a (possibly updated) model.
    pub fn refresh(&mut self, model: &GhhModel, ts: &TrainingSet) -> Result<()> {
        self.occupancy = occupancy(model, ts.positives().map(|s| &s.patch))?;
        self.revision = model.revision();
        Ok(())
    }
}

fn occupancy<'a>(
    model: &GhhModel,
    patches: impl Iterator<Item = &'a FeaturePatch>,
) -> Result<Vec<Vec<usize>>> {
    let mut occ = vec![vec![0usize; model.m()]; model.n()];
    for p in patches {
        for (n, row) in occ.iter_mut().enumerate() {
            row[active_index(model, p, n)?] += 1;
        }
    }
    Ok(occ)
}

/// Per-channel mean of `SᵢᵀSᵢ` over the given patches.
///
/// With `x̃` the Fourier coordinates of one channel, `D` its correlation
/// operator and `g = D H`: `SᵀS = diag(DᵀD) − g x̃ᵀ − x̃ gᵀ + ‖H‖² x̃ x̃ᵀ`.
pub fn mean_shape_matrices(patches: &[&FeaturePatch], tmpl: &ShapeTemplate) -> Vec<DMatrix<f64>> {
    let p2 = tmpl.size * tmpl.size;
    let k = patches.len();
    if k == 0 {
        return vec![DMatrix::zeros(p2, p2); NUM_CHANNELS];
    }
    let dft = RealDft2::new(tmpl.size);
    let h = &tmpl.spectrum;
    let hh: f64 = h.iter().map(|v| v * v).sum();
    (0..NUM_CHANNELS)
        .map(|c| {
            let mut xs = DMatrix::zeros(k, p2);
            let mut gs = DMatrix::zeros(k, p2);
            let mut diag = vec![0.0; p2];
            for (i, patch) in patches.iter().enumerate() {
                let xt = dft.forward(patch.channel(c));
                let blocks = dft.correlation_blocks(&xt);
                let g = blocks.apply(h);
                for (d, v) in diag.iter_mut().zip(blocks.gram_diagonal()) {
                    *d += v;
                }
                for j in 0..p2 {
                    xs[(i, j)] = xt[j];
                    gs[(i, j)] = g[j];
                }
            }
            let cross = gs.tr_mul(&xs);
            let mut q = xs.tr_mul(&xs) * hh;
            q -= &cross;
            q -= cross.transpose();
            q /= k as f64;
            for (j, d) in diag.iter().enumerate() {
                q[(j, j)] += d / k as f64;
            }
            let t = q.transpose();
            (q + t) * 0.5
        })
        .collect()
}

/// Builds the mean shape quadratic over the positives of `ts` and records
/// the occupancy of `model`.
pub fn precompute_shape_quadratic(
    ts: &TrainingSet,
    tmpl: &ShapeTemplate,
    model: &GhhModel,
) -> Result<ShapeQuadratic> {
    if tmpl.size != ts.patch_size() || model.patch_size() != ts.patch_size() {
        return Err(Error::Dimension(format!(
            "template {}, model {} and samples {} disagree on the patch size",
            tmpl.size,
            model.patch_size(),
            ts.patch_size()
        )));
    }
    let patches: Vec<&FeaturePatch> = ts.positives().map(|s| &s.patch).collect();
    if patches.is_empty() {
        log::warn!("no positive samples: the shape term is identically zero");
    }
    Ok(ShapeQuadratic {
        size: tmpl.size,
        q: mean_shape_matrices(&patches, tmpl),
        occupancy: occupancy(model, patches.iter().copied())?,
        num_positives: patches.len(),
        revision: model.revision(),
    })
}

/// A quadratic form `zᵀ Q z` on hyperplane weight vectors, in whatever
/// coordinates the learner works in.
#[derive(Clone, Debug, Default)]
pub enum ShapeOperator {
    /// No shape term.
    #[default]
    Zero,
    /// Full-resolution spatial weights; `Q` is stored per channel in real
    /// Fourier coordinates.
    Fourier { dft: RealDft2, q: Vec<DMatrix<f64>> },
    /// Explicit matrix (e.g. after projection onto a PCA basis).
    Dense(DMatrix<f64>),
}

impl ShapeOperator {
    pub fn fourier(size: usize, q: Vec<DMatrix<f64>>) -> Self {
        ShapeOperator::Fourier {
            dft: RealDft2::new(size),
            q,
        }
    }

    /// `Bᵀ`-projected operator `Σ_c B̃_c Q_c B̃_cᵀ`, where `B̃_c` holds the
    /// Fourier coordinates of channel `c` of every basis row.
    pub fn reduced(size: usize, q: &[DMatrix<f64>], basis: &PcaBasis) -> Self {
        let dft = RealDft2::new(size);
        let p2 = size * size;
        let d = basis.dim();
        let mut out = DMatrix::zeros(d, d);
        for (c, qc) in q.iter().enumerate() {
            let mut bt = DMatrix::zeros(d, p2);
            for j in 0..d {
                let row: Vec<f64> = basis.basis.row(j).iter().skip(c * p2).take(p2).copied().collect();
                for (t, v) in dft.forward(&row).into_iter().enumerate() {
                    bt[(j, t)] = v;
                }
            }
            let left = &bt * qc;
            out += left * bt.transpose();
        }
        let t = out.transpose();
        ShapeOperator::Dense((out + t) * 0.5)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ShapeOperator::Zero)
    }

    /// `Q z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            ShapeOperator::Zero => vec![0.0; z.len()],
            ShapeOperator::Dense(q) => (q * DVector::from_column_slice(z)).as_slice().to_vec(),
            ShapeOperator::Fourier { dft, q } => {
                let p2 = dft.len();
                let mut out = Vec::with_capacity(z.len());
                for (c, qc) in q.iter().enumerate() {
                    let zt = DVector::from_vec(dft.forward(&z[c * p2..(c + 1) * p2]));
                    let qz = qc * zt;
                    out.extend(dft.inverse(qz.as_slice()));
                }
                out
            }
        }
    }

    /// `zᵀ Q z`.
    pub fn quad(&self, z: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        crate::numeric::dot(z, &self.apply(z))
    }
}

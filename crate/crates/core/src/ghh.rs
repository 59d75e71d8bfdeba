//! Generalized Hinging Hyperplanes regressor.
//!
//! `F(x) = Σ_n δ_n · max_m (⟨w_nm, x⟩ + b_nm)` over a six-channel feature
//! patch `x`. Each `w_nm` is a bank of six square filters, so dense evaluation
//! over an image is a set of correlations followed by pixelwise maxima.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::imagekit::{
    correlate_valid_accumulate, BorderMode, FeaturePatch, FeatureStack, Filter2d, Normalization,
    PaddedChannel, NUM_CHANNELS,
};
use crate::numeric::dot;
use crate::trainset::PcaBasis;

/// Default patch side length (10-pixel radius).
pub const DEFAULT_PATCH_SIZE: usize = 21;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// One linear piece: a filter per channel plus a scalar offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperplane {
    pub bias: f64,
    pub filters: [Filter2d; NUM_CHANNELS],
}

impl Hyperplane {
    pub fn zeros(size: usize) -> Self {
        Self {
            bias: 0.0,
            filters: std::array::from_fn(|_| Filter2d::zeros(size)),
        }
    }

    /// Builds from a flat channel-major weight vector.
    pub fn from_flat(size: usize, weights: &[f64], bias: f64) -> Result<Self> {
        let n = size * size;
        if weights.len() != NUM_CHANNELS * n {
            return Err(Error::Dimension(format!(
                "hyperplane of size {size} needs {} weights, got {}",
                NUM_CHANNELS * n,
                weights.len()
            )));
        }
        let mut filters = Vec::with_capacity(NUM_CHANNELS);
        for c in 0..NUM_CHANNELS {
            filters.push(Filter2d::new(size, weights[c * n..(c + 1) * n].to_vec())?);
        }
        Ok(Self {
            bias,
            filters: filters.try_into().expect("six channels"),
        })
    }

    /// Channel-major concatenation of the taps (the `w` vector).
    pub fn flat_weights(&self) -> Vec<f64> {
        self.filters.iter().flat_map(|f| f.taps().iter().copied()).collect()
    }

    pub fn size(&self) -> usize {
        self.filters[0].size()
    }

    /// `⟨w, x⟩` without the bias.
    pub fn linear(&self, patch: &FeaturePatch) -> f64 {
        self.filters
            .iter()
            .enumerate()
            .map(|(c, f)| dot(f.taps(), patch.channel(c)))
            .sum()
    }

    /// `⟨w, x⟩ + b`.
    pub fn response(&self, patch: &FeaturePatch) -> f64 {
        self.linear(patch) + self.bias
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.filters.iter().map(|f| dot(f.taps(), f.taps())).sum()
    }
}

/// The learned detector.
#[derive(Clone, Debug)]
pub struct GhhModel {
    patch_size: usize,
    delta: Vec<i8>,
    planes: Vec<Vec<Hyperplane>>,
    normalization: Normalization,
    /// Training-time projection; never needed for detection and not serialized.
    pub pca: Option<PcaBasis>,
    revision: u64,
}

impl PartialEq for GhhModel {
    fn eq(&self, other: &Self) -> bool {
        self.patch_size == other.patch_size
            && self.delta == other.delta
            && self.planes == other.planes
            && self.normalization == other.normalization
    }
}

impl GhhModel {
    pub fn new(
        patch_size: usize,
        delta: Vec<i8>,
        planes: Vec<Vec<Hyperplane>>,
        normalization: Normalization,
    ) -> Result<Self> {
        if patch_size % 2 == 0 {
            return Err(Error::Dimension(format!("patch size must be odd, got {patch_size}")));
        }
        if delta.is_empty() || delta.len() != planes.len() {
            return Err(Error::Dimension(format!(
                "need N >= 1 signs matching {} components, got {}",
                planes.len(),
                delta.len()
            )));
        }
        if delta.iter().any(|d| *d != 1 && *d != -1) {
            return Err(Error::InvalidArgument("component signs must be +1 or -1".into()));
        }
        let m = planes[0].len();
        if m == 0 || planes.iter().any(|row| row.len() != m) {
            return Err(Error::Dimension(
                "every component needs the same M >= 1 hyperplanes".into(),
            ));
        }
        for plane in planes.iter().flatten() {
            if plane.filters.iter().any(|f| f.size() != patch_size) {
                return Err(Error::Dimension("all filters must share the patch size".into()));
            }
            if !plane.bias.is_finite() {
                return Err(Error::Data("non-finite bias".into()));
            }
        }
        Ok(Self {
            patch_size,
            delta,
            planes,
            normalization,
            pca: None,
            revision: next_revision(),
        })
    }

    /// All-zero hyperplanes with the given signs.
    pub fn zeros(patch_size: usize, delta: Vec<i8>, m: usize) -> Result<Self> {
        let planes = delta
            .iter()
            .map(|_| (0..m).map(|_| Hyperplane::zeros(patch_size)).collect())
            .collect();
        Self::new(patch_size, delta, planes, Normalization::default())
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }

    pub fn m(&self) -> usize {
        self.planes[0].len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn radius(&self) -> usize {
        self.patch_size / 2
    }

    pub fn delta(&self) -> &[i8] {
        &self.delta
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) {
        self.normalization = normalization;
        self.revision = next_revision();
    }

    pub fn plane(&self, n: usize, m: usize) -> &Hyperplane {
        &self.planes[n][m]
    }

    pub fn planes(&self) -> &[Vec<Hyperplane>] {
        &self.planes
    }

    /// Replaces one hyperplane; bumps the revision counter.
    pub fn set_plane(&mut self, n: usize, m: usize, plane: Hyperplane) -> Result<()> {
        if plane.size() != self.patch_size {
            return Err(Error::Dimension("hyperplane size differs from model".into()));
        }
        self.planes[n][m] = plane;
        self.revision = next_revision();
        Ok(())
    }

    /// Process-wide unique id refreshed on every mutation; used to detect
    /// stale cached quantities.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Total number of spatial filters (`N · M · 6`).
    pub fn filter_count(&self) -> usize {
        self.n() * self.m() * NUM_CHANNELS
    }

    /// SHA-256 over the patch size, signs, biases and taps (hex).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.patch_size as u64).to_le_bytes());
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.m() as u64).to_le_bytes());
        for &d in &self.delta {
            h.update([d as u8]);
        }
        for plane in self.planes.iter().flatten() {
            h.update(plane.bias.to_le_bytes());
            for f in &plane.filters {
                for t in f.taps() {
                    h.update(t.to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_patch(&self, patch: &FeaturePatch) -> Result<()> {
        if patch.size() != self.patch_size {
            return Err(Error::Dimension(format!(
                "patch size {} does not match model patch size {}",
                patch.size(),
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// `Σ_n δ_n · max_m (⟨w_nm, x⟩ + b_nm)`.
pub fn score_patch(model: &GhhModel, patch: &FeaturePatch) -> Result<f64> {
    model.check_patch(patch)?;
    Ok(model
        .planes
        .iter()
        .zip(&model.delta)
        .map(|(row, &d)| {
            let best = row.iter().map(|p| p.response(patch)).fold(f64::NEG_INFINITY, f64::max);
            d as f64 * best
        })
        .sum())
}

/// Index of the hyperplane achieving the max in component `n`; lowest index on ties.
pub fn active_index(model: &GhhModel, patch: &FeaturePatch, n: usize) -> Result<usize> {
    model.check_patch(patch)?;
    if n >= model.n() {
        return Err(Error::InvalidArgument(format!("component {n} out of range")));
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (m, p) in model.planes[n].iter().enumerate() {
        let v = p.response(patch);
        if v > best_v {
            best = m;
            best_v = v;
        }
    }
    Ok(best)
}

/// Dense regressor response. Pixels within `border` of the edge are undefined (NaN).
#[derive(Clone, Debug)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    border: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    /// Builds a map, masking the border band with NaN.
    pub fn new(width: usize, height: usize, border: usize, mut scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height {
            return Err(Error::Dimension("score buffer size mismatch".into()));
        }
        for y in 0..height {
            for x in 0..width {
                let interior =
                    x >= border && y >= border && x + border < width && y + border < height;
                let s = &mut scores[y * width + x];
                if !interior {
                    *s = f64::NAN;
                } else if !s.is_finite() {
                    return Err(Error::Numerical(format!("non-finite score at ({x},{y})")));
                }
            }
        }
        Ok(Self {
            width,
            height,
            border,
            scores,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn border(&self) -> usize {
        self.border
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn is_interior(&self, x: usize, y: usize) -> bool {
        x >= self.border && y >= self.border && x + self.border < self.width && y + self.border < self.height
    }

    /// Score at an interior pixel, `None` on the border.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.is_interior(x, y).then(|| self.scores[y * self.width + x])
    }

    /// Interior pixel range `(x0, x1, y0, y1)`, half-open.
    pub fn interior(&self) -> (usize, usize, usize, usize) {
        (
            self.border,
            self.width.saturating_sub(self.border),
            self.border,
            self.height.saturating_sub(self.border),
        )
    }
}

pub(crate) fn check_stack_fits(fs: &FeatureStack, patch_size: usize) -> Result<()> {
    if fs.width() < patch_size || fs.height() < patch_size {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than the {patch_size}x{patch_size} patch",
            fs.width(),
            fs.height()
        )));
    }
    Ok(())
}

/// Combines per-hyperplane response maps into the GHH output, in place.
///
/// `responses(n, m, out)` must fill `out` with `⟨w_nm, ·⟩ + b_nm` at every pixel.
pub(crate) fn combine_responses<F>(model: &GhhModel, len: usize, mut responses: F) -> Vec<f64>
where
    F: FnMut(usize, usize, &mut [f64]),
{
    let mut total = vec![0.0; len];
    let mut best = vec![0.0; len];
    let mut buf = vec![0.0; len];
    for n in 0..model.n() {
        best.fill(f64::NEG_INFINITY);
        for m in 0..model.m() {
            responses(n, m, &mut buf);
            for (b, &v) in best.iter_mut().zip(&buf) {
                if v > *b {
                    *b = v;
                }
            }
        }
        let d = model.delta[n] as f64;
        for (t, &b) in total.iter_mut().zip(&best) {
            *t += d * b;
        }
    }
    total
}

/// Dense score map of an already standardized feature stack.
///
/// Each hyperplane response is the sum over channels of a same-size
/// (replicate-border) correlation plus bias, so interior pixels equal
/// [`score_patch`] on the patch centered there.
pub fn score_map(model: &GhhModel, fs: &FeatureStack) -> Result<ScoreMap> {
    check_stack_fits(fs, model.patch_size)?;
    let r = model.radius();
    let padded: Vec<PaddedChannel> = fs
        .channels()
        .iter()
        .map(|ch| PaddedChannel::new(ch, r, r, BorderMode::SameReplicate))
        .collect();
    let len = fs.width() * fs.height();
    let p = model.patch_size;
    let total = combine_responses(model, len, |n, m, out| {
        let plane = &model.planes[n][m];
        out.fill(plane.bias);
        for (c, src) in padded.iter().enumerate() {
            correlate_valid_accumulate(src, plane.filters[c].taps(), p, p, out);
        }
    });
    ScoreMap::new(fs.width(), fs.height(), r, total)
}

/// Convenience: raw RGB → standardized features → score map.
pub fn score_image(model: &GhhModel, img: &crate::imagekit::RgbImage) -> Result<ScoreMap> {
    let fs = FeatureStack::from_rgb(img).standardized(&model.normalization);
    score_map(model, &fs)
}

//! Images, feature stacks and convolution backends.

mod color;
mod convolve;
pub mod dft;
mod pnm;

pub use color::{rgb_to_luv, srgb_to_linear, D65_WHITE};
pub use convolve::{
    convolve2d, convolve_separable, correlate2d, correlate_separable, BorderMode,
};
pub(crate) use convolve::{correlate_valid_accumulate, PaddedChannel};
pub use pnm::{decode_image, encode_pgm, encode_ppm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of feature channels consumed by the regressor.
pub const NUM_CHANNELS: usize = 6;

/// Channel names in stack order.
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["L", "U", "V", "gx", "gy", "gmag"];

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(Error::Dimension(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Single-channel real image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ChannelImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value with replicate (clamp-to-edge) border handling.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Square filter with an odd side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter2d {
    size: usize,
    taps: Vec<f64>,
}

impl Filter2d {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Dimension(format!("filter size must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::Dimension(format!(
                "filter of size {size} needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("filter taps must be finite".into()));
        }
        Ok(Self { size, taps })
    }

    pub fn zeros(size: usize) -> Self {
        assert!(size % 2 == 1, "filter size must be odd");
        Self {
            size,
            taps: vec![0.0; size * size],
        }
    }

    /// Center tap 1, everything else 0.
    pub fn delta(size: usize) -> Self {
        let mut f = Self::zeros(size);
        let c = size / 2;
        f.taps[c * size + c] = 1.0;
        f
    }

    /// Outer product `col · rowᵀ`: `taps[i][j] = col[i] * row[j]`.
    pub fn outer(col: &[f64], row: &[f64]) -> Result<Self> {
        if col.len() != row.len() {
            return Err(Error::Dimension("outer product needs square factors".into()));
        }
        let n = col.len();
        let taps = col.iter().flat_map(|c| row.iter().map(move |r| c * r)).collect();
        Self::new(n, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    /// Rotated by 180°, turning convolution into correlation and back.
    pub fn flipped(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self {
            size: self.size,
            taps,
        }
    }
}

/// Per-channel affine standardization `(v - mean) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: f64,
    pub scale: f64,
}

impl Default for ChannelNorm {
    fn default() -> Self {
        Self {
            mean: 0.0,
            scale: 1.0,
        }
    }
}

/// Standardization constants for the six feature channels.
///
/// Color channels get their own mean and scale. The three gradient channels
/// share one scale and keep a zero mean so that `gmag = sqrt(gx² + gy²)` still
/// holds after standardization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization(pub [ChannelNorm; NUM_CHANNELS]);

impl Default for Normalization {
    fn default() -> Self {
        Self([ChannelNorm::default(); NUM_CHANNELS])
    }
}

impl Normalization {
    /// Fits the constants on every pixel of the given raw stacks.
    pub fn fit<'a>(stacks: impl IntoIterator<Item = &'a FeatureStack>) -> Result<Self> {
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut grad_sq = 0.0f64;
        let mut count = 0usize;
        for fs in stacks {
            for c in 0..3 {
                for &v in fs.channel(c).data() {
                    sums[c] += v;
                    sq[c] += v * v;
                }
            }
            for &g in fs.channel(5).data() {
                grad_sq += g * g;
            }
            count += fs.width() * fs.height();
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "cannot fit normalization on zero pixels".into(),
            ));
        }
        let n = count as f64;
        let mut out = [ChannelNorm::default(); NUM_CHANNELS];
        for c in 0..3 {
            let mean = sums[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            out[c] = ChannelNorm {
                mean,
                scale: if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 },
            };
        }
        let grad_rms = (grad_sq / n).sqrt();
        let grad_scale = if grad_rms > 1e-9 { grad_rms } else { 1.0 };
        for norm in out.iter_mut().skip(3) {
            *norm = ChannelNorm {
                mean: 0.0,
                scale: grad_scale,
            };
        }
        Ok(Self(out))
    }

    pub fn validate(&self) -> Result<()> {
        for (c, n) in self.0.iter().enumerate() {
            if !n.mean.is_finite() || !n.scale.is_finite() || n.scale <= 0.0 {
                return Err(Error::Data(format!("bad normalization for channel {c}")));
            }
        }
        let g = self.0[3];
        if self.0[4] != g || self.0[5] != g || g.mean != 0.0 {
            return Err(Error::Data(
                "gradient channels must share a zero-mean normalization".into(),
            ));
        }
        Ok(())
    }
}

/// Six-channel per-pixel features `[L, U, V, gx, gy, gmag]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    channels: [ChannelImage; NUM_CHANNELS],
}

impl FeatureStack {
    /// Raw (unstandardized) features of an RGB image.
    pub fn from_rgb(img: &RgbImage) -> Self {
        compute_feature_stack(img)
    }

    pub fn from_channels(channels: [ChannelImage; NUM_CHANNELS]) -> Result<Self> {
        let (w, h) = (channels[0].width(), channels[0].height());
        if channels.iter().any(|c| c.width() != w || c.height() != h) {
            return Err(Error::Dimension("feature channels differ in size".into()));
        }
        Ok(Self { channels })
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn channel(&self, c: usize) -> &ChannelImage {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[ChannelImage; NUM_CHANNELS] {
        &self.channels
    }

    /// Applies per-channel standardization.
    pub fn standardized(&self, norm: &Normalization) -> Self {
        let channels = std::array::from_fn(|c| {
            let ChannelNorm { mean, scale } = norm.0[c];
            self.channels[c].map(|v| (v - mean) / scale)
        });
        Self { channels }
    }

    /// Extracts the `size × size` patch centered at `(cx, cy)`, channel-major.
    pub fn patch(&self, cx: usize, cy: usize, size: usize) -> Result<FeaturePatch> {
        let r = size / 2;
        if size % 2 == 0 {
            return Err(Error::Dimension(format!("patch size must be odd, got {size}")));
        }
        if cx < r || cy < r || cx + r >= self.width() || cy + r >= self.height() {
            return Err(Error::Dimension(format!(
                "patch of radius {r} at ({cx},{cy}) leaves the {}x{} image",
                self.width(),
                self.height()
            )));
        }
        let mut data = Vec::with_capacity(NUM_CHANNELS * size * size);
        for ch in &self.channels {
            for y in cy - r..=cy + r {
                let row = &ch.data()[y * ch.width() + cx - r..=y * ch.width() + cx + r];
                data.extend_from_slice(row);
            }
        }
        Ok(FeaturePatch { size, data })
    }
}

/// A feature-space patch: 6 channels of `size × size`, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePatch {
    size: usize,
    data: Vec<f64>,
}

impl FeaturePatch {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || data.len() != NUM_CHANNELS * size * size {
            return Err(Error::Dimension(format!(
                "patch of size {size} needs {} values, got {}",
                NUM_CHANNELS * size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Central differences with replicate borders: `(gx, gy)`.
pub fn central_gradients(ch: &ChannelImage) -> (ChannelImage, ChannelImage) {
    let (w, h) = (ch.width(), ch.height());
    let gx = ChannelImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (ch.at_clamped(x + 1, y) - ch.at_clamped(x - 1, y))
    });
    let gy = ChannelImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (ch.at_clamped(x, y + 1) - ch.at_clamped(x, y - 1))
    });
    (gx, gy)
}

/// Raw `[L, U, V, gx, gy, gmag]` features; gradients are taken on L.
pub fn compute_feature_stack(img: &RgbImage) -> FeatureStack {
    let [l, u, v] = rgb_to_luv(img);
    let (gx, gy) = central_gradients(&l);
    let gmag = ChannelImage::from_raw(
        gx.width(),
        gx.height(),
        gx.data()
            .iter()
            .zip(gy.data())
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect(),
    );
    FeatureStack {
        channels: [l, u, v, gx, gy, gmag],
    }
}

//! Difference-of-Gaussians candidate detector and external keypoint files.

use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::error::{Error, Result};
use crate::imagekit::{correlate_separable, BorderMode, ChannelImage};

/// Multi-scale DoG extrema detection on a single channel (no downsampling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DogConfig {
    /// Blur of the first level.
    pub sigma0: f64,
    /// Levels per doubling of sigma.
    pub intervals: usize,
    /// Number of sigma doublings searched.
    pub octaves: usize,
    /// Minimum |DoG| after the input is scaled by `input_scale`.
    pub contrast_threshold: f64,
    /// Principal-curvature ratio limit for rejecting edge responses.
    pub edge_ratio: f64,
    /// Multiplier applied to the input before blurring (L ∈ [0,100] → [0,1]).
    pub input_scale: f64,
    /// Pixels excluded at the image border.
    pub border: usize,
}

impl Default for DogConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.6,
            intervals: 3,
            octaves: 2,
            contrast_threshold: 0.01,
            edge_ratio: 10.0,
            input_scale: 0.01,
            border: 2,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Isotropic Gaussian blur with replicate borders.
pub fn gaussian_blur(ch: &ChannelImage, sigma: f64) -> ChannelImage {
    let k = gaussian_kernel(sigma);
    correlate_separable(ch, &k, &k, BorderMode::SameReplicate).expect("odd kernel")
}

/// Detects scale-space extrema of the DoG stack.
///
/// Returns integer-located candidates sorted by `|response|` descending
/// (ties broken by position, then scale). `scale` is the blur sigma of the
/// level the extremum was found at.
pub fn detect_candidates(img: &ChannelImage, cfg: &DogConfig, image_id: usize) -> Vec<Candidate> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 || cfg.intervals == 0 || cfg.octaves == 0 {
        return Vec::new();
    }
    let base = img.map(|v| v * cfg.input_scale);
    let levels = cfg.intervals * cfg.octaves + 3;
    let k = 2f64.powf(1.0 / cfg.intervals as f64);
    let sigmas: Vec<f64> = (0..levels).map(|i| cfg.sigma0 * k.powi(i as i32)).collect();
    let blurred: Vec<ChannelImage> = sigmas.iter().map(|&s| gaussian_blur(&base, s)).collect();
    let dog: Vec<Vec<f64>> = blurred
        .windows(2)
        .map(|p| p[1].data().iter().zip(p[0].data()).map(|(a, b)| a - b).collect())
        .collect();

    let border = cfg.border.max(1);
    let edge_limit = (cfg.edge_ratio + 1.0).powi(2) / cfg.edge_ratio;
    let mut out = Vec::new();
    for layer in 1..dog.len() - 1 {
        let d = &dog[layer];
        for y in border..h.saturating_sub(border) {
            for x in border..w.saturating_sub(border) {
                let v = d[y * w + x];
                if v.abs() <= cfg.contrast_threshold {
                    continue;
                }
                if !is_strict_extremum(&dog[layer - 1..=layer + 1], w, x, y, v) {
                    continue;
                }
                let at = |dx: isize, dy: isize| d[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let dxx = at(1, 0) + at(-1, 0) - 2.0 * v;
                let dyy = at(0, 1) + at(0, -1) - 2.0 * v;
                let dxy = 0.25 * (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1));
                let tr = dxx + dyy;
                let det = dxx * dyy - dxy * dxy;
                if det <= 0.0 || tr * tr / det >= edge_limit {
                    continue;
                }
                out.push(Candidate {
                    x: x as f64,
                    y: y as f64,
                    scale: sigmas[layer],
                    response: v,
                    image_id,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.response
            .abs()
            .total_cmp(&a.response.abs())
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.scale.total_cmp(&b.scale))
    });
    out
}

fn is_strict_extremum(layers: &[Vec<f64>], w: usize, x: usize, y: usize, v: f64) -> bool {
    let maximum = v > 0.0;
    for (li, layer) in layers.iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if li == 1 && xx == x && yy == y {
                    continue;
                }
                let u = layer[yy * w + xx];
                if (maximum && u >= v) || (!maximum && u <= v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Parses `x y scale response` lines (blank lines and `#` comments ignored).
pub fn parse_keypoint_file(text: &str, image_id: usize) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("keypoint line {}: {e}", lineno + 1)))?;
        if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) || vals[2] <= 0.0 {
            return Err(Error::Data(format!(
                "keypoint line {} must be `x y scale response` with scale > 0",
                lineno + 1
            )));
        }
        out.push(Candidate {
            x: vals[0],
            y: vals[1],
            scale: vals[2],
            response: vals[3],
            image_id,
        });
    }
    Ok(out)
}

//! sRGB → CIE 1976 L\*u\*v\* (D65).

use super::{ChannelImage, RgbImage};

/// Linear sRGB → XYZ, D65.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white as the image of linear (1,1,1), so white maps to u = v = 0.
pub const D65_WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// Inverse sRGB companding of an 8-bit sample.
pub fn srgb_to_linear(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn uv_prime(x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
    let d = x + 15.0 * y + 3.0 * z;
    if d <= 0.0 {
        None
    } else {
        Some((4.0 * x / d, 9.0 * y / d))
    }
}

fn pixel_to_luv(lut: &[f64; 256], p: [u8; 3]) -> [f64; 3] {
    let rgb = [lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]];
    let xyz: [f64; 3] = std::array::from_fn(|i| {
        SRGB_TO_XYZ[i][0] * rgb[0] + SRGB_TO_XYZ[i][1] * rgb[1] + SRGB_TO_XYZ[i][2] * rgb[2]
    });
    let yr = xyz[1] / D65_WHITE[1];
    let l = if yr > EPSILON {
        116.0 * yr.cbrt() - 16.0
    } else {
        KAPPA * yr
    };
    let (un, vn) = uv_prime(D65_WHITE[0], D65_WHITE[1], D65_WHITE[2]).expect("white is nonzero");
    match uv_prime(xyz[0], xyz[1], xyz[2]) {
        Some((up, vp)) => [l, 13.0 * l * (up - un), 13.0 * l * (vp - vn)],
        None => [0.0, 0.0, 0.0],
    }
}

/// Converts to three channels `[L, u, v]`; `L ∈ [0, 100]`.
pub fn rgb_to_luv(img: &RgbImage) -> [ChannelImage; 3] {
    let lut: [f64; 256] = std::array::from_fn(|i| srgb_to_linear(i as u8));
    let n = img.width() * img.height();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, p) in img.data().chunks_exact(3).enumerate() {
        let luv = pixel_to_luv(&lut, [p[0], p[1], p[2]]);
        for c in 0..3 {
            out[c][i] = luv[c];
        }
    }
    out.map(|d| ChannelImage::from_raw(img.width(), img.height(), d))
}

//! Direct and separable 2D convolution.
//!
//! Every public entry point follows the usual convention: `convolve*` flips the
//! kernel, `correlate*` does not. Output size depends on [`BorderMode`].

use rayon::prelude::*;

use super::{ChannelImage, Filter2d};
use crate::error::{Error, Result};
use crate::numeric::axpy;

/// How samples outside the image are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BorderMode {
    /// Only positions where the kernel fits entirely; output shrinks by `size - 1`.
    Valid,
    /// Same-size output, out-of-range samples clamp to the nearest edge pixel.
    SameReplicate,
    /// Same-size output, indices wrap around (periodic image).
    Circular,
}

/// A channel padded for a given border mode so that a valid-mode pass over it
/// produces the requested output.
pub(crate) struct PaddedChannel {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PaddedChannel {
    pub fn new(ch: &ChannelImage, pad_x: usize, pad_y: usize, mode: BorderMode) -> Self {
        let (w, h) = (ch.width() as isize, ch.height() as isize);
        if mode == BorderMode::Valid || (pad_x == 0 && pad_y == 0) {
            return Self {
                width: ch.width(),
                height: ch.height(),
                data: ch.data().to_vec(),
            };
        }
        let pw = ch.width() + 2 * pad_x;
        let ph = ch.height() + 2 * pad_y;
        let mut data = Vec::with_capacity(pw * ph);
        let index = |v: isize, n: isize| -> usize {
            match mode {
                BorderMode::Circular => v.rem_euclid(n) as usize,
                _ => v.clamp(0, n - 1) as usize,
            }
        };
        for py in 0..ph as isize {
            let sy = index(py - pad_y as isize, h);
            let row = &ch.data()[sy * ch.width()..(sy + 1) * ch.width()];
            for px in 0..pw as isize {
                data.push(row[index(px - pad_x as isize, w)]);
            }
        }
        Self {
            width: pw,
            height: ph,
            data,
        }
    }
}

/// `out[y][x] += Σ_ij taps[i][j] · src[y+i][x+j]` over the valid region of `src`.
pub(crate) fn correlate_valid_accumulate(
    src: &PaddedChannel,
    taps: &[f64],
    rows: usize,
    cols: usize,
    out: &mut [f64],
) {
    let out_w = src.width + 1 - cols;
    let out_h = src.height + 1 - rows;
    debug_assert_eq!(out.len(), out_w * out_h);
    out.par_chunks_mut(out_w).enumerate().for_each(|(y, out_row)| {
        for i in 0..rows {
            let base = (y + i) * src.width;
            let src_row = &src.data[base..base + src.width];
            for j in 0..cols {
                let t = taps[i * cols + j];
                if t != 0.0 {
                    axpy(t, &src_row[j..j + out_w], out_row);
                }
            }
        }
    });
}

/// Horizontal 1D correlation accumulated into `out` (valid along x only).
pub(crate) fn correlate_rows_accumulate(src: &PaddedChannel, row: &[f64], out: &mut [f64]) {
    let out_w = src.width + 1 - row.len();
    debug_assert_eq!(out.len(), out_w * src.height);
    out.par_chunks_mut(out_w).enumerate().for_each(|(y, out_row)| {
        let src_row = &src.data[y * src.width..(y + 1) * src.width];
        for (j, &t) in row.iter().enumerate() {
            if t != 0.0 {
                axpy(t, &src_row[j..j + out_w], out_row);
            }
        }
    });
}

fn check_valid(ch: &ChannelImage, rows: usize, cols: usize) -> Result<()> {
    if rows > ch.height() || cols > ch.width() {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} kernel does not fit a {}x{} image in valid mode",
            ch.height(),
            ch.width()
        )));
    }
    Ok(())
}

fn output_dims(ch: &ChannelImage, rows: usize, cols: usize, mode: BorderMode) -> (usize, usize) {
    match mode {
        BorderMode::Valid => (ch.width() + 1 - cols, ch.height() + 1 - rows),
        _ => (ch.width(), ch.height()),
    }
}

/// Cross-correlation with a square filter.
pub fn correlate2d(ch: &ChannelImage, f: &Filter2d, mode: BorderMode) -> Result<ChannelImage> {
    let size = f.size();
    if mode == BorderMode::Valid {
        check_valid(ch, size, size)?;
    }
    let r = f.radius();
    let src = PaddedChannel::new(ch, r, r, mode);
    let (w, h) = output_dims(ch, size, size, mode);
    let mut out = vec![0.0; w * h];
    correlate_valid_accumulate(&src, f.taps(), size, size, &mut out);
    Ok(ChannelImage::from_raw(w, h, out))
}

/// True convolution (kernel rotated by 180°).
pub fn convolve2d(ch: &ChannelImage, f: &Filter2d, mode: BorderMode) -> Result<ChannelImage> {
    correlate2d(ch, &f.flipped(), mode)
}

/// Correlation with the outer-product kernel `col · rowᵀ` in two 1D passes.
pub fn correlate_separable(
    ch: &ChannelImage,
    row: &[f64],
    col: &[f64],
    mode: BorderMode,
) -> Result<ChannelImage> {
    if row.is_empty() || col.is_empty() || row.len() % 2 == 0 || col.len() % 2 == 0 {
        return Err(Error::Dimension(format!(
            "separable factors need odd lengths, got row {} col {}",
            row.len(),
            col.len()
        )));
    }
    if mode == BorderMode::Valid {
        check_valid(ch, col.len(), row.len())?;
    }
    let (rx, ry) = (row.len() / 2, col.len() / 2);

    // Horizontal pass (pads x only).
    let src = PaddedChannel::new(ch, rx, 0, mode);
    let mid_w = src.width + 1 - row.len();
    let mut mid = vec![0.0; mid_w * ch.height()];
    correlate_rows_accumulate(&src, row, &mut mid);
    let mid = ChannelImage::from_raw(mid_w, ch.height(), mid);

    // Vertical pass (pads y only), expressed as a `len × 1` kernel.
    let src = PaddedChannel::new(&mid, 0, ry, mode);
    let (w, h) = output_dims(ch, col.len(), row.len(), mode);
    let mut out = vec![0.0; w * h];
    correlate_valid_accumulate(&src, col, col.len(), 1, &mut out);
    Ok(ChannelImage::from_raw(w, h, out))
}

/// Convolution with the outer-product kernel `col · rowᵀ`.
pub fn convolve_separable(
    ch: &ChannelImage,
    row: &[f64],
    col: &[f64],
    mode: BorderMode,
) -> Result<ChannelImage> {
    let row: Vec<f64> = row.iter().rev().copied().collect();
    let col: Vec<f64> = col.iter().rev().copied().collect();
    correlate_separable(ch, &row, &col, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex64;

    fn random_channel(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ChannelImage {
        ChannelImage::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_filter(rng: &mut ChaCha8Rng, size: usize) -> Filter2d {
        Filter2d::new(size, (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Brute-force 2D DFT, independent of the FFT library used elsewhere.
    fn naive_dft(data: &[Complex64], w: usize, h: usize, inverse: bool) -> Vec<Complex64> {
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = vec![Complex64::new(0.0, 0.0); w * h];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                        acc += data[y * w + x] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[ky * w + kx] = if inverse { acc / (w * h) as f64 } else { acc };
            }
        }
        out
    }

    #[test]
    fn delta_filter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_channel(&mut rng, 13, 9);
        for mode in [BorderMode::SameReplicate, BorderMode::Circular] {
            let out = convolve2d(&img, &Filter2d::delta(5), mode).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn ones_valid_sums_taps() {
        let img = ChannelImage::from_fn(3, 3, |_, _| 1.0);
        let f = Filter2d::new(3, vec![1.0; 9]).unwrap();
        let out = convolve2d(&img, &f, BorderMode::Valid).unwrap();
        assert_eq!((out.width(), out.height()), (1, 1));
        assert_eq!(out.at(0, 0), 9.0);
    }

    #[test]
    fn valid_rejects_oversized_filter() {
        let img = ChannelImage::zeros(4, 8);
        let f = Filter2d::zeros(5);
        assert!(matches!(
            convolve2d(&img, &f, BorderMode::Valid),
            Err(Error::Dimension(_))
        ));
        assert!(convolve_separable(&img, &[1.0; 5], &[1.0], BorderMode::Valid).is_err());
    }

    #[test]
    fn convolution_flips_the_kernel() {
        // An impulse convolved with f reproduces f (not its flip).
        let img = ChannelImage::from_fn(7, 7, |x, y| if x == 3 && y == 3 { 1.0 } else { 0.0 });
        let taps: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let f = Filter2d::new(3, taps.clone()).unwrap();
        let out = convolve2d(&img, &f, BorderMode::SameReplicate).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(out.at(2 + j, 2 + i), taps[i * 3 + j]);
            }
        }
    }

    #[test]
    fn circular_matches_frequency_domain_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_channel(&mut rng, 16, 16);
        let f = random_filter(&mut rng, 5);
        let spatial = convolve2d(&img, &f, BorderMode::Circular).unwrap();

        // Zero-pad the kernel to image size with its center at the origin.
        let mut padded = vec![Complex64::new(0.0, 0.0); 256];
        for i in 0..5 {
            for j in 0..5 {
                let y = (i as isize - 2).rem_euclid(16) as usize;
                let x = (j as isize - 2).rem_euclid(16) as usize;
                padded[y * 16 + x] = Complex64::new(f.taps()[i * 5 + j], 0.0);
            }
        }
        let img_c: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let a = naive_dft(&img_c, 16, 16, false);
        let b = naive_dft(&padded, 16, 16, false);
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let back = naive_dft(&prod, 16, 16, true);
        let scale = spatial.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (s, f) in spatial.data().iter().zip(&back) {
            assert!((s - f.re).abs() <= 1e-10, "{s} vs {}", f.re);
            assert!((s - f.re).abs() <= 1e-9 * scale);
            assert!(f.im.abs() < 1e-10);
        }
    }

    #[test]
    fn separable_identity_and_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = random_channel(&mut rng, 20, 17);
        let out = convolve_separable(&img, &[1.0], &[1.0], BorderMode::SameReplicate).unwrap();
        assert_eq!(out, img);
        let ones = [1.0; 5];
        let boxf = Filter2d::outer(&ones, &ones).unwrap();
        for mode in [BorderMode::Valid, BorderMode::SameReplicate, BorderMode::Circular] {
            let a = convolve_separable(&img, &ones, &ones, mode).unwrap();
            let b = convolve2d(&img, &boxf, mode).unwrap();
            assert_eq!((a.width(), a.height()), (b.width(), b.height()));
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn separable_matches_outer_product(seed in any::<u64>(), mode_ix in 0usize..3) {
            let mode = [BorderMode::Valid, BorderMode::SameReplicate, BorderMode::Circular][mode_ix];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_channel(&mut rng, 15, 12);
            let row: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let col: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = convolve_separable(&img, &row, &col, mode).unwrap();
            let b = convolve2d(&img, &Filter2d::outer(&col, &row).unwrap(), mode).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn convolution_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_channel(&mut rng, 11, 10);
            let y = random_channel(&mut rng, 11, 10);
            let f = random_filter(&mut rng, 3);
            let mix = ChannelImage::from_fn(11, 10, |i, j| a * x.at(i, j) + b * y.at(i, j));
            for mode in [BorderMode::Valid, BorderMode::SameReplicate, BorderMode::Circular] {
                let lhs = convolve2d(&mix, &f, mode).unwrap();
                let cx = convolve2d(&x, &f, mode).unwrap();
                let cy = convolve2d(&y, &f, mode).unwrap();
                for k in 0..lhs.data().len() {
                    let rhs = a * cx.data()[k] + b * cy.data()[k];
                    prop_assert!((lhs.data()[k] - rhs).abs() <= 1e-10);
                }
            }
        }
    }
}

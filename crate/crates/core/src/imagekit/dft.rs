//! Square 2D DFT and an orthonormal real-valued Fourier coordinate system.
//!
//! A real `p × p` signal has a Hermitian-symmetric spectrum, so its `p²`
//! degrees of freedom fit in a real vector: for each conjugate pair `(k, -k)`
//! we keep `√2·Re F[k] / p` and `√2·Im F[k] / p`, and for self-conjugate
//! frequencies (`k ≡ -k`) just `F[k] / p`. The map is orthogonal, so inner
//! products and norms carry over from the spatial domain unchanged, and the
//! transpose of the forward map is its inverse.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// One coordinate slot of the real layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    /// Self-conjugate frequency: one real coordinate.
    Real { k: usize },
    /// Representative of a conjugate pair: `(re, im)` coordinates.
    Pair { k: usize, conj: usize },
}

/// Forward/inverse transforms between spatial `p × p` arrays (row-major) and
/// real Fourier coordinates.
#[derive(Clone)]
pub struct RealDft2 {
    size: usize,
    slots: Vec<Slot>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealDft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealDft2").field("size", &self.size).finish()
    }
}

impl RealDft2 {
    pub fn new(size: usize) -> Self {
        assert!(size > 0);
        let mut slots = Vec::new();
        for k1 in 0..size {
            for k2 in 0..size {
                let k = k1 * size + k2;
                let conj = ((size - k1) % size) * size + (size - k2) % size;
                if conj == k {
                    slots.push(Slot::Real { k });
                } else if k < conj {
                    slots.push(Slot::Pair { k, conj });
                }
            }
        }
        let mut planner = FftPlanner::new();
        Self {
            size,
            slots,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of real coordinates (`p²`).
    pub fn len(&self) -> usize {
        self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    fn fft2(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let p = self.size;
        for row in data.chunks_exact_mut(p) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); p];
        for x in 0..p {
            for y in 0..p {
                col[y] = data[y * p + x];
            }
            plan.process(&mut col);
            for y in 0..p {
                data[y * p + x] = col[y];
            }
        }
    }

    /// Unnormalized complex spectrum `F[k] = Σ f[u] e^{-2πi k·u/p}`.
    pub fn spectrum(&self, spatial: &[f64]) -> Vec<Complex64> {
        assert_eq!(spatial.len(), self.len());
        let mut buf: Vec<Complex64> = spatial.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, &self.forward);
        buf
    }

    /// Spatial → real Fourier coordinates.
    pub fn forward(&self, spatial: &[f64]) -> Vec<f64> {
        let spec = self.spectrum(spatial);
        let norm = self.size as f64;
        let s2 = std::f64::consts::SQRT_2;
        let mut out = Vec::with_capacity(self.len());
        for slot in &self.slots {
            match *slot {
                Slot::Real { k } => out.push(spec[k].re / norm),
                Slot::Pair { k, .. } => {
                    out.push(s2 * spec[k].re / norm);
                    out.push(s2 * spec[k].im / norm);
                }
            }
        }
        out
    }

    /// Real Fourier coordinates → spatial.
    pub fn inverse(&self, coords: &[f64]) -> Vec<f64> {
        assert_eq!(coords.len(), self.len());
        let norm = self.size as f64;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut spec = vec![Complex64::new(0.0, 0.0); self.len()];
        let mut i = 0;
        for slot in &self.slots {
            match *slot {
                Slot::Real { k } => {
                    spec[k] = Complex64::new(norm * coords[i], 0.0);
                    i += 1;
                }
                Slot::Pair { k, conj } => {
                    let z = Complex64::new(norm * h * coords[i], norm * h * coords[i + 1]);
                    spec[k] = z;
                    spec[conj] = z.conj();
                    i += 2;
                }
            }
        }
        self.fft2(&mut spec, &self.inverse);
        let n = self.len() as f64;
        spec.iter().map(|z| z.re / n).collect()
    }

    /// Circular cross-correlation operator of a signal, in real coordinates.
    ///
    /// For the signal `x` (given by its real coordinates) returns the block
    /// diagonal matrix `D` with `forward(w ⋆ x) = D · forward(w)`, where
    /// `(w ⋆ x)[s] = Σ_u w[u] x[u + s]`. Blocks are `1×1` for self-conjugate
    /// frequencies and `2×2` (symmetric) for conjugate pairs.
    pub fn correlation_blocks(&self, x: &[f64]) -> CorrelationBlocks {
        assert_eq!(x.len(), self.len());
        let root_n = self.size as f64;
        let a = root_n * std::f64::consts::FRAC_1_SQRT_2;
        let mut blocks = Vec::with_capacity(self.slots.len());
        let mut i = 0;
        for slot in &self.slots {
            match slot {
                Slot::Real { .. } => {
                    blocks.push(Block::Scalar(root_n * x[i]));
                    i += 1;
                }
                Slot::Pair { .. } => {
                    // [[c, s], [s, -c]] scaled by √n/√2.
                    blocks.push(Block::Pair(a * x[i], a * x[i + 1]));
                    i += 2;
                }
            }
        }
        CorrelationBlocks { blocks }
    }
}

#[derive(Clone, Copy, Debug)]
enum Block {
    Scalar(f64),
    Pair(f64, f64),
}

/// Symmetric block-diagonal correlation operator; see [`RealDft2::correlation_blocks`].
#[derive(Clone, Debug)]
pub struct CorrelationBlocks {
    blocks: Vec<Block>,
}

impl CorrelationBlocks {
    /// `D v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len());
        let mut i = 0;
        for b in &self.blocks {
            match *b {
                Block::Scalar(d) => {
                    out.push(d * v[i]);
                    i += 1;
                }
                Block::Pair(c, s) => {
                    out.push(c * v[i] + s * v[i + 1]);
                    out.push(s * v[i] - c * v[i + 1]);
                    i += 2;
                }
            }
        }
        out
    }

    /// Diagonal of `DᵀD`; each pair block squares to `(c² + s²) I`.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match *b {
                Block::Scalar(d) => out.push(d * d),
                Block::Pair(c, s) => {
                    out.push(c * c + s * s);
                    out.push(c * c + s * s);
                }
            }
        }
        out
    }
}

/// Circular cross-correlation `(w ⋆ x)[s] = Σ_u w[u] x[u + s]` on `p × p` arrays.
pub fn circular_correlation(w: &[f64], x: &[f64], size: usize) -> Vec<f64> {
    let p = size;
    let mut out = vec![0.0; p * p];
    for sy in 0..p {
        for sx in 0..p {
            let mut acc = 0.0;
            for uy in 0..p {
                let yy = (uy + sy) % p;
                for ux in 0..p {
                    acc += w[uy * p + ux] * x[yy * p + (ux + sx) % p];
                }
            }
            out[sy * p + sx] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_is_orthogonal() {
        for p in [1usize, 2, 3, 4, 5, 7] {
            let dft = RealDft2::new(p);
            let n = p * p;
            let basis: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    dft.forward(&e)
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = (0..n).map(|k| basis[i][k] * basis[j][k]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-12, "p={p} ({i},{j}) -> {d}");
                }
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in [3usize, 4, 9] {
            let dft = RealDft2::new(p);
            let x = random(&mut rng, p * p);
            let back = dft.inverse(&dft.forward(&x));
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_blocks_match_spatial_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [3usize, 4, 5, 8] {
            let dft = RealDft2::new(p);
            let w = random(&mut rng, p * p);
            let x = random(&mut rng, p * p);
            let spatial = circular_correlation(&w, &x, p);
            let d = dft.correlation_blocks(&dft.forward(&x));
            let via = d.apply(&dft.forward(&w));
            let expect = dft.forward(&spatial);
            for (a, b) in via.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10, "p={p}: {a} vs {b}");
            }
            // center of the correlation is the inner product
            let ip: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((spatial[0] - ip).abs() < 1e-12);
        }
    }
}

//! Seeded synthetic illumination stacks.
//!
//! One static scene (smooth background, Gaussian blobs and filled squares)
//! rendered under varying global gain, color tint and gamma plus a smooth
//! local shading field and sensor noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{encode_ppm, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub blobs: usize,
    pub squares: usize,
    pub images: usize,
    /// Minimum distance between structure centers and to the border.
    pub spacing: f64,
    /// Standard deviation of the additive noise, in 8-bit units.
    pub noise: f64,
    /// Peak-to-peak amplitude of the local shading field.
    pub shading: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            blobs: 24,
            squares: 8,
            images: 20,
            spacing: 22.0,
            noise: 1.5,
            shading: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StructureKind {
    Blob,
    Square,
}

/// One planted structure of the scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub kind: StructureKind,
    pub x: f64,
    pub y: f64,
    /// Blob sigma or square half side.
    pub size: f64,
    /// Reflectance change, per RGB channel.
    pub contrast: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct SynthStack {
    pub structures: Vec<Structure>,
    pub images: Vec<RgbImage>,
    pub ids: Vec<String>,
}

struct Background {
    base: [f64; 3],
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Background {
    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let t: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (fx * x + fy * y + phase).cos())
            .sum();
        self.base.map(|b| b + t)
    }
}

fn place(rng: &mut ChaCha8Rng, cfg: &SynthConfig, taken: &[(f64, f64)]) -> Result<(f64, f64)> {
    let m = cfg.spacing;
    if cfg.width as f64 <= 2.0 * m || cfg.height as f64 <= 2.0 * m {
        return Err(Error::InvalidArgument("image too small for the structure spacing".into()));
    }
    for _ in 0..10_000 {
        let p = (
            rng.random_range(m..cfg.width as f64 - m),
            rng.random_range(m..cfg.height as f64 - m),
        );
        if taken.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= m) {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument("could not place all structures; reduce their number or spacing".into()))
}

fn random_contrast(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let level = rng.random_range(0.2..0.45);
    std::array::from_fn(|_| sign * level * rng.random_range(0.7..1.0))
}

fn reflectance(bg: &Background, structures: &[Structure], x: f64, y: f64) -> [f64; 3] {
    let mut r = bg.at(x, y);
    for s in structures {
        let (dx, dy) = (x - s.x, y - s.y);
        let weight = match s.kind {
            StructureKind::Blob => {
                let d2 = dx * dx + dy * dy;
                if d2 > 16.0 * s.size * s.size {
                    continue;
                }
                (-d2 / (2.0 * s.size * s.size)).exp()
            }
            StructureKind::Square => {
                // Box with a one-pixel linear ramp at the edges.
                let ex = (s.size + 0.5 - dx.abs()).clamp(0.0, 1.0);
                let ey = (s.size + 0.5 - dy.abs()).clamp(0.0, 1.0);
                ex * ey
            }
        };
        for c in 0..3 {
            r[c] += weight * s.contrast[c];
        }
    }
    r.map(|v| v.clamp(0.02, 1.0))
}

struct Lighting {
    gain: [f64; 3],
    gamma: f64,
    ramp: (f64, f64, f64),
    shadow: (f64, f64, f64, f64),
}

impl Lighting {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let g = rng.random_range(0.55..1.25);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let half = 0.5 * cfg.shading;
        Self {
            gain: std::array::from_fn(|_| g * rng.random_range(0.88..1.12)),
            gamma: rng.random_range(0.8..1.25),
            ramp: (angle.cos(), angle.sin(), rng.random_range(0.0..half)),
            shadow: (
                rng.random_range(0.0..cfg.width as f64),
                rng.random_range(0.0..cfg.height as f64),
                rng.random_range(0.25..0.5) * cfg.width.min(cfg.height) as f64,
                rng.random_range(0.0..half),
            ),
        }
    }

    fn shade(&self, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let (cx, cy) = (x / w - 0.5, y / h - 0.5);
        let ramp = 1.0 + self.ramp.2 * 2.0 * (self.ramp.0 * cx + self.ramp.1 * cy);
        let (sx, sy, sr, sa) = self.shadow;
        let d2 = (x - sx).powi(2) + (y - sy).powi(2);
        ramp * (1.0 - sa * (-d2 / (2.0 * sr * sr)).exp())
    }
}

/// Renders the stack; image ids are `img_00`, `img_01`, ...
pub fn generate_stack(cfg: &SynthConfig) -> Result<SynthStack> {
    if cfg.width == 0 || cfg.height == 0 || cfg.images == 0 {
        return Err(Error::InvalidArgument("empty synthetic stack".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bg = Background {
        base: std::array::from_fn(|_| rng.random_range(0.4..0.6)),
        waves: (0..3)
            .map(|_| {
                let f = rng.random_range(0.01..0.03);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (f * a.cos(), f * a.sin(), rng.random_range(0.0..std::f64::consts::TAU), 0.04)
            })
            .collect(),
    };
    let mut taken = Vec::new();
    let mut structures = Vec::new();
    for i in 0..cfg.blobs + cfg.squares {
        let (x, y) = place(&mut rng, cfg, &taken)?;
        taken.push((x, y));
        let (kind, size) = if i < cfg.blobs {
            (StructureKind::Blob, rng.random_range(2.0..4.0))
        } else {
            (StructureKind::Square, rng.random_range(3.0..6.0))
        };
        structures.push(Structure {
            kind,
            x: x.round(),
            y: y.round(),
            size,
            contrast: random_contrast(&mut rng),
        });
    }
    let (w, h) = (cfg.width, cfg.height);
    let refl: Vec<[f64; 3]> = (0..w * h)
        .map(|p| reflectance(&bg, &structures, (p % w) as f64, (p / w) as f64))
        .collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut images = Vec::with_capacity(cfg.images);
    let mut ids = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let light = Lighting::random(&mut rng, cfg);
        let mut data = Vec::with_capacity(3 * w * h);
        for (p, r) in refl.iter().enumerate() {
            let s = light.shade((p % w) as f64, (p / w) as f64, w as f64, h as f64);
            for c in 0..3 {
                let v = (r[c] * light.gain[c] * s).clamp(0.0, 1.0).powf(light.gamma);
                let v = 255.0 * v + noise.sample(&mut rng);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        images.push(RgbImage::new(w, h, data)?);
        ids.push(format!("img_{i:02}"));
    }
    Ok(SynthStack {
        structures,
        images,
        ids,
    })
}

impl SynthStack {
    /// Writes `<id>.ppm` per image plus `structures.json`. With `train`
    /// given, the first `train` images go to `train/` and the rest to `test/`.
    pub fn write(&self, dir: &Path, train: Option<usize>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (img, id)) in self.images.iter().zip(&self.ids).enumerate() {
            let sub = match train {
                Some(t) if i < t => dir.join("train"),
                Some(_) => dir.join("test"),
                None => dir.to_path_buf(),
            };
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let path = sub.join(format!("{id}.ppm"));
            std::fs::write(&path, encode_ppm(img)).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("structures.json");
        let text = serde_json::to_string_pretty(&self.structures)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_is_deterministic_and_sized() {
        let cfg = SynthConfig {
            width: 96,
            height: 80,
            blobs: 4,
            squares: 2,
            images: 3,
            spacing: 14.0,
            ..Default::default()
        };
        let a = generate_stack(&cfg).unwrap();
        let b = generate_stack(&cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.images.len(), 3);
        assert_eq!(a.structures.len(), 6);
        assert!(a.images.iter().all(|im| im.width() == 96 && im.height() == 80));
        assert_ne!(a.images[0], a.images[1]);
        for (i, s) in a.structures.iter().enumerate() {
            assert!(s.x >= 14.0 && s.y >= 14.0 && s.x <= 82.0 && s.y <= 66.0);
            for t in &a.structures[i + 1..] {
                assert!((s.x - t.x).hypot(s.y - t.y) >= 13.0);
            }
        }
        let other = generate_stack(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other.images[0], a.images[0]);
    }

    #[test]
    fn split_write_layout() {
        let cfg = SynthConfig {
            width: 48,
            height: 48,
            blobs: 2,
            squares: 1,
            images: 4,
            spacing: 12.0,
            ..Default::default()
        };
        let st = generate_stack(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        st.write(dir.path(), Some(3)).unwrap();
        let count = |d: &str| std::fs::read_dir(dir.path().join(d)).unwrap().count();
        assert_eq!((count("train"), count("test")), (3, 1));
        let back = crate::imagekit::decode_image(&std::fs::read(dir.path().join("test/img_03.ppm")).unwrap()).unwrap();
        assert_eq!(back, st.images[3]);
        assert!(dir.path().join("structures.json").exists());
    }

    #[test]
    fn default_scene_has_enough_structures() {
        let cfg = SynthConfig::default();
        assert!(cfg.blobs + cfg.squares >= 30);
        assert_eq!(cfg.images, 20);
    }

    #[test]
    fn overcrowded_scene_is_rejected() {
        let cfg = SynthConfig {
            width: 40,
            height: 40,
            blobs: 30,
            spacing: 10.0,
            ..Default::default()
        };
        assert!(generate_stack(&cfg).is_err());
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnchorLocation, GroupSite, ImageStack, Sample, SampleGroup, TrainingSet};
use crate::error::{Error, Result};
use crate::imagekit::{FeatureStack, Normalization};

/// Patch geometry and negative sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub patch_size: usize,
    /// Minimum distance of a negative cell center to every anchor; default `2 · radius`.
    pub min_dist: Option<f64>,
    /// Negative grid spacing; default the patch radius.
    pub cell_spacing: Option<usize>,
    /// Keep at most this many negative cells (seeded random subset).
    pub max_cells: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            patch_size: crate::ghh::DEFAULT_PATCH_SIZE,
            min_dist: None,
            cell_spacing: None,
            max_cells: None,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn radius(&self) -> usize {
        self.patch_size / 2
    }

    pub fn min_dist(&self) -> f64 {
        self.min_dist.unwrap_or(2.0 * self.radius() as f64)
    }

    pub fn cell_spacing(&self) -> usize {
        self.cell_spacing.unwrap_or(self.radius()).max(1)
    }
}

/// Negative cell centers: a regular grid inside the patch-safe region, at
/// least `min_dist` from every anchor.
pub fn negative_cells(
    width: usize,
    height: usize,
    anchors: &[AnchorLocation],
    cfg: &SampleConfig,
) -> Vec<(usize, usize)> {
    let r = cfg.radius();
    let step = cfg.cell_spacing();
    let min_dist = cfg.min_dist();
    let mut cells = Vec::new();
    if width <= 2 * r || height <= 2 * r {
        return cells;
    }
    let mut y = r;
    while y + r < height {
        let mut x = r;
        while x + r < width {
            let far = anchors
                .iter()
                .all(|a| ((a.x - x as f64).powi(2) + (a.y - y as f64).powi(2)).sqrt() >= min_dist);
            if far {
                cells.push((x, y));
            }
            x += step;
        }
        y += step;
    }
    if let Some(max) = cfg.max_cells {
        if cells.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            cells.shuffle(&mut rng);
            cells.truncate(max);
            cells.sort_by_key(|&(x, y)| (y, x));
        }
    }
    cells
}

/// Cuts positive patches at every anchor in every image and negative patches
/// on a grid of far-away cells, all in standardized feature space.
///
/// Standardization constants are fitted on every pixel of the stack and
/// stored in the returned set.
pub fn extract_samples(
    stack: &ImageStack,
    anchors: &[AnchorLocation],
    cfg: &SampleConfig,
) -> Result<TrainingSet> {
    if cfg.patch_size % 2 == 0 {
        return Err(Error::InvalidArgument("patch size must be odd".into()));
    }
    let raw: Vec<FeatureStack> = stack.images().iter().map(FeatureStack::from_rgb).collect();
    let normalization = Normalization::fit(raw.iter())?;
    let stacks: Vec<FeatureStack> = raw.iter().map(|fs| fs.standardized(&normalization)).collect();
    let (w, h) = (stack.width(), stack.height());
    let r = cfg.radius();

    let mut samples = Vec::new();
    let mut groups = Vec::new();
    let mut push_group = |site: GroupSite, label: i8, cx: usize, cy: usize| -> Result<()> {
        let g = groups.len();
        let mut members = Vec::with_capacity(stacks.len());
        for (image, fs) in stacks.iter().enumerate() {
            members.push(samples.len());
            samples.push(Sample {
                patch: fs.patch(cx, cy, cfg.patch_size)?,
                label,
                group: g,
                image,
            });
        }
        groups.push(SampleGroup { site, members });
        Ok(())
    };

    for a in anchors {
        let (cx, cy) = (a.x.round(), a.y.round());
        if cx < r as f64 || cy < r as f64 || cx + r as f64 >= w as f64 || cy + r as f64 >= h as f64 {
            log::warn!(
                "dropping anchor at ({:.1},{:.1}): closer than {r}px to the border",
                a.x,
                a.y
            );
            continue;
        }
        let (cx, cy) = (cx as usize, cy as usize);
        push_group(GroupSite::Anchor { x: cx, y: cy }, 1, cx, cy)?;
    }
    for (cx, cy) in negative_cells(w, h, anchors, cfg) {
        push_group(GroupSite::Cell { x: cx, y: cy }, -1, cx, cy)?;
    }
    TrainingSet::new(cfg.patch_size, samples, groups, normalization, cfg.seed)
}

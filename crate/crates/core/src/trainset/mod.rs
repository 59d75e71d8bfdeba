//! Training-set construction from a stack of co-registered images.
//!
//! The pipeline is: detect candidates independently in every image
//! ([`detect_candidates`] or an external keypoint file), merge them into
//! anchors that recur across most of the stack ([`consensus_keypoints`]),
//! then cut positive patches at every anchor in *every* image and negative
//! patches on a grid far from all anchors ([`extract_samples`]).

mod archive;
mod candidates;
mod consensus;
mod pca;
mod samples;

pub use archive::{decode_archive, encode_archive, read_archive, write_archive};
pub use candidates::{detect_candidates, gaussian_blur, parse_keypoint_file, DogConfig};
pub use consensus::{consensus_keypoints, ConsensusConfig};
pub use pca::{fit_pca, fit_pca_matrix, fit_pca_upto, project, PcaBasis};
pub use samples::{extract_samples, SampleConfig};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{decode_image, rgb_to_luv, FeaturePatch, Normalization, RgbImage};

/// Images of one scene from a fixed viewpoint.
#[derive(Clone, Debug)]
pub struct ImageStack {
    images: Vec<RgbImage>,
    ids: Vec<String>,
}

/// File extensions the stack loader decodes itself.
pub const PNM_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "pnm"];

impl ImageStack {
    pub fn new(images: Vec<RgbImage>, ids: Vec<String>) -> Result<Self> {
        if images.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a stack needs at least 3 images, got {}",
                images.len()
            )));
        }
        if ids.len() != images.len() {
            return Err(Error::InvalidArgument("one id per image required".into()));
        }
        let (w, h) = (images[0].width(), images[0].height());
        if let Some(i) = images.iter().position(|im| im.width() != w || im.height() != h) {
            return Err(Error::Dimension(format!(
                "image {} is {}x{}, expected {w}x{h}",
                ids[i],
                images[i].width(),
                images[i].height()
            )));
        }
        Ok(Self { images, ids })
    }

    /// Loads every PNM image in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load_dir_with(dir, |path| {
            let ext = path.extension()?.to_str()?.to_ascii_lowercase();
            if !PNM_EXTENSIONS.contains(&ext.as_str()) {
                return None;
            }
            Some(
                std::fs::read(path)
                    .map_err(|e| Error::io(path, e))
                    .and_then(|b| decode_image(&b)),
            )
        })
    }

    /// Like [`load_dir`](Self::load_dir) with a caller-supplied decoder; the
    /// decoder returns `None` for files it does not handle.
    pub fn load_dir_with<F>(dir: &Path, decode: F) -> Result<Self>
    where
        F: Fn(&Path) -> Option<Result<RgbImage>>,
    {
        let (paths, images) = load_images(dir, decode)?;
        let ids = paths.iter().map(|p| image_id(p)).collect();
        Self::new(images, ids)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    /// Splits off the images at the given positions (e.g. a held-out set).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(images, ids)
    }
}

/// File stem used as an image id.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Decodes every supported image file directly inside `dir`, sorted by name.
pub fn load_images<F>(dir: &Path, decode: F) -> Result<(Vec<PathBuf>, Vec<RgbImage>)>
where
    F: Fn(&Path) -> Option<Result<RgbImage>>,
{
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut paths = Vec::new();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for path in entries {
        match decode(&path) {
            None => {}
            Some(Ok(img)) => {
                paths.push(path);
                images.push(img);
            }
            Some(Err(e)) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Data(format!("unreadable images: {}", failures.join("; "))));
    }
    Ok((paths, images))
}

/// Settings of the whole construction pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainsetConfig {
    pub dog: DogConfig,
    pub consensus: ConsensusConfig,
    pub samples: SampleConfig,
}

/// Candidates (DoG on the L channel unless `external` gives one list per
/// image), consensus anchors, then labeled patches.
pub fn build_training_set(
    stack: &ImageStack,
    cfg: &TrainsetConfig,
    external: Option<Vec<Vec<Candidate>>>,
) -> Result<(TrainingSet, Vec<AnchorLocation>)> {
    let per_image = match external {
        Some(lists) => {
            if lists.len() != stack.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} keypoint lists for {} images",
                    lists.len(),
                    stack.len()
                )));
            }
            lists
        }
        None => stack
            .images()
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let [l, _, _] = rgb_to_luv(img);
                detect_candidates(&l, &cfg.dog, i)
            })
            .collect(),
    };
    let anchors = consensus_keypoints(&per_image, &cfg.consensus)?;
    if anchors.is_empty() {
        return Err(Error::Data("no location recurs across enough images".into()));
    }
    log::info!(
        "{} anchors from {} candidates",
        anchors.len(),
        per_image.iter().map(Vec::len).sum::<usize>()
    );
    let ts = extract_samples(stack, &anchors, &cfg.samples)?;
    Ok((ts, anchors))
}

/// A keypoint proposed by a detector in one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub response: f64,
    pub image_id: usize,
}

/// A location that recurs across the stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorLocation {
    pub x: f64,
    pub y: f64,
    /// Number of images in which a candidate joined this anchor.
    pub support: usize,
    pub scale: f64,
    pub response: f64,
}

/// What a temporal group is centered on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSite {
    Anchor { x: usize, y: usize },
    Cell { x: usize, y: usize },
}

/// Samples at one spatial location across the stack images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub site: GroupSite,
    pub members: Vec<usize>,
}

/// One labeled patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub patch: FeaturePatch,
    /// `+1` near a keypoint, `-1` far from every keypoint.
    pub label: i8,
    pub group: usize,
    pub image: usize,
}

/// Labeled patches plus their temporal groups.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    patch_size: usize,
    samples: Vec<Sample>,
    groups: Vec<SampleGroup>,
    normalization: Normalization,
    pub seed: u64,
}

impl TrainingSet {
    pub fn new(
        patch_size: usize,
        samples: Vec<Sample>,
        groups: Vec<SampleGroup>,
        normalization: Normalization,
        seed: u64,
    ) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.label != 1 && s.label != -1 {
                return Err(Error::Data(format!("sample {i} has label {}", s.label)));
            }
            if s.patch.size() != patch_size {
                return Err(Error::Dimension(format!("sample {i} has the wrong patch size")));
            }
            if s.group >= groups.len() || !groups[s.group].members.contains(&i) {
                return Err(Error::Data(format!("sample {i} is not listed in its group")));
            }
        }
        for (g, group) in groups.iter().enumerate() {
            if group.members.iter().any(|&i| i >= samples.len() || samples[i].group != g) {
                return Err(Error::Data(format!("group {g} lists a foreign sample")));
            }
            let positive = group.members.iter().any(|&i| samples[i].label == 1);
            if positive {
                let mut images: Vec<usize> = group.members.iter().map(|&i| samples[i].image).collect();
                images.sort_unstable();
                images.dedup();
                if images.len() < 2 {
                    return Err(Error::Data(format!(
                        "positive group {g} spans fewer than two images"
                    )));
                }
            }
        }
        Ok(Self {
            patch_size,
            samples,
            groups,
            normalization,
            seed,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn groups(&self) -> &[SampleGroup] {
        &self.groups
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Total sample count `K`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Positive sample count `K_p`.
    pub fn num_positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.label == 1)
    }

    /// Feature dimension `D = 6 · patch_size²`.
    pub fn dim(&self) -> usize {
        crate::imagekit::NUM_CHANNELS * self.patch_size * self.patch_size
    }

    /// Dense feature matrix view used by the learner.
    pub fn to_matrix(&self) -> SampleMatrix {
        let dim = self.dim();
        let mut features = Vec::with_capacity(self.len() * dim);
        for s in &self.samples {
            features.extend_from_slice(s.patch.data());
        }
        SampleMatrix {
            dim,
            features,
            labels: self.samples.iter().map(|s| s.label as f64).collect(),
            groups: self.groups.iter().map(|g| g.members.clone()).collect(),
        }
    }
}

/// Row-major sample features with labels and temporal groups.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    pub dim: usize,
    /// `K × dim`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    /// Mutually-neighboring sample indices; every sample appears at most once.
    pub groups: Vec<Vec<usize>>,
}

impl SampleMatrix {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>, groups: Vec<Vec<usize>>) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "{} features do not form {} rows of {dim}",
                features.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Data("labels must be +1 or -1".into()));
        }
        let mut seen = vec![false; labels.len()];
        for g in &groups {
            for &i in g {
                if i >= labels.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Data(format!("sample {i} is out of range or in two groups")));
                }
            }
        }
        Ok(Self {
            dim,
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.0).count()
    }
}

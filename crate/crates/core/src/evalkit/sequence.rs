//! Sequence-level evaluation and reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    budget_for_random_rate, repeatability, CommonRegion, GroundTruthTransform, MatchMode, RandomRateConfig,
};
use crate::detector::{nonmax_suppress, select_keypoints, Keypoint, Selection};
use crate::error::{Error, Result};
use crate::ghh::{score_map, GhhModel};
use crate::imagekit::{FeatureStack, RgbImage};
use crate::sepfilters::{score_map_separable, SeparableBank};
use crate::trainset::{image_id, load_images};

/// Images of one scene, in file-name order.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub dir: PathBuf,
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
}

/// A directory holding images is one sequence; otherwise every subdirectory
/// holding at least two images is.
pub fn load_sequences<F>(root: &Path, decode: F) -> Result<Vec<Sequence>>
where
    F: Fn(&Path) -> Option<Result<RgbImage>> + Copy,
{
    let load = |dir: &Path| -> Result<Option<Sequence>> {
        let (paths, images) = load_images(dir, decode)?;
        if images.len() < 2 {
            return Ok(None);
        }
        Ok(Some(Sequence {
            name: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sequence".into()),
            dir: dir.to_path_buf(),
            ids: paths.iter().map(|p| image_id(p)).collect(),
            images,
        }))
    };
    if let Some(seq) = load(root)? {
        return Ok(vec![seq]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if let Some(seq) = load(&d)? {
            out.push(seq);
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no image sequence found under {}", root.display())));
    }
    Ok(out)
}

/// Where pairwise ground truth comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformSource {
    /// Fixed-viewpoint stack: every pair is aligned.
    Identity,
    /// Files `H1to{k}p` in the sequence directory map image 1 onto image `k`.
    Homographies,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPlan {
    /// Every unordered pair.
    AllPairs,
    /// The given image (0-based) against every other.
    Reference(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    Fixed(usize),
    /// Budget at which uniform random keypoints score this one-to-one rate.
    RandomRate(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub modes: Vec<MatchMode>,
    pub threshold_px: f64,
    pub budget: BudgetRule,
    pub pairs: PairPlan,
    pub transforms: TransformSource,
    /// Border excluded from the common region and from the random baseline.
    pub margin: f64,
    pub random: RandomRateConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            modes: vec![MatchMode::OneToOne],
            threshold_px: 5.0,
            budget: BudgetRule::RandomRate(0.02),
            pairs: PairPlan::AllPairs,
            transforms: TransformSource::Identity,
            margin: 10.0,
            random: RandomRateConfig::default(),
        }
    }
}

impl EvalConfig {
    /// Keypoint budget for `w × h` images.
    pub fn resolve_budget(&self, w: usize, h: usize) -> Result<usize> {
        match self.budget {
            BudgetRule::Fixed(0) => Err(Error::InvalidArgument("keypoint budget must be positive".into())),
            BudgetRule::Fixed(n) => Ok(n),
            BudgetRule::RandomRate(rate) => {
                let m = (2.0 * self.margin.max(0.0)).ceil() as usize;
                if w <= m || h <= m {
                    return Err(Error::Dimension(format!("{w}x{h} image has no area inside the margin")));
                }
                budget_for_random_rate(w - m, h - m, self.threshold_px, rate, &self.random)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub mode: MatchMode,
    pub matched: usize,
    pub evaluated: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub mode: MatchMode,
    pub pairs: usize,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub images: Vec<String>,
    pub budget: usize,
    pub pairs: Vec<PairResult>,
    pub summary: Vec<SequenceSummary>,
}

impl SequenceReport {
    pub fn mean(&self, mode: MatchMode) -> Option<f64> {
        self.summary.iter().find(|s| s.mode == mode).map(|s| s.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: EvalConfig,
    /// Anything else the caller wants recorded (detector, model hash, ...).
    pub context: serde_json::Value,
    pub sequences: Vec<SequenceReport>,
}

/// Dense detection with a model: standardized features, score map (exact or
/// separable), non-maximum suppression. Returns every local maximum.
pub fn model_detector<'a>(
    model: &'a GhhModel,
    bank: Option<&'a SeparableBank>,
    radius: usize,
) -> impl Fn(&RgbImage) -> Result<Vec<Keypoint>> + Sync + 'a {
    move |img| {
        let fs = FeatureStack::from_rgb(img).standardized(model.normalization());
        let map = match bank {
            Some(b) => score_map_separable(model, b, &fs)?,
            None => score_map(model, &fs)?,
        };
        nonmax_suppress(&map, radius)
    }
}

fn transform_to_first(seq: &Sequence, i: usize) -> Result<GroundTruthTransform> {
    if i == 0 {
        return Ok(GroundTruthTransform::Identity);
    }
    let path = seq.dir.join(format!("H1to{}p", i + 1));
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing ground truth {} for pair ({}, {}) in {}",
            path.display(),
            seq.ids[0],
            seq.ids[i],
            seq.name
        )));
    }
    GroundTruthTransform::load(&path)
}

fn pair_transform(seq: &Sequence, src: TransformSource, i: usize, j: usize) -> Result<GroundTruthTransform> {
    match src {
        TransformSource::Identity => Ok(GroundTruthTransform::Identity),
        TransformSource::Homographies => {
            let hi = transform_to_first(seq, i)?;
            let hj = transform_to_first(seq, j)?;
            hi.inverse().then(&hj)
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Detects in every image, keeps the budgeted top keypoints and scores the
/// planned pairs in every configured mode.
pub fn evaluate_sequence<D>(seq: &Sequence, detect: D, cfg: &EvalConfig) -> Result<SequenceReport>
where
    D: Fn(&RgbImage) -> Result<Vec<Keypoint>>,
{
    if seq.images.len() < 2 {
        return Err(Error::InvalidArgument(format!("sequence {} has fewer than two images", seq.name)));
    }
    if cfg.modes.is_empty() {
        return Err(Error::InvalidArgument("no evaluation mode selected".into()));
    }
    let detections: Vec<Vec<Keypoint>> = seq.images.iter().map(&detect).collect::<Result<_>>()?;
    evaluate_keypoints(seq, &detections, cfg)
}

/// [`evaluate_sequence`] on precomputed detections, one list per image; each
/// list is cut to the budget by score.
pub fn evaluate_keypoints(seq: &Sequence, detections: &[Vec<Keypoint>], cfg: &EvalConfig) -> Result<SequenceReport> {
    if seq.images.len() < 2 {
        return Err(Error::InvalidArgument(format!("sequence {} has fewer than two images", seq.name)));
    }
    if detections.len() != seq.images.len() {
        return Err(Error::InvalidArgument(format!(
            "{} keypoint lists for {} images in {}",
            detections.len(),
            seq.images.len(),
            seq.name
        )));
    }
    if cfg.modes.is_empty() {
        return Err(Error::InvalidArgument("no evaluation mode selected".into()));
    }
    let (w, h) = (seq.images[0].width(), seq.images[0].height());
    let budget = cfg.resolve_budget(w, h)?;
    let keypoints: Vec<Vec<Keypoint>> = detections
        .iter()
        .map(|d| select_keypoints(d, Selection::Budget(budget)))
        .collect::<Result<_>>()?;
    let n = seq.images.len();
    let pairs: Vec<(usize, usize)> = match cfg.pairs {
        PairPlan::AllPairs => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        PairPlan::Reference(r) if r < n => (0..n).filter(|&j| j != r).map(|j| (r, j)).collect(),
        PairPlan::Reference(r) => {
            return Err(Error::InvalidArgument(format!("reference image {r} out of range")));
        }
    };
    let jobs: Vec<(usize, usize, MatchMode)> = pairs
        .iter()
        .flat_map(|&(i, j)| cfg.modes.iter().map(move |&m| (i, j, m)))
        .collect();
    let results: Vec<PairResult> = jobs
        .par_iter()
        .map(|&(i, j, mode)| {
            let t = pair_transform(seq, cfg.transforms, i, j)?;
            let region = CommonRegion {
                size_a: (seq.images[i].width(), seq.images[i].height()),
                size_b: (seq.images[j].width(), seq.images[j].height()),
                margin: cfg.margin,
            };
            let (ka, kb) = (&keypoints[i], &keypoints[j]);
            let s = if ka.is_empty() || kb.is_empty() {
                None
            } else {
                Some(repeatability(ka, kb, &t, &region, cfg.threshold_px, mode)?)
            };
            Ok(PairResult {
                a: seq.ids[i].clone(),
                b: seq.ids[j].clone(),
                mode,
                matched: s.map_or(0, |s| s.matched),
                evaluated: s.map_or(0, |s| s.evaluated),
                score: s.map_or(0.0, |s| s.score),
            })
        })
        .collect::<Result<_>>()?;
    let summary = cfg
        .modes
        .iter()
        .map(|&mode| {
            let scores: Vec<f64> = results.iter().filter(|r| r.mode == mode).map(|r| r.score).collect();
            let (mean, stddev) = mean_std(&scores);
            SequenceSummary {
                mode,
                pairs: scores.len(),
                mean,
                stddev,
            }
        })
        .collect();
    Ok(SequenceReport {
        name: seq.name.clone(),
        images: seq.ids.clone(),
        budget,
        pairs: results,
        summary,
    })
}

/// Writes `report.csv` (`sequence,pair,mode,score,budget`) and `report.json`.
pub fn write_reports(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    let mut csv = Vec::new();
    let io = |e| Error::io(&csv_path, e);
    writeln!(csv, "sequence,pair,mode,score,budget").map_err(io)?;
    for seq in &report.sequences {
        for p in &seq.pairs {
            writeln!(csv, "{},{}-{},{},{},{}", seq.name, p.a, p.b, p.mode.name(), p.score, seq.budget).map_err(io)?;
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("report.json");
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

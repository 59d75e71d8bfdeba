//! Repeatability of keypoint detectors.
//!
//! Two keypoints match when their symmetric transfer distance (the larger of
//! the two distances measured in either image after projecting with the
//! ground truth) is below the pixel threshold. The standard measure counts
//! every keypoint with some match; the one-to-one measure matches greedily in
//! ascending distance and uses each keypoint at most once. Both divide by the
//! smaller number of keypoints inside the common region.

mod sequence;

pub use sequence::{
    evaluate_keypoints, evaluate_sequence, load_sequences, model_detector, write_reports, BudgetRule, EvalConfig, PairPlan,
    PairResult, Report, Sequence, SequenceReport, SequenceSummary, TransformSource,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Keypoint;
use crate::error::{Error, Result};

/// Maps points of image A into image B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthTransform {
    Identity,
    /// Row-major 3×3 matrix and its inverse.
    Homography { h: [f64; 9], inv: [f64; 9] },
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn inv3(m: &[f64; 9]) -> [f64; 9] {
    let d = det3(m);
    let c = [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ];
    c.map(|v| v / d)
}

fn mul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    std::array::from_fn(|k| {
        let (i, j) = (k / 3, k % 3);
        (0..3).map(|t| a[i * 3 + t] * b[t * 3 + j]).sum()
    })
}

fn apply3(m: &[f64; 9], x: f64, y: f64) -> Option<(f64, f64)> {
    let w = m[6] * x + m[7] * y + m[8];
    if w.abs() < 1e-12 {
        return None;
    }
    Some(((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w))
}

impl GroundTruthTransform {
    pub fn homography(h: [f64; 9]) -> Result<Self> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("homography has non-finite entries".into()));
        }
        let d = det3(&h);
        if d.abs() <= 1e-12 {
            return Err(Error::InvalidArgument(format!("singular homography (det {d:e})")));
        }
        Ok(Self::Homography { h, inv: inv3(&h) })
    }

    /// The transform from B back to A.
    pub fn inverse(&self) -> Self {
        match self {
            Self::Identity => Self::Identity,
            Self::Homography { h, inv } => Self::Homography { h: *inv, inv: *h },
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Result<Self> {
        match (self, next) {
            (Self::Identity, t) | (t, Self::Identity) => Ok(t.clone()),
            (Self::Homography { h: a, .. }, Self::Homography { h: b, .. }) => Self::homography(mul3(b, a)),
        }
    }

    pub fn forward(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self {
            Self::Identity => Some((x, y)),
            Self::Homography { h, .. } => apply3(h, x, y),
        }
    }

    pub fn backward(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self {
            Self::Identity => Some((x, y)),
            Self::Homography { inv, .. } => apply3(inv, x, y),
        }
    }

    /// Parses nine whitespace-separated numbers (row-major).
    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("homography: {e}")))?;
        let h: [f64; 9] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::Data(format!("homography needs 9 numbers, got {}", v.len())))?;
        Self::homography(h)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Standard,
    OneToOne,
}

impl MatchMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::OneToOne => "one_to_one",
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "one_to_one" | "one-to-one" => Ok(Self::OneToOne),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

/// Image frames of the two views; keypoints closer than `margin` to an edge
/// (after projection) are outside the common region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonRegion {
    pub size_a: (usize, usize),
    pub size_b: (usize, usize),
    pub margin: f64,
}

impl CommonRegion {
    pub fn same(width: usize, height: usize, margin: f64) -> Self {
        Self {
            size_a: (width, height),
            size_b: (width, height),
            margin,
        }
    }
}

fn inside(p: Option<(f64, f64)>, size: (usize, usize), margin: f64) -> bool {
    p.is_some_and(|(x, y)| {
        x >= margin && y >= margin && x <= size.0 as f64 - 1.0 - margin && y <= size.1 as f64 - 1.0 - margin
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityScore {
    pub matched: usize,
    /// `min(|A'|, |B'|)` over the common region.
    pub evaluated: usize,
    pub score: f64,
    pub threshold_px: f64,
    /// Larger of the two input list sizes.
    pub budget: usize,
}

struct Prepared {
    /// A keypoints in A's frame and projected into B.
    a: Vec<((f64, f64), (f64, f64))>,
    /// B keypoints in B's frame and projected back into A.
    b: Vec<((f64, f64), (f64, f64))>,
}

fn prepare(a: &[Keypoint], b: &[Keypoint], t: &GroundTruthTransform, region: &CommonRegion) -> Prepared {
    let m = region.margin;
    let a = a
        .iter()
        .filter_map(|k| {
            let p = (k.x, k.y);
            let q = t.forward(k.x, k.y);
            (inside(Some(p), region.size_a, m) && inside(q, region.size_b, m)).then(|| (p, q.expect("inside")))
        })
        .collect();
    let b = b
        .iter()
        .filter_map(|k| {
            let p = (k.x, k.y);
            let q = t.backward(k.x, k.y);
            (inside(Some(p), region.size_b, m) && inside(q, region.size_a, m)).then(|| (p, q.expect("inside")))
        })
        .collect();
    Prepared { a, b }
}

/// Candidate pairs `(distance, i, j)` below `threshold`, found through a
/// uniform grid over B's frame.
fn close_pairs(p: &Prepared, threshold: f64) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::new();
    if p.a.is_empty() || p.b.is_empty() || !(threshold > 0.0) {
        return out;
    }
    let cell = threshold;
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (j, (pb, _)) in p.b.iter().enumerate() {
        grid.entry(key(pb.0, pb.1)).or_default().push(j);
    }
    for (i, (pa, qa)) in p.a.iter().enumerate() {
        let (cx, cy) = key(qa.0, qa.1);
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                let Some(list) = grid.get(&(gx, gy)) else { continue };
                for &j in list {
                    let (pb, qb) = p.b[j];
                    let d = (qa.0 - pb.0).hypot(qa.1 - pb.1).max((pa.0 - qb.0).hypot(pa.1 - qb.1));
                    if d < threshold {
                        out.push((d, i, j));
                    }
                }
            }
        }
    }
    out
}

/// Repeatability of `a` (in image A) against `b` (in image B).
pub fn repeatability(
    a: &[Keypoint],
    b: &[Keypoint],
    t: &GroundTruthTransform,
    region: &CommonRegion,
    threshold_px: f64,
    mode: MatchMode,
) -> Result<RepeatabilityScore> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("both keypoint lists must be nonempty".into()));
    }
    if !(threshold_px >= 0.0) {
        return Err(Error::InvalidArgument("threshold must be nonnegative".into()));
    }
    let p = prepare(a, b, t, region);
    let evaluated = p.a.len().min(p.b.len());
    let mut pairs = close_pairs(&p, threshold_px);
    let matched = match mode {
        MatchMode::Standard => {
            let mut hit = vec![false; p.a.len()];
            for &(_, i, _) in &pairs {
                hit[i] = true;
            }
            hit.iter().filter(|&&h| h).count().min(evaluated)
        }
        MatchMode::OneToOne => {
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut used_a = vec![false; p.a.len()];
            let mut used_b = vec![false; p.b.len()];
            let mut n = 0;
            for (_, i, j) in pairs {
                if !used_a[i] && !used_b[j] {
                    used_a[i] = true;
                    used_b[j] = true;
                    n += 1;
                }
            }
            n
        }
    };
    Ok(RepeatabilityScore {
        matched,
        evaluated,
        score: if evaluated == 0 { 0.0 } else { matched as f64 / evaluated as f64 },
        threshold_px,
        budget: a.len().max(b.len()),
    })
}

/// Monte-Carlo settings for [`budget_for_random_rate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomRateConfig {
    pub trials: usize,
    pub seed: u64,
    /// Accepted absolute deviation of the mean rate from the target.
    pub tolerance: f64,
}

impl Default for RandomRateConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            tolerance: 0.0025,
        }
    }
}

/// `n` keypoints at uniform integer pixel positions of a `w × h` frame.
pub fn random_keypoints(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> Vec<Keypoint> {
    (0..n)
        .map(|_| Keypoint::new(rng.random_range(0..w) as f64, rng.random_range(0..h) as f64, 0.0))
        .collect()
}

/// `budget` uniform random keypoints inside the frame shrunk by `margin`,
/// from the given seed and stream.
pub fn random_detections(w: usize, h: usize, margin: f64, budget: usize, seed: u64, stream: u64) -> Result<Vec<Keypoint>> {
    let m = margin.max(0.0).ceil() as usize;
    if w <= 2 * m || h <= 2 * m {
        return Err(Error::Dimension(format!("{w}x{h} image has no area inside the margin")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut kps = random_keypoints(&mut rng, budget, w - 2 * m, h - 2 * m);
    for k in &mut kps {
        k.x += m as f64;
        k.y += m as f64;
    }
    Ok(kps)
}

/// Mean one-to-one repeatability of two independent sets of `budget` uniform
/// random pixel positions in a `w × h` image.
pub fn random_rate(w: usize, h: usize, threshold_px: f64, budget: usize, cfg: &RandomRateConfig) -> f64 {
    let region = CommonRegion::same(w, h, 0.0);
    let scores: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(trial as u64);
            let a = random_keypoints(&mut rng, budget, w, h);
            let b = random_keypoints(&mut rng, budget, w, h);
            repeatability(&a, &b, &GroundTruthTransform::Identity, &region, threshold_px, MatchMode::OneToOne)
                .map(|s| s.score)
                .unwrap_or(0.0)
        })
        .collect();
    crate::numeric::compensated_sum(scores) / cfg.trials as f64
}

/// Smallest keypoint budget at which uniform random detections reach
/// `target_rate` one-to-one repeatability (within the configured tolerance).
pub fn budget_for_random_rate(
    w: usize,
    h: usize,
    threshold_px: f64,
    target_rate: f64,
    cfg: &RandomRateConfig,
) -> Result<usize> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidArgument("target rate must lie in (0, 1)".into()));
    }
    if w == 0 || h == 0 || cfg.trials == 0 {
        return Err(Error::InvalidArgument("empty image or zero trials".into()));
    }
    let lo_target = target_rate - cfg.tolerance;
    let rate = |k: usize| random_rate(w, h, threshold_px, k, cfg);
    if !(threshold_px > 0.0) {
        return Err(Error::Numerical(format!(
            "random rate {target_rate} unreachable with a zero threshold"
        )));
    }
    let cap = w * h;
    let (mut lo, mut hi) = (1usize, 1usize);
    while rate(hi) < lo_target {
        if hi == cap {
            return Err(Error::Numerical(format!(
                "random rate {target_rate} unreachable: even {cap} keypoints stay below it"
            )));
        }
        lo = hi + 1;
        hi = (hi * 2).min(cap);
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if rate(mid) >= lo_target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let got = rate(lo);
    if (got - target_rate).abs() > cfg.tolerance {
        return Err(Error::Numerical(format!(
            "random rate {target_rate} unreachable: budget {lo} gives {got:.4}"
        )));
    }
    log::info!("budget {lo} gives random one-to-one repeatability {got:.4}");
    Ok(lo)
}

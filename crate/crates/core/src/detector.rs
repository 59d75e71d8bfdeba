//! Keypoints from score maps: non-maximum suppression and budgeting.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghh::ScoreMap;

/// Default suppression radius in pixels.
pub const DEFAULT_NMS_RADIUS: usize = 5;
/// Fixed keypoint scale in pixels.
pub const DEFAULT_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub scale: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Self {
            x,
            y,
            score,
            scale: DEFAULT_SCALE,
        }
    }
}

/// How many candidates survive [`select_keypoints`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The `n` highest scores.
    Budget(usize),
    /// Every score strictly above the value.
    Threshold(f64),
}

/// Descending score, then ascending `(y, x)`.
fn by_score(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

fn is_strict_max(map: &ScoreMap, x: usize, y: usize, radius: usize) -> bool {
    let Some(v) = map.get(x, y) else {
        return false;
    };
    let (x0, x1, y0, y1) = map.interior();
    let (lx, hx) = (x.saturating_sub(radius).max(x0), (x + radius + 1).min(x1));
    let (ly, hy) = (y.saturating_sub(radius).max(y0), (y + radius + 1).min(y1));
    let w = map.width();
    let s = map.scores();
    for yy in ly..hy {
        let row = &s[yy * w..(yy + 1) * w];
        for (xx, &u) in row.iter().enumerate().take(hx).skip(lx) {
            if (xx != x || yy != y) && u >= v {
                return false;
            }
        }
    }
    true
}

/// Interior pixels strictly greater than every other interior pixel within the
/// L∞ `radius`, sorted by score descending (ties by row, then column).
pub fn nonmax_suppress(map: &ScoreMap, radius: usize) -> Result<Vec<Keypoint>> {
    if radius == 0 {
        return Err(Error::InvalidArgument("suppression radius must be at least 1".into()));
    }
    let (x0, x1, y0, y1) = map.interior();
    let mut out: Vec<Keypoint> = (y0..y1)
        .into_par_iter()
        .flat_map_iter(|y| {
            (x0..x1)
                .filter(move |&x| is_strict_max(map, x, y, radius))
                .map(move |x| Keypoint::new(x as f64, y as f64, map.get(x, y).expect("interior")))
        })
        .collect();
    out.sort_by(by_score);
    Ok(out)
}

/// Top candidates by budget or threshold, in score order.
pub fn select_keypoints(cands: &[Keypoint], selection: Selection) -> Result<Vec<Keypoint>> {
    let mut sorted = cands.to_vec();
    sorted.sort_by(by_score);
    match selection {
        Selection::Budget(0) => Err(Error::InvalidArgument("keypoint budget must be positive".into())),
        Selection::Budget(n) => {
            sorted.truncate(n);
            Ok(sorted)
        }
        Selection::Threshold(t) => {
            if t.is_nan() {
                return Err(Error::InvalidArgument("threshold is NaN".into()));
            }
            Ok(sorted.into_iter().filter(|k| k.score > t).collect())
        }
    }
}

/// Suppression followed by selection.
pub fn detect_keypoints(map: &ScoreMap, radius: usize, selection: Selection) -> Result<Vec<Keypoint>> {
    select_keypoints(&nonmax_suppress(map, radius)?, selection)
}

/// Text lines `x y score scale`.
pub fn write_keypoints<W: Write>(mut out: W, kps: &[Keypoint]) -> std::io::Result<()> {
    for k in kps {
        writeln!(out, "{} {} {} {}", k.x, k.y, k.score, k.scale)?;
    }
    Ok(())
}

pub fn save_keypoints(path: &Path, kps: &[Keypoint]) -> Result<()> {
    let mut buf = Vec::new();
    write_keypoints(&mut buf, kps).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses `x y score [scale]` lines; blank lines and `#` comments are skipped.
pub fn read_keypoints<R: BufRead>(input: R) -> Result<Vec<Keypoint>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<keypoints>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("keypoint line {}: {e}", i + 1)))?;
        if vals.len() < 3 || vals.len() > 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("keypoint line {} needs `x y score [scale]`", i + 1)));
        }
        out.push(Keypoint {
            x: vals[0],
            y: vals[1],
            score: vals[2],
            scale: vals.get(3).copied().unwrap_or(DEFAULT_SCALE),
        });
    }
    Ok(out)
}

pub fn load_keypoints(path: &Path) -> Result<Vec<Keypoint>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_keypoints(std::io::BufReader::new(f))
}

//! Log-scale grid search over the three loss weights.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_greedy, TrainConfig};
use crate::error::{Error, Result};
use crate::ghh::{score_patch, GhhModel};
use crate::trainset::TrainingSet;

/// Candidate values per weight; the search runs over their product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvGrid {
    pub gamma_c: Vec<f64>,
    pub gamma_s: Vec<f64>,
    pub gamma_t: Vec<f64>,
}

impl Default for CvGrid {
    fn default() -> Self {
        let g = log_space(1e-4, 1e2, 5);
        Self {
            gamma_c: g.clone(),
            gamma_s: g.clone(),
            gamma_t: g,
        }
    }
}

/// `points` values evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..points)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub gamma_t: f64,
    pub accuracy: f64,
    /// Within-group over total variance of the validation responses.
    pub temporal_ratio: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub best: CvRow,
    pub table: Vec<CvRow>,
}

/// Validation proxy: sign accuracy minus the share of response variance
/// left within temporal groups.
pub fn validation_score(model: &GhhModel, val: &TrainingSet) -> Result<(f64, f64, f64)> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let f: Vec<f64> = val
        .samples()
        .iter()
        .map(|s| score_patch(model, &s.patch))
        .collect::<Result<_>>()?;
    let correct = val
        .samples()
        .iter()
        .zip(&f)
        .filter(|(s, &v)| (v > 0.0) == (s.label > 0))
        .count();
    let accuracy = correct as f64 / f.len() as f64;
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let total: f64 = f.iter().map(|v| (v - mean).powi(2)).sum();
    let mut within = 0.0;
    for g in val.groups() {
        if g.members.is_empty() {
            continue;
        }
        let gm = g.members.iter().map(|&i| f[i]).sum::<f64>() / g.members.len() as f64;
        within += g.members.iter().map(|&i| (f[i] - gm).powi(2)).sum::<f64>();
    }
    let ratio = if total > 0.0 { within / total } else { 0.0 };
    Ok((accuracy, ratio, accuracy - ratio))
}

/// Trains once per distinct grid point and returns the best validation score
/// (first in ascending `(γ_c, γ_s, γ_t)` order on ties) with the full table.
pub fn cross_validate(
    train: &TrainingSet,
    val: &TrainingSet,
    grid: &CvGrid,
    base: &TrainConfig,
) -> Result<CvResult> {
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for &c in &grid.gamma_c {
        for &s in &grid.gamma_s {
            for &t in &grid.gamma_t {
                points.push((c, s, t));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    points.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    points.dedup();
    let table: Vec<CvRow> = points
        .par_iter()
        .map(|&(gamma_c, gamma_s, gamma_t)| {
            let cfg = TrainConfig {
                gamma_c,
                gamma_s,
                gamma_t,
                ..base.clone()
            };
            let model = train_greedy(train, &cfg)?.model;
            let (accuracy, temporal_ratio, score) = validation_score(&model, val)?;
            log::info!("cv gamma=({gamma_c:e}, {gamma_s:e}, {gamma_t:e}) score {score:.4}");
            Ok(CvRow {
                gamma_c,
                gamma_s,
                gamma_t,
                accuracy,
                temporal_ratio,
                score,
            })
        })
        .collect::<Result<_>>()?;
    let best = *table
        .iter()
        .fold(None::<&CvRow>, |acc, r| match acc {
            Some(b) if b.score >= r.score => Some(b),
            _ => Some(r),
        })
        .expect("nonempty table");
    Ok(CvResult { best, table })
}

/// CSV with header `gamma_c,gamma_s,gamma_t,accuracy,temporal_ratio,score`.
pub fn write_cv_csv<W: Write>(mut out: W, table: &[CvRow]) -> Result<()> {
    let io = |e| Error::io("<cv table>", e);
    writeln!(out, "gamma_c,gamma_s,gamma_t,accuracy,temporal_ratio,score").map_err(io)?;
    for r in table {
        writeln!(
            out,
            "{:e},{:e},{:e},{},{},{}",
            r.gamma_c, r.gamma_s, r.gamma_t, r.accuracy, r.temporal_ratio, r.score
        )
        .map_err(io)?;
    }
    Ok(())
}

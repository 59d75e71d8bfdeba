use serde::{Deserialize, Serialize};

use super::{AnchorLocation, Candidate};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub max_anchors: usize,
    /// Fraction of stack images a location must be detected in.
    pub min_support_fraction: f64,
    /// Minimum anchor spacing; `None` uses the mean of the two anchors' scales.
    pub min_separation: Option<f64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            max_anchors: 100,
            min_support_fraction: 0.5,
            min_separation: None,
        }
    }
}

/// Merges per-image candidates into locations that recur across the stack.
///
/// Candidates are visited smallest scale first. Each unclaimed candidate
/// seeds a cluster and claims, from every other image, the nearest unclaimed
/// candidate closer than the seed's scale. Clusters detected in enough images
/// become anchors at the mean position, ranked by support then mean
/// |response|; anchors too close to a better one are dropped.
pub fn consensus_keypoints(
    per_image: &[Vec<Candidate>],
    cfg: &ConsensusConfig,
) -> Result<Vec<AnchorLocation>> {
    let n_images = per_image.len();
    if n_images < 3 {
        return Err(Error::InvalidArgument(format!(
            "consensus needs at least 3 candidate lists, got {n_images}"
        )));
    }
    if !(0.0..=1.0).contains(&cfg.min_support_fraction) {
        return Err(Error::InvalidArgument("min_support_fraction must be in [0,1]".into()));
    }

    // (image, index) sorted by scale, then |response| descending for determinism.
    let mut order: Vec<(usize, usize)> = per_image
        .iter()
        .enumerate()
        .flat_map(|(i, list)| (0..list.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| {
        let (a, b) = (&per_image[ia][ja], &per_image[ib][jb]);
        a.scale
            .total_cmp(&b.scale)
            .then(b.response.abs().total_cmp(&a.response.abs()))
            .then(ia.cmp(&ib))
            .then(ja.cmp(&jb))
    });
    let mut claimed: Vec<Vec<bool>> = per_image.iter().map(|l| vec![false; l.len()]).collect();

    let mut clusters = Vec::new();
    for &(si, sj) in &order {
        if claimed[si][sj] {
            continue;
        }
        claimed[si][sj] = true;
        let seed = per_image[si][sj];
        let mut members = vec![seed];
        for (img, list) in per_image.iter().enumerate() {
            if img == si {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, c) in list.iter().enumerate() {
                if claimed[img][j] {
                    continue;
                }
                let d = ((c.x - seed.x).powi(2) + (c.y - seed.y).powi(2)).sqrt();
                if d < seed.scale && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, _)) = best {
                claimed[img][j] = true;
                members.push(list[j]);
            }
        }
        let k = members.len() as f64;
        clusters.push(AnchorLocation {
            x: members.iter().map(|c| c.x).sum::<f64>() / k,
            y: members.iter().map(|c| c.y).sum::<f64>() / k,
            support: members.len(),
            scale: members.iter().map(|c| c.scale).sum::<f64>() / k,
            response: members.iter().map(|c| c.response.abs()).sum::<f64>() / k,
        });
    }

    let needed = cfg.min_support_fraction * n_images as f64;
    let mut kept: Vec<AnchorLocation> = clusters
        .into_iter()
        .filter(|a| a.support as f64 >= needed - 1e-9)
        .collect();
    kept.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(b.response.total_cmp(&a.response))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });

    let mut anchors: Vec<AnchorLocation> = Vec::new();
    for a in kept {
        if anchors.len() >= cfg.max_anchors {
            break;
        }
        let far = anchors.iter().all(|b| {
            let sep = cfg.min_separation.unwrap_or(0.5 * (a.scale + b.scale));
            ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() >= sep
        });
        if far {
            anchors.push(a);
        }
    }
    if anchors.is_empty() {
        log::warn!("no location reached the required support of {needed:.1} images");
    }
    Ok(anchors)
}

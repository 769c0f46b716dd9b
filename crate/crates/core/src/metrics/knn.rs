use rayon::prelude::*;

use super::{DistanceKind, DistanceWeights};
use crate::error::{Error, Result};
use crate::pose::{PolarPose, PolarTriple, DEGENERATE_LENGTH};

/// Bank entries scanned per parallel task. Fixed so that the partition,
/// and with it the result, does not depend on the thread count.
const KNN_CHUNK: usize = 512;

/// The `k` nearest bank poses to `query`, measured as
/// `kind.eval(query, bank[i])`. Results are sorted by ascending distance,
/// ties broken by lower index.
pub fn knn(
    query: &PolarPose,
    bank: &[PolarPose],
    k: usize,
    kind: DistanceKind,
    w: &DistanceWeights,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || bank.len() < k {
        return Err(Error::BankTooSmall {
            bank: bank.len(),
            k,
        });
    }
    let partial: Vec<Vec<(f64, usize)>> = bank
        .par_chunks(KNN_CHUNK)
        .enumerate()
        .map(|(c, chunk)| chunk_top_k(query, chunk, c * KNN_CHUNK, k, kind, w))
        .collect();
    let mut merged: Vec<(f64, usize)> = partial.into_iter().flatten().collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    merged.truncate(k);
    Ok(merged.into_iter().map(|(d, i)| (i, d)).unzip())
}

fn chunk_top_k(
    query: &PolarPose,
    chunk: &[PolarPose],
    offset: usize,
    k: usize,
    kind: DistanceKind,
    w: &DistanceWeights,
) -> Vec<(f64, usize)> {
    // Sorted by (distance, index); indices arrive in increasing order, so a
    // newcomer goes after every entry with an equal distance.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, cand) in chunk.iter().enumerate() {
        let bound = if best.len() == k {
            best[k - 1].0
        } else {
            f64::INFINITY
        };
        let Some(d) = kind.eval_bounded(query, cand, w, bound) else {
            continue;
        };
        if best.len() == k && d >= bound {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, offset + i));
        best.truncate(k);
    }
    best
}

/// Output of a prior-pose query.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorQueryResult {
    pub neighbor_indices: Vec<usize>,
    pub neighbor_distances: Vec<f64>,
    pub pose_weights: Vec<f64>,
    pub prior_pose: PolarPose,
    pub manifold_distance: f64,
}

/// Neighbour weights `(1 − d_i / Σ d) / (K − 1)`. They sum to one; when all
/// distances are zero the weights are uniform.
pub fn prior_weights(distances: &[f64]) -> Result<Vec<f64>> {
    let k = distances.len();
    if k < 2 {
        return Err(Error::KTooSmall(k));
    }
    let total: f64 = distances.iter().sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let denom = (k - 1) as f64;
    Ok(distances.iter().map(|d| (1.0 - d / total) / denom).collect())
}

/// Weighted mean of `poses`, componentwise, projected back onto valid
/// triples (unit directions, non-negative lengths).
///
/// The weights are assumed to sum to one. The mean is accumulated as offsets
/// from the first pose, so identical inputs reproduce that pose exactly.
pub fn weighted_mean_pose(poses: &[&PolarPose], weights: &[f64]) -> PolarPose {
    let base = poses[0].triples();
    let triples = base
        .iter()
        .enumerate()
        .map(|(j, t0)| {
            let (mut c, mut s, mut r) = (t0.cos, t0.sin, t0.r);
            for (p, w) in poses.iter().zip(weights).skip(1) {
                let t = p.triples()[j];
                c += w * (t.cos - t0.cos);
                s += w * (t.sin - t0.sin);
                r += w * (t.r - t0.r);
            }
            let norm = c.hypot(s);
            if norm <= DEGENERATE_LENGTH {
                PolarTriple::new(1.0, 0.0, r.max(0.0))
            } else if (norm - 1.0).abs() > 1e-12 {
                PolarTriple::new(c / norm, s / norm, r.max(0.0))
            } else {
                PolarTriple::new(c, s, r.max(0.0))
            }
        })
        .collect();
    PolarPose::from_triples_unchecked(triples)
}

/// Distance from `query` to the manifold of real poses, approximated by
/// its distance to the weighted mean of its `k` nearest bank poses.
pub fn prior_distance(
    query: &PolarPose,
    bank: &[PolarPose],
    k: usize,
    kind: DistanceKind,
    w: &DistanceWeights,
) -> Result<PriorQueryResult> {
    if k < 2 {
        return Err(Error::KTooSmall(k));
    }
    let (neighbor_indices, neighbor_distances) = knn(query, bank, k, kind, w)?;
    let pose_weights = prior_weights(&neighbor_distances)?;
    let neighbours: Vec<&PolarPose> = neighbor_indices.iter().map(|&i| &bank[i]).collect();
    let prior_pose = weighted_mean_pose(&neighbours, &pose_weights);
    let manifold_distance = kind.eval(query, &prior_pose, w);
    Ok(PriorQueryResult {
        neighbor_indices,
        neighbor_distances,
        pose_weights,
        prior_pose,
        manifold_distance,
    })
}

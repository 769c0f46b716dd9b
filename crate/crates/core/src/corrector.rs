//! Pose correction: gradient descent on the Cartesian keypoints of a
//! detection against a frozen distance field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pck;
use crate::ndf::DistanceField;
use crate::optim::{Adam, AdamConfig};
use crate::pose::{
    CartesianPose, PolarPose, Representation, Skeleton, DEGENERATE_LENGTH,
    NUM_KEYPOINTS,
};
use crate::trainer::percentile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once `f` drops below this. Zero never stops early.
    pub stop_threshold: f64,
    pub record_trajectory: bool,
    pub representation: Representation,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            max_iters: 100,
            stop_threshold: 0.0,
            record_trajectory: false,
            representation: Representation::Polar,
        }
    }
}

impl CorrectionConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.stop_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "stop threshold must be >= 0, got {}",
                self.stop_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub pose: CartesianPose,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub corrected: CartesianPose,
    pub iterations_used: usize,
    pub final_distance: f64,
    /// Starts with the input pose at iteration 0.
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

/// `f` and its gradient with respect to the keypoint coordinates, chained
/// through the Cartesian-to-polar map.
pub fn cartesian_value_and_gradient<F: DistanceField>(
    field: &F,
    pose: &CartesianPose,
    skel: &Skeleton,
    repr: Representation,
) -> (f64, [[f64; 2]; NUM_KEYPOINTS]) {
    let polar = repr.encode(&pose.to_polar(skel));
    let (f, g) = field.value_and_gradient(&polar.to_flat());
    let mut out = [[0.0; 2]; NUM_KEYPOINTS];
    for (j, &(p, c)) in skel.connections().iter().enumerate() {
        let [px, py] = pose.xy(p);
        let [cx, cy] = pose.xy(c);
        let (dx, dy) = (cx - px, cy - py);
        let (gc, gs) = (g[3 * j], g[3 * j + 1]);
        let gr = if repr == Representation::Angular { 0.0 } else { g[3 * j + 2] };
        let r = dx.hypot(dy);
        let (ex, ey) = if r > DEGENERATE_LENGTH {
            let r3 = r * r * r;
            (
                gc * dy * dy / r3 - gs * dx * dy / r3 + gr * dx / r,
                -gc * dx * dy / r3 + gs * dx * dx / r3 + gr * dy / r,
            )
        } else {
            // No direction to differentiate; lengthen along x.
            (gr, 0.0)
        };
        out[c][0] += ex;
        out[c][1] += ey;
        out[p][0] -= ex;
        out[p][1] -= ey;
    }
    (f, out)
}

/// Refines a normalized pose by Adam steps on the keypoints, holding the
/// root fixed, until `f` falls below the stop threshold or `max_iters`
/// steps have been taken.
pub fn correct<F: DistanceField>(
    field: &F,
    pose: &CartesianPose,
    skel: &Skeleton,
    cfg: &CorrectionConfig,
) -> Result<CorrectionResult> {
    cfg.validate()?;
    let repr = cfg.representation;
    let mut coords = pose.coords();
    let flat = |c: &[[f64; 2]; NUM_KEYPOINTS]| c.iter().flatten().copied().collect::<Vec<f64>>();
    let mut params = flat(&coords);
    let mut opt = Adam::new(params.len(), cfg.adam());
    let mut current = pose.clone();
    let (mut f, mut g) = cartesian_value_and_gradient(field, &current, skel, repr);
    let mut trajectory = cfg.record_trajectory.then(|| {
        vec![TrajectoryPoint {
            iteration: 0,
            pose: current.clone(),
            distance: f,
        }]
    });
    let mut used = 0;
    while used < cfg.max_iters && !(f < cfg.stop_threshold) {
        g[skel.root()] = [0.0, 0.0];
        let grads = flat(&g);
        if grads.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite correction gradient at iteration {used}"
            )));
        }
        opt.step(&mut params, &grads);
        for (c, p) in coords.iter_mut().zip(params.chunks_exact(2)) {
            *c = [p[0], p[1]];
        }
        current = current.with_coords(coords)?;
        used += 1;
        (f, g) = cartesian_value_and_gradient(field, &current, skel, repr);
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                iteration: used,
                pose: current.clone(),
                distance: f,
            });
        }
    }
    Ok(CorrectionResult {
        corrected: current,
        iterations_used: used,
        final_distance: f,
        trajectory,
    })
}

/// Corrects a detection in image coordinates: normalizes it, corrects, and
/// maps the result (and any trajectory) back.
pub fn correct_detection<F: DistanceField>(
    field: &F,
    detection: &CartesianPose,
    skel: &Skeleton,
    cfg: &CorrectionConfig,
) -> Result<CorrectionResult> {
    let (norm, t) = detection.normalize_with_transform(skel)?;
    let mut res = correct(field, &norm, skel, cfg)?;
    res.corrected = t.invert(&res.corrected);
    if let Some(traj) = res.trajectory.as_mut() {
        for p in traj.iter_mut() {
            p.pose = t.invert(&p.pose);
        }
    }
    Ok(res)
}

/// [`correct_detection`] over many detections in parallel.
pub fn correct_all<F: DistanceField>(
    field: &F,
    detections: &[CartesianPose],
    skel: &Skeleton,
    cfg: &CorrectionConfig,
) -> Result<Vec<CorrectionResult>> {
    detections
        .par_iter()
        .map(|d| correct_detection(field, d, skel, cfg))
        .collect()
}

/// Percentiles 50, 75, 90, 95 and 99 of `f` over validation reals.
pub fn default_stop_candidates<F: DistanceField>(
    field: &F,
    val_reals: &[PolarPose],
    repr: Representation,
) -> Result<Vec<f64>> {
    if val_reals.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let f: Vec<f64> = val_reals
        .par_iter()
        .map(|x| field.value(&repr.encode(x).to_flat()))
        .collect();
    Ok([50.0, 75.0, 90.0, 95.0, 99.0].iter().map(|&p| percentile(&f, p)).collect())
}

/// Mean PCK@`t` when each trajectory is cut at the first iterate with
/// `f < tau`.
fn stopped_pck(trajs: &[Vec<TrajectoryPoint>], gts: &[CartesianPose], skel: &Skeleton, tau: f64, t: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (traj, gt) in trajs.iter().zip(gts) {
        let stop = traj.iter().find(|p| p.distance < tau).unwrap_or(traj.last().unwrap());
        sum += pck(&stop.pose, gt, skel, t)?.fraction;
    }
    Ok(100.0 * sum / trajs.len() as f64)
}

/// Picks the stop threshold with the best validation PCK@0.1, preferring
/// the larger threshold on ties.
///
/// Correction up to a threshold is a prefix of the run without one, so a
/// single full-length trajectory per detection serves every candidate.
pub fn calibrate_stop_threshold<F: DistanceField>(
    field: &F,
    val_detections: &[CartesianPose],
    val_gts: &[CartesianPose],
    skel: &Skeleton,
    candidates: &[f64],
    cfg: &CorrectionConfig,
) -> Result<f64> {
    if val_detections.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if val_detections.len() != val_gts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} validation detections for {} ground-truth poses",
            val_detections.len(),
            val_gts.len()
        )));
    }
    let full = CorrectionConfig {
        stop_threshold: 0.0,
        record_trajectory: true,
        ..cfg.clone()
    };
    let trajs: Vec<Vec<TrajectoryPoint>> = correct_all(field, val_detections, skel, &full)?
        .into_iter()
        .map(|r| r.trajectory.unwrap())
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &tau in candidates {
        let score = stopped_pck(&trajs, val_gts, skel, tau, 0.1)?;
        let better = match best {
            None => true,
            Some((s, t)) => score > s || (score == s && tau > t),
        };
        if better {
            best = Some((score, tau));
        }
    }
    Ok(best.unwrap().1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestIterate {
    pub thresholds: Vec<f64>,
    /// `best[p][k]`: highest PCK fraction of pose `p` at threshold `k`
    /// over its whole trajectory.
    pub best: Vec<Vec<f64>>,
    /// Mean of `best` per threshold, as a percentage.
    pub best_mean: Vec<f64>,
    /// Mean PCK of the last iterate per threshold, as a percentage.
    pub final_mean: Vec<f64>,
}

/// Per-pose best PCK over each trajectory, against the final iterate.
pub fn best_iterate_analysis(
    trajectories: &[Vec<CartesianPose>],
    gts: &[CartesianPose],
    skel: &Skeleton,
    thresholds: &[f64],
) -> Result<BestIterate> {
    if trajectories.len() != gts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} trajectories for {} ground-truth poses",
            trajectories.len(),
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let mut best = Vec::with_capacity(gts.len());
    let mut final_sum = vec![0.0; thresholds.len()];
    for (traj, gt) in trajectories.iter().zip(gts) {
        if traj.is_empty() {
            return Err(Error::LengthMismatch("empty trajectory".into()));
        }
        let mut row = vec![0.0f64; thresholds.len()];
        for (k, &t) in thresholds.iter().enumerate() {
            for p in traj {
                row[k] = row[k].max(pck(p, gt, skel, t)?.fraction);
            }
            final_sum[k] += pck(traj.last().unwrap(), gt, skel, t)?.fraction;
        }
        best.push(row);
    }
    let n = gts.len() as f64;
    let best_mean = (0..thresholds.len())
        .map(|k| 100.0 * best.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    Ok(BestIterate {
        thresholds: thresholds.to_vec(),
        best,
        best_mean,
        final_mean: final_sum.iter().map(|s| 100.0 * s / n).collect(),
    })
}

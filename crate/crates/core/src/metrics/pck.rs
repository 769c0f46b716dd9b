use crate::error::{Error, Result};
use crate::pose::{CartesianPose, Skeleton, NUM_KEYPOINTS};

/// Thresholds reported in PCK tables.
pub const PCK_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct PckResult {
    pub correct: [bool; NUM_KEYPOINTS],
    /// Fraction of correct keypoints, in `[0, 1]`.
    pub fraction: f64,
}

/// Reference length: left shoulder to right hip in the ground truth.
pub fn reference_distance(gt: &CartesianPose, skel: &Skeleton) -> f64 {
    let [ax, ay] = gt.xy(skel.shoulder_left());
    let [bx, by] = gt.xy(skel.hip_right());
    (ax - bx).hypot(ay - by)
}

/// A keypoint is correct when it lies within `t` reference lengths of its
/// ground-truth position (boundary inclusive).
pub fn pck(pred: &CartesianPose, gt: &CartesianPose, skel: &Skeleton, t: f64) -> Result<PckResult> {
    let reference = reference_distance(gt, skel);
    if !(reference > 0.0) {
        return Err(Error::DegenerateReference);
    }
    let limit = t * reference;
    let mut correct = [false; NUM_KEYPOINTS];
    for (j, c) in correct.iter_mut().enumerate() {
        let [px, py] = pred.xy(j);
        let [gx, gy] = gt.xy(j);
        *c = (px - gx).hypot(py - gy) <= limit;
    }
    let n = correct.iter().filter(|&&c| c).count();
    Ok(PckResult {
        correct,
        fraction: n as f64 / NUM_KEYPOINTS as f64,
    })
}

/// Mean PCK over aligned pairs, as a percentage.
pub fn mean_pck<'a, I>(pairs: I, skel: &Skeleton, t: f64) -> Result<f64>
where
    I: IntoIterator<Item = (&'a CartesianPose, &'a CartesianPose)>,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for (pred, gt) in pairs {
        sum += pck(pred, gt, skel, t)?.fraction;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyValidation);
    }
    Ok(100.0 * sum / n as f64)
}

/// Mean per-joint correctness over a test set, tracked across correction
/// iterations. `iterates[p][i]` is pose `p` after `i` iterations.
///
/// Returns `table[joint][iteration][threshold]` in `[0, 1]`.
pub fn joint_wise_pck_curves(
    iterates: &[Vec<CartesianPose>],
    gts: &[CartesianPose],
    skel: &Skeleton,
    thresholds: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if iterates.len() != gts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} iterate lists for {} ground-truth poses",
            iterates.len(),
            gts.len()
        )));
    }
    let n_iter = iterates.first().map_or(0, Vec::len);
    if let Some(bad) = iterates.iter().find(|v| v.len() != n_iter) {
        return Err(Error::LengthMismatch(format!(
            "iterate lists have lengths {n_iter} and {}",
            bad.len()
        )));
    }
    let mut table = vec![vec![vec![0.0; thresholds.len()]; n_iter]; NUM_KEYPOINTS];
    for (traj, gt) in iterates.iter().zip(gts) {
        for (i, pose) in traj.iter().enumerate() {
            for (ti, &t) in thresholds.iter().enumerate() {
                let res = pck(pose, gt, skel, t)?;
                for (j, &ok) in res.correct.iter().enumerate() {
                    if ok {
                        table[j][i][ti] += 1.0;
                    }
                }
            }
        }
    }
    let n = gts.len().max(1) as f64;
    for v in table.iter_mut().flatten().flatten() {
        *v /= n;
    }
    Ok(table)
}

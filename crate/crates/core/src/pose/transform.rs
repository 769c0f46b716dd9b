use super::{
    CartesianPose, Keypoint2D, PolarPose, PolarTriple, PoseSequence, Skeleton, NUM_KEYPOINTS,
};
use crate::error::{Error, Result};

/// Connections shorter than this have no defined orientation and are
/// encoded with direction `(1, 0)`.
pub const DEGENERATE_LENGTH: f64 = 1e-12;

const MIN_VERTICAL_EXTENT: f64 = 1e-9;

impl CartesianPose {
    /// Encodes each skeleton connection as `(cos φ, sin φ, r)` of the vector
    /// from parent to child keypoint.
    pub fn to_polar(&self, skel: &Skeleton) -> PolarPose {
        let triples = skel
            .connections()
            .iter()
            .map(|&(p, c)| {
                let [px, py] = self.xy(p);
                let [cx, cy] = self.xy(c);
                PolarTriple::from_vector(cx - px, cy - py)
            })
            .collect();
        PolarPose::from_triples_unchecked(triples)
    }

    /// Rescales the pose to unit vertical extent and moves the root joint to
    /// the origin. Returns the pose and the `(root, scale)` needed to undo it.
    pub fn normalize_with_transform(&self, skel: &Skeleton) -> Result<(CartesianPose, NormalizeTransform)> {
        let (min_y, max_y) = self
            .keypoints()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                (lo.min(k.y), hi.max(k.y))
            });
        let extent = max_y - min_y;
        if !(extent > MIN_VERTICAL_EXTENT) {
            return Err(Error::DegeneratePose(format!(
                "vertical extent {extent:e} is too small to normalize"
            )));
        }
        let t = NormalizeTransform {
            origin: self.xy(skel.root()),
            scale: 1.0 / extent,
        };
        Ok((t.apply(self), t))
    }

    pub fn normalize(&self, skel: &Skeleton) -> Result<CartesianPose> {
        self.normalize_with_transform(skel).map(|(p, _)| p)
    }

    /// Mirrors the pose about the vertical axis: x is negated and each
    /// left/right joint pair trades places.
    pub fn flip_horizontal(&self, skel: &Skeleton) -> CartesianPose {
        let src = self.keypoints();
        let mut out = *src;
        for (j, slot) in out.iter_mut().enumerate() {
            let k = src[skel.mirror_of(j)];
            *slot = Keypoint2D { x: -k.x, ..k };
        }
        CartesianPose::from_parts_unchecked(out)
    }

    /// `(1 − t)·self + t·other`, keypoint by keypoint.
    pub fn lerp(&self, other: &CartesianPose, t: f64) -> CartesianPose {
        let a = self.keypoints();
        let b = other.keypoints();
        let mut out = *a;
        for (j, slot) in out.iter_mut().enumerate() {
            let conf = match (a[j].confidence, b[j].confidence) {
                (Some(ca), Some(cb)) => Some((1.0 - t) * ca + t * cb),
                _ => None,
            };
            *slot = Keypoint2D {
                x: (1.0 - t) * a[j].x + t * b[j].x,
                y: (1.0 - t) * a[j].y + t * b[j].y,
                confidence: conf,
            };
        }
        CartesianPose::from_parts_unchecked(out)
    }
}

/// Affine map applied by [`CartesianPose::normalize`]:
/// `p ↦ (p − origin) · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeTransform {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, pose: &CartesianPose) -> CartesianPose {
        let mut kps = *pose.keypoints();
        for k in kps.iter_mut() {
            k.x = (k.x - self.origin[0]) * self.scale;
            k.y = (k.y - self.origin[1]) * self.scale;
        }
        CartesianPose::from_parts_unchecked(kps)
    }

    pub fn invert(&self, pose: &CartesianPose) -> CartesianPose {
        let mut kps = *pose.keypoints();
        for k in kps.iter_mut() {
            k.x = k.x / self.scale + self.origin[0];
            k.y = k.y / self.scale + self.origin[1];
        }
        CartesianPose::from_parts_unchecked(kps)
    }
}

impl PolarPose {
    /// Rebuilds keypoints by walking the skeleton from the root:
    /// `child = parent + r · (cos, sin)`.
    ///
    /// # Panics
    /// If the pose does not have one triple per skeleton connection.
    pub fn to_cartesian(&self, skel: &Skeleton, root_position: [f64; 2]) -> CartesianPose {
        assert_eq!(
            self.len(),
            skel.num_connections(),
            "polar pose has {} triples but the skeleton has {} connections",
            self.len(),
            skel.num_connections()
        );
        let mut kps = [Keypoint2D::default(); NUM_KEYPOINTS];
        kps[skel.root()] = Keypoint2D::new(root_position[0], root_position[1]);
        for (t, &(p, c)) in self.triples().iter().zip(skel.connections()) {
            let [dx, dy] = t.vector();
            kps[c] = Keypoint2D::new(kps[p].x + dx, kps[p].y + dy);
        }
        CartesianPose::from_parts_unchecked(kps)
    }
}

/// Inserts `factor − 1` linearly interpolated poses between each pair of
/// consecutive frames. Frame indices are rescaled by `factor` so that they
/// stay strictly increasing.
pub fn interpolate_sequence(seq: &PoseSequence, factor: usize) -> Result<PoseSequence> {
    if factor == 0 {
        return Err(Error::Config("interpolation factor must be at least 1".into()));
    }
    let frames = seq.frames();
    if frames.len() < 2 {
        return Err(Error::TooFewFrames(frames.len()));
    }
    let f = factor as u64;
    let mut out = Vec::with_capacity((frames.len() - 1) * factor + 1);
    for w in frames.windows(2) {
        let (ia, a) = &w[0];
        let (_, b) = &w[1];
        out.push((ia * f, a.clone()));
        for k in 1..factor {
            let t = k as f64 / factor as f64;
            out.push((ia * f + k as u64, a.lerp(b, t)));
        }
    }
    let (il, last) = frames.last().unwrap();
    out.push((il * f, last.clone()));
    PoseSequence::new(seq.sequence_id.clone(), out, seq.is_ground_truth)
}

//! Pose data types and the transforms between them.
//!
//! Poses enter the library as [`CartesianPose`]s: 17 ordered 2D keypoints.
//! The distance field never sees those directly. It consumes a
//! [`PolarPose`], one `(cos φ, sin φ, r)` triple per skeleton connection,
//! where `φ` is the orientation of the connection vector and `r` its length.

mod format;
mod skeleton;
mod transform;

pub use format::{FormatMap, FormatSlot};
pub use skeleton::{Skeleton, Topology};
pub use transform::{interpolate_sequence, NormalizeTransform, DEGENERATE_LENGTH};

use crate::error::{Error, Result};

/// Number of keypoints in the canonical pose layout.
pub const NUM_KEYPOINTS: usize = 17;

/// Tolerance on `cos² + sin² = 1` for a valid polar triple.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint2D {
    pub x: f64,
    pub y: f64,
    /// Detector confidence in `[0, 1]`, when the source provides one.
    pub confidence: Option<f64>,
}

impl Keypoint2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            confidence: None,
        }
    }

    pub fn with_confidence(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            confidence: Some(confidence),
        }
    }

    fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self
                .confidence
                .map_or(true, |c| c.is_finite() && (0.0..=1.0).contains(&c))
    }
}

/// 17 ordered keypoints in the canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianPose {
    keypoints: [Keypoint2D; NUM_KEYPOINTS],
}

impl CartesianPose {
    pub fn new(keypoints: [Keypoint2D; NUM_KEYPOINTS]) -> Result<Self> {
        if let Some(j) = keypoints.iter().position(|k| !k.is_valid()) {
            return Err(Error::InvalidPose(format!(
                "keypoint {j} is not finite or has a confidence outside [0, 1]"
            )));
        }
        Ok(Self { keypoints })
    }

    pub fn from_xy(coords: [[f64; 2]; NUM_KEYPOINTS]) -> Result<Self> {
        Self::new(coords.map(|[x, y]| Keypoint2D::new(x, y)))
    }

    pub fn keypoints(&self) -> &[Keypoint2D; NUM_KEYPOINTS] {
        &self.keypoints
    }

    pub fn keypoint(&self, joint: usize) -> &Keypoint2D {
        &self.keypoints[joint]
    }

    pub fn xy(&self, joint: usize) -> [f64; 2] {
        let k = &self.keypoints[joint];
        [k.x, k.y]
    }

    pub fn coords(&self) -> [[f64; 2]; NUM_KEYPOINTS] {
        self.keypoints.map(|k| [k.x, k.y])
    }

    /// Replaces the coordinates of every keypoint, keeping confidences.
    pub fn with_coords(&self, coords: [[f64; 2]; NUM_KEYPOINTS]) -> Result<Self> {
        let mut keypoints = self.keypoints;
        for (k, [x, y]) in keypoints.iter_mut().zip(coords) {
            k.x = x;
            k.y = y;
        }
        Self::new(keypoints)
    }

    /// Largest coordinate difference to another pose.
    pub fn max_abs_diff(&self, other: &CartesianPose) -> f64 {
        self.keypoints
            .iter()
            .zip(other.keypoints.iter())
            .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts_unchecked(keypoints: [Keypoint2D; NUM_KEYPOINTS]) -> Self {
        Self { keypoints }
    }
}

/// One connection in polar form: unit direction `(cos, sin)` and length `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarTriple {
    pub cos: f64,
    pub sin: f64,
    pub r: f64,
}

impl PolarTriple {
    pub const fn new(cos: f64, sin: f64, r: f64) -> Self {
        Self { cos, sin, r }
    }

    /// Builds a triple from a connection vector. Vectors shorter than
    /// [`DEGENERATE_LENGTH`] map to direction `(1, 0)`.
    pub fn from_vector(dx: f64, dy: f64) -> Self {
        let r = dx.hypot(dy);
        if r > DEGENERATE_LENGTH {
            Self::new(dx / r, dy / r, r)
        } else {
            Self::new(1.0, 0.0, r)
        }
    }

    /// The connection vector `r · (cos, sin)`.
    pub fn vector(&self) -> [f64; 2] {
        [self.r * self.cos, self.r * self.sin]
    }

    pub fn is_valid(&self) -> bool {
        self.cos.is_finite()
            && self.sin.is_finite()
            && self.r.is_finite()
            && self.r >= 0.0
            && (self.cos * self.cos + self.sin * self.sin - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    /// Projects an arbitrary triple back onto the valid set: the angular pair
    /// is rescaled to unit norm and the length clamped at zero. Pairs already
    /// within 1e-12 of unit norm are left bit-for-bit unchanged.
    pub fn repaired(self) -> Self {
        let norm = self.cos.hypot(self.sin);
        let (cos, sin) = if (norm - 1.0).abs() <= 1e-12 {
            (self.cos, self.sin)
        } else if norm > DEGENERATE_LENGTH && norm.is_finite() {
            (self.cos / norm, self.sin / norm)
        } else {
            (1.0, 0.0)
        };
        Self::new(cos, sin, self.r.max(0.0))
    }
}

/// A pose as one polar triple per skeleton connection.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPose {
    triples: Vec<PolarTriple>,
}

impl PolarPose {
    pub fn new(triples: Vec<PolarTriple>) -> Result<Self> {
        if let Some(j) = triples.iter().position(|t| !t.is_valid()) {
            return Err(Error::InvalidPose(format!(
                "polar triple {j} is not a unit direction with non-negative length: {:?}",
                triples[j]
            )));
        }
        Ok(Self { triples })
    }

    /// Builds a pose from raw triples, repairing each one. Fails only on
    /// non-finite input.
    pub fn repaired(triples: Vec<PolarTriple>) -> Result<Self> {
        if triples
            .iter()
            .any(|t| !(t.cos.is_finite() && t.sin.is_finite() && t.r.is_finite()))
        {
            return Err(Error::NumericalFailure(
                "non-finite component in polar pose".into(),
            ));
        }
        Ok(Self {
            triples: triples.into_iter().map(PolarTriple::repaired).collect(),
        })
    }

    /// Builds a pose from `[cos, sin, r]` components laid out contiguously.
    pub fn from_flat_repaired(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::LengthMismatch(format!(
                "flat polar vector has length {}, not a multiple of 3",
                values.len()
            )));
        }
        Self::repaired(
            values
                .chunks_exact(3)
                .map(|c| PolarTriple::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn triples(&self) -> &[PolarTriple] {
        &self.triples
    }

    /// Number of connections.
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// `[cos, sin, r]` per connection, concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        self.triples
            .iter()
            .flat_map(|t| [t.cos, t.sin, t.r])
            .collect()
    }

    /// Replaces every length with 1, leaving only orientations.
    pub fn to_unit_lengths(&self) -> PolarPose {
        PolarPose {
            triples: self
                .triples
                .iter()
                .map(|t| PolarTriple::new(t.cos, t.sin, 1.0))
                .collect(),
        }
    }

    pub(crate) fn from_triples_unchecked(triples: Vec<PolarTriple>) -> Self {
        Self { triples }
    }
}

/// An ordered run of frames from one clip and one source.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub sequence_id: String,
    frames: Vec<(u64, CartesianPose)>,
    pub is_ground_truth: bool,
}

impl PoseSequence {
    pub fn new(
        sequence_id: impl Into<String>,
        frames: Vec<(u64, CartesianPose)>,
        is_ground_truth: bool,
    ) -> Result<Self> {
        let sequence_id = sequence_id.into();
        if let Some(w) = frames.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidPose(format!(
                "sequence {sequence_id}: frame indices must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self {
            sequence_id,
            frames,
            is_ground_truth,
        })
    }

    pub fn frames(&self) -> &[(u64, CartesianPose)] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &CartesianPose> {
        self.frames.iter().map(|(_, p)| p)
    }
}

/// Distance-field input encodings.
///
/// `Polar` keeps connection lengths. `Angular` pins every length to 1 so
/// that only orientations carry information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Polar,
    Angular,
}

impl Representation {
    pub fn encode(&self, pose: &PolarPose) -> PolarPose {
        match self {
            Representation::Polar => pose.clone(),
            Representation::Angular => pose.to_unit_lengths(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Representation::Polar => "polar",
            Representation::Angular => "angular",
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polar" => Ok(Representation::Polar),
            "angular" => Ok(Representation::Angular),
            other => Err(Error::Config(format!(
                "unknown representation {other:?} (expected polar or angular)"
            ))),
        }
    }
}

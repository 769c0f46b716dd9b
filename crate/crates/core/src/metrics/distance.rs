use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PolarPose, PolarTriple};

/// Non-negative per-connection weights `w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceWeights(Vec<f64>);

impl DistanceWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!(
                "distance weights must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self(w))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Weighted Euclidean distance between per-connection vectors.
    Geodesic,
    /// Radius-scaled arc between directions plus the length difference.
    #[default]
    ArcRadius,
    /// Arc between directions only.
    Angular,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [
        DistanceKind::Geodesic,
        DistanceKind::ArcRadius,
        DistanceKind::Angular,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistanceKind::Geodesic => "geodesic",
            DistanceKind::ArcRadius => "arc_radius",
            DistanceKind::Angular => "angular",
        }
    }

    #[inline]
    fn term(&self, a: &PolarTriple, b: &PolarTriple) -> f64 {
        match self {
            DistanceKind::Geodesic => {
                let dx = a.r * a.cos - b.r * b.cos;
                let dy = a.r * a.sin - b.r * b.sin;
                (dx * dx + dy * dy).sqrt()
            }
            DistanceKind::ArcRadius => a.r * arc(a, b) + (a.r - b.r).abs(),
            DistanceKind::Angular => arc(a, b),
        }
    }

    /// Distance from `a` to `b`. Arc-radius is not symmetric: the arc term
    /// is scaled by the first argument's length.
    ///
    /// # Panics
    /// If the poses and weights disagree on the number of connections.
    pub fn eval(&self, a: &PolarPose, b: &PolarPose, w: &DistanceWeights) -> f64 {
        self.eval_bounded(a, b, w, f64::INFINITY)
            .expect("unbounded evaluation always completes")
    }

    /// Like [`eval`](Self::eval) but gives up, returning `None`, as soon as
    /// the running sum exceeds `bound`. Terms are non-negative, so an
    /// abandoned pair is strictly farther than `bound`. A completed
    /// evaluation is bit-identical to `eval`.
    pub fn eval_bounded(
        &self,
        a: &PolarPose,
        b: &PolarPose,
        w: &DistanceWeights,
        bound: f64,
    ) -> Option<f64> {
        let (ta, tb, w) = (a.triples(), b.triples(), w.as_slice());
        assert!(
            ta.len() == tb.len() && ta.len() == w.len(),
            "distance between poses with {} and {} connections under {} weights",
            ta.len(),
            tb.len(),
            w.len()
        );
        let mut sum = 0.0;
        for j in 0..ta.len() {
            sum += w[j] * self.term(&ta[j], &tb[j]);
            if sum > bound {
                return None;
            }
        }
        Some(sum)
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(DistanceKind::Geodesic),
            "arc_radius" | "arc-radius" => Ok(DistanceKind::ArcRadius),
            "angular" => Ok(DistanceKind::Angular),
            other => Err(Error::Config(format!(
                "unknown distance {other:?} (expected geodesic, arc_radius or angular)"
            ))),
        }
    }
}

/// Angle in `[0, π]` between two unit directions.
///
/// Equal to `acos` of the clamped dot product, evaluated as
/// `atan2(|cross|, dot)`: exact zero for identical directions (a rounded
/// `cos² + sin²` slightly below 1 would make `acos` return ~1e-8) and never
/// NaN.
#[inline]
fn arc(a: &PolarTriple, b: &PolarTriple) -> f64 {
    let dot = a.cos * b.cos + a.sin * b.sin;
    let cross = a.cos * b.sin - a.sin * b.cos;
    cross.abs().atan2(dot)
}

pub fn geodesic_dist(a: &PolarPose, b: &PolarPose, w: &DistanceWeights) -> f64 {
    DistanceKind::Geodesic.eval(a, b, w)
}

pub fn arc_radius_dist(a: &PolarPose, b: &PolarPose, w: &DistanceWeights) -> f64 {
    DistanceKind::ArcRadius.eval(a, b, w)
}

pub fn angular_dist(a: &PolarPose, b: &PolarPose, w: &DistanceWeights) -> f64 {
    DistanceKind::Angular.eval(a, b, w)
}

use serde::{Deserialize, Serialize};

use super::{CartesianPose, Keypoint2D, Skeleton, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// One canonical keypoint slot: the mean of one or more source keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatSlot {
    pub target: String,
    pub sources: Vec<usize>,
}

/// Conversion from a detector's keypoint layout to the canonical 17-slot
/// layout. Joints missing from the detector layout (pelvis, spine, thorax)
/// are synthesized as means of existing ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatMap {
    pub name: String,
    /// Keypoints per record in the source layout.
    pub source_keypoints: usize,
    pub slots: Vec<FormatSlot>,
}

impl FormatMap {
    pub fn from_toml(text: &str) -> Result<Self> {
        let map: FormatMap =
            toml::from_str(text).map_err(|e| Error::InvalidFormatMap(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// COCO body order (17 keypoints per record).
    pub fn coco() -> Self {
        Self::from_toml(include_str!("../../data/formats/coco.toml")).expect("bundled map")
    }

    /// COCO-WholeBody order (133 keypoints per record, body subset used).
    pub fn coco_wholebody() -> Self {
        Self::from_toml(include_str!("../../data/formats/coco_wholebody.toml"))
            .expect("bundled map")
    }

    /// Halpe26 order.
    pub fn halpe26() -> Self {
        Self::from_toml(include_str!("../../data/formats/halpe26.toml")).expect("bundled map")
    }

    /// Identity map over the canonical skeleton's joints.
    pub fn identity(skel: &Skeleton) -> Self {
        Self {
            name: "canonical".into(),
            source_keypoints: NUM_KEYPOINTS,
            slots: skel
                .joint_names()
                .iter()
                .enumerate()
                .map(|(j, n)| FormatSlot {
                    target: n.clone(),
                    sources: vec![j],
                })
                .collect(),
        }
    }

    /// Looks up a bundled map by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "coco" => Some(Self::coco()),
            "coco_wholebody" => Some(Self::coco_wholebody()),
            "halpe26" => Some(Self::halpe26()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.slots.len() != NUM_KEYPOINTS {
            return Err(Error::InvalidFormatMap(format!(
                "{}: expected {NUM_KEYPOINTS} slots, found {}",
                self.name,
                self.slots.len()
            )));
        }
        for slot in &self.slots {
            if slot.sources.is_empty() {
                return Err(Error::InvalidFormatMap(format!(
                    "{}: slot {} has no sources",
                    self.name, slot.target
                )));
            }
            if let Some(&i) = slot.sources.iter().find(|&&i| i >= self.source_keypoints) {
                return Err(Error::InvalidFormatMap(format!(
                    "{}: slot {} uses source {i} but the layout has {} keypoints",
                    self.name, slot.target, self.source_keypoints
                )));
            }
        }
        Ok(())
    }

    /// Maps source keypoints into the canonical layout.
    pub fn convert(&self, source: &[Keypoint2D]) -> Result<CartesianPose> {
        let mut out = [Keypoint2D::default(); NUM_KEYPOINTS];
        for (slot, dst) in self.slots.iter().zip(out.iter_mut()) {
            let n = slot.sources.len() as f64;
            let (mut x, mut y, mut conf) = (0.0, 0.0, Some(0.0));
            for &i in &slot.sources {
                let k = source.get(i).ok_or(Error::MissingSourceJoint {
                    index: i,
                    available: source.len(),
                })?;
                x += k.x;
                y += k.y;
                conf = conf.zip(k.confidence).map(|(a, b)| a + b);
            }
            *dst = Keypoint2D {
                x: x / n,
                y: y / n,
                confidence: conf.map(|c| c / n),
            };
        }
        CartesianPose::new(out)
    }
}

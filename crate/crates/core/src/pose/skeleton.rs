use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NUM_KEYPOINTS;
use crate::error::{Error, Result};

const DEFAULT_SKELETON: &str = include_str!("../../data/skeleton.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonFile {
    joint_names: Vec<String>,
    connections: Vec<[usize; 2]>,
    root: usize,
    #[serde(default)]
    left_right_pairs: Vec<[usize; 2]>,
    shoulder_left: usize,
    hip_right: usize,
}

/// Tree of parent → child connections over the 17 keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    connections: Vec<(usize, usize)>,
    root: usize,
    left_right_pairs: Vec<(usize, usize)>,
    shoulder_left: usize,
    hip_right: usize,
    topology: Topology,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        connections: Vec<(usize, usize)>,
        root: usize,
        left_right_pairs: Vec<(usize, usize)>,
        shoulder_left: usize,
        hip_right: usize,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSkeleton(msg));
        if joint_names.len() != NUM_KEYPOINTS {
            return bad(format!(
                "expected {NUM_KEYPOINTS} joint names, got {}",
                joint_names.len()
            ));
        }
        for (name, idx) in [
            ("root", root),
            ("shoulder_left", shoulder_left),
            ("hip_right", hip_right),
        ] {
            if idx >= NUM_KEYPOINTS {
                return bad(format!("{name} index {idx} out of range"));
            }
        }
        if shoulder_left == hip_right {
            return bad("shoulder_left and hip_right must differ".into());
        }

        // Every non-root joint is the child of exactly one connection, and
        // each parent is placed before its children.
        let mut placed = [false; NUM_KEYPOINTS];
        placed[root] = true;
        let mut child_of = [None; NUM_KEYPOINTS];
        for (c, &(p, ch)) in connections.iter().enumerate() {
            if p >= NUM_KEYPOINTS || ch >= NUM_KEYPOINTS {
                return bad(format!("connection {c} ({p}, {ch}) out of range"));
            }
            if ch == root {
                return bad(format!("connection {c} points into the root"));
            }
            if placed[ch] {
                return bad(format!("joint {ch} is the child of more than one connection"));
            }
            if !placed[p] {
                return bad(format!(
                    "connection {c} ({p}, {ch}) appears before its parent joint is reached"
                ));
            }
            placed[ch] = true;
            child_of[ch] = Some(c);
        }
        if let Some(j) = placed.iter().position(|&p| !p) {
            return bad(format!("joint {j} is not reachable from the root"));
        }

        let mut seen = [false; NUM_KEYPOINTS];
        for &(l, r) in &left_right_pairs {
            if l >= NUM_KEYPOINTS || r >= NUM_KEYPOINTS || l == r || seen[l] || seen[r] {
                return bad(format!("invalid left/right pair ({l}, {r})"));
            }
            seen[l] = true;
            seen[r] = true;
        }

        let parents = connections
            .iter()
            .map(|&(p, _)| if p == root { None } else { child_of[p] })
            .collect();
        let topology = Topology::new(parents, Self::hash_of(&connections, root));

        Ok(Self {
            joint_names,
            connections,
            root,
            left_right_pairs,
            shoulder_left,
            hip_right,
            topology,
        })
    }

    /// The default skeleton: 16 connections over the Human3.6M joint order.
    pub fn default_17() -> Self {
        Self::from_toml(DEFAULT_SKELETON).expect("bundled skeleton is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::InvalidSkeleton(e.to_string()))?;
        Self::new(
            file.joint_names,
            file.connections.into_iter().map(|[p, c]| (p, c)).collect(),
            file.root,
            file.left_right_pairs
                .into_iter()
                .map(|[l, r]| (l, r))
                .collect(),
            file.shoulder_left,
            file.hip_right,
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let file = SkeletonFile {
            joint_names: self.joint_names.clone(),
            connections: self.connections.iter().map(|&(p, c)| [p, c]).collect(),
            root: self.root,
            left_right_pairs: self.left_right_pairs.iter().map(|&(l, r)| [l, r]).collect(),
            shoulder_left: self.shoulder_left,
            hip_right: self.hip_right,
        };
        toml::to_string(&file).expect("skeleton serializes")
    }

    fn hash_of(connections: &[(usize, usize)], root: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(b"skeleton/v1");
        h.update((root as u64).to_le_bytes());
        for &(p, c) in connections {
            h.update((p as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn connections(&self) -> &[(usize, usize)] {
        &self.connections
    }

    /// Number of connections `J`.
    pub fn num_connections(&self) -> usize {
        self.connections.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn left_right_pairs(&self) -> &[(usize, usize)] {
        &self.left_right_pairs
    }

    pub fn shoulder_left(&self) -> usize {
        self.shoulder_left
    }

    pub fn hip_right(&self) -> usize {
        self.hip_right
    }

    /// The joint that takes `joint`'s place under a horizontal flip.
    pub fn mirror_of(&self, joint: usize) -> usize {
        for &(l, r) in &self.left_right_pairs {
            if joint == l {
                return r;
            }
            if joint == r {
                return l;
            }
        }
        joint
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn hash(&self) -> u64 {
        self.topology.hash
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::default_17()
    }
}

/// Connection-level tree structure: for each connection, the index of the
/// connection ending at its parent joint (`None` when it starts at the root).
///
/// This is all the distance field needs to know about the skeleton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    parents: Vec<Option<usize>>,
    hash: u64,
}

impl Topology {
    /// # Panics
    /// If a parent index does not precede its child.
    pub fn new(parents: Vec<Option<usize>>, hash: u64) -> Self {
        for (c, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                assert!(p < c, "parent connection {p} must precede connection {c}");
            }
        }
        Self { parents, hash }
    }

    /// A chain of `n` connections, each hanging off the previous one.
    pub fn chain(n: usize) -> Self {
        let parents = (0..n).map(|c| c.checked_sub(1)).collect();
        Self::new(parents, 0xC4A1_0000 + n as u64)
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }
}

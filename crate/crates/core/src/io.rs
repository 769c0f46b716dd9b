//! Line-delimited pose files and atomic file output.
//!
//! One pose per line, comma separated:
//!
//! ```text
//! sequence_id,frame_index,source,x0,y0[,c0],x1,y1[,c1],...
//! ```
//!
//! A line carries either `(x, y)` pairs or `(x, y, confidence)` triples for
//! every keypoint. Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{CartesianPose, FormatMap, Keypoint2D, PoseSequence, NUM_KEYPOINTS};

/// Source tag used for ground-truth annotations.
pub const GT_SOURCE: &str = "gt";

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub sequence_id: String,
    pub frame_index: u64,
    pub source: String,
    pub pose: CartesianPose,
}

impl PoseRecord {
    pub fn key(&self) -> (&str, u64) {
        (&self.sequence_id, self.frame_index)
    }

    pub fn is_ground_truth(&self) -> bool {
        self.source == GT_SOURCE
    }
}

/// A record in an arbitrary source layout, before format conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub sequence_id: String,
    pub frame_index: u64,
    pub source: String,
    pub keypoints: Vec<Keypoint2D>,
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses records with `n_keypoints` keypoints each.
pub fn parse_raw(text: &str, path: &str, n_keypoints: usize) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let body = fields.len().saturating_sub(3);
        let stride = if fields.len() >= 3 && body == 2 * n_keypoints {
            2
        } else if fields.len() >= 3 && body == 3 * n_keypoints {
            3
        } else {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "expected 3 + {} or 3 + {} fields, found {}",
                    2 * n_keypoints,
                    3 * n_keypoints,
                    fields.len()
                ),
            ));
        };
        if fields[0].is_empty() {
            return Err(parse_err(path, lineno, "empty sequence id"));
        }
        let frame_index = fields[1]
            .parse::<u64>()
            .map_err(|e| parse_err(path, lineno, format!("bad frame index {:?}: {e}", fields[1])))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, lineno, format!("bad number {s:?}")))
        };
        let mut keypoints = Vec::with_capacity(n_keypoints);
        for chunk in fields[3..].chunks_exact(stride) {
            let x = num(chunk[0])?;
            let y = num(chunk[1])?;
            let confidence = if stride == 3 {
                let c = num(chunk[2])?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(parse_err(path, lineno, format!("confidence {c} outside [0, 1]")));
                }
                Some(c)
            } else {
                None
            };
            keypoints.push(Keypoint2D { x, y, confidence });
        }
        out.push(RawRecord {
            sequence_id: fields[0].to_string(),
            frame_index,
            source: fields[2].to_string(),
            keypoints,
        });
    }
    Ok(out)
}

/// Parses canonical 17-keypoint records.
pub fn parse_poses(text: &str, path: &str) -> Result<Vec<PoseRecord>> {
    let map_err = |line: usize, e: Error| parse_err(path, line, e.to_string());
    parse_raw(text, path, NUM_KEYPOINTS)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let kps: [Keypoint2D; NUM_KEYPOINTS] = r.keypoints.try_into().unwrap();
            Ok(PoseRecord {
                sequence_id: r.sequence_id,
                frame_index: r.frame_index,
                source: r.source,
                pose: CartesianPose::new(kps).map_err(|e| map_err(i + 1, e))?,
            })
        })
        .collect()
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, &path.display().to_string())
}

/// Converts raw records through a format map, preserving keys and tags.
pub fn convert_records(records: &[RawRecord], map: &FormatMap) -> Result<Vec<PoseRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(PoseRecord {
                sequence_id: r.sequence_id.clone(),
                frame_index: r.frame_index,
                source: r.source.clone(),
                pose: map.convert(&r.keypoints)?,
            })
        })
        .collect()
}

fn write_keypoints(out: &mut String, kps: &[Keypoint2D]) {
    let with_conf = kps.iter().all(|k| k.confidence.is_some());
    for k in kps {
        write!(out, ",{},{}", k.x, k.y).unwrap();
        if with_conf {
            write!(out, ",{}", k.confidence.unwrap()).unwrap();
        }
    }
}

/// Formats records one per line. Confidences are written only when every
/// keypoint of a pose has one. Floats use the shortest representation that
/// round-trips exactly.
pub fn format_poses(records: &[PoseRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write!(out, "{},{},{}", r.sequence_id, r.frame_index, r.source).unwrap();
        write_keypoints(&mut out, r.pose.keypoints());
        out.push('\n');
    }
    out
}

pub fn format_raw(records: &[RawRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write!(out, "{},{},{}", r.sequence_id, r.frame_index, r.source).unwrap();
        write_keypoints(&mut out, &r.keypoints);
        out.push('\n');
    }
    out
}

pub fn write_poses(path: &Path, records: &[PoseRecord]) -> Result<()> {
    write_atomic(path, format_poses(records).as_bytes())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Groups records into sequences keyed by `(sequence_id, source)`, with
/// frames sorted by index. Duplicate frames are an error.
pub fn group_sequences(records: &[PoseRecord]) -> Result<Vec<PoseSequence>> {
    let mut groups: BTreeMap<(&str, &str), Vec<(u64, CartesianPose)>> = BTreeMap::new();
    for r in records {
        groups
            .entry((&r.sequence_id, &r.source))
            .or_default()
            .push((r.frame_index, r.pose.clone()));
    }
    groups
        .into_iter()
        .map(|((seq, src), mut frames)| {
            frames.sort_by_key(|(i, _)| *i);
            PoseSequence::new(seq, frames, src == GT_SOURCE)
        })
        .collect()
}

/// Pairs each prediction with the ground-truth record sharing its
/// `(sequence_id, frame_index)`. Every prediction must have a partner.
pub fn align<'a>(
    preds: &'a [PoseRecord],
    gts: &'a [PoseRecord],
) -> Result<Vec<(&'a PoseRecord, &'a PoseRecord)>> {
    let index: BTreeMap<(&str, u64), &PoseRecord> = gts.iter().map(|g| (g.key(), g)).collect();
    preds
        .iter()
        .map(|p| {
            index.get(&p.key()).map(|g| (p, *g)).ok_or_else(|| {
                Error::AlignmentError(format!(
                    "no ground truth for sequence {} frame {}",
                    p.sequence_id, p.frame_index
                ))
            })
        })
        .collect()
}

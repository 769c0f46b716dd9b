//! End-to-end commands: convert, prepare, synth, train, correct, eval.
//!
//! Every command reads a [`PipelineConfig`], validates it, and writes its
//! outputs under `paths.out_dir`:
//!
//! ```text
//! converted/<tag>.csv        detections in the canonical layout
//! prepared/*.labeled         normalized real poses per split
//! prepared/manifest.json     frame counts per split
//! synth/*.labeled            training and validation sets with fakes
//! model.ckpt, train_report.csv
//! corrected/<tag>.csv        corrected test detections
//! corrected/<tag>_traj/      one trajectory file per pose (optional)
//! eval/report.csv, eval/summary.json, eval/<tag>_joint_curves.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrector::{
    best_iterate_analysis, calibrate_stop_threshold, correct_all, default_stop_candidates,
    CorrectionConfig,
};
use crate::error::{Error, Result};
use crate::gait::{generate_ground_truth, sequence_id, simulate_detections, DetectorProfile, GaitConfig};
use crate::io::{self, PoseRecord};
use crate::metrics::{joint_wise_pck_curves, mean_pck, PCK_THRESHOLDS};
use crate::ndf::{NdfConfig, NdfModel};
use crate::pose::{CartesianPose, FormatMap, PolarPose, Skeleton};
use crate::synthesis::{
    augment_reals, build_error_bank, generate_fakes, read_labeled, write_labeled, ErrorBank,
    LabeledPose, SynthesisConfig,
};
use crate::trainer::{train_with_progress, EpochRow, FakeTargets, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionInput {
    pub path: PathBuf,
    /// `canonical`, a built-in format map name, or a path to a format map.
    #[serde(default = "canonical")]
    pub format: String,
}

fn canonical() -> String {
    "canonical".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub gt: PathBuf,
    #[serde(default)]
    pub detections: BTreeMap<String, DetectionInput>,
    #[serde(default)]
    pub skeleton: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Sequence ids per split. The three training lists are nested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitManifest {
    pub train_full: Vec<String>,
    pub train_half: Vec<String>,
    pub train_quarter: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let full: BTreeSet<&String> = self.train_full.iter().collect();
        for (name, list) in [("train_half", &self.train_half), ("train_quarter", &self.train_quarter)] {
            if let Some(s) = list.iter().find(|s| !full.contains(s)) {
                return Err(Error::Config(format!("{name} sequence {s} is not in train_full")));
            }
        }
        let lists = [("train_full", &self.train_full), ("val", &self.val), ("test", &self.test)];
        let mut seen: BTreeMap<&String, &str> = BTreeMap::new();
        for (name, list) in lists {
            for s in list {
                if let Some(other) = seen.insert(s, name) {
                    return Err(Error::Config(format!(
                        "sequence {s} appears in both {other} and {name}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn train(&self, split: TrainSplit) -> &[String] {
        match split {
            TrainSplit::Full => &self.train_full,
            TrainSplit::Half => &self.train_half,
            TrainSplit::Quarter => &self.train_quarter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSplit {
    #[default]
    Full,
    Half,
    Quarter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSection {
    #[serde(flatten)]
    pub config: CorrectionConfig,
    /// Pick the stop threshold on the validation split for each detector.
    pub calibrate: bool,
    /// Candidate thresholds; defaults to percentiles of `f` on validation
    /// reals.
    pub candidates: Option<Vec<f64>>,
}

impl Default for CorrectionSection {
    fn default() -> Self {
        Self {
            config: CorrectionConfig::default(),
            calibrate: true,
            candidates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sub-section seeds are derived from this one.
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    pub split: SplitManifest,
    #[serde(default)]
    pub train_split: TrainSplit,
    /// Interpolation factor for training sequences.
    #[serde(default = "default_augment")]
    pub augment_factor: usize,
    /// Fakes per validation real.
    #[serde(default = "default_val_multiplier")]
    pub val_multiplier: usize,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub ndf: NdfConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub correction: CorrectionSection,
}

fn default_augment() -> usize {
    5
}

fn default_val_multiplier() -> usize {
    5
}

impl PipelineConfig {
    /// Parses a config; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.gt);
        fix(&mut cfg.paths.out_dir);
        if let Some(s) = cfg.paths.skeleton.as_mut() {
            fix(s);
        }
        for d in cfg.paths.detections.values_mut() {
            fix(&mut d.path);
            if d.format.ends_with(".toml") {
                let mut p = PathBuf::from(&d.format);
                fix(&mut p);
                d.format = p.to_string_lossy().into_owned();
            }
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthesis.seed = seed;
        self.ndf.seed = seed.wrapping_add(1);
        self.train.seed = seed.wrapping_add(2);
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.split.train(self.train_split).is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        if self.augment_factor == 0 {
            return Err(Error::Config("augment_factor must be at least 1".into()));
        }
        self.synthesis.validate()?;
        self.ndf.validate()?;
        self.train.validate()?;
        self.correction.config.validate()?;
        for (tag, d) in &self.paths.detections {
            if tag.is_empty() || tag.contains(['/', ',', '\\']) {
                return Err(Error::Config(format!("bad detector tag {tag:?}")));
            }
            format_map(&d.format)?;
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.paths.skeleton {
            Some(p) => Skeleton::load(p),
            None => Ok(Skeleton::default()),
        }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.paths.out_dir.join(rel)
    }

    pub fn converted_path(&self, tag: &str) -> PathBuf {
        self.out(&format!("converted/{tag}.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out("model.ckpt")
    }

    pub fn corrected_path(&self, tag: &str) -> PathBuf {
        self.out(&format!("corrected/{tag}.csv"))
    }

    pub fn trajectory_dir(&self, tag: &str) -> PathBuf {
        self.out(&format!("corrected/{tag}_traj"))
    }
}

/// `None` for detections already in the canonical layout.
pub fn format_map(spec: &str) -> Result<Option<FormatMap>> {
    if spec == "canonical" {
        return Ok(None);
    }
    if let Some(m) = FormatMap::builtin(spec) {
        return Ok(Some(m));
    }
    if spec.ends_with(".toml") {
        return FormatMap::load(Path::new(spec)).map(Some);
    }
    Err(Error::Config(format!("unknown format {spec:?}")))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Converts one raw detection file to the canonical layout.
pub fn cmd_convert(input: &Path, output: &Path, map: &FormatMap) -> Result<usize> {
    let text = read_text(input)?;
    let raw = io::parse_raw(&text, &input.to_string_lossy(), map.source_keypoints)?;
    let records = io::convert_records(&raw, map)?;
    io::write_poses(output, &records)?;
    Ok(records.len())
}

/// Converts every configured detection file that is not canonical yet.
pub fn convert_all(cfg: &PipelineConfig) -> Result<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for (tag, d) in &cfg.paths.detections {
        let out = cfg.converted_path(tag);
        let n = match format_map(&d.format)? {
            Some(map) => cmd_convert(&d.path, &out, &map)?,
            None => {
                let records = io::read_poses(&d.path)?;
                io::write_poses(&out, &records)?;
                records.len()
            }
        };
        counts.insert(tag.clone(), n);
    }
    Ok(counts)
}

fn read_gt(cfg: &PipelineConfig) -> Result<Vec<PoseRecord>> {
    let records = io::read_poses(&cfg.paths.gt)?;
    if let Some(r) = records.iter().find(|r| !r.is_ground_truth()) {
        return Err(Error::AlignmentError(format!(
            "ground-truth file holds a record with source {:?}",
            r.source
        )));
    }
    Ok(records)
}

fn in_split<'a>(records: &'a [PoseRecord], ids: &[String]) -> Vec<&'a PoseRecord> {
    let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    records.iter().filter(|r| set.contains(r.sequence_id.as_str())).collect()
}

fn normalize_records(records: &[&PoseRecord], skel: &Skeleton) -> Result<Vec<PoseRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(PoseRecord {
                pose: r.pose.normalize(skel)?,
                ..(*r).clone()
            })
        })
        .collect()
}

/// Frame counts per split, as written to `prepared/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub train_full: usize,
    pub train_half: usize,
    pub train_quarter: usize,
    pub val: usize,
    pub test: usize,
    pub train_split: TrainSplit,
    /// Real training poses after interpolation and flipping.
    pub train_reals: usize,
}

pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let gt = read_gt(cfg)?;
    let s = &cfg.split;
    let train = normalize_records(&in_split(&gt, s.train(cfg.train_split)), &skel)?;
    let seqs = io::group_sequences(&train)?;
    let reals = augment_reals(&seqs, &skel, cfg.augment_factor)?;
    let j = skel.num_connections();
    write_labeled(&cfg.out("prepared/train_reals.labeled"), &reals, j)?;
    for (name, ids) in [("val", &s.val), ("test", &s.test)] {
        let poses: Vec<LabeledPose> = normalize_records(&in_split(&gt, ids), &skel)?
            .iter()
            .map(|r| LabeledPose::real(r.pose.to_polar(&skel)))
            .collect();
        write_labeled(&cfg.out(&format!("prepared/{name}_reals.labeled")), &poses, j)?;
    }
    let summary = PrepareSummary {
        train_full: in_split(&gt, &s.train_full).len(),
        train_half: in_split(&gt, &s.train_half).len(),
        train_quarter: in_split(&gt, &s.train_quarter).len(),
        val: in_split(&gt, &s.val).len(),
        test: in_split(&gt, &s.test).len(),
        train_split: cfg.train_split,
        train_reals: reals.len(),
    };
    write_json(&cfg.out("prepared/manifest.json"), &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

fn polar_of(samples: &[LabeledPose]) -> Vec<PolarPose> {
    samples.iter().map(|s| s.pose.clone()).collect()
}

/// Detections and ground truth of one split, aligned and normalized, each
/// pose by its own transform.
fn aligned_normalized(
    dets: &[PoseRecord],
    gt: &[PoseRecord],
    ids: &[String],
    skel: &Skeleton,
) -> Result<(Vec<CartesianPose>, Vec<CartesianPose>)> {
    let dets: Vec<PoseRecord> = in_split(dets, ids).into_iter().cloned().collect();
    let pairs = io::align(&dets, gt)?;
    let mut d = Vec::with_capacity(pairs.len());
    let mut g = Vec::with_capacity(pairs.len());
    for (p, t) in pairs {
        d.push(p.pose.normalize(skel)?);
        g.push(t.pose.normalize(skel)?);
    }
    Ok((d, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub error_bank: usize,
    pub train_reals: usize,
    pub train_fakes: usize,
    pub val_reals: usize,
    pub val_fakes: usize,
}

/// Builds the error bank from training-split detections and writes the
/// labeled training and validation sets.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let gt = read_gt(cfg)?;
    let train_ids = cfg.split.train(cfg.train_split);
    let mut bank = ErrorBank::default();
    for tag in cfg.paths.detections.keys() {
        let dets = io::read_poses(&cfg.converted_path(tag))?;
        let (d, g) = aligned_normalized(&dets, &gt, train_ids, &skel)?;
        bank.extend(build_error_bank(&d, &g, &skel, tag)?);
    }
    let reals = read_labeled(&cfg.out("prepared/train_reals.labeled"))?;
    let val_reals = read_labeled(&cfg.out("prepared/val_reals.labeled"))?;
    let real_bank = polar_of(&reals);
    let fakes = generate_fakes(&real_bank, &bank, &cfg.synthesis, &real_bank, &skel)?;
    let val_cfg = SynthesisConfig {
        multiplier: cfg.val_multiplier,
        seed: cfg.synthesis.seed.wrapping_add(0x5EED),
        ..cfg.synthesis.clone()
    };
    let val_fakes = if val_reals.is_empty() || cfg.val_multiplier == 0 {
        Vec::new()
    } else {
        generate_fakes(&polar_of(&val_reals), &bank, &val_cfg, &real_bank, &skel)?
    };
    let summary = SynthSummary {
        error_bank: bank.len(),
        train_reals: reals.len(),
        train_fakes: fakes.len(),
        val_reals: val_reals.len(),
        val_fakes: val_fakes.len(),
    };
    let j = skel.num_connections();
    let mut train = reals;
    train.extend(fakes);
    let mut val = val_reals;
    val.extend(val_fakes);
    write_labeled(&cfg.out("synth/train.labeled"), &train, j)?;
    write_labeled(&cfg.out("synth/val.labeled"), &val, j)?;
    write_json(&cfg.out("synth/summary.json"), &summary)?;
    Ok(summary)
}

/// First 12 hex digits of the checkpoint's SHA-256.
pub fn model_id(checkpoint_bytes: &[u8]) -> String {
    let digest = Sha256::digest(checkpoint_bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub label: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub model_id: String,
}

pub fn cmd_train(cfg: &PipelineConfig, progress: impl FnMut(&EpochRow)) -> Result<TrainSummary> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let train = read_labeled(&cfg.out("synth/train.labeled"))?;
    let val = read_labeled(&cfg.out("synth/val.labeled"))?;
    let real_bank: Vec<PolarPose> = train.iter().filter(|s| s.is_real).map(|s| s.pose.clone()).collect();
    let model = NdfModel::new(skel.topology().clone(), cfg.ndf.clone())?;
    let (model, report) = train_with_progress(model, &train, &val, &real_bank, &cfg.train, progress)?;
    let bytes = model.to_bytes();
    io::write_atomic(&cfg.checkpoint_path(), &bytes)?;
    io::write_atomic(&cfg.out("train_report.csv"), report.to_csv().as_bytes())?;
    Ok(TrainSummary {
        label: report.label.clone(),
        epochs: report.rows.len(),
        best_epoch: report.best_epoch,
        model_id: model_id(&bytes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectSummary {
    pub detector: String,
    pub poses: usize,
    pub stop_threshold: f64,
    pub mean_iterations: f64,
}

fn load_model(cfg: &PipelineConfig, skel: &Skeleton) -> Result<(NdfModel, String)> {
    let path = cfg.checkpoint_path();
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let model = NdfModel::from_bytes(&bytes, Some(skel.hash()))?;
    Ok((model, model_id(&bytes)))
}

fn format_trajectory(points: &[crate::corrector::TrajectoryPoint]) -> String {
    let mut out = String::from("iteration,distance,coords\n");
    for p in points {
        write!(out, "{},{}", p.iteration, p.distance).unwrap();
        for [x, y] in p.pose.coords() {
            write!(out, ",{x},{y}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_trajectory(text: &str, path: &str) -> Result<Vec<CartesianPose>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = |m: &str| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message: m.to_string(),
        };
        let vals: Vec<f64> = line
            .split(',')
            .skip(2)
            .map(|v| v.trim().parse::<f64>().map_err(|_| err("bad number")))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * crate::pose::NUM_KEYPOINTS {
            return Err(err("wrong number of coordinates"));
        }
        let coords = std::array::from_fn(|j| [vals[2 * j], vals[2 * j + 1]]);
        out.push(CartesianPose::from_xy(coords)?);
    }
    Ok(out)
}

fn trajectory_file(dir: &Path, r: &PoseRecord) -> PathBuf {
    dir.join(format!("{}_{}.csv", r.sequence_id, r.frame_index))
}

/// Corrects the test-split detections of every detector.
pub fn cmd_correct(cfg: &PipelineConfig) -> Result<Vec<CorrectSummary>> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let (model, id) = load_model(cfg, &skel)?;
    let gt = read_gt(cfg)?;
    let base = CorrectionConfig {
        representation: cfg.train.representation,
        ..cfg.correction.config.clone()
    };
    let val_reals = polar_of(&read_labeled(&cfg.out("prepared/val_reals.labeled"))?);
    let mut summaries = Vec::new();
    for tag in cfg.paths.detections.keys() {
        let dets = io::read_poses(&cfg.converted_path(tag))?;
        let mut ccfg = base.clone();
        if cfg.correction.calibrate {
            let val_dets: Vec<PoseRecord> = in_split(&dets, &cfg.split.val).into_iter().cloned().collect();
            let pairs = io::align(&val_dets, &gt)?;
            let vd: Vec<CartesianPose> = pairs.iter().map(|(d, _)| d.pose.clone()).collect();
            let vg: Vec<CartesianPose> = pairs.iter().map(|(_, g)| g.pose.clone()).collect();
            let candidates = match &cfg.correction.candidates {
                Some(c) => c.clone(),
                None => default_stop_candidates(&model, &val_reals, base.representation)?,
            };
            ccfg.stop_threshold = calibrate_stop_threshold(&model, &vd, &vg, &skel, &candidates, &base)?;
        }
        let test: Vec<PoseRecord> = in_split(&dets, &cfg.split.test).into_iter().cloned().collect();
        let poses: Vec<CartesianPose> = test.iter().map(|r| r.pose.clone()).collect();
        let results = correct_all(&model, &poses, &skel, &ccfg)?;
        let corrected: Vec<PoseRecord> = test
            .iter()
            .zip(&results)
            .map(|(r, res)| PoseRecord {
                source: format!("corrected:{id}"),
                pose: res.corrected.clone(),
                ..r.clone()
            })
            .collect();
        io::write_poses(&cfg.corrected_path(tag), &corrected)?;
        if ccfg.record_trajectory {
            let dir = cfg.trajectory_dir(tag);
            for (r, res) in test.iter().zip(&results) {
                let traj = res.trajectory.as_deref().unwrap_or_default();
                io::write_atomic(&trajectory_file(&dir, r), format_trajectory(traj).as_bytes())?;
            }
        }
        let iters: usize = results.iter().map(|r| r.iterations_used).sum();
        summaries.push(CorrectSummary {
            detector: tag.clone(),
            poses: results.len(),
            stop_threshold: ccfg.stop_threshold,
            mean_iterations: iters as f64 / results.len().max(1) as f64,
        });
    }
    write_json(&cfg.out("corrected/summary.json"), &summaries)?;
    Ok(summaries)
}

/// PCK of one set of poses at each of [`PCK_THRESHOLDS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub detector: String,
    /// `raw` or `corrected`.
    pub stage: String,
    pub label: String,
    pub poses: usize,
    pub pck: Vec<f64>,
    /// Best-iterate PCK, when trajectories were recorded.
    pub best_iterate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub rows: Vec<EvalRow>,
}

/// Rounds to two decimals, as reported.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl EvalReport {
    /// Reads `eval/summary.json`.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("eval summary: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector,stage,label,poses");
        for t in &self.thresholds {
            write!(out, ",pck@{t}").unwrap();
        }
        for t in &self.thresholds {
            write!(out, ",best@{t}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.detector, r.stage, r.label, r.poses).unwrap();
            for v in &r.pck {
                write!(out, ",{:.2}", v).unwrap();
            }
            for k in 0..self.thresholds.len() {
                match &r.best_iterate {
                    Some(b) => write!(out, ",{:.2}", b[k]).unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// PCK table over aligned prediction/ground-truth records.
pub fn pck_table(preds: &[PoseRecord], gt: &[PoseRecord], skel: &Skeleton) -> Result<Vec<f64>> {
    let pairs = io::align(preds, gt)?;
    PCK_THRESHOLDS
        .iter()
        .map(|&t| {
            mean_pck(pairs.iter().map(|(p, g)| (&p.pose, &g.pose)), skel, t).map(round2)
        })
        .collect()
}

fn curves_csv(table: &[Vec<Vec<f64>>], skel: &Skeleton) -> String {
    let mut out = String::from("joint,iteration");
    for t in PCK_THRESHOLDS {
        write!(out, ",pck@{t}").unwrap();
    }
    out.push('\n');
    for (j, per_iter) in table.iter().enumerate() {
        for (i, row) in per_iter.iter().enumerate() {
            write!(out, "{},{}", skel.joint_names()[j], i).unwrap();
            for v in row {
                write!(out, ",{:.2}", 100.0 * v).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// PCK of raw and corrected test detections per detector, plus
/// best-iterate and joint-wise curves where trajectories exist.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let gt = read_gt(cfg)?;
    let label = cfg.train.ablation_label();
    let mut report = EvalReport {
        thresholds: PCK_THRESHOLDS.to_vec(),
        rows: Vec::new(),
    };
    for tag in cfg.paths.detections.keys() {
        let dets = io::read_poses(&cfg.converted_path(tag))?;
        let test: Vec<PoseRecord> = in_split(&dets, &cfg.split.test).into_iter().cloned().collect();
        report.rows.push(EvalRow {
            detector: tag.clone(),
            stage: "raw".into(),
            label: label.clone(),
            poses: test.len(),
            pck: pck_table(&test, &gt, &skel)?,
            best_iterate: None,
        });
        let cpath = cfg.corrected_path(tag);
        if !cpath.exists() {
            continue;
        }
        let corrected = io::read_poses(&cpath)?;
        let dir = cfg.trajectory_dir(tag);
        let mut best = None;
        if dir.is_dir() {
            let pairs = io::align(&corrected, &gt)?;
            let mut trajs = Vec::with_capacity(pairs.len());
            let mut gts = Vec::with_capacity(pairs.len());
            for (r, g) in &pairs {
                let path = trajectory_file(&dir, r);
                trajs.push(parse_trajectory(&read_text(&path)?, &path.to_string_lossy())?);
                gts.push(g.pose.clone());
            }
            let analysis = best_iterate_analysis(&trajs, &gts, &skel, &PCK_THRESHOLDS)?;
            best = Some(analysis.best_mean.iter().copied().map(round2).collect());
            // Early-stopped poses hold their last iterate.
            let longest = trajs.iter().map(Vec::len).max().unwrap_or(0);
            for t in trajs.iter_mut() {
                let last = t.last().unwrap().clone();
                t.resize(longest, last);
            }
            let table = joint_wise_pck_curves(&trajs, &gts, &skel, &PCK_THRESHOLDS)?;
            io::write_atomic(
                &cfg.out(&format!("eval/{tag}_joint_curves.csv")),
                curves_csv(&table, &skel).as_bytes(),
            )?;
        }
        report.rows.push(EvalRow {
            detector: tag.clone(),
            stage: "corrected".into(),
            label: label.clone(),
            poses: corrected.len(),
            pck: pck_table(&corrected, &gt, &skel)?,
            best_iterate: best,
        });
    }
    io::write_atomic(&cfg.out("eval/report.csv"), report.to_csv().as_bytes())?;
    write_json(&cfg.out("eval/summary.json"), &report)?;
    Ok(report)
}

/// convert, prepare, synth, train, correct and eval in order.
pub fn cmd_pipeline(cfg: &PipelineConfig, progress: impl FnMut(&EpochRow)) -> Result<EvalReport> {
    cfg.validate()?;
    convert_all(cfg)?;
    cmd_prepare(cfg)?;
    cmd_synth(cfg)?;
    cmd_train(cfg, progress)?;
    cmd_correct(cfg)?;
    cmd_eval(cfg)
}


/// Layout of a generated gait fixture. Sequences are split in order: the
/// first half trains, the next fifth validates, the rest tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub gait: GaitConfig,
    pub detector_seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            gait: GaitConfig::default(),
            detector_seed: 3,
        }
    }
}

/// Training settings that fit the gait fixture on one CPU core.
pub fn fixture_train_config() -> (NdfConfig, TrainConfig) {
    let ndf = NdfConfig {
        embedding_dim: 8,
        encoder_hidden: vec![16],
        decoder_hidden: vec![32, 32],
        seed: 0,
    };
    let train = TrainConfig {
        batch_size: 4,
        rebalance: true,
        squared_loss: true,
        projection_descent_only: true,
        fake_targets: FakeTargets::Both,
        ..TrainConfig::default()
    };
    (ndf, train)
}

/// Writes ground truth, COCO-layout detections from the built-in detector
/// profiles and a ready-to-run `pipeline.toml` into `dir`. Returns the
/// config path.
pub fn write_gait_fixture(dir: &Path, fx: &FixtureConfig) -> Result<PathBuf> {
    let n = fx.gait.sequences;
    if n < 5 {
        return Err(Error::Config("a fixture needs at least 5 sequences".into()));
    }
    let gt = generate_ground_truth(&fx.gait);
    io::write_poses(&dir.join("gt.csv"), &gt)?;
    let mut detections = BTreeMap::new();
    for profile in DetectorProfile::builtin() {
        let raw = simulate_detections(&gt, &profile, fx.detector_seed)?;
        let rel = format!("detections/{}.csv", profile.name);
        io::write_atomic(&dir.join(&rel), io::format_raw(&raw).as_bytes())?;
        detections.insert(
            profile.name.clone(),
            DetectionInput {
                path: rel.into(),
                format: "coco".into(),
            },
        );
    }
    let ids = |r: std::ops::Range<usize>| r.map(sequence_id).collect::<Vec<_>>();
    let n_train = n / 2;
    let n_val = (n / 5).max(1);
    let split = SplitManifest {
        train_full: ids(0..n_train),
        train_half: ids(0..(n_train / 2).max(1)),
        train_quarter: ids(0..(n_train / 4).max(1)),
        val: ids(n_train..n_train + n_val),
        test: ids(n_train + n_val..n),
    };
    let (ndf, train) = fixture_train_config();
    let cfg = PipelineConfig {
        seed: fx.gait.seed,
        paths: Paths {
            gt: "gt.csv".into(),
            detections,
            skeleton: None,
            out_dir: "out".into(),
        },
        split,
        train_split: TrainSplit::Full,
        augment_factor: 1,
        val_multiplier: default_val_multiplier(),
        synthesis: SynthesisConfig::default(),
        ndf,
        train,
        correction: CorrectionSection::default(),
    };
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("pipeline.toml");
    io::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

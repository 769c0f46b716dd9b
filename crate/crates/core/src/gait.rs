//! Procedural walking sequences over the default skeleton, and simulated
//! detectors that corrupt them.
//!
//! Each sequence is one subject with randomized proportions walking across
//! the image. Joint angles are sinusoids of the gait phase. Detections come
//! out in COCO keypoint order so they go through the same format
//! conversion as real detector output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{PoseRecord, RawRecord, GT_SOURCE};
use crate::pose::{CartesianPose, Keypoint2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    pub sequences: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            sequences: 40,
            frames: 25,
            seed: 0,
        }
    }
}

pub fn sequence_id(i: usize) -> String {
    format!("gait-{i:03}")
}

struct Subject {
    height: f64,
    thigh: f64,
    shin: f64,
    torso: f64,
    neck: f64,
    head: f64,
    upper_arm: f64,
    forearm: f64,
    hip_half: f64,
    shoulder_half: f64,
    stride: f64,
    knee_flex: f64,
    elbow_flex: f64,
    lean: f64,
    period: f64,
    phase: f64,
    speed: f64,
    start: [f64; 2],
    facing: f64,
}

impl Subject {
    fn sample(rng: &mut impl Rng) -> Self {
        let mut vary = |base: f64| base * rng.gen_range(0.96..1.04);
        let (thigh, shin, torso, neck, head) = (vary(0.245), vary(0.25), vary(0.29), vary(0.12), vary(0.06));
        let (upper_arm, forearm) = (vary(0.17), vary(0.15));
        Self {
            height: rng.gen_range(180.0..260.0),
            thigh,
            shin,
            torso,
            neck,
            head,
            upper_arm,
            forearm,
            hip_half: rng.gen_range(0.04..0.06),
            shoulder_half: rng.gen_range(0.05..0.08),
            stride: rng.gen_range(0.35..0.5),
            knee_flex: rng.gen_range(0.7..1.0),
            elbow_flex: rng.gen_range(0.3..0.5),
            lean: rng.gen_range(0.02..0.08),
            period: rng.gen_range(24.0..36.0),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            speed: rng.gen_range(2.0..5.0),
            start: [rng.gen_range(150.0..350.0), rng.gen_range(300.0..400.0)],
            facing: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        }
    }

    fn pose(&self, frame: usize) -> CartesianPose {
        let s = self.height;
        let t = frame as f64;
        let phi = std::f64::consts::TAU * t / self.period + self.phase;
        let fx = self.facing;
        // Direction at angle `a` from straight down, positive = forward.
        let down = |a: f64| [fx * a.sin(), a.cos()];
        let add = |p: [f64; 2], d: [f64; 2], len: f64| [p[0] + d[0] * len * s, p[1] + d[1] * len * s];
        let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];

        let pelvis = [
            self.start[0] + fx * self.speed * t,
            self.start[1] + 0.015 * s * (2.0 * phi).cos(),
        ];
        let hip_off = [self.hip_half * s, 0.005 * s];
        let r_hip = [pelvis[0] + hip_off[0], pelvis[1] + hip_off[1]];
        let l_hip = [pelvis[0] - hip_off[0], pelvis[1] - hip_off[1]];
        let leg = |hip: [f64; 2], p: f64| {
            let thigh = self.stride * p.sin();
            let flex = self.knee_flex * 0.5 * (1.0 + (p + 0.6).cos());
            let knee = add(hip, down(thigh), self.thigh);
            (knee, add(knee, down(thigh - flex), self.shin))
        };
        let (r_knee, r_ankle) = leg(r_hip, phi);
        let (l_knee, l_ankle) = leg(l_hip, phi + std::f64::consts::PI);

        let lean = self.lean + 0.03 * (2.0 * phi).sin();
        let up = [fx * lean.sin(), -lean.cos()];
        let thorax = add(pelvis, up, self.torso);
        let spine = add(mid(pelvis, thorax), [fx, 0.0], 0.01);
        let nose = add(add(thorax, up, self.neck), [fx, 0.0], 0.03);
        let head = add(add(nose, up, self.head), [fx, 0.0], -0.02);
        let sh_off = [self.shoulder_half * s, 0.004 * s];
        let r_sh = [thorax[0] + sh_off[0], thorax[1] + sh_off[1]];
        let l_sh = [thorax[0] - sh_off[0], thorax[1] - sh_off[1]];
        let arm = |sh: [f64; 2], p: f64| {
            let swing = -0.8 * self.stride * p.sin();
            let bend = self.elbow_flex * (0.7 + 0.3 * p.sin());
            let elbow = add(sh, down(swing), self.upper_arm);
            (elbow, add(elbow, down(swing + bend), self.forearm))
        };
        let (r_el, r_wr) = arm(r_sh, phi);
        let (l_el, l_wr) = arm(l_sh, phi + std::f64::consts::PI);

        CartesianPose::from_xy([
            pelvis, r_hip, r_knee, r_ankle, l_hip, l_knee, l_ankle, spine, thorax, nose, head, l_sh,
            l_el, l_wr, r_sh, r_el, r_wr,
        ])
        .expect("gait poses are finite")
    }
}

/// Ground-truth records, `cfg.frames` consecutive frames per sequence.
pub fn generate_ground_truth(cfg: &GaitConfig) -> Vec<PoseRecord> {
    let mut out = Vec::with_capacity(cfg.sequences * cfg.frames);
    for i in 0..cfg.sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let subject = Subject::sample(&mut rng);
        for f in 0..cfg.frames {
            out.push(PoseRecord {
                sequence_id: sequence_id(i),
                frame_index: f as u64,
                source: GT_SOURCE.to_string(),
                pose: subject.pose(f),
            });
        }
    }
    out
}

/// Canonical (Human3.6M order) keypoints to COCO order. Eyes and ears are
/// placed around the head so that the COCO format map recovers it.
pub fn coco_keypoints(pose: &CartesianPose) -> Vec<Keypoint2D> {
    let c = pose.coords();
    let extent = vertical_extent(pose);
    let head = c[10];
    let at = |p: [f64; 2]| Keypoint2D::new(p[0], p[1]);
    let off = |dx: f64, dy: f64| Keypoint2D::new(head[0] + dx * extent, head[1] + dy * extent);
    vec![
        at(c[9]),
        off(0.015, 0.0),
        off(-0.015, 0.0),
        off(0.03, 0.01),
        off(-0.03, 0.01),
        at(c[11]),
        at(c[14]),
        at(c[12]),
        at(c[15]),
        at(c[13]),
        at(c[16]),
        at(c[4]),
        at(c[1]),
        at(c[5]),
        at(c[2]),
        at(c[6]),
        at(c[3]),
    ]
}

fn vertical_extent(pose: &CartesianPose) -> f64 {
    let ys = pose.keypoints().iter().map(|k| k.y);
    ys.clone().fold(f64::NEG_INFINITY, f64::max) - ys.fold(f64::INFINITY, f64::min)
}

/// COCO left/right keypoint pairs that a detector can confuse.
const COCO_LR: [(usize, usize); 6] = [(5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];
/// COCO limb ends that a detector can misplace.
const COCO_LIMBS: [usize; 8] = [7, 8, 9, 10, 13, 14, 15, 16];

/// Error model of a simulated detector. Magnitudes are fractions of the
/// pose's vertical extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorProfile {
    pub name: String,
    /// Standard deviation of per-keypoint Gaussian jitter.
    pub jitter: f64,
    /// Chance per frame that one left/right pair is swapped.
    pub swap_prob: f64,
    /// Chance per frame that one limb end is displaced.
    pub displace_prob: f64,
    pub displace_scale: f64,
}

impl DetectorProfile {
    pub fn builtin() -> Vec<Self> {
        let p = |name: &str, jitter, swap_prob, displace_prob, displace_scale| Self {
            name: name.to_string(),
            jitter,
            swap_prob,
            displace_prob,
            displace_scale,
        };
        vec![
            p("noisy-a", 0.008, 0.02, 0.03, 0.15),
            p("noisy-b", 0.015, 0.05, 0.08, 0.2),
            p("noisy-c", 0.025, 0.08, 0.15, 0.25),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.swap_prob, self.displace_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !(self.jitter >= 0.0) || !(self.displace_scale >= 0.0) {
            return Err(Error::Config(format!("invalid detector profile {}", self.name)));
        }
        Ok(())
    }
}

/// One COCO-order detection per ground-truth record, tagged with the
/// profile name.
pub fn simulate_detections(gts: &[PoseRecord], profile: &DetectorProfile, seed: u64) -> Result<Vec<RawRecord>> {
    profile.validate()?;
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(gts.len());
    for (i, gt) in gts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let extent = vertical_extent(&gt.pose);
        let mut kps = coco_keypoints(&gt.pose);
        for k in kps.iter_mut() {
            k.x += profile.jitter * extent * rng.sample(normal);
            k.y += profile.jitter * extent * rng.sample(normal);
        }
        if rng.gen_bool(profile.swap_prob) {
            let &(a, b) = COCO_LR.choose(&mut rng).unwrap();
            kps.swap(a, b);
        }
        if rng.gen_bool(profile.displace_prob) {
            let &j = COCO_LIMBS.choose(&mut rng).unwrap();
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = profile.displace_scale * extent * rng.gen_range(0.5..1.0);
            kps[j].x += len * a.cos();
            kps[j].y += len * a.sin();
        }
        for k in kps.iter_mut() {
            k.confidence = Some(rng.gen_range(0.3..1.0));
        }
        out.push(RawRecord {
            sequence_id: gt.sequence_id.clone(),
            frame_index: gt.frame_index,
            source: profile.name.clone(),
            keypoints: kps,
        });
    }
    Ok(out)
}

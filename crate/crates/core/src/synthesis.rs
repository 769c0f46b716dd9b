//! Detection-error bank, fake-pose generation and real-pose augmentation.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{prior_distance, DistanceKind, DistanceWeights};
use crate::pose::{
    interpolate_sequence, CartesianPose, PolarPose, PolarTriple, PoseSequence, Skeleton,
    NUM_KEYPOINTS,
};

/// Componentwise polar differences between detections and their ground
/// truth, one flat `[Δcos, Δsin, Δr, ...]` entry per aligned pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorBank {
    errors: Vec<Vec<f64>>,
    sources: Vec<String>,
}

impl ErrorBank {
    pub fn errors(&self) -> &[Vec<f64>] {
        &self.errors
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Appends the entries of `other`.
    pub fn extend(&mut self, other: ErrorBank) {
        self.errors.extend(other.errors);
        self.sources.extend(other.sources);
    }
}

/// Builds the bank from aligned detection and ground-truth lists, tagging
/// every entry with `source`.
pub fn build_error_bank(
    detections: &[CartesianPose],
    gts: &[CartesianPose],
    skel: &Skeleton,
    source: &str,
) -> Result<ErrorBank> {
    if detections.len() != gts.len() {
        return Err(Error::AlignmentError(format!(
            "{} detections for {} ground-truth poses",
            detections.len(),
            gts.len()
        )));
    }
    let errors = detections
        .iter()
        .zip(gts)
        .map(|(d, g)| {
            let (d, g) = (d.to_polar(skel).to_flat(), g.to_polar(skel).to_flat());
            d.iter().zip(&g).map(|(a, b)| a - b).collect()
        })
        .collect();
    Ok(ErrorBank {
        errors,
        sources: vec![source.to_string(); detections.len()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Fakes generated per ground-truth pose.
    pub multiplier: usize,
    /// Scale of the Cartesian noise term.
    pub lambda: f64,
    pub seed: u64,
    /// Distance used to label fakes.
    pub distance: DistanceKind,
    /// Neighbours in the labeling prior.
    pub k: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            multiplier: 50,
            lambda: 0.01,
            seed: 0,
            distance: DistanceKind::ArcRadius,
            k: 3,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(Error::Config("synthesis multiplier must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.k < 2 {
            return Err(Error::KTooSmall(self.k));
        }
        Ok(())
    }
}

/// A training sample: a pose and its distance to the real-pose manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPose {
    pub pose: PolarPose,
    pub distance: f64,
    pub is_real: bool,
}

impl LabeledPose {
    pub fn real(pose: PolarPose) -> Self {
        Self {
            pose,
            distance: 0.0,
            is_real: true,
        }
    }

    pub fn fake(pose: PolarPose, distance: f64) -> Self {
        Self {
            pose,
            distance,
            is_real: false,
        }
    }
}

/// `u·ε + x + λ·T(ξ)` componentwise, before repair.
pub fn compose_fake(gt: &PolarPose, error: &[f64], u: f64, noise: &PolarPose, lambda: f64) -> Vec<f64> {
    gt.to_flat()
        .iter()
        .zip(error)
        .zip(noise.to_flat())
        .map(|((x, e), n)| u * e + x + lambda * n)
        .collect()
}

/// Random stream for fake number `index`: independent of how the work is
/// split across threads.
fn fake_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `multiplier · |gts|` fakes and labels each by its prior distance
/// to `labeling_bank`.
pub fn generate_fakes(
    gts: &[PolarPose],
    bank: &ErrorBank,
    cfg: &SynthesisConfig,
    labeling_bank: &[PolarPose],
    skel: &Skeleton,
) -> Result<Vec<LabeledPose>> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if gts.is_empty() {
        return Err(Error::EmptyGts);
    }
    let weights = DistanceWeights::ones(skel.num_connections());
    let n = cfg.multiplier * gts.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = fake_rng(cfg.seed, i);
            let u: f64 = rng.gen();
            let j = rng.gen_range(0..bank.len());
            let k = rng.gen_range(0..gts.len());
            let xi: [[f64; 2]; NUM_KEYPOINTS] = std::array::from_fn(|_| {
                [rng.sample(StandardNormal), rng.sample(StandardNormal)]
            });
            let noise = CartesianPose::from_xy(xi)?.to_polar(skel);
            let raw = compose_fake(&gts[k], &bank.errors[j], u, &noise, cfg.lambda);
            let pose = PolarPose::from_flat_repaired(&raw)?;
            let d = prior_distance(&pose, labeling_bank, cfg.k, cfg.distance, &weights)?.manifold_distance;
            Ok(LabeledPose::fake(pose, d))
        })
        .collect()
}

/// Real training poses: every sequence interpolated by `factor` (sequences
/// with a single frame are kept as they are), plus the horizontal flip of
/// each resulting pose.
pub fn augment_reals(seqs: &[PoseSequence], skel: &Skeleton, factor: usize) -> Result<Vec<LabeledPose>> {
    let mut out = Vec::new();
    for seq in seqs {
        let dense = if seq.len() >= 2 {
            interpolate_sequence(seq, factor)?
        } else {
            seq.clone()
        };
        let poses: Vec<&CartesianPose> = dense.poses().collect();
        for p in &poses {
            out.push(LabeledPose::real(p.to_polar(skel)));
        }
        for p in &poses {
            out.push(LabeledPose::real(p.flip_horizontal(skel).to_polar(skel)));
        }
    }
    Ok(out)
}

const LABELED_MAGIC: &str = "#poseprior-labeled";
const LABELED_VERSION: &str = "v1";

/// Line format: a header `#poseprior-labeled v1 connections=J`, then one
/// sample per line as `is_real,distance,cos0,sin0,r0,...`.
pub fn format_labeled(samples: &[LabeledPose], connections: usize) -> String {
    let mut out = format!("{LABELED_MAGIC} {LABELED_VERSION} connections={connections}\n");
    for s in samples {
        write!(out, "{},{}", u8::from(s.is_real), s.distance).unwrap();
        for v in s.pose.to_flat() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_labeled(text: &str, path: &str) -> Result<(usize, Vec<LabeledPose>)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let mut parts = header.split_whitespace();
    if parts.next() != Some(LABELED_MAGIC) {
        return Err(Error::FormatVersionMismatch(format!(
            "{path}: missing {LABELED_MAGIC} header"
        )));
    }
    match parts.next() {
        Some(LABELED_VERSION) => {}
        other => {
            return Err(Error::FormatVersionMismatch(format!(
                "{path}: expected version {LABELED_VERSION}, found {}",
                other.unwrap_or("nothing")
            )))
        }
    }
    let connections = parts
        .next()
        .and_then(|s| s.strip_prefix("connections="))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::Corrupt(format!("{path}: header lacks connections=N")))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + 3 * connections {
            return Err(perr(
                lineno,
                format!("expected {} fields, found {}", 2 + 3 * connections, fields.len()),
            ));
        }
        let is_real = match fields[0] {
            "1" => true,
            "0" => false,
            f => return Err(perr(lineno, format!("bad real flag {f:?}"))),
        };
        let nums = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| perr(lineno, "bad number".into()))?;
        let distance = nums[0];
        if distance < 0.0 || (is_real && distance != 0.0) {
            return Err(perr(lineno, format!("invalid distance {distance}")));
        }
        let pose = PolarPose::new(
            nums[1..]
                .chunks_exact(3)
                .map(|c| PolarTriple::new(c[0], c[1], c[2]))
                .collect(),
        )
        .map_err(|e| perr(lineno, e.to_string()))?;
        out.push(LabeledPose {
            pose,
            distance,
            is_real,
        });
    }
    Ok((connections, out))
}

pub fn write_labeled(path: &Path, samples: &[LabeledPose], connections: usize) -> Result<()> {
    crate::io::write_atomic(path, format_labeled(samples, connections).as_bytes())
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled(&text, &path.display().to_string()).map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::arc_radius_dist;

    fn skel() -> Skeleton {
        Skeleton::default_17()
    }

    fn stick(phase: f64) -> CartesianPose {
        // Upright figure with a little joint-angle variation.
        let mut c = [[0.0; 2]; NUM_KEYPOINTS];
        let s = phase.sin() * 0.05;
        c[0] = [0.0, 0.0];
        c[1] = [-0.1, 0.0];
        c[2] = [-0.1 + s, 0.25];
        c[3] = [-0.1, 0.5];
        c[4] = [0.1, 0.0];
        c[5] = [0.1 - s, 0.25];
        c[6] = [0.1, 0.5];
        c[7] = [0.0, -0.15];
        c[8] = [0.0, -0.3];
        c[9] = [0.0, -0.37];
        c[10] = [0.0, -0.45];
        c[11] = [0.12, -0.3];
        c[12] = [0.15 + s, -0.1];
        c[13] = [0.17, 0.05];
        c[14] = [-0.12, -0.3];
        c[15] = [-0.15 - s, -0.1];
        c[16] = [-0.17, 0.05];
        CartesianPose::from_xy(c).unwrap()
    }

    fn rotated(p: &CartesianPose, joint: usize, about: usize) -> CartesianPose {
        // Quarter turn of `joint` about `about`.
        let mut c = p.coords();
        let [ax, ay] = c[about];
        let [x, y] = c[joint];
        c[joint] = [ax - (y - ay), ay + (x - ax)];
        CartesianPose::from_xy(c).unwrap()
    }

    #[test]
    fn perfect_detections_give_zero_bank() {
        let g: Vec<_> = (0..4).map(|i| stick(i as f64)).collect();
        let bank = build_error_bank(&g, &g, &skel(), "a").unwrap();
        assert_eq!(bank.len(), 4);
        assert!(bank.errors().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bank_error_is_local() {
        let g = stick(0.3);
        // Connection 2 runs RKnee (2) -> RAnkle (3).
        let d = rotated(&g, 3, 2);
        let bank = build_error_bank(&[d.clone()], &[g.clone()], &skel(), "a").unwrap();
        let e = &bank.errors()[0];
        for (i, v) in e.iter().enumerate() {
            if i / 3 == 2 && i % 3 != 2 {
                assert!(v.abs() > 1e-3);
            } else {
                assert!(v.abs() < 1e-12, "slot {i}: {v}");
            }
        }
        // Hand subtraction.
        let (dp, gp) = (d.to_polar(&skel()), g.to_polar(&skel()));
        let (a, b) = (dp.triples()[2], gp.triples()[2]);
        assert_eq!(&e[6..9], &[a.cos - b.cos, a.sin - b.sin, a.r - b.r]);
    }

    #[test]
    fn bank_rejects_unaligned() {
        assert!(matches!(
            build_error_bank(&[stick(0.0)], &[], &skel(), "a"),
            Err(Error::AlignmentError(_))
        ));
    }

    #[test]
    fn unit_error_reproduces_detection() {
        let g = stick(0.1);
        let d = rotated(&g, 13, 12);
        let bank = build_error_bank(&[d.clone()], &[g.clone()], &skel(), "a").unwrap();
        let zero = CartesianPose::from_xy([[0.0; 2]; NUM_KEYPOINTS]).unwrap().to_polar(&skel());
        let raw = compose_fake(&g.to_polar(&skel()), &bank.errors()[0], 1.0, &zero, 0.0);
        for (a, b) in raw.iter().zip(d.to_polar(&skel()).to_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_noise_zero_bank_reproduces_gts() {
        let s = skel();
        let g: Vec<_> = (0..5).map(|i| stick(i as f64).to_polar(&s)).collect();
        let bank = ErrorBank {
            errors: vec![vec![0.0; 48]],
            sources: vec!["a".into()],
        };
        let cfg = SynthesisConfig {
            multiplier: 4,
            lambda: 0.0,
            ..Default::default()
        };
        // A bank member's weighted prior is itself only when all K
        // neighbours coincide with it, so every pose appears K times.
        let labeling: Vec<_> = g.iter().flat_map(|p| [p.clone(), p.clone(), p.clone()]).collect();
        let fakes = generate_fakes(&g, &bank, &cfg, &labeling, &s).unwrap();
        assert_eq!(fakes.len(), 20);
        for f in &fakes {
            assert!(g.contains(&f.pose));
            assert_eq!(f.distance, 0.0);
            assert!(!f.is_real);
        }
    }

    fn fixture() -> (Vec<PolarPose>, ErrorBank) {
        let s = skel();
        let g: Vec<CartesianPose> = (0..10).map(|i| stick(i as f64 * 0.4)).collect();
        let d: Vec<CartesianPose> = g
            .iter()
            .enumerate()
            .map(|(i, p)| rotated(p, [3, 6, 13, 16, 10][i % 5], [2, 5, 12, 15, 9][i % 5]))
            .collect();
        let bank = build_error_bank(&d, &g, &s, "det").unwrap();
        (g.iter().map(|p| p.to_polar(&s)).collect(), bank)
    }

    #[test]
    fn count_invariants_and_determinism() {
        let s = skel();
        let (g, bank) = fixture();
        let cfg = SynthesisConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate_fakes(&g, &bank, &cfg, &g, &s).unwrap();
        assert_eq!(a.len(), 500);
        for f in &a {
            assert!(PolarPose::new(f.pose.triples().to_vec()).is_ok());
            assert!(f.distance.is_finite() && f.distance >= 0.0);
        }
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| generate_fakes(&g, &bank, &cfg, &g, &s).unwrap());
        assert_eq!(a, b);
        let c = generate_fakes(&g, &bank, &SynthesisConfig { seed: 43, ..cfg }, &g, &s).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_u_gives_small_labels() {
        let s = skel();
        let (g, bank) = fixture();
        let w = DistanceWeights::ones(16);
        let zero = CartesianPose::from_xy([[0.0; 2]; NUM_KEYPOINTS]).unwrap().to_polar(&s);
        for j in 0..bank.len() {
            let label = |u: f64| {
                let raw = compose_fake(&g[j], &bank.errors()[j], u, &zero, 0.0);
                let p = PolarPose::from_flat_repaired(&raw).unwrap();
                prior_distance(&p, &g, 3, DistanceKind::ArcRadius, &w).unwrap().manifold_distance
            };
            assert!(label(1e-4) < label(1.0));
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let s = skel();
        let (g, bank) = fixture();
        let cfg = SynthesisConfig::default();
        assert!(matches!(
            generate_fakes(&g, &ErrorBank::default(), &cfg, &g, &s),
            Err(Error::EmptyBank)
        ));
        assert!(matches!(generate_fakes(&[], &bank, &cfg, &g, &s), Err(Error::EmptyGts)));
    }

    #[test]
    fn augmentation_counts() {
        let s = skel();
        let seq = PoseSequence::new("a", vec![(0, stick(0.0)), (1, stick(1.0))], true).unwrap();
        let out = augment_reals(&[seq.clone()], &s, 5).unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|p| p.is_real && p.distance == 0.0));
        assert!(out.iter().all(|p| PolarPose::new(p.pose.triples().to_vec()).is_ok()));

        let once = augment_reals(&[seq], &s, 1).unwrap();
        assert_eq!(once.len(), 4);
        assert_eq!(once[0].pose, stick(0.0).to_polar(&s));
        assert_eq!(once[1].pose, stick(1.0).to_polar(&s));
        assert_eq!(once[2].pose, stick(0.0).flip_horizontal(&s).to_polar(&s));

        let single = PoseSequence::new("b", vec![(3, stick(0.5))], true).unwrap();
        assert_eq!(augment_reals(&[single], &s, 5).unwrap().len(), 2);
    }

    #[test]
    fn flipped_reals_are_mirror_images() {
        let s = skel();
        let seq = PoseSequence::new("a", vec![(0, rotated(&stick(0.7), 13, 12))], true).unwrap();
        let out = augment_reals(&[seq], &s, 5).unwrap();
        let w = DistanceWeights::ones(16);
        // The flip changes the pose but keeps the multiset of lengths.
        assert!(arc_radius_dist(&out[0].pose, &out[1].pose, &w) > 0.0);
        let mut a: Vec<f64> = out[0].pose.triples().iter().map(|t| t.r).collect();
        let mut b: Vec<f64> = out[1].pose.triples().iter().map(|t| t.r).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn labeled_round_trip() {
        let s = skel();
        let (g, bank) = fixture();
        let cfg = SynthesisConfig {
            multiplier: 2,
            ..Default::default()
        };
        let mut all = generate_fakes(&g, &bank, &cfg, &g, &s).unwrap();
        all.push(LabeledPose::real(g[0].clone()));
        let text = format_labeled(&all, 16);
        let (n, back) = parse_labeled(&text, "t").unwrap();
        assert_eq!(n, 16);
        assert_eq!(back, all);
    }

    #[test]
    fn labeled_header_is_checked() {
        assert!(matches!(parse_labeled("1,0\n", "t"), Err(Error::FormatVersionMismatch(_))));
        assert!(matches!(
            parse_labeled("#poseprior-labeled v9 connections=1\n", "t"),
            Err(Error::FormatVersionMismatch(_))
        ));
        assert!(matches!(
            parse_labeled("#poseprior-labeled v1 connections=1\n1,0,1,0\n", "t"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_labeled("#poseprior-labeled v1 connections=1\n1,0.5,1,0,1\n", "t").is_err());
    }
}

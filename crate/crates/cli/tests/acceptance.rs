//! Acceptance suite. Prints one PASS/FAIL line per criterion. With
//! `POSEPRIOR_ACCEPTANCE_STRICT=1` it exits non-zero if any criterion fails;
//! otherwise failures are reported but do not fail `cargo test`.
//!
//! Criterion 11 needs a real annotated dataset. Point `POSEPRIOR_DATASET_DIR`
//! at a directory holding a `pipeline.toml` whose detector tags are
//! `alphapose`, `hrnet` and `vitpose`; without it the criterion is skipped.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use poseprior::corrector::{
    best_iterate_analysis, calibrate_stop_threshold, correct, default_stop_candidates, CorrectionConfig,
};
use poseprior::gait::{generate_ground_truth, simulate_detections, DetectorProfile, GaitConfig};
use poseprior::metrics::{
    knn, mean_pck, prior_weights, DistanceKind, DistanceWeights, PCK_THRESHOLDS,
};
use poseprior::ndf::{loss_and_param_gradients, DistanceField, LossConfig, LossWeights, NdfConfig, NdfModel};
use poseprior::pipeline::{self, EvalReport, FixtureConfig, PipelineConfig};
use poseprior::pose::{CartesianPose, FormatMap, PolarPose, PolarTriple, Representation, Skeleton, NUM_KEYPOINTS};
use poseprior::synthesis::{build_error_bank, compose_fake, generate_fakes, ErrorBank, LabeledPose, SynthesisConfig};
use poseprior::trainer::{project_batch, train_with_progress, ProjectionParams, ProjectionStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

struct Suite {
    failed: usize,
}

impl Suite {
    fn report(&mut self, id: u32, name: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {id:>2}  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {id:>2}  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(started: Instant, limit: Duration, outcome: Outcome) -> Outcome {
    let t = started.elapsed();
    match outcome {
        Ok(d) if t >= limit => Err(format!("{d}; took {t:.1?}, limit {limit:?}")),
        other => other,
    }
}

fn random_cartesian(rng: &mut impl Rng) -> CartesianPose {
    let c: [[f64; 2]; NUM_KEYPOINTS] = std::array::from_fn(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    CartesianPose::from_xy(c).unwrap()
}

fn random_polar(rng: &mut impl Rng, n: usize) -> PolarPose {
    PolarPose::new(
        (0..n)
            .map(|_| {
                let a: f64 = rng.gen_range(-3.14..3.14);
                PolarTriple::new(a.cos(), a.sin(), rng.gen_range(0.05..0.6))
            })
            .collect(),
    )
    .unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn c1_round_trip() -> Outcome {
    let skel = Skeleton::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let x = random_cartesian(&mut rng).normalize(&skel).map_err(|e| e.to_string())?;
        let back = x.to_polar(&skel).to_cartesian(&skel, x.xy(skel.root()));
        worst = worst.max(back.max_abs_diff(&x));
    }
    check(worst < 1e-9, format!("max |error| {worst:.2e} over 10000 poses"))
}

fn c2_input_gradient() -> Outcome {
    let skel = Skeleton::default();
    let j = skel.num_connections();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst, mut checked): (f64, usize) = (0.0, 0);
    let h = 1e-5;
    for trial in 0..100u64 {
        let cfg = NdfConfig { embedding_dim: 4, encoder_hidden: vec![8], decoder_hidden: vec![16, 16], seed: trial };
        let model = NdfModel::new(skel.topology().clone(), cfg).map_err(|e| e.to_string())?;
        let x = random_polar(&mut rng, j);
        let g = model.input_gradient(&x);
        let flat = x.to_flat();
        for i in 0..flat.len() {
            let (mut p, mut m) = (flat.clone(), flat.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (model.value(&p) - model.value(&m)) / (p[i] - m[i]);
            if g[i].abs().max(fd.abs()) > 1e-8 {
                worst = worst.max(rel_err(g[i], fd));
                checked += 1;
            }
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over {checked} components"))
}

/// Loss recomputed from values and input gradients alone.
fn grad_loss_oracle(model: &NdfModel, batch: &[LabeledPose]) -> f64 {
    batch
        .iter()
        .map(|s| {
            let (_, g) = model.value_and_gradient(&s.pose.to_flat());
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .sum()
}

fn c3_second_order() -> Outcome {
    let skel = Skeleton::default();
    let cfg = NdfConfig { embedding_dim: 2, encoder_hidden: vec![2], decoder_hidden: vec![4], seed: 103 };
    let model = NdfModel::new(skel.topology().clone(), cfg).map_err(|e| e.to_string())?;
    let n = model.num_params();
    if n > 500 {
        return Err(format!("model has {n} parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let batch: Vec<LabeledPose> = (0..6).map(|_| LabeledPose::real(random_polar(&mut rng, skel.num_connections()))).collect();
    let loss = LossConfig::new(LossWeights { real: 0.0, fake: 0.0, grad: 1.0 }, false, true);
    let (_, g) = loss_and_param_gradients(&model, &batch, &loss);
    let h = 1e-6;
    let (mut worst, mut checked): (f64, usize) = (0.0, 0);
    for i in 0..n {
        let eval = |s: f64| {
            let mut m = model.clone();
            m.params_mut()[i] += s;
            grad_loss_oracle(&m, &batch)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        if g[i].abs().max(fd.abs()) > 1e-8 {
            worst = worst.max(rel_err(g[i], fd));
            checked += 1;
        }
    }
    check(worst < 1e-3, format!("max relative error {worst:.2e} over {checked} of {n} parameters"))
}

fn c4_prior_weights() -> Outcome {
    let w = prior_weights(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    let want = [5.0 / 12.0, 4.0 / 12.0, 3.0 / 12.0];
    let closed = w.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..10_000 {
        let d: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..10.0)).collect();
        let w = prior_weights(&d).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    check(
        closed < 1e-12 && worst_sum < 1e-12,
        format!("closed-form error {closed:.1e}; worst |sum - 1| {worst_sum:.1e}"),
    )
}

fn c5_distances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let w = DistanceWeights::ones(16);
    let (mut self_max, mut asym): (f64, f64) = (0.0, 0.0);
    for _ in 0..10_000 {
        let a = random_polar(&mut rng, 16);
        let b = random_polar(&mut rng, 16);
        for kind in DistanceKind::ALL {
            self_max = self_max.max(kind.eval(&a, &a, &w));
        }
        for kind in [DistanceKind::Geodesic, DistanceKind::Angular] {
            asym = asym.max((kind.eval(&a, &b, &w) - kind.eval(&b, &a, &w)).abs());
        }
    }
    let one = |c: f64, s: f64, r: f64| PolarPose::new(vec![PolarTriple::new(c, s, r)]).unwrap();
    let (a, b) = (one(1.0, 0.0, 2.0), one(0.0, 1.0, 1.0));
    let w1 = DistanceWeights::ones(1);
    let ab = DistanceKind::ArcRadius.eval(&a, &b, &w1);
    let ba = DistanceKind::ArcRadius.eval(&b, &a, &w1);
    let pi = std::f64::consts::PI;
    let witness = ab == pi + 1.0 && ba == pi / 2.0 + 1.0;
    check(
        self_max == 0.0 && asym < 1e-12 && witness,
        format!("max d(x,x) {self_max:e}; max symmetry gap {asym:.1e}; arc-radius d(a,b) {ab} vs d(b,a) {ba}"),
    )
}

fn c6_knn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let w = DistanceWeights::ones(16);
    let k = 5;
    let mut mismatches = 0;
    let mut ties = 0;
    for kind in DistanceKind::ALL {
        let mut bank: Vec<PolarPose> = (0..1000).map(|_| random_polar(&mut rng, 16)).collect();
        // Duplicates force exact ties that must resolve to the lower index.
        for i in 0..100 {
            bank[900 + i] = bank[i * 7].clone();
        }
        for q in 0..500 {
            let query = if q % 5 == 0 { bank[q].clone() } else { random_polar(&mut rng, 16) };
            let (idx, _) = knn(&query, &bank, k, kind, &w).map_err(|e| e.to_string())?;
            let mut all: Vec<(f64, usize)> = bank.iter().enumerate().map(|(i, b)| (kind.eval(&query, b, &w), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            ties += all[..k].windows(2).filter(|p| p[0].0 == p[1].0).count();
            if idx != want {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("{mismatches} disagreements over 1500 queries ({ties} tied neighbour pairs)"))
}

/// The trained model from criterion 7 and the held-out data reused by
/// criteria 8 to 10.
struct Fixture {
    skel: Skeleton,
    bank: ErrorBank,
    train_reals: Vec<PolarPose>,
    val_gts: Vec<CartesianPose>,
    test_gts: Vec<CartesianPose>,
    model: NdfModel,
}

fn c7_separation() -> (Outcome, Option<Fixture>) {
    let skel = Skeleton::default();
    let gts = generate_ground_truth(&GaitConfig { sequences: 40, frames: 25, seed: 1 });
    let map = FormatMap::coco();
    let norm: Vec<CartesianPose> = gts.iter().map(|r| r.pose.normalize(&skel).unwrap()).collect();
    let (train, val, test) = (0..500, 500..700, 700..1000);
    let mut bank = ErrorBank::default();
    for p in DetectorProfile::builtin() {
        let dets = simulate_detections(&gts[train.clone()], &p, 3).unwrap();
        let dn: Vec<CartesianPose> = dets
            .iter()
            .map(|d| map.convert(&d.keypoints).unwrap().normalize(&skel).unwrap())
            .collect();
        bank.extend(build_error_bank(&dn, &norm[train.clone()], &skel, &p.name).unwrap());
    }
    let polar = |r: std::ops::Range<usize>| -> Vec<PolarPose> { norm[r].iter().map(|p| p.to_polar(&skel)).collect() };
    let (reals, vreals, treals) = (polar(train), polar(val.clone()), polar(test.clone()));
    let synth = |seed, multiplier| SynthesisConfig { seed, multiplier, ..Default::default() };
    let fakes = generate_fakes(&reals, &bank, &synth(5, 50), &reals, &skel).unwrap();
    let vfakes = generate_fakes(&vreals, &bank, &synth(6, 2), &reals, &skel).unwrap();
    let mut data: Vec<LabeledPose> = reals.iter().cloned().map(LabeledPose::real).collect();
    data.extend(fakes);
    let mut vdata: Vec<LabeledPose> = vreals.iter().cloned().map(LabeledPose::real).collect();
    vdata.extend(vfakes);

    let (mut ndf, mut cfg) = pipeline::fixture_train_config();
    ndf.seed = 2;
    cfg.seed = 4;
    let started = Instant::now();
    let model = NdfModel::new(skel.topology().clone(), ndf).unwrap();
    let model = match train_with_progress(model, &data, &vdata, &reals, &cfg, |_| {}) {
        Ok((m, _)) => m,
        Err(e) => return (Err(e.to_string()), None),
    };
    let tfakes = generate_fakes(&treals, &bank, &synth(9, 2), &reals, &skel).unwrap();
    let fr: Vec<f64> = treals.iter().map(|p| model.forward(p)).collect();
    let ff: Vec<f64> = tfakes.iter().map(|p| model.forward(&p.pose)).collect();
    let mr = fr.iter().sum::<f64>() / fr.len() as f64;
    let mf = ff.iter().sum::<f64>() / ff.len() as f64;
    let auc = auc(&fr, &ff);
    let outcome = within(
        started,
        Duration::from_secs(600),
        check(
            mr < 0.5 * mf && auc > 0.9,
            format!("mean f real {mr:.4} vs fake {mf:.4} (ratio {:.3}); AUC {auc:.4}", mr / mf),
        ),
    );
    let fixture = Fixture { val_gts: norm[val].to_vec(), test_gts: norm[test].to_vec(), skel, bank, train_reals: reals, model };
    (outcome, Some(fixture))
}

/// Probability that a random real scores below a random fake, ties
/// counting half.
fn auc(reals: &[f64], fakes: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in reals {
        for b in fakes {
            if a < b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (reals.len() * fakes.len()) as f64
}

fn c8_projection(fx: &Fixture) -> Outcome {
    let gts: Vec<PolarPose> = fx.test_gts.iter().map(|p| p.to_polar(&fx.skel)).collect();
    let cfg = SynthesisConfig { seed: 808, multiplier: 4, ..Default::default() };
    let fakes: Vec<PolarPose> = generate_fakes(&gts, &fx.bank, &cfg, &fx.train_reals, &fx.skel)
        .map_err(|e| e.to_string())?
        .into_iter()
        .take(1000)
        .map(|s| s.pose)
        .collect();
    let params = ProjectionParams { iters: 1, tau: None, step: ProjectionStep::Gradient, descent_only: false };
    let moved = project_batch(&fx.model, &fakes, &params, Default::default()).map_err(|e| e.to_string())?;
    let decreased = fakes
        .iter()
        .zip(&moved.poses)
        .filter(|(a, b)| fx.model.forward(b) < fx.model.forward(a))
        .count();
    let frac = decreased as f64 / fakes.len() as f64;
    check(frac >= 0.8, format!("{decreased} of {} fakes decreased ({:.1}%)", fakes.len(), 100.0 * frac))
}

/// Ground truth perturbed by a random bank error at full strength plus
/// keypoint noise.
fn perturb(fx: &Fixture, gts: &[CartesianPose], seed: u64) -> Vec<CartesianPose> {
    let skel = &fx.skel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gts.iter()
        .map(|gt| {
            let error = &fx.bank.errors()[rng.gen_range(0..fx.bank.len())];
            let xi: [[f64; 2]; NUM_KEYPOINTS] = std::array::from_fn(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]);
            let noise = CartesianPose::from_xy(xi).unwrap().to_polar(skel);
            let raw = compose_fake(&gt.to_polar(skel), error, 1.0, &noise, SynthesisConfig::default().lambda);
            PolarPose::from_flat_repaired(&raw).unwrap().to_cartesian(skel, gt.xy(skel.root()))
        })
        .collect()
}

fn c9_correction(fx: &Fixture) -> (Outcome, Vec<Vec<CartesianPose>>) {
    let skel = &fx.skel;
    let w = DistanceWeights::ones(skel.num_connections());
    let base = CorrectionConfig { max_iters: 100, learning_rate: 1e-4, ..Default::default() };
    // Stop threshold chosen on perturbed validation poses, as the pipeline does.
    let vreals: Vec<PolarPose> = fx.val_gts.iter().map(|p| p.to_polar(skel)).collect();
    let tau = default_stop_candidates(&fx.model, &vreals, Representation::Polar)
        .and_then(|c| calibrate_stop_threshold(&fx.model, &perturb(fx, &fx.val_gts, 77), &fx.val_gts, skel, &c, &base));
    let tau = match tau {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), Vec::new()),
    };
    let cfg = CorrectionConfig { stop_threshold: tau, record_trajectory: true, ..base };
    let before = perturb(fx, &fx.test_gts, 909);
    let mut improved = 0;
    let mut trajectories = Vec::new();
    let mut after = Vec::new();
    for (perturbed, gt) in before.iter().zip(&fx.test_gts) {
        let res = match correct(&fx.model, perturbed, skel, &cfg) {
            Ok(r) => r,
            Err(e) => return (Err(e.to_string()), trajectories),
        };
        let gt_polar = gt.to_polar(skel);
        let d0 = DistanceKind::ArcRadius.eval(&perturbed.to_polar(skel), &gt_polar, &w);
        let d1 = DistanceKind::ArcRadius.eval(&res.corrected.to_polar(skel), &gt_polar, &w);
        if d1 < d0 {
            improved += 1;
        }
        trajectories.push(res.trajectory.unwrap().into_iter().map(|p| p.pose).collect());
        after.push(res.corrected);
    }
    let n = fx.test_gts.len();
    let pck = |poses: &[CartesianPose]| mean_pck(poses.iter().zip(&fx.test_gts), skel, 0.05).unwrap();
    let (p0, p1) = (pck(&before), pck(&after));
    let frac = improved as f64 / n as f64;
    let outcome = check(
        frac >= 0.7 && p1 > p0,
        format!(
            "stop threshold {tau:.4}; distance to truth reduced for {improved}/{n} ({:.1}%); PCK@0.05 {p0:.2} -> {p1:.2}",
            100.0 * frac
        ),
    );
    (outcome, trajectories)
}

fn c10_best_iterate(fx: Option<&Fixture>, trajectories: &[Vec<CartesianPose>], runs: &[EvalReport]) -> Outcome {
    let mut checked = 0;
    if let Some(fx) = fx {
        if !trajectories.is_empty() {
            let a = best_iterate_analysis(trajectories, &fx.test_gts, &fx.skel, &PCK_THRESHOLDS).map_err(|e| e.to_string())?;
            for (b, f) in a.best_mean.iter().zip(&a.final_mean) {
                if b < f {
                    return Err(format!("correction run: best {b} < final {f}"));
                }
            }
            checked += 1;
        }
    }
    for report in runs {
        for row in report.rows.iter().filter(|r| r.stage == "corrected") {
            let best = row.best_iterate.as_ref().ok_or("corrected row without best-iterate analysis")?;
            for (b, f) in best.iter().zip(&row.pck) {
                if b < f {
                    return Err(format!("{} {}: best {b} < final {f}", row.label, row.detector));
                }
            }
            checked += 1;
        }
    }
    check(checked > 0, format!("best >= final at every threshold on {checked} runs"))
}

fn c11_dataset() -> Option<Outcome> {
    let dir = std::env::var_os("POSEPRIOR_DATASET_DIR")?;
    Some(run_dataset(Path::new(&dir)))
}

fn run_dataset(dir: &Path) -> Outcome {
    let cfg = PipelineConfig::load(&dir.join("pipeline.toml")).map_err(|e| e.to_string())?;
    let counts = pipeline::cmd_prepare(&cfg).map_err(|e| e.to_string())?;
    let got = [counts.train_full, counts.train_half, counts.train_quarter, counts.val, counts.test];
    if got != [1249, 638, 280, 315, 441] {
        return Err(format!("split counts {got:?}"));
    }
    let report = pipeline::cmd_pipeline(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let raw_want = [
        ("alphapose", [44.88, 79.86, 91.32, 97.11]),
        ("hrnet", [41.18, 75.08, 94.12, 98.05]),
        ("vitpose", [51.18, 88.62, 98.07, 99.47]),
    ];
    let mut notes = Vec::new();
    for (tag, want) in raw_want {
        let row = |stage: &str| report.rows.iter().find(|r| r.detector == tag && r.stage == stage).cloned();
        let (raw, corrected) = (row("raw").ok_or(format!("no raw row for {tag}"))?, row("corrected").ok_or(format!("no corrected row for {tag}"))?);
        for (g, w) in raw.pck.iter().zip(want) {
            if (g - w).abs() > 0.1 {
                return Err(format!("{tag} raw PCK {:?} vs {want:?}", raw.pck));
            }
        }
        if !(corrected.pck[1] > raw.pck[1]) {
            return Err(format!("{tag}: corrected PCK@0.1 {} does not beat raw {}", corrected.pck[1], raw.pck[1]));
        }
        notes.push(format!("{tag} {} -> {}", raw.pck[1], corrected.pck[1]));
    }
    Ok(format!("counts match; PCK@0.1 {}", notes.join(", ")))
}

fn c12_ablations(dir: &Path) -> (Outcome, Vec<EvalReport>) {
    let fx = FixtureConfig { gait: GaitConfig { sequences: 8, frames: 6, seed: 12 }, ..Default::default() };
    let config = match pipeline::write_gait_fixture(dir, &fx) {
        Ok(p) => p,
        Err(e) => return (Err(e.to_string()), Vec::new()),
    };
    let variants: [(&str, &[&str]); 5] = [
        ("Polar baseline", &[]),
        ("Polar w/o bp", &["--batch-projection", "false"]),
        ("Polar w/o grad. loss", &["--grad-loss", "false"]),
        ("Polar w/o AR. dist.", &["--distance", "geodesic"]),
        ("Angular baseline", &["--representation", "angular", "--distance", "angular"]),
    ];
    let mut reports = Vec::new();
    let mut layout: Option<Vec<(String, String)>> = None;
    for (i, (label, flags)) in variants.iter().enumerate() {
        let out = dir.join(format!("ablation-{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_poseprior"))
            .args(["pipeline", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(["--epochs", "2", "--projection-iters", "5", "--max-iters", "20", "--trajectories"])
            .args(*flags)
            .output();
        match status {
            Ok(o) if o.status.success() => {}
            Ok(o) => return (Err(format!("{label}: {}", String::from_utf8_lossy(&o.stderr).trim())), reports),
            Err(e) => return (Err(e.to_string()), reports),
        }
        let text = std::fs::read_to_string(out.join("eval/summary.json")).unwrap_or_default();
        let report = match EvalReport::from_json(&text) {
            Ok(r) => r,
            Err(_) => return (Err(format!("{label}: unreadable summary")), reports),
        };
        if report.rows.iter().any(|r| r.label != *label) {
            return (Err(format!("{label}: rows labelled {:?}", report.rows[0].label)), reports);
        }
        let keys: Vec<(String, String)> = report.rows.iter().map(|r| (r.detector.clone(), r.stage.clone())).collect();
        if layout.get_or_insert_with(|| keys.clone()) != &keys {
            return (Err(format!("{label}: report rows differ from the baseline layout")), reports);
        }
        reports.push(report);
    }
    let rows = layout.map_or(0, |l| l.len());
    (Ok(format!("5 configurations, {rows} comparable rows each")), reports)
}

fn main() {
    let mut suite = Suite { failed: 0 };
    let t = Instant::now();
    suite.report(1, "transform round trip", t, within(t, Duration::from_secs(10), c1_round_trip()));
    let t = Instant::now();
    suite.report(2, "input gradient fidelity", t, c2_input_gradient());
    let t = Instant::now();
    suite.report(3, "second-order fidelity", t, within(t, Duration::from_secs(60), c3_second_order()));
    let t = Instant::now();
    suite.report(4, "prior weights closed form", t, c4_prior_weights());
    let t = Instant::now();
    suite.report(5, "distance properties", t, c5_distances());
    let t = Instant::now();
    suite.report(6, "knn oracle", t, c6_knn());

    let t = Instant::now();
    let (outcome, fixture) = c7_separation();
    suite.report(7, "synthetic real/fake separation", t, outcome);
    let mut trajectories = Vec::new();
    match &fixture {
        Some(fx) => {
            let t = Instant::now();
            suite.report(8, "projection efficacy", t, c8_projection(fx));
            let t = Instant::now();
            let (outcome, trajs) = c9_correction(fx);
            trajectories = trajs;
            suite.report(9, "correction efficacy", t, outcome);
        }
        None => {
            let t = Instant::now();
            suite.report(8, "projection efficacy", t, Err("no model from criterion 7".into()));
            suite.report(9, "correction efficacy", t, Err("no model from criterion 7".into()));
        }
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let t = Instant::now();
    let (ablation, runs) = c12_ablations(dir.path());
    let t10 = Instant::now();
    suite.report(10, "best-iterate dominance", t10, c10_best_iterate(fixture.as_ref(), &trajectories, &runs));
    let t11 = Instant::now();
    match c11_dataset() {
        Some(outcome) => suite.report(11, "real dataset (gated)", t11, outcome),
        None => println!("SKIPPED  11  real dataset (gated): POSEPRIOR_DATASET_DIR is not set"),
    }
    suite.report(12, "ablation parity", t, ablation);

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        if std::env::var_os("POSEPRIOR_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

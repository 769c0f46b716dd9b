//! Training with batch projection: each batch's fakes are pushed toward the
//! current zero level set by `x ← x − f(x)·∇f(x)` before the loss step.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{prior_distance, DistanceKind, DistanceWeights};
use crate::ndf::{loss_and_param_gradients, DistanceField, LossConfig, LossWeights, NdfModel};
use crate::optim::{Adam, AdamConfig};
use crate::pose::{PolarPose, Representation};
use crate::synthesis::LabeledPose;

/// Which fake poses enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeTargets {
    /// Projected fakes, relabeled against the real bank.
    #[default]
    Projected,
    /// The unprojected fakes with their original labels.
    Original,
    /// Both of the above.
    Both,
}

/// Update applied to a fake in one projection iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionStep {
    /// `x − f·∇f`.
    #[default]
    Gradient,
    /// `x − f·∇f/‖∇f‖`, a step of length exactly `f`. A zero gradient
    /// leaves the fake in place.
    Normalized,
}

impl ProjectionStep {
    /// Multiplier of `∇f` in the update.
    pub fn scale(self, f: f64, grad: &[f64]) -> f64 {
        match self {
            Self::Gradient => f,
            Self::Normalized => {
                let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if n > 0.0 { f / n } else { 0.0 }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Defaults to 20 with batch projection and 400 without.
    pub epochs: Option<usize>,
    pub projection_iters: usize,
    /// Fixed freezing threshold. When unset, each epoch after the first
    /// uses the `projection_percentile`-th percentile of `f` on validation
    /// reals; the first epoch freezes nothing.
    pub projection_threshold: Option<f64>,
    pub projection_percentile: f64,
    pub projection_step: ProjectionStep,
    /// Undo and freeze any projection step that raises `f`.
    pub projection_descent_only: bool,
    pub batch_size: usize,
    /// Draw half of every batch from the reals instead of the natural mix.
    pub rebalance: bool,
    pub loss_weights: LossWeights,
    pub squared_loss: bool,
    pub enable_batch_projection: bool,
    pub enable_grad_loss: bool,
    pub fake_targets: FakeTargets,
    pub representation: Representation,
    pub distance: DistanceKind,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            epochs: None,
            projection_iters: 20,
            projection_threshold: None,
            projection_percentile: 95.0,
            projection_step: ProjectionStep::Gradient,
            projection_descent_only: false,
            batch_size: 256,
            rebalance: false,
            loss_weights: LossWeights::default(),
            squared_loss: false,
            enable_batch_projection: true,
            enable_grad_loss: true,
            fake_targets: FakeTargets::Projected,
            representation: Representation::Polar,
            distance: DistanceKind::ArcRadius,
            k: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.epochs
            .unwrap_or(if self.enable_batch_projection { 20 } else { 400 })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig::new(self.loss_weights, self.squared_loss, self.enable_grad_loss)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(t) = self.projection_threshold {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("projection threshold must be >= 0, got {t}")));
            }
        }
        if !(0.0..=100.0).contains(&self.projection_percentile) {
            return Err(Error::Config(format!(
                "projection percentile must lie in [0, 100], got {}",
                self.projection_percentile
            )));
        }
        let w = self.loss_weights;
        if [w.real, w.fake, w.grad].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if self.k < 2 {
            return Err(Error::KTooSmall(self.k));
        }
        Ok(())
    }

    /// Table label of the ablation configuration these flags describe.
    pub fn ablation_label(&self) -> String {
        let mut off = Vec::new();
        if !self.enable_batch_projection {
            off.push("bp");
        }
        if !self.enable_grad_loss {
            off.push("grad. loss");
        }
        match self.representation {
            Representation::Angular => {
                if off.is_empty() && self.distance == DistanceKind::Angular {
                    "Angular baseline".into()
                } else {
                    format!("Angular ({} dist.{})", self.distance.name(), suffix(&off))
                }
            }
            Representation::Polar => match (self.distance, off.as_slice()) {
                (DistanceKind::ArcRadius, []) => "Polar baseline".into(),
                (DistanceKind::ArcRadius, [one]) => format!("Polar w/o {one}"),
                (DistanceKind::Geodesic, []) => "Polar w/o AR. dist.".into(),
                (d, _) => format!("Polar ({} dist.{})", d.name(), suffix(&off)),
            },
        }
    }
}

fn suffix(off: &[&str]) -> String {
    off.iter().map(|o| format!(", w/o {o}")).collect()
}

/// `p`-th percentile by nearest rank: the smallest value with at least
/// `p`% of the sample at or below it.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Freezing threshold: the `p`-th percentile of `f` over validation reals.
pub fn calibrate_projection_threshold<F: DistanceField>(
    field: &F,
    val_reals: &[PolarPose],
    p: f64,
    repr: Representation,
) -> Result<f64> {
    if val_reals.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let f: Vec<f64> = val_reals
        .par_iter()
        .map(|x| field.value(&repr.encode(x).to_flat()))
        .collect();
    Ok(percentile(&f, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub poses: Vec<PolarPose>,
    /// `active[i][n]`: fake `n` was updated in iteration `i`.
    pub active: Vec<Vec<bool>>,
}

impl ProjectionResult {
    /// Fraction of fakes still moving in the last iteration.
    pub fn final_active_fraction(&self) -> f64 {
        match self.active.last() {
            Some(a) if !a.is_empty() => a.iter().filter(|&&b| b).count() as f64 / a.len() as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub iters: usize,
    /// Freezing threshold; `None` freezes nothing.
    pub tau: Option<f64>,
    pub step: ProjectionStep,
    /// Undo a step that raised `f` and freeze the fake where it was.
    pub descent_only: bool,
}

/// Up to `params.iters` projection steps per fake. In each iteration a fake
/// with `f < τ` is frozen for good; the others take one step and are
/// repaired back to valid triples (and re-encoded under `repr`).
pub fn project_batch<F: DistanceField>(
    field: &F,
    fakes: &[PolarPose],
    params: &ProjectionParams,
    repr: Representation,
) -> Result<ProjectionResult> {
    let n_iters = params.iters;
    let per_fake: Vec<(PolarPose, Vec<bool>)> = fakes
        .par_iter()
        .map(|x0| {
            let mut x = repr.encode(x0).to_flat();
            let mut prev: Option<(Vec<f64>, f64)> = None;
            let mut mask = Vec::with_capacity(n_iters);
            let mut frozen = false;
            for _ in 0..n_iters {
                if !frozen {
                    let (f, g) = field.value_and_gradient(&x);
                    if params.tau.is_some_and(|t| f < t) {
                        frozen = true;
                    } else if params.descent_only && prev.as_ref().is_some_and(|(_, pf)| !(f < *pf)) {
                        x = prev.take().unwrap().0;
                        frozen = true;
                    } else {
                        if params.descent_only {
                            prev = Some((x.clone(), f));
                        }
                        let a = params.step.scale(f, &g);
                        for (xi, gi) in x.iter_mut().zip(&g) {
                            *xi -= a * gi;
                        }
                        x = repr.encode(&PolarPose::from_flat_repaired(&x)?).to_flat();
                    }
                }
                mask.push(!frozen);
            }
            Ok((PolarPose::from_flat_repaired(&x)?, mask))
        })
        .collect::<Result<_>>()?;
    let mut active = vec![Vec::with_capacity(fakes.len()); n_iters];
    let mut poses = Vec::with_capacity(fakes.len());
    for (p, mask) in per_fake {
        for (i, a) in mask.into_iter().enumerate() {
            active[i].push(a);
        }
        poses.push(p);
    }
    Ok(ProjectionResult { poses, active })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Per-sample means over the epoch.
    pub l_real: f64,
    pub l_fake: f64,
    pub l_grad: f64,
    pub l_total: f64,
    pub val_real_mean_f: f64,
    pub val_fake_mean_f: f64,
    /// Mean `|f − d|` over the validation set; selects the best epoch.
    pub val_loss: f64,
    /// Mean `‖∇ₓf‖` over training reals after the epoch.
    pub train_real_grad_norm: f64,
    /// Freezing threshold used during the epoch (NaN when none).
    pub tau: f64,
    /// Fraction of projected fakes still active in the last iteration.
    pub active_fraction: f64,
    /// Mean label of the fakes that entered the loss.
    pub mean_fake_label: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub label: String,
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n", self.label);
        out.push_str(
            "epoch,l_real,l_fake,l_grad,l_total,val_real_mean_f,val_fake_mean_f,val_loss,\
             train_real_grad_norm,tau,active_fraction,mean_fake_label,best\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.l_real,
                r.l_fake,
                r.l_grad,
                r.l_total,
                r.val_real_mean_f,
                r.val_fake_mean_f,
                r.val_loss,
                r.train_real_grad_norm,
                r.tau,
                r.active_fraction,
                r.mean_fake_label,
                u8::from(self.best_epoch == Some(r.epoch))
            )
            .unwrap();
        }
        out
    }
}

fn encode_all(data: &[LabeledPose], repr: Representation) -> Vec<LabeledPose> {
    data.iter()
        .map(|s| LabeledPose {
            pose: repr.encode(&s.pose),
            ..s.clone()
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Batches of sample indices for one epoch.
fn epoch_batches(reals: &[usize], fakes: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if cfg.rebalance && !reals.is_empty() && !fakes.is_empty() {
        let mut r = reals.to_vec();
        let mut f = fakes.to_vec();
        r.shuffle(rng);
        f.shuffle(rng);
        let half = (cfg.batch_size / 2).max(1);
        f.chunks(half)
            .enumerate()
            .map(|(b, fk)| {
                let mut batch: Vec<usize> = (0..half).map(|i| r[(b * half + i) % r.len()]).collect();
                batch.extend_from_slice(fk);
                batch
            })
            .collect()
    } else {
        let mut all: Vec<usize> = reals.iter().chain(fakes).copied().collect();
        all.shuffle(rng);
        all.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation loss, with one report row per epoch.
pub fn train(
    model: NdfModel,
    train_data: &[LabeledPose],
    val_data: &[LabeledPose],
    real_bank: &[PolarPose],
    cfg: &TrainConfig,
) -> Result<(NdfModel, TrainReport)> {
    train_with_progress(model, train_data, val_data, real_bank, cfg, |_| {})
}

pub fn train_with_progress(
    mut model: NdfModel,
    train_data: &[LabeledPose],
    val_data: &[LabeledPose],
    real_bank: &[PolarPose],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRow),
) -> Result<(NdfModel, TrainReport)> {
    cfg.validate()?;
    let mut report = TrainReport {
        label: cfg.ablation_label(),
        ..Default::default()
    };
    let epochs = cfg.epochs();
    if epochs == 0 {
        return Ok((model, report));
    }
    let repr = cfg.representation;
    let data = encode_all(train_data, repr);
    let val = encode_all(val_data, repr);
    let reals: Vec<usize> = (0..data.len()).filter(|&i| data[i].is_real).collect();
    let fakes: Vec<usize> = (0..data.len()).filter(|&i| !data[i].is_real).collect();
    let w = cfg.loss_weights;
    if fakes.is_empty() && w.fake > 0.0 {
        return Err(Error::NoFakes);
    }
    if reals.is_empty() && (w.real > 0.0 || (cfg.enable_grad_loss && w.grad > 0.0)) {
        return Err(Error::NoReals);
    }
    let project = cfg.enable_batch_projection && cfg.projection_iters > 0;
    if project && cfg.fake_targets != FakeTargets::Original && real_bank.len() < cfg.k {
        return Err(Error::BankTooSmall {
            bank: real_bank.len(),
            k: cfg.k,
        });
    }
    let val_reals: Vec<PolarPose> = val.iter().filter(|s| s.is_real).map(|s| s.pose.clone()).collect();
    let weights = DistanceWeights::ones(model.num_connections());
    let loss_cfg = cfg.loss();
    let mut opt = Adam::new(model.num_params(), cfg.adam());
    let mut best: Option<(f64, NdfModel)> = None;
    let mut tau = cfg.projection_threshold;

    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let (mut sum_real, mut sum_fake, mut sum_grad, mut sum_total) = (0.0, 0.0, 0.0, 0.0);
        let (mut n_real, mut n_fake) = (0usize, 0usize);
        let (mut active_sum, mut active_batches) = (0.0, 0usize);
        let (mut label_sum, mut label_n) = (0.0, 0usize);
        for idx in epoch_batches(&reals, &fakes, cfg, &mut rng) {
            let mut batch: Vec<LabeledPose> = Vec::with_capacity(idx.len());
            let mut batch_fakes: Vec<&LabeledPose> = Vec::new();
            for &i in &idx {
                if data[i].is_real {
                    batch.push(data[i].clone());
                } else {
                    batch_fakes.push(&data[i]);
                }
            }
            let use_original = !project || cfg.fake_targets != FakeTargets::Projected;
            let use_projected = project && cfg.fake_targets != FakeTargets::Original;
            if use_original {
                batch.extend(batch_fakes.iter().map(|s| (*s).clone()));
            }
            if project && !batch_fakes.is_empty() {
                let poses: Vec<PolarPose> = batch_fakes.iter().map(|s| s.pose.clone()).collect();
                let res = project_batch(
                    &model,
                    &poses,
                    &ProjectionParams {
                        iters: cfg.projection_iters,
                        tau,
                        step: cfg.projection_step,
                        descent_only: cfg.projection_descent_only,
                    },
                    repr,
                )?;
                active_sum += res.final_active_fraction();
                active_batches += 1;
                if use_projected {
                    let relabeled: Vec<LabeledPose> = res
                        .poses
                        .into_par_iter()
                        .map(|p| {
                            let d = prior_distance(&p, real_bank, cfg.k, cfg.distance, &weights)?.manifold_distance;
                            Ok(LabeledPose::fake(p, d))
                        })
                        .collect::<Result<_>>()?;
                    batch.extend(relabeled);
                }
            }
            for s in batch.iter().filter(|s| !s.is_real) {
                label_sum += s.distance;
                label_n += 1;
            }
            let (losses, grads) = loss_and_param_gradients(&model, &batch, &loss_cfg);
            if !losses.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalFailure(format!(
                    "non-finite loss or gradient in epoch {epoch}"
                )));
            }
            sum_real += losses.real;
            sum_fake += losses.fake;
            sum_grad += losses.grad;
            sum_total += losses.total;
            n_real += losses.n_real;
            n_fake += losses.n_fake;
            opt.step(model.params_mut(), &grads);
        }

        let vf: Vec<f64> = val.par_iter().map(|s| model.value(&s.pose.to_flat())).collect();
        let grad_norm = mean(
            reals
                .par_iter()
                .map(|&i| {
                    let (_, g) = model.value_and_gradient(&data[i].pose.to_flat());
                    g.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect::<Vec<_>>()
                .into_iter(),
        );
        let row = EpochRow {
            epoch,
            l_real: sum_real / n_real.max(1) as f64,
            l_fake: sum_fake / n_fake.max(1) as f64,
            l_grad: sum_grad / n_real.max(1) as f64,
            l_total: sum_total / (n_real + n_fake).max(1) as f64,
            val_real_mean_f: mean(val.iter().zip(&vf).filter(|(s, _)| s.is_real).map(|(_, f)| *f)),
            val_fake_mean_f: mean(val.iter().zip(&vf).filter(|(s, _)| !s.is_real).map(|(_, f)| *f)),
            val_loss: mean(val.iter().zip(&vf).map(|(s, f)| (f - s.distance).abs())),
            train_real_grad_norm: grad_norm,
            tau: tau.unwrap_or(f64::NAN),
            active_fraction: if active_batches > 0 { active_sum / active_batches as f64 } else { f64::NAN },
            mean_fake_label: if label_n > 0 { label_sum / label_n as f64 } else { f64::NAN },
        };
        progress(&row);
        let score = if row.val_loss.is_nan() { row.l_total } else { row.val_loss };
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, model.clone()));
            report.best_epoch = Some(epoch);
        }
        report.rows.push(row);
        if cfg.projection_threshold.is_none() && !val_reals.is_empty() {
            tau = Some(calibrate_projection_threshold(&model, &val_reals, cfg.projection_percentile, Representation::Polar)?);
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, report))
}

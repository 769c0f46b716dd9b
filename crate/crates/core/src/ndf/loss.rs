use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NdfModel;
use crate::synthesis::LabeledPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub real: f64,
    pub fake: f64,
    pub grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            real: 1.0,
            fake: 1.0,
            grad: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Square each per-sample term instead of taking its norm.
    pub squared: bool,
    /// Include the input-gradient norm term on real samples.
    pub grad_loss: bool,
}

impl LossConfig {
    pub fn new(weights: LossWeights, squared: bool, grad_loss: bool) -> Self {
        Self {
            weights,
            squared,
            grad_loss,
        }
    }
}

/// Summed (not averaged) loss terms over a batch, unweighted, plus the
/// weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub real: f64,
    pub fake: f64,
    pub grad: f64,
    pub total: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

impl Losses {
    fn add(&mut self, o: &Losses) {
        self.real += o.real;
        self.fake += o.fake;
        self.grad += o.grad;
        self.total += o.total;
        self.n_real += o.n_real;
        self.n_fake += o.n_fake;
    }
}

/// Samples per parallel task. Fixed so results do not depend on the
/// thread count.
const LOSS_CHUNK: usize = 16;

/// Per-sample terms `|f − d|` on reals and fakes and `‖∇ₓf‖` on reals,
/// summed over the batch, with the exact parameter gradient of the
/// weighted total.
///
/// Inputs are fed to the network as stored; any representation encoding
/// must already be applied.
pub fn loss_and_param_gradients(model: &NdfModel, batch: &[LabeledPose], cfg: &LossConfig) -> (Losses, Vec<f64>) {
    let n = model.num_params();
    let parts: Vec<(Losses, Vec<f64>)> = batch
        .par_chunks(LOSS_CHUNK)
        .map(|chunk| {
            let mut ws = model.workspace();
            let mut grad = vec![0.0; n];
            let mut acc = Losses::default();
            for s in chunk {
                acc.add(&sample_loss(model, &mut ws, s, cfg, &mut grad));
            }
            (acc, grad)
        })
        .collect();
    let mut losses = Losses::default();
    let mut grad = vec![0.0; n];
    for (l, g) in &parts {
        losses.add(l);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (losses, grad)
}

fn sample_loss(model: &NdfModel, ws: &mut super::Workspace, s: &LabeledPose, cfg: &LossConfig, grad: &mut [f64]) -> Losses {
    let x = s.pose.to_flat();
    let w = cfg.weights;
    let term = |e: f64| if cfg.squared { e * e } else { e.abs() };
    let dterm = |e: f64| if cfg.squared { 2.0 * e } else { sign(e) };
    let mut out = Losses::default();
    if !s.is_real {
        let e = model.forward_with(ws, &x) - s.distance;
        if w.fake * dterm(e) != 0.0 {
            model.accumulate_value_grad(ws, w.fake * dterm(e), grad);
        }
        out.fake = term(e);
        out.total = w.fake * out.fake;
        out.n_fake = 1;
        return out;
    }
    out.n_real = 1;
    if !cfg.grad_loss || w.grad == 0.0 {
        let e = model.forward_with(ws, &x) - s.distance;
        if w.real * dterm(e) != 0.0 {
            model.accumulate_value_grad(ws, w.real * dterm(e), grad);
        }
        out.real = term(e);
        out.total = w.real * out.real;
        return out;
    }
    // d‖g‖/dθ = d(v·g)/dθ with v = g/‖g‖ held fixed; for ‖g‖², v = g and
    // the seed doubles.
    let squared = cfg.squared;
    let distance = s.distance;
    let (f, g, _) = model.accumulate_dual_grad(
        ws,
        &x,
        |f| w.real * dterm(f - distance),
        if squared { 2.0 * w.grad } else { w.grad },
        |g| {
            if squared {
                g.to_vec()
            } else {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    g.iter().map(|v| v / norm).collect()
                } else {
                    vec![0.0; g.len()]
                }
            }
        },
        grad,
    );
    let gn2: f64 = g.iter().map(|v| v * v).sum();
    out.real = term(f - s.distance);
    out.grad = if squared { gn2 } else { gn2.sqrt() };
    out.total = w.real * out.real + w.grad * out.grad;
    out
}

/// Subgradient of `|e|`, zero at the kink.
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

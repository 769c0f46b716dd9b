//! The neural distance field: a per-connection hierarchical encoder
//! followed by an MLP decoder with a non-negative output.
//!
//! Connection `j` is encoded from its own `(cos, sin, r)` triple and the
//! embedding of its parent connection (zeros at the root). The decoder
//! reads all embeddings concatenated and ends in a softplus, so the output
//! is never negative. All hidden units are softplus, which keeps the input
//! gradient differentiable for the gradient-norm loss.

mod checkpoint;
mod loss;
mod net;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PolarPose, Topology};

pub use loss::{loss_and_param_gradients, LossConfig, LossWeights, Losses};
pub use net::Workspace;

use net::Layout;

/// Anything that assigns a distance to a flat polar input and can
/// differentiate it. Implemented by [`NdfModel`]; tests also use analytic
/// fields.
pub trait DistanceField: Sync {
    /// Number of connections (the input has `3 ·` this many components).
    fn num_connections(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Value and gradient with respect to the `3J` input components.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NdfConfig {
    /// Per-connection embedding width `L`.
    pub embedding_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for NdfConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            encoder_hidden: vec![64],
            decoder_hidden: vec![256, 256],
            seed: 0,
        }
    }
}

impl NdfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NdfModel {
    topology: Topology,
    config: NdfConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for NdfModel {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.config == other.config && self.params == other.params
    }
}

impl NdfModel {
    /// A freshly initialised model: weights drawn from `N(0, 1/fan_in)`
    /// with the config seed, biases zero.
    pub fn new(topology: Topology, config: NdfConfig) -> Result<Self> {
        config.validate()?;
        if topology.is_empty() {
            return Err(Error::Config("topology has no connections".into()));
        }
        let layout = Layout::new(
            &topology,
            config.embedding_dim,
            &config.encoder_hidden,
            &config.decoder_hidden,
        );
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for l in layout.layers() {
            let normal = Normal::new(0.0, (1.0 / l.n_in as f64).sqrt()).unwrap();
            for w in &mut params[l.w..l.w + l.n_in * l.n_out] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            topology,
            config,
            layout,
            params,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &NdfConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.layout)
    }

    fn check_input(&self, x: &[f64]) {
        assert_eq!(
            x.len(),
            3 * self.layout.connections(),
            "input has {} components, model expects {}",
            x.len(),
            3 * self.layout.connections()
        );
    }

    pub fn forward_with(&self, ws: &mut Workspace, x: &[f64]) -> f64 {
        self.check_input(x);
        net::forward(&self.layout, &self.params, ws, x)
    }

    /// Value and input gradient, written into `grad`.
    pub fn gradient_with(&self, ws: &mut Workspace, x: &[f64], grad: &mut [f64]) -> f64 {
        self.check_input(x);
        let f = net::forward(&self.layout, &self.params, ws, x);
        grad.fill(0.0);
        net::reverse(&self.layout, &self.params, ws, 1.0, 0.0, false, None, Some(grad));
        f
    }

    pub fn forward(&self, x: &PolarPose) -> f64 {
        self.value(&x.to_flat())
    }

    pub fn input_gradient(&self, x: &PolarPose) -> Vec<f64> {
        self.value_and_gradient(&x.to_flat()).1
    }

    /// Hessian-vector product `∇²f(x) · v`, from the forward-over-reverse
    /// pass.
    pub fn hessian_vector_product(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.check_input(x);
        let mut ws = self.workspace();
        net::forward(&self.layout, &self.params, &mut ws, x);
        net::tangent(&self.layout, &self.params, &mut ws, v);
        let mut out = vec![0.0; x.len()];
        net::reverse(&self.layout, &self.params, &mut ws, 0.0, 1.0, true, None, Some(&mut out));
        out
    }

    /// Adds `seed · ∂f/∂θ` to `grad`, for the input most recently passed
    /// to [`forward_with`](Self::forward_with) on `ws`.
    pub(crate) fn accumulate_value_grad(&self, ws: &mut Workspace, seed: f64, grad: &mut [f64]) {
        net::reverse(&self.layout, &self.params, ws, seed, 0.0, false, Some(grad), None);
    }

    /// Adds `seed · ∂f/∂θ + seed_t · ∂(v·∇ₓf)/∂θ` to `grad`, where `v` is
    /// chosen by `tangent_of` from the input gradient. Returns `f`, the input
    /// gradient and `v·∇ₓf`.
    pub(crate) fn accumulate_dual_grad(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        seed: impl FnOnce(f64) -> f64,
        seed_t: f64,
        tangent_of: impl FnOnce(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> (f64, Vec<f64>, f64) {
        let (l, p) = (&self.layout, &self.params);
        let f = net::forward(l, p, ws, x);
        let mut g = vec![0.0; x.len()];
        net::reverse(l, p, ws, 1.0, 0.0, false, None, Some(&mut g));
        let v = tangent_of(&g);
        let fd = net::tangent(l, p, ws, &v);
        net::reverse(l, p, ws, seed(f), seed_t, true, Some(grad), None);
        (f, g, fd)
    }
}

impl DistanceField for NdfModel {
    fn num_connections(&self) -> usize {
        self.layout.connections()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.forward_with(&mut self.workspace(), x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let f = self.gradient_with(&mut self.workspace(), x, &mut g);
        (f, g)
    }
}

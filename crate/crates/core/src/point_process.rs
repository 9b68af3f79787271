//! Intensity-free temporal point process.
//!
//! A feed-forward network with non-negative weights and biases models the
//! cumulative intensity `Ψ(τ | e_u, h)` over the input `[e_u ‖ h ‖ τ]`.
//! Hidden layers use ReLU and the output layer is linear, so `Ψ` is
//! non-decreasing in every input. The anchored cumulative intensity is
//! `Ψ̃(τ) = Ψ(τ) − Ψ(0)` and the intensity `λ = ∂Ψ̃/∂τ` is computed exactly by
//! pushing the tangent of the `τ` input through the network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointProcessConfig {
    /// Number of weight layers (the last maps to the scalar output).
    pub layers: usize,
    pub hidden: usize,
    /// Lower bound applied to `λ` inside the logarithm.
    pub lambda_floor: f64,
    /// Seconds per unit of `τ` fed to the network.
    pub time_unit_seconds: f64,
}

impl Default for PointProcessConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            lambda_floor: 1e-8,
            time_unit_seconds: 3600.0,
        }
    }
}

impl PointProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("monotone net needs at least one layer and width".into()));
        }
        if !(self.lambda_floor > 0.0) || !(self.time_unit_seconds > 0.0) {
            return Err(Error::Config("lambda_floor and time_unit_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layers with every weight and bias constrained to be non-negative.
#[derive(Debug, Clone)]
pub struct MonotoneNet {
    layers: Vec<(ParamId, ParamId)>,
    input_dim: usize,
    time_unit: f64,
}

/// The non-time part of the network input together with the elapsed time.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityContext {
    pub user_embedding: Vec<f64>,
    pub temporal_summary: Vec<f64>,
    /// Seconds since the user's previous interaction.
    pub elapsed: f64,
}

/// Network outputs at one elapsed time.
#[derive(Debug, Clone, Copy)]
pub struct ProcessOutput {
    /// `Ψ̃(τ)`
    pub cumulative: NodeId,
    /// `λ(τ)`, if requested.
    pub intensity: Option<NodeId>,
}

impl MonotoneNet {
    /// `context_dim` is the width of `[e_u ‖ h]`; the network input adds one
    /// column for `τ`.
    pub fn new<R: Rng>(
        rng: &mut R,
        params: &mut ParamStore,
        prefix: &str,
        context_dim: usize,
        config: &PointProcessConfig,
    ) -> Result<Self> {
        config.validate()?;
        let input_dim = context_dim + 1;
        let mut layers = Vec::with_capacity(config.layers);
        let mut fan_in = input_dim;
        for l in 0..config.layers {
            let out = if l + 1 == config.layers { 1 } else { config.hidden };
            let w = params.insert_uniform(rng, format!("{prefix}.w{l}"), &[fan_in, out], fan_in, Constraint::NonNegative);
            let b = params.insert_zeros(format!("{prefix}.b{l}"), &[out], Constraint::NonNegative);
            layers.push((w, b));
            fan_in = out;
        }
        Ok(Self {
            layers,
            input_dim,
            time_unit: config.time_unit_seconds,
        })
    }

    pub fn bind(params: &ParamStore, prefix: &str, config: &PointProcessConfig) -> Result<Self> {
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let find = |n: String| {
                params
                    .id(&n)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
            };
            layers.push((find(format!("{prefix}.w{l}"))?, find(format!("{prefix}.b{l}"))?));
        }
        let input_dim = params.value(layers[0].0).rows();
        Ok(Self {
            layers,
            input_dim,
            time_unit: config.time_unit_seconds,
        })
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn context_dim(&self) -> usize {
        self.input_dim - 1
    }

    /// `Ψ` at scaled time `tau`, returning the output and each hidden
    /// pre-activation.
    fn forward(&self, g: &mut Graph<'_>, context: NodeId, tau: f64) -> (NodeId, Vec<NodeId>) {
        let t = g.input(Tensor::matrix(1, 1, vec![tau]));
        let mut x = g.concat_cols(&[context, t]);
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.dense(x, w, Some(b));
            if l + 1 == self.layers.len() {
                return (z, pre);
            }
            pre.push(z);
            x = g.relu(z);
        }
        unreachable!("monotone net has at least one layer")
    }

    /// `Ψ̃(τ)` and optionally `λ(τ)` for a context row `[e_u ‖ h]` and elapsed
    /// seconds `elapsed`.
    pub fn evaluate(&self, g: &mut Graph<'_>, context: NodeId, elapsed: f64, with_intensity: bool) -> Result<ProcessOutput> {
        if !(elapsed >= 0.0) {
            return Err(Error::contract(format!("elapsed time must be non-negative, got {elapsed}")));
        }
        assert_eq!(g.value(context).cols(), self.context_dim(), "context width mismatch");
        let tau = elapsed / self.time_unit;
        let (psi, pre) = self.forward(g, context, tau);
        let (psi0, _) = self.forward(g, context, 0.0);
        let cumulative = g.sub(psi, psi0);
        let intensity = with_intensity.then(|| {
            // ∂Ψ/∂τ: row τ of the first weight matrix, masked and propagated.
            let w0 = g.param(self.layers[0].0);
            let mut tangent = g.gather(w0, &[self.input_dim - 1]);
            for (l, &z) in pre.iter().enumerate() {
                let masked = g.mask_right(z, tangent);
                let w = g.param(self.layers[l + 1].0);
                tangent = g.matmul(masked, w);
            }
            // per unit of the time scale -> per second
            g.scale(tangent, 1.0 / self.time_unit)
        });
        Ok(ProcessOutput { cumulative, intensity })
    }

    fn context_node(g: &mut Graph<'_>, ctx: &IntensityContext) -> NodeId {
        let mut row = ctx.user_embedding.clone();
        row.extend_from_slice(&ctx.temporal_summary);
        g.input(Tensor::matrix(1, row.len(), row))
    }

    /// `Ψ̃(τ)` for a plain context.
    pub fn cumulative_intensity(&self, params: &ParamStore, ctx: &IntensityContext) -> Result<f64> {
        let mut g = Graph::new(params);
        let c = Self::context_node(&mut g, ctx);
        let out = self.evaluate(&mut g, c, ctx.elapsed, false)?;
        Ok(g.value(out.cumulative).item())
    }

    /// `λ(τ)` in events per second for a plain context.
    pub fn intensity(&self, params: &ParamStore, ctx: &IntensityContext) -> Result<f64> {
        let mut g = Graph::new(params);
        let c = Self::context_node(&mut g, ctx);
        let out = self.evaluate(&mut g, c, ctx.elapsed, true)?;
        Ok(g.value(out.intensity.expect("requested")).item())
    }
}

/// `−ln max(λ, floor) + Σ Ψ̃_neg`: the negative log-likelihood of the
/// observed event plus the non-event mass of the sampled negatives over the
/// same elapsed window.
pub fn temporal_nll(g: &mut Graph<'_>, intensity: NodeId, negative_cumulative: &[NodeId], floor: f64) -> NodeId {
    let log_l = g.ln_floor(intensity, floor);
    let mut total = g.scale(log_l, -1.0);
    for &c in negative_cumulative {
        total = g.add(total, c);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One linear layer with unit weight on τ (in seconds) and zeros elsewhere.
    fn unit_rate(context_dim: usize) -> (ParamStore, MonotoneNet) {
        let cfg = PointProcessConfig {
            layers: 1,
            time_unit_seconds: 1.0,
            ..PointProcessConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamStore::new();
        let net = MonotoneNet::new(&mut rng, &mut params, "pp", context_dim, &cfg).unwrap();
        let w = params.get_mut(net.layers()[0].0);
        w.value.fill(0.0);
        let last = w.value.len() - 1;
        w.value.data_mut()[last] = 1.0;
        (params, net)
    }

    fn ctx(elapsed: f64) -> IntensityContext {
        IntensityContext {
            user_embedding: vec![0.3, -0.2],
            temporal_summary: vec![1.0],
            elapsed,
        }
    }

    #[test]
    fn anchored_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamStore::new();
        let net = MonotoneNet::new(&mut rng, &mut params, "pp", 3, &PointProcessConfig::default()).unwrap();
        assert_eq!(net.cumulative_intensity(&params, &ctx(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn unit_rate_process() {
        let (params, net) = unit_rate(3);
        for tau in [0.5, 2.0, 17.0] {
            assert!((net.cumulative_intensity(&params, &ctx(tau)).unwrap() - tau).abs() < 1e-12);
            assert!((net.intensity(&params, &ctx(tau)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_elapsed_is_rejected() {
        let (params, net) = unit_rate(3);
        assert!(matches!(net.cumulative_intensity(&params, &ctx(-1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn random_net_is_monotone_on_small_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ParamStore::new();
        let cfg = PointProcessConfig {
            layers: 2,
            hidden: 8,
            ..PointProcessConfig::default()
        };
        let net = MonotoneNet::new(&mut rng, &mut params, "pp", 3, &cfg).unwrap();
        let v: Vec<f64> = [1.0, 3.0, 5.0]
            .iter()
            .map(|&h| net.cumulative_intensity(&params, &ctx(h * 3600.0)).unwrap())
            .collect();
        assert!(v[2] >= v[1] && v[1] >= v[0] && v[0] >= 0.0);
    }

    fn nll_value(params: &ParamStore, net: &MonotoneNet, tau: f64, negatives: usize) -> f64 {
        let mut g = Graph::new(params);
        let c = g.input(Tensor::matrix(1, 3, vec![0.3, -0.2, 1.0]));
        let pos = net.evaluate(&mut g, c, tau, true).unwrap();
        let negs: Vec<NodeId> = (0..negatives)
            .map(|_| net.evaluate(&mut g, c, tau, false).unwrap().cumulative)
            .collect();
        let out = temporal_nll(&mut g, pos.intensity.unwrap(), &negs, 1e-8);
        g.value(out).item()
    }

    #[test]
    fn unit_rate_nll() {
        let (params, net) = unit_rate(3);
        assert!(nll_value(&params, &net, 2.0, 0).abs() < 1e-12);
        assert!((nll_value(&params, &net, 2.0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_is_floored() {
        let (mut params, net) = unit_rate(3);
        params.get_mut(net.layers()[0].0).value.fill(0.0);
        let v = nll_value(&params, &net, 2.0, 0);
        assert!((v - (-(1e-8f64).ln())).abs() < 1e-9);
    }
}

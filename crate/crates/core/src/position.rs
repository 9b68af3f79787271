//! Personalised position-bias modelling.
//!
//! Per-position uplifts come from a multi-gate mixture of experts: every
//! position `k` owns a softmax gate over shared experts, and a shared
//! readout gives `δ̂_k = ReLU(v · Σ_i gate_k(x)_i f_i(x) + b)`. A GLU gate
//! driven by position-related features scales each uplift into `[0, 1)`:
//! `δ_k = σ(ε_k) · tanh(δ̂_k)`. The logit at position `k` sums the uplifts of
//! that position and all later ones, `μ_k = Σ_{i≥k} δ_i`, so the click
//! probability `σ(μ_k)` can only fall as `k` grows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionConfig {
    /// Largest position index `K`; there are `K + 1` positions.
    pub max_position: usize,
    pub experts: usize,
    pub expert_width: usize,
    /// One readout bias for every position (`true`) or one per position.
    pub shared_bias: bool,
    /// Starting value of the readout bias; positive keeps the ReLU active
    /// early in training.
    pub bias_init: f64,
}

impl Default for PositionConfig {
    fn default() -> Self {
        Self {
            max_position: 9,
            experts: 4,
            expert_width: 32,
            shared_bias: true,
            bias_init: 1.0,
        }
    }
}

impl PositionConfig {
    pub fn positions(&self) -> usize {
        self.max_position + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Expert {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Parameters of the uplift experts, gates, readout and GLU.
#[derive(Debug, Clone)]
pub struct PositionModule {
    experts: Vec<Expert>,
    gates: ParamId,
    readout: ParamId,
    bias: ParamId,
    glu_w: ParamId,
    glu_b: ParamId,
    positions: usize,
}

impl PositionModule {
    pub fn new<R: Rng>(
        rng: &mut R,
        params: &mut ParamStore,
        prefix: &str,
        x_dim: usize,
        p_dim: usize,
        config: &PositionConfig,
    ) -> Result<Self> {
        if config.experts == 0 || config.expert_width == 0 {
            return Err(Error::Config("position module needs at least one expert of non-zero width".into()));
        }
        let w = config.expert_width;
        let kp = config.positions();
        let n = config.experts;
        let experts = (0..n)
            .map(|i| Expert {
                w1: params.insert_uniform(rng, format!("{prefix}.expert{i}.w1"), &[x_dim, w], x_dim, Constraint::Free),
                b1: params.insert_zeros(format!("{prefix}.expert{i}.b1"), &[w], Constraint::Free),
                w2: params.insert_uniform(rng, format!("{prefix}.expert{i}.w2"), &[w, w], w, Constraint::Free),
                b2: params.insert_zeros(format!("{prefix}.expert{i}.b2"), &[w], Constraint::Free),
            })
            .collect();
        let gates = params.insert_uniform(rng, format!("{prefix}.gates"), &[x_dim, kp * n], x_dim, Constraint::Free);
        let readout = params.insert_uniform(rng, format!("{prefix}.readout"), &[w, 1], w, Constraint::Free);
        let bias_len = if config.shared_bias { 1 } else { kp };
        let bias = params.insert(
            format!("{prefix}.bias"),
            Tensor::new(vec![bias_len], vec![config.bias_init; bias_len]),
            Constraint::Free,
        );
        let glu_w = params.insert_uniform(rng, format!("{prefix}.glu_w"), &[p_dim, kp], p_dim, Constraint::Free);
        let glu_b = params.insert_zeros(format!("{prefix}.glu_b"), &[kp], Constraint::Free);
        Ok(Self {
            experts,
            gates,
            readout,
            bias,
            glu_w,
            glu_b,
            positions: kp,
        })
    }

    pub fn bind(params: &ParamStore, prefix: &str, config: &PositionConfig) -> Result<Self> {
        let find = |n: String| {
            params
                .id(&n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
        };
        let experts = (0..config.experts)
            .map(|i| {
                Ok(Expert {
                    w1: find(format!("{prefix}.expert{i}.w1"))?,
                    b1: find(format!("{prefix}.expert{i}.b1"))?,
                    w2: find(format!("{prefix}.expert{i}.w2"))?,
                    b2: find(format!("{prefix}.expert{i}.b2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            experts,
            gates: find(format!("{prefix}.gates"))?,
            readout: find(format!("{prefix}.readout"))?,
            bias: find(format!("{prefix}.bias"))?,
            glu_w: find(format!("{prefix}.glu_w"))?,
            glu_b: find(format!("{prefix}.glu_b"))?,
            positions: config.positions(),
        })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    /// Raw uplifts `δ̂` for every position (1 × (K+1)).
    pub fn uplift_raw(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let n = self.experts.len();
        let outputs: Vec<NodeId> = self
            .experts
            .iter()
            .map(|e| {
                let h = g.dense(x, e.w1, Some(e.b1));
                let h = g.relu(h);
                let o = g.dense(h, e.w2, Some(e.b2));
                g.relu(o)
            })
            .collect();
        let stacked = g.concat_rows(&outputs); // n × width
        let logits = g.dense(x, self.gates, None); // 1 × (K+1)n
        let logits = g.reshape(logits, &[self.positions, n]);
        let gate = g.softmax(logits); // (K+1) × n
        let mixed = g.matmul(gate, stacked); // (K+1) × width
        let readout = g.param(self.readout);
        let score = g.matmul(mixed, readout); // (K+1) × 1
        let score = g.reshape(score, &[1, self.positions]);
        let bias = g.param(self.bias);
        let score = if g.value(bias).len() == 1 {
            let ones = g.input(Tensor::matrix(1, self.positions, vec![1.0; self.positions]));
            let b = g.matmul(bias, ones);
            g.add(score, b)
        } else {
            g.add_row(score, bias)
        };
        g.relu(score)
    }

    /// Gated uplifts `δ = σ(ε) · tanh(δ̂)` with `ε = p·W + b`.
    pub fn gate(&self, g: &mut Graph<'_>, raw: NodeId, position_features: NodeId) -> NodeId {
        let eps = g.dense(position_features, self.glu_w, Some(self.glu_b));
        let s = g.sigmoid(eps);
        let t = g.tanh(raw);
        g.mul(s, t)
    }

    /// All per-position uplifts for one input.
    pub fn uplifts(&self, g: &mut Graph<'_>, x: NodeId, position_features: NodeId) -> NodeId {
        let raw = self.uplift_raw(g, x);
        self.gate(g, raw, position_features)
    }

    /// Plain-value `δ̂_k`.
    pub fn mmoe_uplift(&self, params: &ParamStore, x: &[f64], k: usize) -> Result<f64> {
        check_position(k, self.positions)?;
        let mut g = Graph::new(params);
        let xn = g.input(Tensor::matrix(1, x.len(), x.to_vec()));
        let raw = self.uplift_raw(&mut g, xn);
        Ok(g.value(raw).data()[k])
    }
}

/// Same-position GLU on plain values.
pub fn glu_gate(raw_uplift: f64, gate_logit: f64) -> f64 {
    sigmoid(gate_logit) * raw_uplift.tanh()
}

fn check_position(k: usize, positions: usize) -> Result<()> {
    if k >= positions {
        return Err(Error::contract(format!("position {k} outside 0..={}", positions - 1)));
    }
    Ok(())
}

/// Row `k` of the position matrix: zeros before `k`, ones from `k` on.
pub fn position_row(k: usize, positions: usize) -> Vec<f64> {
    (0..positions).map(|i| if i >= k { 1.0 } else { 0.0 }).collect()
}

/// The `(K+1) × (K+1)` matrix whose rows are [`position_row`].
pub fn position_matrix(positions: usize) -> Tensor {
    let data = (0..positions).flat_map(|k| position_row(k, positions)).collect();
    Tensor::matrix(positions, positions, data)
}

/// `μ_k = Σ_{i≥k} δ_i` by direct summation. Every form here adds from the
/// last position back, so `μ_k = fl(δ_k + μ_{k+1}) ≥ μ_{k+1}` holds in
/// floating point too.
pub fn position_logit(uplifts: &[f64], k: usize) -> Result<f64> {
    check_position(k, uplifts.len())?;
    Ok(uplifts[k..].iter().rev().sum())
}

/// Every `μ_k` as `S_k · Δᵀ`.
pub fn position_logits_matrix(uplifts: &[f64]) -> Vec<f64> {
    let s = position_matrix(uplifts.len());
    (0..uplifts.len())
        .map(|k| s.row(k).iter().zip(uplifts).rev().map(|(a, b)| a * b).sum())
        .collect()
}

/// Graph form of [`position_logits_matrix`]: `μ = Δ · Sᵀ`, evaluated as
/// `(Δ · J) · (J · Sᵀ)` with the reversal `J` so the products accumulate in
/// the same order.
pub fn position_logits(g: &mut Graph<'_>, uplifts: NodeId) -> NodeId {
    let n = g.value(uplifts).len();
    let flip = Tensor::matrix(n, n, (0..n * n).map(|x| f64::from(x / n + x % n == n - 1)).collect());
    let flipped_suffix = Tensor::matrix(n, n, (0..n * n).map(|x| f64::from(x % n + x / n < n)).collect());
    let j = g.input(flip);
    let reversed = g.matmul(uplifts, j);
    let s = g.input(flipped_suffix);
    g.matmul(reversed, s)
}

pub fn click_probability(logit: f64) -> f64 {
    sigmoid(logit)
}

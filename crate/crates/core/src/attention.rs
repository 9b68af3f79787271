//! Continuous-time aware attention over a user's click history.
//!
//! Each behaviour row is the item embedding concatenated with the time
//! encoding of the elapsed interval `t − t_i`; the target item forms the last
//! row with interval zero. The summary `h_{u,v}(t)` is the target row of
//! `softmax(QKᵀ/√d)V`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Behavior, BehaviorSequence, CategoryId, ItemId, Timestamp};
use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};

pub const DEFAULT_MAX_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetItem {
    pub item: ItemId,
    pub category: CategoryId,
}

/// Row plan of the temporal sequence matrix: the retained behaviours
/// (oldest first), their elapsed intervals in seconds, and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMatrix {
    pub behaviors: Vec<Behavior>,
    pub intervals: Vec<f64>,
    pub target: TargetItem,
    pub time: Timestamp,
}

impl TemporalMatrix {
    /// Behaviour rows plus the target row.
    pub fn rows(&self) -> usize {
        self.behaviors.len() + 1
    }

    /// Intervals for every row including the trailing zero of the target.
    pub fn all_intervals(&self) -> Vec<f64> {
        let mut v = self.intervals.clone();
        v.push(0.0);
        v
    }
}

/// Keeps the `max_len` most recent behaviours before `t`.
pub fn build_temporal_matrix(
    history: &BehaviorSequence,
    target: TargetItem,
    t: Timestamp,
    max_len: usize,
) -> Result<TemporalMatrix> {
    if let Some(bad) = history.events().iter().find(|b| b.timestamp >= t) {
        return Err(Error::contract(format!(
            "history event at {} is not before the target time {t}",
            bad.timestamp
        )));
    }
    let events = history.events();
    let start = events.len().saturating_sub(max_len);
    let behaviors = events[start..].to_vec();
    let intervals = behaviors.iter().map(|b| (t - b.timestamp) as f64).collect();
    Ok(TemporalMatrix {
        behaviors,
        intervals,
        target,
        time: t,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub width: usize,
    pub d_attn: usize,
}

impl AttentionParams {
    pub fn new<R: Rng>(rng: &mut R, params: &mut ParamStore, prefix: &str, width: usize, d_attn: usize) -> Self {
        let mut mk = |n: &str| params.insert_uniform(rng, format!("{prefix}.{n}"), &[width, d_attn], width, Constraint::Free);
        let w_q = mk("w_q");
        let w_k = mk("w_k");
        let w_v = mk("w_v");
        Self {
            w_q,
            w_k,
            w_v,
            width,
            d_attn,
        }
    }

    pub fn bind(params: &ParamStore, prefix: &str) -> Result<Self> {
        let find = |n: &str| {
            params
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {prefix}.{n}")))
        };
        let w_q = find("w_q")?;
        let shape = params.value(w_q).shape().to_vec();
        Ok(Self {
            w_q,
            w_k: find("w_k")?,
            w_v: find("w_v")?,
            width: shape[0],
            d_attn: shape[1],
        })
    }

    fn scale(&self) -> f64 {
        1.0 / (self.d_attn as f64).sqrt()
    }
}

/// Full scaled dot-product self-attention over `z` (rows × width). Returns
/// the attention weights (rows × rows) and the output rows.
pub fn attention_full(z: &Tensor, q_w: &Tensor, k_w: &Tensor, v_w: &Tensor) -> (Tensor, Tensor) {
    let n = z.rows();
    let project = |w: &Tensor| {
        let mut out = vec![0.0; n * w.cols()];
        for i in 0..n {
            for (k, &zv) in z.row(i).iter().enumerate() {
                for (o, &wv) in out[i * w.cols()..(i + 1) * w.cols()].iter_mut().zip(w.row(k)) {
                    *o += zv * wv;
                }
            }
        }
        Tensor::matrix(n, w.cols(), out)
    };
    let (q, k, v) = (project(q_w), project(k_w), project(v_w));
    let d = q.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut weights[i * n..(i + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            *r = crate::nn::dot(q.row(i), k.row(j)) * scale;
        }
        softmax_in_place(row);
    }
    let mut out = vec![0.0; n * v.cols()];
    for i in 0..n {
        for j in 0..n {
            let w = weights[i * n + j];
            for (o, &vv) in out[i * v.cols()..(i + 1) * v.cols()].iter_mut().zip(v.row(j)) {
                *o += w * vv;
            }
        }
    }
    (Tensor::matrix(n, n, weights), Tensor::matrix(n, v.cols(), out))
}

/// Keys and values of the behaviour rows, shared across every target that is
/// scored against the same history.
#[derive(Debug, Clone, Copy)]
pub struct HistoryKeys {
    keys: Option<NodeId>,
    values: Option<NodeId>,
}

impl HistoryKeys {
    /// `z_hist` is the behaviour part of the temporal matrix, or `None` for an
    /// empty history.
    pub fn new(g: &mut Graph<'_>, params: &AttentionParams, z_hist: Option<NodeId>) -> Self {
        match z_hist {
            None => Self { keys: None, values: None },
            Some(z) => {
                let keys = g.dense(z, params.w_k, None);
                let values = g.dense(z, params.w_v, None);
                Self {
                    keys: Some(keys),
                    values: Some(values),
                }
            }
        }
    }

    /// Target-row readout `h` (1 × d_attn) for the target row `z_target`.
    pub fn attend(&self, g: &mut Graph<'_>, params: &AttentionParams, z_target: NodeId) -> NodeId {
        let (weights, values) = self.target_weights(g, params, z_target);
        g.matmul(weights, values)
    }

    /// Target-row attention weights (1 × rows) and the value rows.
    pub fn target_weights(&self, g: &mut Graph<'_>, params: &AttentionParams, z_target: NodeId) -> (NodeId, NodeId) {
        let q = g.dense(z_target, params.w_q, None);
        let k_t = g.dense(z_target, params.w_k, None);
        let v_t = g.dense(z_target, params.w_v, None);
        let (keys, values) = match (self.keys, self.values) {
            (Some(k), Some(v)) => (g.concat_rows(&[k, k_t]), g.concat_rows(&[v, v_t])),
            _ => (k_t, v_t),
        };
        let scores = g.matmul_bt(q, keys);
        let scaled = g.scale(scores, params.scale());
        (g.softmax(scaled), values)
    }
}

/// Full attention on the graph, returning the target (last) output row and
/// the weight matrix node.
pub fn attend(g: &mut Graph<'_>, params: &AttentionParams, z: NodeId) -> (NodeId, NodeId) {
    let q = g.dense(z, params.w_q, None);
    let k = g.dense(z, params.w_k, None);
    let v = g.dense(z, params.w_v, None);
    let scores = g.matmul_bt(q, k);
    let scaled = g.scale(scores, params.scale());
    let weights = g.softmax(scaled);
    let out = g.matmul(weights, v);
    let last = g.value(out).rows() - 1;
    let h = g.gather(out, &[last]);
    (h, weights)
}

//! The end-to-end scorer: feature embeddings, temporal attention, the
//! monotone point process and the position module.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::attention::{AttentionParams, HistoryKeys, TargetItem};
use crate::data::{ItemId, Query, Sample, Timestamp, Vocab};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, sigmoid, Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::point_process::{temporal_nll, MonotoneNet};
use crate::position::{position_logits, PositionModule};
use crate::time_encoding::TimeEncoder;

type Dense = (ParamId, ParamId);

#[derive(Debug, Clone)]
struct Layout {
    user_emb: ParamId,
    item_emb: ParamId,
    category_emb: ParamId,
    hour_emb: ParamId,
    weekday_emb: ParamId,
    item_position_emb: ParamId,
    position_emb: ParamId,
    user_proj: Dense,
    item_proj: Dense,
    context_proj: Dense,
    position_proj: Dense,
    time: TimeEncoder,
    attention: AttentionParams,
    mlp: Vec<Dense>,
    process: MonotoneNet,
    position: Option<PositionModule>,
    /// Scalar added to every position logit.
    logit_offset: Option<ParamId>,
    head: Option<Dense>,
}

fn find(params: &ParamStore, name: &str) -> Result<ParamId> {
    params
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

fn find_dense(params: &ParamStore, name: &str) -> Result<Dense> {
    Ok((find(params, &format!("{name}.w"))?, find(params, &format!("{name}.b"))?))
}

impl Layout {
    fn new<R: Rng>(rng: &mut R, params: &mut ParamStore, cfg: &ModelConfig, vocab: &Vocab) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embedding_dim;
        let mut emb = |params: &mut ParamStore, name: &str, rows: usize| {
            params.insert_uniform(&mut *rng, name, &[rows, e], e, Constraint::Free)
        };
        // one extra row per vocabulary for out-of-vocabulary ids
        let user_emb = emb(params, "emb.user", vocab.users as usize + 1);
        let item_emb = emb(params, "emb.item", vocab.items as usize + 1);
        let category_emb = emb(params, "emb.category", vocab.categories as usize + 1);
        let hour_emb = emb(params, "emb.hour", 24);
        let weekday_emb = emb(params, "emb.weekday", 7);
        let item_position_emb = emb(params, "emb.item_position", vocab.items as usize + 1);
        let position_emb = emb(params, "emb.position", cfg.position.positions());

        let dense = |rng: &mut R, params: &mut ParamStore, name: &str, fan_in: usize, out: usize| {
            let w = params.insert_uniform(rng, format!("{name}.w"), &[fan_in, out], fan_in, Constraint::Free);
            let b = params.insert_zeros(format!("{name}.b"), &[out], Constraint::Free);
            (w, b)
        };
        let user_proj = dense(rng, params, "proj.user", e, cfg.feature_dim);
        let item_proj = dense(rng, params, "proj.item", 2 * e, cfg.item_dim);
        let context_proj = dense(rng, params, "proj.context", 2 * e, cfg.feature_dim);
        let position_proj = dense(rng, params, "proj.position", 2 * e, cfg.feature_dim);

        let time = TimeEncoder::new(&cfg.time_encoding, params, "time")?;
        let width = cfg.item_dim + cfg.time_encoding.dim();
        let attention = AttentionParams::new(rng, params, "attention", width, cfg.attention_dim);

        let mut mlp = Vec::new();
        let mut fan_in = mlp_input(cfg);
        for (l, &out) in cfg.mlp.iter().enumerate() {
            mlp.push(dense(rng, params, &format!("mlp.{l}"), fan_in, out));
            fan_in = out;
        }
        let x_dim = fan_in;

        let process = MonotoneNet::new(
            rng,
            params,
            "process",
            cfg.feature_dim + cfg.attention_dim,
            &cfg.point_process,
        )?;
        let (position, logit_offset, head) = if cfg.ablation.position_module {
            (None, None, Some(dense(rng, params, "head", x_dim, 1)))
        } else {
            let m = PositionModule::new(rng, params, "position", x_dim, cfg.feature_dim, &cfg.position)?;
            let init = Tensor::matrix(1, 1, vec![cfg.logit_offset_init]);
            let offset = params.insert("position.logit_offset", init, Constraint::Free);
            (Some(m), Some(offset), None)
        };
        Ok(Self {
            user_emb,
            item_emb,
            category_emb,
            hour_emb,
            weekday_emb,
            item_position_emb,
            position_emb,
            user_proj,
            item_proj,
            context_proj,
            position_proj,
            time,
            attention,
            mlp,
            process,
            position,
            logit_offset,
            head,
        })
    }

    fn bind(params: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mlp = (0..cfg.mlp.len())
            .map(|l| find_dense(params, &format!("mlp.{l}")))
            .collect::<Result<_>>()?;
        let (position, logit_offset, head) = if cfg.ablation.position_module {
            (None, None, Some(find_dense(params, "head")?))
        } else {
            (
                Some(PositionModule::bind(params, "position", &cfg.position)?),
                Some(find(params, "position.logit_offset")?),
                None,
            )
        };
        Ok(Self {
            user_emb: find(params, "emb.user")?,
            item_emb: find(params, "emb.item")?,
            category_emb: find(params, "emb.category")?,
            hour_emb: find(params, "emb.hour")?,
            weekday_emb: find(params, "emb.weekday")?,
            item_position_emb: find(params, "emb.item_position")?,
            position_emb: find(params, "emb.position")?,
            user_proj: find_dense(params, "proj.user")?,
            item_proj: find_dense(params, "proj.item")?,
            context_proj: find_dense(params, "proj.context")?,
            position_proj: find_dense(params, "proj.position")?,
            time: TimeEncoder::bind(&cfg.time_encoding, params, "time")?,
            attention: AttentionParams::bind(params, "attention")?,
            mlp,
            process: MonotoneNet::bind(params, "process", &cfg.point_process)?,
            position,
            logit_offset,
            head,
        })
    }
}

/// `[e_u ‖ e_v ‖ c ‖ h]`
fn mlp_input(cfg: &ModelConfig) -> usize {
    2 * cfg.feature_dim + cfg.item_dim + cfg.attention_dim
}

pub fn hour_of_day(t: Timestamp) -> usize {
    t.div_euclid(3600).rem_euclid(24) as usize
}

pub fn day_of_week(t: Timestamp) -> usize {
    t.div_euclid(86_400).rem_euclid(7) as usize
}

/// The four projected feature vectors of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbeddings {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub context: Vec<f64>,
    pub position: Vec<f64>,
}

/// Plain-value outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Click probability at the requested position.
    pub probability: f64,
    /// `λ` at the elapsed time since the last click, per second; `None` for
    /// an empty history.
    pub intensity: Option<f64>,
    pub summary: Vec<f64>,
    /// `b + μ_0..μ_K`, or the single head logit under the position ablation.
    pub logits: Vec<f64>,
}

/// Graph nodes shared by every target scored for one query.
pub(crate) struct QueryNodes {
    user: NodeId,
    context: NodeId,
    /// Mean embedding of the positions of past clicks.
    past_positions: NodeId,
    keys: HistoryKeys,
}

/// Graph nodes of one (query, target item) pair.
pub(crate) struct TargetNodes {
    pub summary: NodeId,
    /// 1 × (K+1) position logits, or 1 × 1 head logit.
    pub logits: NodeId,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    vocab: Vocab,
}

/// COUPA model: configuration, vocabularies and parameters.
#[derive(Debug, Clone)]
pub struct Coupa {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    layout: Layout,
}

impl Coupa {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::new(&mut rng, &mut params, &config, &vocab)?;
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        let layout = Layout::bind(&params, &config)?;
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let meta: Metadata = serde_json::from_str(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_parts(meta.config, meta.vocab, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        save_checkpoint(path, &self.params, &serde_json::to_string(&meta).expect("metadata serialises"))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn positions(&self) -> usize {
        self.config.position.positions()
    }

    /// Zeroes the time encoding from now on; the parameters stay in place.
    pub fn disable_time_encoding(&mut self) {
        self.config.ablation.time_encoding = true;
    }

    pub fn category_of(&self, item: ItemId) -> u32 {
        self.vocab.category_of(item).unwrap_or(self.vocab.categories)
    }

    fn lookup(&self, g: &mut Graph<'_>, table: ParamId, rows: &[usize]) -> NodeId {
        let t = g.param(table);
        g.gather(t, rows)
    }

    fn project(&self, g: &mut Graph<'_>, x: NodeId, layer: Dense) -> NodeId {
        let z = g.dense(x, layer.0, Some(layer.1));
        g.tanh(z)
    }

    /// `n × time_dim` encodings, zeros under the time ablation.
    fn encode_intervals(&self, g: &mut Graph<'_>, intervals: &[f64]) -> NodeId {
        if self.config.ablation.time_encoding {
            g.input(Tensor::zeros(&[intervals.len(), self.config.time_encoding.dim()]))
        } else {
            self.layout.time.encode_graph(g, intervals)
        }
    }

    /// `e_v` rows for the given items and categories.
    fn item_rows(&self, g: &mut Graph<'_>, items: &[(ItemId, u32)]) -> NodeId {
        let iv: Vec<usize> = items.iter().map(|&(v, _)| self.vocab.item_slot(v)).collect();
        let cv: Vec<usize> = items.iter().map(|&(_, c)| self.vocab.category_slot(c)).collect();
        let a = self.lookup(g, self.layout.item_emb, &iv);
        let b = self.lookup(g, self.layout.category_emb, &cv);
        let cat = g.concat_cols(&[a, b]);
        self.project(g, cat, self.layout.item_proj)
    }

    pub(crate) fn query_nodes(&self, g: &mut Graph<'_>, q: &Query) -> Result<QueryNodes> {
        q.validate()?;
        let lay = &self.layout;
        let u = self.lookup(g, lay.user_emb, &[self.vocab.user_slot(q.user)]);
        let user = self.project(g, u, lay.user_proj);

        let hr = self.lookup(g, lay.hour_emb, &[hour_of_day(q.timestamp)]);
        let dw = self.lookup(g, lay.weekday_emb, &[day_of_week(q.timestamp)]);
        let ctx = g.concat_cols(&[hr, dw]);
        let context = self.project(g, ctx, lay.context_proj);

        let events = q.history.events();
        let events = &events[events.len().saturating_sub(self.config.max_history)..];
        let past_positions = if events.is_empty() {
            g.input(Tensor::zeros(&[1, self.config.embedding_dim]))
        } else {
            let max = self.positions() - 1;
            let rows: Vec<usize> = events.iter().map(|b| (b.position as usize).min(max)).collect();
            let p = self.lookup(g, lay.position_emb, &rows);
            g.mean_rows(p)
        };

        let z_hist = if events.is_empty() {
            None
        } else {
            let pairs: Vec<(ItemId, u32)> = events.iter().map(|b| (b.item, b.category)).collect();
            let rows = self.item_rows(g, &pairs);
            let intervals: Vec<f64> = events.iter().map(|b| (q.timestamp - b.timestamp) as f64).collect();
            let enc = self.encode_intervals(g, &intervals);
            Some(g.concat_cols(&[rows, enc]))
        };
        let keys = HistoryKeys::new(g, &lay.attention, z_hist);
        Ok(QueryNodes {
            user,
            context,
            past_positions,
            keys,
        })
    }

    /// `p_{u,v}` from the target item and the user's past click positions.
    fn position_features(&self, g: &mut Graph<'_>, qn: &QueryNodes, item: ItemId) -> NodeId {
        let ip = self.lookup(g, self.layout.item_position_emb, &[self.vocab.item_slot(item)]);
        let pf = g.concat_cols(&[ip, qn.past_positions]);
        self.project(g, pf, self.layout.position_proj)
    }

    pub(crate) fn target_nodes(&self, g: &mut Graph<'_>, qn: &QueryNodes, item: ItemId, category: u32) -> TargetNodes {
        let lay = &self.layout;
        let ev = self.item_rows(g, &[(item, category)]);
        let enc = self.encode_intervals(g, &[0.0]);
        let z = g.concat_cols(&[ev, enc]);
        let summary = qn.keys.attend(g, &lay.attention, z);
        let mut x = g.concat_cols(&[qn.user, ev, qn.context, summary]);
        for &(w, b) in &lay.mlp {
            let z = g.dense(x, w, Some(b));
            x = g.relu(z);
        }
        let logits = match (&lay.position, lay.logit_offset, lay.head) {
            (Some(m), Some(offset), _) => {
                let p = self.position_features(g, qn, item);
                let d = m.uplifts(g, x, p);
                let mu = position_logits(g, d);
                let offset = g.param(offset);
                let ones = g.input(Tensor::matrix(1, self.positions(), vec![1.0; self.positions()]));
                let shift = g.matmul(offset, ones);
                g.add(mu, shift)
            }
            (None, _, Some((w, b))) => g.dense(x, w, Some(b)),
            _ => unreachable!("layout has a scoring head"),
        };
        TargetNodes {
            summary,
            logits,
        }
    }

    /// Logit of the sample's position (the head logit under the ablation).
    pub(crate) fn position_logit(&self, g: &mut Graph<'_>, t: &TargetNodes, position: u32) -> Result<NodeId> {
        if self.layout.head.is_some() {
            return Ok(g.pick(t.logits, 0));
        }
        let k = position as usize;
        if k >= self.positions() {
            return Err(Error::contract(format!("position {k} outside 0..={}", self.positions() - 1)));
        }
        Ok(g.pick(t.logits, k))
    }

    fn intensity_context(&self, g: &mut Graph<'_>, qn: &QueryNodes, summary: NodeId) -> NodeId {
        g.concat_cols(&[qn.user, summary])
    }

    /// Summed `CE + α · temporal NLL` of samples that share user, time and
    /// history, so that the history keys are built once. The temporal term
    /// needs a clicked sample with a non-empty history.
    pub(crate) fn group_objective(
        &self,
        g: &mut Graph<'_>,
        samples: &[&Sample],
        negatives: &[&[TargetItem]],
        alpha: f64,
    ) -> Result<NodeId> {
        let first = samples.first().ok_or_else(|| Error::contract("empty sample group"))?;
        let qn = self.query_nodes(g, &first.query)?;
        let mut total: Option<NodeId> = None;
        for (sample, negs) in samples.iter().zip(negatives) {
            let q = &sample.query;
            let t = self.target_nodes(g, &qn, q.item, q.category);
            let logit = self.position_logit(g, &t, sample.position)?;
            let mut term = g.bce_logits(logit, f64::from(sample.label));
            if let Some(elapsed) = q.elapsed().filter(|_| sample.label == 1 && alpha > 0.0) {
                let proc = &self.layout.process;
                let ctx = self.intensity_context(g, &qn, t.summary);
                let pos = proc.evaluate(g, ctx, elapsed, true)?;
                let mut cums = Vec::with_capacity(negs.len());
                for n in negs.iter() {
                    let tn = self.negative_summary(g, &qn, n);
                    let c = self.intensity_context(g, &qn, tn);
                    cums.push(proc.evaluate(g, c, elapsed, false)?.cumulative);
                }
                let floor = self.config.point_process.lambda_floor;
                let nll = temporal_nll(g, pos.intensity.expect("requested"), &cums, floor);
                let weighted = g.scale(nll, alpha);
                term = g.add(term, weighted);
            }
            total = Some(match total {
                Some(acc) => g.add(acc, term),
                None => term,
            });
        }
        Ok(total.expect("group is non-empty"))
    }

    fn negative_summary(&self, g: &mut Graph<'_>, qn: &QueryNodes, n: &TargetItem) -> NodeId {
        let ev = self.item_rows(g, &[(n.item, n.category)]);
        let enc = self.encode_intervals(g, &[0.0]);
        let z = g.concat_cols(&[ev, enc]);
        qn.keys.attend(g, &self.layout.attention, z)
    }

    pub fn embed_features(&self, q: &Query) -> Result<FeatureEmbeddings> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let ev = self.item_rows(&mut g, &[(q.item, q.category)]);
        let position = self.position_features(&mut g, &qn, q.item);
        Ok(FeatureEmbeddings {
            user: g.value(qn.user).data().to_vec(),
            item: g.value(ev).data().to_vec(),
            context: g.value(qn.context).data().to_vec(),
            position: g.value(position).data().to_vec(),
        })
    }

    /// Probability at `position`, intensity, summary and all logits.
    pub fn forward(&self, q: &Query, position: u32) -> Result<ForwardOutput> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let t = self.target_nodes(&mut g, &qn, q.item, q.category);
        let logit = self.position_logit(&mut g, &t, position)?;
        let intensity = match q.elapsed() {
            Some(e) => {
                let c = self.intensity_context(&mut g, &qn, t.summary);
                let out = self.layout.process.evaluate(&mut g, c, e, true)?;
                Some(g.value(out.intensity.expect("requested")).item())
            }
            None => None,
        };
        Ok(ForwardOutput {
            probability: sigmoid(g.value(logit).item()),
            intensity,
            summary: g.value(t.summary).data().to_vec(),
            logits: g.value(t.logits).data().to_vec(),
        })
    }

    /// Click probability at `position` without the intensity head.
    pub fn probability(&self, q: &Query, position: u32) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let t = self.target_nodes(&mut g, &qn, q.item, q.category);
        let logit = self.position_logit(&mut g, &t, position)?;
        Ok(sigmoid(g.value(logit).item()))
    }

    /// Serving score: the click probability with every position set to 0.
    pub fn predict(&self, q: &Query) -> Result<f64> {
        self.probability(q, 0)
    }

    /// Position-0 scores of several targets against one user history,
    /// sharing the history keys. `q.item` is ignored.
    pub fn predict_targets(&self, q: &Query, targets: &[TargetItem]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let mut out = Vec::with_capacity(targets.len());
        for t in targets {
            let nodes = self.target_nodes(&mut g, &qn, t.item, t.category);
            let l = self.position_logit(&mut g, &nodes, 0)?;
            out.push(sigmoid(g.value(l).item()));
        }
        Ok(out)
    }

    /// Attention weights of the target row over the retained history
    /// (oldest first) followed by the target itself.
    pub fn attention_weights(&self, q: &Query) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let ev = self.item_rows(&mut g, &[(q.item, q.category)]);
        let enc = self.encode_intervals(&mut g, &[0.0]);
        let z = g.concat_cols(&[ev, enc]);
        let (w, _) = qn.keys.target_weights(&mut g, &self.layout.attention, z);
        Ok(g.value(w).data().to_vec())
    }

    /// Intensity head evaluated on its own, for inspection.
    pub fn cumulative_intensity(&self, q: &Query, elapsed: f64) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let qn = self.query_nodes(&mut g, q)?;
        let t = self.target_nodes(&mut g, &qn, q.item, q.category);
        let c = self.intensity_context(&mut g, &qn, t.summary);
        let out = self.layout.process.evaluate(&mut g, c, elapsed, false)?;
        Ok(g.value(out.cumulative).item())
    }
}

use std::borrow::Borrow;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{score_samples, ScoreMode};
use super::network::Coupa;
use crate::attention::TargetItem;
use crate::data::{DatasetSplit, ItemId, Query, Sample, Vocab};
use crate::error::{Error, Result};
use crate::metrics::gauc;
use crate::nn::{Adam, Gradients, Graph, ParamStore};

/// Uniform draws from the item vocabulary, never the positive item itself.
pub fn draw_negatives<R: Rng>(rng: &mut R, vocab: &Vocab, positive: ItemId, count: usize) -> Vec<TargetItem> {
    let n = vocab.items;
    if n < 2 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let mut v = rng.gen_range(0..n - 1);
            if positive < n && v >= positive {
                v += 1;
            }
            TargetItem {
                item: v,
                category: vocab.category_of(v).unwrap_or(vocab.categories),
            }
        })
        .collect()
}

fn shares_context(a: &Query, b: &Query) -> bool {
    a.user == b.user && a.timestamp == b.timestamp && a.history == b.history
}

/// Negatives for every sample that carries a temporal term, empty otherwise.
pub fn negatives_for<R: Rng, S: Borrow<Sample>>(
    rng: &mut R,
    vocab: &Vocab,
    batch: &[S],
    cfg: &TrainConfig,
) -> Vec<Vec<TargetItem>> {
    batch
        .iter()
        .map(|s| {
            let s = s.borrow();
            if s.label == 1 && !s.query.history.is_empty() && cfg.alpha > 0.0 {
                draw_negatives(rng, vocab, s.query.item, cfg.negatives)
            } else {
                Vec::new()
            }
        })
        .collect()
}

/// `Σ CE + α Σ temporal NLL + ρ‖θ‖²` over `batch` with fixed negatives,
/// evaluated against `params`. Gradients are accumulated into `grads` when
/// given. Consecutive samples sharing a query context go through one graph.
pub fn batch_objective<S: Borrow<Sample>>(
    model: &Coupa,
    params: &ParamStore,
    batch: &[S],
    negatives: &[Vec<TargetItem>],
    cfg: &TrainConfig,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("batch must not be empty"));
    }
    assert_eq!(batch.len(), negatives.len(), "one negative list per sample");
    let mut total = 0.0;
    let mut start = 0;
    while start < batch.len() {
        let head: &Query = &batch[start].borrow().query;
        let len = batch[start..]
            .iter()
            .take_while(|s| shares_context(&Borrow::<Sample>::borrow(*s).query, head))
            .count();
        let group: Vec<&Sample> = batch[start..start + len].iter().map(Borrow::borrow).collect();
        let negs: Vec<&[TargetItem]> = negatives[start..start + len].iter().map(Vec::as_slice).collect();
        let mut g = Graph::new(params);
        let out = model.group_objective(&mut g, &group, &negs, cfg.alpha)?;
        total += g.value(out).item();
        if let Some(gr) = grads.as_deref_mut() {
            g.backward(out, gr)?;
        }
        start += len;
    }
    let l2 = match grads {
        Some(gr) => gr.add_l2(params, cfg.l2),
        None => cfg.l2 * params.iter().map(|(_, p)| p.value.sum_squares()).sum::<f64>(),
    };
    Ok(total + l2)
}

/// Joint loss of a batch with negatives drawn from `rng`.
pub fn joint_loss<R: Rng>(model: &Coupa, batch: &[Sample], cfg: &TrainConfig, rng: &mut R) -> Result<f64> {
    let negs = negatives_for(rng, model.vocab(), batch, cfg);
    batch_objective(model, model.params(), batch, &negs, cfg, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample objective over the epoch; `None` before training.
    pub train_loss: Option<f64>,
    pub validation_gauc: Option<f64>,
}

fn validation_gauc(model: &Coupa, data: &DatasetSplit) -> Result<Option<f64>> {
    if data.validation.is_empty() {
        return Ok(None);
    }
    let scores = score_samples(model, &data.validation, ScoreMode::Logged)?;
    Ok(gauc(&scores).ok())
}

/// Runs of consecutive samples that share user, time and history.
fn context_groups(samples: &[Sample]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || !shares_context(&samples[i].query, &samples[start].query) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Adam over shuffled mini-batches of `data.train`. `on_epoch` sees the
/// record and model after every epoch, starting with the untrained epoch 0.
pub fn train<F>(model: &mut Coupa, data: &DatasetSplit, cfg: &TrainConfig, mut on_epoch: F) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&EpochRecord, &Coupa) -> Result<()>,
{
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(cfg.adam(), model.params());
    let mut grads = model.params().zero_gradients();
    let groups = context_groups(&data.train);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);

    let start = EpochRecord {
        epoch: 0,
        train_loss: None,
        validation_gauc: validation_gauc(model, data)?,
    };
    on_epoch(&start, model)?;
    trace.push(start);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let (mut cursor, mut b) = (0, 0);
        while cursor < order.len() {
            // whole groups, at least `batch_size` samples unless the epoch runs out
            let mut batch: Vec<&Sample> = Vec::with_capacity(cfg.batch_size);
            while cursor < order.len() && batch.len() < cfg.batch_size {
                batch.extend(&data.train[groups[order[cursor]].clone()]);
                cursor += 1;
            }
            let negs = negatives_for(&mut rng, model.vocab(), &batch, cfg);
            grads.clear();
            let fault = |e: Error| match e {
                Error::NumericFault { .. } => Error::NonFiniteLoss { epoch, batch: b },
                other => other,
            };
            let loss = batch_objective(model, model.params(), &batch, &negs, cfg, Some(&mut grads)).map_err(fault)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.update(model.params_mut(), &grads)?;
            sum += loss;
            b += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: Some(sum / data.train.len() as f64),
            validation_gauc: validation_gauc(model, data)?,
        };
        on_epoch(&rec, model)?;
        trace.push(rec);
    }
    Ok(trace)
}

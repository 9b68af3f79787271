//! Deterministic simulation of online serving.
//!
//! Click events live in three tiers with different retention windows and
//! visibility delays. A request fuses the user's visible history from all
//! tiers, ranks channel candidates without content features, fetches content
//! candidates for the top `M` channels only, ranks those contents, and
//! reorders the selected channels by their best content.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::TargetItem;
use crate::data::{Behavior, BehaviorSequence, CategoryId, Event, ItemId, Query, Tier, Timestamp, UserId, DAY};
use crate::error::{Error, Result};
use crate::model::Coupa;

/// Item id used for channel-level scoring, mapped to the unknown-item slot.
pub const NO_CONTENT: ItemId = ItemId::MAX;
pub const DEFAULT_TOP_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierPolicy {
    /// Oldest visible age in seconds.
    pub window: i64,
    /// Youngest visible age in seconds.
    pub latency: i64,
}

impl TierPolicy {
    pub fn visible(&self, event_time: Timestamp, now: Timestamp) -> bool {
        let age = now - event_time;
        age >= self.latency && age <= self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierPolicies {
    pub batch: TierPolicy,
    pub streaming: TierPolicy,
    pub edge: TierPolicy,
}

impl Default for TierPolicies {
    fn default() -> Self {
        Self {
            batch: TierPolicy {
                window: 90 * DAY,
                latency: DAY,
            },
            streaming: TierPolicy {
                window: 2 * DAY,
                latency: 30,
            },
            edge: TierPolicy {
                window: 3 * 3600,
                latency: 2,
            },
        }
    }
}

impl TierPolicies {
    pub fn get(&self, tier: Tier) -> TierPolicy {
        match tier {
            Tier::Batch => self.batch,
            Tier::Streaming => self.streaming,
            Tier::Edge => self.edge,
        }
    }
}

fn tier_index(tier: Tier) -> usize {
    match tier {
        Tier::Batch => 0,
        Tier::Streaming => 1,
        Tier::Edge => 2,
    }
}

/// Per-tier click stores, each kept per user in `(timestamp, item)` order.
#[derive(Debug, Clone, Default)]
pub struct TierStore {
    policies: TierPolicies,
    tiers: [BTreeMap<UserId, Vec<Behavior>>; 3],
}

impl TierStore {
    pub fn new(policies: TierPolicies) -> Self {
        Self {
            policies,
            tiers: Default::default(),
        }
    }

    pub fn policies(&self) -> &TierPolicies {
        &self.policies
    }

    /// Adds one click to one tier.
    pub fn insert(&mut self, tier: Tier, user: UserId, behavior: Behavior) {
        let list = self.tiers[tier_index(tier)].entry(user).or_default();
        let at = list.partition_point(|b| (b.timestamp, b.item) <= (behavior.timestamp, behavior.item));
        list.insert(at, behavior);
    }

    /// Loads the clicks of a log. An edge event is also written to the
    /// streaming and batch tiers, a streaming event to the batch tier.
    pub fn from_events(events: &[Event], policies: TierPolicies) -> Self {
        let mut store = Self::new(policies);
        for e in events.iter().filter(|e| e.is_click()) {
            let tiers: &[Tier] = match e.tier {
                Tier::Edge => &Tier::ALL,
                Tier::Streaming => &[Tier::Batch, Tier::Streaming],
                Tier::Batch => &[Tier::Batch],
            };
            for &t in tiers {
                store.insert(t, e.user, e.behavior());
            }
        }
        store
    }

    pub fn tier(&self, tier: Tier, user: UserId) -> &[Behavior] {
        self.tiers[tier_index(tier)].get(&user).map_or(&[], Vec::as_slice)
    }

    /// Events of `user` in `tier` visible at `now`.
    pub fn visible(&self, tier: Tier, user: UserId, now: Timestamp) -> Vec<Behavior> {
        let policy = self.policies.get(tier);
        self.tier(tier, user)
            .iter()
            .filter(|b| policy.visible(b.timestamp, now))
            .copied()
            .collect()
    }
}

/// Chronological merge keeping the first copy of each `(item, timestamp)`.
pub fn fuse(sources: &[&[Behavior]]) -> BehaviorSequence {
    let mut all: Vec<Behavior> = sources.iter().flat_map(|s| s.iter().copied()).collect();
    all.sort_by_key(|b| (b.timestamp, b.item));
    all.dedup_by_key(|b| (b.timestamp, b.item));
    BehaviorSequence::new(all)
}

/// The user's history as visible at `now`, fused across tiers.
pub fn fuse_sequences(store: &TierStore, user: UserId, now: Timestamp) -> BehaviorSequence {
    let parts: Vec<Vec<Behavior>> = Tier::ALL.iter().map(|&t| store.visible(t, user, now)).collect();
    let refs: Vec<&[Behavior]> = parts.iter().map(Vec::as_slice).collect();
    fuse(&refs)
}

/// Anything that scores `(item, category)` targets for one user at one time.
pub trait Scorer {
    fn score(&self, user: UserId, now: Timestamp, history: &BehaviorSequence, targets: &[TargetItem]) -> Result<Vec<f64>>;
}

impl Scorer for Coupa {
    fn score(&self, user: UserId, now: Timestamp, history: &BehaviorSequence, targets: &[TargetItem]) -> Result<Vec<f64>> {
        let Some(first) = targets.first() else {
            return Ok(Vec::new());
        };
        let q = Query {
            user,
            item: first.item,
            category: first.category,
            timestamp: now,
            history: history.clone(),
        };
        self.predict_targets(&q, targets)
    }
}

/// Supplies content candidates for a channel on demand.
pub trait ContentSource {
    fn contents(&mut self, channel: CategoryId) -> Vec<ItemId>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeRequest {
    pub user: UserId,
    pub timestamp: Timestamp,
    pub channels: Vec<CategoryId>,
    pub contents: BTreeMap<CategoryId, Vec<ItemId>>,
}

impl ServeRequest {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::contract("request has no channel candidates"));
        }
        Ok(())
    }

    /// Tab-separated `user  timestamp  ch1,ch2  ch1=i1,i2;ch2=i3`.
    pub fn to_line(&self) -> String {
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        let contents: Vec<String> = self
            .contents
            .iter()
            .map(|(c, items)| {
                let items: Vec<String> = items.iter().map(|i| i.to_string()).collect();
                format!("{c}={}", items.join(","))
            })
            .collect();
        format!("{}\t{}\t{}\t{}", self.user, self.timestamp, channels.join(","), contents.join(";"))
    }
}

impl FromStr for ServeRequest {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(format!("expected 4 fields, found {}", f.len()));
        }
        let num = |s: &str, what: &str| s.trim().parse::<u32>().map_err(|_| format!("invalid {what} {s:?}"));
        let list = |s: &str, what: &str| -> std::result::Result<Vec<u32>, String> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(|x| num(x, what)).collect()
        };
        let mut contents = BTreeMap::new();
        if !f[3].is_empty() {
            for part in f[3].split(';') {
                let (c, items) = part.split_once('=').ok_or_else(|| format!("malformed content list {part:?}"))?;
                contents.insert(num(c, "channel")?, list(items, "content")?);
            }
        }
        Ok(Self {
            user: num(f[0], "user")?,
            timestamp: f[1].parse().map_err(|_| format!("invalid timestamp {:?}", f[1]))?,
            channels: list(f[2], "channel")?,
            contents,
        })
    }
}

/// Serves content lists straight from a request.
impl ContentSource for BTreeMap<CategoryId, Vec<ItemId>> {
    fn contents(&mut self, channel: CategoryId) -> Vec<ItemId> {
        self.get(&channel).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: CategoryId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentScore {
    pub item: ItemId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChannel {
    pub channel: CategoryId,
    pub score: f64,
    pub contents: Vec<ContentScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub user: UserId,
    pub timestamp: Timestamp,
    pub channels: Vec<RankedChannel>,
}

/// How a channel's content scores become its stage-two key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelAggregate {
    #[default]
    Max,
    Mean,
}

impl ChannelAggregate {
    fn apply(self, scores: &[ContentScore]) -> Option<f64> {
        if scores.is_empty() {
            return None;
        }
        Some(match self {
            ChannelAggregate::Max => scores.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max),
            ChannelAggregate::Mean => scores.iter().map(|c| c.score).sum::<f64>() / scores.len() as f64,
        })
    }
}

impl FromStr for ChannelAggregate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(ChannelAggregate::Max),
            "mean" => Ok(ChannelAggregate::Mean),
            other => Err(format!("unknown aggregate {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub top_channels: usize,
    pub aggregate: ChannelAggregate,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            top_channels: DEFAULT_TOP_CHANNELS,
            aggregate: ChannelAggregate::Max,
        }
    }
}

/// Descending score, ascending id on ties.
fn rank_desc<T>(v: &mut [(u32, f64, T)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Scores each distinct channel with the unknown-item slot and keeps the
/// best `top`.
pub fn stage1_rank<S: Scorer + ?Sized>(
    scorer: &S,
    request: &ServeRequest,
    history: &BehaviorSequence,
    top: usize,
) -> Result<Vec<ChannelScore>> {
    request.validate()?;
    let channels: Vec<CategoryId> = request.channels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let targets: Vec<TargetItem> = channels
        .iter()
        .map(|&c| TargetItem {
            item: NO_CONTENT,
            category: c,
        })
        .collect();
    let scores = scorer.score(request.user, request.timestamp, history, &targets)?;
    let mut ranked: Vec<(u32, f64, ())> = channels.into_iter().zip(scores).map(|(c, s)| (c, s, ())).collect();
    rank_desc(&mut ranked);
    ranked.truncate(top);
    Ok(ranked
        .into_iter()
        .map(|(channel, score, _)| ChannelScore { channel, score })
        .collect())
}

/// Ranks the contents of each selected channel, then reorders channels by
/// their aggregated content score. A channel without contents keeps its
/// stage-one score.
pub fn stage2_rank<S: Scorer + ?Sized, C: ContentSource + ?Sized>(
    scorer: &S,
    request: &ServeRequest,
    history: &BehaviorSequence,
    selected: &[ChannelScore],
    source: &mut C,
    aggregate: ChannelAggregate,
) -> Result<RankedResult> {
    let mut rows = Vec::with_capacity(selected.len());
    for ch in selected {
        let items: Vec<ItemId> = source.contents(ch.channel).into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let targets: Vec<TargetItem> = items
            .iter()
            .map(|&item| TargetItem {
                item,
                category: ch.channel,
            })
            .collect();
        let scores = scorer.score(request.user, request.timestamp, history, &targets)?;
        let mut contents: Vec<(u32, f64, ())> = items.into_iter().zip(scores).map(|(i, s)| (i, s, ())).collect();
        rank_desc(&mut contents);
        let contents: Vec<ContentScore> = contents
            .into_iter()
            .map(|(item, score, _)| ContentScore { item, score })
            .collect();
        let key = aggregate.apply(&contents).unwrap_or(ch.score);
        rows.push((ch.channel, key, contents));
    }
    rank_desc(&mut rows);
    Ok(RankedResult {
        user: request.user,
        timestamp: request.timestamp,
        channels: rows
            .into_iter()
            .map(|(channel, score, contents)| RankedChannel {
                channel,
                score,
                contents,
            })
            .collect(),
    })
}

/// Full request: fuse, stage one, fetch contents for the winners, stage two.
pub fn serve<S: Scorer + ?Sized, C: ContentSource + ?Sized>(
    scorer: &S,
    store: &TierStore,
    request: &ServeRequest,
    source: &mut C,
    config: &ServeConfig,
) -> Result<RankedResult> {
    let history = fuse_sequences(store, request.user, request.timestamp);
    let selected = stage1_rank(scorer, request, &history, config.top_channels)?;
    stage2_rank(scorer, request, &history, &selected, source, config.aggregate)
}

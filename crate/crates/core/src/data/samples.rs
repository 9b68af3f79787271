use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{Behavior, BehaviorSequence, CategoryId, Event, ItemId, Timestamp, UserId};
use crate::error::{Error, Result};

pub const DAY: i64 = 86_400;

/// Id-space sizes plus the item → category catalogue. Ids at or beyond a
/// size map to the reserved out-of-vocabulary slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: u32,
    pub items: u32,
    pub categories: u32,
    pub item_category: Vec<CategoryId>,
}

impl Vocab {
    pub fn from_events(events: &[Event]) -> Self {
        let users = events.iter().map(|e| e.user + 1).max().unwrap_or(0);
        let items = events.iter().map(|e| e.item + 1).max().unwrap_or(0);
        let categories = events.iter().map(|e| e.category + 1).max().unwrap_or(0);
        let mut item_category = vec![0; items as usize];
        for e in events {
            item_category[e.item as usize] = e.category;
        }
        Self {
            users,
            items,
            categories,
            item_category,
        }
    }

    pub fn user_slot(&self, u: UserId) -> usize {
        u.min(self.users) as usize
    }

    pub fn item_slot(&self, v: ItemId) -> usize {
        v.min(self.items) as usize
    }

    pub fn category_slot(&self, c: CategoryId) -> usize {
        c.min(self.categories) as usize
    }

    pub fn category_of(&self, v: ItemId) -> Option<CategoryId> {
        self.item_category.get(v as usize).copied()
    }
}

/// Everything needed to score one (user, item, time) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub user: UserId,
    pub item: ItemId,
    pub category: CategoryId,
    pub timestamp: Timestamp,
    /// Most recent clicks strictly before `timestamp`, oldest first.
    pub history: BehaviorSequence,
}

impl Query {
    /// Seconds since the user's most recent prior click.
    pub fn elapsed(&self) -> Option<f64> {
        self.history.last().map(|b| (self.timestamp - b.timestamp) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.history.events().iter().find(|b| b.timestamp >= self.timestamp) {
            return Err(Error::contract(format!(
                "history event at {} does not precede query time {}",
                b.timestamp, self.timestamp
            )));
        }
        Ok(())
    }
}

/// A logged exposure at a display position with its click label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub query: Query,
    pub position: u32,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    /// Users need strictly more clicks than this to be kept.
    pub min_behaviors: usize,
    pub negatives_per_positive: usize,
    pub max_history: usize,
    /// Length of the sampling window at the end of the log.
    pub window_days: i64,
    /// Trailing days of the window used for testing.
    pub test_days: i64,
    /// Share of training samples carved out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            min_behaviors: 10,
            negatives_per_positive: 6,
            max_history: 50,
            window_days: 7,
            test_days: 1,
            validation_fraction: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: Vocab,
}

impl DatasetSplit {
    pub fn empty(vocab: Vocab) -> Self {
        Self {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Day-aligned sampling window `[start, end)` covering the last
/// `window_days` days of the log.
pub fn sampling_window(events: &[Event], window_days: i64) -> Option<(Timestamp, Timestamp)> {
    let last = events.iter().map(|e| e.timestamp).max()?;
    let end = (last.div_euclid(DAY) + 1) * DAY;
    Some((end - window_days * DAY, end))
}

/// Turns an event log into train/validation/test samples.
///
/// Users with at most `min_behaviors` clicks are dropped. Every exposure in
/// the window becomes a candidate sample with the user's most recent prior
/// clicks attached; per user and day, negatives are subsampled to
/// `negatives_per_positive` per positive. The final `test_days` days form the
/// test split, and a seeded share of the rest is held out for validation.
pub fn build_samples(events: &[Event], protocol: &Protocol) -> Result<DatasetSplit> {
    let vocab = Vocab::from_events(events);
    let (start, end) = sampling_window(events, protocol.window_days).ok_or(Error::EmptyDataset)?;
    let test_start = end - protocol.test_days * DAY;

    let mut by_user: BTreeMap<UserId, Vec<Event>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user).or_default().push(*e);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&user, evs) in by_user.iter_mut() {
        evs.sort_by_key(|e| (e.timestamp, e.item, e.position, e.label));
        let clicks: Vec<Behavior> = evs.iter().filter(|e| e.is_click()).map(Event::behavior).collect();
        if clicks.len() <= protocol.min_behaviors {
            continue;
        }
        let mut days: BTreeMap<i64, (Vec<&Event>, Vec<&Event>)> = BTreeMap::new();
        for e in evs.iter().filter(|e| e.timestamp >= start && e.timestamp < end) {
            let slot = days.entry(e.timestamp.div_euclid(DAY)).or_default();
            if e.is_click() {
                slot.0.push(e);
            } else {
                slot.1.push(e);
            }
        }
        for (_, (pos, mut neg)) in days {
            let keep = (pos.len() * protocol.negatives_per_positive).min(neg.len());
            neg.shuffle(&mut rng);
            neg.truncate(keep);
            let mut chosen: Vec<&Event> = pos.into_iter().chain(neg).collect();
            chosen.sort_by_key(|e| (e.timestamp, e.item, e.position, e.label));
            for e in chosen {
                let sample = make_sample(user, e, &clicks, protocol.max_history);
                if e.timestamp >= test_start {
                    test.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let n_val = ((train.len() as f64) * protocol.validation_fraction).round() as usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut is_val = vec![false; train.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (validation, train): (Vec<_>, Vec<_>) = train.into_iter().zip(is_val).partition(|(_, v)| *v);
    Ok(DatasetSplit {
        train: train.into_iter().map(|(s, _)| s).collect(),
        validation: validation.into_iter().map(|(s, _)| s).collect(),
        test,
        vocab,
    })
}

fn make_sample(user: UserId, e: &Event, clicks: &[Behavior], max_history: usize) -> Sample {
    let end = clicks.partition_point(|b| b.timestamp < e.timestamp);
    let begin = end.saturating_sub(max_history);
    Sample {
        query: Query {
            user,
            item: e.item,
            category: e.category,
            timestamp: e.timestamp,
            history: BehaviorSequence::from_sorted(clicks[begin..end].to_vec()),
        },
        position: e.position,
        label: e.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Tier;

    fn ev(user: UserId, item: ItemId, ts: Timestamp, label: u8) -> Event {
        Event {
            user,
            item,
            category: item % 3,
            timestamp: ts,
            position: 0,
            label,
            tier: Tier::Batch,
        }
    }

    /// User 0 has 12 prior clicks; user 1 only 5. On the last day user 0 has
    /// one click and 60 exposures.
    fn log() -> Vec<Event> {
        let mut events = Vec::new();
        for i in 0..12 {
            events.push(ev(0, i, i as i64 * 1000, 1));
        }
        for i in 0..5 {
            events.push(ev(1, i, i as i64 * 1000, 1));
        }
        let day = 10 * DAY;
        events.push(ev(0, 3, day + 500, 1));
        for i in 0..60 {
            events.push(ev(0, 20 + i, day + 600 + i as i64, 0));
        }
        events.push(ev(1, 4, day + 500, 1));
        events
    }

    #[test]
    fn behavior_filter_drops_sparse_users() {
        let split = build_samples(&log(), &Protocol::default()).unwrap();
        let all = split.train.iter().chain(&split.validation).chain(&split.test);
        assert!(all.clone().all(|s| s.query.user == 0));
    }

    #[test]
    fn negatives_are_subsampled_to_ratio() {
        let split = build_samples(&log(), &Protocol::default()).unwrap();
        let pos = split.test.iter().filter(|s| s.label == 1).count();
        let neg = split.test.iter().filter(|s| s.label == 0).count();
        assert_eq!((pos, neg), (1, 6));
    }

    #[test]
    fn histories_precede_samples() {
        let split = build_samples(&log(), &Protocol::default()).unwrap();
        for s in split.test.iter().chain(&split.train) {
            s.query.validate().unwrap();
            assert!(s.query.history.len() <= 50);
        }
        let pos = split.test.iter().find(|s| s.label == 1).unwrap();
        assert_eq!(pos.query.history.len(), 12);
    }

    #[test]
    fn empty_after_filter_is_an_error() {
        let events: Vec<Event> = (0..5).map(|i| ev(0, i, i as i64, 1)).collect();
        assert!(matches!(build_samples(&events, &Protocol::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn oov_slots() {
        let vocab = Vocab::from_events(&log());
        assert_eq!(vocab.item_slot(u32::MAX), vocab.items as usize);
        assert_eq!(vocab.user_slot(0), 0);
    }
}

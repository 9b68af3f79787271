use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub type UserId = u32;
pub type ItemId = u32;
pub type CategoryId = u32;
/// Epoch seconds.
pub type Timestamp = i64;

/// Storage tier an event originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Batch,
    Streaming,
    Edge,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Batch, Tier::Streaming, Tier::Edge];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Batch => "batch",
            Tier::Streaming => "streaming",
            Tier::Edge => "edge",
        }
    }

    /// Tier by age relative to the end of the log: under 3 hours is edge,
    /// under 2 days streaming, older is batch.
    pub fn for_age(age_seconds: i64) -> Tier {
        if age_seconds < 3 * 3600 {
            Tier::Edge
        } else if age_seconds < 2 * 86_400 {
            Tier::Streaming
        } else {
            Tier::Batch
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(Tier::Batch),
            "streaming" => Ok(Tier::Streaming),
            "edge" => Ok(Tier::Edge),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

/// One logged interaction: an exposure at a display position, clicked or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub user: UserId,
    pub item: ItemId,
    pub category: CategoryId,
    pub timestamp: Timestamp,
    pub position: u32,
    pub label: u8,
    pub tier: Tier,
}

impl Event {
    pub fn is_click(&self) -> bool {
        self.label == 1
    }

    pub fn behavior(&self) -> Behavior {
        Behavior {
            item: self.item,
            category: self.category,
            timestamp: self.timestamp,
            position: self.position,
        }
    }
}

/// One past click in a user's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Behavior {
    pub item: ItemId,
    pub category: CategoryId,
    pub timestamp: Timestamp,
    pub position: u32,
}

/// Chronologically ordered click history of one user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    events: Vec<Behavior>,
}

impl BehaviorSequence {
    /// Sorts by `(timestamp, item)`.
    pub fn new(mut events: Vec<Behavior>) -> Self {
        events.sort_by_key(|b| (b.timestamp, b.item));
        Self { events }
    }

    /// Wraps events the caller guarantees are already sorted.
    pub(crate) fn from_sorted(events: Vec<Behavior>) -> Self {
        debug_assert!(events.windows(2).all(|w| (w[0].timestamp, w[0].item) <= (w[1].timestamp, w[1].item)));
        Self { events }
    }

    pub fn events(&self) -> &[Behavior] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last(&self) -> Option<&Behavior> {
        self.events.last()
    }
}

impl From<Vec<Behavior>> for BehaviorSequence {
    fn from(events: Vec<Behavior>) -> Self {
        Self::new(events)
    }
}

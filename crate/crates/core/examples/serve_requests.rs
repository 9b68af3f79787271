//! Replays a few requests through the tier store and the two-stage ranker,
//! printing which channels survived stage one and how many contents were
//! fetched.

use std::collections::BTreeMap;

use coupa::data::{build_samples, generate, CategoryId, GeneratorSpec, ItemId, Protocol, Tier};
use coupa::model::train;
use coupa::serving::{fuse_sequences, serve, ContentSource, ServeConfig, ServeRequest, TierPolicies, TierStore};
use coupa::{Coupa, ModelConfig, TrainConfig};

struct Counting<'a> {
    contents: &'a BTreeMap<CategoryId, Vec<ItemId>>,
    fetches: usize,
}

impl ContentSource for Counting<'_> {
    fn contents(&mut self, channel: CategoryId) -> Vec<ItemId> {
        self.fetches += 1;
        self.contents.get(&channel).cloned().unwrap_or_default()
    }
}

fn main() -> coupa::Result<()> {
    let spec = GeneratorSpec {
        users: 300,
        ..GeneratorSpec::default()
    };
    let log = generate(&spec)?;
    let data = build_samples(&log.events, &Protocol::default())?;
    let mut model = Coupa::new(ModelConfig::default(), data.vocab.clone(), 0)?;
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 1e-3,
        batch_size: 64,
        alpha: 0.01,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg, |_, _| Ok(()))?;

    let store = TierStore::from_events(&log.events, TierPolicies::default());
    let now = spec.end();
    let mut by_category: BTreeMap<CategoryId, Vec<ItemId>> = BTreeMap::new();
    for (v, &c) in log.truth.item_category.iter().enumerate() {
        by_category.entry(c).or_default().push(v as ItemId);
    }
    for user in [0, 1, 2] {
        let sizes: Vec<usize> = Tier::ALL.iter().map(|&t| store.visible(t, user, now).len()).collect();
        let fused = fuse_sequences(&store, user, now);
        println!("user {user}: visible per tier {sizes:?}, fused history {}", fused.len());
        let request = ServeRequest {
            user,
            timestamp: now,
            channels: (0..spec.categories).collect(),
            contents: by_category.iter().map(|(&c, v)| (c, v[..4].to_vec())).collect(),
        };
        let mut source = Counting {
            contents: &request.contents,
            fetches: 0,
        };
        let result = serve(&model, &store, &request, &mut source, &ServeConfig::default())?;
        println!("  {} of {} channels fetched", source.fetches, request.channels.len());
        for ch in &result.channels {
            let best = ch.contents.first().map_or("-".to_string(), |c| format!("item {} ({:.4})", c.item, c.score));
            println!("  channel {:>2}  score {:.4}  best {best}", ch.channel, ch.score);
        }
    }
    println!("request line format: {}", ServeRequest {
        user: 0,
        timestamp: now,
        channels: vec![1, 2],
        contents: BTreeMap::from([(1, vec![11, 21]), (2, vec![2])]),
    }
    .to_line());
    Ok(())
}

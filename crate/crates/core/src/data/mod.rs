//! Event logs, the synthetic generator and sample assembly.

mod event;
mod io;
mod samples;
mod synth;

pub use event::{Behavior, BehaviorSequence, CategoryId, Event, ItemId, Tier, Timestamp, UserId};
pub use io::{read_dataset, read_events, write_dataset, write_events, DATASET_HEADER, EVENT_HEADER};
pub use samples::{build_samples, sampling_window, DatasetSplit, Protocol, Query, Sample, Vocab, DAY};
pub use synth::{
    click_share_by_position, default_position_types, generate, generate_events, interval_histogram, sample_intents,
    CategoryProfile, GeneratorSpec, GroundTruth, PositionProfile, RateShape, SyntheticLog,
};

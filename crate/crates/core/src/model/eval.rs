use serde::{Deserialize, Serialize};

use super::network::Coupa;
use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{MetricReport, ScoredLabel};

/// Position used when scoring logged samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// The position the exposure was logged at.
    #[default]
    Logged,
    /// Position 0, as in serving.
    PositionZero,
}

pub fn score_samples(model: &Coupa, samples: &[Sample], mode: ScoreMode) -> Result<Vec<ScoredLabel>> {
    samples
        .iter()
        .map(|s| {
            let position = match mode {
                ScoreMode::Logged => s.position,
                ScoreMode::PositionZero => 0,
            };
            Ok(ScoredLabel {
                group: s.query.user,
                score: model.probability(&s.query, position)?,
                label: s.label,
            })
        })
        .collect()
}

/// GAUC report over `samples`, grouped by user.
pub fn evaluate(model: &Coupa, samples: &[Sample], mode: ScoreMode) -> Result<MetricReport> {
    MetricReport::from_scores(&score_samples(model, samples, mode)?)
}

//! AUC, group-weighted AUC and relative improvement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub group: u32,
    pub score: f64,
    pub label: u8,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` if either class is missing.
///
/// Sorts once and counts, per distinct score, the negatives strictly below
/// it; equivalent to comparing every positive–negative pair.
pub fn auc(items: &[ScoredLabel]) -> Option<f64> {
    let mut sorted: Vec<(f64, u8)> = items.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = sorted.iter().filter(|s| s.1 == 1).count();
    let negatives = sorted.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos_tie, mut neg_tie) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 == 1 {
                pos_tie += 1;
            } else {
                neg_tie += 1;
            }
            j += 1;
        }
        wins += pos_tie as f64 * (neg_below as f64 + 0.5 * neg_tie as f64);
        neg_below += neg_tie;
        i = j;
    }
    Some(wins / (positives as f64 * negatives as f64))
}

/// AUC of one group with its weight (sample count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAuc {
    pub group: u32,
    pub auc: f64,
    pub weight: usize,
}

/// Per-group AUCs for every group that has both classes.
pub fn group_aucs(items: &[ScoredLabel]) -> Vec<GroupAuc> {
    let mut groups: BTreeMap<u32, Vec<ScoredLabel>> = BTreeMap::new();
    for s in items {
        groups.entry(s.group).or_default().push(*s);
    }
    groups
        .into_iter()
        .filter_map(|(group, rows)| {
            auc(&rows).map(|a| GroupAuc {
                group,
                auc: a,
                weight: rows.len(),
            })
        })
        .collect()
}

/// `Σ w_g AUC_g / Σ w_g` over groups with both classes, `w_g` = group size.
pub fn gauc(items: &[ScoredLabel]) -> Result<f64> {
    weighted_mean(&group_aucs(items))
}

fn weighted_mean(groups: &[GroupAuc]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::NoValidGroup);
    }
    let num: f64 = groups.iter().map(|g| g.weight as f64 * g.auc).sum();
    let den: f64 = groups.iter().map(|g| g.weight as f64).sum();
    Ok(num / den)
}

/// `|ours − base| / base × 100`.
pub fn relative_improvement(ours: f64, base: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::contract(format!("baseline GAUC must be positive, got {base}")));
    }
    Ok((ours - base).abs() / base * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub gauc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub auc: Option<f64>,
    pub gauc: f64,
    pub groups: Vec<GroupAuc>,
    pub baseline: Option<Baseline>,
}

impl MetricReport {
    pub fn from_scores(items: &[ScoredLabel]) -> Result<Self> {
        let groups = group_aucs(items);
        Ok(Self {
            samples: items.len(),
            auc: auc(items),
            gauc: weighted_mean(&groups)?,
            groups,
            baseline: None,
        })
    }

    pub fn with_baseline(mut self, name: impl Into<String>, gauc: f64) -> Self {
        self.baseline = Some(Baseline { name: name.into(), gauc });
        self
    }

    pub fn relative_improvement(&self) -> Option<f64> {
        self.baseline
            .as_ref()
            .and_then(|b| relative_improvement(self.gauc, b.gauc).ok())
    }

    /// `key: value` lines followed by a tab-separated per-group table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples);
        match self.auc {
            Some(a) => {
                let _ = writeln!(s, "auc: {a:.6}");
            }
            None => s.push_str("auc: undefined\n"),
        }
        let _ = writeln!(s, "gauc: {:.6}", self.gauc);
        let _ = writeln!(s, "groups: {}", self.groups.len());
        if let Some(b) = &self.baseline {
            let _ = writeln!(s, "baseline: {}", b.name);
            let _ = writeln!(s, "baseline_gauc: {:.6}", b.gauc);
            if let Some(ri) = self.relative_improvement() {
                let _ = writeln!(s, "ri_percent: {ri:.4}");
            }
        }
        s.push_str("\ngroup\tweight\tauc\n");
        for g in &self.groups {
            let _ = writeln!(s, "{}\t{}\t{:.6}", g.group, g.weight, g.auc);
        }
        s
    }
}

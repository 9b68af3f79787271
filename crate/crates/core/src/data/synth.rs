//! Synthetic interaction logs with planted temporal and positional structure.
//!
//! Each user is interested in a few categories. For every (user, category)
//! pair, purchase intents arrive as a renewal process whose hazard depends on
//! the time since the previous intent in that category, sampled exactly by
//! thinning. An intent opens a session that shows `K + 1` items at random (or
//! promotion-biased) positions: the intended item plus fillers. Clicks are
//! drawn from the user's position profile, so users differ in how strongly
//! they favour the top of the list.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{CategoryId, Event, ItemId, Tier, Timestamp, UserId};
use super::samples::DAY;
use crate::error::{Error, Result};

const HOUR: f64 = 3600.0;

/// Hazard added on top of the base rate as a function of the time since the
/// previous intent (rates per hour, times in hours).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateShape {
    /// Gaussian bumps at every multiple of 24h, amplified at multiples of
    /// 168h.
    Periodic {
        daily_peak: f64,
        weekly_boost: f64,
        width_hours: f64,
    },
    /// Rises to a peak at `peak_hours`, then decays exponentially.
    Decay {
        peak: f64,
        peak_hours: f64,
        decay_hours: f64,
        width_hours: f64,
    },
}

impl RateShape {
    pub fn excitation(&self, hours: f64) -> f64 {
        match *self {
            RateShape::Periodic {
                daily_peak,
                weekly_boost,
                width_hours,
            } => {
                let n = (hours / 24.0).round();
                if n < 1.0 {
                    return 0.0;
                }
                let amp = if n as i64 % 7 == 0 { daily_peak * weekly_boost } else { daily_peak };
                let x = (hours - 24.0 * n) / width_hours;
                amp * (-0.5 * x * x).exp()
            }
            RateShape::Decay {
                peak,
                peak_hours,
                decay_hours,
                width_hours,
            } => {
                if hours < peak_hours {
                    let x = (hours - peak_hours) / width_hours;
                    peak * (-0.5 * x * x).exp()
                } else {
                    peak * (-(hours - peak_hours) / decay_hours).exp()
                }
            }
        }
    }

    pub fn max_excitation(&self) -> f64 {
        match *self {
            RateShape::Periodic {
                daily_peak, weekly_boost, ..
            } => daily_peak * weekly_boost.max(1.0),
            RateShape::Decay { peak, .. } => peak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    /// Background intents per hour.
    pub base_rate: f64,
    pub shape: RateShape,
}

impl CategoryProfile {
    /// Hazard per hour `hours` after the previous intent.
    pub fn hazard(&self, hours: f64) -> f64 {
        self.base_rate + self.shape.excitation(hours)
    }
}

/// A population segment and its click probability at each position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionProfile {
    pub name: String,
    pub fraction: f64,
    pub click_by_position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub users: u32,
    pub items: u32,
    pub categories: u32,
    pub max_position: u32,
    /// Days of the sampling window; full sessions are logged only here.
    pub window_days: i64,
    /// Days before the window where only clicks are logged.
    pub history_days: i64,
    /// Day-aligned epoch second where the log starts.
    pub start: Timestamp,
    pub interests_per_user: usize,
    /// Profiles assigned to categories round-robin.
    pub category_profiles: Vec<CategoryProfile>,
    pub position_types: Vec<PositionProfile>,
    /// Multiplier on every intent rate; zero yields an empty log.
    pub exposure_rate: f64,
    /// Click probability of a filler item relative to the intended item,
    /// before scaling by its quality.
    pub filler_click_rate: f64,
    /// Share of fillers drawn from the user's own interest categories; the
    /// rest come from the whole catalogue.
    pub filler_interest_share: f64,
    /// Browsing sessions per hour inside the sampling window; they show
    /// fillers only.
    pub browse_rate: f64,
    /// Range of the planted per-item quality.
    pub quality_range: (f64, f64),
    /// Strength with which the logging policy moves promoted items to the
    /// top; zero shuffles uniformly.
    pub placement_bias: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            users: 10_000,
            items: 200,
            categories: 10,
            max_position: 9,
            window_days: 7,
            history_days: 49,
            start: 19_675 * DAY,
            interests_per_user: 3,
            category_profiles: vec![
                CategoryProfile {
                    base_rate: 0.002,
                    shape: RateShape::Periodic {
                        daily_peak: 0.25,
                        weekly_boost: 3.0,
                        width_hours: 1.0,
                    },
                },
                CategoryProfile {
                    base_rate: 0.002,
                    shape: RateShape::Decay {
                        peak: 0.06,
                        peak_hours: 24.0,
                        decay_hours: 12.0,
                        width_hours: 4.0,
                    },
                },
            ],
            position_types: default_position_types(10),
            exposure_rate: 1.0,
            filler_click_rate: 0.05,
            filler_interest_share: 0.5,
            browse_rate: 0.125,
            quality_range: (0.2, 1.0),
            placement_bias: 0.0,
            seed: 42,
        }
    }
}

/// Type 1 clicks mostly at the top, type 2 favours positions 2 and 3, type 3
/// hardly cares about position.
pub fn default_position_types(positions: usize) -> Vec<PositionProfile> {
    let type2 = [0.35, 0.45, 0.9, 0.85, 0.5, 0.35, 0.3, 0.25, 0.2, 0.2];
    vec![
        PositionProfile {
            name: "type1".into(),
            fraction: 0.6,
            click_by_position: (0..positions).map(|k| 0.9 * 0.7f64.powi(k as i32)).collect(),
        },
        PositionProfile {
            name: "type2".into(),
            fraction: 0.2,
            click_by_position: (0..positions).map(|k| type2[k.min(type2.len() - 1)]).collect(),
        },
        PositionProfile {
            name: "type3".into(),
            fraction: 0.2,
            click_by_position: vec![0.5; positions],
        },
    ]
}

impl GeneratorSpec {
    pub fn positions(&self) -> usize {
        self.max_position as usize + 1
    }

    pub fn end(&self) -> Timestamp {
        self.start + (self.history_days + self.window_days) * DAY
    }

    pub fn window_start(&self) -> Timestamp {
        self.start + self.history_days * DAY
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.items == 0 || self.categories == 0 || self.categories > self.items {
            return bad("need at least one item per category");
        }
        if (self.items as usize) < self.positions() {
            return bad("a session needs max_position + 1 distinct items");
        }
        if self.interests_per_user == 0 || self.interests_per_user > self.categories as usize {
            return bad("interests_per_user must lie in 1..=categories");
        }
        if self.category_profiles.is_empty() {
            return bad("at least one category profile is required");
        }
        for p in &self.category_profiles {
            let ok = p.base_rate > 0.0
                && match p.shape {
                    RateShape::Periodic {
                        daily_peak,
                        weekly_boost,
                        width_hours,
                    } => daily_peak > 0.0 && weekly_boost > 0.0 && width_hours > 0.0,
                    RateShape::Decay {
                        peak,
                        peak_hours,
                        decay_hours,
                        width_hours,
                    } => peak > 0.0 && peak_hours > 0.0 && decay_hours > 0.0 && width_hours > 0.0,
                };
            if !ok {
                return bad("category rates must be positive");
            }
        }
        let total: f64 = self.position_types.iter().map(|t| t.fraction).sum();
        if self.position_types.is_empty() || (total - 1.0).abs() > 1e-9 {
            return bad("position-type fractions must sum to 1");
        }
        for t in &self.position_types {
            if t.fraction < 0.0
                || t.click_by_position.len() != self.positions()
                || t.click_by_position.iter().any(|p| !(0.0..=1.0).contains(p))
            {
                return bad("position profiles need one probability in [0, 1] per position");
            }
        }
        let (lo, hi) = self.quality_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("quality_range must lie within [0, 1]");
        }
        if !(self.exposure_rate >= 0.0) || !(self.filler_click_rate >= 0.0) || !(self.placement_bias >= 0.0)
            || !(self.browse_rate >= 0.0)
        {
            return bad("rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.filler_interest_share) {
            return bad("filler_interest_share must lie within [0, 1]");
        }
        if self.window_days <= 0 || self.history_days < 0 || self.start < 0 || self.start % DAY != 0 {
            return bad("window must be positive and start day-aligned");
        }
        Ok(())
    }

    pub fn category_profile(&self, c: CategoryId) -> &CategoryProfile {
        &self.category_profiles[c as usize % self.category_profiles.len()]
    }
}

/// What the generator planted, for comparison against learned behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub item_category: Vec<CategoryId>,
    pub item_quality: Vec<f64>,
    pub item_promotion: Vec<f64>,
    /// Index into `GeneratorSpec::position_types` per user.
    pub user_type: Vec<usize>,
    pub user_interests: Vec<Vec<CategoryId>>,
    /// Intent timestamps by (user, category), for interval histograms.
    pub intents: Vec<(UserId, CategoryId, Timestamp)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLog {
    pub events: Vec<Event>,
    pub truth: GroundTruth,
}

/// Event log only; see [`generate`] for the ground truth as well.
pub fn generate_events(spec: &GeneratorSpec) -> Result<Vec<Event>> {
    Ok(generate(spec)?.events)
}

/// Draws renewal-process intent times on `[from, to)` by thinning with the
/// global bound `base + max excitation`.
pub fn sample_intents<R: Rng>(
    rng: &mut R,
    profile: &CategoryProfile,
    scale: f64,
    from: f64,
    to: f64,
    mut last: f64,
) -> Vec<f64> {
    let bound = scale * (profile.base_rate + profile.shape.max_excitation()) / HOUR;
    let mut out = Vec::new();
    if !(bound > 0.0) {
        return out;
    }
    let mut t = from;
    loop {
        let u: f64 = rng.gen();
        t -= (1.0 - u).ln() / bound;
        if t >= to {
            return out;
        }
        let rate = scale * profile.hazard((t - last) / HOUR) / HOUR;
        if rng.gen::<f64>() * bound < rate {
            out.push(t);
            last = t;
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<SyntheticLog> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positions = spec.positions();

    let item_category: Vec<CategoryId> = (0..spec.items).map(|v| v % spec.categories).collect();
    let (lo, hi) = spec.quality_range;
    let item_quality: Vec<f64> = (0..spec.items).map(|_| rng.gen_range(lo..=hi)).collect();
    let item_promotion: Vec<f64> = (0..spec.items).map(|_| rng.gen()).collect();
    let mut by_category: Vec<Vec<ItemId>> = vec![Vec::new(); spec.categories as usize];
    for (v, &c) in item_category.iter().enumerate() {
        by_category[c as usize].push(v as ItemId);
    }

    let type_cdf: Vec<f64> = spec
        .position_types
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t.fraction;
            Some(*acc)
        })
        .collect();
    let all_categories: Vec<CategoryId> = (0..spec.categories).collect();

    let start = spec.start as f64;
    let window_start = spec.window_start();
    let end = spec.end();
    let mut events = Vec::new();
    let mut user_type = Vec::with_capacity(spec.users as usize);
    let mut user_interests = Vec::with_capacity(spec.users as usize);
    let mut intents = Vec::new();

    for user in 0..spec.users {
        let u: f64 = rng.gen();
        let ty = type_cdf.iter().position(|&c| u < c).unwrap_or(type_cdf.len() - 1);
        let interests: Vec<CategoryId> = all_categories
            .choose_multiple(&mut rng, spec.interests_per_user)
            .copied()
            .collect();
        let activity = rng.gen_range(0.5..1.5) * spec.exposure_rate;

        // `None` marks a browsing session without a purchase intent
        let mut sessions: Vec<(f64, Option<CategoryId>)> = Vec::new();
        for &c in &interests {
            // random phase so users differ in their habitual hour
            let last = start - rng.gen_range(0.0..24.0) * HOUR;
            for t in sample_intents(&mut rng, spec.category_profile(c), activity, start, end as f64, last) {
                sessions.push((t, Some(c)));
            }
        }
        let browse = activity * spec.browse_rate / HOUR;
        if browse > 0.0 {
            let mut t = window_start as f64;
            loop {
                t -= (1.0 - rng.gen::<f64>()).ln() / browse;
                if t >= end as f64 {
                    break;
                }
                sessions.push((t, None));
            }
        }
        sessions.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let profile = &spec.position_types[ty].click_by_position;
        for (t, intent) in sessions {
            let ts = t.floor() as Timestamp;
            let mut shown = Vec::with_capacity(positions);
            let target = intent.map(|c| {
                intents.push((user, c, ts));
                weighted_choice(&mut rng, &by_category[c as usize], &item_quality)
            });
            shown.extend(target);
            while shown.len() < positions {
                let v = if rng.gen_bool(spec.filler_interest_share) {
                    let ic = interests[rng.gen_range(0..interests.len())];
                    let p = &by_category[ic as usize];
                    p[rng.gen_range(0..p.len())]
                } else {
                    rng.gen_range(0..spec.items)
                };
                if !shown.contains(&v) {
                    shown.push(v);
                }
            }
            place(&mut rng, &mut shown, &item_promotion, spec.placement_bias);
            let in_window = ts >= window_start;
            for (k, &v) in shown.iter().enumerate() {
                let examine = profile[k];
                let p = if Some(v) == target {
                    examine
                } else {
                    (spec.filler_click_rate * item_quality[v as usize] * examine).min(1.0)
                };
                let label = u8::from(rng.gen_bool(p));
                if in_window || label == 1 {
                    events.push(Event {
                        user,
                        item: v,
                        category: item_category[v as usize],
                        timestamp: ts,
                        position: k as u32,
                        label,
                        tier: Tier::for_age(end - ts),
                    });
                }
            }
        }
        user_type.push(ty);
        user_interests.push(interests);
    }

    Ok(SyntheticLog {
        events,
        truth: GroundTruth {
            item_category,
            item_quality,
            item_promotion,
            user_type,
            user_interests,
            intents,
        },
    })
}

fn weighted_choice<R: Rng>(rng: &mut R, pool: &[ItemId], weight: &[f64]) -> ItemId {
    let total: f64 = pool.iter().map(|&v| weight[v as usize]).sum();
    if !(total > 0.0) {
        return pool[rng.gen_range(0..pool.len())];
    }
    let mut x = rng.gen::<f64>() * total;
    for &v in pool {
        x -= weight[v as usize];
        if x < 0.0 {
            return v;
        }
    }
    *pool.last().expect("non-empty pool")
}

/// Orders shown items by `bias · promotion + Gumbel noise`; with zero bias
/// this is a uniform shuffle.
fn place<R: Rng>(rng: &mut R, shown: &mut [ItemId], promotion: &[f64], bias: f64) {
    if bias == 0.0 {
        shown.shuffle(rng);
        return;
    }
    let mut keyed: Vec<(f64, ItemId)> = shown
        .iter()
        .map(|&v| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (bias * promotion[v as usize] - (-u.ln()).ln(), v)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (slot, (_, v)) in shown.iter_mut().zip(keyed) {
        *slot = v;
    }
}

/// Histogram of gaps between consecutive intents of the same (user,
/// category), with one bin per `bin_hours` up to `max_hours`.
pub fn interval_histogram(truth: &GroundTruth, category: CategoryId, bin_hours: f64, max_hours: f64) -> Vec<usize> {
    let bins = (max_hours / bin_hours).ceil() as usize;
    let mut hist = vec![0; bins];
    let mut rows: Vec<(UserId, Timestamp)> = truth
        .intents
        .iter()
        .filter(|(_, c, _)| *c == category)
        .map(|&(u, _, t)| (u, t))
        .collect();
    rows.sort_unstable();
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            let gap = (w[1].1 - w[0].1) as f64 / HOUR;
            let b = (gap / bin_hours) as usize;
            if b < bins {
                hist[b] += 1;
            }
        }
    }
    hist
}

/// Click share by position over the given users' logged exposures.
pub fn click_share_by_position(events: &[Event], positions: usize) -> Vec<f64> {
    let mut clicks = vec![0usize; positions];
    for e in events.iter().filter(|e| e.is_click()) {
        clicks[e.position as usize] += 1;
    }
    let total: usize = clicks.iter().sum();
    clicks.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            users: 50,
            items: 40,
            categories: 4,
            history_days: 10,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn zero_exposure_rate_is_empty() {
        let spec = GeneratorSpec {
            exposure_rate: 0.0,
            ..small()
        };
        assert!(generate_events(&spec).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_events(&small()).unwrap(), generate_events(&small()).unwrap());
        let other = GeneratorSpec { seed: 1, ..small() };
        assert_ne!(generate_events(&small()).unwrap(), generate_events(&other).unwrap());
    }

    #[test]
    fn events_respect_schema() {
        let spec = small();
        for e in generate_events(&spec).unwrap() {
            assert!(e.timestamp >= spec.start && e.timestamp < spec.end());
            assert!(e.position <= spec.max_position);
            assert!(e.label <= 1);
            if e.timestamp < spec.window_start() {
                assert!(e.is_click());
            }
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut spec = small();
        spec.position_types[0].fraction = 0.1;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    fn one_profile(shape: RateShape) -> GeneratorSpec {
        GeneratorSpec {
            users: 200,
            items: 20,
            categories: 1,
            interests_per_user: 1,
            history_days: 120,
            browse_rate: 0.0,
            category_profiles: vec![CategoryProfile { base_rate: 1e-4, shape }],
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn periodic_category_repeats_after_a_day() {
        let mut spec = one_profile(RateShape::Periodic {
            daily_peak: 0.5,
            weekly_boost: 3.0,
            width_hours: 1.0,
        });
        spec.users = 1;
        spec.history_days = 2000;
        let hist = interval_histogram(&generate(&spec).unwrap().truth, 0, 1.0, 200.0);
        let mode = (0..hist.len()).max_by_key(|&b| hist[b]).unwrap();
        assert!(mode == 23 || mode == 24, "mode bin {mode}: {hist:?}");
    }

    #[test]
    fn decaying_category_thins_out_after_a_day() {
        let spec = one_profile(RateShape::Decay {
            peak: 0.06,
            peak_hours: 24.0,
            decay_hours: 12.0,
            width_hours: 4.0,
        });
        let hist = interval_histogram(&generate(&spec).unwrap().truth, 0, 12.0, 96.0);
        assert!(hist[2..].windows(2).all(|w| w[0] >= w[1]) && hist[2] > 4 * hist[4], "{hist:?}");
    }

    #[test]
    fn top_heavy_users_click_less_further_down() {
        let mut spec = small();
        spec.users = 400;
        let mut types = default_position_types(spec.positions());
        types.truncate(1);
        types[0].fraction = 1.0;
        spec.position_types = types;
        let share = click_share_by_position(&generate_events(&spec).unwrap(), spec.positions());
        assert!(share[..4].windows(2).all(|w| w[0] > w[1]), "{share:?}");
    }

    #[test]
    fn negative_browse_rate_is_rejected() {
        let spec = GeneratorSpec {
            browse_rate: -1.0,
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn thinning_matches_constant_rate() {
        // Flat hazard of 2/hour over 1000 hours.
        let profile = CategoryProfile {
            base_rate: 2.0,
            shape: RateShape::Decay {
                peak: 1e-12,
                peak_hours: 1.0,
                decay_hours: 1.0,
                width_hours: 1.0,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = sample_intents(&mut rng, &profile, 1.0, 0.0, 1000.0 * HOUR, 0.0).len() as f64;
        assert!((n - 2000.0).abs() < 4.0 * 2000f64.sqrt());
    }
}

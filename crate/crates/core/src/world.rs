//! Synthetic impression stream with a known click-through rate.
//!
//! The world has a fixed set of publishers and user segments and a growing
//! set of items. The true click logit of an impression is
//!
//! ```text
//! item_latent(hour) + interaction[item][segment] + publisher_bias + hour_bias + active trend shifts
//! ```
//!
//! Item latents follow a Gaussian random walk (one step per simulated hour).
//! New items arrive as a Poisson process and are exposed in proportion to
//! the softmax of a popularity logit, which starts depressed for newborn
//! items and ramps up over `new_item_ramp_hours`. Popularity is independent
//! of CTR. Trend events shift the logit of one item or one segment for a
//! bounded duration.
//!
//! Every random quantity is drawn from its own ChaCha8 stream (see
//! [`crate::rng`]), so a stream over `[t0, t1)` is exactly the matching slice
//! of a longer stream and trend events never change which impressions occur,
//! only their clicks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::logistic;
use crate::rng;

pub const FIELD_NAMES: [&str; N_FIELDS] = ["item", "publisher", "user_segment", "hour_of_day"];
pub const N_FIELDS: usize = 4;
pub const HOUR: u64 = 3600;

pub fn hour_of_day(timestamp: u64) -> u32 {
    ((timestamp / HOUR) % 24) as u32
}

/// One labeled impression. Features follow [`FIELD_NAMES`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub timestamp: u64,
    pub features: [u32; N_FIELDS],
    pub click: bool,
    pub soft_target: Option<f64>,
}

impl Impression {
    pub fn new(timestamp: u64, item: u32, publisher: u32, user_segment: u32, click: bool) -> Self {
        Impression {
            timestamp,
            features: [item, publisher, user_segment, hour_of_day(timestamp)],
            click,
            soft_target: None,
        }
    }

    pub fn item(&self) -> u32 {
        self.features[0]
    }

    pub fn publisher(&self) -> u32 {
        self.features[1]
    }

    pub fn user_segment(&self) -> u32 {
        self.features[2]
    }

    pub fn hour_of_day(&self) -> u32 {
        self.features[3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTarget {
    Item(u32),
    Segment(u32),
}

/// Shifts the click logit of `target` by `logit_shift` during
/// `[time, time + duration)` (seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendEvent {
    pub time: u64,
    pub duration: u64,
    pub target: EventTarget,
    pub logit_shift: f64,
}

impl TrendEvent {
    fn active(&self, ts: u64) -> bool {
        ts >= self.time && ts - self.time < self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_items_initial: u32,
    pub n_publishers: u32,
    pub n_user_segments: u32,
    pub base_ctr: f64,
    /// Spread of item latent logits around `logit(base_ctr)`.
    pub item_logit_sigma: f64,
    pub interaction_sigma: f64,
    pub publisher_sigma: f64,
    pub hour_amplitude: f64,
    pub popularity_sigma: f64,
    pub new_item_popularity_penalty: f64,
    pub new_item_ramp_hours: f64,
    /// Per-hour random-walk step of item latent logits.
    pub drift_sigma: f64,
    /// Expected new-item arrivals per hour.
    pub new_item_rate: f64,
    pub trend_events: Vec<TrendEvent>,
    pub impressions_per_hour: u32,
    /// Relative amplitude of a daily traffic cycle; 0 gives uniform traffic.
    pub diurnal_amplitude: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_items_initial: 200,
            n_publishers: 20,
            n_user_segments: 8,
            base_ctr: 0.05,
            item_logit_sigma: 0.8,
            interaction_sigma: 0.5,
            publisher_sigma: 0.3,
            hour_amplitude: 0.2,
            popularity_sigma: 1.0,
            new_item_popularity_penalty: 1.0,
            new_item_ramp_hours: 12.0,
            drift_sigma: 0.02,
            new_item_rate: 1.0,
            trend_events: Vec::new(),
            impressions_per_hour: 2000,
            diurnal_amplitude: 0.0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("world: {what}")));
        if self.n_items_initial == 0 || self.n_publishers == 0 || self.n_user_segments == 0 {
            return bad("item, publisher and segment counts must be positive");
        }
        if self.impressions_per_hour == 0 {
            return bad("impressions_per_hour must be positive");
        }
        if !(self.base_ctr > 0.0 && self.base_ctr < 1.0) {
            return bad("base_ctr must lie in (0, 1)");
        }
        let nonneg = [
            self.item_logit_sigma,
            self.interaction_sigma,
            self.publisher_sigma,
            self.popularity_sigma,
            self.new_item_popularity_penalty,
            self.new_item_ramp_hours,
            self.drift_sigma,
            self.new_item_rate,
            self.hour_amplitude.abs(),
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("sigmas, rates and ramps must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal_amplitude must lie in [0, 1)");
        }
        if self.trend_events.iter().any(|e| !e.logit_shift.is_finite()) {
            return bad("trend event shifts must be finite");
        }
        Ok(())
    }

    /// Impressions generated in absolute hour `hour`.
    pub fn impressions_in_hour(&self, hour: u64) -> u32 {
        if self.diurnal_amplitude == 0.0 {
            return self.impressions_per_hour;
        }
        let phase = 2.0 * core::f64::consts::PI * ((hour % 24) as f64 - 6.0) / 24.0;
        let n = self.impressions_per_hour as f64 * (1.0 + self.diurnal_amplitude * libm::sin(phase));
        libm::round(n) as u32
    }
}

/// Ground truth of one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemState {
    pub id: u32,
    pub birth_time: u64,
    pub popularity: f64,
    /// Logit offset per user segment.
    pub interactions: Vec<f64>,
    /// Latent logit per simulated hour, starting at the birth hour.
    pub latent: Vec<f64>,
}

impl ItemState {
    fn latent_at(&self, ts: u64) -> f64 {
        let birth_hour = self.birth_time / HOUR;
        let k = (ts / HOUR).saturating_sub(birth_hour) as usize;
        self.latent[k.min(self.latent.len() - 1)]
    }
}

/// Everything needed to compute the true click probability of any
/// impression in the generated range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    /// End (exclusive, seconds) of the range the truth was built for.
    pub horizon: u64,
    pub publisher_bias: Vec<f64>,
    pub hour_bias: Vec<f64>,
    pub items: Vec<ItemState>,
    pub events: Vec<TrendEvent>,
}

impl WorldTruth {
    pub fn item(&self, id: u32) -> Result<&ItemState> {
        self.items.get(id as usize).ok_or_else(|| Error::UnknownEntity(format!("item {id}")))
    }

    pub fn birth_time(&self, id: u32) -> Result<u64> {
        Ok(self.item(id)?.birth_time)
    }

    fn shift(&self, item: u32, segment: u32, ts: u64) -> f64 {
        self.events
            .iter()
            .filter(|e| e.active(ts))
            .filter(|e| match e.target {
                EventTarget::Item(i) => i == item,
                EventTarget::Segment(s) => s == segment,
            })
            .map(|e| e.logit_shift)
            .sum()
    }

    /// True click logit of an impression.
    pub fn true_logit(&self, imp: &Impression) -> Result<f64> {
        let item = self.item(imp.item())?;
        let publisher = self
            .publisher_bias
            .get(imp.publisher() as usize)
            .ok_or_else(|| Error::UnknownEntity(format!("publisher {}", imp.publisher())))?;
        let interaction = item
            .interactions
            .get(imp.user_segment() as usize)
            .ok_or_else(|| Error::UnknownEntity(format!("user segment {}", imp.user_segment())))?;
        Ok(item.latent_at(imp.timestamp)
            + interaction
            + publisher
            + self.hour_bias[hour_of_day(imp.timestamp) as usize]
            + self.shift(imp.item(), imp.user_segment(), imp.timestamp))
    }

    pub fn true_ctr(&self, imp: &Impression) -> Result<f64> {
        Ok(logistic(self.true_logit(imp)?))
    }

    /// Item-level CTR at `ts`: latent logit plus item-targeted trend shifts,
    /// without segment, publisher or hour terms.
    pub fn item_ctr(&self, id: u32, ts: u64) -> Result<f64> {
        let item = self.item(id)?;
        let shift: f64 = self
            .events
            .iter()
            .filter(|e| e.active(ts) && e.target == EventTarget::Item(id))
            .map(|e| e.logit_shift)
            .sum();
        Ok(logistic(item.latent_at(ts) + shift))
    }

    /// `(hour start, item CTR)` for every hour the item is alive.
    pub fn item_trajectory(&self, id: u32) -> Result<Vec<(u64, f64)>> {
        let item = self.item(id)?;
        let first = item.birth_time / HOUR;
        (0..item.latent.len())
            .map(|k| {
                let t = (first + k as u64) * HOUR;
                Ok((t, self.item_ctr(id, t.max(item.birth_time))?))
            })
            .collect()
    }
}

const STRUCTURE_STREAM: u64 = 0;
const ARRIVAL_STREAM: u64 = 1;
const ITEM_STREAM: u64 = 1 << 32;
const WALK_STREAM: u64 = 2 << 32;
const HOUR_STREAM: u64 = 3 << 32;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn build_truth(cfg: &WorldConfig, t1: u64) -> Result<WorldTruth> {
    let mut rng = rng::stream(cfg.seed, STRUCTURE_STREAM);
    let publisher_bias = (0..cfg.n_publishers).map(|_| cfg.publisher_sigma * normal(&mut rng)).collect();
    let hour_bias =
        (0..24).map(|h| cfg.hour_amplitude * libm::sin(2.0 * core::f64::consts::PI * h as f64 / 24.0)).collect();

    let mut births: Vec<u64> = vec![0; cfg.n_items_initial as usize];
    if cfg.new_item_rate > 0.0 {
        let mut rng = rng::stream(cfg.seed, ARRIVAL_STREAM);
        let gap = Exp::new(cfg.new_item_rate).map_err(|e| Error::Config(format!("new_item_rate: {e}")))?;
        let mut hours = 0.0f64;
        loop {
            hours += gap.sample(&mut rng);
            let t = hours * HOUR as f64;
            if t >= t1 as f64 {
                break;
            }
            births.push(t as u64);
        }
    }

    let last_hour = (t1 - 1) / HOUR;
    let base_logit = libm::log(cfg.base_ctr / (1.0 - cfg.base_ctr));
    let items = births
        .iter()
        .enumerate()
        .map(|(id, &birth_time)| {
            let mut rng = rng::stream(cfg.seed, ITEM_STREAM + id as u64);
            let start = base_logit + cfg.item_logit_sigma * normal(&mut rng);
            let popularity = cfg.popularity_sigma * normal(&mut rng);
            let interactions = (0..cfg.n_user_segments).map(|_| cfg.interaction_sigma * normal(&mut rng)).collect();
            let mut walk = rng::stream(cfg.seed, WALK_STREAM + id as u64);
            let n_hours = (last_hour - birth_time / HOUR + 1) as usize;
            let mut latent = Vec::with_capacity(n_hours);
            let mut x = start;
            latent.push(x);
            for _ in 1..n_hours {
                x += cfg.drift_sigma * normal(&mut walk);
                latent.push(x);
            }
            ItemState { id: id as u32, birth_time, popularity, interactions, latent }
        })
        .collect::<Vec<_>>();

    for e in cfg.trend_events.iter().filter(|e| e.time < t1) {
        match e.target {
            EventTarget::Item(i) if i as usize >= items.len() => {
                return Err(Error::UnknownEntity(format!("trend event references item {i}")))
            }
            EventTarget::Segment(s) if s >= cfg.n_user_segments => {
                return Err(Error::UnknownEntity(format!("trend event references segment {s}")))
            }
            _ => {}
        }
    }

    Ok(WorldTruth { horizon: t1, publisher_bias, hour_bias, items, events: cfg.trend_events.clone() })
}

fn exposure_weight(cfg: &WorldConfig, item: &ItemState, at: u64) -> f64 {
    let mut logit = item.popularity;
    if item.id >= cfg.n_items_initial && cfg.new_item_ramp_hours > 0.0 {
        let age = at.saturating_sub(item.birth_time) as f64 / HOUR as f64;
        logit -= cfg.new_item_popularity_penalty * (1.0 - age / cfg.new_item_ramp_hours).max(0.0);
    }
    libm::exp(logit)
}

/// Generates the impressions with `t0 <= timestamp < t1`, in timestamp
/// order, plus the ground truth of the world up to `t1`.
pub fn generate_stream(cfg: &WorldConfig, t0: u64, t1: u64) -> Result<(Vec<Impression>, WorldTruth)> {
    cfg.validate()?;
    if t0 >= t1 {
        return Err(Error::InvalidArgument(format!("empty generation range [{t0}, {t1})")));
    }
    let truth = build_truth(cfg, t1)?;
    let mut out = Vec::new();
    let mut stamps = Vec::new();
    for hour in t0 / HOUR..=(t1 - 1) / HOUR {
        let start = hour * HOUR;
        let mut rng = rng::stream(cfg.seed, HOUR_STREAM + hour);
        stamps.clear();
        stamps.extend((0..cfg.impressions_in_hour(hour)).map(|_| start + (rng::unit(&mut rng) * HOUR as f64) as u64));
        stamps.sort_unstable();

        let mut alive: Vec<u32> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut pending = truth.items.iter().filter(|it| it.birth_time < start + HOUR).peekable();
        let mut index: Option<WeightedIndex<f64>> = None;
        for &ts in &stamps {
            let mut grew = false;
            while let Some(it) = pending.next_if(|it| it.birth_time <= ts) {
                alive.push(it.id);
                weights.push(exposure_weight(cfg, it, start));
                grew = true;
            }
            if grew || index.is_none() {
                index = WeightedIndex::new(&weights).ok();
            }
            let item = alive[index.as_ref().expect("at least one initial item").sample(&mut rng)];
            let publisher = rng.random_range(0..cfg.n_publishers);
            let segment = rng.random_range(0..cfg.n_user_segments);
            let u = rng::unit(&mut rng);
            if ts < t0 || ts >= t1 {
                continue;
            }
            let mut imp = Impression::new(ts, item, publisher, segment, false);
            imp.click = u < truth.true_ctr(&imp)?;
            out.push(imp);
        }
    }
    Ok((out, truth))
}

/// Impressions with `t_start <= timestamp < t_end` from a timestamp-sorted
/// slice, order preserved.
pub fn slice_window(data: &[Impression], t_start: u64, t_end: u64) -> &[Impression] {
    if t_start >= t_end {
        return &data[0..0];
    }
    let lo = data.partition_point(|i| i.timestamp < t_start);
    let hi = data.partition_point(|i| i.timestamp < t_end);
    &data[lo..hi.max(lo)]
}

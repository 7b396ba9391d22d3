//! Discrete-event network with a virtual clock.
//!
//! Every link is FIFO, like the TCP connections it stands in for, so a delayed frame holds
//! back the frames queued behind it on the same link but not frames on other links. That is
//! where cross-client reordering comes from. Duplication re-delivers a frame on the same
//! link; nothing is ever lost.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// Virtual time in microseconds.
pub type Micros = u64;

pub fn ms_to_micros(ms: f64) -> Micros {
    (ms.max(0.0) * 1000.0).round() as Micros
}

pub fn micros_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}

/// One-way link latency in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    Fixed { ms: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Truncated at zero.
    Normal { mean: f64, sd: f64 },
}

impl Latency {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Latency::Fixed { ms } => ms,
            Latency::Uniform { lo, hi } if hi > lo => rng.random_range(lo..hi),
            Latency::Uniform { lo, .. } => lo,
            Latency::Normal { mean, sd } if sd > 0.0 => {
                Normal::new(mean, sd).expect("validated").sample(rng).max(0.0)
            }
            Latency::Normal { mean, .. } => mean.max(0.0),
        }
    }

    /// 99th percentile of the distribution.
    pub fn p99(&self) -> f64 {
        match *self {
            Latency::Fixed { ms } => ms,
            Latency::Uniform { lo, hi } => lo + 0.99 * (hi - lo),
            Latency::Normal { mean, sd } => (mean + 2.326_347_874 * sd).max(0.0),
        }
    }
}

impl FromStr for Latency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| format!("bad number `{p}` in latency `{s}`")))
            .collect::<Result<_, _>>()?;
        if nums.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("latency `{s}` needs finite non-negative numbers"));
        }
        match (kind, nums.as_slice()) {
            ("fixed", [ms]) => Ok(Latency::Fixed { ms: *ms }),
            ("uniform", [lo, hi]) if lo <= hi => Ok(Latency::Uniform { lo: *lo, hi: *hi }),
            ("normal", [mean, sd]) => Ok(Latency::Normal { mean: *mean, sd: *sd }),
            _ => Err(format!("latency `{s}`: expected fixed:MS, uniform:LO:HI or normal:MEAN:SD")),
        }
    }
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Latency::Fixed { ms } => write!(f, "fixed:{ms}"),
            Latency::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Latency::Normal { mean, sd } => write!(f, "normal:{mean}:{sd}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkProfile {
    pub latency: Latency,
    /// Chance that a frame is held back by up to `reorder_window_ms` extra.
    pub reorder_p: f64,
    pub reorder_window_ms: f64,
    /// Chance that a frame is delivered twice.
    pub dup_p: f64,
}

impl NetworkProfile {
    pub fn ideal() -> Self {
        Self { latency: Latency::Fixed { ms: 0.0 }, reorder_p: 0.0, reorder_window_ms: 0.0, dup_p: 0.0 }
    }

    /// 99th-percentile one-way delay, counting the reorder hold-back when it can occur.
    pub fn p99_ms(&self) -> f64 {
        self.latency.p99() + if self.reorder_p > 0.0 { self.reorder_window_ms } else { 0.0 }
    }
}

impl Default for NetworkProfile {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Endpoint {
    Server,
    Client(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item<T> {
    Frame { from: Endpoint, to: Endpoint, bytes: Vec<u8>, sent_at: Micros },
    Timer(T),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub frames: u64,
    pub bytes: u64,
    pub duplicated: u64,
    pub delayed: u64,
}

struct Scheduled<T> {
    at: Micros,
    order: u64,
    item: Item<T>,
}

impl<T> PartialEq for Scheduled<T> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.order) == (o.at, o.order)
    }
}
impl<T> Eq for Scheduled<T> {}
impl<T> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Scheduled<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(o.at, o.order))
    }
}

/// Event queue plus links. Ties in time pop in scheduling order.
pub struct Network<T> {
    now: Micros,
    order: u64,
    queue: BinaryHeap<Reverse<Scheduled<T>>>,
    tails: BTreeMap<(Endpoint, Endpoint), Micros>,
    in_flight: usize,
    rng: ChaCha8Rng,
    stats: BTreeMap<(Endpoint, Endpoint), NetStats>,
}

impl<T> Network<T> {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            now: 0,
            order: 0,
            queue: BinaryHeap::new(),
            tails: BTreeMap::new(),
            in_flight: 0,
            rng,
            stats: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn push(&mut self, at: Micros, item: Item<T>) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled { at, order: self.order, item }));
    }

    pub fn schedule(&mut self, at: Micros, timer: T) {
        self.push(at.max(self.now), Item::Timer(timer));
    }

    /// Puts a frame on the `from → to` link under `profile`.
    pub fn send(&mut self, from: Endpoint, to: Endpoint, bytes: Vec<u8>, profile: &NetworkProfile) {
        let copies = if self.rng.random_bool(profile.dup_p) { 2 } else { 1 };
        for copy in 0..copies {
            let mut delay = profile.latency.sample(&mut self.rng);
            let stats = self.stats.entry((from, to)).or_default();
            if self.rng.random_bool(profile.reorder_p) {
                delay += self.rng.random_range(0.0..=profile.reorder_window_ms);
                stats.delayed += 1;
            }
            stats.frames += 1;
            stats.bytes += bytes.len() as u64;
            stats.duplicated += u64::from(copy == 1);
            let tail = self.tails.entry((from, to)).or_insert(0);
            let at = (self.now + ms_to_micros(delay)).max(*tail);
            *tail = at;
            self.in_flight += 1;
            let item = Item::Frame { from, to, bytes: bytes.clone(), sent_at: self.now };
            self.push(at, item);
        }
    }

    /// Pops the next event and advances the clock to it.
    pub fn next(&mut self) -> Option<Item<T>> {
        let Reverse(s) = self.queue.pop()?;
        self.now = s.at;
        if matches!(s.item, Item::Frame { .. }) {
            self.in_flight -= 1;
        }
        Some(s.item)
    }

    /// Moves the clock forward without events, e.g. to close a quiescence window.
    pub fn advance_to(&mut self, at: Micros) {
        self.now = self.now.max(at);
    }

    /// Totals over links matching `pick`.
    pub fn stats(&self, pick: impl Fn(Endpoint, Endpoint) -> bool) -> NetStats {
        self.stats.iter().filter(|((f, t), _)| pick(*f, *t)).fold(NetStats::default(), |acc, (_, s)| NetStats {
            frames: acc.frames + s.frames,
            bytes: acc.bytes + s.bytes,
            duplicated: acc.duplicated + s.duplicated,
            delayed: acc.delayed + s.delayed,
        })
    }
}

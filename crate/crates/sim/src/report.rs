//! Scenario reports: structured text for people, JSON for tools.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use holoproxy_core::CellId;
use serde::{Serialize, Serializer};

use crate::scenario::ScenarioError;

fn cells_as_strings<S: Serializer>(cells: &[CellId], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(cells.iter().map(ToString::to_string))
}

fn show(cells: &[CellId]) -> String {
    if cells.is_empty() {
        return "-".into();
    }
    cells.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl AssertionResult {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    /// 1-based, in scenario order.
    pub task: usize,
    pub kind: String,
    pub by: String,
    pub instance: String,
    pub completed: bool,
    #[serde(serialize_with = "cells_as_strings")]
    pub answer: Vec<CellId>,
    #[serde(serialize_with = "cells_as_strings")]
    pub expected: Vec<CellId>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl TaskResult {
    pub fn summary(&self) -> String {
        format!("answer {} expected {}", show(&self.answer), show(&self.expected))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounts {
    pub uplink_frames: u64,
    pub downlink_frames: u64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub duplicated: u64,
    pub delayed: u64,
    /// Envelopes the hub reduced.
    pub applied: u64,
    /// Error envelopes clients received.
    pub hub_errors: u64,
}

/// Request → Ack round trips in virtual milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyHistogram {
    pub samples: usize,
    /// `(upper edge in ms, count)`; the last bucket is open-ended and has edge `null`.
    pub buckets: Vec<(Option<f64>, usize)>,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

const EDGES_MS: [f64; 10] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];

impl LatencyHistogram {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let mut buckets: Vec<(Option<f64>, usize)> = EDGES_MS.iter().map(|e| (Some(*e), 0)).collect();
        buckets.push((None, 0));
        for &s in &samples {
            let i = EDGES_MS.iter().position(|e| s <= *e).unwrap_or(EDGES_MS.len());
            buckets[i].1 += 1;
        }
        // nearest-rank percentiles
        let rank = |q: f64| {
            if samples.is_empty() {
                0.0
            } else {
                samples[((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1]
            }
        };
        Self {
            samples: samples.len(),
            buckets,
            p50_ms: rank(0.5),
            p99_ms: rank(0.99),
            max_ms: samples.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub cube_digest: String,
    pub passed: bool,
    pub server_digest: String,
    /// `None` for a client that never received a snapshot.
    pub client_digests: BTreeMap<String, Option<String>>,
    pub assertions: Vec<AssertionResult>,
    pub tasks: Vec<TaskResult>,
    pub messages: MessageCounts,
    pub latency: LatencyHistogram,
    /// Virtual time of the last delivered event.
    pub last_event_ms: f64,
    /// Virtual time once the quiescence window closed.
    pub quiescent_ms: f64,
    /// Real time spent; the only field that differs between runs with the same seed.
    pub wall_ms: f64,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report as a value, without `wall_ms`, for comparing runs.
    pub fn deterministic_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("wall_ms");
        v
    }

    pub fn into_result(self) -> Result<Self, ScenarioError> {
        if self.passed {
            Ok(self)
        } else {
            let failed = self.assertions.iter().filter(|a| !a.passed).count();
            Err(ScenarioError::AssertionFailed { failed })
        }
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        writeln!(out, "scenario {} seed {}: {verdict}", self.scenario, self.seed)?;
        writeln!(out, "  cube    {}", &self.cube_digest[..16])?;
        writeln!(out, "  server  {}", self.server_digest)?;
        for (client, digest) in &self.client_digests {
            let mark = match digest {
                Some(d) if *d == self.server_digest => "=",
                Some(_) => "!",
                None => "?",
            };
            writeln!(out, "  {mark} {client:<10} {}", digest.as_deref().unwrap_or("no snapshot"))?;
        }
        if !self.tasks.is_empty() {
            writeln!(out, "tasks")?;
        }
        for t in &self.tasks {
            let ok = if t.completed && t.answer == t.expected { "ok" } else { "wrong" };
            write!(out, "  {} {:<7} by {} on {}: {} [{ok}]", t.task, t.kind, t.by, t.instance, t.summary())?;
            if !t.detail.is_empty() {
                write!(out, " ({})", t.detail)?;
            }
            writeln!(out)?;
        }
        writeln!(out, "assertions")?;
        for a in &self.assertions {
            write!(out, "  {} {}", if a.passed { "PASS" } else { "FAIL" }, a.name)?;
            if !a.passed && !a.detail.is_empty() {
                write!(out, ": {}", a.detail)?;
            }
            writeln!(out)?;
        }
        let m = &self.messages;
        writeln!(
            out,
            "messages up {} frames / {} B, down {} frames / {} B, {} duplicated, {} delayed, {} applied, {} errors",
            m.uplink_frames, m.uplink_bytes, m.downlink_frames, m.downlink_bytes, m.duplicated, m.delayed, m.applied,
            m.hub_errors
        )?;
        let l = &self.latency;
        writeln!(out, "ack latency n={} p50 {:.1} ms p99 {:.1} ms max {:.1} ms", l.samples, l.p50_ms, l.p99_ms, l.max_ms)?;
        for (edge, n) in l.buckets.iter().filter(|(_, n)| *n > 0) {
            match edge {
                Some(e) => writeln!(out, "  <= {e:>6} ms {n}")?,
                None => writeln!(out, "  >  {:>6} ms {n}", EDGES_MS[EDGES_MS.len() - 1])?,
            }
        }
        write!(out, "virtual {:.1} ms (quiescent at {:.1} ms), wall {:.0} ms", self.last_event_ms, self.quiescent_ms, self.wall_ms)?;
        f.write_str(&out)
    }
}

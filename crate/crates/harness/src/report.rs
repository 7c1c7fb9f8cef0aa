//! Metrics reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ogi_core::autonomous::InterruptCause;
use ogi_core::clock::Nanos;
use ogi_core::fabric::LatencyHistogram;
use ogi_core::modality::Priority;
use serde::{Deserialize, Serialize};

/// Summary of a sample of nanosecond durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min_ns: Option<Nanos>,
    pub max_ns: Option<Nanos>,
    pub mean_ns: Option<f64>,
    pub p50_ns: Option<Nanos>,
    pub p99_ns: Option<Nanos>,
    pub histogram: LatencyHistogram,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile<T: Copy>(sorted: &[T], q: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Midpoint median; for an even count the mean of the two middle values.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

impl Distribution {
    pub fn from_samples(samples: impl IntoIterator<Item = Nanos>) -> Self {
        let mut v: Vec<Nanos> = samples.into_iter().collect();
        v.sort_unstable();
        let mut histogram = LatencyHistogram::default();
        for &s in &v {
            histogram.record(s);
        }
        Self {
            count: v.len(),
            min_ns: v.first().copied(),
            max_ns: v.last().copied(),
            mean_ns: histogram.mean_ns(),
            p50_ns: percentile(&v, 0.5),
            p99_ns: percentile(&v, 0.99),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadAccuracy {
    /// Injections per second of virtual time.
    pub level: f64,
    pub expectations_met: usize,
    pub expectations_total: usize,
    pub fraction: f64,
}

impl LoadAccuracy {
    pub fn new(level: f64, met: usize, total: usize) -> Self {
        Self {
            level,
            expectations_met: met,
            expectations_total: total,
            fraction: if total == 0 { 1.0 } else { met as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub peak_stm: usize,
    pub stm_capacity: usize,
    pub ltm_traces: usize,
    pub peak_queue_depth: BTreeMap<Priority, usize>,
    pub frames_accepted: u64,
    pub frames_delivered: u64,
    pub frames_faulted: u64,
    /// Delivered frames per second of virtual time.
    pub frames_per_sec: f64,
    pub accounting_violations: u64,
}

impl Resource {
    pub fn total_peak_depth(&self) -> usize {
        self.peak_queue_depth.values().sum()
    }
}

/// Event counts; everything here is deterministic for a fixed seed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub cycles: u64,
    pub ingested: u64,
    pub ingest_rejected: u64,
    pub registrations: u64,
    pub weight_recomputes: u64,
    pub interrupts: usize,
    pub directives: BTreeMap<String, usize>,
    pub actions: BTreeMap<String, usize>,
    pub stream_faults: usize,
    pub executive_ticks: u64,
    pub autonomous_steps: u64,
    pub status_reports: u64,
}

impl EventCounts {
    pub fn add(&mut self, o: &EventCounts) {
        self.cycles += o.cycles;
        self.ingested += o.ingested;
        self.ingest_rejected += o.ingest_rejected;
        self.registrations += o.registrations;
        self.weight_recomputes += o.weight_recomputes;
        self.interrupts += o.interrupts;
        for (k, v) in &o.directives {
            *self.directives.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &o.actions {
            *self.actions.entry(k.clone()).or_default() += v;
        }
        self.stream_faults += o.stream_faults;
        self.executive_ticks += o.executive_ticks;
        self.autonomous_steps += o.autonomous_steps;
        self.status_reports += o.status_reports;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterruptSummary {
    pub interrupt_id: u64,
    pub proc_id: String,
    pub cause: InterruptCause,
    pub divergence: f64,
    pub sent_at: Nanos,
    pub delivered_at: Option<Nanos>,
    pub takeover_at: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub horizon_ms: u64,
    /// Interrupt sent to TakeOver issued.
    pub task_switch_latency: Distribution,
    pub accuracy_under_load: Vec<LoadAccuracy>,
    pub resource: Resource,
    pub counts: EventCounts,
    pub interrupts: Vec<InterruptSummary>,
    /// Emit-to-receipt latency of actions, by caller.
    pub action_latency: BTreeMap<String, Distribution>,
    pub wall_time_ms: f64,
}

fn ms(ns: Option<Nanos>) -> String {
    ns.map_or("-".into(), |n| format!("{:.3}", n as f64 / 1e6))
}

impl MetricsReport {
    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {}, horizon {} ms)", self.scenario, self.seed, self.horizon_ms);
        let t = &self.task_switch_latency;
        let _ = writeln!(
            s,
            "  task switch latency  n={} p50={} ms p99={} ms max={} ms",
            t.count,
            ms(t.p50_ns),
            ms(t.p99_ns),
            ms(t.max_ns)
        );
        for (caller, d) in &self.action_latency {
            let _ = writeln!(s, "  action latency {caller:<10} n={} p50={} ms", d.count, ms(d.p50_ns));
        }
        for a in &self.accuracy_under_load {
            let _ = writeln!(
                s,
                "  accuracy @ {:.1}/s     {}/{} ({:.3})",
                a.level, a.expectations_met, a.expectations_total, a.fraction
            );
        }
        let r = &self.resource;
        let _ = writeln!(
            s,
            "  stm peak {}/{}  ltm {}  queue peak {}  frames {} ({:.1}/s)",
            r.peak_stm,
            r.stm_capacity,
            r.ltm_traces,
            r.total_peak_depth(),
            r.frames_delivered,
            r.frames_per_sec
        );
        let c = &self.counts;
        let dirs: Vec<String> = c.directives.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "  cycles {}  ingested {}  interrupts {}  directives [{}]",
            c.cycles,
            c.ingested,
            c.interrupts,
            dirs.join(" ")
        );
        let _ = writeln!(s, "  wall time {:.1} ms", self.wall_time_ms);
        s
    }
}

//! Driving a kernel through one scenario.

use std::collections::BTreeMap;
use std::time::Instant;

use ogi_core::clock::{Nanos, NANOS_PER_MS};
use ogi_core::executive::{Directive, Observation};
use ogi_core::io::ActionRecord;
use ogi_core::kernel::{InterruptRecord, Kernel, KernelError};
use ogi_core::ContextSignature;
use serde::Serialize;

use crate::expect::{Evidence, ExpectationResult};
use crate::report::{Distribution, EventCounts, InterruptSummary, LoadAccuracy, MetricsReport, Resource};
use crate::scenario::Resolved;

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub results: Vec<ExpectationResult>,
    pub decisions: Vec<Directive>,
    pub contexts: BTreeMap<u64, ContextSignature>,
    pub interrupts: Vec<InterruptRecord>,
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionRecord>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn first_failure(&self) -> Option<&ExpectationResult> {
        self.results.iter().find(|r| !r.passed)
    }

    /// The decision log as newline-delimited JSON.
    pub fn decision_log(&self) -> Vec<u8> {
        ndjson(&self.decisions)
    }
}

pub fn ndjson<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for d in items {
        serde_json::to_writer(&mut out, d).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

/// Run a resolved scenario on a fresh kernel.
pub fn run(resolved: &Resolved) -> Result<RunOutcome, KernelError> {
    run_with(resolved, |_| Ok(()))
}

/// Run a resolved scenario, calling `each_cycle` after every kernel cycle.
pub fn run_with(
    resolved: &Resolved,
    mut each_cycle: impl FnMut(&mut Kernel) -> Result<(), KernelError>,
) -> Result<RunOutcome, KernelError> {
    let started = Instant::now();
    let (setup, events) = resolved.kernel_setup();
    let mut kernel = Kernel::new(setup)?;
    kernel.schedule(events);
    let horizon: Nanos = resolved.scenario.horizon_ms * NANOS_PER_MS;
    let mut contexts = BTreeMap::new();
    let mut seen = 0;
    while kernel.now() < horizon {
        kernel.step_cycle()?;
        let log = kernel.executive().decision_log();
        if log.len() > seen {
            let ctx = kernel.with_memory(|m| m.stm_snapshot().features);
            for d in &log[seen..] {
                contexts.insert(d.directive_id, ctx.clone());
            }
            seen = log.len();
        }
        each_cycle(&mut kernel)?;
    }
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(finish(resolved, &kernel, contexts, wall_time_ms))
}

fn finish(
    resolved: &Resolved,
    kernel: &Kernel,
    contexts: BTreeMap<u64, ContextSignature>,
    wall_time_ms: f64,
) -> RunOutcome {
    let s = &resolved.scenario;
    let h = kernel.handle();
    let m = h.metrics();
    let decisions = kernel.executive().decision_log().to_vec();
    let interrupts = h.interrupt_log();
    let actions = h.action_log();
    let secs = (m.now as f64 / 1e9).max(f64::MIN_POSITIVE);

    let mut directive_counts = BTreeMap::new();
    for d in &decisions {
        *directive_counts.entry(d.action.kind().to_string()).or_default() += 1;
    }
    let mut by_caller: BTreeMap<String, Vec<Nanos>> = BTreeMap::new();
    for a in &actions {
        by_caller.entry(a.caller.to_string()).or_default().push(a.latency_ns);
    }
    let counts = EventCounts {
        cycles: m.counters.cycles,
        ingested: m.counters.ingested,
        ingest_rejected: m.counters.ingest_rejected,
        registrations: m.counters.registrations,
        weight_recomputes: m.counters.weight_recomputes,
        interrupts: interrupts.iter().filter(|r| r.delivered_at.is_some()).count(),
        directives: directive_counts,
        actions: by_caller.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        stream_faults: m.stream_faults,
        executive_ticks: kernel.executive().ticks(),
        autonomous_steps: kernel.autonomous().steps_taken(),
        status_reports: kernel.autonomous().reports_written(),
    };
    let mut report = MetricsReport {
        scenario: s.name.clone(),
        seed: s.seed,
        horizon_ms: s.horizon_ms,
        task_switch_latency: Distribution::from_samples(interrupts.iter().filter_map(|r| r.switch_latency_ns())),
        accuracy_under_load: Vec::new(),
        resource: Resource {
            peak_stm: m.stm_peak,
            stm_capacity: m.stm_capacity,
            ltm_traces: m.ltm_traces,
            peak_queue_depth: m.counters.peak_queue_depth.clone(),
            frames_accepted: m.fabric.accepted,
            frames_delivered: m.fabric.delivered,
            frames_faulted: m.fabric.faulted,
            frames_per_sec: m.fabric.delivered as f64 / secs,
            accounting_violations: m.counters.accounting_violations,
        },
        counts,
        interrupts: interrupts
            .iter()
            .map(|r| InterruptSummary {
                interrupt_id: r.interrupt.interrupt_id,
                proc_id: r.interrupt.proc_id.clone(),
                cause: r.interrupt.cause,
                divergence: r.interrupt.divergence,
                sent_at: r.sent_at,
                delivered_at: r.delivered_at,
                takeover_at: r.takeover_at,
            })
            .collect(),
        action_latency: by_caller
            .into_iter()
            .map(|(k, v)| (k, Distribution::from_samples(v)))
            .collect(),
        wall_time_ms,
    };

    let evaluate = |report: &MetricsReport| -> Vec<ExpectationResult> {
        let doc = serde_json::to_value(report).expect("report serializes");
        let ev = Evidence {
            directives: &decisions,
            contexts: &contexts,
            interrupts: report.counts.interrupts,
            report: &doc,
        };
        s.expectations.iter().map(|e| e.evaluate(&ev)).collect()
    };
    let results = evaluate(&report);
    let met = results.iter().filter(|r| r.passed).count();
    let level = m.counters.ingested as f64 / secs;
    report.accuracy_under_load = vec![LoadAccuracy::new(level, met, results.len())];

    RunOutcome {
        report,
        results,
        decisions,
        contexts,
        interrupts,
        observations: kernel.executive().observations().to_vec(),
        actions,
    }
}

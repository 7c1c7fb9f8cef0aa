//! The kernel: every module wired to one fabric, one memory and one weighting
//! engine, driven cycle by cycle on a virtual clock.
//!
//! A cycle applies due timeline events, delivers frames, steps the autonomous
//! area, ticks the executive, services adapters and recomputes weights when
//! their inputs changed. Module processing time is modelled by advancing the
//! clock by a fixed cost per active module, between the module's step and the
//! delivery of what it sent.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::mpsc::Receiver;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonomous::{Autonomous, AutonomousEnv, Interrupt, StoredProcedure, DEFAULT_MATCH_THRESHOLD};
use crate::clock::{Clock, Nanos, VirtualClock, NANOS_PER_MS};
use crate::dps::{
    AuditRecord, Dps, DpsConfig, DpsError, ExternalProgram, ModuleRegistry, Principal, ProfileTable,
    RoutingTable, Weights,
};
use crate::executive::{Directive, DirectiveAction, Executive, ExecutiveEnv, ExecutivePolicy};
use crate::fabric::{DestinationFilter, Fabric, FabricConfig, FabricError, FabricMetrics};
use crate::io::{ActionRecord, AdapterDescriptor, Io, IoError};
use crate::memory::{Memory, MemoryConfig, StmSummary, TraceSeed};
use crate::modality::{ControlBody, FrameBody, ModalityPayload, ModuleId, Priority, AUTONOMOUS, EXECUTIVE};
use crate::telemetry::{TelemetryEvent, TelemetryFrame, TelemetryHub, DEFAULT_BUFFER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub fabric: FabricConfig,
    pub memory: MemoryConfig,
    pub dps: DpsConfig,
    pub cycle_ns: Nanos,
    pub autonomous_cost_ns: Nanos,
    pub executive_cost_ns: Nanos,
    pub heartbeat_ns: Nanos,
    pub match_threshold: f64,
    pub telemetry_buffer: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            fabric: FabricConfig::default(),
            memory: MemoryConfig::default(),
            dps: DpsConfig::default(),
            cycle_ns: 50 * NANOS_PER_MS,
            autonomous_cost_ns: 100_000,
            executive_cost_ns: 2 * NANOS_PER_MS,
            heartbeat_ns: 100 * NANOS_PER_MS,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            telemetry_buffer: DEFAULT_BUFFER,
        }
    }
}

/// A scripted event at an offset from kernel start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimelineEvent {
    Inject {
        at_ms: u64,
        adapter_id: String,
        payload: ModalityPayload,
    },
    Register {
        at_ms: u64,
        adapter: AdapterDescriptor,
    },
}

impl TimelineEvent {
    pub fn at_ms(&self) -> u64 {
        match self {
            TimelineEvent::Inject { at_ms, .. } | TimelineEvent::Register { at_ms, .. } => *at_ms,
        }
    }
}

pub struct KernelSetup {
    pub config: KernelConfig,
    pub registry: ModuleRegistry,
    pub program: ExternalProgram,
    pub profiles: Option<ProfileTable>,
    pub adapters: Vec<AdapterDescriptor>,
    pub procedures: Vec<StoredProcedure>,
    pub ltm_seed: Vec<TraceSeed>,
    pub policy: Option<Box<dyn ExecutivePolicy>>,
}

impl KernelSetup {
    pub fn new(registry: ModuleRegistry, program: ExternalProgram) -> Self {
        Self {
            config: KernelConfig::default(),
            registry,
            program,
            profiles: None,
            adapters: Vec::new(),
            procedures: Vec::new(),
            ltm_seed: Vec::new(),
            policy: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Dps(#[from] DpsError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterruptRecord {
    pub interrupt: Interrupt,
    pub sent_at: Nanos,
    pub delivered_at: Option<Nanos>,
    pub takeover_at: Option<Nanos>,
}

impl InterruptRecord {
    pub fn switch_latency_ns(&self) -> Option<Nanos> {
        self.takeover_at.map(|t| t.saturating_sub(self.sent_at))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFaultRecord {
    pub at: Nanos,
    pub source: ModuleId,
    pub stream_id: u64,
    pub missing_seq: u64,
    pub faulted_frames: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelCounters {
    pub cycles: u64,
    pub ingested: u64,
    pub ingest_rejected: u64,
    pub registrations: u64,
    pub weight_recomputes: u64,
    pub accounting_violations: u64,
    pub peak_queue_depth: BTreeMap<Priority, usize>,
    pub module_frames: BTreeMap<ModuleId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub now: Nanos,
    pub counters: KernelCounters,
    pub fabric: FabricMetrics,
    pub stm_count: usize,
    pub stm_peak: usize,
    pub stm_capacity: usize,
    pub ltm_traces: usize,
    pub interrupts: usize,
    pub directives: usize,
    pub actions: usize,
    pub stream_faults: usize,
    pub telemetry_published: u64,
}

/// The current weights and the routing derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub weights: Weights<f64>,
    pub routing: RoutingTable,
}

#[derive(Debug)]
struct Shared {
    clock: Arc<VirtualClock>,
    memory: Mutex<Memory>,
    dps: Dps,
    fabric: Arc<Fabric>,
    io: Io,
    telemetry: TelemetryHub,
    weights: RwLock<Option<WeightState>>,
    weight_trace: Mutex<Vec<Weights<f64>>>,
    decisions: Mutex<Vec<Directive>>,
    interrupts: Mutex<Vec<InterruptRecord>>,
    stream_faults: Mutex<Vec<StreamFaultRecord>>,
    counters: Mutex<KernelCounters>,
}

/// Thread-safe read and administration access to a kernel.
#[derive(Debug, Clone)]
pub struct KernelHandle(Arc<Shared>);

impl KernelHandle {
    pub fn now(&self) -> Nanos {
        self.0.clock.now_ns()
    }

    pub fn program(&self) -> ExternalProgram {
        (*self.0.dps.program()).clone()
    }

    pub fn registry(&self) -> ModuleRegistry {
        self.0.dps.registry().clone()
    }

    /// Administer the external program on behalf of `principal`.
    pub fn put_program(&self, principal: &Principal, program: ExternalProgram) -> Result<u64, DpsError> {
        self.0.dps.apply_external_program(principal, program)
    }

    pub fn reject_undecodable_program(&self, principal: &Principal, submitted_version: u64, reason: &str) {
        self.0.dps.reject_undecodable(principal, submitted_version, reason)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.0.dps.audit_log()
    }

    pub fn weights(&self) -> Option<WeightState> {
        self.0.weights.read().clone()
    }

    pub fn weight_trace(&self) -> Vec<Weights<f64>> {
        self.0.weight_trace.lock().clone()
    }

    pub fn stm_summary(&self) -> StmSummary {
        self.0.memory.lock().stm_summary()
    }

    pub fn decision_log(&self) -> Vec<Directive> {
        self.0.decisions.lock().clone()
    }

    pub fn interrupt_log(&self) -> Vec<InterruptRecord> {
        self.0.interrupts.lock().clone()
    }

    pub fn stream_faults(&self) -> Vec<StreamFaultRecord> {
        self.0.stream_faults.lock().clone()
    }

    pub fn action_log(&self) -> Vec<ActionRecord> {
        self.0.io.action_log()
    }

    pub fn subscribe_telemetry(&self) -> Receiver<TelemetryFrame> {
        self.0.telemetry.subscribe()
    }

    pub fn telemetry_subscribers(&self) -> usize {
        self.0.telemetry.subscriber_count()
    }

    pub fn metrics(&self) -> KernelMetrics {
        let s = &self.0;
        let (stm_count, stm_peak, stm_capacity, ltm_traces) = {
            let m = s.memory.lock();
            (m.stm_len(), m.stm_peak(), m.config().stm_capacity, m.ltm().len())
        };
        KernelMetrics {
            now: s.clock.now_ns(),
            counters: s.counters.lock().clone(),
            fabric: s.fabric.metrics(),
            stm_count,
            stm_peak,
            stm_capacity,
            ltm_traces,
            interrupts: s.interrupts.lock().len(),
            directives: s.decisions.lock().len(),
            actions: s.io.action_log().len(),
            stream_faults: s.stream_faults.lock().len(),
            telemetry_published: s.telemetry.published(),
        }
    }
}

pub struct Kernel {
    shared: Arc<Shared>,
    config: KernelConfig,
    autonomous: Autonomous,
    executive: Executive,
    timeline: VecDeque<TimelineEvent>,
    executive_inbox: Vec<Interrupt>,
    last_executive_tick: Option<Nanos>,
}

impl Kernel {
    pub fn new(setup: KernelSetup) -> Result<Self, KernelError> {
        let clock = VirtualClock::shared();
        let config = setup.config;
        let fabric = Arc::new(Fabric::new(config.fabric.clone(), clock.clone())?);
        let profiles = setup
            .profiles
            .unwrap_or_else(|| ProfileTable::defaults(&setup.registry));
        let registry = setup.registry;
        for m in [EXECUTIVE, AUTONOMOUS]
            .into_iter()
            .map(ModuleId::new)
            .chain(registry.ids().cloned())
        {
            fabric.register(m.clone());
            fabric.subscribe(&m, DestinationFilter::Module(m.clone()))?;
        }
        let dps = Dps::new(registry, setup.program, profiles, config.dps, clock.clone())?;
        let io = Io::new(fabric.clone());
        for a in setup.adapters {
            io.register_adapter(a)?;
        }
        for p in &setup.procedures {
            p.validate().map_err(KernelError::Setup)?;
        }
        let mut memory = Memory::new(config.memory);
        for seed in setup.ltm_seed {
            memory
                .ltm_store(seed, 0)
                .map_err(|e| KernelError::Setup(e.to_string()))?;
        }
        let shared = Arc::new(Shared {
            clock,
            memory: Mutex::new(memory),
            dps,
            fabric,
            io,
            telemetry: TelemetryHub::new(config.telemetry_buffer),
            weights: RwLock::new(None),
            weight_trace: Mutex::new(Vec::new()),
            decisions: Mutex::new(Vec::new()),
            interrupts: Mutex::new(Vec::new()),
            stream_faults: Mutex::new(Vec::new()),
            counters: Mutex::new(KernelCounters::default()),
        });
        let executive = match setup.policy {
            Some(p) => Executive::new(p),
            None => Executive::default(),
        };
        let mut kernel = Self {
            shared,
            autonomous: Autonomous::new(setup.procedures, config.match_threshold),
            executive,
            config,
            timeline: VecDeque::new(),
            executive_inbox: Vec::new(),
            last_executive_tick: None,
        };
        kernel.refresh_weights()?;
        Ok(kernel)
    }

    pub fn handle(&self) -> KernelHandle {
        KernelHandle(self.shared.clone())
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn now(&self) -> Nanos {
        self.shared.clock.now_ns()
    }

    pub fn executive(&self) -> &Executive {
        &self.executive
    }

    pub fn autonomous(&self) -> &Autonomous {
        &self.autonomous
    }

    pub fn fabric(&self) -> &Fabric {
        &self.shared.fabric
    }

    pub fn io(&self) -> &Io {
        &self.shared.io
    }

    pub fn dps(&self) -> &Dps {
        &self.shared.dps
    }

    /// Run `f` with exclusive access to memory.
    pub fn with_memory<R>(&self, f: impl FnOnce(&mut Memory) -> R) -> R {
        f(&mut self.shared.memory.lock())
    }

    /// Queue timeline events; they fire at their offsets in order.
    pub fn schedule(&mut self, events: impl IntoIterator<Item = TimelineEvent>) {
        let mut all: Vec<TimelineEvent> = self.timeline.drain(..).chain(events).collect();
        all.sort_by_key(|e| e.at_ms());
        self.timeline = all.into();
    }

    /// Run cycles until the clock reaches `horizon_ns`.
    pub fn run_until(&mut self, horizon_ns: Nanos) -> Result<(), KernelError> {
        while self.now() < horizon_ns {
            self.step_cycle()?;
        }
        Ok(())
    }

    /// One kernel cycle starting at the current clock reading.
    pub fn step_cycle(&mut self) -> Result<(), KernelError> {
        let start = self.now();
        self.apply_timeline(start);
        self.sample();
        self.pump();

        let outcome = {
            let s = &self.shared;
            let mut memory = s.memory.lock();
            let snapshot = memory.stm_snapshot();
            let inbox = s.fabric.recv(&ModuleId::autonomous());
            let theta_int = s.dps.program().interrupt_threshold;
            let mut env = AutonomousEnv {
                memory: &mut memory,
                fabric: &s.fabric,
                io: &s.io,
                theta_int,
                now: s.clock.now_ns(),
            };
            self.autonomous.step(&snapshot, inbox, &mut env)
        };
        self.shared.clock.advance_by(self.config.autonomous_cost_ns);
        if let Some(i) = outcome.interrupt {
            let now = i.raised_at;
            self.shared.interrupts.lock().push(InterruptRecord {
                interrupt: i.clone(),
                sent_at: now,
                delivered_at: None,
                takeover_at: None,
            });
            self.shared
                .telemetry
                .publish(now, TelemetryEvent::Interrupt { interrupt: i });
        }
        self.pump();

        self.executive_step()?;
        self.pump();

        self.refresh_weights()?;
        if let Err(e) = self.shared.memory.lock().decay_tick(self.config.cycle_ns) {
            tracing::warn!(error = %e, "ltm decay failed");
        }
        self.sample();
        self.shared.counters.lock().cycles += 1;
        self.shared.clock.advance_to(start + self.config.cycle_ns);
        Ok(())
    }

    fn apply_timeline(&mut self, now: Nanos) {
        while self
            .timeline
            .front()
            .is_some_and(|e| e.at_ms() * NANOS_PER_MS <= now)
        {
            let event = self.timeline.pop_front().expect("front exists");
            let s = &self.shared;
            match event {
                TimelineEvent::Inject {
                    adapter_id, payload, ..
                } => {
                    let mut memory = s.memory.lock();
                    match s.io.ingest(&adapter_id, payload, &mut memory, now) {
                        Ok(_) => s.counters.lock().ingested += 1,
                        Err(e) => {
                            tracing::warn!(%adapter_id, error = %e, "ingest rejected");
                            s.counters.lock().ingest_rejected += 1;
                        }
                    }
                }
                TimelineEvent::Register { adapter, .. } => match s.io.register_adapter(adapter) {
                    Ok(()) => s.counters.lock().registrations += 1,
                    Err(e) => tracing::warn!(error = %e, "adapter registration failed"),
                },
            }
        }
    }

    fn pump(&mut self) {
        let s = &self.shared;
        s.fabric.pump();
        s.io.service_adapters();
        let now = s.clock.now_ns();
        for d in s.fabric.recv(&ModuleId::executive()) {
            match d.frame.payload {
                FrameBody::Control(ControlBody::Interrupt(i)) => {
                    if let Some(r) = s
                        .interrupts
                        .lock()
                        .iter_mut()
                        .find(|r| r.interrupt.interrupt_id == i.interrupt_id)
                    {
                        r.delivered_at.get_or_insert(d.record.delivered_at);
                    }
                    self.executive_inbox.push(i);
                }
                FrameBody::Control(ControlBody::StreamFault {
                    source,
                    stream_id,
                    missing_seq,
                    faulted_frames,
                }) => s.stream_faults.lock().push(StreamFaultRecord {
                    at: now,
                    source,
                    stream_id,
                    missing_seq,
                    faulted_frames,
                }),
                _ => {
                    *s.counters
                        .lock()
                        .module_frames
                        .entry(ModuleId::executive())
                        .or_default() += 1;
                }
            }
        }
        let mut counters = s.counters.lock();
        for id in s.dps.registry().ids() {
            let n = s.fabric.recv(id).len() as u64;
            if n > 0 {
                *counters.module_frames.entry(id.clone()).or_default() += n;
            }
        }
    }

    fn executive_step(&mut self) -> Result<(), KernelError> {
        let s = self.shared.clone();
        let now = s.clock.now_ns();
        let has_input = !self.executive_inbox.is_empty()
            || s.memory.lock().revision() != self.executive_last_revision();
        let heartbeat_due = self
            .last_executive_tick
            .is_none_or(|t| now >= t + self.config.heartbeat_ns);
        if !has_input && !heartbeat_due {
            return Ok(());
        }
        self.last_executive_tick = Some(now);
        let delivered = std::mem::take(&mut self.executive_inbox);
        let directives = {
            let mut memory = s.memory.lock();
            let mut env = ExecutiveEnv {
                memory: &mut memory,
                dps: &s.dps,
                fabric: &s.fabric,
                io: &s.io,
                now: s.clock.now_ns(),
            };
            match self.executive.tick(delivered.clone(), &mut env) {
                Ok(d) => d,
                Err(e) => {
                    tracing::error!(error = %e, "executive tick aborted");
                    self.executive_inbox = delivered;
                    return Ok(());
                }
            }
        };
        if has_input {
            s.clock.advance_by(self.config.executive_cost_ns);
        }
        for d in &directives {
            if let DirectiveAction::TakeOver { interrupt_id, .. } = &d.action {
                if let Some(r) = s
                    .interrupts
                    .lock()
                    .iter_mut()
                    .find(|r| r.interrupt.interrupt_id == *interrupt_id)
                {
                    r.takeover_at.get_or_insert(d.issued_at);
                }
            }
            s.telemetry.publish(
                d.issued_at,
                TelemetryEvent::Directive {
                    directive: d.clone(),
                },
            );
        }
        s.decisions.lock().extend(directives);
        Ok(())
    }

    fn executive_last_revision(&self) -> u64 {
        self.executive.last_revision()
    }

    /// Recompute weights and routing if the inputs version moved.
    fn refresh_weights(&mut self) -> Result<(), KernelError> {
        let s = &self.shared;
        let snapshot = s.memory.lock().stm_snapshot();
        let inputs = s.dps.current_inputs(snapshot.revision);
        if s
            .weights
            .read()
            .as_ref()
            .is_some_and(|w| w.weights.inputs_version == inputs)
        {
            return Ok(());
        }
        let weights = s.dps.compute_weights(&snapshot)?;
        let routing = s.dps.derive_routing(&weights)?;
        s.io.set_routing(routing.clone());
        s.weight_trace.lock().push(weights.clone());
        s.counters.lock().weight_recomputes += 1;
        s.telemetry.publish(
            weights.computed_at,
            TelemetryEvent::Weights {
                weights: weights.clone(),
                routing: routing.clone(),
            },
        );
        *s.weights.write() = Some(WeightState { weights, routing });
        Ok(())
    }

    fn sample(&mut self) {
        let m = self.shared.fabric.metrics();
        let mut c = self.shared.counters.lock();
        if !m.accounting_holds() {
            c.accounting_violations += 1;
        }
        for (p, depth) in m.queue_depth {
            let peak = c.peak_queue_depth.entry(p).or_default();
            *peak = (*peak).max(depth);
        }
    }

    pub fn write_decision_log<W: Write>(&self, out: W) -> std::io::Result<()> {
        self.executive.write_decision_log(out)
    }

    pub fn write_weight_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for w in self.shared.weight_trace.lock().iter() {
            serde_json::to_writer(&mut out, w)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

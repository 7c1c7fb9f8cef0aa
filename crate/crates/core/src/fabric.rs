//! Interconnect fabric.
//!
//! Many-to-many delivery between registered modules. A frame is placed on the
//! least-loaded lane of its priority class; in `Queued` mode each lane adds a
//! seeded random transit delay, so frames of one stream can arrive out of
//! order across lanes. Dequeue is strict priority (Interrupt, then Control,
//! then Data) over frames that have arrived. A per-stream reassembly buffer
//! restores `seq` order before anything reaches a subscriber; a gap that stays
//! open for `gap_budget` deliveries faults the stream.
//!
//! Accounting holds at every snapshot:
//! `accepted = delivered + pending + faulted`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Nanos};
use crate::modality::{
    ControlBody, FabricFrame, FrameBody, ModuleId, Priority, EXECUTIVE,
};

/// Module id the fabric uses for the frames it originates (stream faults).
pub const FABRIC: &str = "fabric";

pub const DEFAULT_GAP_BUDGET: u64 = 64;
pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DeliveryMode {
    #[default]
    ZeroLatency,
    Queued,
}

/// Per-frame transit delay drawn for each lane in `Queued` mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type")]
pub enum LaneDelayModel {
    #[default]
    None,
    Uniform { min_us: u64, max_us: u64 },
    Exponential { mean_us: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FabricConfig {
    pub lanes: usize,
    pub per_priority_capacity: BTreeMap<Priority, usize>,
    pub delivery_mode: DeliveryMode,
    pub lane_delay_model: LaneDelayModel,
    pub seed: u64,
    pub gap_budget: u64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            lanes: 1,
            per_priority_capacity: Priority::ALL
                .into_iter()
                .map(|p| (p, DEFAULT_CAPACITY))
                .collect(),
            delivery_mode: DeliveryMode::ZeroLatency,
            lane_delay_model: LaneDelayModel::None,
            seed: 0,
            gap_budget: DEFAULT_GAP_BUDGET,
        }
    }
}

impl FabricConfig {
    pub fn queued(lanes: usize, delay: LaneDelayModel, seed: u64) -> Self {
        Self {
            lanes,
            delivery_mode: DeliveryMode::Queued,
            lane_delay_model: delay,
            seed,
            ..Self::default()
        }
    }

    pub fn with_capacity(mut self, priority: Priority, capacity: usize) -> Self {
        self.per_priority_capacity.insert(priority, capacity);
        self
    }

    pub fn capacity(&self, p: Priority) -> usize {
        self.per_priority_capacity
            .get(&p)
            .copied()
            .unwrap_or(DEFAULT_CAPACITY)
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if self.lanes < 1 {
            return Err(FabricError::Config("lanes must be >= 1".into()));
        }
        if Priority::ALL.iter().any(|&p| self.capacity(p) < 1) {
            return Err(FabricError::Config("capacities must be >= 1".into()));
        }
        if self.gap_budget < 1 {
            return Err(FabricError::Config("gap_budget must be >= 1".into()));
        }
        match self.lane_delay_model {
            LaneDelayModel::Uniform { min_us, max_us } if min_us > max_us => {
                Err(FabricError::Config("uniform delay min_us > max_us".into()))
            }
            LaneDelayModel::Exponential { mean_us } if !(mean_us > 0.0) => {
                Err(FabricError::Config("exponential delay mean_us must be > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub frame_id: u64,
    pub enqueued_at: Nanos,
    pub delivered_at: Nanos,
    pub lane: usize,
}

impl DeliveryRecord {
    pub fn latency_ns(&self) -> Nanos {
        self.delivered_at - self.enqueued_at
    }
}

/// A frame handed to one subscriber.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub frame: FabricFrame,
    pub record: DeliveryRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DestinationFilter {
    /// Frames whose destination set contains this module.
    Module(ModuleId),
    /// Every frame; a tap.
    Any,
}

impl DestinationFilter {
    fn matches(&self, frame: &FabricFrame) -> bool {
        match self {
            DestinationFilter::Module(m) => frame.destinations.contains(m),
            DestinationFilter::Any => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendReceipt {
    pub frame_id: u64,
    pub seq: u64,
    pub lane: usize,
    pub enqueued_at: Nanos,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FabricError {
    #[error("module `{0}` is not registered with the fabric")]
    UnknownModule(ModuleId),
    #[error("frame has no destinations")]
    EmptyDestinations,
    #[error("destination `{0}` is not registered with the fabric")]
    UnknownDestination(ModuleId),
    #[error("seq {got} does not increase on stream ({source_id}, {stream_id}); last was {last}")]
    NonMonotoneSeq {
        source_id: ModuleId,
        stream_id: u64,
        last: u64,
        got: u64,
    },
    #[error("Interrupt priority is reserved for interrupt bodies")]
    InterruptPriorityMisuse,
    #[error("backpressure: {priority:?} queue at capacity ({depth})")]
    Backpressure { priority: Priority, depth: usize },
    #[error("invalid fabric config: {0}")]
    Config(String),
}

/// Fixed-bucket latency histogram over nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    /// Upper bounds (inclusive) of each bucket in ns; a final overflow bucket
    /// follows.
    pub bounds_ns: Vec<Nanos>,
    pub counts: Vec<u64>,
    pub count: u64,
    pub sum_ns: u128,
    pub min_ns: Option<Nanos>,
    pub max_ns: Option<Nanos>,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        let bounds_ns: Vec<Nanos> = vec![
            0,
            1_000,
            10_000,
            100_000,
            1_000_000,
            10_000_000,
            100_000_000,
            1_000_000_000,
        ];
        let counts = vec![0; bounds_ns.len() + 1];
        Self {
            bounds_ns,
            counts,
            count: 0,
            sum_ns: 0,
            min_ns: None,
            max_ns: None,
        }
    }
}

impl LatencyHistogram {
    pub fn record(&mut self, ns: Nanos) {
        let idx = self
            .bounds_ns
            .iter()
            .position(|&b| ns <= b)
            .unwrap_or(self.bounds_ns.len());
        self.counts[idx] += 1;
        self.count += 1;
        self.sum_ns += ns as u128;
        self.min_ns = Some(self.min_ns.map_or(ns, |m| m.min(ns)));
        self.max_ns = Some(self.max_ns.map_or(ns, |m| m.max(ns)));
    }

    pub fn mean_ns(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_ns as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneStats {
    pub lane: usize,
    pub delivered: u64,
    pub frames_per_sec: f64,
}

/// Point-in-time fabric state; all fields are read under one lock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricMetrics {
    pub at: Nanos,
    pub queue_depth: BTreeMap<Priority, usize>,
    pub lanes: Vec<LaneStats>,
    pub latency: LatencyHistogram,
    pub accepted: u64,
    pub delivered: u64,
    pub pending: u64,
    pub faulted: u64,
    pub backpressured: u64,
    pub stream_faults: u64,
}

impl FabricMetrics {
    pub fn accounting_holds(&self) -> bool {
        self.accepted == self.delivered + self.pending + self.faulted
    }

    pub fn total_depth(&self) -> usize {
        self.queue_depth.values().sum()
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    frame: FabricFrame,
    enqueued_at: Nanos,
    lane: usize,
}

#[derive(Debug)]
struct Lane {
    rng: ChaCha8Rng,
    last_arrival: Nanos,
    load: [usize; 3],
    delivered: u64,
}

#[derive(Debug, Default)]
struct StreamState {
    next_expected: u64,
    buffer: BTreeMap<u64, InFlight>,
    gap_opened_at: Option<u64>,
}

#[derive(Debug)]
struct Subscription {
    id: SubscriptionId,
    module: ModuleId,
    filter: DestinationFilter,
}

type StreamKey = (ModuleId, u64);

#[derive(Debug)]
struct State {
    config: FabricConfig,
    registered: BTreeSet<ModuleId>,
    subscriptions: Vec<Subscription>,
    next_subscription: u64,
    inboxes: BTreeMap<ModuleId, VecDeque<Delivery>>,
    /// Per priority, keyed by (arrival time, admission order).
    transit: [BTreeMap<(Nanos, u64), InFlight>; 3],
    admission: u64,
    lanes: Vec<Lane>,
    last_sent_seq: HashMap<StreamKey, u64>,
    streams: BTreeMap<StreamKey, StreamState>,
    open_gaps: BTreeSet<StreamKey>,
    pending: [usize; 3],
    next_frame_id: u64,
    accepted: u64,
    delivered: u64,
    faulted: u64,
    backpressured: u64,
    stream_faults: u64,
    latency: LatencyHistogram,
    trace: Vec<DeliveryRecord>,
    started_at: Nanos,
}

/// Shared handle to the fabric. All methods take `&self`; the fabric may be
/// used from any number of threads.
#[derive(Debug)]
pub struct Fabric {
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl Fabric {
    pub fn new(config: FabricConfig, clock: Arc<dyn Clock>) -> Result<Self, FabricError> {
        config.validate()?;
        let lanes = (0..config.lanes)
            .map(|i| Lane {
                rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64)),
                last_arrival: 0,
                load: [0; 3],
                delivered: 0,
            })
            .collect();
        let started_at = clock.now_ns();
        let mut registered = BTreeSet::new();
        registered.insert(ModuleId::new(FABRIC));
        Ok(Self {
            clock,
            state: Mutex::new(State {
                config,
                registered,
                subscriptions: Vec::new(),
                next_subscription: 0,
                inboxes: BTreeMap::new(),
                transit: Default::default(),
                admission: 0,
                lanes,
                last_sent_seq: HashMap::new(),
                streams: BTreeMap::new(),
                open_gaps: BTreeSet::new(),
                pending: [0; 3],
                next_frame_id: 1,
                accepted: 0,
                delivered: 0,
                faulted: 0,
                backpressured: 0,
                stream_faults: 0,
                latency: LatencyHistogram::default(),
                trace: Vec::new(),
                started_at,
            }),
        })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> FabricConfig {
        self.state.lock().config.clone()
    }

    /// Register a module as a valid source/destination. Idempotent.
    pub fn register(&self, module: ModuleId) {
        let mut st = self.state.lock();
        st.inboxes.entry(module.clone()).or_default();
        st.registered.insert(module);
    }

    pub fn is_registered(&self, module: &ModuleId) -> bool {
        self.state.lock().registered.contains(module)
    }

    /// Subscribe `module` to frames matching `filter`. Subscribing twice with
    /// the same filter returns the existing handle.
    pub fn subscribe(
        &self,
        module: &ModuleId,
        filter: DestinationFilter,
    ) -> Result<SubscriptionId, FabricError> {
        let mut st = self.state.lock();
        if !st.registered.contains(module) {
            return Err(FabricError::UnknownModule(module.clone()));
        }
        if let Some(s) = st
            .subscriptions
            .iter()
            .find(|s| &s.module == module && s.filter == filter)
        {
            return Ok(s.id);
        }
        let id = SubscriptionId(st.next_subscription);
        st.next_subscription += 1;
        st.subscriptions.push(Subscription {
            id,
            module: module.clone(),
            filter,
        });
        Ok(id)
    }

    /// Next free frame id.
    pub fn allocate_frame_id(&self) -> u64 {
        let mut st = self.state.lock();
        let id = st.next_frame_id;
        st.next_frame_id += 1;
        id
    }

    /// Build and send a frame, assigning its id, the next seq on
    /// `(source, stream_id)` and `sent_at`.
    pub fn send_new(
        &self,
        source: &ModuleId,
        destinations: impl IntoIterator<Item = ModuleId>,
        stream_id: u64,
        priority: Priority,
        payload: FrameBody,
    ) -> Result<SendReceipt, FabricError> {
        let now = self.clock.now_ns();
        let mut st = self.state.lock();
        let seq = st
            .last_sent_seq
            .get(&(source.clone(), stream_id))
            .copied()
            .unwrap_or(0)
            + 1;
        let frame = FabricFrame {
            frame_id: st.next_frame_id,
            source: source.clone(),
            destinations: destinations.into_iter().collect(),
            stream_id,
            seq,
            priority,
            sent_at: now,
            payload,
        };
        st.send(frame, now)
    }

    /// Send a fully formed frame.
    pub fn send(&self, frame: FabricFrame) -> Result<SendReceipt, FabricError> {
        let now = self.clock.now_ns();
        self.state.lock().send(frame, now)
    }

    /// Deliver every frame that has arrived by now, in priority order, into
    /// subscriber inboxes. Returns the number of frames delivered.
    pub fn pump(&self) -> usize {
        let now = self.clock.now_ns();
        self.state.lock().pump(now)
    }

    /// Drain the inbox of `module`.
    pub fn recv(&self, module: &ModuleId) -> Vec<Delivery> {
        let mut st = self.state.lock();
        st.inboxes
            .get_mut(module)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn inbox_len(&self, module: &ModuleId) -> usize {
        self.state
            .lock()
            .inboxes
            .get(module)
            .map_or(0, |q| q.len())
    }

    /// Earliest arrival time among frames still in transit.
    pub fn next_arrival(&self) -> Option<Nanos> {
        let st = self.state.lock();
        st.transit
            .iter()
            .filter_map(|m| m.keys().next().map(|k| k.0))
            .min()
    }

    pub fn metrics(&self) -> FabricMetrics {
        let now = self.clock.now_ns();
        let st = self.state.lock();
        let elapsed_s = now.saturating_sub(st.started_at) as f64 / 1e9;
        FabricMetrics {
            at: now,
            queue_depth: Priority::ALL
                .into_iter()
                .map(|p| (p, st.pending[p.index()]))
                .collect(),
            lanes: st
                .lanes
                .iter()
                .enumerate()
                .map(|(lane, l)| LaneStats {
                    lane,
                    delivered: l.delivered,
                    frames_per_sec: if elapsed_s > 0.0 {
                        l.delivered as f64 / elapsed_s
                    } else {
                        0.0
                    },
                })
                .collect(),
            latency: st.latency.clone(),
            accepted: st.accepted,
            delivered: st.delivered,
            pending: st.pending.iter().sum::<usize>() as u64,
            faulted: st.faulted,
            backpressured: st.backpressured,
            stream_faults: st.stream_faults,
        }
    }

    /// Delivery records in delivery order.
    pub fn trace(&self) -> Vec<DeliveryRecord> {
        self.state.lock().trace.clone()
    }

    /// Write the delivery trace as newline-delimited JSON.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in self.state.lock().trace.iter() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl State {
    fn send(&mut self, frame: FabricFrame, now: Nanos) -> Result<SendReceipt, FabricError> {
        if !self.registered.contains(&frame.source) {
            return Err(FabricError::UnknownModule(frame.source.clone()));
        }
        if frame.destinations.is_empty() {
            return Err(FabricError::EmptyDestinations);
        }
        if let Some(d) = frame
            .destinations
            .iter()
            .find(|d| !self.registered.contains(*d))
        {
            return Err(FabricError::UnknownDestination(d.clone()));
        }
        if frame.priority == Priority::Interrupt && !frame.payload.is_interrupt() {
            return Err(FabricError::InterruptPriorityMisuse);
        }
        let key = (frame.source.clone(), frame.stream_id);
        if let Some(&last) = self.last_sent_seq.get(&key) {
            if frame.seq <= last {
                return Err(FabricError::NonMonotoneSeq {
                    source_id: frame.source.clone(),
                    stream_id: frame.stream_id,
                    last,
                    got: frame.seq,
                });
            }
        }
        let p = frame.priority.index();
        let capacity = self.config.capacity(frame.priority);
        if self.pending[p] >= capacity {
            self.backpressured += 1;
            return Err(FabricError::Backpressure {
                priority: frame.priority,
                depth: self.pending[p],
            });
        }

        let lane = (0..self.lanes.len())
            .min_by_key(|&i| (self.lanes[i].load[p], i))
            .unwrap_or(0);
        let arrival = match self.config.delivery_mode {
            DeliveryMode::ZeroLatency => now,
            DeliveryMode::Queued => {
                let delay = sample_delay(&self.config.lane_delay_model, &mut self.lanes[lane].rng);
                let l = &mut self.lanes[lane];
                // Lanes are FIFO paths.
                let t = (now + delay).max(l.last_arrival);
                l.last_arrival = t;
                t
            }
        };

        self.last_sent_seq.insert(key, frame.seq);
        self.next_frame_id = self.next_frame_id.max(frame.frame_id + 1);
        self.lanes[lane].load[p] += 1;
        self.pending[p] += 1;
        self.accepted += 1;
        let receipt = SendReceipt {
            frame_id: frame.frame_id,
            seq: frame.seq,
            lane,
            enqueued_at: now,
        };
        let order = self.admission;
        self.admission += 1;
        self.transit[p].insert(
            (arrival, order),
            InFlight {
                frame,
                enqueued_at: now,
                lane,
            },
        );
        Ok(receipt)
    }

    fn pop_ready(&mut self, now: Nanos) -> Option<InFlight> {
        for p in 0..3 {
            let ready = self.transit[p]
                .first_key_value()
                .is_some_and(|(&(arrival, _), _)| arrival <= now);
            if ready {
                return self.transit[p].pop_first().map(|(_, f)| f);
            }
        }
        None
    }

    fn pump(&mut self, now: Nanos) -> usize {
        let before = self.delivered;
        while let Some(f) = self.pop_ready(now) {
            let key = (f.frame.source.clone(), f.frame.stream_id);
            let stream = self.streams.entry(key.clone()).or_insert_with(|| StreamState {
                next_expected: 1,
                ..Default::default()
            });
            let seq = f.frame.seq;
            if seq < stream.next_expected {
                // Late arrival for a stream that already faulted past it.
                self.retire_faulted(&f);
                continue;
            }
            if seq > stream.next_expected {
                stream.buffer.insert(seq, f);
                if stream.gap_opened_at.is_none() {
                    stream.gap_opened_at = Some(self.delivered);
                    self.open_gaps.insert(key);
                }
                continue;
            }
            stream.next_expected += 1;
            let mut ready = vec![f];
            while let Some(next) = stream.buffer.remove(&stream.next_expected) {
                stream.next_expected += 1;
                ready.push(next);
            }
            if stream.buffer.is_empty() && stream.gap_opened_at.take().is_some() {
                self.open_gaps.remove(&key);
            }
            for f in ready {
                self.deliver(f, now);
                self.check_gaps(now);
            }
        }
        (self.delivered - before) as usize
    }

    fn check_gaps(&mut self, now: Nanos) {
        let budget = self.config.gap_budget;
        let expired: Vec<StreamKey> = self
            .open_gaps
            .iter()
            .filter(|k| {
                self.streams[*k]
                    .gap_opened_at
                    .is_some_and(|at| self.delivered - at >= budget)
            })
            .cloned()
            .collect();
        for key in expired {
            self.open_gaps.remove(&key);
            let stream = self.streams.get_mut(&key).expect("open gap has stream");
            let missing_seq = stream.next_expected;
            let buffered: Vec<InFlight> = std::mem::take(&mut stream.buffer).into_values().collect();
            stream.gap_opened_at = None;
            if let Some(last) = buffered.last() {
                stream.next_expected = last.frame.seq + 1;
            }
            let faulted_frames = buffered.len() as u64;
            for f in &buffered {
                self.retire_faulted(f);
            }
            self.stream_faults += 1;
            tracing::warn!(source = %key.0, stream = key.1, missing_seq, faulted_frames, "stream fault");
            self.emit_fault(key, missing_seq, faulted_frames, now);
        }
    }

    fn emit_fault(&mut self, key: StreamKey, missing_seq: u64, faulted_frames: u64, now: Nanos) {
        let exec = ModuleId::new(EXECUTIVE);
        if !self.registered.contains(&exec) {
            return;
        }
        let source = ModuleId::new(FABRIC);
        let seq = self
            .last_sent_seq
            .get(&(source.clone(), 0))
            .copied()
            .unwrap_or(0)
            + 1;
        let frame = FabricFrame {
            frame_id: self.next_frame_id,
            source,
            destinations: [exec].into_iter().collect(),
            stream_id: 0,
            seq,
            priority: Priority::Control,
            sent_at: now,
            payload: FrameBody::Control(ControlBody::StreamFault {
                source: key.0,
                stream_id: key.1,
                missing_seq,
                faulted_frames,
            }),
        };
        if let Err(e) = self.send(frame, now) {
            tracing::warn!(error = %e, "could not signal stream fault");
        }
    }

    fn retire(&mut self, f: &InFlight) {
        let p = f.frame.priority.index();
        self.pending[p] -= 1;
        self.lanes[f.lane].load[p] -= 1;
    }

    fn retire_faulted(&mut self, f: &InFlight) {
        self.retire(f);
        self.faulted += 1;
    }

    fn deliver(&mut self, f: InFlight, now: Nanos) {
        self.retire(&f);
        self.delivered += 1;
        self.lanes[f.lane].delivered += 1;
        let record = DeliveryRecord {
            frame_id: f.frame.frame_id,
            enqueued_at: f.enqueued_at,
            delivered_at: now.max(f.enqueued_at),
            lane: f.lane,
        };
        self.latency.record(record.latency_ns());
        self.trace.push(record.clone());
        let recipients: BTreeSet<ModuleId> = self
            .subscriptions
            .iter()
            .filter(|s| s.filter.matches(&f.frame))
            .map(|s| s.module.clone())
            .collect();
        for m in recipients {
            self.inboxes.entry(m).or_default().push_back(Delivery {
                frame: f.frame.clone(),
                record: record.clone(),
            });
        }
    }
}

fn sample_delay(model: &LaneDelayModel, rng: &mut ChaCha8Rng) -> Nanos {
    match *model {
        LaneDelayModel::None => 0,
        LaneDelayModel::Uniform { min_us, max_us } => rng.random_range(min_us..=max_us) * 1_000,
        LaneDelayModel::Exponential { mean_us } => {
            let exp = Exp::new(1.0 / mean_us).expect("validated mean");
            (exp.sample(rng) * 1_000.0) as Nanos
        }
    }
}

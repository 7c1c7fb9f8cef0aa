//! Uniform adapter layer.
//!
//! Every adapter is driven through `register_adapter`, `ingest` and `emit`.
//! Each adapter is a fabric module with one ordered stream; ingested payloads
//! go out at Data priority to the modules the current routing table selects
//! and their summary lands in STM under the adapter id.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Nanos;
use crate::dps::RoutingTable;
use crate::fabric::{Delivery, DestinationFilter, Fabric, FabricError};
use crate::memory::{Memory, StmBody, StmWrite};
use crate::modality::{
    summarize_to_signature, validate_payload, ControlBody, FrameBody, ModalityKind, ModalityPayload,
    ModuleId, Priority, AUTONOMOUS, EXECUTIVE,
};

pub const DEFAULT_RATE_LIMIT: u32 = 1000;
pub const INGEST_STRENGTH: f64 = 0.8;
pub const ADAPTER_STREAM: u64 = 1;
pub const ACTION_STREAM: u64 = 2;
const RATE_WINDOW_NS: Nanos = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Input,
    Output,
    Bidirectional,
}

impl Direction {
    pub fn accepts_input(self) -> bool {
        matches!(self, Direction::Input | Direction::Bidirectional)
    }

    pub fn accepts_output(self) -> bool {
        matches!(self, Direction::Output | Direction::Bidirectional)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub adapter_id: String,
    pub direction: Direction,
    pub modality: ModalityKind,
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    #[serde(default = "default_rate")]
    pub rate_limit: u32,
}

fn schema_one() -> u32 {
    1
}

fn default_rate() -> u32 {
    DEFAULT_RATE_LIMIT
}

impl AdapterDescriptor {
    pub fn new(id: &str, direction: Direction, modality: ModalityKind) -> Self {
        Self {
            adapter_id: id.to_string(),
            direction,
            modality,
            schema_version: 1,
            rate_limit: DEFAULT_RATE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDescriptor {
    pub action_id: String,
    pub adapter_id: String,
    pub payload: ModalityPayload,
    #[serde(default)]
    pub feedback_requested: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("adapter `{0}` is already registered")]
    Duplicate(String),
    #[error("adapter `{0}` is not registered")]
    UnknownAdapter(String),
    #[error("invalid adapter descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("adapter `{adapter}` declares {expected:?} but got {got:?}")]
    ModalityMismatch {
        adapter: String,
        expected: ModalityKind,
        got: ModalityKind,
    },
    #[error("adapter `{adapter}` does not accept {what}")]
    WrongDirection { adapter: String, what: &'static str },
    #[error("payload failed validation: {0}")]
    InvalidPayload(String),
    #[error("adapter `{adapter}` exceeded {limit} messages/s")]
    RateExceeded { adapter: String, limit: u32 },
    #[error("module `{0}` may not emit actions")]
    Unauthorized(ModuleId),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub frame_id: u64,
    pub seq: u64,
    pub revision: u64,
    pub destinations: Vec<ModuleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReceipt {
    pub action_id: String,
    pub frame_id: u64,
    pub caller: ModuleId,
    pub emitted_at: Nanos,
}

/// One executed action as seen by its adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action_id: String,
    pub adapter_id: String,
    pub caller: ModuleId,
    pub emitted_at: Nanos,
    pub delivered_at: Nanos,
    pub latency_ns: Nanos,
    pub feedback_frame: Option<u64>,
}

#[derive(Debug, Clone)]
struct AdapterState {
    descriptor: AdapterDescriptor,
    module: ModuleId,
    window_start: Nanos,
    window_count: u32,
    ingested: u64,
}

#[derive(Debug)]
pub struct Io {
    fabric: Arc<Fabric>,
    adapters: RwLock<BTreeMap<String, Mutex<AdapterState>>>,
    routing: RwLock<RoutingTable>,
    action_log: Mutex<Vec<ActionRecord>>,
}

impl Io {
    pub fn new(fabric: Arc<Fabric>) -> Self {
        Self {
            fabric,
            adapters: RwLock::new(BTreeMap::new()),
            routing: RwLock::new(RoutingTable::default()),
            action_log: Mutex::new(Vec::new()),
        }
    }

    /// Make an adapter live. Allowed while the kernel runs.
    pub fn register_adapter(&self, d: AdapterDescriptor) -> Result<(), IoError> {
        if d.adapter_id.is_empty() {
            return Err(IoError::InvalidDescriptor("empty adapter_id".into()));
        }
        if d.rate_limit == 0 {
            return Err(IoError::InvalidDescriptor("rate_limit must be > 0".into()));
        }
        let mut adapters = self.adapters.write();
        if adapters.contains_key(&d.adapter_id) {
            return Err(IoError::Duplicate(d.adapter_id));
        }
        let module = ModuleId::new(d.adapter_id.clone());
        self.fabric.register(module.clone());
        self.fabric
            .subscribe(&module, DestinationFilter::Module(module.clone()))?;
        tracing::info!(adapter = %d.adapter_id, modality = %d.modality, "adapter registered");
        adapters.insert(
            d.adapter_id.clone(),
            Mutex::new(AdapterState {
                descriptor: d,
                module,
                window_start: 0,
                window_count: 0,
                ingested: 0,
            }),
        );
        Ok(())
    }

    pub fn adapters(&self) -> Vec<AdapterDescriptor> {
        self.adapters
            .read()
            .values()
            .map(|a| a.lock().descriptor.clone())
            .collect()
    }

    pub fn is_adapter(&self, id: &ModuleId) -> bool {
        self.adapters.read().contains_key(id.as_str())
    }

    /// Kinds with at least one live adapter.
    pub fn routable_kinds(&self) -> Vec<ModalityKind> {
        let mut kinds: Vec<ModalityKind> = self
            .adapters
            .read()
            .values()
            .map(|a| a.lock().descriptor.modality)
            .collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    pub fn set_routing(&self, table: RoutingTable) {
        *self.routing.write() = table;
    }

    pub fn routing(&self) -> RoutingTable {
        self.routing.read().clone()
    }

    /// Validate a sensor payload, send it on the adapter's stream and write its
    /// feature summary to STM.
    pub fn ingest(
        &self,
        adapter_id: &str,
        payload: ModalityPayload,
        memory: &mut Memory,
        now: Nanos,
    ) -> Result<IngestReceipt, IoError> {
        let adapters = self.adapters.read();
        let slot = adapters
            .get(adapter_id)
            .ok_or_else(|| IoError::UnknownAdapter(adapter_id.to_string()))?;
        let mut a = slot.lock();
        if !a.descriptor.direction.accepts_input() {
            return Err(IoError::WrongDirection {
                adapter: adapter_id.to_string(),
                what: "input",
            });
        }
        if payload.kind != a.descriptor.modality {
            return Err(IoError::ModalityMismatch {
                adapter: adapter_id.to_string(),
                expected: a.descriptor.modality,
                got: payload.kind,
            });
        }
        let signature = summarize_to_signature(&payload, adapter_id)
            .map_err(|e| IoError::InvalidPayload(e.to_string()))?;
        if now >= a.window_start + RATE_WINDOW_NS || a.ingested == 0 {
            a.window_start = now;
            a.window_count = 0;
        }
        if a.window_count >= a.descriptor.rate_limit {
            return Err(IoError::RateExceeded {
                adapter: adapter_id.to_string(),
                limit: a.descriptor.rate_limit,
            });
        }
        let mut destinations = self.routing.read().destinations(payload.kind);
        destinations.retain(|m| self.fabric.is_registered(m));
        if destinations.is_empty() {
            destinations.push(ModuleId::executive());
        }
        let receipt = self.fabric.send_new(
            &a.module,
            destinations.iter().cloned(),
            ADAPTER_STREAM,
            Priority::Data,
            FrameBody::Payload(payload.clone()),
        )?;
        a.window_count += 1;
        a.ingested += 1;
        let outcome = memory.stm_put(
            StmWrite {
                key: adapter_id.to_string(),
                payload: StmBody::Payload(payload),
                signature,
                strength: INGEST_STRENGTH,
                author: a.module.clone(),
            },
            now,
        );
        Ok(IngestReceipt {
            frame_id: receipt.frame_id,
            seq: receipt.seq,
            revision: outcome.revision,
            destinations,
        })
    }

    /// Send an action to its adapter on behalf of the executive or the
    /// autonomous area.
    pub fn emit(&self, action: &ActionDescriptor, caller: &ModuleId, now: Nanos) -> Result<ActionReceipt, IoError> {
        if caller.as_str() != EXECUTIVE && caller.as_str() != AUTONOMOUS {
            return Err(IoError::Unauthorized(caller.clone()));
        }
        let adapters = self.adapters.read();
        let slot = adapters
            .get(&action.adapter_id)
            .ok_or_else(|| IoError::UnknownAdapter(action.adapter_id.clone()))?;
        let a = slot.lock();
        if !a.descriptor.direction.accepts_output() {
            return Err(IoError::WrongDirection {
                adapter: action.adapter_id.clone(),
                what: "output",
            });
        }
        if action.payload.kind != a.descriptor.modality {
            return Err(IoError::ModalityMismatch {
                adapter: action.adapter_id.clone(),
                expected: a.descriptor.modality,
                got: action.payload.kind,
            });
        }
        let violations = validate_payload(&action.payload);
        if !violations.is_empty() {
            return Err(IoError::InvalidPayload(format!("{} violations", violations.len())));
        }
        let receipt = self.fabric.send_new(
            caller,
            [a.module.clone()],
            ACTION_STREAM,
            Priority::Control,
            FrameBody::Control(ControlBody::Action {
                caller: caller.clone(),
                emitted_at: now,
                action: action.clone(),
            }),
        )?;
        Ok(ActionReceipt {
            action_id: action.action_id.clone(),
            frame_id: receipt.frame_id,
            caller: caller.clone(),
            emitted_at: now,
        })
    }

    /// Drain every adapter inbox: log delivered actions and answer feedback
    /// requests on the adapter's own stream.
    pub fn service_adapters(&self) -> Vec<ActionRecord> {
        let modules: Vec<ModuleId> = self
            .adapters
            .read()
            .values()
            .map(|a| a.lock().module.clone())
            .collect();
        let mut records = Vec::new();
        for m in modules {
            for d in self.fabric.recv(&m) {
                if let Some(r) = self.on_delivered(&m, d) {
                    records.push(r);
                }
            }
        }
        records
    }

    fn on_delivered(&self, adapter: &ModuleId, d: Delivery) -> Option<ActionRecord> {
        let FrameBody::Control(ControlBody::Action {
            caller,
            emitted_at,
            action,
        }) = d.frame.payload
        else {
            return None;
        };
        let feedback_frame = if action.feedback_requested {
            match self.fabric.send_new(
                adapter,
                [caller.clone()],
                ADAPTER_STREAM,
                Priority::Data,
                FrameBody::Payload(action.payload.clone()),
            ) {
                Ok(r) => Some(r.frame_id),
                Err(e) => {
                    tracing::warn!(%adapter, error = %e, "feedback send failed");
                    None
                }
            }
        } else {
            None
        };
        let record = ActionRecord {
            action_id: action.action_id,
            adapter_id: adapter.to_string(),
            caller,
            emitted_at,
            delivered_at: d.record.delivered_at,
            latency_ns: d.record.delivered_at.saturating_sub(emitted_at),
            feedback_frame,
        };
        self.action_log.lock().push(record.clone());
        Some(record)
    }

    pub fn action_log(&self) -> Vec<ActionRecord> {
        self.action_log.lock().clone()
    }

    pub fn write_action_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in self.action_log.lock().iter() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parse an adapter manifest (a JSON list of descriptors).
pub fn parse_manifest(json: &str) -> Result<Vec<AdapterDescriptor>, serde_json::Error> {
    serde_json::from_str(json)
}

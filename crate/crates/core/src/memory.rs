//! Short-term and long-term memory.
//!
//! Short-term memory (STM) is a bounded keyed working space and the only place
//! where the executive and the autonomous area meet. Every write bumps a global
//! revision. When a new key would exceed the capacity the least recently
//! touched entry is evicted; evictions at or above the consolidation threshold
//! become long-term traces, the rest are dropped.
//!
//! Long-term memory (LTM) holds graded-strength traces linked by cue
//! similarity. Recall strengthens what it returns (`s + α(1 − s)`); decay is
//! exponential in elapsed time with a removal floor.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonomous::{Interrupt, RunState, StatusReport};
use crate::clock::Nanos;
use crate::executive::{Directive, DirectiveAction};
use crate::modality::{signature_divergence, validate_payload, ModalityPayload, ModuleId, Signature};
use crate::scalar::Scalar;
use crate::ContextSignature;

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_STM_CAPACITY: usize = 256;
pub const DEFAULT_CONSOLIDATION_THRESHOLD: f64 = 0.6;
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_DECAY_PER_S: f64 = 1e-3;
pub const DEFAULT_STRENGTH_FLOOR: f64 = 0.02;
pub const DEFAULT_LINK_THRESHOLD: f64 = 0.5;

pub const STATUS_KEY: &str = "autonomous.status";
pub const INTERRUPT_KEY_PREFIX: &str = "autonomous.interrupt.";
pub const TAKEOVER_KEY_PREFIX: &str = "executive.takeover.";

/// Recall strengthening `s + α(1 − s)`.
pub fn strengthen<T: Scalar>(s: T, alpha: T) -> T {
    s + alpha * (T::one() - s)
}

/// Exponential decay `s · exp(−rate · dt)`.
pub fn decay<T: Scalar>(s: T, rate: T, dt: T) -> T {
    s * (-(rate * dt)).exp()
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid memory trace: {0}")]
    InvalidTrace(String),
    #[error("recall limit must be >= 1")]
    ZeroLimit,
    #[error("decay interval must be > 0")]
    NonPositiveInterval,
    #[error("restore failed: {reason}; STM reset empty at revision {revision}")]
    RestoreFault { reason: String, revision: u64 },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub stm_capacity: usize,
    pub consolidation_threshold: f64,
    pub alpha: f64,
    pub decay_rate_per_s: f64,
    pub strength_floor: f64,
    pub link_threshold: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            stm_capacity: DEFAULT_STM_CAPACITY,
            consolidation_threshold: DEFAULT_CONSOLIDATION_THRESHOLD,
            alpha: DEFAULT_ALPHA,
            decay_rate_per_s: DEFAULT_DECAY_PER_S,
            strength_floor: DEFAULT_STRENGTH_FLOOR,
            link_threshold: DEFAULT_LINK_THRESHOLD,
        }
    }
}

/// What an STM entry holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum StmBody {
    Payload(ModalityPayload),
    Directive(Directive),
    Status(StatusReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmEntry {
    pub key: String,
    pub payload: StmBody,
    pub signature: ContextSignature,
    pub revision: u64,
    pub strength: f64,
    pub last_touched: Nanos,
    pub author: ModuleId,
}

/// An STM write before a revision is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct StmWrite {
    pub key: String,
    pub payload: StmBody,
    pub signature: ContextSignature,
    pub strength: f64,
    pub author: ModuleId,
}

/// The latest autonomous status visible in STM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedStatus {
    pub report_revision: u64,
    pub proc_id: String,
    pub state: RunState,
    pub iteration: u32,
}

/// Aggregated context at one STM revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub revision: u64,
    pub features: ContextSignature,
    pub active_procedure: Option<String>,
    pub pending_interrupt: bool,
    /// Interrupts reported by the autonomous area that no TakeOver entry
    /// acknowledges yet.
    #[serde(default)]
    pub pending_interrupts: Vec<Interrupt>,
    #[serde(default)]
    pub autonomous_status: Option<ObservedStatus>,
}

impl ContextSnapshot {
    pub fn empty() -> Self {
        Self {
            revision: 0,
            features: Signature::new(),
            active_procedure: None,
            pending_interrupt: false,
            pending_interrupts: Vec::new(),
            autonomous_status: None,
        }
    }

    /// Environment context only; see [`Signature::sensory`].
    pub fn sensory(&self) -> ContextSignature {
        self.features.sensory()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub trace_id: u64,
    pub content: ModalityPayload,
    pub cue: ContextSignature,
    pub strength: f64,
    pub reference_count: u64,
    pub stored_at: Nanos,
    pub last_referenced: Nanos,
    pub links: BTreeSet<u64>,
}

/// A trace to store; ids, timestamps and links are assigned by the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSeed {
    pub content: ModalityPayload,
    pub cue: ContextSignature,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalled {
    pub trace: MemoryTrace,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionRecord {
    pub key: String,
    pub revision: u64,
    pub strength: f64,
    pub consolidated: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmPutOutcome {
    pub revision: u64,
    pub evicted: Option<EvictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmSummary {
    pub revision: u64,
    pub count: usize,
    pub capacity: usize,
    pub features: ContextSignature,
    pub keys: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StmFile {
    schema_version: u32,
    revision: u64,
    entries: Vec<StmEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LtmFile {
    schema_version: u32,
    next_trace_id: u64,
    traces: Vec<MemoryTrace>,
}

/// Long-term associative store.
#[derive(Debug, Clone, Default)]
pub struct Ltm {
    traces: BTreeMap<u64, MemoryTrace>,
    next_id: u64,
}

impl Ltm {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&MemoryTrace> {
        self.traces.get(&id)
    }

    pub fn traces(&self) -> impl Iterator<Item = &MemoryTrace> {
        self.traces.values()
    }

    fn store(&mut self, seed: TraceSeed, link_threshold: f64, now: Nanos) -> Result<u64, MemoryError> {
        if !(0.0..=1.0).contains(&seed.strength) {
            return Err(MemoryError::InvalidTrace(format!(
                "strength {} outside [0,1]",
                seed.strength
            )));
        }
        seed.cue
            .validate()
            .map_err(|e| MemoryError::InvalidTrace(e.to_string()))?;
        let violations = validate_payload(&seed.content);
        if !violations.is_empty() {
            return Err(MemoryError::InvalidTrace(format!("{} content violations", violations.len())));
        }
        self.next_id += 1;
        let id = self.next_id;
        let links: BTreeSet<u64> = self
            .traces
            .values()
            .filter(|t| 1.0 - signature_divergence(&t.cue, &seed.cue) >= link_threshold)
            .map(|t| t.trace_id)
            .collect();
        for l in &links {
            if let Some(t) = self.traces.get_mut(l) {
                t.links.insert(id);
            }
        }
        self.traces.insert(
            id,
            MemoryTrace {
                trace_id: id,
                content: seed.content,
                cue: seed.cue,
                strength: seed.strength,
                reference_count: 0,
                stored_at: now,
                last_referenced: now,
                links,
            },
        );
        Ok(id)
    }

    fn recall(
        &mut self,
        cue: &ContextSignature,
        limit: usize,
        alpha: f64,
        now: Nanos,
    ) -> Result<Vec<Recalled>, MemoryError> {
        if limit == 0 {
            return Err(MemoryError::ZeroLimit);
        }
        let mut ranked: Vec<(f64, Nanos, u64)> = self
            .traces
            .values()
            .map(|t| {
                let score = t.strength * (1.0 - signature_divergence(cue, &t.cue));
                (score, t.stored_at, t.trace_id)
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        ranked.truncate(limit);
        Ok(ranked
            .into_iter()
            .map(|(score, _, id)| {
                let t = self.traces.get_mut(&id).expect("ranked id exists");
                t.strength = strengthen(t.strength, alpha).min(1.0);
                t.reference_count += 1;
                t.last_referenced = now;
                Recalled {
                    trace: t.clone(),
                    score,
                }
            })
            .collect())
    }

    fn decay_tick(&mut self, rate: f64, dt_s: f64, floor: f64) -> usize {
        let mut decayed = 0;
        for t in self.traces.values_mut() {
            let next = decay(t.strength, rate, dt_s);
            if next != t.strength {
                decayed += 1;
            }
            t.strength = next;
        }
        let removed: Vec<u64> = self
            .traces
            .values()
            .filter(|t| t.strength < floor)
            .map(|t| t.trace_id)
            .collect();
        for id in &removed {
            self.traces.remove(id);
        }
        if !removed.is_empty() {
            for t in self.traces.values_mut() {
                for id in &removed {
                    t.links.remove(id);
                }
            }
        }
        decayed
    }
}

/// Both memory stores and the policy connecting them.
#[derive(Debug, Clone)]
pub struct Memory {
    config: MemoryConfig,
    entries: BTreeMap<String, StmEntry>,
    revision: u64,
    ltm: Ltm,
    evictions: Vec<EvictionRecord>,
    peak_count: usize,
}

impl Memory {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            config,
            entries: BTreeMap::new(),
            revision: 0,
            ltm: Ltm::default(),
            evictions: Vec::new(),
            peak_count: 0,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn stm_len(&self) -> usize {
        self.entries.len()
    }

    pub fn stm_peak(&self) -> usize {
        self.peak_count
    }

    pub fn stm_get(&self, key: &str) -> Option<&StmEntry> {
        self.entries.get(key)
    }

    pub fn stm_entries(&self) -> impl Iterator<Item = &StmEntry> {
        self.entries.values()
    }

    pub fn evictions(&self) -> &[EvictionRecord] {
        &self.evictions
    }

    pub fn ltm(&self) -> &Ltm {
        &self.ltm
    }

    /// Store an entry under its key and return the new global revision.
    pub fn stm_put(&mut self, write: StmWrite, now: Nanos) -> StmPutOutcome {
        let mut evicted = None;
        if !self.entries.contains_key(&write.key) && self.entries.len() >= self.config.stm_capacity {
            evicted = self.evict_lru(now);
        }
        self.revision += 1;
        let entry = StmEntry {
            key: write.key.clone(),
            payload: write.payload,
            signature: write.signature,
            revision: self.revision,
            strength: write.strength.clamp(0.0, 1.0),
            last_touched: now,
            author: write.author,
        };
        self.entries.insert(write.key, entry);
        self.peak_count = self.peak_count.max(self.entries.len());
        StmPutOutcome {
            revision: self.revision,
            evicted,
        }
    }

    fn evict_lru(&mut self, now: Nanos) -> Option<EvictionRecord> {
        let key = self
            .entries
            .values()
            .min_by_key(|e| (e.last_touched, e.revision))
            .map(|e| e.key.clone())?;
        let entry = self.entries.remove(&key)?;
        let consolidated = if entry.strength >= self.config.consolidation_threshold {
            let content = match &entry.payload {
                StmBody::Payload(p) => p.clone(),
                other => ModalityPayload::text(serde_json::to_string(other).unwrap_or_default()),
            };
            let seed = TraceSeed {
                content,
                cue: entry.signature.clone(),
                strength: entry.strength,
            };
            match self.ltm.store(seed, self.config.link_threshold, now) {
                Ok(id) => Some(id),
                Err(e) => {
                    tracing::warn!(key = %entry.key, error = %e, "consolidation failed");
                    None
                }
            }
        } else {
            tracing::debug!(key = %entry.key, strength = entry.strength, "stm entry dropped below consolidation threshold");
            None
        };
        let record = EvictionRecord {
            key: entry.key,
            revision: entry.revision,
            strength: entry.strength,
            consolidated,
        };
        self.evictions.push(record.clone());
        Some(record)
    }

    /// Context at the current revision.
    pub fn stm_snapshot(&self) -> ContextSnapshot {
        let mut features = Signature::new();
        let mut reported: Vec<Interrupt> = Vec::new();
        let mut acknowledged: BTreeSet<u64> = BTreeSet::new();
        for e in self.entries.values() {
            features.merge_max(&e.signature);
            match &e.payload {
                StmBody::Status(StatusReport {
                    interrupt: Some(i), ..
                }) => reported.push(i.clone()),
                StmBody::Directive(Directive {
                    action: DirectiveAction::TakeOver { interrupt_id, .. },
                    ..
                }) => {
                    acknowledged.insert(*interrupt_id);
                }
                _ => {}
            }
        }
        let pending: Vec<Interrupt> = reported
            .into_iter()
            .filter(|i| !acknowledged.contains(&i.interrupt_id))
            .collect();
        let autonomous_status = self.entries.get(STATUS_KEY).and_then(|e| match &e.payload {
            StmBody::Status(r) => Some(ObservedStatus {
                report_revision: e.revision,
                proc_id: r.proc_id.clone(),
                state: r.state,
                iteration: r.iteration,
            }),
            _ => None,
        });
        let active_procedure = autonomous_status
            .as_ref()
            .filter(|s| s.state == RunState::Running)
            .map(|s| s.proc_id.clone());
        ContextSnapshot {
            revision: self.revision,
            features,
            active_procedure,
            pending_interrupt: !pending.is_empty(),
            pending_interrupts: pending,
            autonomous_status,
        }
    }

    pub fn stm_summary(&self) -> StmSummary {
        StmSummary {
            revision: self.revision,
            count: self.entries.len(),
            capacity: self.config.stm_capacity,
            features: self.stm_snapshot().features,
            keys: self.entries.keys().cloned().collect(),
        }
    }

    /// Write STM to a versioned JSON file; returns the saved revision.
    pub fn stm_persist(&self, path: &Path) -> Result<u64, MemoryError> {
        let file = StmFile {
            schema_version: SCHEMA_VERSION,
            revision: self.revision,
            entries: self.entries.values().cloned().collect(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(self.revision)
    }

    /// Replace STM with the contents of a persisted file.
    ///
    /// On any failure STM is left empty with its revision advanced past both
    /// the current revision and whatever revision the file claims.
    pub fn stm_restore(&mut self, path: &Path) -> Result<u64, MemoryError> {
        let raw = match fs::read(path) {
            Ok(raw) => raw,
            Err(e) => return Err(self.fail_restore(e.to_string(), None)),
        };
        match serde_json::from_slice::<StmFile>(&raw) {
            Ok(file) if file.schema_version == SCHEMA_VERSION => {
                self.entries = file
                    .entries
                    .into_iter()
                    .map(|e| (e.key.clone(), e))
                    .collect();
                self.revision = file.revision;
                self.peak_count = self.peak_count.max(self.entries.len());
                Ok(file.revision)
            }
            Ok(file) => Err(self.fail_restore(
                format!("unsupported schema version {}", file.schema_version),
                Some(file.revision),
            )),
            Err(e) => {
                let claimed = scan_revision(&raw);
                Err(self.fail_restore(e.to_string(), claimed))
            }
        }
    }

    fn fail_restore(&mut self, reason: String, claimed: Option<u64>) -> MemoryError {
        self.entries.clear();
        self.revision = self.revision.max(claimed.unwrap_or(0)) + 1;
        tracing::warn!(%reason, revision = self.revision, "stm restore failed");
        MemoryError::RestoreFault {
            reason,
            revision: self.revision,
        }
    }

    pub fn ltm_store(&mut self, seed: TraceSeed, now: Nanos) -> Result<u64, MemoryError> {
        self.ltm.store(seed, self.config.link_threshold, now)
    }

    pub fn ltm_recall(
        &mut self,
        cue: &ContextSignature,
        limit: usize,
        now: Nanos,
    ) -> Result<Vec<Recalled>, MemoryError> {
        self.ltm.recall(cue, limit, self.config.alpha, now)
    }

    /// Decay every trace over `dt_ns`; returns how many traces changed.
    pub fn decay_tick(&mut self, dt_ns: Nanos) -> Result<usize, MemoryError> {
        if dt_ns == 0 {
            return Err(MemoryError::NonPositiveInterval);
        }
        Ok(self.decay_seconds(dt_ns as f64 / 1e9))
    }

    /// Decay over `dt_s` seconds.
    pub fn decay_seconds(&mut self, dt_s: f64) -> usize {
        self.ltm
            .decay_tick(self.config.decay_rate_per_s, dt_s, self.config.strength_floor)
    }

    pub fn ltm_dump(&self, path: &Path) -> Result<(), MemoryError> {
        let file = LtmFile {
            schema_version: SCHEMA_VERSION,
            next_trace_id: self.ltm.next_id,
            traces: self.ltm.traces.values().cloned().collect(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn ltm_load(&mut self, path: &Path) -> Result<usize, MemoryError> {
        let file: LtmFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(MemoryError::SchemaVersion(file.schema_version));
        }
        self.ltm.next_id = file.next_trace_id;
        self.ltm.traces = file.traces.into_iter().map(|t| (t.trace_id, t)).collect();
        Ok(self.ltm.len())
    }
}

impl Default for Memory {
    fn default() -> Self {
        Self::new(MemoryConfig::default())
    }
}

fn scan_revision(raw: &[u8]) -> Option<u64> {
    let text = String::from_utf8_lossy(raw);
    let at = text.find("\"revision\"")?;
    let rest = text[at + "\"revision\"".len()..].trim_start().strip_prefix(':')?;
    let digits: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sig(pairs: &[(&str, f64)]) -> ContextSignature {
        Signature::from_pairs(pairs.iter().map(|(k, v)| (k.to_string(), *v))).unwrap()
    }

    fn write(key: &str, strength: f64, s: ContextSignature) -> StmWrite {
        StmWrite {
            key: key.to_string(),
            payload: StmBody::Payload(ModalityPayload::text(key)),
            signature: s,
            strength,
            author: ModuleId::io(),
        }
    }

    fn mem(k: usize) -> Memory {
        Memory::new(MemoryConfig {
            stm_capacity: k,
            ..MemoryConfig::default()
        })
    }

    #[test]
    fn evicts_lru_and_consolidates_strong() {
        let mut m = mem(3);
        m.stm_put(write("a", 0.9, sig(&[("a", 1.0)])), 1);
        m.stm_put(write("b", 0.5, Signature::new()), 2);
        m.stm_put(write("c", 0.5, Signature::new()), 3);
        let out = m.stm_put(write("d", 0.5, Signature::new()), 4);
        let ev = out.evicted.unwrap();
        assert_eq!(ev.key, "a");
        let id = ev.consolidated.unwrap();
        assert_eq!(m.ltm().get(id).unwrap().cue, sig(&[("a", 1.0)]));
        assert_eq!(m.stm_len(), 3);
        assert!(m.stm_get("a").is_none());
    }

    #[test]
    fn evicts_weak_without_consolidation() {
        let mut m = mem(3);
        m.stm_put(write("a", 0.1, Signature::new()), 1);
        for (t, k) in ["b", "c", "d"].iter().enumerate() {
            m.stm_put(write(k, 0.9, Signature::new()), 2 + t as u64);
        }
        assert_eq!(m.evictions().len(), 1);
        assert_eq!(m.evictions()[0].consolidated, None);
        assert!(m.ltm().is_empty());
    }

    #[test]
    fn overwrite_keeps_count_bumps_revision() {
        let mut m = mem(3);
        m.stm_put(write("a", 0.5, Signature::new()), 1);
        let r0 = m.revision();
        m.stm_put(write("a", 0.5, Signature::new()), 2);
        m.stm_put(write("a", 0.5, Signature::new()), 3);
        assert_eq!(m.stm_len(), 1);
        assert_eq!(m.revision(), r0 + 2);
    }

    #[test]
    fn touching_refreshes_lru_position() {
        let mut m = mem(2);
        m.stm_put(write("a", 0.1, Signature::new()), 1);
        m.stm_put(write("b", 0.1, Signature::new()), 2);
        m.stm_put(write("a", 0.1, Signature::new()), 3);
        let ev = m.stm_put(write("c", 0.1, Signature::new()), 4).evicted.unwrap();
        assert_eq!(ev.key, "b");
    }

    #[test]
    fn snapshot_basics() {
        let mut m = mem(8);
        let s = m.stm_snapshot();
        assert_eq!(s.revision, 0);
        assert!(s.features.is_empty());
        m.stm_put(write("x", 0.5, sig(&[("path", 1.0)])), 1);
        assert_eq!(m.stm_snapshot().features, sig(&[("path", 1.0)]));
        m.stm_put(write("y", 0.5, sig(&[("a", 0.3)])), 2);
        m.stm_put(write("z", 0.5, sig(&[("a", 0.8)])), 3);
        assert_eq!(m.stm_snapshot().features.get("a"), 0.8);
        assert_eq!(m.stm_snapshot(), m.stm_snapshot());
    }

    #[test]
    fn persist_restore_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stm.json");
        let mut m = mem(8);
        m.stm_put(write("x", 0.123_456_789_012_345_68, sig(&[("a", 0.1 + 0.2)])), 17);
        m.stm_put(write("y", 1.0 / 3.0, sig(&[("b", std::f64::consts::FRAC_1_SQRT_2)])), 18);
        assert_eq!(m.stm_persist(&path).unwrap(), 2);
        let snap = m.stm_snapshot();
        let entries: Vec<StmEntry> = m.stm_entries().cloned().collect();
        let mut fresh = mem(8);
        assert_eq!(fresh.stm_restore(&path).unwrap(), 2);
        assert_eq!(fresh.stm_snapshot(), snap);
        let restored: Vec<StmEntry> = fresh.stm_entries().cloned().collect();
        assert_eq!(restored, entries);
        for (a, b) in restored.iter().zip(&entries) {
            assert_eq!(a.strength.to_bits(), b.strength.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_restore_fault() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stm.json");
        let mut m = mem(8);
        for i in 0..5 {
            m.stm_put(write(&format!("k{i}"), 0.5, Signature::new()), i);
        }
        m.stm_persist(&path).unwrap();
        let raw = fs::read(&path).unwrap();
        fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        let mut fresh = mem(8);
        let err = fresh.stm_restore(&path).unwrap_err();
        assert!(matches!(err, MemoryError::RestoreFault { revision: 6, .. }));
        assert_eq!(fresh.stm_len(), 0);
        assert_eq!(fresh.revision(), 6);
    }

    #[test]
    fn persist_revision_follows_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stm.json");
        let mut m = mem(64);
        for i in 0..41 {
            m.stm_put(write("k", 0.5, Signature::new()), i);
        }
        assert_eq!(m.stm_persist(&path).unwrap(), 41);
        m.stm_put(write("k", 0.5, Signature::new()), 99);
        assert_eq!(m.stm_persist(&path).unwrap(), 42);
    }

    fn seed(cue: ContextSignature, s: f64) -> TraceSeed {
        TraceSeed {
            content: ModalityPayload::text("t"),
            cue,
            strength: s,
        }
    }

    #[test]
    fn linking_rules() {
        let mut m = mem(8);
        let a = m.ltm_store(seed(sig(&[("x", 1.0)]), 0.5), 1).unwrap();
        assert!(m.ltm().get(a).unwrap().links.is_empty());
        let b = m.ltm_store(seed(sig(&[("x", 1.0)]), 0.5), 2).unwrap();
        assert!(m.ltm().get(a).unwrap().links.contains(&b));
        assert!(m.ltm().get(b).unwrap().links.contains(&a));
        let c = m.ltm_store(seed(sig(&[("x", 0.1)]), 0.5), 3).unwrap();
        assert!(m.ltm().get(c).unwrap().links.is_empty());
    }

    #[test]
    fn recall_strengthens() {
        let mut m = mem(8);
        let cue = sig(&[("x", 1.0)]);
        let id = m.ltm_store(seed(cue.clone(), 0.5), 1).unwrap();
        let r = m.ltm_recall(&cue, 3, 10).unwrap();
        assert_eq!(r[0].trace.trace_id, id);
        assert_abs_diff_eq!(r[0].trace.strength, 0.6, epsilon = 1e-12);
        assert_eq!(r[0].trace.reference_count, 1);
        assert_eq!(r[0].trace.last_referenced, 10);
    }

    #[test]
    fn full_strength_is_fixed_point() {
        let mut m = mem(8);
        let cue = sig(&[("x", 1.0)]);
        m.ltm_store(seed(cue.clone(), 1.0), 1).unwrap();
        assert_eq!(m.ltm_recall(&cue, 1, 2).unwrap()[0].trace.strength, 1.0);
    }

    #[test]
    fn recall_ranks_and_limits() {
        let mut m = mem(8);
        let cue = sig(&[("x", 1.0)]);
        let hi = m.ltm_store(seed(cue.clone(), 0.4), 1).unwrap();
        let lo = m.ltm_store(seed(cue.clone(), 0.3), 2).unwrap();
        let r = m.ltm_recall(&cue, 1, 5).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].trace.trace_id, hi);
        assert_abs_diff_eq!(r[0].score, 0.4, epsilon = 1e-12);
        assert_eq!(m.ltm().get(lo).unwrap().strength, 0.3);
        assert!(m.ltm().get(hi).unwrap().strength > 0.4);
    }

    #[test]
    fn recall_ties_prefer_older() {
        let mut m = mem(8);
        let cue = sig(&[("x", 1.0)]);
        let newer = m.ltm_store(seed(cue.clone(), 0.5), 9).unwrap();
        let older = {
            let id = m.ltm_store(seed(cue.clone(), 0.5), 10).unwrap();
            m.ltm.traces.get_mut(&id).unwrap().stored_at = 1;
            id
        };
        let r = m.ltm_recall(&cue, 2, 20).unwrap();
        assert_eq!(r[0].trace.trace_id, older);
        assert_eq!(r[1].trace.trace_id, newer);
    }

    #[test]
    fn empty_recall_and_zero_limit() {
        let mut m = mem(8);
        assert!(m.ltm_recall(&Signature::new(), 3, 0).unwrap().is_empty());
        assert!(matches!(m.ltm_recall(&Signature::new(), 0, 0), Err(MemoryError::ZeroLimit)));
    }

    #[test]
    fn decay_cases() {
        let mut zero = Memory::new(MemoryConfig {
            decay_rate_per_s: 0.0,
            ..MemoryConfig::default()
        });
        let id = zero.ltm_store(seed(Signature::new(), 0.8), 0).unwrap();
        assert_eq!(zero.decay_seconds(100.0), 0);
        assert_eq!(zero.ltm().get(id).unwrap().strength, 0.8);

        let mut m = Memory::new(MemoryConfig {
            decay_rate_per_s: 1.0,
            ..MemoryConfig::default()
        });
        let id = m.ltm_store(seed(Signature::new(), 0.8), 0).unwrap();
        m.decay_seconds(std::f64::consts::LN_2);
        assert_abs_diff_eq!(m.ltm().get(id).unwrap().strength, 0.4, epsilon = 1e-12);

        let mut m = Memory::new(MemoryConfig {
            strength_floor: 0.02,
            ..MemoryConfig::default()
        });
        let weak = m.ltm_store(seed(sig(&[("y", 1.0)]), 0.01), 0).unwrap();
        let strong = m.ltm_store(seed(sig(&[("y", 1.0)]), 0.9), 0).unwrap();
        assert!(m.ltm().get(strong).unwrap().links.contains(&weak));
        m.decay_tick(1_000_000).unwrap();
        assert!(m.ltm().get(weak).is_none());
        assert!(m.ltm().get(strong).unwrap().links.is_empty());
        assert!(matches!(m.decay_tick(0), Err(MemoryError::NonPositiveInterval)));
    }

    #[test]
    fn generic_kernels() {
        assert_abs_diff_eq!(strengthen(0.5f32, 0.2), 0.6, epsilon = 1e-6);
        assert_abs_diff_eq!(decay(0.8f64, 1.0, std::f64::consts::LN_2), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn ltm_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ltm.json");
        let mut m = mem(8);
        m.ltm_store(seed(sig(&[("x", 0.7)]), 0.3), 5).unwrap();
        m.ltm_store(seed(sig(&[("x", 0.7)]), 0.9), 6).unwrap();
        m.ltm_dump(&path).unwrap();
        let mut fresh = mem(8);
        assert_eq!(fresh.ltm_load(&path).unwrap(), 2);
        let a: Vec<_> = m.ltm().traces().cloned().collect();
        let b: Vec<_> = fresh.ltm().traces().cloned().collect();
        assert_eq!(a, b);
        let next = fresh.ltm_store(seed(Signature::new(), 0.5), 7).unwrap();
        assert_eq!(next, 3);
    }

    #[test]
    fn phased_transition_keeps_both_copies() {
        let mut m = mem(1);
        let cue = sig(&[("smell.Numeric", 1.0)]);
        m.stm_put(write("food", 0.9, cue.clone()), 1);
        m.stm_put(write("other", 0.1, Signature::new()), 2);
        m.stm_put(write("food", 0.9, cue.clone()), 3);
        assert!(m.stm_get("food").is_some());
        assert_eq!(m.stm_snapshot().features.get("smell.Numeric"), 1.0);
        let r = m.ltm_recall(&cue, 1, 4).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].trace.cue, cue);
    }
}

//! Scenario files.
//!
//! A scenario is a JSON document describing the modules, adapters, stored
//! procedures, initial program, LTM seed and a timeline of injections, plus
//! the expectations a run is judged against. Procedure and adapter lists may
//! be given inline or as paths relative to the scenario file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ogi_core::autonomous::StoredProcedure;
use ogi_core::dps::{ExternalProgram, ModuleEntry, ModuleRegistry, ProfileTable};
use ogi_core::io::AdapterDescriptor;
use ogi_core::kernel::{KernelConfig, KernelSetup, TimelineEvent};
use ogi_core::memory::TraceSeed;
use ogi_core::modality::ModalityPayload;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::expect::Expectation;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Either an inline list or a path to a JSON file holding one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    Items(Vec<T>),
    File(PathBuf),
}

impl<T> Default for Inline<T> {
    fn default() -> Self {
        Inline::Items(Vec::new())
    }
}

/// One timeline entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Inject {
        at_ms: u64,
        adapter_id: String,
        payload: ModalityPayload,
    },
    Register {
        at_ms: u64,
        register: AdapterDescriptor,
    },
}

impl Step {
    pub fn at_ms(&self) -> u64 {
        match self {
            Step::Inject { at_ms, .. } | Step::Register { at_ms, .. } => *at_ms,
        }
    }

    fn into_event(self) -> TimelineEvent {
        match self {
            Step::Inject {
                at_ms,
                adapter_id,
                payload,
            } => TimelineEvent::Inject {
                at_ms,
                adapter_id,
                payload,
            },
            Step::Register { at_ms, register } => TimelineEvent::Register {
                at_ms,
                adapter: register,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon_ms: u64,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub modules: Vec<ModuleEntry>,
    #[serde(default)]
    pub adapters: Inline<AdapterDescriptor>,
    #[serde(default)]
    pub procedures: Inline<StoredProcedure>,
    pub program: ExternalProgram,
    #[serde(default)]
    pub profiles: Option<ProfileTable>,
    #[serde(default)]
    pub ltm_seed: Vec<TraceSeed>,
    #[serde(default)]
    pub timeline: Vec<Step>,
    #[serde(default)]
    pub expectations: Vec<Expectation>,
}

/// A scenario with every file reference read and every id checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub scenario: Scenario,
    pub adapters: Vec<AdapterDescriptor>,
    pub procedures: Vec<StoredProcedure>,
    pub registry: ModuleRegistry,
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, v: Value) -> Result<T, LoadError> {
    serde_json::from_value(v).map_err(|source| LoadError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Set a dotted path inside a JSON document. Array elements are addressed by
/// index; missing object keys are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), LoadError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LoadError::Override(assignment.into(), "expected key=value".into()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| LoadError::Override(assignment.into(), format!("`{part}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| LoadError::Override(assignment.into(), format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(LoadError::Override(assignment.into(), format!("`{part}` is not inside an object or array"))),
        };
    }
    Err(LoadError::Override(assignment.into(), "empty key".into()))
}

impl Scenario {
    pub fn from_value(path: &Path, v: Value) -> Result<Self, LoadError> {
        parse(path, v)
    }

    /// Read a scenario file and apply `key=value` overrides before decoding.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Resolved, LoadError> {
        let text = read(path)?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|source| LoadError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(path, doc)?.resolve(base)
    }

    /// Read referenced files relative to `base` and check the invariants.
    pub fn resolve(self, base: &Path) -> Result<Resolved, LoadError> {
        let adapters = load_list(&self.adapters, base)?;
        let procedures = load_list(&self.procedures, base)?;
        let registry = ModuleRegistry::new(self.modules.clone()).map_err(|e| LoadError::Invalid(e.to_string()))?;
        let resolved = Resolved {
            scenario: self,
            adapters,
            procedures,
            registry,
        };
        resolved.check()?;
        Ok(resolved)
    }
}

fn load_list<T: for<'de> Deserialize<'de> + Clone>(list: &Inline<T>, base: &Path) -> Result<Vec<T>, LoadError> {
    match list {
        Inline::Items(v) => Ok(v.clone()),
        Inline::File(p) => {
            let path = base.join(p);
            let text = read(&path)?;
            let v: Value = serde_json::from_str(&text).map_err(|source| LoadError::Parse {
                path: path.clone(),
                source,
            })?;
            parse(&path, v)
        }
    }
}

impl Resolved {
    fn check(&self) -> Result<(), LoadError> {
        let s = &self.scenario;
        let bad = |m: String| Err(LoadError::Invalid(m));
        if s.horizon_ms == 0 {
            return bad("horizon_ms must be > 0".into());
        }
        s.program
            .validate(&self.registry)
            .map_err(|e| LoadError::Invalid(format!("program: {e}")))?;
        s.kernel
            .fabric
            .validate()
            .map_err(|e| LoadError::Invalid(format!("fabric: {e}")))?;

        let mut known: BTreeSet<&str> = BTreeSet::new();
        for a in &self.adapters {
            if !known.insert(a.adapter_id.as_str()) {
                return bad(format!("duplicate adapter `{}`", a.adapter_id));
            }
        }
        let mut procs = BTreeSet::new();
        for p in &self.procedures {
            p.validate().map_err(LoadError::Invalid)?;
            if !procs.insert(p.proc_id.as_str()) {
                return bad(format!("duplicate procedure `{}`", p.proc_id));
            }
        }

        let mut last = 0;
        for (i, step) in s.timeline.iter().enumerate() {
            if step.at_ms() < last {
                return bad(format!("timeline[{i}]: offsets must be non-decreasing"));
            }
            last = step.at_ms();
            match step {
                Step::Register { register, .. } => {
                    if !known.insert(register.adapter_id.as_str()) {
                        return bad(format!("timeline[{i}]: adapter `{}` already registered", register.adapter_id));
                    }
                }
                Step::Inject { adapter_id, .. } => {
                    if !known.contains(adapter_id.as_str()) {
                        return bad(format!("timeline[{i}]: unknown adapter `{adapter_id}`"));
                    }
                }
            }
        }
        for p in &self.procedures {
            for a in &p.steps {
                if !known.contains(a.adapter_id.as_str()) {
                    return bad(format!("procedure `{}`: unknown adapter `{}`", p.proc_id, a.adapter_id));
                }
            }
        }
        for ins in &s.program.instructions {
            match ogi_core::executive::parse_instruction(ins) {
                None => return bad(format!("program: unparseable instruction `{ins}`")),
                Some(ogi_core::executive::Instruction::Dispatch { proc_id, .. }) if !procs.contains(proc_id.as_str()) => {
                    return bad(format!("program: dispatch names unknown procedure `{proc_id}`"));
                }
                Some(ogi_core::executive::Instruction::SafeAction { adapter_id, .. })
                    if !known.contains(adapter_id.as_str()) =>
                {
                    return bad(format!("program: safe-action names unknown adapter `{adapter_id}`"));
                }
                _ => {}
            }
        }
        for (i, e) in s.expectations.iter().enumerate() {
            e.check().map_err(|m| LoadError::Invalid(format!("expectations[{i}]: {m}")))?;
        }
        Ok(())
    }

    /// Build a fresh kernel setup and its timeline.
    pub fn kernel_setup(&self) -> (KernelSetup, Vec<TimelineEvent>) {
        let s = &self.scenario;
        let mut setup = KernelSetup::new(self.registry.clone(), s.program.clone());
        setup.config = s.kernel.clone();
        setup.config.fabric.seed = s.seed;
        setup.profiles = s.profiles.clone();
        setup.adapters = self.adapters.clone();
        setup.procedures = self.procedures.clone();
        setup.ltm_seed = s.ltm_seed.clone();
        let events = s.timeline.iter().cloned().map(Step::into_event).collect();
        (setup, events)
    }
}

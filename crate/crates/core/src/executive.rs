//! Executive control area.
//!
//! Each tick reads one STM snapshot, recalls long-term memory with the sensory
//! context as cue and hands (snapshot, program, fresh interrupts, recalls) to a
//! pure [`ExecutivePolicy`]. Directives are dispatched only once the policy
//! has produced the full list. Ticks are revision-gated: with no new STM
//! revision from outside the executive and no new interrupt, nothing happens.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonomous::Interrupt;
use crate::clock::Nanos;
use crate::dps::{Dps, ExternalProgram, ProfileId};
use crate::fabric::Fabric;
use crate::io::{ActionDescriptor, Io};
use crate::memory::{ContextSnapshot, Memory, Recalled, StmBody, StmWrite, TraceSeed, TAKEOVER_KEY_PREFIX};
use crate::modality::{ControlBody, FrameBody, ModalityKind, ModalityPayload, ModuleId, Priority, Signature};

pub const DEFAULT_RECALL_LIMIT: usize = 3;
pub const DIRECTIVE_STRENGTH: f64 = 0.3;
pub const DECISION_STRENGTH: f64 = 0.7;
pub const COMPLETE_FEATURE: &str = "executive.complete";
pub const DISPATCH_STREAM: u64 = 1;
pub const PROCEDURE_PREFIX: &str = "procedure:";
pub const HALT_SAFE: &str = "halt-safe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DirectiveKind {
    DispatchProcedure,
    TakeOver,
    SelectProfile,
    EmitAction,
    RecordDecision,
    Complete,
}

impl DirectiveKind {
    pub const ALL: [DirectiveKind; 6] = [
        DirectiveKind::DispatchProcedure,
        DirectiveKind::TakeOver,
        DirectiveKind::SelectProfile,
        DirectiveKind::EmitAction,
        DirectiveKind::RecordDecision,
        DirectiveKind::Complete,
    ];

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.to_string() == s)
    }
}

impl fmt::Display for DirectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "argument")]
pub enum DirectiveAction {
    DispatchProcedure {
        proc_id: String,
        interrupt_id: Option<u64>,
    },
    TakeOver {
        interrupt_id: u64,
        proc_id: String,
    },
    SelectProfile {
        profile: ProfileId,
    },
    EmitAction {
        action: ActionDescriptor,
    },
    RecordDecision {
        summary: String,
    },
    Complete {
        goal: String,
    },
}

impl DirectiveAction {
    pub fn kind(&self) -> DirectiveKind {
        match self {
            DirectiveAction::DispatchProcedure { .. } => DirectiveKind::DispatchProcedure,
            DirectiveAction::TakeOver { .. } => DirectiveKind::TakeOver,
            DirectiveAction::SelectProfile { .. } => DirectiveKind::SelectProfile,
            DirectiveAction::EmitAction { .. } => DirectiveKind::EmitAction,
            DirectiveAction::RecordDecision { .. } => DirectiveKind::RecordDecision,
            DirectiveAction::Complete { .. } => DirectiveKind::Complete,
        }
    }

    fn stm_key(&self) -> String {
        match self {
            DirectiveAction::TakeOver { interrupt_id, .. } => format!("{TAKEOVER_KEY_PREFIX}{interrupt_id}"),
            DirectiveAction::DispatchProcedure { proc_id, .. } => format!("executive.dispatched.{proc_id}"),
            DirectiveAction::SelectProfile { .. } => "executive.profile".into(),
            DirectiveAction::EmitAction { .. } => "executive.action".into(),
            DirectiveAction::RecordDecision { .. } => "executive.decision".into(),
            DirectiveAction::Complete { .. } => COMPLETE_FEATURE.into(),
        }
    }

    fn stm_signature(&self) -> Signature<f64> {
        let key = match self {
            DirectiveAction::SelectProfile { profile } => format!("executive.profile.{profile}"),
            _ => self.stm_key(),
        };
        let mut s = Signature::new();
        s.features.insert(key, 1.0);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub directive_id: u64,
    #[serde(flatten)]
    pub action: DirectiveAction,
    pub issued_at_revision: u64,
    pub issued_at: Nanos,
}

/// Everything a policy may look at.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub snapshot: &'a ContextSnapshot,
    pub program: &'a ExternalProgram,
    pub interrupts: &'a [Interrupt],
    /// Recall results with the sensory context as cue.
    pub recalls: &'a [Recalled],
    /// Recall results per interrupt, with its observed context as cue.
    pub interrupt_recalls: &'a [Vec<Recalled>],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy fault: {0}")]
pub struct PolicyFault(pub String);

/// Decision rule. Implementations must be pure functions of their input.
pub trait ExecutivePolicy: Send + Sync + fmt::Debug {
    fn decide(&self, input: &PolicyInput<'_>) -> Result<Vec<DirectiveAction>, PolicyFault>;
}

/// One parsed line of the program's instructions.
#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    Require { feature: String, min: f64 },
    Dispatch { proc_id: String, feature: String, min: f64 },
    SafeAction { adapter_id: String, kind: ModalityKind },
}

/// Parse the instruction grammar:
///
/// ```text
/// require <feature> >= <value>
/// dispatch <proc_id> when <feature> >= <value>
/// safe-action <adapter_id> <Kind>
/// ```
///
/// Lines that match none of these are free text and yield `None`.
pub fn parse_instruction(line: &str) -> Option<Instruction> {
    let words: Vec<&str> = line.split_whitespace().collect();
    match words.as_slice() {
        ["require", feature, ">=", v] => Some(Instruction::Require {
            feature: feature.to_string(),
            min: v.parse().ok()?,
        }),
        ["dispatch", proc_id, "when", feature, ">=", v] => Some(Instruction::Dispatch {
            proc_id: proc_id.to_string(),
            feature: feature.to_string(),
            min: v.parse().ok()?,
        }),
        ["safe-action", adapter, kind] => Some(Instruction::SafeAction {
            adapter_id: adapter.to_string(),
            kind: ModalityKind::from_name(kind)?,
        }),
        _ => None,
    }
}

fn neutral_payload(kind: ModalityKind) -> Option<ModalityPayload> {
    Some(match kind {
        ModalityKind::Text => ModalityPayload::text(HALT_SAFE),
        ModalityKind::Numeric => ModalityPayload::numeric(vec![0.0]),
        ModalityKind::Audio => ModalityPayload::audio(vec![0.0]),
        ModalityKind::Image => ModalityPayload::image(1, 1, vec![0.0]),
        ModalityKind::Tactile => ModalityPayload::tactile(0.0),
        ModalityKind::Composite => return None,
    })
}

/// Default deterministic rule table.
///
/// * interrupt: TakeOver; DispatchProcedure when a recalled trace reads
///   `procedure:<id>`, else EmitAction(halt-safe); SelectProfile(Logical);
///   RecordDecision.
/// * all `require` lines satisfied: Complete and RecordDecision, once.
/// * `dispatch` line satisfied: DispatchProcedure and RecordDecision, once.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTablePolicy;

impl ExecutivePolicy for RuleTablePolicy {
    fn decide(&self, input: &PolicyInput<'_>) -> Result<Vec<DirectiveAction>, PolicyFault> {
        let instructions: Vec<Instruction> = input
            .program
            .instructions
            .iter()
            .filter_map(|l| parse_instruction(l))
            .collect();
        let features = &input.snapshot.features;
        let mut out = Vec::new();

        for (n, i) in input.interrupts.iter().enumerate() {
            out.push(DirectiveAction::TakeOver {
                interrupt_id: i.interrupt_id,
                proc_id: i.proc_id.clone(),
            });
            let named = input
                .interrupt_recalls
                .get(n)
                .into_iter()
                .flatten()
                .find_map(|r| r.trace.content.as_text()?.strip_prefix(PROCEDURE_PREFIX))
                .map(|p| p.trim().to_string());
            let decision = match named {
                Some(proc_id) => {
                    let summary = format!("interrupt {} on {}: dispatch {proc_id}", i.interrupt_id, i.proc_id);
                    out.push(DirectiveAction::DispatchProcedure {
                        proc_id,
                        interrupt_id: Some(i.interrupt_id),
                    });
                    summary
                }
                None => {
                    let (adapter_id, payload) = instructions
                        .iter()
                        .find_map(|ins| match ins {
                            Instruction::SafeAction { adapter_id, kind } => {
                                Some((adapter_id.clone(), neutral_payload(*kind)?))
                            }
                            _ => None,
                        })
                        .unwrap_or_else(|| (HALT_SAFE.to_string(), ModalityPayload::text(HALT_SAFE)));
                    out.push(DirectiveAction::EmitAction {
                        action: ActionDescriptor {
                            action_id: format!("{HALT_SAFE}-{}", i.interrupt_id),
                            adapter_id,
                            payload,
                            feedback_requested: false,
                        },
                    });
                    format!("interrupt {} on {}: halt-safe", i.interrupt_id, i.proc_id)
                }
            };
            if features.get("executive.profile.Logical") == 0.0 && n == 0 {
                out.push(DirectiveAction::SelectProfile {
                    profile: ProfileId::Logical,
                });
            }
            out.push(DirectiveAction::RecordDecision { summary: decision });
        }

        let requires: Vec<(&String, f64)> = instructions
            .iter()
            .filter_map(|ins| match ins {
                Instruction::Require { feature, min } => Some((feature, *min)),
                _ => None,
            })
            .collect();
        if !requires.is_empty()
            && features.get(COMPLETE_FEATURE) == 0.0
            && requires.iter().all(|(f, min)| features.get(f) >= *min)
        {
            let goal = input.program.primary_goal.clone();
            out.push(DirectiveAction::Complete { goal: goal.clone() });
            out.push(DirectiveAction::RecordDecision {
                summary: format!("complete: {goal}"),
            });
        }

        for ins in &instructions {
            if let Instruction::Dispatch { proc_id, feature, min } = ins {
                let marker = format!("executive.dispatched.{proc_id}");
                let already = features.get(&marker) > 0.0
                    || input.snapshot.active_procedure.as_deref() == Some(proc_id.as_str())
                    || out.iter().any(|d| {
                        matches!(d, DirectiveAction::DispatchProcedure { proc_id: p, .. } if p == proc_id)
                    });
                if !already && features.get(feature) >= *min {
                    out.push(DirectiveAction::DispatchProcedure {
                        proc_id: proc_id.clone(),
                        interrupt_id: None,
                    });
                    out.push(DirectiveAction::RecordDecision {
                        summary: format!("dispatch {proc_id}: {feature} >= {min}"),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// One executive look at autonomous state and the STM revision it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub snapshot_revision: u64,
    pub report_revision: u64,
}

#[derive(Debug, Error)]
pub enum ExecutiveError {
    #[error(transparent)]
    Policy(#[from] PolicyFault),
}

/// Kernel services a tick dispatches through.
pub struct ExecutiveEnv<'a> {
    pub memory: &'a mut Memory,
    pub dps: &'a Dps,
    pub fabric: &'a Fabric,
    pub io: &'a Io,
    pub now: Nanos,
}

#[derive(Debug)]
pub struct Executive {
    id: ModuleId,
    policy: Box<dyn ExecutivePolicy>,
    recall_limit: usize,
    last_revision: u64,
    seen_interrupts: BTreeSet<u64>,
    next_directive_id: u64,
    log: Vec<Directive>,
    observations: Vec<Observation>,
    ticks: u64,
    effect_failures: u64,
}

impl Default for Executive {
    fn default() -> Self {
        Self::new(Box::new(RuleTablePolicy))
    }
}

impl Executive {
    pub fn new(policy: Box<dyn ExecutivePolicy>) -> Self {
        Self {
            id: ModuleId::executive(),
            policy,
            recall_limit: DEFAULT_RECALL_LIMIT,
            last_revision: 0,
            seen_interrupts: BTreeSet::new(),
            next_directive_id: 1,
            log: Vec::new(),
            observations: Vec::new(),
            ticks: 0,
            effect_failures: 0,
        }
    }

    pub fn decision_log(&self) -> &[Directive] {
        &self.log
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// STM revision after this executive's own writes in its last tick.
    pub fn last_revision(&self) -> u64 {
        self.last_revision
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn effect_failures(&self) -> u64 {
        self.effect_failures
    }

    pub fn write_decision_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in &self.log {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Run one tick with the interrupts delivered since the previous one.
    pub fn tick(&mut self, delivered: Vec<Interrupt>, env: &mut ExecutiveEnv<'_>) -> Result<Vec<Directive>, ExecutiveError> {
        self.ticks += 1;
        let snapshot = env.memory.stm_snapshot();
        let mut fresh: Vec<Interrupt> = Vec::new();
        for i in delivered.into_iter().chain(snapshot.pending_interrupts.iter().cloned()) {
            if !self.seen_interrupts.contains(&i.interrupt_id) && !fresh.iter().any(|f| f.interrupt_id == i.interrupt_id) {
                fresh.push(i);
            }
        }
        fresh.sort_by_key(|i| i.interrupt_id);
        if fresh.is_empty() && snapshot.revision == self.last_revision {
            return Ok(Vec::new());
        }

        let program = env.dps.program();
        let cue = snapshot.sensory();
        let recalls = env.memory.ltm_recall(&cue, self.recall_limit, env.now).unwrap_or_default();
        let interrupt_recalls: Vec<Vec<Recalled>> = fresh
            .iter()
            .map(|i| {
                env.memory
                    .ltm_recall(&i.observed.sensory(), self.recall_limit, env.now)
                    .unwrap_or_default()
            })
            .collect();
        let actions = self.policy.decide(&PolicyInput {
            snapshot: &snapshot,
            program: &program,
            interrupts: &fresh,
            recalls: &recalls,
            interrupt_recalls: &interrupt_recalls,
        })?;

        if let Some(s) = &snapshot.autonomous_status {
            self.observations.push(Observation {
                snapshot_revision: snapshot.revision,
                report_revision: s.report_revision,
            });
        }
        for i in &fresh {
            self.observations.push(Observation {
                snapshot_revision: snapshot.revision,
                report_revision: i.report_revision,
            });
            self.seen_interrupts.insert(i.interrupt_id);
        }

        let directives: Vec<Directive> = actions
            .into_iter()
            .map(|action| {
                let d = Directive {
                    directive_id: self.next_directive_id,
                    action,
                    issued_at_revision: snapshot.revision,
                    issued_at: env.now,
                };
                self.next_directive_id += 1;
                d
            })
            .collect();
        for d in &directives {
            self.dispatch(d, &snapshot, env);
        }
        self.log.extend(directives.iter().cloned());
        self.last_revision = env.memory.revision();
        Ok(directives)
    }

    fn dispatch(&mut self, d: &Directive, snapshot: &ContextSnapshot, env: &mut ExecutiveEnv<'_>) {
        env.memory.stm_put(
            StmWrite {
                key: d.action.stm_key(),
                payload: StmBody::Directive(d.clone()),
                signature: d.action.stm_signature(),
                strength: DIRECTIVE_STRENGTH,
                author: self.id.clone(),
            },
            env.now,
        );
        let result: Result<(), String> = match &d.action {
            DirectiveAction::SelectProfile { profile } => env
                .dps
                .select_profile(*profile, &self.id)
                .map(|_| ())
                .map_err(|e| e.to_string()),
            DirectiveAction::DispatchProcedure { proc_id, .. } => env
                .fabric
                .send_new(
                    &self.id,
                    [ModuleId::autonomous()],
                    DISPATCH_STREAM,
                    Priority::Control,
                    FrameBody::Control(ControlBody::DispatchProcedure {
                        proc_id: proc_id.clone(),
                        directive_id: d.directive_id,
                    }),
                )
                .map(|_| ())
                .map_err(|e| e.to_string()),
            DirectiveAction::EmitAction { action } => env
                .io
                .emit(action, &self.id, env.now)
                .map(|_| ())
                .map_err(|e| e.to_string()),
            DirectiveAction::RecordDecision { summary } => {
                consolidate_decision(env.memory, summary, snapshot, env.now)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
            DirectiveAction::TakeOver { .. } | DirectiveAction::Complete { .. } => Ok(()),
        };
        if let Err(e) = result {
            self.effect_failures += 1;
            tracing::warn!(directive = d.directive_id, kind = %d.action.kind(), error = %e, "directive side effect failed");
        }
    }
}

/// Store a decision as a long-term trace cued by the sensory context.
pub fn consolidate_decision(
    memory: &mut Memory,
    summary: &str,
    snapshot: &ContextSnapshot,
    now: Nanos,
) -> Result<u64, crate::memory::MemoryError> {
    memory.ltm_store(
        TraceSeed {
            content: ModalityPayload::text(format!("decision: {summary}")),
            cue: snapshot.sensory(),
            strength: DECISION_STRENGTH,
        },
        now,
    )
}

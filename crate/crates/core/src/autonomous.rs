//! Autonomous processing area.
//!
//! A single sequential loop: match the sensory context against the procedure
//! library, step the active run (one status report per step), then check the
//! run's expected context against what is observed. A mismatch at or above the
//! interrupt threshold ends the run and raises an [`Interrupt`] to the
//! executive. Interrupted runs never resume on their own.
//!
//! This module reads only the STM snapshot (its sensory projection) and its
//! own fabric inbox.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::Nanos;
use crate::fabric::{Delivery, Fabric};
use crate::io::{ActionDescriptor, Io};
use crate::memory::{ContextSnapshot, Memory, StmBody, StmWrite, INTERRUPT_KEY_PREFIX, STATUS_KEY};
use crate::modality::{
    signature_divergence, signature_similarity, ControlBody, FrameBody, ModuleId, Priority,
    Signature, EXECUTIVE,
};
use crate::ContextSignature;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FAILURE_BUDGET: u32 = 3;
pub const INTERRUPT_STREAM: u64 = 1;
pub const STATUS_STRENGTH: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredProcedure {
    pub proc_id: String,
    pub trigger: ContextSignature,
    pub expected: ContextSignature,
    pub steps: Vec<ActionDescriptor>,
    #[serde(rename = "loop", default)]
    pub looping: bool,
    #[serde(default = "one")]
    pub max_iterations: u32,
}

fn one() -> u32 {
    1
}

impl StoredProcedure {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err(format!("procedure `{}` has no steps", self.proc_id));
        }
        if self.max_iterations == 0 {
            return Err(format!("procedure `{}` has max_iterations 0", self.proc_id));
        }
        self.trigger
            .validate()
            .and(self.expected.validate())
            .map_err(|e| format!("procedure `{}`: {e}", self.proc_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunState {
    Running,
    Completed,
    Interrupted,
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunState::Running => "running",
            RunState::Completed => "completed",
            RunState::Interrupted => "interrupted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureRun {
    pub proc_id: String,
    /// 1-based pass over the step list.
    pub iteration: u32,
    /// Index of the next step to emit.
    pub step_index: usize,
    pub state: RunState,
    pub started_at: Nanos,
    pub last_report_revision: u64,
    pub failures: u32,
}

impl ProcedureRun {
    pub fn start(proc_id: &str, now: Nanos) -> Self {
        Self {
            proc_id: proc_id.to_string(),
            iteration: 1,
            step_index: 0,
            state: RunState::Running,
            started_at: now,
            last_report_revision: 0,
            failures: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptCause {
    Mismatch,
    FailureBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interrupt {
    pub interrupt_id: u64,
    pub proc_id: String,
    pub expected: ContextSignature,
    pub observed: ContextSignature,
    pub divergence: f64,
    pub cause: InterruptCause,
    /// STM revision of the status report written before this was sent.
    pub report_revision: u64,
    pub raised_at: Nanos,
}

impl Interrupt {
    #[doc(hidden)]
    pub fn test_value() -> Self {
        Self {
            interrupt_id: 1,
            proc_id: "walk".into(),
            expected: Signature::from_pairs([("obstacle", 0.0)]).unwrap(),
            observed: Signature::from_pairs([("obstacle", 0.9)]).unwrap(),
            divergence: 0.9,
            cause: InterruptCause::Mismatch,
            report_revision: 1,
            raised_at: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub proc_id: String,
    pub iteration: u32,
    pub step_index: usize,
    pub state: RunState,
    pub step_failed: bool,
    pub failures: u32,
    pub interrupt: Option<Interrupt>,
}

/// Best procedure whose trigger similarity reaches `theta_m`; ties go to the
/// lowest `proc_id`.
pub fn match_procedure<'a>(
    context: &ContextSignature,
    library: &'a [StoredProcedure],
    theta_m: f64,
) -> Option<(&'a StoredProcedure, f64)> {
    library
        .iter()
        .map(|p| (p, signature_similarity(&p.trigger, context)))
        .filter(|(_, s)| *s >= theta_m)
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.proc_id.cmp(&a.0.proc_id)))
}

/// Divergence of the observed context from what the procedure expects, if it
/// reaches `theta_int`.
pub fn detect_mismatch(expected: &ContextSignature, observed: &ContextSignature, theta_int: f64) -> Option<f64> {
    let d = signature_divergence(expected, observed);
    (d >= theta_int).then_some(d)
}

/// Everything one autonomous step produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub started: Option<String>,
    pub reports: Vec<StatusReport>,
    pub actions: Vec<String>,
    pub interrupt: Option<Interrupt>,
}

/// Shared kernel services a step writes through.
pub struct AutonomousEnv<'a> {
    pub memory: &'a mut Memory,
    pub fabric: &'a Fabric,
    pub io: &'a Io,
    pub theta_int: f64,
    pub now: Nanos,
}

#[derive(Debug, Clone)]
pub struct Autonomous {
    id: ModuleId,
    library: Vec<StoredProcedure>,
    theta_m: f64,
    failure_budget: u32,
    run: Option<ProcedureRun>,
    context_at_end: Option<ContextSignature>,
    next_interrupt_id: u64,
    reports_written: u64,
    steps_taken: u64,
}

impl Autonomous {
    pub fn new(library: Vec<StoredProcedure>, theta_m: f64) -> Self {
        let mut library = library;
        library.sort_by(|a, b| a.proc_id.cmp(&b.proc_id));
        Self {
            id: ModuleId::autonomous(),
            library,
            theta_m,
            failure_budget: DEFAULT_FAILURE_BUDGET,
            run: None,
            context_at_end: None,
            next_interrupt_id: 1,
            reports_written: 0,
            steps_taken: 0,
        }
    }

    pub fn library(&self) -> &[StoredProcedure] {
        &self.library
    }

    pub fn run(&self) -> Option<&ProcedureRun> {
        self.run.as_ref()
    }

    pub fn reports_written(&self) -> u64 {
        self.reports_written
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    fn procedure(&self, proc_id: &str) -> Option<&StoredProcedure> {
        self.library.iter().find(|p| p.proc_id == proc_id)
    }

    /// One pass of match, step and mismatch check.
    pub fn step(&mut self, snapshot: &ContextSnapshot, inbox: Vec<Delivery>, env: &mut AutonomousEnv<'_>) -> StepOutcome {
        let mut out = StepOutcome::default();
        let sensory = snapshot.sensory();

        for d in inbox {
            if let FrameBody::Control(ControlBody::DispatchProcedure { proc_id, .. }) = d.frame.payload {
                if self.procedure(&proc_id).is_some() {
                    self.run = Some(ProcedureRun::start(&proc_id, env.now));
                    out.started = Some(proc_id);
                } else {
                    tracing::warn!(%proc_id, "dispatch names an unknown procedure");
                }
            }
        }

        let idle = self.run.as_ref().is_none_or(|r| r.state != RunState::Running);
        if idle && self.context_changed(&sensory) {
            if let Some((p, similarity)) = match_procedure(&sensory, &self.library, self.theta_m) {
                tracing::debug!(proc_id = %p.proc_id, similarity, "procedure matched");
                out.started = Some(p.proc_id.clone());
                self.run = Some(ProcedureRun::start(&p.proc_id, env.now));
            }
        }

        let Some(mut run) = self.run.take() else {
            return out;
        };
        if run.state == RunState::Running {
            let proc = self.procedure(&run.proc_id).cloned().expect("run names a known procedure");
            self.run_step(&mut run, &proc, env, &mut out);
            if run.state == RunState::Running {
                if let Some(d) = detect_mismatch(&proc.expected, &sensory, env.theta_int) {
                    self.raise(&mut run, &proc, sensory.clone(), d, InterruptCause::Mismatch, env, &mut out);
                }
            } else if run.state == RunState::Interrupted {
                let d = signature_divergence(&proc.expected, &sensory);
                self.raise(&mut run, &proc, sensory.clone(), d, InterruptCause::FailureBudget, env, &mut out);
            }
            if run.state != RunState::Running {
                self.context_at_end = Some(sensory);
            }
        }
        self.run = Some(run);
        out
    }

    fn context_changed(&self, sensory: &ContextSignature) -> bool {
        self.context_at_end
            .as_ref()
            .is_none_or(|c| !c.equivalent(sensory))
    }

    fn run_step(
        &mut self,
        run: &mut ProcedureRun,
        proc: &StoredProcedure,
        env: &mut AutonomousEnv<'_>,
        out: &mut StepOutcome,
    ) {
        self.steps_taken += 1;
        let action = proc.steps[run.step_index].clone();
        let failed = match env.io.emit(&action, &self.id, env.now) {
            Ok(_) => {
                out.actions.push(action.action_id.clone());
                false
            }
            Err(e) => {
                tracing::warn!(proc_id = %proc.proc_id, error = %e, "procedure step rejected");
                run.failures += 1;
                true
            }
        };
        let reported_step = run.step_index;
        run.step_index += 1;
        if run.step_index == proc.steps.len() {
            if proc.looping && run.iteration < proc.max_iterations {
                run.iteration += 1;
                run.step_index = 0;
            } else {
                run.state = RunState::Completed;
            }
        }
        if run.failures > self.failure_budget {
            run.state = RunState::Interrupted;
        }
        let report = StatusReport {
            proc_id: run.proc_id.clone(),
            iteration: run.iteration,
            step_index: reported_step,
            state: if run.state == RunState::Interrupted {
                RunState::Running
            } else {
                run.state
            },
            step_failed: failed,
            failures: run.failures,
            interrupt: None,
        };
        run.last_report_revision = self.write_report(STATUS_KEY.to_string(), report.clone(), env);
        out.reports.push(report);
    }

    #[allow(clippy::too_many_arguments)]
    fn raise(
        &mut self,
        run: &mut ProcedureRun,
        proc: &StoredProcedure,
        observed: ContextSignature,
        divergence: f64,
        cause: InterruptCause,
        env: &mut AutonomousEnv<'_>,
        out: &mut StepOutcome,
    ) {
        run.state = RunState::Interrupted;
        let mut interrupt = Interrupt {
            interrupt_id: self.next_interrupt_id,
            proc_id: proc.proc_id.clone(),
            expected: proc.expected.clone(),
            observed,
            divergence,
            cause,
            report_revision: 0,
            raised_at: env.now,
        };
        self.next_interrupt_id += 1;
        let mut report = StatusReport {
            proc_id: run.proc_id.clone(),
            iteration: run.iteration,
            step_index: run.step_index,
            state: RunState::Interrupted,
            step_failed: false,
            failures: run.failures,
            interrupt: Some(interrupt.clone()),
        };
        self.write_report(STATUS_KEY.to_string(), report.clone(), env);
        let key = format!("{INTERRUPT_KEY_PREFIX}{}", interrupt.interrupt_id);
        let revision = self.write_report(key, report.clone(), env);
        run.last_report_revision = revision;
        interrupt.report_revision = revision;
        report.interrupt = Some(interrupt.clone());
        let body = FrameBody::Control(ControlBody::Interrupt(interrupt.clone()));
        if let Err(e) = env
            .fabric
            .send_new(&self.id, [ModuleId::new(EXECUTIVE)], INTERRUPT_STREAM, Priority::Interrupt, body)
        {
            tracing::error!(error = %e, "interrupt send failed");
        }
        tracing::info!(interrupt_id = interrupt.interrupt_id, proc_id = %interrupt.proc_id, divergence, "interrupt raised");
        out.interrupt = Some(interrupt);
    }

    fn write_report(&mut self, key: String, report: StatusReport, env: &mut AutonomousEnv<'_>) -> u64 {
        let mut signature = Signature::new();
        signature.features.insert(format!("autonomous.{}", report.state), 1.0);
        self.reports_written += 1;
        env.memory
            .stm_put(
                StmWrite {
                    key,
                    payload: StmBody::Status(report),
                    signature,
                    strength: STATUS_STRENGTH,
                    author: self.id.clone(),
                },
                env.now,
            )
            .revision
    }
}

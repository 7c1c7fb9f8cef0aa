//! Dynamic processing system.
//!
//! Module weights are `w = softmax(g(C, E) / τ)`, a point on the probability
//! simplex over the registered modules. `g` is pluggable through
//! [`ScoreFunction`]; the default [`LinearScore`] adds the program's base
//! log-weights, the active profile's delta and the context activations that
//! are relevant to each module's declared modalities.
//!
//! Two instruction layers feed the weights. The external program is
//! administered only by an operator with the admin role; the internal layer
//! (operational profile) is selectable only by the executive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Nanos};
use crate::memory::ContextSnapshot;
use crate::modality::{ModalityKind, ModuleId, Signature, EXECUTIVE};
use crate::scalar::Scalar;

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_P_MAX: f64 = 2.0;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_INTERRUPT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpsError {
    #[error("score for module `{module}` is not finite ({value})")]
    ScoringFault { module: ModuleId, value: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{principal} is not authorised to {action}")]
    Unauthorized { principal: Principal, action: &'static str },
    #[error("version conflict: current {current}, submitted {submitted}")]
    Conflict { current: u64, submitted: u64 },
}

/// Identity on whose behalf a call is made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Principal {
    Operator(Role),
    Module(ModuleId),
    Unauthenticated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Admin,
    Viewer,
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Operator(Role::Admin) => f.write_str("admin"),
            Principal::Operator(Role::Viewer) => f.write_str("viewer"),
            Principal::Module(m) => write!(f, "module:{m}"),
            Principal::Unauthenticated => f.write_str("unauthenticated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub id: ModuleId,
    pub kinds: BTreeSet<ModalityKind>,
    #[serde(default)]
    pub description: String,
}

impl ModuleEntry {
    pub fn new(id: &str, kinds: &[ModalityKind], description: &str) -> Self {
        Self {
            id: ModuleId::new(id),
            kinds: kinds.iter().copied().collect(),
            description: description.to_string(),
        }
    }
}

/// Processing modules in weight-index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModuleEntry>", into = "Vec<ModuleEntry>")]
pub struct ModuleRegistry {
    entries: Vec<ModuleEntry>,
}

impl ModuleRegistry {
    pub fn new(entries: Vec<ModuleEntry>) -> Result<Self, DpsError> {
        if entries.is_empty() {
            return Err(DpsError::Config("module registry must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(DpsError::Config(format!("duplicate module id `{}`", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ModuleEntry] {
        &self.entries
    }

    pub fn index_of(&self, id: &ModuleId) -> Option<usize> {
        self.entries.iter().position(|e| &e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ModuleId> {
        self.entries.iter().map(|e| &e.id)
    }
}

impl TryFrom<Vec<ModuleEntry>> for ModuleRegistry {
    type Error = DpsError;
    fn try_from(v: Vec<ModuleEntry>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ModuleRegistry> for Vec<ModuleEntry> {
    fn from(r: ModuleRegistry) -> Self {
        r.entries
    }
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_interrupt_threshold() -> f64 {
    DEFAULT_INTERRUPT_THRESHOLD
}

/// Externally administered program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalProgram {
    pub version: u64,
    pub primary_goal: String,
    #[serde(default)]
    pub instructions: Vec<String>,
    pub base_log_weights: Vec<f64>,
    #[serde(default)]
    pub routing_overrides: BTreeMap<ModalityKind, ModuleId>,
    #[serde(default = "default_interrupt_threshold")]
    pub interrupt_threshold: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl ExternalProgram {
    /// A neutral program for `n` modules.
    pub fn neutral(n: usize, goal: &str) -> Self {
        Self {
            version: 1,
            primary_goal: goal.to_string(),
            instructions: Vec::new(),
            base_log_weights: vec![0.0; n],
            routing_overrides: BTreeMap::new(),
            interrupt_threshold: DEFAULT_INTERRUPT_THRESHOLD,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn validate(&self, registry: &ModuleRegistry) -> Result<(), DpsError> {
        if self.base_log_weights.len() != registry.len() {
            return Err(DpsError::Config(format!(
                "base_log_weights has {} entries, registry has {}",
                self.base_log_weights.len(),
                registry.len()
            )));
        }
        if let Some(i) = self.base_log_weights.iter().position(|b| !b.is_finite()) {
            return Err(DpsError::Config(format!("base_log_weights[{i}] is not finite")));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DpsError::Config("temperature must be > 0".into()));
        }
        if !(self.interrupt_threshold > 0.0) {
            return Err(DpsError::Config("interrupt_threshold must be > 0".into()));
        }
        for (kind, m) in &self.routing_overrides {
            if registry.index_of(m).is_none() {
                return Err(DpsError::Config(format!(
                    "routing override {kind} -> unregistered module `{m}`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProfileId {
    Logical,
    Creative,
    Motor,
    Neutral,
}

impl ProfileId {
    pub const ALL: [ProfileId; 4] = [
        ProfileId::Logical,
        ProfileId::Creative,
        ProfileId::Motor,
        ProfileId::Neutral,
    ];
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalProfile {
    pub profile_id: ProfileId,
    pub delta: Vec<f64>,
}

impl OperationalProfile {
    pub fn neutral(n: usize) -> Self {
        Self {
            profile_id: ProfileId::Neutral,
            delta: vec![0.0; n],
        }
    }
}

/// The internal layer's selectable profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    profiles: BTreeMap<ProfileId, Vec<f64>>,
    p_max: f64,
}

impl ProfileTable {
    /// Default deltas: Logical favours Text and Numeric modules, Creative
    /// favours Image and Audio, Motor favours Tactile. Each boost is +1.
    pub fn defaults(registry: &ModuleRegistry) -> Self {
        let boost = |kinds: &[ModalityKind]| -> Vec<f64> {
            registry
                .entries()
                .iter()
                .map(|e| {
                    if kinds.iter().any(|k| e.kinds.contains(k)) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let mut profiles = BTreeMap::new();
        profiles.insert(
            ProfileId::Logical,
            boost(&[ModalityKind::Text, ModalityKind::Numeric]),
        );
        profiles.insert(
            ProfileId::Creative,
            boost(&[ModalityKind::Image, ModalityKind::Audio]),
        );
        profiles.insert(ProfileId::Motor, boost(&[ModalityKind::Tactile]));
        profiles.insert(ProfileId::Neutral, vec![0.0; registry.len()]);
        Self {
            profiles,
            p_max: DEFAULT_P_MAX,
        }
    }

    /// Explicit deltas; Neutral is always forced to zero.
    pub fn new(
        registry: &ModuleRegistry,
        deltas: BTreeMap<ProfileId, Vec<f64>>,
        p_max: f64,
    ) -> Result<Self, DpsError> {
        let mut profiles = deltas;
        if profiles
            .get(&ProfileId::Neutral)
            .is_some_and(|d| d.iter().any(|&x| x != 0.0))
        {
            return Err(DpsError::Config("Neutral profile must have zero delta".into()));
        }
        profiles.insert(ProfileId::Neutral, vec![0.0; registry.len()]);
        for (id, d) in &profiles {
            if d.len() != registry.len() {
                return Err(DpsError::Config(format!(
                    "profile {id} delta has {} entries, registry has {}",
                    d.len(),
                    registry.len()
                )));
            }
            if d.iter().any(|x| !(x.abs() <= p_max)) {
                return Err(DpsError::Config(format!("profile {id} exceeds p_max {p_max}")));
            }
        }
        Ok(Self { profiles, p_max })
    }

    pub fn get(&self, id: ProfileId) -> Option<OperationalProfile> {
        self.profiles.get(&id).map(|d| OperationalProfile {
            profile_id: id,
            delta: d.clone(),
        })
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }
}

/// Which inputs a weight vector was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputsVersion {
    pub context_revision: u64,
    pub program_version: u64,
    pub profile_id: ProfileId,
}

/// A point on the simplex over the registered modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Weights<T: Scalar> {
    pub w: Vec<T>,
    pub computed_at: Nanos,
    pub inputs_version: InputsVersion,
}

impl<T: Scalar> Weights<T> {
    pub fn sum(&self) -> T {
        self.w.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.w)
    }
}

/// Max-subtracted softmax of `g / tau`.
///
/// Fails with the index of the first non-finite score.
pub fn softmax<T: Scalar>(g: &[T], tau: T) -> Result<Vec<T>, usize> {
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(i);
    }
    let max = g.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = g.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(w: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in w.iter().enumerate() {
        if x > w[best] {
            best = i;
        }
    }
    best
}

/// The scoring rule `g(C, E)`.
pub trait ScoreFunction<T: Scalar>: Send + Sync + fmt::Debug {
    fn scores(
        &self,
        context: &Signature<f64>,
        program: &ExternalProgram,
        profile: &OperationalProfile,
        registry: &ModuleRegistry,
    ) -> Vec<T>;
}

/// `g_i = b_i + p_i + Σ_k a_i(k) · C[k]` where `a_i(k) = 1` when feature `k`
/// has the form `<prefix>.<kind>` and module `i` declares `kind`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearScore;

impl LinearScore {
    pub fn relevance(entry: &ModuleEntry, feature: &str) -> f64 {
        match feature.rsplit_once('.') {
            Some((_, suffix)) => match ModalityKind::from_name(suffix) {
                Some(kind) if entry.kinds.contains(&kind) => 1.0,
                _ => 0.0,
            },
            None => 0.0,
        }
    }
}

impl<T: Scalar> ScoreFunction<T> for LinearScore {
    fn scores(
        &self,
        context: &Signature<f64>,
        program: &ExternalProgram,
        profile: &OperationalProfile,
        registry: &ModuleRegistry,
    ) -> Vec<T> {
        registry
            .entries()
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let base = T::of(program.base_log_weights.get(i).copied().unwrap_or(0.0));
                let delta = T::of(profile.delta.get(i).copied().unwrap_or(0.0));
                let ctx = context
                    .features
                    .iter()
                    .fold(T::zero(), |acc, (k, &v)| {
                        acc + T::of(Self::relevance(entry, k)) * T::of(v)
                    });
                base + delta + ctx
            })
            .collect()
    }
}

/// `w = softmax(g(C, E) / τ)` for one (context, program, profile).
pub fn compute_weights<T: Scalar>(
    score: &dyn ScoreFunction<T>,
    context: &ContextSnapshot,
    program: &ExternalProgram,
    profile: &OperationalProfile,
    registry: &ModuleRegistry,
    now: Nanos,
) -> Result<Weights<T>, DpsError> {
    if registry.is_empty() {
        return Err(DpsError::Config("module registry is empty".into()));
    }
    if !(program.temperature > 0.0) {
        return Err(DpsError::Config("temperature must be > 0".into()));
    }
    let g = score.scores(&context.features, program, profile, registry);
    let w = softmax(&g, T::of(program.temperature)).map_err(|i| DpsError::ScoringFault {
        module: registry.entries()[i].id.clone(),
        value: g[i].to_f64().unwrap_or(f64::NAN),
    })?;
    Ok(Weights {
        w,
        computed_at: now,
        inputs_version: InputsVersion {
            context_revision: context.revision,
            program_version: program.version,
            profile_id: profile.profile_id,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub module: ModuleId,
    pub share: f64,
}

/// Per-modality destinations with their renormalised shares.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingTable {
    pub routes: BTreeMap<ModalityKind, Vec<Route>>,
}

impl RoutingTable {
    pub fn destinations(&self, kind: ModalityKind) -> Vec<ModuleId> {
        self.routes
            .get(&kind)
            .map(|r| r.iter().map(|r| r.module.clone()).collect())
            .unwrap_or_default()
    }
}

/// Prune modules below `rho`, renormalise the survivors, honour overrides.
///
/// Kinds with no eligible module and no override are absent from the table.
pub fn derive_routing<T: Scalar>(
    w: &Weights<T>,
    program: &ExternalProgram,
    registry: &ModuleRegistry,
    rho: T,
) -> Result<RoutingTable, DpsError> {
    let mut table = RoutingTable::default();
    for kind in ModalityKind::ALL {
        if let Some(m) = program.routing_overrides.get(&kind) {
            if registry.index_of(m).is_none() {
                return Err(DpsError::Config(format!(
                    "routing override {kind} -> unregistered module `{m}`"
                )));
            }
            table.routes.insert(
                kind,
                vec![Route {
                    module: m.clone(),
                    share: 1.0,
                }],
            );
            continue;
        }
        let eligible: Vec<usize> = registry
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kinds.contains(&kind))
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let survivors: Vec<usize> = eligible.iter().copied().filter(|&i| w.w[i] >= rho).collect();
        let routes = if survivors.is_empty() {
            let mut best = eligible[0];
            for &i in &eligible {
                if w.w[i] > w.w[best] {
                    best = i;
                }
            }
            vec![Route {
                module: registry.entries()[best].id.clone(),
                share: 1.0,
            }]
        } else {
            let total = survivors.iter().fold(T::zero(), |a, &i| a + w.w[i]);
            survivors
                .iter()
                .map(|&i| Route {
                    module: registry.entries()[i].id.clone(),
                    share: (w.w[i] / total).to_f64().unwrap_or(0.0),
                })
                .collect()
        };
        table.routes.insert(kind, routes);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AuditOutcome {
    Accepted { version: u64 },
    Rejected { reason: String },
}

/// One administration attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: Nanos,
    pub role: String,
    pub submitted_version: u64,
    pub current_version: u64,
    #[serde(flatten)]
    pub outcome: AuditOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileChange {
    pub at: Nanos,
    pub from: ProfileId,
    pub to: ProfileId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpsConfig {
    pub prune_threshold: f64,
}

impl Default for DpsConfig {
    fn default() -> Self {
        Self {
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
        }
    }
}

/// Live weighting state: the current program, the active profile and the
/// administration audit trail. Program and profile swaps are atomic.
#[derive(Debug)]
pub struct Dps {
    registry: ModuleRegistry,
    profiles: ProfileTable,
    config: DpsConfig,
    score: Box<dyn ScoreFunction<f64>>,
    clock: Arc<dyn Clock>,
    program: RwLock<Arc<ExternalProgram>>,
    active_profile: RwLock<ProfileId>,
    audit: Mutex<Vec<AuditRecord>>,
    profile_log: Mutex<Vec<ProfileChange>>,
}

impl Dps {
    pub fn new(
        registry: ModuleRegistry,
        program: ExternalProgram,
        profiles: ProfileTable,
        config: DpsConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, DpsError> {
        program.validate(&registry)?;
        Ok(Self {
            registry,
            profiles,
            config,
            score: Box::new(LinearScore),
            clock,
            program: RwLock::new(Arc::new(program)),
            active_profile: RwLock::new(ProfileId::Neutral),
            audit: Mutex::new(Vec::new()),
            profile_log: Mutex::new(Vec::new()),
        })
    }

    pub fn with_score_function(mut self, score: Box<dyn ScoreFunction<f64>>) -> Self {
        self.score = score;
        self
    }

    pub fn registry(&self) -> &ModuleRegistry {
        &self.registry
    }

    pub fn config(&self) -> DpsConfig {
        self.config
    }

    pub fn program(&self) -> Arc<ExternalProgram> {
        self.program.read().clone()
    }

    pub fn active_profile(&self) -> OperationalProfile {
        let id = *self.active_profile.read();
        self.profiles
            .get(id)
            .unwrap_or_else(|| OperationalProfile::neutral(self.registry.len()))
    }

    /// Swap in a new external program. Only an admin operator may do this;
    /// `new.version` must be exactly one more than the current version. Every
    /// attempt is audited.
    pub fn apply_external_program(
        &self,
        principal: &Principal,
        new: ExternalProgram,
    ) -> Result<u64, DpsError> {
        let mut slot = self.program.write();
        let current = slot.version;
        let result = self.check_program(principal, &new, current);
        let outcome = match &result {
            Ok(()) => AuditOutcome::Accepted {
                version: new.version,
            },
            Err(e) => AuditOutcome::Rejected {
                reason: match e {
                    DpsError::Unauthorized { .. } => "unauthorized".to_string(),
                    DpsError::Conflict { .. } => "conflict".to_string(),
                    other => other.to_string(),
                },
            },
        };
        self.audit.lock().push(AuditRecord {
            at: self.clock.now_ns(),
            role: principal.to_string(),
            submitted_version: new.version,
            current_version: current,
            outcome,
        });
        result?;
        let version = new.version;
        *slot = Arc::new(new);
        tracing::info!(version, "external program applied");
        Ok(version)
    }

    fn check_program(
        &self,
        principal: &Principal,
        new: &ExternalProgram,
        current: u64,
    ) -> Result<(), DpsError> {
        if *principal != Principal::Operator(Role::Admin) {
            return Err(DpsError::Unauthorized {
                principal: principal.clone(),
                action: "administer the external program",
            });
        }
        if new.version != current + 1 {
            return Err(DpsError::Conflict {
                current,
                submitted: new.version,
            });
        }
        new.validate(&self.registry)
    }

    /// Select the internal-layer profile. Only the executive may call this.
    pub fn select_profile(
        &self,
        profile: ProfileId,
        caller: &ModuleId,
    ) -> Result<OperationalProfile, DpsError> {
        if caller.as_str() != EXECUTIVE {
            return Err(DpsError::Unauthorized {
                principal: Principal::Module(caller.clone()),
                action: "select an operational profile",
            });
        }
        let selected = self
            .profiles
            .get(profile)
            .ok_or_else(|| DpsError::Config(format!("unknown profile {profile}")))?;
        let mut active = self.active_profile.write();
        if *active != profile {
            self.profile_log.lock().push(ProfileChange {
                at: self.clock.now_ns(),
                from: *active,
                to: profile,
            });
            tracing::info!(from = %*active, to = %profile, "profile selected");
        }
        *active = profile;
        Ok(selected)
    }

    pub fn compute_weights(&self, context: &ContextSnapshot) -> Result<Weights<f64>, DpsError> {
        let program = self.program();
        let profile = self.active_profile();
        compute_weights(
            self.score.as_ref(),
            context,
            &program,
            &profile,
            &self.registry,
            self.clock.now_ns(),
        )
    }

    /// The inputs version a recompute would carry right now.
    pub fn current_inputs(&self, context_revision: u64) -> InputsVersion {
        InputsVersion {
            context_revision,
            program_version: self.program.read().version,
            profile_id: *self.active_profile.read(),
        }
    }

    pub fn derive_routing(&self, w: &Weights<f64>) -> Result<RoutingTable, DpsError> {
        derive_routing(w, &self.program(), &self.registry, self.config.prune_threshold)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit.lock().clone()
    }

    /// Audit a submission that could not be decoded into a program.
    pub fn reject_undecodable(&self, principal: &Principal, submitted_version: u64, reason: &str) {
        let current = self.program.read().version;
        self.audit.lock().push(AuditRecord {
            at: self.clock.now_ns(),
            role: principal.to_string(),
            submitted_version,
            current_version: current,
            outcome: AuditOutcome::Rejected {
                reason: reason.to_string(),
            },
        });
    }

    pub fn profile_log(&self) -> Vec<ProfileChange> {
        self.profile_log.lock().clone()
    }
}

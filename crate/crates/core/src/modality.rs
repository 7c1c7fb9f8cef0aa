//! Multi-modal data types, the fabric envelope and context signatures.
//!
//! Everything here is an immutable value once built. The JSON encoding of
//! [`ModalityPayload`], [`Signature`] and [`FabricFrame`] is the canonical
//! wire and file format used by scenario files, the control protocol and the
//! persisted memory files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonomous::Interrupt;
use crate::clock::Nanos;
use crate::io::ActionDescriptor;
use crate::scalar::Scalar;

/// Identifier of a kernel module, adapter or processing unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(pub String);

impl ModuleId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn executive() -> Self {
        Self::new(EXECUTIVE)
    }

    pub fn autonomous() -> Self {
        Self::new(AUTONOMOUS)
    }

    pub fn io() -> Self {
        Self::new(IO)
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModuleId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

pub const EXECUTIVE: &str = "executive";
pub const AUTONOMOUS: &str = "autonomous";
pub const IO: &str = "io";
pub const MEMORY: &str = "memory";

/// Feature-key prefixes written by the kernel's own areas. They are part of
/// the context snapshot but are not environment context, so they are left out
/// of [`Signature::sensory`].
pub const INTERNAL_PREFIXES: [&str; 2] = ["autonomous.", "executive."];

pub const MAX_COMPOSITE_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityKind {
    Text,
    Numeric,
    Image,
    Audio,
    Tactile,
    Composite,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 6] = [
        ModalityKind::Text,
        ModalityKind::Numeric,
        ModalityKind::Image,
        ModalityKind::Audio,
        ModalityKind::Tactile,
        ModalityKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Text => "Text",
            ModalityKind::Numeric => "Numeric",
            ModalityKind::Image => "Image",
            ModalityKind::Audio => "Audio",
            ModalityKind::Tactile => "Tactile",
            ModalityKind::Composite => "Composite",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tagged multi-modal datum.
///
/// The struct mirrors the wire format: every kind-specific field is optional
/// and [`validate_payload`] reports when the populated set does not match the
/// declared kind. Use the constructors to build well-formed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPayload {
    pub kind: ModalityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<ModalityPayload>>,
}

impl ModalityPayload {
    fn empty(kind: ModalityKind) -> Self {
        Self {
            kind,
            text: None,
            values: None,
            grid: None,
            width: None,
            height: None,
            pressure: None,
            parts: None,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Self {
            text: Some(s.into()),
            ..Self::empty(ModalityKind::Text)
        }
    }

    pub fn numeric(values: Vec<f64>) -> Self {
        Self {
            values: Some(values),
            ..Self::empty(ModalityKind::Numeric)
        }
    }

    pub fn audio(values: Vec<f64>) -> Self {
        Self {
            values: Some(values),
            ..Self::empty(ModalityKind::Audio)
        }
    }

    pub fn image(width: usize, height: usize, grid: Vec<f64>) -> Self {
        Self {
            grid: Some(grid),
            width: Some(width),
            height: Some(height),
            ..Self::empty(ModalityKind::Image)
        }
    }

    pub fn tactile(pressure: f64) -> Self {
        Self {
            pressure: Some(pressure),
            ..Self::empty(ModalityKind::Tactile)
        }
    }

    pub fn composite(parts: Vec<ModalityPayload>) -> Self {
        Self {
            parts: Some(parts),
            ..Self::empty(ModalityKind::Composite)
        }
    }

    /// Nesting depth: leaves are 0, a composite is one more than its deepest part.
    pub fn depth(&self) -> usize {
        match &self.parts {
            Some(parts) => 1 + parts.iter().map(|p| p.depth()).max().unwrap_or(0),
            None => 0,
        }
    }

    /// The text of a Text payload.
    pub fn as_text(&self) -> Option<&str> {
        match self.kind {
            ModalityKind::Text => self.text.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViolationKind {
    #[error("{kind} payload is missing field `{field}`")]
    MissingField { kind: ModalityKind, field: &'static str },
    #[error("{kind} payload must not populate field `{field}`")]
    UnexpectedField { kind: ModalityKind, field: &'static str },
    #[error("grid length {len} != width*height ({width}x{height})")]
    GridSizeMismatch { len: usize, width: usize, height: usize },
    #[error("grid cell {index} = {value} outside [0,1]")]
    CellOutOfRange { index: usize, value: f64 },
    #[error("pressure {0} outside [0,1]")]
    PressureOutOfRange(f64),
    #[error("value {index} is not finite")]
    NonFinite { index: usize },
    #[error("Composite has < 2 parts ({0})")]
    TooFewParts(usize),
    #[error("Composite nesting depth {0} exceeds {MAX_COMPOSITE_DEPTH}")]
    NestingTooDeep(usize),
}

/// One invariant violation, located by a path such as `parts[1].grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.path, self.kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModalityError {
    #[error("invalid payload: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("activation {value} for feature `{key}` outside [0,1]")]
    ActivationOutOfRange { key: String, value: f64 },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Every invariant violation of `p`; the payload is valid iff the list is empty.
pub fn validate_payload(p: &ModalityPayload) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_into(p, "", &mut out);
    if p.kind == ModalityKind::Composite && p.depth() > MAX_COMPOSITE_DEPTH {
        out.push(Violation {
            path: String::new(),
            kind: ViolationKind::NestingTooDeep(p.depth()),
        });
    }
    out
}

fn validate_into(p: &ModalityPayload, path: &str, out: &mut Vec<Violation>) {
    use ModalityKind::*;
    let kind = p.kind;
    let field = |name: &str| {
        if path.is_empty() {
            name.to_string()
        } else {
            format!("{path}.{name}")
        }
    };
    let mut push = |path: String, v: ViolationKind| out.push(Violation { path, kind: v });

    let populated: [(&'static str, bool); 7] = [
        ("text", p.text.is_some()),
        ("values", p.values.is_some()),
        ("grid", p.grid.is_some()),
        ("width", p.width.is_some()),
        ("height", p.height.is_some()),
        ("pressure", p.pressure.is_some()),
        ("parts", p.parts.is_some()),
    ];
    let required: &[&'static str] = match kind {
        Text => &["text"],
        Numeric | Audio => &["values"],
        Image => &["grid", "width", "height"],
        Tactile => &["pressure"],
        Composite => &["parts"],
    };
    for (name, present) in populated {
        let needed = required.contains(&name);
        if needed && !present {
            push(field(name), ViolationKind::MissingField { kind, field: name });
        } else if !needed && present {
            push(field(name), ViolationKind::UnexpectedField { kind, field: name });
        }
    }

    match kind {
        Numeric | Audio => {
            if let Some(values) = &p.values {
                for (index, v) in values.iter().enumerate() {
                    if !v.is_finite() {
                        push(field("values"), ViolationKind::NonFinite { index });
                    }
                }
            }
        }
        Image => {
            if let (Some(grid), Some(width), Some(height)) = (&p.grid, p.width, p.height) {
                if width.checked_mul(height) != Some(grid.len()) {
                    push(
                        field("grid"),
                        ViolationKind::GridSizeMismatch {
                            len: grid.len(),
                            width,
                            height,
                        },
                    );
                }
                for (index, &value) in grid.iter().enumerate() {
                    if !(0.0..=1.0).contains(&value) {
                        push(field("grid"), ViolationKind::CellOutOfRange { index, value });
                    }
                }
            }
        }
        Tactile => {
            if let Some(pr) = p.pressure {
                if !(0.0..=1.0).contains(&pr) {
                    push(field("pressure"), ViolationKind::PressureOutOfRange(pr));
                }
            }
        }
        Composite => {
            if let Some(parts) = &p.parts {
                if parts.len() < 2 {
                    push(field("parts"), ViolationKind::TooFewParts(parts.len()));
                }
                for (i, part) in parts.iter().enumerate() {
                    validate_into(part, &field(&format!("parts[{i}]")), out);
                }
            }
        }
        Text => {}
    }
}

/// Named-feature activation vector; absent keys read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Signature<T: Scalar> {
    pub features: BTreeMap<String, T>,
}

impl<T: Scalar> Default for Signature<T> {
    fn default() -> Self {
        Self {
            features: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Signature<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from pairs, rejecting activations outside `[0,1]`.
    pub fn from_pairs<K: Into<String>>(
        pairs: impl IntoIterator<Item = (K, T)>,
    ) -> Result<Self, ModalityError> {
        let mut s = Self::new();
        for (k, v) in pairs {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: impl Into<String>, value: T) -> Result<(), ModalityError> {
        let key = key.into();
        if !(value >= T::zero() && value <= T::one()) {
            return Err(ModalityError::ActivationOutOfRange {
                value: value.to_f64().unwrap_or(f64::NAN),
                key,
            });
        }
        self.features.insert(key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> T {
        self.features.get(key).copied().unwrap_or_else(T::zero)
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<(), ModalityError> {
        for (k, &v) in &self.features {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(ModalityError::ActivationOutOfRange {
                    key: k.clone(),
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Per-key maximum merge, in place.
    pub fn merge_max(&mut self, other: &Signature<T>) {
        for (k, &v) in &other.features {
            self.features
                .entry(k.clone())
                .and_modify(|cur| *cur = cur.max(v))
                .or_insert(v);
        }
    }

    pub fn merged(mut self, other: &Signature<T>) -> Self {
        self.merge_max(other);
        self
    }

    /// Projection onto environment features: drops the kernel's own
    /// `autonomous.*` and `executive.*` keys.
    pub fn sensory(&self) -> Self {
        Self {
            features: self
                .features
                .iter()
                .filter(|(k, _)| !is_internal_key(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Equality under the missing-key-is-zero rule.
    pub fn equivalent(&self, other: &Signature<T>) -> bool {
        signature_divergence(self, other) == T::zero()
    }

    pub fn to_f64(&self) -> Signature<f64> {
        Signature {
            features: self
                .features
                .iter()
                .map(|(k, v)| (k.clone(), v.to_f64().unwrap_or(0.0)))
                .collect(),
        }
    }
}

pub fn is_internal_key(key: &str) -> bool {
    INTERNAL_PREFIXES.iter().any(|p| key.starts_with(p))
}

/// L∞ distance over the union of keys, missing keys reading as zero.
pub fn signature_divergence<T: Scalar>(expected: &Signature<T>, observed: &Signature<T>) -> T {
    let keys: BTreeSet<&String> = expected
        .features
        .keys()
        .chain(observed.features.keys())
        .collect();
    keys.into_iter()
        .map(|k| (expected.get(k) - observed.get(k)).abs())
        .fold(T::zero(), T::max)
}

/// `1 - divergence`, the similarity used for matching and linking.
pub fn signature_similarity<T: Scalar>(a: &Signature<T>, b: &Signature<T>) -> T {
    T::one() - signature_divergence(a, b)
}

/// Deterministic summary of a payload as context features.
///
/// Every payload emits `<prefix>.<kind> = 1`. Numeric and Audio add
/// `<prefix>.mean` (clamped mean of the values, 0 when empty), Image adds
/// `<prefix>.brightness` (mean cell), and a Composite additionally carries the
/// per-key max merge of its parts, each summarised under the same prefix.
pub fn summarize_to_signature(
    p: &ModalityPayload,
    prefix: &str,
) -> Result<Signature<f64>, ModalityError> {
    let violations = validate_payload(p);
    if !violations.is_empty() {
        return Err(ModalityError::Invalid(violations));
    }
    Ok(summarize_unchecked(p, prefix))
}

fn summarize_unchecked(p: &ModalityPayload, prefix: &str) -> Signature<f64> {
    let mut sig = Signature::new();
    sig.features.insert(format!("{prefix}.{}", p.kind), 1.0);
    match p.kind {
        ModalityKind::Numeric | ModalityKind::Audio => {
            let values = p.values.as_deref().unwrap_or(&[]);
            sig.features
                .insert(format!("{prefix}.mean"), crate::scalar::clamp_unit(mean(values)));
        }
        ModalityKind::Image => {
            let grid = p.grid.as_deref().unwrap_or(&[]);
            sig.features
                .insert(format!("{prefix}.brightness"), crate::scalar::clamp_unit(mean(grid)));
        }
        ModalityKind::Composite => {
            for part in p.parts.iter().flatten() {
                sig.merge_max(&summarize_unchecked(part, prefix));
            }
        }
        ModalityKind::Text | ModalityKind::Tactile => {}
    }
    sig
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Fabric priority classes; lower value dequeues first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    Interrupt = 0,
    Control = 1,
    Data = 2,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::Interrupt, Priority::Control, Priority::Data];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Kernel-internal control messages carried on the fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ControlBody {
    Interrupt(Interrupt),
    DispatchProcedure {
        proc_id: String,
        directive_id: u64,
    },
    Action {
        caller: ModuleId,
        emitted_at: Nanos,
        action: ActionDescriptor,
    },
    StreamFault {
        source: ModuleId,
        stream_id: u64,
        missing_seq: u64,
        faulted_frames: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameBody {
    Payload(ModalityPayload),
    Control(ControlBody),
}

impl FrameBody {
    pub fn is_interrupt(&self) -> bool {
        matches!(self, FrameBody::Control(ControlBody::Interrupt(_)))
    }
}

/// Addressed, prioritised, sequence-numbered envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricFrame {
    pub frame_id: u64,
    pub source: ModuleId,
    pub destinations: BTreeSet<ModuleId>,
    pub stream_id: u64,
    pub seq: u64,
    pub priority: Priority,
    pub sent_at: Nanos,
    pub payload: FrameBody,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type Sig = Signature<f64>;

    fn sig(pairs: &[(&str, f64)]) -> Sig {
        Sig::from_pairs(pairs.iter().map(|(k, v)| (k.to_string(), *v))).unwrap()
    }

    #[test]
    fn composite_context_string_is_valid() {
        assert!(validate_payload(&ModalityPayload::text("hot fire nearby")).is_empty());
    }

    #[test]
    fn image_grid_mismatch() {
        let v = validate_payload(&ModalityPayload::image(2, 2, vec![0.0, 0.5, 1.0]));
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0].kind,
            ViolationKind::GridSizeMismatch { len: 3, width: 2, height: 2 }
        ));
        assert!(v[0].to_string().contains("grid length 3 != width*height"));
    }

    #[test]
    fn composite_with_one_part() {
        let v = validate_payload(&ModalityPayload::composite(vec![ModalityPayload::tactile(0.2)]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::TooFewParts(1));
        assert!(v[0].to_string().contains("Composite has < 2 parts"));
    }

    #[test]
    fn wrong_fields_for_kind() {
        let mut p = ModalityPayload::text("x");
        p.values = Some(vec![1.0]);
        p.text = None;
        let v = validate_payload(&p);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn out_of_range_cells_and_pressure() {
        let v = validate_payload(&ModalityPayload::image(1, 2, vec![1.2, -0.1]));
        assert_eq!(v.len(), 2);
        assert_eq!(validate_payload(&ModalityPayload::tactile(1.5)).len(), 1);
        assert_eq!(validate_payload(&ModalityPayload::numeric(vec![f64::NAN])).len(), 1);
    }

    #[test]
    fn nesting_depth_limit() {
        let leaf = || ModalityPayload::tactile(0.1);
        let mut p = ModalityPayload::composite(vec![leaf(), leaf()]);
        for _ in 0..3 {
            p = ModalityPayload::composite(vec![p, leaf()]);
        }
        assert_eq!(p.depth(), 4);
        assert!(validate_payload(&p).is_empty());
        let deeper = ModalityPayload::composite(vec![p, leaf()]);
        let v = validate_payload(&deeper);
        assert_eq!(v, vec![Violation { path: String::new(), kind: ViolationKind::NestingTooDeep(5) }]);
    }

    #[test]
    fn nested_violation_paths() {
        let p = ModalityPayload::composite(vec![
            ModalityPayload::tactile(0.1),
            ModalityPayload::image(1, 1, vec![0.1, 0.2]),
        ]);
        let v = validate_payload(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "parts[1].grid");
    }

    #[test]
    fn numeric_summary() {
        let s = summarize_to_signature(&ModalityPayload::numeric(vec![0.2, 0.4]), "lab").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("lab.Numeric"), 1.0);
        assert_abs_diff_eq!(s.get("lab.mean"), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn zero_image_summary() {
        let s = summarize_to_signature(&ModalityPayload::image(2, 2, vec![0.0; 4]), "cam").unwrap();
        assert_eq!(s, sig(&[("cam.Image", 1.0), ("cam.brightness", 0.0)]));
    }

    #[test]
    fn merge_of_numeric_and_image_summaries() {
        let lab = summarize_to_signature(&ModalityPayload::numeric(vec![0.2, 0.4]), "lab").unwrap();
        let cam = summarize_to_signature(&ModalityPayload::image(2, 2, vec![0.0; 4]), "cam").unwrap();
        let merged = lab.merged(&cam);
        let expected = sig(&[
            ("lab.Numeric", 1.0),
            ("lab.mean", 0.3),
            ("cam.Image", 1.0),
            ("cam.brightness", 0.0),
        ]);
        assert!(signature_divergence(&merged, &expected) < 1e-12);
        assert_eq!(merged.len(), 4);
    }

    #[test]
    fn composite_summary_merges_parts() {
        let p = ModalityPayload::composite(vec![
            ModalityPayload::numeric(vec![0.2, 0.4]),
            ModalityPayload::image(2, 2, vec![0.0; 4]),
        ]);
        let s = summarize_to_signature(&p, "kit").unwrap();
        assert_eq!(s.get("kit.Composite"), 1.0);
        assert_eq!(s.get("kit.Numeric"), 1.0);
        assert_eq!(s.get("kit.Image"), 1.0);
        assert_abs_diff_eq!(s.get("kit.mean"), 0.3, epsilon = 1e-12);
        assert_eq!(s.get("kit.brightness"), 0.0);
    }

    #[test]
    fn summarize_rejects_invalid() {
        let err = summarize_to_signature(&ModalityPayload::image(2, 2, vec![0.0; 3]), "cam");
        assert!(matches!(err, Err(ModalityError::Invalid(v)) if v.len() == 1));
    }

    #[test]
    fn mean_is_clamped() {
        let s = summarize_to_signature(&ModalityPayload::audio(vec![3.0, 5.0]), "mic").unwrap();
        assert_eq!(s.get("mic.mean"), 1.0);
        let s = summarize_to_signature(&ModalityPayload::numeric(vec![]), "n").unwrap();
        assert_eq!(s.get("n.mean"), 0.0);
    }

    #[test]
    fn divergence_examples() {
        let a = sig(&[("path", 1.0), ("obstacle", 0.0)]);
        assert_eq!(signature_divergence(&a, &a.clone()), 0.0);
        let b = sig(&[("path", 1.0), ("obstacle", 0.9)]);
        assert_eq!(signature_divergence(&a, &b), 0.9);
        assert_eq!(signature_divergence(&Sig::new(), &sig(&[("x", 0.3)])), 0.3);
    }

    #[test]
    fn explicit_zero_equals_missing() {
        assert!(sig(&[("x", 0.0)]).equivalent(&Sig::new()));
    }

    #[test]
    fn set_rejects_out_of_range() {
        let mut s = Sig::new();
        assert!(s.set("x", 1.5).is_err());
        assert!(s.set("x", f64::NAN).is_err());
        assert!(s.set("x", 1.0).is_ok());
    }

    #[test]
    fn sensory_projection_drops_internal_keys() {
        let s = sig(&[("eye.Image", 1.0), ("executive.complete", 1.0), ("autonomous.running", 1.0)]);
        assert_eq!(s.sensory(), sig(&[("eye.Image", 1.0)]));
    }

    #[test]
    fn generic_over_f32() {
        let a = Signature::<f32>::from_pairs([("a", 0.25f32)]).unwrap();
        let b = Signature::<f32>::from_pairs([("a", 0.75f32), ("b", 0.5)]).unwrap();
        assert_eq!(signature_divergence(&a, &b), 0.5);
    }

    #[test]
    fn payload_json_field_names() {
        let json = serde_json::to_value(ModalityPayload::image(1, 1, vec![0.5])).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "Image", "grid": [0.5], "width": 1, "height": 1})
        );
        let sig_json = serde_json::to_value(sig(&[("a", 0.5)])).unwrap();
        assert_eq!(sig_json, serde_json::json!({"features": {"a": 0.5}}));
    }
}

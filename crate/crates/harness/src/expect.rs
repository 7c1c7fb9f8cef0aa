//! Scenario expectations and their evaluation.

use std::collections::BTreeMap;

use ogi_core::executive::{Directive, DirectiveKind};
use ogi_core::ContextSignature;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Expectation {
    /// Directives of `kind` were issued: exactly `count` of them when given,
    /// otherwise at least one. Each must have been issued while every
    /// feature in `requires_features` was present in the context.
    DirectivePresent {
        kind: DirectiveKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        requires_features: Vec<String>,
    },
    /// Exactly `count` interrupts reached the executive.
    InterruptCount { count: usize },
    /// A numeric field of the metrics report, addressed by dotted path,
    /// lies within `[min, max]`.
    MetricBound {
        metric: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

/// What a run produced, as seen by the expectations.
pub struct Evidence<'a> {
    pub directives: &'a [Directive],
    /// Context in force when each directive was issued, by directive id.
    pub contexts: &'a BTreeMap<u64, ContextSignature>,
    pub interrupts: usize,
    pub report: &'a Value,
}

/// Look up a dotted path such as `resource.peak_stm` in a JSON document.
pub fn lookup<'v>(doc: &'v Value, path: &str) -> Option<&'v Value> {
    path.split('.').try_fold(doc, |cur, part| match cur {
        Value::Object(m) => m.get(part),
        Value::Array(a) => a.get(part.parse::<usize>().ok()?),
        _ => None,
    })
}

impl Expectation {
    pub fn check(&self) -> Result<(), String> {
        match self {
            Expectation::MetricBound { min: None, max: None, .. } => Err("metric_bound needs min or max".into()),
            Expectation::MetricBound {
                min: Some(lo),
                max: Some(hi),
                ..
            } if lo > hi => Err(format!("metric_bound min {lo} > max {hi}")),
            Expectation::DirectivePresent {
                count: Some(0),
                requires_features,
                ..
            } if !requires_features.is_empty() => Err("requires_features with count 0 can never apply".into()),
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, ev: &Evidence<'_>) -> ExpectationResult {
        let (passed, detail) = match self {
            Expectation::DirectivePresent {
                kind,
                count,
                requires_features,
            } => {
                let matching: Vec<&Directive> = ev.directives.iter().filter(|d| d.action.kind() == *kind).collect();
                let n = matching.len();
                let count_ok = match count {
                    Some(c) => n == *c,
                    None => n > 0,
                };
                let early = matching.iter().find_map(|d| {
                    let ctx = ev.contexts.get(&d.directive_id);
                    let missing: Vec<&str> = requires_features
                        .iter()
                        .filter(|f| ctx.is_none_or(|c| c.get(f) <= 0.0))
                        .map(String::as_str)
                        .collect();
                    (!missing.is_empty()).then(|| (d.directive_id, missing.join(", ")))
                });
                match (count_ok, early) {
                    (false, _) => (
                        false,
                        match count {
                            Some(c) => format!("{n} {kind} directives, expected {c}"),
                            None => format!("no {kind} directive"),
                        },
                    ),
                    (true, Some((id, missing))) => (false, format!("{kind} #{id} issued without {missing}")),
                    (true, None) => (true, format!("{n} {kind} directives")),
                }
            }
            Expectation::InterruptCount { count } => (
                ev.interrupts == *count,
                format!("{} interrupts, expected {count}", ev.interrupts),
            ),
            Expectation::MetricBound { metric, min, max } => match lookup(ev.report, metric).and_then(Value::as_f64) {
                None => (false, format!("metric `{metric}` missing or not numeric")),
                Some(v) => {
                    let lo = min.is_none_or(|m| v >= m);
                    let hi = max.is_none_or(|m| v <= m);
                    let range = format!(
                        "[{}, {}]",
                        min.map_or("-inf".into(), |m| m.to_string()),
                        max.map_or("inf".into(), |m| m.to_string())
                    );
                    (lo && hi, format!("{metric} = {v}, bound {range}"))
                }
            },
        };
        ExpectationResult {
            expectation: self.clone(),
            passed,
            detail,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ogi_core::executive::DirectiveAction;
    use serde_json::json;

    fn complete(id: u64) -> Directive {
        Directive {
            directive_id: id,
            action: DirectiveAction::Complete { goal: "g".into() },
            issued_at_revision: 1,
            issued_at: 0,
        }
    }

    #[test]
    fn directive_presence_checks_context() {
        let directives = vec![complete(1)];
        let mut contexts = BTreeMap::new();
        contexts.insert(1, ContextSignature::from_pairs([("a.Text", 1.0)]).unwrap());
        let report = json!({});
        let ev = Evidence {
            directives: &directives,
            contexts: &contexts,
            interrupts: 0,
            report: &report,
        };
        let with = |features: &[&str], count| Expectation::DirectivePresent {
            kind: DirectiveKind::Complete,
            count,
            requires_features: features.iter().map(|s| s.to_string()).collect(),
        };
        assert!(with(&["a.Text"], Some(1)).evaluate(&ev).passed);
        assert!(with(&[], None).evaluate(&ev).passed);
        let r = with(&["a.Text", "b.Image"], None).evaluate(&ev);
        assert!(!r.passed);
        assert_eq!(r.detail, "Complete #1 issued without b.Image");
        assert!(!with(&[], Some(0)).evaluate(&ev).passed);
    }

    #[test]
    fn metric_bounds() {
        let report = json!({"resource": {"peak_stm": 4}, "rows": [{"x": 2.5}]});
        let ev = Evidence {
            directives: &[],
            contexts: &BTreeMap::new(),
            interrupts: 0,
            report: &report,
        };
        let bound = |metric: &str, min, max| Expectation::MetricBound {
            metric: metric.into(),
            min,
            max,
        };
        assert!(bound("resource.peak_stm", None, Some(4.0)).evaluate(&ev).passed);
        assert!(!bound("resource.peak_stm", Some(5.0), None).evaluate(&ev).passed);
        assert!(bound("rows.0.x", Some(2.0), Some(3.0)).evaluate(&ev).passed);
        assert!(!bound("resource.nope", None, Some(1.0)).evaluate(&ev).passed);
        assert!(bound("x", None, None).check().is_err());
        assert!(bound("x", Some(2.0), Some(1.0)).check().is_err());
    }
}

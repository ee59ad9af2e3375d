use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TaskModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    MissingStartingState,
    DanglingNextState,
    EmptyBipMethod,
    UnreachableState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// Slash-separated path, e.g. `state:connected/event:disconnect/negative`.
    pub location: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} at {}", self.severity, self.code, self.location)
    }
}

/// States reachable from the starting state through either branch of any
/// event. References to undefined states are not followed.
pub fn reachable_states(model: &TaskModel) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    if !model.states.contains_key(&model.starting_state) {
        return seen;
    }
    let mut queue = VecDeque::from([model.starting_state.as_str()]);
    seen.insert(model.starting_state.clone());
    while let Some(id) = queue.pop_front() {
        for ev in model.states[id].events.values() {
            for next in [&ev.call.positive.next_state, &ev.call.negative.next_state] {
                if model.states.contains_key(next) && seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    seen
}

/// Structural checks. Errors: undefined starting state, dangling
/// `next_state`, empty BIP method. Warnings: states unreachable from the
/// starting state.
pub fn validate(model: &TaskModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !model.states.contains_key(&model.starting_state) {
        out.push(Diagnostic {
            severity: Severity::Error,
            code: DiagnosticCode::MissingStartingState,
            location: format!("starting_state:{}", model.starting_state),
        });
    }
    for state in model.states.values() {
        for ev in state.events.values() {
            let at = format!("state:{}/event:{}", state.id, ev.id);
            if ev.call.bip_method.trim().is_empty() {
                out.push(Diagnostic {
                    severity: Severity::Error,
                    code: DiagnosticCode::EmptyBipMethod,
                    location: at.clone(),
                });
            }
            for (tag, branch) in [("positive", &ev.call.positive), ("negative", &ev.call.negative)] {
                if !model.states.contains_key(&branch.next_state) {
                    out.push(Diagnostic {
                        severity: Severity::Error,
                        code: DiagnosticCode::DanglingNextState,
                        location: format!("{at}/{tag}:{}", branch.next_state),
                    });
                }
            }
        }
    }
    let reachable = reachable_states(model);
    for id in model.states.keys().filter(|id| !reachable.contains(*id)) {
        out.push(Diagnostic {
            severity: Severity::Warning,
            code: DiagnosticCode::UnreachableState,
            location: format!("state:{id}"),
        });
    }
    out
}

pub fn error_count(diagnostics: &[Diagnostic]) -> usize {
    diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .count()
}

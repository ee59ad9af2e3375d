//! Declarative mapping from raw terminal actions to task-model events.
//!
//! A binding table belongs to one application and is loaded from JSON:
//!
//! ```json
//! {"app_id": "cofos", "bindings": [
//!   {"kind": "text", "trigger": "send", "event": "select_specific_template",
//!    "params": ["message_template"]}
//! ]}
//! ```
//!
//! A raw action's payload is split on whitespace. The first token selects
//! the binding; following plain tokens fill the binding's parameters in
//! order (the last parameter takes any remaining words), and `key=value`
//! tokens are gathered into an object parameter, `bindings` unless the
//! binding names another one with `collect`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::service_bus::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawKind {
    Gesture,
    Click,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAction {
    pub kind: RawKind,
    pub payload: String,
}

impl RawAction {
    pub fn text(payload: &str) -> Self {
        Self {
            kind: RawKind::Text,
            payload: payload.to_owned(),
        }
    }

    pub fn click(payload: &str) -> Self {
        Self {
            kind: RawKind::Click,
            payload: payload.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub kind: RawKind,
    /// Widget id, gesture name or text command.
    pub trigger: String,
    pub event: String,
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collect: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingTable {
    pub app_id: String,
    pub bindings: Vec<Binding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("no binding for {kind:?} {trigger:?}")]
    UnboundAction { kind: RawKind, trigger: String },
    #[error("binding table: {0}")]
    Invalid(String),
}

/// The parameter that collects `key=value` tokens.
pub const BINDINGS_PARAM: &str = "bindings";

impl BindingTable {
    pub fn from_json(text: &str) -> Result<Self, BindingError> {
        let table: Self =
            serde_json::from_str(text).map_err(|e| BindingError::Invalid(e.to_string()))?;
        table.check()?;
        Ok(table)
    }

    /// Triggers and events must both be unique so the table can be read in
    /// either direction.
    pub fn check(&self) -> Result<(), BindingError> {
        let mut triggers = BTreeSet::new();
        let mut events = BTreeSet::new();
        for b in &self.bindings {
            if b.trigger.is_empty() || b.trigger.contains(char::is_whitespace) {
                return Err(BindingError::Invalid(format!("bad trigger {:?}", b.trigger)));
            }
            if !triggers.insert((b.kind, b.trigger.as_str())) {
                return Err(BindingError::Invalid(format!(
                    "{:?} {} bound twice",
                    b.kind, b.trigger
                )));
            }
            if !events.insert(b.event.as_str()) {
                return Err(BindingError::Invalid(format!("event {} bound twice", b.event)));
            }
        }
        Ok(())
    }

    /// Raw action → (event id, parameters).
    pub fn encode(&self, raw: &RawAction) -> Result<(String, Params), BindingError> {
        let mut tokens = raw.payload.split_whitespace();
        let trigger = tokens.next().unwrap_or_default();
        let binding = self
            .bindings
            .iter()
            .find(|b| b.kind == raw.kind && b.trigger == trigger)
            .ok_or_else(|| BindingError::UnboundAction {
                kind: raw.kind,
                trigger: trigger.to_owned(),
            })?;
        let mut params = Params::new();
        let mut extra = Params::new();
        let mut words: Vec<String> = Vec::new();
        for tok in tokens {
            match tok.split_once('=') {
                Some((k, v)) if !k.is_empty() => {
                    extra.insert(k.to_owned(), Value::String(v.to_owned()));
                }
                _ if words.len() < binding.params.len() => words.push(tok.to_owned()),
                _ => {
                    if let Some(last) = words.last_mut() {
                        last.push(' ');
                        last.push_str(tok);
                    }
                }
            }
        }
        for (slot, word) in binding.params.iter().zip(words) {
            params.insert(slot.clone(), Value::String(word));
        }
        if !extra.is_empty() || binding.collect.is_some() {
            let name = binding.collect.as_deref().unwrap_or(BINDINGS_PARAM);
            params.insert(name.to_owned(), Value::Object(extra));
        }
        Ok((binding.event.clone(), params))
    }

    /// The binding that produces `event`.
    pub fn decode(&self, event: &str) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.event == event)
    }
}

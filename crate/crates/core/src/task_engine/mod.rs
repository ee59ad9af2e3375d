//! Task models: flat state graphs, one per user class.
//!
//! Each state lists the events a user may produce there. An event binds its
//! input parameters to a BIP method, and the BIP's positive or negative
//! outcome picks the next state:
//!
//! ```xml
//! <state id="browsing_specific_templates1">
//!   <events>
//!     <event id="select_specific_template">
//!       <in_param id="message_template" type="business.cofos.data.Template" />
//!       <interaction_call id="select_specific_template1">
//!         <method id="hic.im.business.cofos.bip.common.SelectSpecificTemplate" />
//!         <next_states>
//!           <positive>
//!             <out_param id="message_sent" type="java.lang.String" />
//!             <next_state id="connected" />
//!           </positive>
//!           <negative>
//!             <out_param id="incomplete_message" type="java.lang.String" />
//!             <next_state id="writing_specific_msg1" />
//!           </negative>
//!         </next_states>
//!       </interaction_call>
//!     </event>
//!   </events>
//! </state>
//! ```
//!
//! Models are immutable once parsed; every query here is a pure read.

mod parser;
mod validate;
mod writer;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::service_bus::ParamSpec;
pub use parser::{decode_xml, parse_task_model, parse_task_model_bytes, ParseError};
pub use validate::{error_count, reachable_states, validate, Diagnostic, DiagnosticCode, Severity};
pub use writer::to_xml;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskModel {
    /// The user class this model serves.
    pub model_id: String,
    pub starting_state: String,
    pub states: IndexMap<String, State>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub id: String,
    pub events: IndexMap<String, EventSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: String,
    pub in_params: Vec<ParamSpec>,
    pub call: InteractionCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionCall {
    pub id: String,
    pub bip_method: String,
    pub positive: Branch,
    pub negative: Branch,
}

impl InteractionCall {
    pub fn branch(&self, outcome: Outcome) -> &Branch {
        match outcome {
            Outcome::Positive => &self.positive,
            Outcome::Negative => &self.negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub out_params: Vec<ParamSpec>,
    pub next_state: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Negative,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Positive => "positive",
            Outcome::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("event {event} is not allowed in state {state}")]
    EventNotAllowed { state: String, event: String },
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
}

impl TaskModel {
    pub fn state(&self, id: &str) -> Result<&State, TaskError> {
        self.states
            .get(id)
            .ok_or_else(|| TaskError::UnknownState(id.to_owned()))
    }

    /// Ids of the events a user may produce in `state_id`.
    pub fn allowed_events(&self, state_id: &str) -> Result<BTreeSet<String>, TaskError> {
        Ok(self.state(state_id)?.events.keys().cloned().collect())
    }

    pub fn event(&self, state_id: &str, event_id: &str) -> Result<&EventSpec, TaskError> {
        self.state(state_id)?
            .events
            .get(event_id)
            .ok_or_else(|| TaskError::EventNotAllowed {
                state: state_id.to_owned(),
                event: event_id.to_owned(),
            })
    }

    /// Where `event_id` leads from `state_id` under `outcome`, with the
    /// out-parameter schema of that branch.
    pub fn transition(
        &self,
        state_id: &str,
        event_id: &str,
        outcome: Outcome,
    ) -> Result<(&str, &[ParamSpec]), TaskError> {
        let branch = self.event(state_id, event_id)?.call.branch(outcome);
        Ok((branch.next_state.as_str(), branch.out_params.as_slice()))
    }

    /// Every BIP method id referenced anywhere in the model.
    pub fn bip_methods(&self) -> BTreeSet<&str> {
        self.states
            .values()
            .flat_map(|s| s.events.values())
            .map(|e| e.call.bip_method.as_str())
            .collect()
    }

    /// Every event id used in any state.
    pub fn event_ids(&self) -> BTreeSet<&str> {
        self.states
            .values()
            .flat_map(|s| s.events.keys())
            .map(String::as_str)
            .collect()
    }

    /// Reads a `*.task.xml` file. When the document carries no `id`
    /// attribute, the model id is the file name up to its first dot.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let shown = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut model = parse_task_model_bytes(&bytes).map_err(|source| LoadError::Parse {
            path: shown,
            source,
        })?;
        if model.model_id.is_empty() {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            model.model_id = name.split('.').next().unwrap_or_default().to_owned();
        }
        Ok(model)
    }
}

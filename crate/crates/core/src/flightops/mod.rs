//! COFOS stand-in: an airport flight-operations application.
//!
//! The application knows nothing about terminals or task models. It keeps a
//! flight table and a set of message templates, exposes them as the
//! `COFOSServ` service, and declares its BIPs to the kernel. Flight updates
//! reach the operators' screens only through `IMServ.BusinessRequest`.

mod bips;
mod feed;
mod service;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::interaction_container::{Column, DisplayPayload, Row};
use crate::interaction_core::IMSERV;
use crate::profile_store::ProfileStore;
use crate::service_bus::{Params, ServiceBus};

pub use bips::{install_bips, BIP_PREFIX};
pub use feed::FeedSimulator;
pub use service::{cofos_descriptor, CofosServ, COFOSSERV};

pub const APP_ID: &str = "cofos";
pub const DATA_CLASS: &str = "flight";
pub const UPDATE_RIGHT: &str = "flight.update";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightStatus {
    Scheduled,
    Boarding,
    Departed,
    Delayed,
    Cancelled,
}

impl FlightStatus {
    pub const ALL: [FlightStatus; 5] = [
        FlightStatus::Scheduled,
        FlightStatus::Boarding,
        FlightStatus::Departed,
        FlightStatus::Delayed,
        FlightStatus::Cancelled,
    ];

    pub fn is_alert(self) -> bool {
        matches!(self, FlightStatus::Delayed | FlightStatus::Cancelled)
    }
}

impl fmt::Display for FlightStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// A flight as stored. `alert` is derived from `status` and recomputed on
/// every write, whatever the input said.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flight {
    pub flight_id: String,
    pub airline: String,
    pub scheduled_time: String,
    pub estimated_time: String,
    pub gate: String,
    pub status: FlightStatus,
    #[serde(default)]
    pub alert: bool,
}

impl Flight {
    fn normalized(mut self) -> Self {
        self.alert = self.status.is_alert();
        self
    }

    fn field(&self, name: &str) -> Option<String> {
        Some(match name {
            "flight_id" => self.flight_id.clone(),
            "airline" => self.airline.clone(),
            "scheduled_time" => self.scheduled_time.clone(),
            "estimated_time" => self.estimated_time.clone(),
            "gate" => self.gate.clone(),
            "status" => self.status.to_string(),
            "alert" => self.alert.to_string(),
            _ => return None,
        })
    }

    pub fn to_row(&self) -> Row {
        BOARD_COLUMNS
            .iter()
            .filter_map(|(id, ..)| self.field(id).map(|v| ((*id).to_owned(), v)))
            .collect()
    }
}

pub const FILTER_FIELDS: [&str; 7] = [
    "flight_id",
    "airline",
    "scheduled_time",
    "estimated_time",
    "gate",
    "status",
    "alert",
];

/// Editable fields. Identity and airline never change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<FlightStatus>,
}

impl FlightPatch {
    pub fn apply(&self, flight: &Flight) -> Flight {
        let mut f = flight.clone();
        if let Some(t) = &self.estimated_time {
            f.estimated_time = t.clone();
        }
        if let Some(g) = &self.gate {
            f.gate = g.clone();
        }
        if let Some(s) = self.status {
            f.status = s;
        }
        f.normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateScope {
    General,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTemplate {
    pub template_id: String,
    pub scope: TemplateScope,
    pub body: String,
}

impl MessageTemplate {
    /// `{name}` slots in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            let Some(len) = rest[open + 1..].find('}') else { break };
            let name = &rest[open + 1..open + 1 + len];
            if !out.iter().any(|n| n == name) {
                out.push(name.to_owned());
            }
            rest = &rest[open + len + 2..];
        }
        out
    }

    /// Slots left unbound by `values`.
    pub fn missing(&self, values: &BTreeMap<String, String>) -> Vec<String> {
        self.placeholders()
            .into_iter()
            .filter(|p| !values.contains_key(p))
            .collect()
    }

    pub fn fill(&self, values: &BTreeMap<String, String>) -> String {
        let mut body = self.body.clone();
        for (k, v) in values {
            body = body.replace(&format!("{{{k}}}"), v);
        }
        body
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlightOpsError {
    #[error("unknown filter field {0}")]
    BadFilter(String),
    #[error("unknown flight {0}")]
    UnknownFlight(String),
    #[error("{actor} may not update flights")]
    RightDenied { actor: String },
    #[error("bad patch: {0}")]
    BadPatch(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

pub fn parse_flights(text: &str) -> Result<Vec<Flight>, FlightOpsError> {
    let flights: Vec<Flight> =
        serde_json::from_str(text).map_err(|e| FlightOpsError::Fixture(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for f in &flights {
        if !seen.insert(&f.flight_id) {
            return Err(FlightOpsError::Fixture(format!("flight {} listed twice", f.flight_id)));
        }
    }
    Ok(flights.into_iter().map(Flight::normalized).collect())
}

pub fn parse_templates(text: &str) -> Result<Vec<MessageTemplate>, FlightOpsError> {
    let list: Vec<MessageTemplate> =
        serde_json::from_str(text).map_err(|e| FlightOpsError::Fixture(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for t in &list {
        if !seen.insert(&t.template_id) {
            return Err(FlightOpsError::Fixture(format!("template {} listed twice", t.template_id)));
        }
        let slots = t.body.matches('{').count();
        if slots != t.placeholders().len() {
            return Err(FlightOpsError::Fixture(format!(
                "template {} repeats a placeholder",
                t.template_id
            )));
        }
    }
    Ok(list)
}

/// (column id, label, width) in decreasing importance.
pub const BOARD_COLUMNS: [(&str, &str, usize); 6] = [
    ("flight_id", "Flight", 8),
    ("status", "Status", 10),
    ("estimated_time", "ETD", 5),
    ("gate", "Gate", 4),
    ("airline", "Airline", 7),
    ("scheduled_time", "STD", 5),
];

/// A flight table as a display payload; delays and cancellations are alerts.
pub fn board_payload(title: &str, flights: &[Flight]) -> DisplayPayload {
    DisplayPayload {
        title: title.to_owned(),
        columns: BOARD_COLUMNS
            .iter()
            .enumerate()
            .map(|(i, (id, label, width))| Column::new(id, label, i as i64, *width))
            .collect(),
        rows: flights.iter().map(Flight::to_row).collect(),
        alert_rows: flights
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alert)
            .map(|(i, _)| i)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentMessage {
    pub message_id: String,
    pub author: String,
    pub template_id: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, Default)]
struct Draft {
    template_id: Option<String>,
    values: BTreeMap<String, String>,
}

/// The application state. One instance serves every session.
pub struct FlightOps {
    flights: RwLock<BTreeMap<String, Flight>>,
    templates: BTreeMap<String, MessageTemplate>,
    drafts: Mutex<HashMap<String, Draft>>,
    messages: Mutex<Vec<SentMessage>>,
    profiles: Arc<ProfileStore>,
    bus: Option<Arc<ServiceBus>>,
    updates: Mutex<Vec<(String, FlightPatch)>>,
}

impl FlightOps {
    pub fn new(
        flights: Vec<Flight>,
        templates: Vec<MessageTemplate>,
        profiles: Arc<ProfileStore>,
        bus: Option<Arc<ServiceBus>>,
    ) -> Self {
        Self {
            flights: RwLock::new(
                flights
                    .into_iter()
                    .map(|f| (f.flight_id.clone(), f.normalized()))
                    .collect(),
            ),
            templates: templates
                .into_iter()
                .map(|t| (t.template_id.clone(), t))
                .collect(),
            drafts: Mutex::new(HashMap::new()),
            messages: Mutex::new(Vec::new()),
            profiles,
            bus,
            updates: Mutex::new(Vec::new()),
        }
    }

    /// All flights matching every `field = value` pair, by flight id.
    pub fn query_flights(&self, filter: &BTreeMap<String, String>) -> Result<Vec<Flight>, FlightOpsError> {
        if let Some(bad) = filter.keys().find(|k| !FILTER_FIELDS.contains(&k.as_str())) {
            return Err(FlightOpsError::BadFilter(bad.clone()));
        }
        Ok(self
            .flights
            .read()
            .values()
            .filter(|f| filter.iter().all(|(k, v)| f.field(k).as_deref() == Some(v.as_str())))
            .cloned()
            .collect())
    }

    pub fn flight(&self, flight_id: &str) -> Option<Flight> {
        self.flights.read().get(flight_id).cloned()
    }

    pub fn board(&self) -> DisplayPayload {
        let flights: Vec<Flight> = self.flights.read().values().cloned().collect();
        board_payload("Departures", &flights)
    }

    /// Rights-checked update. On success the new row is pushed to every
    /// operator allowed to read flights.
    pub fn update_flight(&self, actor: &str, flight_id: &str, patch: &FlightPatch) -> Result<Flight, FlightOpsError> {
        let allowed = self
            .profiles
            .check_right(actor, UPDATE_RIGHT)
            .map(|d| d.is_allowed())
            .unwrap_or(false);
        if !allowed {
            return Err(FlightOpsError::RightDenied {
                actor: actor.to_owned(),
            });
        }
        self.apply(flight_id, patch)
    }

    /// Applies a patch on the application's own authority (the live feed).
    pub fn apply(&self, flight_id: &str, patch: &FlightPatch) -> Result<Flight, FlightOpsError> {
        let updated = {
            let mut flights = self.flights.write();
            let current = flights
                .get(flight_id)
                .ok_or_else(|| FlightOpsError::UnknownFlight(flight_id.to_owned()))?;
            let updated = patch.apply(current);
            flights.insert(flight_id.to_owned(), updated.clone());
            self.updates.lock().push((flight_id.to_owned(), patch.clone()));
            updated
        };
        self.publish(&updated);
        Ok(updated)
    }

    fn publish(&self, flight: &Flight) {
        let Some(bus) = &self.bus else { return };
        let payload = board_payload(&format!("Update {}", flight.flight_id), std::slice::from_ref(flight));
        let Value::Object(params) = json!({
            "app_id": APP_ID,
            "info": {"data_class": DATA_CLASS, "payload": payload, "flight": flight},
        }) else {
            unreachable!()
        };
        if let Err(f) = bus.invoke(COFOSSERV, IMSERV, "BusinessRequest", params) {
            log::warn!("flight update for {} not delivered: {f}", flight.flight_id);
        }
    }

    /// Every patch applied so far, in order.
    pub fn update_log(&self) -> Vec<(String, FlightPatch)> {
        self.updates.lock().clone()
    }

    pub fn templates(&self, scope: TemplateScope) -> Vec<&MessageTemplate> {
        self.templates.values().filter(|t| t.scope == scope).collect()
    }

    pub fn template(&self, id: &str) -> Option<&MessageTemplate> {
        self.templates.get(id)
    }

    pub fn messages(&self) -> Vec<SentMessage> {
        self.messages.lock().clone()
    }

    pub fn message(&self, message_id: &str) -> Option<SentMessage> {
        self.messages
            .lock()
            .iter()
            .find(|m| m.message_id == message_id)
            .cloned()
    }

    fn send(&self, author: &str, template_id: Option<String>, body: String) -> SentMessage {
        let mut messages = self.messages.lock();
        let msg = SentMessage {
            message_id: format!("m{}", messages.len() + 1),
            author: author.to_owned(),
            template_id,
            body,
        };
        messages.push(msg.clone());
        msg
    }

    pub fn has_draft(&self, session_id: &str) -> bool {
        self.drafts.lock().contains_key(session_id)
    }

    /// Writes the flight table as pretty JSON.
    pub fn save_snapshot(&self, path: &Path) -> std::io::Result<()> {
        let flights: Vec<Flight> = self.flights.read().values().cloned().collect();
        let text = serde_json::to_string_pretty(&flights).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn flights(&self) -> Vec<Flight> {
        self.flights.read().values().cloned().collect()
    }
}

/// The flight fields carried in business-request params, for tests and
/// clients that want the structured row rather than the rendered one.
pub fn flight_from_info(info: &Params) -> Option<Flight> {
    serde_json::from_value(info.get("flight")?.clone()).ok()
}

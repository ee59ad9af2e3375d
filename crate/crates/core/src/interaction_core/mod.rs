//! The middleware kernel.
//!
//! [`InteractionCore`] owns the sessions and the BIP registry and runs the
//! interaction loop. For each incoming action it
//!
//! 1. finds the actor's class through the profile store,
//! 2. checks that the session's current state allows the event,
//! 3. checks that the actor's class holds the right to the event's BIP,
//! 4. checks that every declared input parameter is present,
//! 5. executes the BIP and follows its positive or negative branch,
//!
//! and then notifies the session's interaction container, once through the
//! event heap and once through `ICServ.DisplayRequest`. Any failure along
//! the way is a rejection: the session stays where it was, the rejection is
//! recorded in the history and notified like an accepted action.
//!
//! The kernel never asks whether an actor is a person or a program.

mod service;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::Tick;
use crate::event_heap::{Event, EventHeap, Scalar};
use crate::interaction_container::{
    CapabilityPresets, Column, DisplayPayload, TerminalCapability, TerminalKind,
};
use crate::profile_store::{ProfileError, ProfileStore};
use crate::service_bus::{Params, ServiceBus};
use crate::task_engine::{Outcome, TaskModel};

pub use service::{imserv_descriptor, ImServ, IMSERV};

pub const NOTIFICATION_EVENT: &str = "notification";
pub const BUSINESS_EVENT: &str = "business_update";
pub const DEFAULT_NOTIFICATION_TTL: Tick = 300;

/// An encoded user or application behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionData {
    pub actor_id: String,
    pub session_id: String,
    pub event_id: String,
    #[serde(default)]
    pub params: Params,
}

/// What a BIP handler sees.
#[derive(Debug, Clone, Copy)]
pub struct BipCall<'a> {
    pub session_id: &'a str,
    pub actor_id: &'a str,
    pub params: &'a Params,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipOutcome {
    pub branch: Outcome,
    #[serde(default)]
    pub out_params: Params,
}

impl BipOutcome {
    pub fn positive() -> Self {
        Self {
            branch: Outcome::Positive,
            out_params: Params::new(),
        }
    }

    pub fn negative() -> Self {
        Self {
            branch: Outcome::Negative,
            out_params: Params::new(),
        }
    }

    pub fn with(mut self, id: &str, value: impl Into<Value>) -> Self {
        self.out_params.insert(id.to_owned(), value.into());
        self
    }
}

/// A BIP that could not run at all. Unlike a negative outcome this causes
/// no transition.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BipFault(pub String);

pub trait BipHandler: Send + Sync {
    fn execute(&self, call: &BipCall<'_>) -> Result<BipOutcome, BipFault>;
}

impl<F> BipHandler for F
where
    F: Fn(&BipCall<'_>) -> Result<BipOutcome, BipFault> + Send + Sync,
{
    fn execute(&self, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
        self(call)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum RejectReason {
    UnknownActor,
    EventNotAllowed,
    RightDenied { permission: String },
    MissingParam { id: String },
    UnboundBip { method: String },
    BipFault { message: String },
    UndeclaredOutParam { id: String },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UnknownActor => "unknown_actor",
            RejectReason::EventNotAllowed => "event_not_allowed",
            RejectReason::RightDenied { .. } => "right_denied",
            RejectReason::MissingParam { .. } => "missing_param",
            RejectReason::UnboundBip { .. } => "unbound_bip",
            RejectReason::BipFault { .. } => "bip_fault",
            RejectReason::UndeclaredOutParam { .. } => "undeclared_out_param",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::RightDenied { permission } => write!(f, "right denied: {permission}"),
            RejectReason::MissingParam { id } => write!(f, "missing parameter {id}"),
            RejectReason::UnboundBip { method } => write!(f, "no BIP bound to {method}"),
            RejectReason::BipFault { message } => write!(f, "BIP failed: {message}"),
            RejectReason::UndeclaredOutParam { id } => write!(f, "BIP returned undeclared {id}"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub event_id: String,
    pub status: RequestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Outcome>,
    pub out_params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub actor_id: String,
    pub app_id: String,
    pub model_id: String,
    pub current_state: String,
    pub history: Vec<HistoryEntry>,
    pub container_id: String,
    pub capability: TerminalCapability,
}

/// The answer to one interaction request, also delivered to the container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub session_id: String,
    pub actor_id: String,
    pub event_id: String,
    pub status: RequestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Outcome>,
    pub out_params: Params,
    pub new_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    /// Position of the matching entry in the session history.
    pub history_index: usize,
}

impl Notification {
    pub fn accepted(&self) -> bool {
        self.status == RequestStatus::Accepted
    }

    /// Two-column rendering of the notification for DisplayRequest.
    pub fn to_payload(&self) -> DisplayPayload {
        let mut rows = vec![
            row("status", &format!("{:?}", self.status).to_lowercase()),
            row("state", &self.new_state),
        ];
        if let Some(b) = self.branch {
            rows.push(row("branch", &b.to_string()));
        }
        if let Some(r) = &self.reason {
            rows.push(row("reason", &r.to_string()));
        }
        for (k, v) in &self.out_params {
            let shown = v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string());
            rows.push(row(k, &shown));
        }
        let alert_rows = if self.accepted() {
            BTreeSet::new()
        } else {
            BTreeSet::from([0])
        };
        DisplayPayload {
            title: self.event_id.clone(),
            columns: vec![
                Column::new("field", "Field", 0, 12),
                Column::new("value", "Value", 1, 32),
            ],
            rows,
            alert_rows,
        }
    }
}

fn row(field: &str, value: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("field".to_owned(), field.to_owned()),
        ("value".to_owned(), value.to_owned()),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("no task model {0}")]
    UnknownTaskModel(String),
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("BIP {0} is already bound")]
    DuplicateBip(String),
    #[error("bad business info: {0}")]
    BadInfo(String),
}

impl From<ProfileError> for CoreError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::UnknownUser(u) => CoreError::UnknownUser(u),
            other => CoreError::UnknownUser(other.to_string()),
        }
    }
}

/// Where a session's notifications go. Kept apart from the session itself
/// so business fan-out never waits on a session busy with a BIP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub session_id: String,
    pub actor_id: String,
    pub app_id: String,
    pub container_id: String,
    pub capability: TerminalCapability,
}

pub struct InteractionCore {
    heap: Arc<EventHeap>,
    bus: Arc<ServiceBus>,
    profiles: Arc<ProfileStore>,
    presets: CapabilityPresets,
    models: RwLock<BTreeMap<String, Arc<TaskModel>>>,
    bips: RwLock<HashMap<String, Arc<dyn BipHandler>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    attachments: RwLock<BTreeMap<String, Attachment>>,
    apps: RwLock<BTreeSet<String>>,
    next_session: AtomicU64,
    notification_ttl: Tick,
}

impl InteractionCore {
    pub fn new(
        heap: Arc<EventHeap>,
        bus: Arc<ServiceBus>,
        profiles: Arc<ProfileStore>,
        presets: CapabilityPresets,
    ) -> Self {
        Self {
            heap,
            bus,
            profiles,
            presets,
            models: RwLock::new(BTreeMap::new()),
            bips: RwLock::new(HashMap::new()),
            sessions: RwLock::new(BTreeMap::new()),
            attachments: RwLock::new(BTreeMap::new()),
            apps: RwLock::new(BTreeSet::new()),
            next_session: AtomicU64::new(1),
            notification_ttl: DEFAULT_NOTIFICATION_TTL,
        }
    }

    pub fn with_notification_ttl(mut self, ttl: Tick) -> Self {
        self.notification_ttl = ttl.max(1);
        self
    }

    pub fn heap(&self) -> &Arc<EventHeap> {
        &self.heap
    }

    pub fn bus(&self) -> &Arc<ServiceBus> {
        &self.bus
    }

    pub fn profiles(&self) -> &Arc<ProfileStore> {
        &self.profiles
    }

    pub fn presets(&self) -> &CapabilityPresets {
        &self.presets
    }

    pub fn add_model(&self, model: TaskModel) {
        self.models
            .write()
            .insert(model.model_id.clone(), Arc::new(model));
    }

    pub fn model(&self, model_id: &str) -> Option<Arc<TaskModel>> {
        self.models.read().get(model_id).cloned()
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.read().keys().cloned().collect()
    }

    pub fn register_app(&self, app_id: &str) {
        self.apps.write().insert(app_id.to_owned());
    }

    pub fn register_bip(&self, method_id: &str, handler: Arc<dyn BipHandler>) -> Result<(), CoreError> {
        let mut bips = self.bips.write();
        if bips.contains_key(method_id) {
            return Err(CoreError::DuplicateBip(method_id.to_owned()));
        }
        bips.insert(method_id.to_owned(), handler);
        Ok(())
    }

    /// Runs a bound BIP directly, outside any session.
    pub fn execute_bip(&self, method_id: &str, call: &BipCall<'_>) -> Result<BipOutcome, RejectReason> {
        let handler = self
            .bips
            .read()
            .get(method_id)
            .cloned()
            .ok_or_else(|| RejectReason::UnboundBip {
                method: method_id.to_owned(),
            })?;
        handler.execute(call).map_err(|f| RejectReason::BipFault { message: f.0 })
    }

    fn capability_for(&self, actor_id: &str) -> TerminalCapability {
        self.profiles
            .get_user(actor_id)
            .ok()
            .and_then(|u| u.preferences.get("terminal").cloned())
            .and_then(|t| t.parse::<TerminalKind>().ok())
            .map(|k| self.presets.get(k))
            .unwrap_or(self.presets.pc)
    }

    /// Starts a session in the starting state of the actor's class model.
    /// Without an explicit capability the actor's `terminal` preference
    /// picks a preset, defaulting to pc.
    pub fn open_session(
        &self,
        actor_id: &str,
        app_id: &str,
        container_id: &str,
        capability: Option<TerminalCapability>,
    ) -> Result<Session, CoreError> {
        let class = self.profiles.class_of(actor_id)?;
        let model = self
            .model(&class.task_model_id)
            .ok_or_else(|| CoreError::UnknownTaskModel(class.task_model_id.clone()))?;
        let capability = capability.unwrap_or_else(|| self.capability_for(actor_id));
        let session_id = format!("s{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let session = Session {
            session_id: session_id.clone(),
            actor_id: actor_id.to_owned(),
            app_id: app_id.to_owned(),
            model_id: model.model_id.clone(),
            current_state: model.starting_state.clone(),
            history: Vec::new(),
            container_id: container_id.to_owned(),
            capability,
        };
        let att = attachment_of(&session);
        self.attachments.write().insert(session_id.clone(), att.clone());
        self.announce(&att);
        self.sessions
            .write()
            .insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// Moves a session to another container and terminal. State and
    /// history are untouched.
    pub fn resume_session(
        &self,
        session_id: &str,
        container_id: &str,
        capability: TerminalCapability,
    ) -> Result<Session, CoreError> {
        let arc = self.session_arc(session_id)?;
        let mut session = arc.lock();
        session.container_id = container_id.to_owned();
        session.capability = capability;
        let att = attachment_of(&session);
        self.attachments.write().insert(session_id.to_owned(), att.clone());
        let snapshot = session.clone();
        drop(session);
        self.announce(&att);
        Ok(snapshot)
    }

    pub fn close_session(&self, session_id: &str) -> Result<Session, CoreError> {
        let arc = self
            .sessions
            .write()
            .remove(session_id)
            .ok_or_else(|| CoreError::UnknownSession(session_id.to_owned()))?;
        self.attachments.write().remove(session_id);
        let session = arc.lock().clone();
        Ok(session)
    }

    fn session_arc(&self, session_id: &str) -> Result<Arc<Mutex<Session>>, CoreError> {
        self.sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| CoreError::UnknownSession(session_id.to_owned()))
    }

    pub fn session(&self, session_id: &str) -> Result<Session, CoreError> {
        Ok(self.session_arc(session_id)?.lock().clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn attachment(&self, session_id: &str) -> Option<Attachment> {
        self.attachments.read().get(session_id).cloned()
    }

    /// Events the session may produce in its current state.
    pub fn allowed_events(&self, session_id: &str) -> Result<(String, BTreeSet<String>), CoreError> {
        let session = self.session(session_id)?;
        let model = self
            .model(&session.model_id)
            .ok_or_else(|| CoreError::UnknownTaskModel(session.model_id.clone()))?;
        let events = model
            .allowed_events(&session.current_state)
            .unwrap_or_default();
        Ok((session.current_state, events))
    }

    /// The interaction loop for one action. Requests on one session are
    /// serialized; distinct sessions proceed in parallel.
    pub fn interaction_request(&self, action: &ActionData) -> Result<Notification, CoreError> {
        let arc = self.session_arc(&action.session_id)?;
        let mut session = arc.lock();
        let model = self
            .model(&session.model_id)
            .ok_or_else(|| CoreError::UnknownTaskModel(session.model_id.clone()))?;

        let verdict = self.evaluate(&model, &session, action);
        let at = self.heap.now();
        let entry = match verdict {
            Ok((outcome, next)) => {
                session.current_state = next;
                HistoryEntry {
                    event_id: action.event_id.clone(),
                    status: RequestStatus::Accepted,
                    branch: Some(outcome.branch),
                    out_params: outcome.out_params,
                    reason: None,
                    at,
                }
            }
            Err(reason) => HistoryEntry {
                event_id: action.event_id.clone(),
                status: RequestStatus::Rejected,
                branch: None,
                out_params: Params::new(),
                reason: Some(reason),
                at,
            },
        };
        let notification = Notification {
            session_id: session.session_id.clone(),
            actor_id: action.actor_id.clone(),
            event_id: entry.event_id.clone(),
            status: entry.status,
            branch: entry.branch,
            out_params: entry.out_params.clone(),
            new_state: session.current_state.clone(),
            reason: entry.reason.clone(),
            history_index: session.history.len(),
        };
        session.history.push(entry);
        // Still under the session lock, so notifications keep request order.
        self.notify(&session, &notification);
        Ok(notification)
    }

    fn evaluate(
        &self,
        model: &TaskModel,
        session: &Session,
        action: &ActionData,
    ) -> Result<(BipOutcome, String), RejectReason> {
        self.profiles
            .class_of(&action.actor_id)
            .map_err(|_| RejectReason::UnknownActor)?;
        let spec = model
            .event(&session.current_state, &action.event_id)
            .map_err(|_| RejectReason::EventNotAllowed)?;
        let method = &spec.call.bip_method;
        let allowed = self
            .profiles
            .check_right(&action.actor_id, method)
            .map_err(|_| RejectReason::UnknownActor)?;
        if !allowed.is_allowed() {
            return Err(RejectReason::RightDenied {
                permission: method.clone(),
            });
        }
        if let Some(p) = spec.in_params.iter().find(|p| !action.params.contains_key(&p.id)) {
            return Err(RejectReason::MissingParam { id: p.id.clone() });
        }
        let outcome = self.execute_bip(
            method,
            &BipCall {
                session_id: &session.session_id,
                actor_id: &action.actor_id,
                params: &action.params,
            },
        )?;
        let branch = spec.call.branch(outcome.branch);
        if let Some(id) = outcome
            .out_params
            .keys()
            .find(|id| !branch.out_params.iter().any(|p| &p.id == *id))
        {
            return Err(RejectReason::UndeclaredOutParam { id: id.clone() });
        }
        Ok((outcome, branch.next_state.clone()))
    }

    fn notify(&self, session: &Session, n: &Notification) {
        let mut event = Event::new(NOTIFICATION_EVENT, IMSERV, self.notification_ttl)
            .with_target(session.container_id.clone())
            .with_field("session_id", n.session_id.clone())
            .with_field("actor_id", n.actor_id.clone())
            .with_field("event_id", n.event_id.clone())
            .with_field(
                "status",
                if n.accepted() { "accepted" } else { "rejected" },
            )
            .with_field("new_state", n.new_state.clone())
            .with_field("history_index", n.history_index as i64)
            .with_field(
                "out_params",
                Value::Object(n.out_params.clone()).to_string(),
            );
        if let Some(b) = n.branch {
            event = event.with_field("branch", b.to_string());
        }
        if let Some(r) = &n.reason {
            event = event.with_field("reason", r.code());
        }
        if let Err(e) = self.heap.post(event) {
            log::warn!("could not post notification: {e}");
        }
        self.display(&attachment_of(session), n.to_payload());
    }

    /// Tells the container which terminal a session now lives on.
    fn announce(&self, att: &Attachment) {
        let Value::Object(params) = json!({ "attachment": att }) else { unreachable!() };
        if let Err(f) = self.bus.invoke(IMSERV, crate::interaction_container::ICSERV, "Attach", params) {
            log::debug!("Attach for {} failed: {f}", att.session_id);
        }
    }

    fn display(&self, att: &Attachment, payload: DisplayPayload) -> bool {
        let params = json!({
            "session_id": att.session_id,
            "payload": payload,
            "attachment": att,
        });
        let Value::Object(params) = params else { unreachable!() };
        match self.bus.invoke(IMSERV, crate::interaction_container::ICSERV, "DisplayRequest", params) {
            Ok(_) => true,
            Err(f) => {
                log::debug!("DisplayRequest for {} failed: {f}", att.session_id);
                false
            }
        }
    }

    /// Pushes application information to every open session whose actor
    /// may read its data class (`<data_class>.read`). Returns the number of
    /// sessions it reached.
    pub fn business_request(&self, app_id: &str, info: &Params) -> Result<usize, CoreError> {
        if !self.apps.read().contains(app_id) {
            return Err(CoreError::UnknownApp(app_id.to_owned()));
        }
        let data_class = info
            .get("data_class")
            .and_then(Value::as_str)
            .ok_or_else(|| CoreError::BadInfo("missing data_class".into()))?;
        let payload: DisplayPayload = info
            .get("payload")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| CoreError::BadInfo(e.to_string()))?
            .ok_or_else(|| CoreError::BadInfo("missing payload".into()))?;
        let permission = format!("{data_class}.read");
        let targets: Vec<Attachment> = self.attachments.read().values().cloned().collect();
        let mut delivered = 0;
        for att in targets {
            let readable = self
                .profiles
                .check_right(&att.actor_id, &permission)
                .map(|d| d.is_allowed())
                .unwrap_or(false);
            if !readable {
                continue;
            }
            let event = Event::new(BUSINESS_EVENT, IMSERV, self.notification_ttl)
                .with_target(att.container_id.clone())
                .with_field("session_id", att.session_id.clone())
                .with_field("app_id", app_id)
                .with_field("data_class", Scalar::from(data_class));
            if let Err(e) = self.heap.post(event) {
                log::warn!("could not post business update: {e}");
            }
            if self.display(&att, payload.clone()) {
                delivered += 1;
            }
        }
        Ok(delivered)
    }
}

fn attachment_of(s: &Session) -> Attachment {
    Attachment {
        session_id: s.session_id.clone(),
        actor_id: s.actor_id.clone(),
        app_id: s.app_id.clone(),
        container_id: s.container_id.clone(),
        capability: s.capability,
    }
}

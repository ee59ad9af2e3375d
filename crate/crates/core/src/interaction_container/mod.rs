//! The terminal side of the middleware.
//!
//! An [`InteractionContainer`] stands for one or more terminals. It renders
//! display payloads for whatever terminal a session is attached to, turns
//! raw clicks, gestures and text commands into task-model events through an
//! application's binding table, and pushes rendered views to listeners
//! (the web gateway, tests, the scenario runner).

mod adapt;
mod aggregate;
mod bindings;

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use adapt::{
    render, truncate, CapabilityPresets, Column, DisplayPayload, Highlight, PayloadError,
    RenderedView, Row, TerminalCapability, TerminalKind, ELLIPSIS,
};
pub use aggregate::{aggregate, JoinError, JoinSpec};
pub use bindings::{Binding, BindingError, BindingTable, RawAction, RawKind, BINDINGS_PARAM};

use crate::interaction_core::{ActionData, Attachment, Notification, IMSERV};
use crate::profile_store::ProfileStore;
use crate::service_bus::{Fault, FaultCode, MethodDescriptor, Params, ServiceBus, ServiceDescriptor, ServiceHandler};

pub const ICSERV: &str = "ICServ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(#[from] PayloadError),
    #[error(transparent)]
    Binding(#[from] BindingError),
    #[error("no binding table for application {0}")]
    UnknownApp(String),
    #[error("interaction request failed: {0}")]
    Bus(Fault),
}

/// One rendered view as handed to listeners.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub session_id: String,
    pub container_id: String,
    pub view: RenderedView,
}

#[derive(Default)]
pub struct InteractionContainer {
    bus: Option<Arc<ServiceBus>>,
    profiles: Arc<ProfileStore>,
    bindings: RwLock<BTreeMap<String, BindingTable>>,
    attachments: RwLock<BTreeMap<String, Attachment>>,
    latest: RwLock<BTreeMap<String, Delivery>>,
    listeners: Mutex<Vec<(Option<String>, Sender<Delivery>)>>,
}

impl InteractionContainer {
    pub fn new(bus: Arc<ServiceBus>, profiles: Arc<ProfileStore>) -> Self {
        Self {
            bus: Some(bus),
            profiles,
            ..Self::default()
        }
    }

    pub fn add_bindings(&self, table: BindingTable) {
        self.bindings.write().insert(table.app_id.clone(), table);
    }

    pub fn bindings(&self, app_id: &str) -> Option<BindingTable> {
        self.bindings.read().get(app_id).cloned()
    }

    pub fn attach(&self, attachment: Attachment) {
        self.attachments
            .write()
            .insert(attachment.session_id.clone(), attachment);
    }

    pub fn attachment(&self, session_id: &str) -> Option<Attachment> {
        self.attachments.read().get(session_id).cloned()
    }

    /// Views for `container_id` (or every container when `None`) from now on.
    pub fn listen(&self, container_id: Option<&str>) -> Receiver<Delivery> {
        let (tx, rx) = channel();
        self.listeners
            .lock()
            .push((container_id.map(str::to_owned), tx));
        rx
    }

    /// The last view rendered for a session.
    pub fn latest(&self, session_id: &str) -> Option<Delivery> {
        self.latest.read().get(session_id).cloned()
    }

    /// Renders `payload` for the terminal the session is attached to, in
    /// the viewer's personal names.
    pub fn display_request(
        &self,
        session_id: &str,
        payload: &DisplayPayload,
    ) -> Result<RenderedView, ContainerError> {
        let att = self
            .attachment(session_id)
            .ok_or_else(|| ContainerError::UnknownSession(session_id.to_owned()))?;
        let names = self.profiles.display_names(&att.actor_id).unwrap_or_default();
        let view = render(payload, &att.capability, &names)?;
        let delivery = Delivery {
            session_id: session_id.to_owned(),
            container_id: att.container_id.clone(),
            view: view.clone(),
        };
        self.latest
            .write()
            .insert(session_id.to_owned(), delivery.clone());
        self.listeners.lock().retain(|(filter, tx)| {
            if filter.as_deref().is_some_and(|c| c != att.container_id) {
                return true;
            }
            tx.send(delivery.clone()).is_ok()
        });
        Ok(view)
    }

    /// Raw terminal action → event → `IMServ.InteractionRequest`.
    pub fn capture_action(&self, session_id: &str, raw: &RawAction) -> Result<Notification, ContainerError> {
        let att = self
            .attachment(session_id)
            .ok_or_else(|| ContainerError::UnknownSession(session_id.to_owned()))?;
        let (event_id, params) = {
            let tables = self.bindings.read();
            let table = tables
                .get(&att.app_id)
                .ok_or_else(|| ContainerError::UnknownApp(att.app_id.clone()))?;
            table.encode(raw)?
        };
        self.forward(ActionData {
            actor_id: att.actor_id,
            session_id: session_id.to_owned(),
            event_id,
            params,
        })
    }

    /// Sends an already-encoded action to the kernel.
    pub fn forward(&self, action: ActionData) -> Result<Notification, ContainerError> {
        let bus = self
            .bus
            .as_ref()
            .ok_or_else(|| ContainerError::Bus(Fault::new(FaultCode::NotFound, "no bus")))?;
        let Value::Object(params) = json!({ "action": action }) else { unreachable!() };
        let out = bus
            .invoke(ICSERV, IMSERV, "InteractionRequest", params)
            .map_err(ContainerError::Bus)?;
        serde_json::from_value(out.get("notification").cloned().unwrap_or(Value::Null))
            .map_err(|e| ContainerError::Bus(Fault::app(e.to_string())))
    }
}

pub fn icserv_descriptor() -> ServiceDescriptor {
    ServiceDescriptor::new(ICSERV)
        .method(
            MethodDescriptor::new("DisplayRequest")
                .param("session_id", "SessionId")
                .param("payload", "DisplayPayload")
                .result("view", "RenderedView"),
        )
        .method(
            MethodDescriptor::new("CaptureAction")
                .param("session_id", "SessionId")
                .param("raw", "RawAction")
                .result("notification", "Notification"),
        )
        .method(
            MethodDescriptor::new("Attach")
                .param("attachment", "Attachment")
                .result("session_id", "SessionId"),
        )
}

/// Bus handler for a container.
pub struct IcServ(pub Arc<InteractionContainer>);

fn arg<T: serde::de::DeserializeOwned>(params: &Params, id: &str) -> Result<T, Fault> {
    let v = params
        .get(id)
        .cloned()
        .ok_or_else(|| Fault::bad_params(format!("missing {id}")))?;
    serde_json::from_value(v).map_err(|e| Fault::bad_params(format!("{id}: {e}")))
}

fn to_fault(e: ContainerError) -> Fault {
    match e {
        ContainerError::Bus(f) => f,
        ContainerError::MalformedPayload(_) | ContainerError::Binding(_) => Fault::bad_params(e.to_string()),
        other => Fault::app(other.to_string()),
    }
}

impl ServiceHandler for IcServ {
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault> {
        let mut out = Params::new();
        match method {
            "DisplayRequest" => {
                if params.get("attachment").is_some_and(|v| !v.is_null()) {
                    self.0.attach(arg(&params, "attachment")?);
                }
                let sid: String = arg(&params, "session_id")?;
                let payload: DisplayPayload = arg(&params, "payload")?;
                let view = self.0.display_request(&sid, &payload).map_err(to_fault)?;
                out.insert("view".into(), serde_json::to_value(view).map_err(|e| Fault::app(e.to_string()))?);
            }
            "CaptureAction" => {
                let sid: String = arg(&params, "session_id")?;
                let raw: RawAction = arg(&params, "raw")?;
                let n = self.0.capture_action(&sid, &raw).map_err(to_fault)?;
                out.insert(
                    "notification".into(),
                    serde_json::to_value(n).map_err(|e| Fault::app(e.to_string()))?,
                );
            }
            "Attach" => {
                let att: Attachment = arg(&params, "attachment")?;
                out.insert("session_id".into(), Value::String(att.session_id.clone()));
                self.0.attach(att);
            }
            other => {
                return Err(Fault::new(
                    FaultCode::UnknownMethod,
                    format!("ICServ has no method {other}"),
                ))
            }
        }
        Ok(out)
    }
}

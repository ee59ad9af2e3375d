//! IMServ: the kernel as a bus service.

use std::sync::{Arc, Weak};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::{ActionData, CoreError, InteractionCore};
use crate::interaction_container::TerminalCapability;
use crate::service_bus::{Fault, FaultCode, MethodDescriptor, Params, ServiceDescriptor, ServiceHandler};

pub const IMSERV: &str = "IMServ";

pub fn imserv_descriptor() -> ServiceDescriptor {
    ServiceDescriptor::new(IMSERV)
        .method(
            MethodDescriptor::new("InteractionRequest")
                .param("action", "ActionData")
                .result("notification", "Notification"),
        )
        .method(
            MethodDescriptor::new("BusinessRequest")
                .param("app_id", "AppId")
                .param("info", "BusinessInfo")
                .result("delivered", "Count"),
        )
        .method(
            MethodDescriptor::new("OpenSession")
                .param("actor_id", "ActorId")
                .param("app_id", "AppId")
                .param("container_id", "ContainerId")
                .result("session", "Session"),
        )
        .method(
            MethodDescriptor::new("ResumeSession")
                .param("session_id", "SessionId")
                .param("container_id", "ContainerId")
                .param("capability", "TerminalCapability")
                .result("session", "Session"),
        )
        .method(
            MethodDescriptor::new("AllowedEvents")
                .param("session_id", "SessionId")
                .result("state", "StateId")
                .result("events", "EventIdList"),
        )
}

/// Bus handler for [`InteractionCore`]. Holds a weak reference so the core
/// can own the bus without a cycle.
pub struct ImServ {
    core: Weak<InteractionCore>,
}

impl ImServ {
    pub fn new(core: &Arc<InteractionCore>) -> Self {
        Self {
            core: Arc::downgrade(core),
        }
    }
}

fn arg<T: DeserializeOwned>(params: &Params, id: &str) -> Result<T, Fault> {
    let v = params
        .get(id)
        .cloned()
        .ok_or_else(|| Fault::bad_params(format!("missing {id}")))?;
    serde_json::from_value(v).map_err(|e| Fault::bad_params(format!("{id}: {e}")))
}

fn one(id: &str, value: impl Serialize) -> Result<Params, Fault> {
    let v = serde_json::to_value(value).map_err(|e| Fault::app(e.to_string()))?;
    let mut out = Params::new();
    out.insert(id.to_owned(), v);
    Ok(out)
}

fn fault(e: CoreError) -> Fault {
    match e {
        CoreError::BadInfo(_) => Fault::bad_params(e.to_string()),
        _ => Fault::app(e.to_string()),
    }
}

impl ServiceHandler for ImServ {
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault> {
        let core = self
            .core
            .upgrade()
            .ok_or_else(|| Fault::new(FaultCode::NotFound, "kernel is gone"))?;
        match method {
            "InteractionRequest" => {
                let action: ActionData = arg(&params, "action")?;
                let n = core.interaction_request(&action).map_err(fault)?;
                one("notification", n)
            }
            "BusinessRequest" => {
                let app_id: String = arg(&params, "app_id")?;
                let info: Params = arg(&params, "info")?;
                let n = core.business_request(&app_id, &info).map_err(fault)?;
                one("delivered", n)
            }
            "OpenSession" => {
                let actor: String = arg(&params, "actor_id")?;
                let app: String = arg(&params, "app_id")?;
                let container: String = arg(&params, "container_id")?;
                let cap: Option<TerminalCapability> = match params.get("capability") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(arg(&params, "capability")?),
                };
                let s = core
                    .open_session(&actor, &app, &container, cap)
                    .map_err(fault)?;
                one("session", s)
            }
            "ResumeSession" => {
                let sid: String = arg(&params, "session_id")?;
                let container: String = arg(&params, "container_id")?;
                let cap: TerminalCapability = arg(&params, "capability")?;
                if !cap.is_valid() {
                    return Err(Fault::bad_params("capability limits must be positive"));
                }
                let s = core.resume_session(&sid, &container, cap).map_err(fault)?;
                one("session", s)
            }
            "AllowedEvents" => {
                let sid: String = arg(&params, "session_id")?;
                let (state, events) = core.allowed_events(&sid).map_err(fault)?;
                let Value::Object(out) = json!({"state": state, "events": events}) else {
                    unreachable!()
                };
                Ok(out)
            }
            other => Err(Fault::new(
                FaultCode::UnknownMethod,
                format!("IMServ has no method {other}"),
            )),
        }
    }
}

//! The newline-delimited JSON protocol.
//!
//! Request: `{"v":1,"id":…,"service":…,"method":…,"params":{…}}`, optionally
//! with a `"caller"` naming the calling component.
//! Response: `{"v":1,"id":…,"status":"ok"|"fault","payload":…}` where a fault
//! payload is `{"code":…,"message":…}`.
//!
//! The pseudo-service `$admin` is answered by the server itself and never
//! appears in the registry or the call trace.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Fault, FaultCode, Params, ServiceBus, ServiceHandler};

pub const PROTOCOL_VERSION: u32 = 1;
pub const ADMIN_SERVICE: &str = "$admin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub id: Value,
    pub service: String,
    pub method: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caller: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    pub id: Value,
    pub status: Status,
    pub payload: Value,
}

impl Response {
    pub fn ok(id: Value, result: Params) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            status: Status::Ok,
            payload: Value::Object(result),
        }
    }

    pub fn fault(id: Value, fault: &Fault) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            status: Status::Fault,
            payload: serde_json::to_value(fault).expect("fault serializes"),
        }
    }

    pub fn from_result(id: Value, result: Result<Params, Fault>) -> Self {
        match result {
            Ok(p) => Self::ok(id, p),
            Err(f) => Self::fault(id, &f),
        }
    }

    pub fn into_result(self) -> Result<Params, Fault> {
        match (self.status, self.payload) {
            (Status::Ok, Value::Object(map)) => Ok(map),
            (Status::Ok, other) => Err(Fault::new(
                FaultCode::TransportError,
                format!("non-object payload {other}"),
            )),
            (Status::Fault, payload) => Err(serde_json::from_value(payload).unwrap_or_else(|e| {
                Fault::new(FaultCode::TransportError, format!("unreadable fault: {e}"))
            })),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Decodes one request line, runs it, and returns the response to send.
pub fn handle_line(
    bus: &ServiceBus,
    admin: Option<&dyn ServiceHandler>,
    default_caller: &str,
    line: &str,
) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // Salvage the id when the envelope is only partly wrong.
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").cloned())
                .unwrap_or(Value::Null);
            return Response::fault(
                id,
                &Fault::new(FaultCode::MalformedRequest, e.to_string()),
            );
        }
    };
    if req.v != PROTOCOL_VERSION {
        return Response::fault(
            req.id,
            &Fault::new(
                FaultCode::MalformedRequest,
                format!("unsupported protocol version {}", req.v),
            ),
        );
    }
    let result = if req.service == ADMIN_SERVICE {
        match admin {
            Some(h) => h.call(&req.method, req.params),
            None => Err(Fault::new(FaultCode::NotFound, "no admin service")),
        }
    } else {
        let caller = req.caller.as_deref().unwrap_or(default_caller);
        bus.invoke(caller, &req.service, &req.method, req.params)
    };
    Response::from_result(req.id, result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::service_bus::{MethodDescriptor, ServiceDescriptor};
    use serde_json::json;
    use std::sync::Arc;

    #[test]
    fn request_shape() {
        let line = r#"{"v":1,"id":7,"service":"ICServ","method":"DisplayRequest","params":{"data":1}}"#;
        let req: Request = serde_json::from_str(line).unwrap();
        assert_eq!(req.id, json!(7));
        assert_eq!(req.caller, None);
        assert_eq!(serde_json::to_string(&req).unwrap(), line);
    }

    #[test]
    fn response_shapes() {
        let ok = Response::ok(json!(1), json!({"a": 1}).as_object().cloned().unwrap());
        assert_eq!(ok.to_line(), r#"{"v":1,"id":1,"status":"ok","payload":{"a":1}}"#);
        let f = Response::fault(json!("x"), &Fault::bad_params("missing data"));
        assert_eq!(
            f.to_line(),
            r#"{"v":1,"id":"x","status":"fault","payload":{"code":"bad_params","message":"missing data"}}"#
        );
        assert_eq!(f.into_result(), Err(Fault::bad_params("missing data")));
    }

    #[test]
    fn malformed_lines() {
        let bus = ServiceBus::new(Arc::new(ManualClock::new(0)));
        let r = handle_line(&bus, None, "t", "not json");
        assert_eq!(r.status, Status::Fault);
        assert_eq!(r.id, Value::Null);
        let r = handle_line(&bus, None, "t", r#"{"v":2,"id":3,"service":"a","method":"b"}"#);
        assert_eq!(r.id, json!(3));
        assert_eq!(r.into_result().unwrap_err().code, FaultCode::MalformedRequest);
        let r = handle_line(&bus, None, "t", r#"{"id":4,"service":"a"}"#);
        assert_eq!(r.id, json!(4));
    }

    #[test]
    fn admin_calls_skip_the_trace() {
        let bus = ServiceBus::new(Arc::new(ManualClock::new(0)));
        bus.register(
            ServiceDescriptor::new("S").method(MethodDescriptor::new("M")),
            Arc::new(|_: &str, p: Params| Ok(p)),
        )
        .unwrap();
        let admin = |_: &str, _: Params| Ok(Params::new());
        let line = r#"{"v":1,"id":1,"service":"$admin","method":"Trace"}"#;
        assert_eq!(handle_line(&bus, Some(&admin), "t", line).status, Status::Ok);
        assert_eq!(bus.invoke_count(), 0);
        let line = r#"{"v":1,"id":2,"service":"S","method":"M","caller":"icserv-pc"}"#;
        handle_line(&bus, Some(&admin), "t", line);
        assert_eq!(bus.call_trace()[0].caller, "icserv-pc");
    }
}

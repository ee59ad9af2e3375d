//! COFOSServ: direct application access for clients that are not going
//! through a task model (dashboards, the live feed, tests).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use super::{FlightOps, FlightOpsError, FlightPatch};
use crate::service_bus::{Fault, FaultCode, MethodDescriptor, Params, ServiceDescriptor, ServiceHandler};

pub const COFOSSERV: &str = "COFOSServ";

pub fn cofos_descriptor() -> ServiceDescriptor {
    ServiceDescriptor::new(COFOSSERV).method(
        MethodDescriptor::new("AppRequest")
            .param("op", "AppOperation")
            .result("result", "AppResult"),
    )
}

pub struct CofosServ(pub Arc<FlightOps>);

fn str_arg<'a>(params: &'a Params, id: &str) -> Result<&'a str, Fault> {
    params
        .get(id)
        .and_then(Value::as_str)
        .ok_or_else(|| Fault::bad_params(format!("{id} must be a string")))
}

fn to_fault(e: FlightOpsError) -> Fault {
    match e {
        FlightOpsError::BadFilter(_) | FlightOpsError::BadPatch(_) => Fault::bad_params(e.to_string()),
        other => Fault::app(other.to_string()),
    }
}

impl ServiceHandler for CofosServ {
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault> {
        if method != "AppRequest" {
            return Err(Fault::new(
                FaultCode::UnknownMethod,
                format!("{COFOSSERV} has no method {method}"),
            ));
        }
        let result = match str_arg(&params, "op")? {
            "query" => {
                let filter: BTreeMap<String, String> = match params.get("filter") {
                    None | Some(Value::Null) => BTreeMap::new(),
                    Some(v) => serde_json::from_value(v.clone())
                        .map_err(|e| Fault::bad_params(format!("filter: {e}")))?,
                };
                serde_json::to_value(self.0.query_flights(&filter).map_err(to_fault)?)
            }
            "update" => {
                let actor = str_arg(&params, "actor_id")?;
                let id = str_arg(&params, "flight_id")?;
                let patch: FlightPatch =
                    serde_json::from_value(params.get("patch").cloned().unwrap_or(Value::Null))
                        .map_err(|e| Fault::bad_params(format!("patch: {e}")))?;
                serde_json::to_value(self.0.update_flight(actor, id, &patch).map_err(to_fault)?)
            }
            "board" => serde_json::to_value(self.0.board()),
            other => return Err(Fault::bad_params(format!("unknown op {other}"))),
        }
        .map_err(|e| Fault::app(e.to_string()))?;
        let mut out = Params::new();
        out.insert("result".into(), result);
        Ok(out)
    }
}

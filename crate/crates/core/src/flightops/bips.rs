//! The application's BIPs. Each maps call parameters onto the store and
//! answers with a branch; malformed parameters are faults.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use super::{Draft, FlightOps, FlightPatch, TemplateScope};
use crate::interaction_core::{BipCall, BipFault, BipHandler, BipOutcome, CoreError, InteractionCore};
use crate::interaction_container::BINDINGS_PARAM;

pub const BIP_PREFIX: &str = "hic.im.business.cofos.bip.common.";

type Handler = fn(&FlightOps, &BipCall<'_>) -> Result<BipOutcome, BipFault>;

const BIPS: [(&str, Handler); 9] = [
    ("Connect", connect),
    ("Disconnect", disconnect),
    ("BrowseGeneralTemplates", browse_general),
    ("WriteGeneralMsg", write_general),
    ("BrowseSpecificTemplates", browse_specific),
    ("SelectSpecificTemplate", select_specific),
    ("CancelSpecificMsg", cancel_specific),
    ("ReadMessage", read_message),
    ("UpdateFlight", update_flight),
];

/// Declares every BIP to the kernel under its dotted id.
pub fn install_bips(app: &Arc<FlightOps>, core: &InteractionCore) -> Result<(), CoreError> {
    for (name, f) in BIPS {
        let app = Arc::clone(app);
        let handler = move |call: &BipCall<'_>| f(&app, call);
        core.register_bip(&format!("{BIP_PREFIX}{name}"), Arc::new(handler) as Arc<dyn BipHandler>)?;
    }
    Ok(())
}

fn text<'a>(call: &'a BipCall<'_>, id: &str) -> Result<Option<&'a str>, BipFault> {
    match call.params.get(id) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(BipFault(format!("{id} must be a string, got {other}"))),
    }
}

fn bindings(call: &BipCall<'_>) -> Result<BTreeMap<String, String>, BipFault> {
    match call.params.get(BINDINGS_PARAM) {
        None | Some(Value::Null) => Ok(BTreeMap::new()),
        Some(Value::Object(m)) => m
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k.clone(), s.clone())),
                other => Ok((k.clone(), other.to_string())),
            })
            .collect(),
        Some(other) => Err(BipFault(format!("{BINDINGS_PARAM} must be an object, got {other}"))),
    }
}

fn connect(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    Ok(match app.profiles.get_user(call.actor_id) {
        Ok(u) => BipOutcome::positive().with("session_info", format!("{} ({})", u.user_id, u.class_id)),
        Err(e) => BipOutcome::negative().with("connection_error", e.to_string()),
    })
}

fn disconnect(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    app.drafts.lock().remove(call.session_id);
    Ok(BipOutcome::positive())
}

fn template_list(app: &FlightOps, scope: TemplateScope) -> BipOutcome {
    let ids: Vec<&str> = app
        .templates(scope)
        .iter()
        .map(|t| t.template_id.as_str())
        .collect();
    if ids.is_empty() {
        BipOutcome::negative()
    } else {
        BipOutcome::positive().with("templates", ids.join(","))
    }
}

fn browse_general(app: &FlightOps, _: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    Ok(template_list(app, TemplateScope::General))
}

fn browse_specific(app: &FlightOps, _: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    Ok(template_list(app, TemplateScope::Specific))
}

/// Two uses: picking a general template starts a draft; sending a body
/// posts it.
fn write_general(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    if let Some(body) = text(call, "message_body")? {
        if body.trim().is_empty() {
            return Ok(BipOutcome::negative().with("incomplete_message", "empty message"));
        }
        let template_id = app
            .drafts
            .lock()
            .remove(call.session_id)
            .and_then(|d| d.template_id);
        let msg = app.send(call.actor_id, template_id, body.to_owned());
        return Ok(BipOutcome::positive().with("message_sent", msg.message_id));
    }
    let id = text(call, "message_template")?
        .ok_or_else(|| BipFault("message_template or message_body required".into()))?;
    match app.template(id).filter(|t| t.scope == TemplateScope::General) {
        Some(t) => {
            app.drafts.lock().insert(
                call.session_id.to_owned(),
                Draft {
                    template_id: Some(t.template_id.clone()),
                    values: BTreeMap::new(),
                },
            );
            Ok(BipOutcome::positive().with("draft", t.body.clone()))
        }
        None => Ok(BipOutcome::negative().with("incomplete_message", format!("no general template {id}"))),
    }
}

/// A specific message is sent once every placeholder of its template is
/// bound; bindings accumulate across calls in the session's draft.
fn select_specific(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    let id = text(call, "message_template")?.ok_or_else(|| BipFault("message_template required".into()))?;
    let template = app
        .template(id)
        .filter(|t| t.scope == TemplateScope::Specific)
        .ok_or_else(|| BipFault(format!("no specific template {id}")))?;
    let new_values = bindings(call)?;
    let mut drafts = app.drafts.lock();
    let draft = drafts.entry(call.session_id.to_owned()).or_default();
    if draft.template_id.as_deref() != Some(id) {
        *draft = Draft {
            template_id: Some(id.to_owned()),
            values: BTreeMap::new(),
        };
    }
    draft.values.extend(new_values);
    let missing = template.missing(&draft.values);
    if !missing.is_empty() {
        return Ok(BipOutcome::negative().with("incomplete_message", format!("missing {}", missing.join(", "))));
    }
    let body = template.fill(&draft.values);
    drafts.remove(call.session_id);
    drop(drafts);
    app.send(call.actor_id, Some(id.to_owned()), body.clone());
    Ok(BipOutcome::positive().with("message_sent", body))
}

fn cancel_specific(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    app.drafts.lock().remove(call.session_id);
    Ok(BipOutcome::positive())
}

/// With an id, opens that message; without, closes the current one.
fn read_message(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    let Some(id) = text(call, "message_id")? else {
        return Ok(BipOutcome::positive());
    };
    Ok(match app.message(id) {
        Some(m) => BipOutcome::positive().with("message_body", m.body),
        None => BipOutcome::negative().with("read_error", format!("no message {id}")),
    })
}

fn update_flight(app: &FlightOps, call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    let id = text(call, "flight_id")?.ok_or_else(|| BipFault("flight_id required".into()))?;
    let patch: FlightPatch = serde_json::from_value(call.params.get("patch").cloned().unwrap_or(Value::Null))
        .map_err(|e| BipFault(format!("patch: {e}")))?;
    Ok(match app.update_flight(call.actor_id, id, &patch) {
        Ok(f) => BipOutcome::positive().with(
            "updated_flight",
            serde_json::to_string(&f).map_err(|e| BipFault(e.to_string()))?,
        ),
        Err(e) => BipOutcome::negative().with("update_error", e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flightops::tests::app;
    use crate::interaction_core::RejectReason;
    use crate::service_bus::Params;
    use crate::task_engine::Outcome;
    use serde_json::json;

    fn call(app: &FlightOps, name: &str, actor: &str, params: Value) -> Result<BipOutcome, BipFault> {
        let f = BIPS.iter().find(|(n, _)| *n == name).unwrap().1;
        let Value::Object(params) = params else { panic!() };
        f(
            app,
            &BipCall {
                session_id: "s1",
                actor_id: actor,
                params: &params,
            },
        )
    }

    #[test]
    fn specific_message_completes_across_calls() {
        let a = app();
        let out = call(
            &a,
            "SelectSpecificTemplate",
            "alice",
            json!({"message_template": "DLY", "bindings": {"flight": "AF7300"}}),
        )
        .unwrap();
        assert_eq!(out.branch, Outcome::Negative);
        assert_eq!(out.out_params["incomplete_message"], json!("missing etd"));
        assert!(a.has_draft("s1"));
        let out = call(
            &a,
            "SelectSpecificTemplate",
            "alice",
            json!({"message_template": "DLY", "bindings": {"etd": "09:30"}}),
        )
        .unwrap();
        assert_eq!(out.branch, Outcome::Positive);
        assert_eq!(out.out_params["message_sent"], json!("Flight AF7300 delayed, new departure 09:30"));
        assert!(!a.has_draft("s1"));
        assert_eq!(a.messages().len(), 1);
    }

    #[test]
    fn cancel_discards_draft() {
        let a = app();
        call(&a, "SelectSpecificTemplate", "alice", json!({"message_template": "CNL"})).unwrap();
        // CNL needs {flight}
        assert!(a.has_draft("s1"));
        call(&a, "CancelSpecificMsg", "alice", json!({})).unwrap();
        assert!(!a.has_draft("s1"));
    }

    #[test]
    fn malformed_params_fault() {
        let a = app();
        assert!(call(&a, "SelectSpecificTemplate", "alice", json!({})).is_err());
        assert!(call(&a, "SelectSpecificTemplate", "alice", json!({"message_template": "WX"})).is_err());
        assert!(call(&a, "UpdateFlight", "alice", json!({"flight_id": "AF1234", "patch": {"airline": "X"}})).is_err());
    }

    #[test]
    fn general_message_flow() {
        let a = app();
        let out = call(&a, "WriteGeneralMsg", "alice", json!({"message_template": "WX"})).unwrap();
        assert_eq!(out.branch, Outcome::Positive);
        let out = call(&a, "WriteGeneralMsg", "alice", json!({"message_body": "storm at 14:00"})).unwrap();
        assert_eq!(out.out_params["message_sent"], json!("m1"));
        assert_eq!(a.messages()[0].template_id.as_deref(), Some("WX"));
        let out = call(&a, "ReadMessage", "bruno", json!({"message_id": "m1"})).unwrap();
        assert_eq!(out.out_params["message_body"], json!("storm at 14:00"));
        let out = call(&a, "ReadMessage", "bruno", json!({"message_id": "m9"})).unwrap();
        assert_eq!(out.branch, Outcome::Negative);
    }

    #[test]
    fn update_denied_inside_bip_is_negative() {
        let a = app();
        let out = call(&a, "UpdateFlight", "bruno", json!({"flight_id": "AF1234", "patch": {"gate": "A1"}})).unwrap();
        assert_eq!(out.branch, Outcome::Negative);
        assert_eq!(a.flight("AF1234").unwrap().gate, "F21");
    }

    #[test]
    fn install_registers_nine_ids_once() {
        use crate::clock::ManualClock;
        use crate::event_heap::EventHeap;
        use crate::interaction_container::CapabilityPresets;
        use crate::service_bus::ServiceBus;
        let a = Arc::new(app());
        let core = InteractionCore::new(
            Arc::new(EventHeap::new()),
            Arc::new(ServiceBus::new(Arc::new(ManualClock::new(0)))),
            Arc::clone(&a.profiles),
            CapabilityPresets::default(),
        );
        install_bips(&a, &core).unwrap();
        assert!(install_bips(&a, &core).is_err());
        let p = Params::new();
        let c = BipCall {
            session_id: "s",
            actor_id: "alice",
            params: &p,
        };
        assert!(core.execute_bip(&format!("{BIP_PREFIX}Connect"), &c).is_ok());
        assert_eq!(
            core.execute_bip("nope", &c),
            Err(RejectReason::UnboundBip { method: "nope".into() })
        );
    }
}

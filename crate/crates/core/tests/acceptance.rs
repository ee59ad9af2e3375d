//! One line per acceptance criterion, each with its time budget.
mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hic_core::event_heap::{EventTemplate, Scalar};
use hic_core::flightops::{board_payload, FlightPatch, FlightStatus, BOARD_COLUMNS};
use hic_core::interaction_container::{render, CapabilityPresets, RawAction, TerminalCapability, TerminalKind};
use hic_core::interaction_core::{Notification, NOTIFICATION_EVENT};
use hic_core::runtime::{fixtures, Runtime, RuntimeConfig, DEFAULT_CONTAINER};
use hic_core::task_engine::{error_count, parse_task_model_bytes, reachable_states, validate, Outcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn text(rt: &Runtime, sid: &str, line: &str) -> Result<Notification, String> {
    rt.container
        .capture_action(sid, &RawAction::text(line))
        .map_err(|e| format!("{line:?}: {e}"))
}

fn open(rt: &Runtime, actor: &str) -> String {
    rt.core
        .open_session(actor, "cofos", DEFAULT_CONTAINER, None)
        .unwrap()
        .session_id
}

// 1 -------------------------------------------------------------------------

fn template_selection_fragment() -> Check {
    let model = parse_task_model_bytes(fixtures::AIRLINE_MODEL).map_err(|e| e.to_string())?;
    let state = model
        .states
        .get("browsing_specific_templates1")
        .ok_or("state browsing_specific_templates1 missing")?;
    let ev = state
        .events
        .get("select_specific_template")
        .ok_or("event select_specific_template missing")?;
    let param = |p: &hic_core::task_engine::ParamSpec| (p.id.clone(), p.semantic_type.clone());
    ensure(
        ev.in_params.iter().map(param).collect::<Vec<_>>()
            == [("message_template".into(), "business.cofos.data.Template".into())],
        || format!("in params {:?}", ev.in_params),
    )?;
    ensure(ev.call.id == "select_specific_template1", || ev.call.id.clone())?;
    ensure(
        ev.call.bip_method == "hic.im.business.cofos.bip.common.SelectSpecificTemplate",
        || ev.call.bip_method.clone(),
    )?;
    let branch = |o: Outcome| {
        let b = ev.call.branch(o);
        (b.out_params.iter().map(param).collect::<Vec<_>>(), b.next_state.clone())
    };
    ensure(
        branch(Outcome::Positive)
            == (vec![("message_sent".into(), "java.lang.String".into())], "connected".into()),
        || format!("positive {:?}", branch(Outcome::Positive)),
    )?;
    ensure(
        branch(Outcome::Negative)
            == (
                vec![("incomplete_message".into(), "java.lang.String".into())],
                "writing_specific_msg1".into(),
            ),
        || format!("negative {:?}", branch(Outcome::Negative)),
    )?;

    // both branches, live, with the real business logic
    let rt = common::runtime(RuntimeConfig::builtin());
    let sid = open(&rt, "alice");
    text(&rt, &sid, "connect")?;
    text(&rt, &sid, "specific")?;
    let n = text(&rt, &sid, "send DLY flight=AF7300")?;
    ensure(
        n.branch == Some(Outcome::Negative)
            && n.new_state == "writing_specific_msg1"
            && n.out_params.get("incomplete_message") == Some(&json!("missing etd")),
        || format!("negative run {n:?}"),
    )?;
    let n = text(&rt, &sid, "cancel")?;
    ensure(n.new_state == "connected", || format!("cancel {n:?}"))?;
    text(&rt, &sid, "specific")?;
    let n = text(&rt, &sid, "send GATE flight=AF1234 gate=B12")?;
    ensure(
        n.branch == Some(Outcome::Positive)
            && n.new_state == "connected"
            && n.out_params.keys().collect::<Vec<_>>() == ["message_sent"],
        || format!("positive run {n:?}"),
    )
}

// 2 -------------------------------------------------------------------------

fn kernel_equals_state_machine() -> Check {
    let (got, want) = common::kernel_and_oracle_traces(100, 200);
    ensure(got.len() == 100 * 200, || format!("{} requests", got.len()))?;
    if let Some(i) = (0..got.len()).find(|&i| got[i] != want[i]) {
        return Err(format!("request {i}: kernel {} oracle {}", got[i], want[i]));
    }
    ensure(got.join("\n").into_bytes() == want.join("\n").into_bytes(), || {
        "traces differ".into()
    })
}

// 3 -------------------------------------------------------------------------

fn heap_equals_list_model() -> Check {
    common::heap_agrees_with_list(2024, 10_000)
}

// 4 -------------------------------------------------------------------------

/// A large model written out by hand, in ISO-8859-1, states chained in a
/// ring so everything is reachable.
fn generated_model(states: usize) -> Vec<u8> {
    let mut x = String::from("<?xml version=\"1.0\" encoding=\"ISO-8859-1\" ?>\n");
    x.push_str("<!-- modèle généré pour le contrôle de charge -->\n");
    x.push_str("<task_model id=\"generated\">\n  <starting_state id=\"s0\" />\n");
    for i in 0..states {
        let next = (i + 1) % states;
        let _ = write!(
            x,
            concat!(
                "  <!-- état {i} -->\n",
                "  <state id=\"s{i}\">\n",
                "    <events>\n",
                "      <event id=\"advance\">\n",
                "        <in_param id=\"payload\" type=\"java.lang.String\" />\n",
                "        <interaction_call id=\"advance{i}\">\n",
                "          <method id=\"gen.bip.Advance\" />\n",
                "          <next_states>\n",
                "            <positive>\n",
                "              <out_param id=\"receipt\" type=\"java.lang.String\" />\n",
                "              <next_state id=\"s{next}\" />\n",
                "            </positive>\n",
                "            <negative>\n",
                "              <next_state id=\"s{i}\" />\n",
                "            </negative>\n",
                "          </next_states>\n",
                "        </interaction_call>\n",
                "      </event>\n",
                "    </events>\n",
                "  </state>\n",
            ),
            i = i,
            next = next
        );
    }
    x.push_str("</task_model>\n");
    x.chars().map(|c| u8::try_from(u32::from(c)).expect("latin-1")).collect()
}

fn large_model_loads_clean() -> Check {
    let bytes = generated_model(40);
    let lines = bytes.iter().filter(|&&b| b == b'\n').count();
    ensure(lines >= 624 && bytes.len() >= 20_000, || {
        format!("generated only {lines} lines / {} chars", bytes.len())
    })?;
    let model = parse_task_model_bytes(&bytes).map_err(|e| e.to_string())?;
    let diags = validate(&model);
    ensure(error_count(&diags) == 0, || format!("{diags:?}"))?;
    ensure(model.states.len() == 40, || format!("{} states", model.states.len()))?;
    ensure(reachable_states(&model).len() == 40, || "ring not fully reachable".into())
}

// 5 -------------------------------------------------------------------------

fn rights_are_enforced() -> Check {
    let rt = common::runtime(RuntimeConfig::builtin());
    let sid = open(&rt, "bruno");
    text(&rt, &sid, "connect")?;
    let before = rt.app.flights();
    let n = text(&rt, &sid, "update AF1234 status=cancelled")?;
    ensure(
        !n.accepted() && n.reason.as_ref().map(|r| r.code()) == Some("right_denied"),
        || format!("{n:?}"),
    )?;
    ensure(rt.app.flights() == before, || "flight store changed".into())?;
    ensure(rt.app.update_log().is_empty(), || "update logged".into())?;
    let session = rt.core.session(&sid).unwrap();
    ensure(session.current_state == "connected", || session.current_state.clone())?;
    let mine = EventTemplate::of_type(NOTIFICATION_EVENT).with_field("session_id", sid.as_str());
    let all = rt.heap.snoop_all(DEFAULT_CONTAINER, &mine);
    let rejected: Vec<_> = all
        .iter()
        .filter(|e| e.fields.get("status") == Some(&Scalar::from("rejected")))
        .collect();
    ensure(all.len() == 2 && rejected.len() == 1, || {
        format!("{} notifications, {} rejections", all.len(), rejected.len())
    })?;
    ensure(
        rejected[0].fields.get("reason") == Some(&Scalar::from("right_denied")),
        || format!("{:?}", rejected[0]),
    )?;

    // the same request from a class that holds the right goes through
    let sid = open(&rt, "alice");
    text(&rt, &sid, "connect")?;
    let n = text(&rt, &sid, "update AF1234 status=cancelled")?;
    ensure(n.branch == Some(Outcome::Positive), || format!("{n:?}"))?;
    ensure(
        rt.app.flight("AF1234").map(|f| f.status) == Some(FlightStatus::Cancelled),
        || "airline update not applied".into(),
    )
}

// 6 -------------------------------------------------------------------------

const SCRIPT: [&str; 11] = [
    "connect",
    "specific",
    "send DLY flight=AF7300",
    "fill DLY etd=09:30",
    "general",
    "write WX",
    "post Runway 2 closed until noon",
    "read m1",
    "close",
    "update KL1228 gate=D4",
    "disconnect",
];

fn observed(actor: &str) -> Result<(Vec<Value>, Vec<Value>, Value), String> {
    let rt = common::runtime(RuntimeConfig::builtin());
    let sid = open(&rt, actor);
    let mut notes = Vec::new();
    for line in SCRIPT {
        // who acted is the one thing allowed to differ
        let n = serde_json::to_string(&text(&rt, &sid, line)?).unwrap();
        notes.push(serde_json::from_str(&n.replace(actor, "<actor>")).unwrap());
    }
    let calls = rt
        .bus
        .call_trace()
        .into_iter()
        .map(|e| json!([e.caller, e.service, e.method, e.status]))
        .collect();
    let world = json!({"flights": rt.app.flights(), "messages": rt.app.messages().len()});
    Ok((notes, calls, world))
}

fn actors_are_interchangeable() -> Check {
    let human = observed("alice")?;
    let program = observed("autoairline")?;
    ensure(human.0 == program.0, || "notification traces differ".into())?;
    ensure(human.1 == program.1, || "bus call traces differ".into())?;
    ensure(human.2 == program.2, || "resulting application state differs".into())?;
    let accepted = human.0.iter().filter(|n| n["status"] == "accepted").count();
    ensure(accepted == SCRIPT.len(), || format!("only {accepted} accepted"))
}

// 7 -------------------------------------------------------------------------

fn failover_to_phone() -> Check {
    let rt = common::runtime(RuntimeConfig::builtin());
    let sid = open(&rt, "alice");
    text(&rt, &sid, "connect")?;
    text(&rt, &sid, "specific")?;
    let before = rt.core.session(&sid).unwrap();

    let phone = TerminalCapability::PHONE;
    rt.core
        .resume_session(&sid, "ic-phone", phone)
        .map_err(|e| e.to_string())?;
    let after = rt.core.session(&sid).unwrap();
    ensure(
        after.current_state == before.current_state && after.history == before.history,
        || "state or history lost on failover".into(),
    )?;

    // live data reaches the new terminal through the normal push path
    let patch = FlightPatch {
        status: Some(FlightStatus::Delayed),
        estimated_time: Some("11:05".into()),
        ..FlightPatch::default()
    };
    rt.app.apply("AF1234", &patch).map_err(|e| e.to_string())?;
    let d = rt.container.latest(&sid).ok_or("nothing delivered")?;
    ensure(d.container_id == "ic-phone" && d.view.terminal == TerminalKind::Phone, || {
        format!("delivered to {} as {}", d.container_id, d.view.terminal)
    })?;
    let mut by_priority: Vec<&str> = BOARD_COLUMNS.iter().map(|c| c.0).collect();
    by_priority.truncate(phone.max_columns);
    ensure(d.view.columns.len() <= 3 && d.view.columns == by_priority, || {
        format!("columns {:?}", d.view.columns)
    })?;
    let flight = rt.app.flight("AF1234").ok_or("flight vanished")?;
    let pushed = board_payload("Update AF1234", &[flight]);
    let redo = render(&pushed, &phone, &rt.profiles.display_names("alice").unwrap()).unwrap();
    ensure(redo == d.view, || format!("pushed view {:?}", d.view))?;
    ensure(d.view.lines[2].starts_with("! shuttle"), || {
        format!("alert marker or personal name missing: {:?}", d.view.lines)
    })?;

    // and the session keeps working from the phone
    let n = text(&rt, &sid, "send GATE flight=AF1234 gate=B12")?;
    ensure(n.accepted() && n.new_state == "connected", || format!("{n:?}"))
}

// 8 -------------------------------------------------------------------------

fn adaptation_invariants() -> Check {
    let presets = CapabilityPresets::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..500 {
        let p = common::random_payload(&mut rng);
        for kind in [TerminalKind::Pc, TerminalKind::Pda, TerminalKind::Phone] {
            let cap = presets.get(kind);
            let v = render(&p, &cap, &BTreeMap::new()).map_err(|e| format!("case {case}: {e}"))?;
            common::check_view(&p, &cap, &v).map_err(|e| format!("case {case} on {kind}: {e}"))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Duration, fn() -> Check);

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("task-model fragment parsed and both branches taken", Duration::from_secs(1), template_selection_fragment),
        ("100 sessions x 200 steps identical to the pure state machine", Duration::from_secs(10), kernel_equals_state_machine),
        ("10k heap operations identical to the list model", Duration::from_secs(5), heap_equals_list_model),
        ("generated 624+ line model parses and validates clean", Duration::from_secs(1), large_model_loads_clean),
        ("update without the right is rejected and changes nothing", Duration::from_secs(5), rights_are_enforced),
        ("human and application actor produce identical traces", Duration::from_secs(5), actors_are_interchangeable),
        ("session fails over to a phone with the top 3 columns", Duration::from_secs(5), failover_to_phone),
        ("500 random payloads adapt correctly on pc, pda and phone", Duration::from_secs(30), adaptation_invariants),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()))
            .and_then(|()| {
                let took = start.elapsed();
                ensure(took <= budget, || format!("took {took:?}, budget {budget:?}"))
            });
        let took = start.elapsed().as_millis();
        match &result {
            Ok(()) => println!("acceptance {}: PASS  {name} ({took} ms)", i + 1),
            Err(e) => {
                println!("acceptance {}: FAIL  {name} ({took} ms): {e}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

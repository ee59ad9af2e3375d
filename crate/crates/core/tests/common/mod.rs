//! Reference models shared by the integration tests. Each one is written
//! the simplest possible way and owes nothing to the code under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hic_core::clock::ManualClock;
use hic_core::event_heap::{Event, EventTemplate, Scalar};
use hic_core::interaction_container::{Column, DisplayPayload, RenderedView, Row, TerminalCapability};
use hic_core::interaction_core::ActionData;
use hic_core::runtime::{Runtime, RuntimeConfig};
use hic_core::task_engine::{Branch, EventSpec, InteractionCall, ParamSpec, State, TaskModel};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn runtime(config: RuntimeConfig) -> Runtime {
    Runtime::boot(config, Arc::new(ManualClock::new(0))).expect("boot")
}

// ---------------------------------------------------------------- heap

/// The heap as a plain list, scanned front to back on every read.
#[derive(Default)]
pub struct ListHeap {
    pub events: Vec<Event>,
    pub now: u64,
    pub next_seq: u64,
    pub subs: Vec<(u64, String, EventTemplate, Vec<Event>)>,
    next_sub: u64,
}

fn live(e: &Event, now: u64) -> bool {
    now < e.posted_at + e.ttl
}

fn visible(e: &Event, who: &str) -> bool {
    e.targets.is_empty() || e.targets.iter().any(|t| t == who)
}

fn matches(t: &EventTemplate, e: &Event) -> bool {
    t.event_type.as_ref().is_none_or(|ty| *ty == e.event_type)
        && t.field_constraints.iter().all(|(k, v)| e.fields.get(k) == Some(v))
}

impl ListHeap {
    pub fn new() -> Self {
        Self {
            next_seq: 1,
            next_sub: 1,
            ..Self::default()
        }
    }

    pub fn post(&mut self, mut e: Event) -> Option<u64> {
        if e.event_type.is_empty() || e.ttl == 0 {
            return None;
        }
        e.seq = self.next_seq;
        e.posted_at = self.now;
        self.next_seq += 1;
        for (_, who, t, q) in &mut self.subs {
            if visible(&e, who) && matches(t, &e) {
                q.push(e.clone());
            }
        }
        self.events.push(e.clone());
        Some(e.seq)
    }

    fn find(&self, who: &str, t: &EventTemplate) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.events.iter().enumerate() {
            if live(e, self.now)
                && visible(e, who)
                && matches(t, e)
                && best.is_none_or(|b| self.events[b].seq > e.seq)
            {
                best = Some(i);
            }
        }
        best
    }

    pub fn take(&mut self, who: &str, t: &EventTemplate) -> Option<Event> {
        self.find(who, t).map(|i| self.events.remove(i))
    }

    pub fn snoop(&self, who: &str, t: &EventTemplate) -> Option<Event> {
        self.find(who, t).map(|i| self.events[i].clone())
    }

    pub fn snoop_all(&self, who: &str, t: &EventTemplate) -> Vec<Event> {
        let mut v: Vec<Event> = self
            .events
            .iter()
            .filter(|e| live(e, self.now) && visible(e, who) && matches(t, e))
            .cloned()
            .collect();
        v.sort_by_key(|e| e.seq);
        v
    }

    pub fn expire(&mut self, now: u64) -> Option<usize> {
        if now < self.now {
            return None;
        }
        self.now = now;
        let before = self.events.len();
        self.events.retain(|e| live(e, now));
        Some(before - self.events.len())
    }

    pub fn subscribe(&mut self, who: &str, t: EventTemplate) -> u64 {
        let id = self.next_sub;
        self.next_sub += 1;
        self.subs.push((id, who.to_owned(), t, Vec::new()));
        id
    }

    pub fn drain(&mut self, id: u64) -> Vec<Event> {
        let now = self.now;
        let q = &mut self.subs.iter_mut().find(|s| s.0 == id).unwrap().3;
        std::mem::take(q).into_iter().filter(|e| live(e, now)).collect()
    }
}

pub const TYPES: [&str; 3] = ["notification", "user_action", "business_update"];
pub const WHO: [&str; 3] = ["ic-1", "ic-2", "im"];

pub fn random_event(rng: &mut ChaCha8Rng) -> Event {
    let ty = if rng.gen_ratio(1, 50) { "" } else { TYPES.choose(rng).unwrap() };
    let mut e = Event::new(ty, *WHO.choose(rng).unwrap(), rng.gen_range(0..8));
    for key in ["k", "n"] {
        if rng.gen_bool(0.6) {
            let v: Scalar = if key == "k" {
                ["a", "b"].choose(rng).unwrap().to_string().into()
            } else {
                rng.gen_range(0..3i64).into()
            };
            e = e.with_field(key, v);
        }
    }
    for w in WHO {
        if rng.gen_bool(0.25) {
            e = e.with_target(w);
        }
    }
    e
}

pub fn random_template(rng: &mut ChaCha8Rng) -> EventTemplate {
    let mut t = if rng.gen_bool(0.7) {
        EventTemplate::of_type(*TYPES.choose(rng).unwrap())
    } else {
        EventTemplate::any()
    };
    if rng.gen_bool(0.3) {
        t = t.with_field("k", *["a", "b"].choose(rng).unwrap());
    }
    if rng.gen_bool(0.2) {
        t = t.with_field("n", rng.gen_range(0..3i64));
    }
    t
}

// ---------------------------------------------------------------- task models

/// A random flat state graph; `dangling` lets a few edges point nowhere.
pub fn random_model(rng: &mut ChaCha8Rng, n_states: usize, dangling: bool) -> TaskModel {
    let ids: Vec<String> = (0..n_states).map(|i| format!("st{i}")).collect();
    let mut states = IndexMap::new();
    let pick = |rng: &mut ChaCha8Rng| -> String {
        if dangling && rng.gen_ratio(1, 25) {
            "nowhere".to_owned()
        } else {
            ids.choose(rng).unwrap().clone()
        }
    };
    for id in &ids {
        let mut events = IndexMap::new();
        for e in 0..rng.gen_range(0..4) {
            let eid = format!("ev{}", rng.gen_range(0..6) * 10 + e);
            let params = |rng: &mut ChaCha8Rng, prefix: &str| -> Vec<ParamSpec> {
                (0..rng.gen_range(0..3))
                    .map(|i| ParamSpec::new(format!("{prefix}{i}"), "java.lang.String"))
                    .collect()
            };
            let spec = EventSpec {
                id: eid.clone(),
                in_params: params(rng, "in"),
                call: InteractionCall {
                    id: format!("{eid}_call"),
                    bip_method: format!("bip.Method{}", rng.gen_range(0..5)),
                    positive: Branch {
                        out_params: params(rng, "pos"),
                        next_state: pick(rng),
                    },
                    negative: Branch {
                        out_params: params(rng, "neg"),
                        next_state: pick(rng),
                    },
                },
            };
            events.insert(eid, spec);
        }
        states.insert(
            id.clone(),
            State {
                id: id.clone(),
                events,
            },
        );
    }
    TaskModel {
        model_id: format!("m{n_states}"),
        starting_state: ids[0].clone(),
        states,
    }
}

/// Reachability by repeated relaxation of an adjacency matrix until
/// nothing changes.
pub fn closure_reachable(model: &TaskModel) -> BTreeSet<String> {
    let ids: Vec<&String> = model.states.keys().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let Some(&start) = index.get(model.starting_state.as_str()) else {
        return BTreeSet::new();
    };
    let mut adj = vec![vec![false; n]; n];
    for (i, s) in model.states.values().enumerate() {
        for e in s.events.values() {
            for next in [&e.call.positive.next_state, &e.call.negative.next_state] {
                if let Some(&j) = index.get(next.as_str()) {
                    adj[i][j] = true;
                }
            }
        }
    }
    let mut reach = vec![false; n];
    reach[start] = true;
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if reach[i] && adj[i][j] && !reach[j] {
                    reach[j] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&i| reach[i]).map(|i| ids[i].clone()).collect()
}

// ---------------------------------------------------------------- payloads

pub fn random_payload(rng: &mut ChaCha8Rng) -> DisplayPayload {
    let ncols = rng.gen_range(0..15);
    let mut priorities: Vec<i64> = (-20..40).collect();
    priorities.shuffle(rng);
    let columns: Vec<Column> = (0..ncols)
        .map(|i| {
            let label: String = (0..rng.gen_range(0..30)).map(|_| random_char(rng)).collect();
            Column::new(&format!("c{i}"), &label, priorities[i], rng.gen_range(0..30))
        })
        .collect();
    let nrows = rng.gen_range(0..50);
    let rows: Vec<Row> = (0..nrows)
        .map(|_| {
            let mut row = Row::new();
            for c in &columns {
                if rng.gen_bool(0.9) {
                    let v: String = (0..rng.gen_range(0..40)).map(|_| random_char(rng)).collect();
                    row.insert(c.id.clone(), v);
                }
            }
            row
        })
        .collect();
    let alert_rows = (0..nrows).filter(|_| rng.gen_bool(0.2)).collect();
    DisplayPayload {
        title: "t".into(),
        columns,
        rows,
        alert_rows,
    }
}

fn random_char(rng: &mut ChaCha8Rng) -> char {
    *['a', 'Z', '7', ' ', 'é', '→', '日', '-', '|'].choose(rng).unwrap()
}

pub fn oracle_truncate(s: &str, n: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() <= n {
        s.to_owned()
    } else {
        let mut t: String = chars[..n - 1].iter().collect();
        t.push('…');
        t
    }
}

/// Every property a rendered view must have, checked from the payload and
/// the capability alone.
pub fn check_view(p: &DisplayPayload, cap: &TerminalCapability, v: &RenderedView) -> Result<(), String> {
    let mut by_priority: Vec<&Column> = p.columns.iter().collect();
    by_priority.sort_by_key(|c| c.priority);
    let want: Vec<String> = by_priority
        .iter()
        .take(cap.max_columns)
        .map(|c| c.id.clone())
        .collect();
    if v.columns != want {
        return Err(format!("columns {:?}, want {want:?}", v.columns));
    }
    let kept: Vec<usize> = (0..p.rows.len().min(cap.max_rows)).collect();
    if v.rows != kept {
        return Err(format!("rows {:?}", v.rows));
    }
    if v.lines.len() != 2 + kept.len() {
        return Err(format!("{} lines", v.lines.len()));
    }
    let k = want.len();
    let prefix = if cap.rich { 0 } else { 2 };
    let widest = prefix + k * cap.max_cell_width + 3 * k.saturating_sub(1);
    for line in &v.lines[1..] {
        if line.chars().count() > widest {
            return Err(format!("line too wide: {line:?}"));
        }
    }
    for (&r, line) in kept.iter().zip(&v.lines[2..]) {
        for c in &want {
            let raw = p.rows[r].get(c).map(String::as_str).unwrap_or("");
            let cell = oracle_truncate(raw, cap.max_cell_width);
            if !line.contains(cell.trim_end()) {
                return Err(format!("row {r} lost cell {cell:?}: {line:?}"));
            }
        }
        let alert = p.alert_rows.contains(&r);
        if !cap.rich && !line.starts_with(if alert { "! " } else { "  " }) {
            return Err(format!("plain row {r} marker: {line:?}"));
        }
    }
    let alerts: Vec<usize> = kept.iter().copied().filter(|r| p.alert_rows.contains(r)).collect();
    if v.alerts != alerts {
        return Err(format!("alerts {:?}, want {alerts:?}", v.alerts));
    }
    let want_highlights = if cap.rich { alerts.len() } else { 0 };
    if v.highlights.len() != want_highlights {
        return Err(format!("{} highlights", v.highlights.len()));
    }
    if v.terminal != cap.kind {
        return Err("terminal kind".into());
    }
    Ok(())
}

// ---------------------------------------------------------------- kernel

/// What the kernel must answer, computed from the model, the actor's rights
/// and the scripted outcome alone. Returns the notification as JSON and
/// the state the session ends up in.
pub fn expected_notification(
    model: &TaskModel,
    rights: &BTreeSet<String>,
    state: &str,
    history_len: usize,
    action: &ActionData,
) -> (Value, String) {
    let reject = |reason: Value| {
        (
            json!({
                "session_id": action.session_id,
                "actor_id": action.actor_id,
                "event_id": action.event_id,
                "status": "rejected",
                "out_params": {},
                "new_state": state,
                "reason": reason,
                "history_index": history_len,
            }),
            state.to_owned(),
        )
    };
    let Some(spec) = model.states.get(state).and_then(|s| s.events.get(&action.event_id)) else {
        return reject(json!({"code": "event_not_allowed"}));
    };
    let method = &spec.call.bip_method;
    if !rights.contains(method) {
        return reject(json!({"code": "right_denied", "permission": method}));
    }
    for p in &spec.in_params {
        if !action.params.contains_key(&p.id) {
            return reject(json!({"code": "missing_param", "id": p.id}));
        }
    }
    let (branch, name) = match action.params.get("$outcome").and_then(Value::as_str) {
        Some("fault") => return reject(json!({"code": "bip_fault", "message": "scripted fault"})),
        Some("negative") => (&spec.call.negative, "negative"),
        _ => (&spec.call.positive, "positive"),
    };
    let out = action.params.get("$out").cloned().unwrap_or(json!({}));
    if let Some(k) = out
        .as_object()
        .unwrap()
        .keys()
        .find(|k| !branch.out_params.iter().any(|p| &p.id == *k))
    {
        return reject(json!({"code": "undeclared_out_param", "id": k}));
    }
    (
        json!({
            "session_id": action.session_id,
            "actor_id": action.actor_id,
            "event_id": action.event_id,
            "status": "accepted",
            "branch": name,
            "out_params": out,
            "new_state": branch.next_state,
            "history_index": history_len,
        }),
        branch.next_state.clone(),
    )
}

/// Runs `n` random operations against the heap and the list model side by
/// side; the first disagreement is returned.
pub fn heap_agrees_with_list(seed: u64, n: usize) -> Result<(), String> {
    use hic_core::event_heap::{ConsumeMode, EventHeap, Subscription};
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heap = EventHeap::new();
    let mut model = ListHeap::new();
    let mut subs: Vec<(Subscription, u64)> = Vec::new();
    for step in 0..n {
        let fail = |what: &str, got: &dyn std::fmt::Debug, want: &dyn std::fmt::Debug| {
            Err(format!("seed {seed} step {step} {what}: heap {got:?}, model {want:?}"))
        };
        match rng.gen_range(0..100) {
            0..=39 => {
                let e = random_event(&mut rng);
                let got = heap.post(e.clone()).ok();
                let want = model.post(e);
                if got != want {
                    return fail("post", &got, &want);
                }
            }
            40..=54 => {
                let (who, t) = (*WHO.choose(&mut rng).unwrap(), random_template(&mut rng));
                let got = heap.consume(who, &t, ConsumeMode::Take);
                let want = model.take(who, &t);
                if got != want {
                    return fail("take", &got, &want);
                }
            }
            55..=69 => {
                let (who, t) = (*WHO.choose(&mut rng).unwrap(), random_template(&mut rng));
                let got = heap.consume(who, &t, ConsumeMode::Snoop);
                let want = model.snoop(who, &t);
                if got != want {
                    return fail("snoop", &got, &want);
                }
            }
            70..=79 => {
                let (who, t) = (*WHO.choose(&mut rng).unwrap(), random_template(&mut rng));
                let got = heap.snoop_all(who, &t);
                let want = model.snoop_all(who, &t);
                if got != want {
                    return fail("snoop_all", &got, &want);
                }
            }
            80..=91 => {
                // mostly forward, occasionally backwards
                let now = if rng.gen_ratio(1, 10) {
                    model.now.saturating_sub(1)
                } else {
                    model.now + rng.gen_range(0..3)
                };
                let got = heap.expire(now).ok();
                let want = model.expire(now);
                if got != want {
                    return fail("expire", &got, &want);
                }
            }
            92..=95 if subs.len() < 4 => {
                let (who, t) = (*WHO.choose(&mut rng).unwrap(), random_template(&mut rng));
                let s = heap.subscribe(who, t.clone());
                let id = model.subscribe(who, t);
                subs.push((s, id));
            }
            _ => {
                if let Some((s, id)) = subs.choose(&mut rng) {
                    let got = s.drain();
                    let want = model.drain(*id);
                    if got != want {
                        return fail("drain", &got, &want);
                    }
                }
            }
        }
        if heap.len() != model.events.len() {
            return fail("len", &heap.len(), &model.events.len());
        }
    }
    Ok(())
}

pub const ACTORS: [&str; 4] = ["alice", "bruno", "tess", "autoairline"];

/// Drives `sessions` seeded random walks of `steps` actions through the
/// kernel (scripted BIPs) and through [`expected_notification`]. Returns
/// both traces, one compact JSON line per request.
pub fn kernel_and_oracle_traces(sessions: usize, steps: usize) -> (Vec<String>, Vec<String>) {
    use hic_core::runtime::{fixtures, DEFAULT_CONTAINER};
    use hic_core::scenario::random_action;
    use hic_core::task_engine::parse_task_model_bytes;
    use rand::SeedableRng;

    let rt = runtime(RuntimeConfig::builtin().scripted());
    let models: BTreeMap<String, TaskModel> = [fixtures::AIRLINE_MODEL, fixtures::HANDLING_MODEL]
        .into_iter()
        .map(|b| parse_task_model_bytes(b).unwrap())
        .map(|m| (m.model_id.clone(), m))
        .collect();
    let doc = rt.profiles.snapshot();
    let class_of = |actor: &str| {
        let user = doc.users.iter().find(|u| u.user_id == actor).unwrap();
        doc.classes.iter().find(|c| c.class_id == user.class_id).unwrap().clone()
    };

    let (mut got, mut want) = (Vec::new(), Vec::new());
    for i in 0..sessions {
        let actor = ACTORS[i % ACTORS.len()];
        let class = class_of(actor);
        let rights: BTreeSet<String> = class.rights.iter().cloned().collect();
        let model = &models[&class.task_model_id];
        let sid = rt
            .core
            .open_session(actor, "cofos", DEFAULT_CONTAINER, None)
            .unwrap()
            .session_id;
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut state = model.starting_state.clone();
        for step in 0..steps {
            let mut action = random_action(&rt, &sid, &mut rng).unwrap();
            match rng.gen_range(0..20) {
                0 => {
                    let declared = model
                        .states
                        .get(&state)
                        .and_then(|s| s.events.get(&action.event_id))
                        .and_then(|e| e.call.positive.out_params.first())
                        .map(|p| p.id.clone());
                    let key = declared.filter(|_| rng.gen_bool(0.5)).unwrap_or_else(|| "bogus".into());
                    action.params.insert("$out".into(), json!({ key: "v" }));
                }
                1 => {
                    let first = action.params.keys().find(|k| !k.starts_with('$')).cloned();
                    if let Some(k) = first {
                        action.params.remove(&k);
                    }
                }
                _ => {}
            }
            let n = rt.core.interaction_request(&action).unwrap();
            got.push(serde_json::to_value(&n).unwrap().to_string());
            let (expected, next) = expected_notification(model, &rights, &state, step, &action);
            want.push(expected.to_string());
            state = next;
        }
        assert_eq!(rt.core.session(&sid).unwrap().current_state, state);
    }
    (got, want)
}

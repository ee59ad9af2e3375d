//! Scripted sessions, one JSON step per line.
//!
//! ```text
//! {"step":"config","scripted_bips":true}
//! {"step":"open","actor":"alice","as":"a","terminal":"pc"}
//! {"step":"action","session":"a","event":"connect"}
//! {"step":"raw","session":"a","kind":"text","payload":"send DLY flight=AF7300 etd=09:30"}
//! {"step":"resume","session":"a","container":"ic-phone","terminal":"phone"}
//! {"step":"expect","session":"a","state":"connected","status":"accepted"}
//! {"step":"tick","secs":30}
//! {"step":"random","session":"a","steps":200}
//! ```
//!
//! `config` may only come first. Sessions are named by `as` because their
//! ids are issued by the kernel. `expect` compares against the session and
//! its most recent notification; every field is optional. `random` walks
//! the task model with outcomes drawn from the run's seed and needs
//! scripted BIPs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{Clock, ManualClock};
use crate::interaction_container::{RawAction, RawKind, TerminalKind};
use crate::interaction_core::{ActionData, Notification};
use crate::runtime::{Runtime, RuntimeConfig, DEFAULT_CONTAINER, SCRIPT_OUTCOME};
use crate::service_bus::Params;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Config {
        #[serde(default)]
        scripted_bips: bool,
    },
    Open {
        actor: String,
        #[serde(rename = "as")]
        name: String,
        #[serde(default = "default_app")]
        app: String,
        #[serde(default)]
        container: Option<String>,
        #[serde(default)]
        terminal: Option<TerminalKind>,
    },
    Action {
        session: String,
        event: String,
        #[serde(default)]
        params: Params,
        /// Submit as someone other than the session's owner.
        #[serde(default)]
        actor: Option<String>,
    },
    Raw {
        session: String,
        kind: RawKind,
        payload: String,
    },
    Resume {
        session: String,
        container: String,
        terminal: TerminalKind,
    },
    Expect {
        session: String,
        #[serde(default)]
        state: Option<String>,
        #[serde(default)]
        status: Option<String>,
        #[serde(default)]
        branch: Option<String>,
        #[serde(default)]
        reason: Option<String>,
        #[serde(default)]
        history_len: Option<usize>,
        #[serde(default)]
        max_columns: Option<usize>,
        #[serde(default)]
        out: Option<Params>,
    },
    Tick {
        secs: u64,
    },
    Random {
        session: String,
        steps: usize,
    },
}

fn default_app() -> String {
    crate::flightops::APP_ID.to_owned()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("boot: {0}")]
    Boot(String),
    #[error("line {line} ({step}): {message}")]
    Failed {
        line: usize,
        step: String,
        message: String,
    },
}

impl ScenarioError {
    /// Process exit code for the CLI: 1 for a failed step, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Failed { .. } => 1,
            _ => 2,
        }
    }
}

/// One line of a successful run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub line: usize,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub steps: Vec<StepReport>,
    /// Every notification produced, in order.
    pub notifications: Vec<Notification>,
}

pub fn parse_script(text: &str) -> Result<Vec<(usize, Step)>, ScenarioError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let step: Step = serde_json::from_str(trimmed).map_err(|e| ScenarioError::Parse {
            line,
            reason: e.to_string(),
        })?;
        if matches!(step, Step::Config { .. }) && !out.is_empty() {
            return Err(ScenarioError::Parse {
                line,
                reason: "config must be the first step".into(),
            });
        }
        out.push((line, step));
    }
    Ok(out)
}

struct Run {
    rt: Runtime,
    clock: Arc<ManualClock>,
    rng: ChaCha8Rng,
    names: BTreeMap<String, String>,
    last: BTreeMap<String, Notification>,
    notifications: Vec<Notification>,
}

/// Runs a script on a fresh runtime built from `base`.
pub fn run_script(text: &str, base: RuntimeConfig, seed: u64) -> Result<Report, ScenarioError> {
    let steps = parse_script(text)?;
    let mut config = base;
    if let Some((_, Step::Config { scripted_bips })) = steps.first() {
        config.scripted_bips |= *scripted_bips;
    }
    let scripted = config.scripted_bips;
    let clock = Arc::new(ManualClock::new(0));
    let rt = Runtime::boot(config, clock.clone() as Arc<dyn Clock>)
        .map_err(|e| ScenarioError::Boot(e.to_string()))?;
    let mut run = Run {
        rt,
        clock,
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: BTreeMap::new(),
        last: BTreeMap::new(),
        notifications: Vec::new(),
    };
    let mut reports = Vec::new();
    for (line, step) in steps {
        let label = step_name(&step);
        let summary = run.step(&step, scripted).map_err(|message| ScenarioError::Failed {
            line,
            step: label.to_owned(),
            message,
        })?;
        reports.push(StepReport { line, summary });
    }
    Ok(Report {
        steps: reports,
        notifications: run.notifications,
    })
}

fn step_name(step: &Step) -> &'static str {
    match step {
        Step::Config { .. } => "config",
        Step::Open { .. } => "open",
        Step::Action { .. } => "action",
        Step::Raw { .. } => "raw",
        Step::Resume { .. } => "resume",
        Step::Expect { .. } => "expect",
        Step::Tick { .. } => "tick",
        Step::Random { .. } => "random",
    }
}

fn check<T: PartialEq + std::fmt::Debug>(what: &str, want: Option<T>, got: T) -> Result<(), String> {
    match want {
        Some(w) if w != got => Err(format!("expected {what} {w:?}, got {got:?}")),
        _ => Ok(()),
    }
}

impl Run {
    fn session_id(&self, name: &str) -> Result<String, String> {
        self.names
            .get(name)
            .cloned()
            .ok_or_else(|| format!("no session named {name}"))
    }

    fn record(&mut self, name: &str, n: Notification) -> String {
        let summary = format!(
            "{} {} -> {}{}",
            n.event_id,
            serde_json::to_value(n.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            n.new_state,
            n.reason.as_ref().map(|r| format!(" ({})", r.code())).unwrap_or_default()
        );
        self.last.insert(name.to_owned(), n.clone());
        self.notifications.push(n);
        summary
    }

    fn step(&mut self, step: &Step, scripted: bool) -> Result<String, String> {
        match step {
            Step::Config { scripted_bips } => Ok(format!("scripted_bips={scripted_bips}")),
            Step::Open {
                actor,
                name,
                app,
                container,
                terminal,
            } => {
                let cap = terminal.map(|k| self.rt.core.presets().get(k));
                let container = container.as_deref().unwrap_or(DEFAULT_CONTAINER);
                let s = self
                    .rt
                    .core
                    .open_session(actor, app, container, cap)
                    .map_err(|e| e.to_string())?;
                self.names.insert(name.clone(), s.session_id.clone());
                Ok(format!("{name} = {} in {}", s.session_id, s.current_state))
            }
            Step::Action {
                session,
                event,
                params,
                actor,
            } => {
                let sid = self.session_id(session)?;
                let owner = self.rt.core.session(&sid).map_err(|e| e.to_string())?.actor_id;
                let n = self
                    .rt
                    .core
                    .interaction_request(&ActionData {
                        actor_id: actor.clone().unwrap_or(owner),
                        session_id: sid,
                        event_id: event.clone(),
                        params: params.clone(),
                    })
                    .map_err(|e| e.to_string())?;
                Ok(self.record(session, n))
            }
            Step::Raw { session, kind, payload } => {
                let sid = self.session_id(session)?;
                let n = self
                    .rt
                    .container
                    .capture_action(
                        &sid,
                        &RawAction {
                            kind: *kind,
                            payload: payload.clone(),
                        },
                    )
                    .map_err(|e| e.to_string())?;
                Ok(self.record(session, n))
            }
            Step::Resume {
                session,
                container,
                terminal,
            } => {
                let sid = self.session_id(session)?;
                let cap = self.rt.core.presets().get(*terminal);
                let s = self
                    .rt
                    .core
                    .resume_session(&sid, container, cap)
                    .map_err(|e| e.to_string())?;
                Ok(format!("{session} on {container} ({terminal}) in {}", s.current_state))
            }
            Step::Expect {
                session,
                state,
                status,
                branch,
                reason,
                history_len,
                max_columns,
                out,
            } => {
                let sid = self.session_id(session)?;
                let s = self.rt.core.session(&sid).map_err(|e| e.to_string())?;
                check("state", state.as_deref(), s.current_state.as_str())?;
                check("history length", *history_len, s.history.len())?;
                if status.is_some() || branch.is_some() || reason.is_some() || out.is_some() {
                    let n = self
                        .last
                        .get(session)
                        .ok_or_else(|| format!("{session} has no notification yet"))?;
                    let as_str = |v: Option<Value>| v.and_then(|v| v.as_str().map(str::to_owned));
                    check("status", status.clone(), as_str(serde_json::to_value(n.status).ok()).unwrap_or_default())?;
                    if branch.is_some() {
                        check("branch", branch.clone(), n.branch.map(|b| b.to_string()).unwrap_or_default())?;
                    }
                    if reason.is_some() {
                        check("reason", reason.as_deref(), n.reason.as_ref().map_or("", |r| r.code()))?;
                    }
                    if let Some(out) = out {
                        for (k, v) in out {
                            check(&format!("out param {k}"), Some(v), n.out_params.get(k).unwrap_or(&Value::Null))?;
                        }
                    }
                }
                if let Some(max) = max_columns {
                    let d = self
                        .rt
                        .container
                        .latest(&sid)
                        .ok_or_else(|| format!("nothing rendered for {session}"))?;
                    if d.view.columns.len() > *max {
                        return Err(format!("view has {} columns, limit {max}", d.view.columns.len()));
                    }
                }
                Ok(format!("{session} ok"))
            }
            Step::Tick { secs } => {
                let now = self.clock.advance(*secs);
                self.rt.renew_leases();
                let dropped = self.rt.expire();
                Ok(format!("t={now}, {dropped} events expired"))
            }
            Step::Random { session, steps } => {
                if !scripted {
                    return Err("random steps need scripted BIPs".into());
                }
                let sid = self.session_id(session)?;
                let mut accepted = 0;
                for _ in 0..*steps {
                    let action = random_action(&self.rt, &sid, &mut self.rng)?;
                    let n = self.rt.core.interaction_request(&action).map_err(|e| e.to_string())?;
                    accepted += usize::from(n.accepted());
                    self.record(session, n);
                }
                let s = self.rt.core.session(&sid).map_err(|e| e.to_string())?;
                Ok(format!("{steps} steps, {accepted} accepted, ends in {}", s.current_state))
            }
        }
    }
}

/// A plausible next action: usually an allowed event with its inputs
/// filled, sometimes an event from elsewhere in the model; the outcome is
/// drawn at random, with the occasional fault.
pub fn random_action(rt: &Runtime, session_id: &str, rng: &mut ChaCha8Rng) -> Result<ActionData, String> {
    let s = rt.core.session(session_id).map_err(|e| e.to_string())?;
    let model = rt
        .core
        .model(&s.model_id)
        .ok_or_else(|| format!("model {} not loaded", s.model_id))?;
    let allowed: Vec<String> = model
        .allowed_events(&s.current_state)
        .map_err(|e| e.to_string())?
        .into_iter()
        .collect();
    let everything: Vec<&str> = model.event_ids().into_iter().collect();
    let event = if allowed.is_empty() || rng.gen_bool(0.15) {
        everything.choose(rng).map(|e| (*e).to_owned()).unwrap_or_default()
    } else {
        allowed.choose(rng).cloned().unwrap_or_default()
    };
    let mut params = Params::new();
    if let Ok(spec) = model.event(&s.current_state, &event) {
        for p in &spec.in_params {
            params.insert(p.id.clone(), Value::String(format!("{}-{}", p.id, rng.gen_range(0..100))));
        }
    }
    let outcome = match rng.gen_range(0..20) {
        0 => "fault",
        1..=8 => "negative",
        _ => "positive",
    };
    params.insert(SCRIPT_OUTCOME.into(), Value::String(outcome.into()));
    Ok(ActionData {
        actor_id: s.actor_id,
        session_id: session_id.to_owned(),
        event_id: event,
        params,
    })
}

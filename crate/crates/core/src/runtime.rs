//! One middleware instance, wired.
//!
//! [`Runtime::boot`] builds the heap, the bus, the profile store, the
//! kernel, one interaction container and the flight-ops application, and
//! registers `IMServ`, `ICServ` and `COFOSServ` on the bus. What gets loaded
//! comes from a [`RuntimeConfig`]; [`RuntimeConfig::builtin`] carries the
//! bundled airport fixtures.

use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use crate::clock::{Clock, Tick};
use crate::event_heap::EventHeap;
use crate::flightops::{
    cofos_descriptor, install_bips, parse_flights, parse_templates, CofosServ, Flight, FlightOps,
    MessageTemplate, APP_ID,
};
use crate::interaction_container::{
    icserv_descriptor, BindingTable, CapabilityPresets, IcServ, InteractionContainer,
};
use crate::interaction_core::{
    imserv_descriptor, BipCall, BipFault, BipHandler, BipOutcome, ImServ, InteractionCore,
};
use crate::profile_store::{ProfileDocument, ProfileStore};
use crate::service_bus::{RegistrationId, ServiceBus, DEFAULT_LEASE_SECS};
use crate::task_engine::{error_count, parse_task_model_bytes, validate, Outcome, TaskModel};

/// The bundled airport fixtures.
pub mod fixtures {
    pub const AIRLINE_MODEL: &[u8] = include_bytes!("../fixtures/airline.task.xml");
    pub const HANDLING_MODEL: &[u8] = include_bytes!("../fixtures/handling.task.xml");
    pub const PROFILES: &str = include_str!("../fixtures/profiles.json");
    pub const FLIGHTS: &str = include_str!("../fixtures/flights.json");
    pub const TEMPLATES: &str = include_str!("../fixtures/templates.json");
    pub const COFOS_BINDINGS: &str = include_str!("../fixtures/cofos.bindings.json");
}

/// The container every session lands in unless told otherwise.
pub const DEFAULT_CONTAINER: &str = "ic-main";

/// Parameter that tells a scripted BIP which branch to take.
pub const SCRIPT_OUTCOME: &str = "$outcome";
/// Parameter holding a scripted BIP's out-params.
pub const SCRIPT_OUT: &str = "$out";

#[derive(Debug, Error)]
pub enum BootError {
    #[error("task model {name}: {reason}")]
    Model { name: String, reason: String },
    #[error("profiles: {0}")]
    Profiles(String),
    #[error("class {class} uses task model {model}, which is not loaded")]
    MissingModel { class: String, model: String },
    #[error("application fixtures: {0}")]
    App(String),
    #[error("service registration: {0}")]
    Bus(String),
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub models: Vec<TaskModel>,
    pub profiles: ProfileDocument,
    pub flights: Vec<Flight>,
    pub templates: Vec<MessageTemplate>,
    pub bindings: Vec<BindingTable>,
    pub presets: CapabilityPresets,
    /// Replace the application's BIPs with ones driven by [`SCRIPT_OUTCOME`].
    pub scripted_bips: bool,
    pub lease_secs: Tick,
}

/// Parses and validates one task model; any error diagnostic fails it.
pub fn load_model(name: &str, bytes: &[u8]) -> Result<TaskModel, BootError> {
    let model = parse_task_model_bytes(bytes).map_err(|e| BootError::Model {
        name: name.to_owned(),
        reason: e.to_string(),
    })?;
    let diags = validate(&model);
    if error_count(&diags) > 0 {
        let first = diags.iter().map(|d| format!("{d:?}")).next().unwrap_or_default();
        return Err(BootError::Model {
            name: name.to_owned(),
            reason: first,
        });
    }
    let mut model = model;
    if model.model_id.is_empty() {
        model.model_id = name.split('.').next().unwrap_or(name).to_owned();
    }
    Ok(model)
}

impl RuntimeConfig {
    pub fn builtin() -> Self {
        let parse = || -> Result<Self, BootError> {
            Ok(Self {
                models: vec![
                    load_model("airline.task.xml", fixtures::AIRLINE_MODEL)?,
                    load_model("handling.task.xml", fixtures::HANDLING_MODEL)?,
                ],
                profiles: serde_json::from_str(fixtures::PROFILES)
                    .map_err(|e| BootError::Profiles(e.to_string()))?,
                flights: parse_flights(fixtures::FLIGHTS).map_err(|e| BootError::App(e.to_string()))?,
                templates: parse_templates(fixtures::TEMPLATES)
                    .map_err(|e| BootError::App(e.to_string()))?,
                bindings: vec![BindingTable::from_json(fixtures::COFOS_BINDINGS)
                    .map_err(|e| BootError::App(e.to_string()))?],
                presets: CapabilityPresets::default(),
                scripted_bips: false,
                lease_secs: DEFAULT_LEASE_SECS,
            })
        };
        parse().expect("bundled fixtures are valid")
    }

    pub fn scripted(mut self) -> Self {
        self.scripted_bips = true;
        self
    }
}

/// BIP whose outcome is chosen by the caller, for replaying scripts and
/// oracle checks. `$outcome` is `positive` (default), `negative` or
/// `fault`; `$out` is an object of out-params.
pub fn scripted_bip(call: &BipCall<'_>) -> Result<BipOutcome, BipFault> {
    let branch = match call.params.get(SCRIPT_OUTCOME).and_then(Value::as_str) {
        None | Some("positive") => Outcome::Positive,
        Some("negative") => Outcome::Negative,
        Some("fault") => return Err(BipFault("scripted fault".into())),
        Some(other) => return Err(BipFault(format!("bad {SCRIPT_OUTCOME} {other}"))),
    };
    let out_params = match call.params.get(SCRIPT_OUT) {
        None | Some(Value::Null) => Default::default(),
        Some(Value::Object(m)) => m.clone(),
        Some(other) => return Err(BipFault(format!("bad {SCRIPT_OUT} {other}"))),
    };
    Ok(BipOutcome { branch, out_params })
}

pub struct Runtime {
    pub clock: Arc<dyn Clock>,
    pub heap: Arc<EventHeap>,
    pub bus: Arc<ServiceBus>,
    pub profiles: Arc<ProfileStore>,
    pub core: Arc<InteractionCore>,
    pub container: Arc<InteractionContainer>,
    pub app: Arc<FlightOps>,
    registrations: Vec<RegistrationId>,
}

impl Runtime {
    pub fn boot(config: RuntimeConfig, clock: Arc<dyn Clock>) -> Result<Self, BootError> {
        let profiles = Arc::new(
            ProfileStore::from_document(config.profiles).map_err(|e| BootError::Profiles(e.to_string()))?,
        );
        for class in profiles.snapshot().classes {
            if !config.models.iter().any(|m| m.model_id == class.task_model_id) {
                return Err(BootError::MissingModel {
                    class: class.class_id,
                    model: class.task_model_id,
                });
            }
        }
        let heap = Arc::new(EventHeap::new());
        let bus = Arc::new(ServiceBus::new(Arc::clone(&clock)));
        let core = Arc::new(InteractionCore::new(
            Arc::clone(&heap),
            Arc::clone(&bus),
            Arc::clone(&profiles),
            config.presets,
        ));
        for m in config.models.iter().cloned() {
            core.add_model(m);
        }
        core.register_app(APP_ID);
        let container = Arc::new(InteractionContainer::new(Arc::clone(&bus), Arc::clone(&profiles)));
        for table in config.bindings {
            container.add_bindings(table);
        }
        let app = Arc::new(FlightOps::new(
            config.flights,
            config.templates,
            Arc::clone(&profiles),
            Some(Arc::clone(&bus)),
        ));
        if config.scripted_bips {
            let methods: std::collections::BTreeSet<String> = config
                .models
                .iter()
                .flat_map(|m| m.bip_methods().into_iter().map(str::to_owned).collect::<Vec<_>>())
                .collect();
            for m in methods {
                core.register_bip(&m, Arc::new(scripted_bip) as Arc<dyn BipHandler>)
                    .map_err(|e| BootError::App(e.to_string()))?;
            }
        } else {
            install_bips(&app, &core).map_err(|e| BootError::App(e.to_string()))?;
        }

        let lease = config.lease_secs;
        let reg = |d: crate::service_bus::ServiceDescriptor, h: Arc<dyn crate::service_bus::ServiceHandler>| {
            bus.register(d.lease(lease), h)
                .map_err(|e| BootError::Bus(e.to_string()))
        };
        let registrations = vec![
            reg(imserv_descriptor(), Arc::new(ImServ::new(&core)))?,
            reg(icserv_descriptor(), Arc::new(IcServ(Arc::clone(&container))))?,
            reg(cofos_descriptor(), Arc::new(CofosServ(Arc::clone(&app))))?,
        ];
        Ok(Self {
            clock,
            heap,
            bus,
            profiles,
            core,
            container,
            app,
            registrations,
        })
    }

    /// Renews every lease this runtime holds.
    pub fn renew_leases(&self) {
        for id in &self.registrations {
            if let Err(e) = self.bus.renew_lease(*id) {
                log::warn!("lease renewal failed: {e}");
            }
        }
    }

    /// Brings the heap's clock up to the runtime clock, dropping expired events.
    pub fn expire(&self) -> usize {
        self.heap.expire(self.clock.now()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    #[test]
    fn builtin_boot_registers_three_services() {
        let rt = Runtime::boot(RuntimeConfig::builtin(), Arc::new(ManualClock::new(0))).unwrap();
        assert_eq!(rt.bus.list_services(), ["COFOSServ", "ICServ", "IMServ"]);
        assert_eq!(rt.core.model_ids(), ["airline", "handling"]);
    }

    #[test]
    fn leases_lapse_unless_renewed() {
        let clock = Arc::new(ManualClock::new(0));
        let rt = Runtime::boot(RuntimeConfig::builtin(), clock.clone()).unwrap();
        clock.advance(DEFAULT_LEASE_SECS - 1);
        rt.renew_leases();
        clock.advance(DEFAULT_LEASE_SECS - 1);
        assert_eq!(rt.bus.list_services().len(), 3);
        clock.advance(1);
        assert!(rt.bus.list_services().is_empty());
    }

    #[test]
    fn class_without_model_fails_boot() {
        let mut cfg = RuntimeConfig::builtin();
        cfg.models.retain(|m| m.model_id != "handling");
        assert!(matches!(
            Runtime::boot(cfg, Arc::new(ManualClock::new(0))),
            Err(BootError::MissingModel { .. })
        ));
    }
}

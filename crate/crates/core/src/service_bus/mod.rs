//! Service declaration, naming, leases, invocation and the call trace.
//!
//! Services are registered under a unique name with a list of method
//! descriptors and a lease. A service whose lease lapsed is gone: lookups
//! fail, invocations fault, and the name may be taken again. Every
//! invocation, successful or not, is appended to the call trace in the order
//! the calls started.
//!
//! Handlers live either in this process ([`ServiceBus::register`]) or behind
//! another bus reachable over TCP ([`ServiceBus::register_remote`]).

mod tcp;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::clock::{Clock, Tick};

pub use tcp::{BusClient, BusServer, ConnectionHook, ServerHandle, MAX_LINE_BYTES};

/// Parameter and result maps exchanged with services.
pub type Params = Map<String, Value>;

pub const DEFAULT_LEASE_SECS: Tick = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub id: String,
    /// Opaque; never interpreted by the bus.
    #[serde(rename = "type")]
    pub semantic_type: String,
}

impl ParamSpec {
    pub fn new(id: impl Into<String>, semantic_type: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            semantic_type: semantic_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub results: Vec<ParamSpec>,
}

impl MethodDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Vec::new(),
            results: Vec::new(),
        }
    }

    pub fn param(mut self, id: &str, semantic_type: &str) -> Self {
        self.params.push(ParamSpec::new(id, semantic_type));
        self
    }

    pub fn result(mut self, id: &str, semantic_type: &str) -> Self {
        self.results.push(ParamSpec::new(id, semantic_type));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "addr")]
pub enum Endpoint {
    InProcess,
    Tcp(SocketAddr),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub name: String,
    pub methods: Vec<MethodDescriptor>,
    pub endpoint: Endpoint,
    pub lease_secs: Tick,
}

impl ServiceDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            methods: Vec::new(),
            endpoint: Endpoint::InProcess,
            lease_secs: DEFAULT_LEASE_SECS,
        }
    }

    pub fn method(mut self, method: MethodDescriptor) -> Self {
        self.methods.push(method);
        self
    }

    pub fn lease(mut self, secs: Tick) -> Self {
        self.lease_secs = secs;
        self
    }

    pub fn endpoint(mut self, endpoint: Endpoint) -> Self {
        self.endpoint = endpoint;
        self
    }

    pub fn find_method(&self, name: &str) -> Option<&MethodDescriptor> {
        self.methods.iter().find(|m| m.name == name)
    }

    fn check(&self) -> Result<(), BusError> {
        if self.name.is_empty() {
            return Err(BusError::InvalidDescriptor("empty service name".into()));
        }
        if self.lease_secs == 0 {
            return Err(BusError::InvalidDescriptor("lease must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if !names.insert(m.name.as_str()) {
                return Err(BusError::InvalidDescriptor(format!(
                    "method {} declared twice",
                    m.name
                )));
            }
            let mut ids = BTreeSet::new();
            if !m.params.iter().all(|p| ids.insert(p.id.as_str())) {
                return Err(BusError::InvalidDescriptor(format!(
                    "duplicate param id in {}",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCode {
    NotFound,
    UnknownMethod,
    BadParams,
    TransportError,
    ApplicationFault,
    MalformedRequest,
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultCode::NotFound => "not_found",
            FaultCode::UnknownMethod => "unknown_method",
            FaultCode::BadParams => "bad_params",
            FaultCode::TransportError => "transport_error",
            FaultCode::ApplicationFault => "application_fault",
            FaultCode::MalformedRequest => "malformed_request",
        };
        f.write_str(s)
    }
}

/// A structured failure returned by an invocation. Faults are values; they
/// never take the bus down.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct Fault {
    pub code: FaultCode,
    pub message: String,
}

impl Fault {
    pub fn new(code: FaultCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn app(message: impl Into<String>) -> Self {
        Self::new(FaultCode::ApplicationFault, message)
    }

    pub fn bad_params(message: impl Into<String>) -> Self {
        Self::new(FaultCode::BadParams, message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("a live service named {0} is already registered")]
    DuplicateName(String),
    #[error("no live service named {0}")]
    NotFound(String),
    #[error("unknown registration {0:?}")]
    UnknownRegistration(RegistrationId),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Something that can answer method calls.
pub trait ServiceHandler: Send + Sync {
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault>;
}

impl<F> ServiceHandler for F
where
    F: Fn(&str, Params) -> Result<Params, Fault> + Send + Sync,
{
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault> {
        self(method, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegistrationId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Pending,
    Ok,
    Fault(FaultCode),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub caller: String,
    pub service: String,
    pub method: String,
    pub status: CallStatus,
}

enum Route {
    Local(Arc<dyn ServiceHandler>),
    Remote {
        addr: SocketAddr,
        client: Mutex<Option<Arc<BusClient>>>,
    },
}

struct Registration {
    id: RegistrationId,
    descriptor: ServiceDescriptor,
    route: Arc<Route>,
    expires_at: Tick,
}

#[derive(Default)]
struct Registry {
    by_name: BTreeMap<String, Registration>,
    next_id: u64,
}

impl Registry {
    fn purge(&mut self, now: Tick) {
        self.by_name.retain(|_, r| now < r.expires_at);
    }
}

pub struct ServiceBus {
    clock: Arc<dyn Clock>,
    registry: RwLock<Registry>,
    trace: Mutex<Vec<TraceEntry>>,
}

impl ServiceBus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            registry: RwLock::new(Registry::default()),
            trace: Mutex::new(Vec::new()),
        }
    }

    /// Registers an in-process service.
    pub fn register(
        &self,
        mut descriptor: ServiceDescriptor,
        handler: Arc<dyn ServiceHandler>,
    ) -> Result<RegistrationId, BusError> {
        descriptor.endpoint = Endpoint::InProcess;
        self.insert(descriptor, Route::Local(handler))
    }

    /// Registers a service hosted by another bus; calls are forwarded over
    /// the line protocol to the descriptor's TCP endpoint.
    pub fn register_remote(&self, descriptor: ServiceDescriptor) -> Result<RegistrationId, BusError> {
        let Endpoint::Tcp(addr) = descriptor.endpoint else {
            return Err(BusError::InvalidDescriptor(
                "remote services need a tcp endpoint".into(),
            ));
        };
        self.insert(
            descriptor,
            Route::Remote {
                addr,
                client: Mutex::new(None),
            },
        )
    }

    fn insert(&self, descriptor: ServiceDescriptor, route: Route) -> Result<RegistrationId, BusError> {
        descriptor.check()?;
        let now = self.clock.now();
        let mut reg = self.registry.write();
        reg.purge(now);
        if reg.by_name.contains_key(&descriptor.name) {
            return Err(BusError::DuplicateName(descriptor.name));
        }
        reg.next_id += 1;
        let id = RegistrationId(reg.next_id);
        let expires_at = now.saturating_add(descriptor.lease_secs);
        log::debug!("registered {} as {:?}", descriptor.name, id);
        reg.by_name.insert(
            descriptor.name.clone(),
            Registration {
                id,
                descriptor,
                route: Arc::new(route),
                expires_at,
            },
        );
        Ok(id)
    }

    pub fn unregister(&self, id: RegistrationId) -> Result<(), BusError> {
        let mut reg = self.registry.write();
        let name = reg
            .by_name
            .iter()
            .find(|(_, r)| r.id == id)
            .map(|(n, _)| n.clone())
            .ok_or(BusError::UnknownRegistration(id))?;
        reg.by_name.remove(&name);
        Ok(())
    }

    /// Extends the lease by the descriptor's lease length, counted from now.
    pub fn renew_lease(&self, id: RegistrationId) -> Result<Tick, BusError> {
        let now = self.clock.now();
        let mut reg = self.registry.write();
        reg.purge(now);
        let r = reg
            .by_name
            .values_mut()
            .find(|r| r.id == id)
            .ok_or(BusError::UnknownRegistration(id))?;
        r.expires_at = now.saturating_add(r.descriptor.lease_secs);
        Ok(r.expires_at)
    }

    pub fn lookup(&self, name: &str) -> Result<ServiceDescriptor, BusError> {
        let now = self.clock.now();
        self.registry
            .read()
            .by_name
            .get(name)
            .filter(|r| now < r.expires_at)
            .map(|r| r.descriptor.clone())
            .ok_or_else(|| BusError::NotFound(name.to_owned()))
    }

    /// Names of live services, sorted.
    pub fn list_services(&self) -> Vec<String> {
        let now = self.clock.now();
        self.registry
            .read()
            .by_name
            .values()
            .filter(|r| now < r.expires_at)
            .map(|r| r.descriptor.name.clone())
            .collect()
    }

    /// Synchronous call. The trace entry is reserved before dispatch so
    /// nested calls appear after the call that caused them.
    pub fn invoke(
        &self,
        caller: &str,
        service: &str,
        method: &str,
        params: Params,
    ) -> Result<Params, Fault> {
        let slot = {
            let mut trace = self.trace.lock();
            let seq = trace.len() as u64 + 1;
            trace.push(TraceEntry {
                seq,
                caller: caller.to_owned(),
                service: service.to_owned(),
                method: method.to_owned(),
                status: CallStatus::Pending,
            });
            seq as usize - 1
        };
        let result = self.dispatch(service, method, params);
        self.trace.lock()[slot].status = match &result {
            Ok(_) => CallStatus::Ok,
            Err(f) => CallStatus::Fault(f.code),
        };
        if let Err(f) = &result {
            log::debug!("{caller} -> {service}.{method} faulted: {f}");
        }
        result
    }

    fn dispatch(&self, service: &str, method: &str, params: Params) -> Result<Params, Fault> {
        let now = self.clock.now();
        let (descriptor, route) = {
            let reg = self.registry.read();
            let r = reg
                .by_name
                .get(service)
                .filter(|r| now < r.expires_at)
                .ok_or_else(|| Fault::new(FaultCode::NotFound, format!("no service {service}")))?;
            (r.descriptor.clone(), Arc::clone(&r.route))
        };
        let md = descriptor.find_method(method).ok_or_else(|| {
            Fault::new(
                FaultCode::UnknownMethod,
                format!("{service} has no method {method}"),
            )
        })?;
        if let Some(missing) = md.params.iter().find(|p| !params.contains_key(&p.id)) {
            return Err(Fault::bad_params(format!(
                "missing parameter {} for {service}.{method}",
                missing.id
            )));
        }
        let result = match route.as_ref() {
            Route::Local(handler) => handler.call(method, params)?,
            Route::Remote { addr, client } => {
                let client = {
                    let mut slot = client.lock();
                    match slot.as_ref() {
                        Some(c) if c.is_alive() => Arc::clone(c),
                        _ => {
                            let c = Arc::new(BusClient::connect(*addr).map_err(|e| {
                                Fault::new(FaultCode::TransportError, e.to_string())
                            })?);
                            *slot = Some(Arc::clone(&c));
                            c
                        }
                    }
                };
                client.invoke(service, method, params)?
            }
        };
        if let Some(missing) = md.results.iter().find(|p| !result.contains_key(&p.id)) {
            return Err(Fault::app(format!(
                "{service}.{method} returned no {}",
                missing.id
            )));
        }
        Ok(result)
    }

    pub fn call_trace(&self) -> Vec<TraceEntry> {
        self.trace.lock().clone()
    }

    /// Trace entries with `seq > after`.
    pub fn trace_since(&self, after: u64) -> Vec<TraceEntry> {
        let trace = self.trace.lock();
        trace.get(after as usize..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn invoke_count(&self) -> usize {
        self.trace.lock().len()
    }
}

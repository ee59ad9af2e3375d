//! The long-running middleware process.
//!
//! [`Daemon::start`] boots a [`Runtime`] on the system clock, serves the
//! bus over TCP (plus the WebSocket/HTTP gateway on the same port) and runs
//! a housekeeping thread that renews leases, expires heap events and, when
//! configured, drives the simulated flight feed.

mod config;
pub mod gateway;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::SystemClock;
use crate::flightops::FeedSimulator;
use crate::runtime::{BootError, Runtime, RuntimeConfig};
use crate::service_bus::{BusServer, Fault, FaultCode, Params, ServerHandle, ServiceHandler};

pub use config::{load_config, ConfigError, FeedConfig, ServeOptions, DEFAULT_PORT};
pub use gateway::{Gateway, GATEWAY_SERVICE};

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error(transparent)]
    Boot(#[from] BootError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

/// Answers `$admin` requests: the operational views of a running daemon.
///
/// - `ListServices` → `{services}`
/// - `Trace {after?}` → `{entries, invoke_count}`
/// - `HeapLog {after?}` → `{records}`
/// - `Sessions` → `{sessions}`
pub struct Admin {
    runtime: Arc<Runtime>,
}

impl Admin {
    pub fn new(runtime: Arc<Runtime>) -> Self {
        Self { runtime }
    }
}

fn opt<T: DeserializeOwned + Default>(params: &Params, id: &str) -> Result<T, Fault> {
    match params.get(id) {
        None | Some(Value::Null) => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Fault::bad_params(format!("{id}: {e}"))),
    }
}

impl ServiceHandler for Admin {
    fn call(&self, method: &str, params: Params) -> Result<Params, Fault> {
        let rt = &self.runtime;
        let value = match method {
            "ListServices" => json!({ "services": rt.bus.list_services() }),
            "Trace" => {
                let after: u64 = opt(&params, "after")?;
                json!({ "entries": rt.bus.trace_since(after), "invoke_count": rt.bus.invoke_count() })
            }
            "HeapLog" => {
                let after: u64 = opt(&params, "after")?;
                json!({ "records": rt.heap.post_log(after) })
            }
            "Sessions" => json!({ "sessions": rt.core.session_ids() }),
            other => {
                return Err(Fault::new(
                    FaultCode::UnknownMethod,
                    format!("$admin has no method {other}"),
                ))
            }
        };
        let Value::Object(out) = value else { unreachable!() };
        Ok(out)
    }
}

pub struct Daemon {
    runtime: Arc<Runtime>,
    server: Option<ServerHandle>,
    stop: Arc<AtomicBool>,
    housekeeping: Option<JoinHandle<()>>,
}

impl Daemon {
    pub fn start(config: RuntimeConfig, options: ServeOptions) -> Result<Self, DaemonError> {
        let lease = config.lease_secs;
        let runtime = Arc::new(Runtime::boot(config, Arc::new(SystemClock::new()))?);
        let admin: Arc<dyn ServiceHandler> = Arc::new(Admin::new(Arc::clone(&runtime)));
        let addr = format!("{}:{}", options.host, options.port);
        let bind_err = |source| DaemonError::Bind {
            addr: addr.clone(),
            source,
        };
        let server = BusServer::bind(addr.as_str(), Arc::clone(&runtime.bus))
            .map_err(bind_err)?
            .with_admin(Arc::clone(&admin))
            .with_hook(Arc::new(Gateway {
                bus: Arc::clone(&runtime.bus),
                admin,
                container: Arc::clone(&runtime.container),
                ui_dir: options.ui_dir.clone(),
            }))
            .spawn()
            .map_err(bind_err)?;
        log::info!("listening on {}", server.addr());

        let stop = Arc::new(AtomicBool::new(false));
        let housekeeping = {
            let rt = Arc::clone(&runtime);
            let stop = Arc::clone(&stop);
            let options = options.clone();
            thread::Builder::new()
                .name("housekeeping".into())
                .spawn(move || housekeeping(rt, stop, lease, options))
                .expect("spawn housekeeping thread")
        };
        Ok(Self {
            runtime,
            server: Some(server),
            stop,
            housekeeping: Some(housekeeping),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.as_ref().map(ServerHandle::addr).expect("server running")
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.runtime
    }

    /// Blocks until the process is killed.
    pub fn wait(self) {
        if let Some(h) = &self.housekeeping {
            while !h.is_finished() {
                thread::sleep(Duration::from_millis(200));
            }
        }
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(s) = self.server.take() {
            s.shutdown();
        }
        if let Some(h) = self.housekeeping.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn housekeeping(rt: Arc<Runtime>, stop: Arc<AtomicBool>, lease: u64, options: ServeOptions) {
    let renew_every = (lease / 3).max(1);
    let mut feed = options.feed.map(|f| (FeedSimulator::new(f.seed), f.interval_secs));
    let mut last_renew = rt.clock.now();
    let mut last_feed = rt.clock.now();
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(100));
        let now = rt.clock.now();
        if now >= last_renew + renew_every {
            rt.renew_leases();
            last_renew = now;
        }
        rt.expire();
        if let Some((sim, every)) = feed.as_mut() {
            if now >= last_feed + *every {
                last_feed = now;
                if let Some(f) = sim.tick(&rt.app) {
                    log::info!("feed: {} now {} at {}", f.flight_id, f.status, f.gate);
                    if let Some(p) = &options.snapshot {
                        if let Err(e) = rt.app.save_snapshot(p) {
                            log::warn!("snapshot to {} failed: {e}", p.display());
                        }
                    }
                }
            }
        }
    }
}

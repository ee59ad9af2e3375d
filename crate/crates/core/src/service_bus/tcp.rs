//! Single-host TCP transport for the line protocol.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;
use serde_json::{json, Value};

use super::wire::{handle_line, Request, Response, PROTOCOL_VERSION};
use super::{Fault, FaultCode, Params, ServiceBus, ServiceHandler};

pub const MAX_LINE_BYTES: usize = 1 << 20;

const CALL_TIMEOUT: Duration = Duration::from_secs(30);

/// Lets another protocol share the listening port. The server peeks at the
/// first bytes of each connection and hands it over when `wants` says so.
pub trait ConnectionHook: Send + Sync {
    fn wants(&self, first_bytes: &[u8]) -> bool;
    fn handle(&self, stream: TcpStream);
}

pub struct BusServer {
    listener: TcpListener,
    bus: Arc<ServiceBus>,
    admin: Option<Arc<dyn ServiceHandler>>,
    hook: Option<Arc<dyn ConnectionHook>>,
}

impl BusServer {
    pub fn bind(addr: impl ToSocketAddrs, bus: Arc<ServiceBus>) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            bus,
            admin: None,
            hook: None,
        })
    }

    pub fn with_admin(mut self, admin: Arc<dyn ServiceHandler>) -> Self {
        self.admin = Some(admin);
        self
    }

    pub fn with_hook(mut self, hook: Arc<dyn ConnectionHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::Builder::new()
            .name("bus-accept".into())
            .spawn(move || self.accept_loop(&flag))?;
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }

    /// Runs the accept loop on the calling thread until the process exits.
    pub fn run(self) {
        self.accept_loop(&AtomicBool::new(false));
    }

    fn accept_loop(self, stop: &AtomicBool) {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let bus = Arc::clone(&self.bus);
            let admin = self.admin.clone();
            let hook = self.hook.clone();
            let spawned = thread::Builder::new()
                .name("bus-conn".into())
                .spawn(move || {
                    if let Some(hook) = hook {
                        let mut head = [0u8; 8];
                        if let Ok(n) = stream.peek(&mut head) {
                            if hook.wants(&head[..n]) {
                                hook.handle(stream);
                                return;
                            }
                        }
                    }
                    if let Err(e) = serve_connection(stream, bus, admin) {
                        log::debug!("connection closed: {e}");
                    }
                });
            if let Err(e) = spawned {
                log::warn!("could not spawn connection thread: {e}");
            }
        }
    }
}

fn serve_connection(
    stream: TcpStream,
    bus: Arc<ServiceBus>,
    admin: Option<Arc<dyn ServiceHandler>>,
) -> io::Result<()> {
    let peer = stream
        .peer_addr()
        .map(|a| format!("tcp:{a}"))
        .unwrap_or_else(|_| "tcp:?".into());
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let mut reader = BufReader::new(stream);
    loop {
        let mut buf = Vec::new();
        let n = (&mut reader)
            .take(MAX_LINE_BYTES as u64 + 1)
            .read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
            if buf.last() == Some(&b'\r') {
                buf.pop();
            }
        } else if buf.len() > MAX_LINE_BYTES {
            let resp = Response::fault(
                Value::Null,
                &Fault::new(FaultCode::MalformedRequest, "line exceeds 1 MiB"),
            );
            write_line(&writer, &resp.to_line())?;
            writer.lock().shutdown(Shutdown::Both).ok();
            return Ok(());
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let line = match String::from_utf8(buf) {
            Ok(l) => l,
            Err(_) => {
                let resp = Response::fault(
                    Value::Null,
                    &Fault::new(FaultCode::MalformedRequest, "line is not UTF-8"),
                );
                write_line(&writer, &resp.to_line())?;
                continue;
            }
        };
        // Requests on one connection run concurrently; responses carry the
        // request id and may come back in any order.
        let bus = Arc::clone(&bus);
        let admin = admin.clone();
        let writer = Arc::clone(&writer);
        let peer = peer.clone();
        thread::spawn(move || {
            let resp = handle_line(&bus, admin.as_deref(), &peer, &line);
            if let Err(e) = write_line(&writer, &resp.to_line()) {
                log::debug!("dropping response to {peer}: {e}");
            }
        });
    }
}

fn write_line(writer: &Mutex<TcpStream>, line: &str) -> io::Result<()> {
    let mut w = writer.lock();
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.join.is_some() {
            self.stop_inner();
        }
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Response>>>>;

/// Client side of the line protocol. Calls may be issued from several
/// threads at once over the same connection.
pub struct BusClient {
    writer: Mutex<TcpStream>,
    pending: Pending,
    next_id: AtomicU64,
    alive: Arc<AtomicBool>,
    caller: Option<String>,
}

impl BusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true).ok();
        let pending: Pending = Arc::new(Mutex::new(HashMap::new()));
        let alive = Arc::new(AtomicBool::new(true));
        let reader = BufReader::new(stream.try_clone()?);
        {
            let pending = Arc::clone(&pending);
            let alive = Arc::clone(&alive);
            thread::Builder::new()
                .name("bus-client".into())
                .spawn(move || {
                    for line in reader.lines() {
                        let Ok(line) = line else { break };
                        let Ok(resp) = serde_json::from_str::<Response>(&line) else {
                            log::warn!("unreadable response line");
                            continue;
                        };
                        let Some(id) = resp.id.as_u64() else { continue };
                        if let Some(tx) = pending.lock().remove(&id) {
                            let _ = tx.send(resp);
                        }
                    }
                    alive.store(false, Ordering::SeqCst);
                    pending.lock().clear();
                })?;
        }
        Ok(Self {
            writer: Mutex::new(stream),
            pending,
            next_id: AtomicU64::new(1),
            alive,
            caller: None,
        })
    }

    /// Names this client in the server's call trace.
    pub fn with_caller(mut self, caller: impl Into<String>) -> Self {
        self.caller = Some(caller.into());
        self
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, service: &str, method: &str, params: Params) -> io::Result<Response> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let req = Request {
            v: PROTOCOL_VERSION,
            id: json!(id),
            service: service.to_owned(),
            method: method.to_owned(),
            params,
            caller: self.caller.clone(),
        };
        let (tx, rx) = mpsc::channel();
        self.pending.lock().insert(id, tx);
        let line = serde_json::to_string(&req).map_err(io::Error::other)?;
        if let Err(e) = write_line(&self.writer, &line) {
            self.pending.lock().remove(&id);
            return Err(e);
        }
        rx.recv_timeout(CALL_TIMEOUT).map_err(|e| {
            self.pending.lock().remove(&id);
            io::Error::new(io::ErrorKind::ConnectionAborted, e.to_string())
        })
    }

    pub fn invoke(&self, service: &str, method: &str, params: Params) -> Result<Params, Fault> {
        self.call(service, method, params)
            .map_err(|e| Fault::new(FaultCode::TransportError, e.to_string()))?
            .into_result()
    }
}

impl Drop for BusClient {
    fn drop(&mut self) {
        let _ = self.writer.lock().shutdown(Shutdown::Both);
    }
}

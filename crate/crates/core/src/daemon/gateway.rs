//! HTTP side door on the bus port: `/ws` speaks the line protocol over
//! WebSocket, `/ui/` serves the web terminal's static files.
//!
//! Over `/ws` every text frame is one request envelope and every response
//! is one frame. A client may also send
//! `{"v":1,"id":…,"service":"$gateway","method":"Watch","params":{"container_id":"…"}}`
//! to have rendered views for that container pushed as
//! `{"v":1,"event":"display","payload":{…}}` frames between responses.

use std::io::{self, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::path::{Component, Path, PathBuf};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use crate::interaction_container::{Delivery, InteractionContainer};
use crate::service_bus::wire::{handle_line, Request, Response};
use crate::service_bus::{ConnectionHook, Fault, FaultCode, Params, ServiceBus, ServiceHandler};

pub const GATEWAY_SERVICE: &str = "$gateway";
const POLL: Duration = Duration::from_millis(25);

const FALLBACK_INDEX: &str = "<!doctype html>\n<title>hicd</title>\n<p>The web terminal is not installed. \
Point <code>ui_dir</code> in the daemon configuration at its build output, or talk to <code>/ws</code> directly.</p>\n";

pub struct Gateway {
    pub bus: Arc<ServiceBus>,
    pub admin: Arc<dyn ServiceHandler>,
    pub container: Arc<InteractionContainer>,
    pub ui_dir: Option<PathBuf>,
}

impl ConnectionHook for Gateway {
    fn wants(&self, first_bytes: &[u8]) -> bool {
        first_bytes.starts_with(b"GET ") || first_bytes.starts_with(b"HEAD ")
    }

    fn handle(&self, stream: TcpStream) {
        let path = match peek_path(&stream) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("bad http request: {e}");
                return;
            }
        };
        let result = if path == "/ws" || path.starts_with("/ws?") {
            self.websocket(stream)
        } else {
            self.static_file(stream, &path)
        };
        if let Err(e) = result {
            log::debug!("gateway connection ended: {e}");
        }
    }
}

/// The request target, read without consuming anything.
fn peek_path(stream: &TcpStream) -> io::Result<String> {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut buf = vec![0u8; 2048];
    loop {
        let n = stream.peek(&mut buf)?;
        if let Some(end) = buf[..n].windows(2).position(|w| w == b"\r\n") {
            let line = String::from_utf8_lossy(&buf[..end]).into_owned();
            let mut parts = line.split(' ');
            let _method = parts.next();
            return parts
                .next()
                .map(str::to_owned)
                .ok_or_else(|| io::Error::new(ErrorKind::InvalidData, "no request target"));
        }
        if n == buf.len() || Instant::now() > deadline {
            return Err(io::Error::new(ErrorKind::InvalidData, "request line too long"));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps `/ui/…` onto a file under `root`, refusing anything that climbs out.
pub fn resolve_ui_path(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or_default();
    let rel = path.strip_prefix("/ui/")?;
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return None;
    }
    Some(root.join(rel))
}

impl Gateway {
    fn static_file(&self, mut stream: TcpStream, target: &str) -> io::Result<()> {
        // drain the request head
        let mut head = Vec::new();
        let mut byte = [0u8; 1];
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        while !head.ends_with(b"\r\n\r\n") && head.len() < 64 * 1024 {
            if stream.read(&mut byte)? == 0 {
                break;
            }
            head.push(byte[0]);
        }
        let head_only = head.starts_with(b"HEAD ");
        let (status, ctype, body): (&str, &str, Vec<u8>) = if target == "/ui" {
            let resp = "HTTP/1.1 301 Moved Permanently\r\nLocation: /ui/\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
            return stream.write_all(resp.as_bytes());
        } else {
            let file = self
                .ui_dir
                .as_ref()
                .and_then(|root| resolve_ui_path(root, target))
                .and_then(|p| std::fs::read(&p).ok().map(|b| (b, p)));
            match file {
                Some((bytes, p)) => ("200 OK", content_type(&p), bytes),
                // no build installed: still answer the front page
                None if target.split('?').next() == Some("/ui/") => {
                    ("200 OK", "text/html; charset=utf-8", FALLBACK_INDEX.as_bytes().to_vec())
                }
                None => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
            }
        };
        let header = format!(
            "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            body.len()
        );
        stream.write_all(header.as_bytes())?;
        if !head_only {
            stream.write_all(&body)?;
        }
        stream.flush()
    }

    fn websocket(&self, stream: TcpStream) -> io::Result<()> {
        let peer = stream
            .peer_addr()
            .map(|a| format!("ws:{a}"))
            .unwrap_or_else(|_| "ws:?".into());
        let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(POLL))?;
        let mut watch: Option<Receiver<Delivery>> = None;
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    let reply = self.answer(&peer, &text, &mut watch);
                    ws.send(Message::Text(reply))
                        .map_err(|e| io::Error::other(e.to_string()))?;
                }
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Ok(())
                }
                Err(e) => return Err(io::Error::other(e.to_string())),
            }
            if let Some(rx) = &watch {
                push_views(&mut ws, rx)?;
            }
        }
    }

    fn answer(&self, peer: &str, text: &str, watch: &mut Option<Receiver<Delivery>>) -> String {
        if let Ok(req) = serde_json::from_str::<Request>(text) {
            if req.service == GATEWAY_SERVICE {
                let result = match req.method.as_str() {
                    "Watch" => {
                        let container = req.params.get("container_id").and_then(Value::as_str);
                        *watch = Some(self.container.listen(container));
                        let mut out = Params::new();
                        out.insert("watching".into(), json!(container));
                        Ok(out)
                    }
                    other => Err(Fault::new(
                        FaultCode::UnknownMethod,
                        format!("{GATEWAY_SERVICE} has no method {other}"),
                    )),
                };
                return Response::from_result(req.id, result).to_line();
            }
        }
        handle_line(&self.bus, Some(self.admin.as_ref()), peer, text).to_line()
    }
}

fn push_views(ws: &mut WebSocket<TcpStream>, rx: &Receiver<Delivery>) -> io::Result<()> {
    while let Ok(d) = rx.try_recv() {
        let frame = json!({"v": 1, "event": "display", "payload": d}).to_string();
        ws.send(Message::Text(frame))
            .map_err(|e| io::Error::other(e.to_string()))?;
    }
    Ok(())
}

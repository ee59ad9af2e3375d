use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hic_core::daemon::{load_config, Daemon, DaemonError, FeedConfig, ServeOptions, DEFAULT_PORT};
use hic_core::event_heap::PostRecord;
use hic_core::runtime::RuntimeConfig;
use hic_core::scenario::run_script;
use hic_core::service_bus::wire::ADMIN_SERVICE;
use hic_core::service_bus::{BusClient, CallStatus, Params, TraceEntry};
use serde_json::{json, Value};

const EXIT_CONFIG: u8 = 2;
const EXIT_NETWORK: u8 = 3;

#[derive(Parser)]
#[command(name = "hicd", version, about = "Interaction middleware daemon")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot the middleware and serve the bus, /ws and /ui.
    Serve {
        /// JSON configuration; the bundled airport fixtures when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Seed for the simulated flight feed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a JSON-lines scenario; exit 0 iff every expectation holds.
    RunScenario {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the notification trace as JSON lines instead of step summaries.
        #[arg(long)]
        json: bool,
    },
    /// Print the bus call trace and the heap log of a running daemon.
    Trace {
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 500)]
        interval_ms: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    match cli.command {
        Command::Serve {
            config,
            port,
            host,
            seed,
        } => serve(config, port, host, seed),
        Command::RunScenario {
            file,
            config,
            seed,
            json,
        } => scenario(file, config, seed, json),
        Command::Trace {
            addr,
            port,
            follow,
            interval_ms,
        } => {
            let addr = addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], port)));
            match trace(addr, follow, Duration::from_millis(interval_ms)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("hicd: {e:#}");
                    ExitCode::from(EXIT_NETWORK)
                }
            }
        }
    }
}

fn runtime_config(path: Option<&PathBuf>) -> Result<(RuntimeConfig, ServeOptions), ExitCode> {
    match path {
        None => Ok((RuntimeConfig::builtin(), ServeOptions::default())),
        Some(p) => load_config(p).map_err(|e| {
            eprintln!("hicd: {e}");
            ExitCode::from(EXIT_CONFIG)
        }),
    }
}

fn serve(config: Option<PathBuf>, port: Option<u16>, host: String, seed: Option<u64>) -> ExitCode {
    let (rt, mut options) = match runtime_config(config.as_ref()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    options.host = host;
    if let Some(p) = port {
        options.port = p;
    }
    if let Some(s) = seed {
        options.feed = Some(match options.feed {
            Some(f) => FeedConfig { seed: s, ..f },
            None => FeedConfig {
                interval_secs: 10,
                seed: s,
            },
        });
    }
    match Daemon::start(rt, options) {
        Ok(d) => {
            println!("hicd listening on {}", d.addr());
            d.wait();
            ExitCode::SUCCESS
        }
        Err(e @ DaemonError::Bind { .. }) => {
            eprintln!("hicd: {e}");
            ExitCode::from(EXIT_NETWORK)
        }
        Err(e) => {
            eprintln!("hicd: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn scenario(file: PathBuf, config: Option<PathBuf>, seed: u64, json: bool) -> ExitCode {
    let (rt, _) = match runtime_config(config.as_ref()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let text = match std::fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("hicd: reading {}: {e}", file.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_script(&text, rt, seed) {
        Ok(report) => {
            if json {
                for n in &report.notifications {
                    println!("{}", serde_json::to_string(n).unwrap_or_default());
                }
            } else {
                for s in &report.steps {
                    println!("ok {:>4}  {}", s.line, s.summary);
                }
                println!("{} steps passed", report.steps.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hicd: {}: {e}", file.display());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn admin(client: &BusClient, method: &str, params: Value) -> anyhow::Result<Params> {
    let Value::Object(params) = params else { unreachable!() };
    client
        .invoke(ADMIN_SERVICE, method, params)
        .with_context(|| format!("{ADMIN_SERVICE}.{method}"))
}

fn field<T: serde::de::DeserializeOwned>(p: &Params, id: &str) -> anyhow::Result<T> {
    serde_json::from_value(p.get(id).cloned().unwrap_or(Value::Null)).with_context(|| format!("reading {id}"))
}

fn status(s: &CallStatus) -> String {
    match s {
        CallStatus::Pending => "pending".into(),
        CallStatus::Ok => "ok".into(),
        CallStatus::Fault(code) => format!("fault:{code}"),
    }
}

fn trace(addr: SocketAddr, follow: bool, interval: Duration) -> anyhow::Result<()> {
    let client = BusClient::connect(addr)
        .with_context(|| format!("connecting to {addr}"))?
        .with_caller("hicd-trace");
    let services: Vec<String> = field(&admin(&client, "ListServices", json!({}))?, "services")?;
    println!("# hicd trace {addr}");
    println!("# services: {}", services.join(" "));
    let (mut last_call, mut last_post) = (0u64, 0u64);
    loop {
        // Settled entries only, so a follow never prints a call twice.
        let out = admin(&client, "Trace", json!({ "after": last_call }))?;
        let entries: Vec<TraceEntry> = field(&out, "entries")?;
        for e in entries.iter().take_while(|e| e.status != CallStatus::Pending) {
            println!(
                "call {:>6}  {} -> {}.{}  {}",
                e.seq,
                e.caller,
                e.service,
                e.method,
                status(&e.status)
            );
            last_call = e.seq;
        }
        let records: Vec<PostRecord> = field(&admin(&client, "HeapLog", json!({ "after": last_post }))?, "records")?;
        for r in &records {
            let targets: Vec<&str> = r.targets.iter().map(String::as_str).collect();
            let to = if targets.is_empty() { "*".to_owned() } else { targets.join(",") };
            println!("heap {:>6}  {} {} -> {}  t={}", r.seq, r.event_type, r.source, to, r.posted_at);
            last_post = r.seq;
        }
        if !follow {
            return Ok(());
        }
        thread::sleep(interval);
    }
}

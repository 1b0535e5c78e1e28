// SPDX-License-Identifier: Apache-2.0

//! Simulated devices.
//!
//! A [`SimDevice`] holds a running configuration and interprets commands in
//! its dialect exactly as the grammar table says. Devices live in a
//! [`SimFleet`] and are reachable either in-process (endpoint
//! `sim.local:<n>`) or over a real TCP/HTTP listener.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::config::ConfigDocument;
use crate::dialect::{Dialect, DialectRegistry, DialectStyle, Effect, SessionContext};
use crate::transport::{Channel, ChannelError, Reply};

pub const IN_PROCESS_HOST: &str = "sim.local";
const FIRST_IN_PROCESS_PORT: u32 = 10_000;
const LAST_PORT: u32 = 65_535;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown dialect {0:?}")]
    UnknownDialect(String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("no simulator ports left")]
    PortExhausted,
    #[error("bind failed: {0}")]
    Bind(String),
}

/// Fault injection knobs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Faults {
    /// Reject the n-th configuration command (0-based, counted from when the
    /// faults were set). Probe and show commands are not counted.
    pub nack_at: Option<usize>,
    /// Close the connection instead of answering.
    pub drop_connection: bool,
    /// Delay before every reply, in milliseconds.
    pub latency_ms: u64,
    /// Used by the instance provider: creating an endpoint fails.
    pub provision_fail: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Probe,
    Show,
    Config,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub command: String,
    pub kind: CommandKind,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSnapshot {
    pub running: ConfigDocument,
    pub command_log: Vec<LogEntry>,
}

impl SimSnapshot {
    pub fn config_commands(&self) -> usize {
        self.command_log
            .iter()
            .filter(|e| e.kind == CommandKind::Config)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    InProcess,
    /// Listen on 127.0.0.1; port 0 picks a free one.
    Tcp { port: u16 },
}

#[derive(Debug, Clone)]
pub struct SpawnOptions {
    pub dialect: String,
    pub initial: ConfigDocument,
    pub faults: Faults,
    /// Service ports the simulated host reports as listening.
    pub ports: Vec<u16>,
    pub binding: Binding,
}

impl SpawnOptions {
    pub fn new(dialect: impl Into<String>) -> Self {
        Self {
            dialect: dialect.into(),
            initial: ConfigDocument::new(),
            faults: Faults::default(),
            ports: Vec::new(),
            binding: Binding::InProcess,
        }
    }

    pub fn initial(mut self, doc: ConfigDocument) -> Self {
        self.initial = doc;
        self
    }

    pub fn faults(mut self, faults: Faults) -> Self {
        self.faults = faults;
        self
    }

    pub fn ports(mut self, ports: Vec<u16>) -> Self {
        self.ports = ports;
        self
    }

    pub fn binding(mut self, binding: Binding) -> Self {
        self.binding = binding;
        self
    }
}

struct SimState {
    running: ConfigDocument,
    log: Vec<LogEntry>,
    faults: Faults,
    config_commands_since_faults: usize,
    ports: Vec<u16>,
    alive: bool,
}

pub struct SimDevice {
    endpoint: String,
    dialect: Arc<Dialect>,
    binding: Binding,
    state: Mutex<SimState>,
}

impl std::fmt::Debug for SimDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimDevice")
            .field("endpoint", &self.endpoint)
            .field("dialect", &self.dialect.id())
            .finish()
    }
}

impl SimDevice {
    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn dialect(&self) -> &Arc<Dialect> {
        &self.dialect
    }

    pub fn faults(&self) -> Faults {
        self.state.lock().faults.clone()
    }

    fn latency(&self) -> Duration {
        Duration::from_millis(self.state.lock().faults.latency_ms)
    }

    /// Whether the device answers at all (alive and not dropping).
    fn answers(&self) -> bool {
        let st = self.state.lock();
        st.alive && !st.faults.drop_connection
    }

    pub fn listening(&self, port: u16) -> bool {
        let st = self.state.lock();
        st.alive && st.ports.contains(&port)
    }

    /// Service ports currently accepting connections.
    pub fn listening_ports(&self) -> Vec<u16> {
        let st = self.state.lock();
        if st.alive {
            st.ports.clone()
        } else {
            Vec::new()
        }
    }

    /// Interpret one command; commands are logged in arrival order.
    pub fn handle(&self, ctx: &mut SessionContext, command: &str) -> Reply {
        let command = command.trim();
        let mut st = self.state.lock();
        let (kind, reply) = if command == self.dialect.probe_command() {
            (CommandKind::Probe, Reply::Ok)
        } else if command == self.dialect.show_command() {
            let reply = match self.dialect.render_running(&st.running) {
                Ok(text) => Reply::Output(text),
                Err(e) => Reply::Err(e.to_string()),
            };
            (CommandKind::Show, reply)
        } else {
            let index = st.config_commands_since_faults;
            st.config_commands_since_faults += 1;
            let reply = if st.faults.nack_at == Some(index) {
                Reply::Err("injected nack".into())
            } else {
                match self.dialect.feed(ctx, command) {
                    Ok(Effect::Enter | Effect::Exit) => Reply::Ok,
                    Ok(Effect::Op(op)) => match st.running.apply_op(&op) {
                        Ok(()) => Reply::Ok,
                        Err(e) => Reply::Err(e.to_string()),
                    },
                    Err(reason) => Reply::Err(reason),
                }
            };
            (CommandKind::Config, reply)
        };
        let reply_text = match &reply {
            Reply::Ok => "ok".to_string(),
            Reply::Err(r) => format!("err {r}"),
            Reply::Output(_) => ".".to_string(),
        };
        st.log.push(LogEntry {
            command: command.to_string(),
            kind,
            reply: reply_text,
        });
        reply
    }

    pub fn snapshot(&self) -> SimSnapshot {
        let st = self.state.lock();
        SimSnapshot {
            running: st.running.clone(),
            command_log: st.log.clone(),
        }
    }
}

/// In-process channel straight into a [`SimDevice`].
pub struct InProcChannel {
    device: Arc<SimDevice>,
    ctx: SessionContext,
}

#[async_trait]
impl Channel for InProcChannel {
    async fn send(&mut self, command: &str) -> Result<Reply, ChannelError> {
        if !self.device.answers() {
            return Err(ChannelError::Closed);
        }
        let latency = self.device.latency();
        if !latency.is_zero() {
            tokio::time::sleep(latency).await;
        }
        Ok(self.device.handle(&mut self.ctx, command))
    }
}

struct Entry {
    device: Arc<SimDevice>,
    server: Option<JoinHandle<()>>,
}

/// Registry of running simulators.
pub struct SimFleet {
    dialects: DialectRegistry,
    devices: Mutex<BTreeMap<String, Entry>>,
    next_port: AtomicU32,
    last_port: u32,
}

impl std::fmt::Debug for SimFleet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimFleet")
            .field("devices", &self.devices.lock().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl SimFleet {
    pub fn new(dialects: DialectRegistry) -> Self {
        Self {
            dialects,
            devices: Mutex::new(BTreeMap::new()),
            next_port: AtomicU32::new(FIRST_IN_PROCESS_PORT),
            last_port: LAST_PORT,
        }
    }

    #[cfg(test)]
    fn with_port_range(dialects: DialectRegistry, first: u32, last: u32) -> Self {
        let mut fleet = Self::new(dialects);
        fleet.next_port = AtomicU32::new(first);
        fleet.last_port = last;
        fleet
    }

    pub fn is_in_process_endpoint(endpoint: &str) -> bool {
        endpoint
            .rsplit_once(':')
            .is_some_and(|(host, _)| host == IN_PROCESS_HOST)
    }

    pub async fn spawn(&self, opts: SpawnOptions) -> Result<String, SimError> {
        let dialect = self
            .dialects
            .get(&opts.dialect)
            .map_err(|_| SimError::UnknownDialect(opts.dialect.clone()))?
            .clone();
        let state = SimState {
            running: opts.initial,
            log: Vec::new(),
            faults: opts.faults,
            config_commands_since_faults: 0,
            ports: opts.ports,
            alive: true,
        };
        let (endpoint, listener) = match opts.binding {
            Binding::InProcess => {
                let port = self.next_port.fetch_add(1, Ordering::SeqCst);
                if port > self.last_port {
                    return Err(SimError::PortExhausted);
                }
                (format!("{IN_PROCESS_HOST}:{port}"), None)
            }
            Binding::Tcp { port } => {
                let listener = TcpListener::bind(("127.0.0.1", port)).await.map_err(|e| {
                    if e.kind() == std::io::ErrorKind::AddrNotAvailable {
                        SimError::PortExhausted
                    } else {
                        SimError::Bind(e.to_string())
                    }
                })?;
                let addr = listener.local_addr().map_err(|e| SimError::Bind(e.to_string()))?;
                (addr.to_string(), Some(listener))
            }
        };
        let device = Arc::new(SimDevice {
            endpoint: endpoint.clone(),
            dialect: dialect.clone(),
            binding: opts.binding,
            state: Mutex::new(state),
        });
        let server = listener.map(|l| match dialect.style() {
            DialectStyle::Cli => tokio::spawn(serve_cli(l, device.clone())),
            DialectStyle::Http => tokio::spawn(serve_http(l, device.clone())),
        });
        self.devices.lock().insert(endpoint.clone(), Entry { device, server });
        Ok(endpoint)
    }

    pub fn get(&self, endpoint: &str) -> Option<Arc<SimDevice>> {
        self.devices.lock().get(endpoint).map(|e| e.device.clone())
    }

    fn device(&self, endpoint: &str) -> Result<Arc<SimDevice>, SimError> {
        self.get(endpoint)
            .ok_or_else(|| SimError::UnknownEndpoint(endpoint.to_string()))
    }

    pub fn in_process_channel(&self, endpoint: &str) -> Option<InProcChannel> {
        let device = self.get(endpoint)?;
        (device.binding == Binding::InProcess).then(|| InProcChannel {
            device,
            ctx: SessionContext::default(),
        })
    }

    pub fn inspect(&self, endpoint: &str) -> Result<SimSnapshot, SimError> {
        Ok(self.device(endpoint)?.snapshot())
    }

    pub fn set_faults(&self, endpoint: &str, faults: Faults) -> Result<(), SimError> {
        let device = self.device(endpoint)?;
        let mut st = device.state.lock();
        st.faults = faults;
        st.config_commands_since_faults = 0;
        Ok(())
    }

    /// Out-of-band change to the running configuration (drift).
    pub fn mutate<F>(&self, endpoint: &str, f: F) -> Result<(), SimError>
    where
        F: FnOnce(&mut ConfigDocument),
    {
        let device = self.device(endpoint)?;
        f(&mut device.state.lock().running);
        Ok(())
    }

    /// Simulate a crash: the endpoint stays registered but stops answering.
    pub fn kill(&self, endpoint: &str) -> Result<(), SimError> {
        self.device(endpoint)?.state.lock().alive = false;
        Ok(())
    }

    pub fn despawn(&self, endpoint: &str) -> Result<(), SimError> {
        let entry = self
            .devices
            .lock()
            .remove(endpoint)
            .ok_or_else(|| SimError::UnknownEndpoint(endpoint.to_string()))?;
        if let Some(server) = entry.server {
            server.abort();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Drop for SimFleet {
    fn drop(&mut self) {
        for entry in self.devices.get_mut().values() {
            if let Some(server) = &entry.server {
                server.abort();
            }
        }
    }
}

async fn serve_cli(listener: TcpListener, device: Arc<SimDevice>) {
    loop {
        let Ok((stream, _)) = listener.accept().await else {
            continue;
        };
        tokio::spawn(cli_connection(stream, device.clone()));
    }
}

async fn cli_connection(stream: TcpStream, device: Arc<SimDevice>) {
    let _ = stream.set_nodelay(true);
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    let mut ctx = SessionContext::default();
    while let Ok(Some(line)) = lines.next_line().await {
        if !device.answers() {
            return;
        }
        let latency = device.latency();
        if !latency.is_zero() {
            tokio::time::sleep(latency).await;
        }
        let out = match device.handle(&mut ctx, &line) {
            Reply::Ok => "ok\n".to_string(),
            Reply::Err(reason) => format!("err {reason}\n"),
            Reply::Output(text) => format!("{text}.\n"),
        };
        if w.write_all(out.as_bytes()).await.is_err() {
            return;
        }
    }
}

async fn serve_http(listener: TcpListener, device: Arc<SimDevice>) {
    use axum::extract::State;
    use axum::http::{Method, StatusCode, Uri};

    async fn handler(
        State(device): State<Arc<SimDevice>>,
        method: Method,
        uri: Uri,
        body: String,
    ) -> (StatusCode, String) {
        if !device.answers() {
            return (StatusCode::SERVICE_UNAVAILABLE, "connection dropped".into());
        }
        let latency = device.latency();
        if !latency.is_zero() {
            tokio::time::sleep(latency).await;
        }
        let line = format!("{method} {} {body}", uri.path());
        match device.handle(&mut SessionContext::default(), line.trim()) {
            Reply::Ok => (StatusCode::OK, "ok".into()),
            Reply::Output(text) => (StatusCode::OK, text),
            Reply::Err(reason) if reason.starts_with("unrecognized") => (StatusCode::NOT_FOUND, reason),
            Reply::Err(reason) => (StatusCode::CONFLICT, reason),
        }
    }

    let app = axum::Router::new().fallback(handler).with_state(device);
    let _ = axum::serve(listener, app).await;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigPath;
    use crate::transport::{Connector, NetConnector};

    fn fleet() -> Arc<SimFleet> {
        Arc::new(SimFleet::new(DialectRegistry::builtin()))
    }

    fn p(s: &str) -> ConfigPath {
        s.parse().unwrap()
    }

    #[tokio::test]
    async fn spawn_probe_show_empty() {
        let fleet = fleet();
        let ep = fleet.spawn(SpawnOptions::new("ciscoish")).await.unwrap();
        let conn = NetConnector::new(Some(fleet.clone()));
        let d = fleet.get(&ep).unwrap().dialect().clone();
        let mut ch = conn.connect(&ep, &d).await.unwrap();
        assert_eq!(ch.send("show version").await.unwrap(), Reply::Ok);
        assert_eq!(ch.send("show running-config").await.unwrap(), Reply::Output(String::new()));
    }

    #[tokio::test]
    async fn unknown_dialect_and_endpoint() {
        let fleet = fleet();
        assert_eq!(
            fleet.spawn(SpawnOptions::new("nope")).await,
            Err(SimError::UnknownDialect("nope".into()))
        );
        assert_eq!(
            fleet.inspect("sim.local:1"),
            Err(SimError::UnknownEndpoint("sim.local:1".into()))
        );
    }

    #[tokio::test]
    async fn port_exhaustion() {
        let fleet = SimFleet::with_port_range(DialectRegistry::builtin(), 65_534, 65_535);
        fleet.spawn(SpawnOptions::new("junosish")).await.unwrap();
        fleet.spawn(SpawnOptions::new("junosish")).await.unwrap();
        assert_eq!(fleet.spawn(SpawnOptions::new("junosish")).await, Err(SimError::PortExhausted));
    }

    #[tokio::test]
    async fn context_commands_mutate_running() {
        let fleet = fleet();
        let ep = fleet.spawn(SpawnOptions::new("ciscoish")).await.unwrap();
        let mut ch = fleet.in_process_channel(&ep).unwrap();
        for cmd in ["interface eth0", "mtu 1500", "exit"] {
            assert_eq!(ch.send(cmd).await.unwrap(), Reply::Ok);
        }
        let snap = fleet.inspect(&ep).unwrap();
        assert_eq!(snap.running.get(&p("interfaces.eth0.mtu")), Some(&1500.into()));
        assert_eq!(snap.config_commands(), 3);
        // Outside the context, "mtu" alone means nothing.
        assert!(matches!(ch.send("mtu 9000").await.unwrap(), Reply::Err(_)));
    }

    #[tokio::test]
    async fn nack_leaves_running_unchanged() {
        let fleet = fleet();
        let ep = fleet.spawn(SpawnOptions::new("junosish")).await.unwrap();
        fleet
            .set_faults(&ep, Faults { nack_at: Some(0), ..Default::default() })
            .unwrap();
        let mut ch = fleet.in_process_channel(&ep).unwrap();
        let r = ch.send("set system hostname \"r9\"").await.unwrap();
        assert_eq!(r, Reply::Err("injected nack".into()));
        assert!(fleet.inspect(&ep).unwrap().running.is_empty());
        assert_eq!(ch.send("set system hostname \"r9\"").await.unwrap(), Reply::Ok);
    }

    #[tokio::test]
    async fn latency_delays_each_ack() {
        let fleet = fleet();
        let faults = Faults { latency_ms: 100, ..Default::default() };
        let ep = fleet.spawn(SpawnOptions::new("ovsish").faults(faults)).await.unwrap();
        let mut ch = fleet.in_process_channel(&ep).unwrap();
        let start = std::time::Instant::now();
        ch.send("ovs-vsctl show").await.unwrap();
        ch.send("ovs-vsctl set bridge br0 stp true").await.unwrap();
        assert!(start.elapsed() >= Duration::from_millis(200));
    }

    #[tokio::test]
    async fn dropped_and_killed_devices_do_not_answer() {
        let fleet = fleet();
        let faults = Faults { drop_connection: true, ..Default::default() };
        let ep = fleet.spawn(SpawnOptions::new("ciscoish").faults(faults)).await.unwrap();
        let mut ch = fleet.in_process_channel(&ep).unwrap();
        assert_eq!(ch.send("show version").await, Err(ChannelError::Closed));
        let ep2 = fleet.spawn(SpawnOptions::new("ciscoish").ports(vec![22])).await.unwrap();
        assert!(fleet.get(&ep2).unwrap().listening(22));
        fleet.kill(&ep2).unwrap();
        assert!(!fleet.get(&ep2).unwrap().listening(22));
    }

    #[tokio::test]
    async fn tcp_cli_wire() {
        let fleet = fleet();
        let ep = fleet
            .spawn(SpawnOptions::new("ciscoish").binding(Binding::Tcp { port: 0 }))
            .await
            .unwrap();
        assert!(!SimFleet::is_in_process_endpoint(&ep));
        // Raw wire check, byte for byte.
        let stream = TcpStream::connect(&ep).await.unwrap();
        let (r, mut w) = stream.into_split();
        let mut lines = BufReader::new(r).lines();
        w.write_all(b"interface eth0\nmtu 1500\nexit\nbogus\nshow running-config\n").await.unwrap();
        let mut got = Vec::new();
        for _ in 0..8 {
            got.push(lines.next_line().await.unwrap().unwrap());
        }
        assert_eq!(
            got,
            ["ok", "ok", "ok", "err unrecognized command: bogus", "interface eth0", " mtu 1500", "exit", "."]
        );
    }

    #[tokio::test]
    async fn tcp_connector_round_trip() {
        let fleet = fleet();
        let ep = fleet
            .spawn(SpawnOptions::new("junosish").binding(Binding::Tcp { port: 0 }))
            .await
            .unwrap();
        let conn = NetConnector::new(Some(fleet.clone()));
        let d = fleet.get(&ep).unwrap().dialect().clone();
        let mut ch = conn.connect(&ep, &d).await.unwrap();
        assert_eq!(ch.send("set system hostname \"r1\"").await.unwrap(), Reply::Ok);
        let out = ch.send(d.show_command()).await.unwrap();
        assert_eq!(out, Reply::Output("set system hostname \"r1\"\n".into()));
    }

    #[tokio::test]
    async fn restish_http_put_mutates_running() {
        let fleet = fleet();
        let ep = fleet
            .spawn(SpawnOptions::new("restish").binding(Binding::Tcp { port: 0 }))
            .await
            .unwrap();
        let client = reqwest::Client::new();
        let resp = client
            .put(format!("http://{ep}/config/interfaces.eth0.mtu"))
            .body("1500")
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let running = fleet.inspect(&ep).unwrap().running;
        assert_eq!(running.get(&p("interfaces.eth0.mtu")), Some(&1500.into()));
        let body = client
            .get(format!("http://{ep}/config"))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        assert_eq!(body, running.to_canonical_string());
        let resp = client
            .delete(format!("http://{ep}/config/interfaces.eth0.nope"))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 409);
    }

    #[tokio::test]
    async fn unknown_in_process_endpoint_is_refused() {
        let fleet = fleet();
        let conn = NetConnector::new(Some(fleet.clone()));
        let d = DialectRegistry::builtin().get("ciscoish").unwrap().clone();
        assert!(matches!(conn.connect("sim.local:1", &d).await, Err(ChannelError::Refused(_))));
        // Nothing listens on port 1 of localhost either.
        assert!(conn.connect("127.0.0.1:1", &d).await.is_err());
    }
}

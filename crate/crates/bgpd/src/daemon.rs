// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::{timeout, Instant};

use crate::route::{Origin, Prefix};
use crate::speaker::{PeerState, RibChange, RibSnapshot, Speaker, Update};
use crate::wire::Message;
use crate::BgpError;

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    /// Proposed hold time. The session uses the smaller of both OPENs;
    /// zero disables keepalives and hold expiry.
    pub hold_time: Duration,
    pub open_timeout: Duration,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        Self {
            hold_time: Duration::from_secs(90),
            open_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum BgpEvent {
    SessionUp { speaker: String, peer: String, remote_asn: u32 },
    SessionDown { speaker: String, peer: String, reason: String },
    OpenFailed { speaker: String, endpoint: String, error: String },
    RouteRejected { speaker: String, peer: String, prefix: Prefix, reason: String },
    MalformedUpdate { speaker: String, peer: String, reason: String },
    RibChanged { speaker: String, prefixes: Vec<Prefix> },
}

impl BgpEvent {
    pub fn is_error(&self) -> bool {
        matches!(self, Self::OpenFailed { .. } | Self::MalformedUpdate { .. })
    }

    pub fn is_warning(&self) -> bool {
        matches!(self, Self::SessionDown { .. } | Self::RouteRejected { .. })
    }
}

pub type EventSink = Arc<dyn Fn(BgpEvent) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeerStatus {
    pub peer: String,
    pub remote_asn: u32,
    pub state: PeerState,
    pub endpoint: Option<String>,
    /// Negotiated hold time in seconds, when a session is up.
    pub hold_time: Option<f64>,
}

struct Session {
    gen: u64,
    tx: mpsc::UnboundedSender<Message>,
    endpoint: String,
    hold_time: Duration,
    task: Option<JoinHandle<()>>,
}

struct Inner {
    config: DaemonConfig,
    speaker: Mutex<Speaker>,
    sessions: Mutex<HashMap<String, Session>>,
    sink: Option<EventSink>,
    gen: AtomicU64,
    listeners: Mutex<Vec<JoinHandle<()>>>,
}

/// One [`Speaker`] served over TCP.
#[derive(Clone)]
pub struct Daemon {
    inner: Arc<Inner>,
}

impl Daemon {
    pub fn new(speaker: Speaker, config: DaemonConfig, sink: Option<EventSink>) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                speaker: Mutex::new(speaker),
                sessions: Mutex::new(HashMap::new()),
                sink,
                gen: AtomicU64::new(0),
                listeners: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn id(&self) -> String {
        self.inner.speaker.lock().id().to_string()
    }

    pub fn asn(&self) -> u32 {
        self.inner.speaker.lock().asn()
    }

    pub fn next_hop(&self) -> Ipv4Addr {
        self.inner.speaker.lock().next_hop()
    }

    /// Accept sessions on `addr`. Returns the bound address.
    pub async fn listen(&self, addr: SocketAddr) -> Result<SocketAddr, BgpError> {
        let listener = TcpListener::bind(addr).await.map_err(io)?;
        let local = listener.local_addr().map_err(io)?;
        let this = self.clone();
        let task = tokio::spawn(async move {
            while let Ok((stream, remote)) = listener.accept().await {
                let this = this.clone();
                tokio::spawn(async move {
                    if let Err(e) = this.handshake(stream, None, remote.to_string()).await {
                        tracing::debug!(%remote, error = %e, "inbound session refused");
                    }
                });
            }
        });
        self.inner.listeners.lock().push(task);
        Ok(local)
    }

    /// Connect to `endpoint`, exchange OPENs and bring the session up.
    pub async fn open_session(&self, endpoint: &str, remote_asn: u32) -> Result<PeerStatus, BgpError> {
        let cfg = &self.inner.config;
        let result = match timeout(cfg.open_timeout, TcpStream::connect(endpoint)).await {
            // A refused or unroutable connect never produces an OPEN either.
            Ok(Ok(stream)) => self.handshake(stream, Some(remote_asn), endpoint.to_string()).await,
            Ok(Err(_)) | Err(_) => Err(BgpError::OpenTimeout(endpoint.to_string())),
        };
        if let Err(e) = &result {
            self.emit(BgpEvent::OpenFailed {
                speaker: self.id(),
                endpoint: endpoint.to_string(),
                error: e.to_string(),
            });
        }
        result
    }

    async fn handshake(
        &self,
        stream: TcpStream,
        expected: Option<u32>,
        endpoint: String,
    ) -> Result<PeerStatus, BgpError> {
        let cfg = self.inner.config.clone();
        let open = {
            let s = self.inner.speaker.lock();
            Message::Open {
                asn: s.asn(),
                id: s.id().to_string(),
                hold_time: cfg.hold_time.as_secs_f64().ceil() as u64,
                next_hop: s.next_hop(),
            }
        };
        let (r, mut w) = stream.into_split();
        let mut lines = BufReader::new(r).lines();
        w.write_all(open.encode().as_bytes()).await.map_err(io)?;
        let first = match timeout(cfg.open_timeout, lines.next_line()).await {
            Err(_) => return Err(BgpError::OpenTimeout(endpoint)),
            Ok(Err(e)) => return Err(io(e)),
            Ok(Ok(None)) => return Err(BgpError::OpenTimeout(endpoint)),
            Ok(Ok(Some(line))) => line,
        };
        let Ok(Message::Open { asn, id, hold_time, .. }) = Message::decode(&first) else {
            let _ = w.write_all(notification("expected OPEN").as_bytes()).await;
            return Err(BgpError::MalformedUpdate(format!("expected OPEN, got {first:?}")));
        };
        if let Some(expected) = expected.filter(|e| *e != asn) {
            let _ = w.write_all(notification("bad peer AS").as_bytes()).await;
            // Record the neighbor as configured so it shows up idle.
            self.inner.speaker.lock().add_peer(&id, expected);
            return Err(BgpError::AsnMismatch { expected, announced: asn });
        }
        if self.inner.sessions.lock().contains_key(&id) {
            let _ = w.write_all(notification("duplicate session").as_bytes()).await;
            return Err(BgpError::Io(format!("session with {id} already up")));
        }

        let ours = cfg.hold_time;
        let theirs = Duration::from_secs(hold_time);
        let hold = if ours.is_zero() || theirs.is_zero() { Duration::ZERO } else { ours.min(theirs) };
        let gen = self.inner.gen.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.sessions.lock().insert(
            id.clone(),
            Session {
                gen,
                tx,
                endpoint: endpoint.clone(),
                hold_time: hold,
                task: None,
            },
        );
        {
            let mut s = self.inner.speaker.lock();
            s.add_peer(&id, asn);
            s.set_connecting(&id)?;
            s.peer_up(&id)?;
            self.dispatch(&mut s);
        }
        let task = tokio::spawn(self.clone().run_session(id.clone(), gen, lines, w, rx, hold));
        if let Some(sess) = self.inner.sessions.lock().get_mut(&id).filter(|s| s.gen == gen) {
            sess.task = Some(task);
        }
        self.emit(BgpEvent::SessionUp {
            speaker: self.id(),
            peer: id.clone(),
            remote_asn: asn,
        });
        Ok(PeerStatus {
            peer: id,
            remote_asn: asn,
            state: PeerState::Established,
            endpoint: Some(endpoint),
            hold_time: Some(hold.as_secs_f64()),
        })
    }

    async fn run_session(
        self,
        peer: String,
        gen: u64,
        mut lines: Lines<BufReader<OwnedReadHalf>>,
        mut w: OwnedWriteHalf,
        mut rx: mpsc::UnboundedReceiver<Message>,
        hold: Duration,
    ) {
        let far = Duration::from_secs(86_400 * 365);
        let (hold, keep) = if hold.is_zero() { (far, far) } else { (hold, hold / 3) };
        let mut keepalive = tokio::time::interval_at(Instant::now() + keep, keep);
        let mut deadline = Instant::now() + hold;
        let reason = loop {
            tokio::select! {
                out = rx.recv() => match out {
                    Some(msg) => {
                        if let Err(e) = w.write_all(msg.encode().as_bytes()).await {
                            break format!("write failed: {e}");
                        }
                        if let Message::Notification { reason } = msg {
                            break reason;
                        }
                    }
                    None => break "closed".to_string(),
                },
                _ = keepalive.tick() => {
                    if let Err(e) = w.write_all(Message::Keepalive.encode().as_bytes()).await {
                        break format!("write failed: {e}");
                    }
                }
                _ = tokio::time::sleep_until(deadline) => {
                    let _ = w.write_all(notification("hold timer expired").as_bytes()).await;
                    break "hold timer expired".to_string();
                }
                line = lines.next_line() => match line {
                    Ok(Some(line)) => {
                        deadline = Instant::now() + hold;
                        match self.on_line(&peer, &line) {
                            Ok(()) => {}
                            Err(reason) => {
                                let _ = w.write_all(notification(&reason).as_bytes()).await;
                                break reason;
                            }
                        }
                    }
                    Ok(None) => break "connection closed".to_string(),
                    Err(e) => break format!("read failed: {e}"),
                },
            }
        };
        let _ = w.shutdown().await;
        let mine = {
            let mut sessions = self.inner.sessions.lock();
            match sessions.get(&peer) {
                Some(s) if s.gen == gen => {
                    sessions.remove(&peer);
                    true
                }
                _ => false,
            }
        };
        if mine {
            let change = {
                let mut s = self.inner.speaker.lock();
                let change = s.peer_down(&peer);
                self.dispatch(&mut s);
                change
            };
            self.report(&peer, change);
            self.emit(BgpEvent::SessionDown {
                speaker: self.id(),
                peer,
                reason,
            });
        }
    }

    /// Handle one inbound line. `Err` carries the reason to close with.
    fn on_line(&self, peer: &str, line: &str) -> Result<(), String> {
        let update = match Message::decode(line) {
            Ok(Message::Keepalive) => return Ok(()),
            Ok(Message::Notification { reason }) => return Err(format!("peer closed: {reason}")),
            Ok(Message::Update { announce }) => Update { announce, withdraw: Vec::new() },
            Ok(Message::Withdraw { prefixes }) => Update { announce: Vec::new(), withdraw: prefixes },
            Ok(Message::Open { .. }) => return Err(self.malformed(peer, "unexpected OPEN".into())),
            Err(e) => return Err(self.malformed(peer, format!("undecodable message: {e}"))),
        };
        let result = {
            let mut s = self.inner.speaker.lock();
            let r = s.process_update(peer, update);
            self.dispatch(&mut s);
            r
        };
        match result {
            Ok(change) => {
                self.report(peer, change);
                Ok(())
            }
            Err(BgpError::MalformedUpdate(why)) => Err(self.malformed(peer, why)),
            Err(e) => Err(e.to_string()),
        }
    }

    fn malformed(&self, peer: &str, reason: String) -> String {
        let mut s = self.inner.speaker.lock();
        if s.peer_state(peer) == Some(PeerState::Established) {
            s.peer_down(peer);
            self.dispatch(&mut s);
        }
        drop(s);
        self.emit(BgpEvent::MalformedUpdate {
            speaker: self.id(),
            peer: peer.to_string(),
            reason: reason.clone(),
        });
        format!("malformed update: {reason}")
    }

    /// Hand the speaker's pending UPDATEs to the session writers.
    fn dispatch(&self, s: &mut Speaker) {
        let sessions = self.inner.sessions.lock();
        for (peer, upd) in s.drain_outbox() {
            let Some(sess) = sessions.get(&peer) else { continue };
            if !upd.withdraw.is_empty() {
                let _ = sess.tx.send(Message::Withdraw { prefixes: upd.withdraw });
            }
            if !upd.announce.is_empty() {
                let _ = sess.tx.send(Message::Update { announce: upd.announce });
            }
        }
    }

    fn report(&self, peer: &str, change: RibChange) {
        let speaker = self.id();
        for (prefix, reason) in change.rejected {
            self.emit(BgpEvent::RouteRejected {
                speaker: speaker.clone(),
                peer: peer.to_string(),
                prefix,
                reason,
            });
        }
        if !change.changed.is_empty() {
            self.emit(BgpEvent::RibChanged {
                speaker,
                prefixes: change.changed,
            });
        }
    }

    fn emit(&self, ev: BgpEvent) {
        if let Some(sink) = &self.inner.sink {
            sink(ev);
        }
    }

    /// Originate `prefix` and advertise it to every established peer.
    pub fn announce(&self, prefix: Prefix, origin: Origin) {
        let change = {
            let mut s = self.inner.speaker.lock();
            let c = s.announce(prefix, origin);
            self.dispatch(&mut s);
            c
        };
        self.report("local", change);
    }

    pub fn withdraw(&self, prefix: Prefix) {
        let change = {
            let mut s = self.inner.speaker.lock();
            let c = s.withdraw(prefix);
            self.dispatch(&mut s);
            c
        };
        self.report("local", change);
    }

    /// Close the session with `peer` by sending a NOTIFICATION.
    pub fn close_session(&self, peer: &str, reason: &str) -> Result<(), BgpError> {
        let sessions = self.inner.sessions.lock();
        let sess = sessions.get(peer).ok_or_else(|| BgpError::NotEstablished(peer.into()))?;
        let _ = sess.tx.send(Message::Notification { reason: reason.into() });
        Ok(())
    }

    pub fn rib(&self) -> RibSnapshot {
        self.inner.speaker.lock().snapshot()
    }

    pub fn peers(&self) -> Vec<PeerStatus> {
        let s = self.inner.speaker.lock();
        let sessions = self.inner.sessions.lock();
        s.peers()
            .map(|(peer, remote_asn, state)| {
                let sess = sessions.get(peer).filter(|_| state == PeerState::Established);
                PeerStatus {
                    peer: peer.to_string(),
                    remote_asn,
                    state,
                    endpoint: sess.map(|x| x.endpoint.clone()),
                    hold_time: sess.map(|x| x.hold_time.as_secs_f64()),
                }
            })
            .collect()
    }

    /// Stop listening and drop every session without notifying peers.
    pub fn shutdown(&self) {
        for t in self.inner.listeners.lock().drain(..) {
            t.abort();
        }
        let sessions: Vec<(String, Session)> = self.inner.sessions.lock().drain().collect();
        let mut s = self.inner.speaker.lock();
        for (peer, sess) in sessions {
            if let Some(t) = sess.task {
                t.abort();
            }
            s.peer_down(&peer);
        }
        s.drain_outbox();
    }
}

fn notification(reason: &str) -> String {
    Message::Notification { reason: reason.into() }.encode()
}

fn io(e: std::io::Error) -> BgpError {
    BgpError::Io(e.to_string())
}

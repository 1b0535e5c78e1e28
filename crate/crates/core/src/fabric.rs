// SPDX-License-Identifier: Apache-2.0

//! BGP speakers for inventory devices.
//!
//! Every device with an ASN gets a [`Daemon`] listening on loopback. Each
//! cloud-node speaker (the overlay control node) peers with every other
//! speaker, so routes originated in the overlay reach the underlay routers
//! and vice versa.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use netorch_bgpd::{BgpError, BgpEvent, Daemon, DaemonConfig, EventSink, Origin, PeerState, PeerStatus, Prefix, RibSnapshot, Speaker};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::events::{Category, EventLog, Severity};
use crate::inventory::{Inventory, Platform};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("no BGP speaker {0:?}")]
    UnknownSpeaker(String),
    #[error(transparent)]
    Bgp(#[from] BgpError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeakerInfo {
    pub name: String,
    pub device_id: String,
    pub platform: Platform,
    pub asn: u32,
    pub listen: SocketAddr,
    pub next_hop: Ipv4Addr,
    pub peers: Vec<PeerStatus>,
}

struct Entry {
    device_id: String,
    platform: Platform,
    listen: SocketAddr,
    daemon: Daemon,
}

pub struct Fabric {
    events: Arc<EventLog>,
    config: DaemonConfig,
    speakers: Mutex<BTreeMap<String, Entry>>,
    // Serializes sync so two registrations never race to open one session.
    sync_lock: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for Fabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fabric").field("speakers", &self.speakers.lock().len()).finish()
    }
}

fn event_sink(events: Arc<EventLog>) -> EventSink {
    Arc::new(move |ev: BgpEvent| {
        let severity = if ev.is_error() {
            Severity::Error
        } else if ev.is_warning() {
            Severity::Warn
        } else {
            Severity::Info
        };
        let mut payload = serde_json::to_value(&ev).unwrap_or(Value::Null);
        if let Some(obj) = payload.as_object_mut() {
            let name = obj.remove("event").and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            obj.insert("kind".into(), json!(format!("bgp.{name}")));
        }
        events.emit(Category::Bgp, severity, payload);
    })
}

impl Fabric {
    pub fn new(events: Arc<EventLog>, config: DaemonConfig) -> Self {
        Self {
            events,
            config,
            speakers: Mutex::new(BTreeMap::new()),
            sync_lock: tokio::sync::Mutex::new(()),
        }
    }

    /// Start speakers for new BGP-capable devices and bring up any missing
    /// overlay sessions. Session failures are reported as events; the
    /// return value lists the speakers created by this call.
    pub async fn sync(&self, inventory: &Inventory) -> Result<Vec<String>, FabricError> {
        let _guard = self.sync_lock.lock().await;
        let mut created = Vec::new();
        for d in inventory.list_devices(Default::default()) {
            let Some(asn) = d.asn else { continue };
            if self.speakers.lock().contains_key(&d.name) {
                continue;
            }
            let n = self.speakers.lock().len() as u32 + 1;
            let next_hop = Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 254, 0, 0)) + n);
            let daemon = Daemon::new(
                Speaker::new(d.name.clone(), asn, next_hop),
                self.config.clone(),
                Some(event_sink(self.events.clone())),
            );
            let listen = daemon.listen(SocketAddr::from((Ipv4Addr::LOCALHOST, 0))).await?;
            self.events.info(
                Category::Bgp,
                json!({"kind": "bgp.speaker-started", "speaker": d.name, "asn": asn, "listen": listen.to_string()}),
            );
            self.speakers.lock().insert(
                d.name.clone(),
                Entry {
                    device_id: d.id.clone(),
                    platform: d.platform,
                    listen,
                    daemon,
                },
            );
            created.push(d.name);
        }

        let plan: Vec<(Daemon, String, SocketAddr, u32)> = {
            let speakers = self.speakers.lock();
            let mut plan = Vec::new();
            for (name, e) in speakers.iter().filter(|(_, e)| e.platform == Platform::CloudNode) {
                let up: Vec<String> = e
                    .daemon
                    .peers()
                    .into_iter()
                    .filter(|p| p.state == PeerState::Established)
                    .map(|p| p.peer)
                    .collect();
                for (other, o) in speakers.iter() {
                    if other == name || up.contains(other) {
                        continue;
                    }
                    // Two overlay nodes peer once, from the lower name.
                    if o.platform == Platform::CloudNode && other < name {
                        continue;
                    }
                    plan.push((e.daemon.clone(), other.clone(), o.listen, o.daemon.asn()));
                }
            }
            plan
        };
        for (daemon, peer, addr, asn) in plan {
            if let Err(e) = daemon.open_session(&addr.to_string(), asn).await {
                tracing::warn!(speaker = %daemon.id(), %peer, error = %e, "bgp session failed");
            }
        }
        Ok(created)
    }

    fn daemon(&self, key: &str) -> Result<Daemon, FabricError> {
        let speakers = self.speakers.lock();
        speakers
            .get(key)
            .or_else(|| speakers.values().find(|e| e.device_id == key))
            .map(|e| e.daemon.clone())
            .ok_or_else(|| FabricError::UnknownSpeaker(key.to_string()))
    }

    /// Speaker by device name or id.
    pub fn rib(&self, key: &str) -> Result<RibSnapshot, FabricError> {
        Ok(self.daemon(key)?.rib())
    }

    pub fn announce(&self, key: &str, prefix: Prefix, origin: Origin) -> Result<RibSnapshot, FabricError> {
        let d = self.daemon(key)?;
        d.announce(prefix, origin);
        self.events.info(
            Category::Bgp,
            json!({"kind": "bgp.route-originated", "speaker": d.id(), "prefix": prefix, "origin": origin}),
        );
        Ok(d.rib())
    }

    pub fn withdraw(&self, key: &str, prefix: Prefix) -> Result<RibSnapshot, FabricError> {
        let d = self.daemon(key)?;
        d.withdraw(prefix);
        self.events.info(
            Category::Bgp,
            json!({"kind": "bgp.route-withdrawn", "speaker": d.id(), "prefix": prefix}),
        );
        Ok(d.rib())
    }

    pub fn list(&self) -> Vec<SpeakerInfo> {
        self.speakers
            .lock()
            .iter()
            .map(|(name, e)| SpeakerInfo {
                name: name.clone(),
                device_id: e.device_id.clone(),
                platform: e.platform,
                asn: e.daemon.asn(),
                listen: e.listen,
                next_hop: e.daemon.next_hop(),
                peers: e.daemon.peers(),
            })
            .collect()
    }

    pub fn established_sessions(&self) -> usize {
        self.speakers
            .lock()
            .values()
            .map(|e| e.daemon.peers().iter().filter(|p| p.state == PeerState::Established).count())
            .sum()
    }

    pub fn shutdown(&self) {
        for e in self.speakers.lock().values() {
            e.daemon.shutdown();
        }
    }
}

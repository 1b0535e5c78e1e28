// SPDX-License-Identifier: Apache-2.0

//! Device and tenant registry.
//!
//! The registry is persisted as one JSON file
//! (`{"devices":[...],"tenants":[...]}`), rewritten atomically on every
//! mutation. Credentials never appear in it; devices carry an opaque
//! `credential_ref` resolved through a separate [`SecretStore`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dialect::DialectRegistry;
use crate::events::{Category, EventLog, Severity};
use crate::transport::{validate_endpoint, Connector, Reply};

pub const DEFAULT_REACHABILITY_TTL: Duration = Duration::from_secs(300);
pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InventoryError {
    #[error("a device named {0:?} already exists")]
    DuplicateName(String),
    #[error("unknown dialect {0:?}")]
    UnknownDialect(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("traditional routers need an asn")]
    MissingAsn,
    #[error("asn must be between 1 and 4294967295")]
    InvalidAsn,
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("a tenant named {0:?} already exists")]
    DuplicateTenant(String),
    #[error("unknown tenant {0:?}")]
    UnknownTenant(String),
    #[error("tenant quota must be at least 1")]
    InvalidQuota,
    #[error("inventory file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Platform {
    CloudNode,
    SdnSwitch,
    TraditionalRouter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reachability {
    #[default]
    Unknown,
    Reachable,
    Unreachable,
}

/// What a caller supplies to register a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub name: String,
    pub platform: Platform,
    #[serde(alias = "dialect")]
    pub dialect_id: String,
    pub mgmt_endpoint: String,
    #[serde(default)]
    pub credential_ref: Option<String>,
    #[serde(default)]
    pub asn: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub name: String,
    pub platform: Platform,
    pub dialect_id: String,
    pub mgmt_endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default)]
    pub reachability: Reachability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reachability_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asn: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tenant {
    pub name: String,
    pub quota_instances: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceFilter {
    pub platform: Option<Platform>,
    pub reachability: Option<Reachability>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct InventoryFile {
    #[serde(default)]
    devices: Vec<Device>,
    #[serde(default)]
    tenants: Vec<Tenant>,
}

#[derive(Default)]
struct State {
    devices: BTreeMap<String, Device>,
    tenants: BTreeMap<String, Tenant>,
    next_id: u64,
}

/// Concurrent-reader, single-writer device registry.
pub struct Inventory {
    state: RwLock<State>,
    dialects: DialectRegistry,
    events: Arc<EventLog>,
    path: Option<PathBuf>,
    ttl: Duration,
}

impl std::fmt::Debug for Inventory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Inventory").field("path", &self.path).finish()
    }
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl Inventory {
    pub fn in_memory(dialects: DialectRegistry, events: Arc<EventLog>) -> Self {
        Self {
            state: RwLock::new(State::default()),
            dialects,
            events,
            path: None,
            ttl: DEFAULT_REACHABILITY_TTL,
        }
    }

    /// Load from `path`; a missing file is an empty inventory that will be
    /// created on first mutation.
    pub fn open(path: &Path, dialects: DialectRegistry, events: Arc<EventLog>) -> Result<Self, InventoryError> {
        let file: InventoryFile = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| InventoryError::Io(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => InventoryFile::default(),
            Err(e) => return Err(InventoryError::Io(e.to_string())),
        };
        let mut state = State::default();
        for d in file.devices {
            if !dialects.contains(&d.dialect_id) {
                return Err(InventoryError::UnknownDialect(d.dialect_id));
            }
            if let Some(n) = d.id.strip_prefix("dev-").and_then(|n| n.parse::<u64>().ok()) {
                state.next_id = state.next_id.max(n);
            }
            state.devices.insert(d.id.clone(), d);
        }
        for t in file.tenants {
            state.tenants.insert(t.name.clone(), t);
        }
        Ok(Self {
            state: RwLock::new(state),
            dialects,
            events,
            path: Some(path.to_path_buf()),
            ttl: DEFAULT_REACHABILITY_TTL,
        })
    }

    pub fn with_reachability_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn dialects(&self) -> &DialectRegistry {
        &self.dialects
    }

    fn persist(&self, state: &State) -> Result<(), InventoryError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let file = InventoryFile {
            devices: state.devices.values().cloned().collect(),
            tenants: state.tenants.values().cloned().collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("inventory serializes");
        write_atomic(path, &text).map_err(|e| InventoryError::Io(e.to_string()))
    }

    pub fn register_device(&self, desc: DeviceDescriptor) -> Result<Device, InventoryError> {
        if !self.dialects.contains(&desc.dialect_id) {
            return Err(InventoryError::UnknownDialect(desc.dialect_id));
        }
        validate_endpoint(&desc.mgmt_endpoint).map_err(InventoryError::InvalidEndpoint)?;
        match desc.asn {
            Some(0) => return Err(InventoryError::InvalidAsn),
            None if desc.platform == Platform::TraditionalRouter => return Err(InventoryError::MissingAsn),
            _ => {}
        }
        let mut st = self.state.write();
        if st.devices.values().any(|d| d.name == desc.name) {
            return Err(InventoryError::DuplicateName(desc.name));
        }
        st.next_id += 1;
        let device = Device {
            id: format!("dev-{}", st.next_id),
            name: desc.name,
            platform: desc.platform,
            dialect_id: desc.dialect_id,
            mgmt_endpoint: desc.mgmt_endpoint,
            credential_ref: desc.credential_ref,
            reachability: Reachability::Unknown,
            reachability_at: None,
            asn: desc.asn,
        };
        st.devices.insert(device.id.clone(), device.clone());
        self.persist(&st)?;
        drop(st);
        self.events.info(
            Category::Device,
            json!({"kind": "device.registered", "device": device.id, "name": device.name}),
        );
        Ok(device)
    }

    fn decayed(&self, mut d: Device, now: DateTime<Utc>) -> Device {
        let stale = d
            .reachability_at
            .map(|at| (now - at).to_std().unwrap_or_default() > self.ttl)
            .unwrap_or(true);
        if stale {
            d.reachability = Reachability::Unknown;
        }
        d
    }

    pub fn get(&self, id: &str) -> Result<Device, InventoryError> {
        let d = self
            .state
            .read()
            .devices
            .get(id)
            .cloned()
            .ok_or_else(|| InventoryError::UnknownDevice(id.to_string()))?;
        Ok(self.decayed(d, Utc::now()))
    }

    /// Look up by id, falling back to name.
    pub fn resolve(&self, id_or_name: &str) -> Result<Device, InventoryError> {
        if let Ok(d) = self.get(id_or_name) {
            return Ok(d);
        }
        let d = self
            .state
            .read()
            .devices
            .values()
            .find(|d| d.name == id_or_name)
            .cloned()
            .ok_or_else(|| InventoryError::UnknownDevice(id_or_name.to_string()))?;
        Ok(self.decayed(d, Utc::now()))
    }

    /// Devices sorted by name, filtered conjunctively.
    pub fn list_devices(&self, filter: DeviceFilter) -> Vec<Device> {
        let now = Utc::now();
        let mut out: Vec<Device> = self
            .state
            .read()
            .devices
            .values()
            .cloned()
            .map(|d| self.decayed(d, now))
            .filter(|d| filter.platform.is_none_or(|p| d.platform == p))
            .filter(|d| filter.reachability.is_none_or(|r| d.reachability == r))
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    pub fn set_reachability(&self, id: &str, r: Reachability) -> Result<(), InventoryError> {
        let mut st = self.state.write();
        let d = st
            .devices
            .get_mut(id)
            .ok_or_else(|| InventoryError::UnknownDevice(id.to_string()))?;
        d.reachability = r;
        d.reachability_at = Some(Utc::now());
        self.persist(&st)
    }

    /// Send the dialect's no-op probe and record the outcome. A refused or
    /// timed-out probe makes the device unreachable; it is not an error.
    pub async fn probe_device(
        &self,
        id: &str,
        connector: &dyn Connector,
        timeout: Duration,
    ) -> Result<Reachability, InventoryError> {
        let device = self.get(id)?;
        let dialect = self
            .dialects
            .get(&device.dialect_id)
            .map_err(|_| InventoryError::UnknownDialect(device.dialect_id.clone()))?
            .clone();
        let attempt = async {
            let mut ch = connector.connect(&device.mgmt_endpoint, &dialect).await.ok()?;
            match ch.send(dialect.probe_command()).await {
                Ok(Reply::Ok) => Some(()),
                _ => None,
            }
        };
        let r = match tokio::time::timeout(timeout, attempt).await {
            Ok(Some(())) => Reachability::Reachable,
            _ => Reachability::Unreachable,
        };
        self.set_reachability(id, r)?;
        let severity = if r == Reachability::Reachable { Severity::Info } else { Severity::Warn };
        self.events.emit(
            Category::Device,
            severity,
            json!({"kind": "device.probed", "device": id, "reachability": r}),
        );
        Ok(r)
    }

    pub fn add_tenant(&self, tenant: Tenant) -> Result<Tenant, InventoryError> {
        if tenant.quota_instances == 0 {
            return Err(InventoryError::InvalidQuota);
        }
        let mut st = self.state.write();
        if st.tenants.contains_key(&tenant.name) {
            return Err(InventoryError::DuplicateTenant(tenant.name));
        }
        st.tenants.insert(tenant.name.clone(), tenant.clone());
        self.persist(&st)?;
        drop(st);
        self.events.info(
            Category::Device,
            json!({"kind": "tenant.added", "tenant": tenant.name, "quota": tenant.quota_instances}),
        );
        Ok(tenant)
    }

    pub fn tenant(&self, name: &str) -> Result<Tenant, InventoryError> {
        self.state
            .read()
            .tenants
            .get(name)
            .cloned()
            .ok_or_else(|| InventoryError::UnknownTenant(name.to_string()))
    }

    pub fn tenants(&self) -> Vec<Tenant> {
        self.state.read().tenants.values().cloned().collect()
    }
}

/// Credential handles resolved from a separate JSON object file
/// (`{"<ref>": "<secret>"}`).
#[derive(Debug, Clone, Default)]
pub struct SecretStore {
    secrets: BTreeMap<String, String>,
}

impl SecretStore {
    pub fn load(path: &Path) -> Result<Self, InventoryError> {
        let text = std::fs::read_to_string(path).map_err(|e| InventoryError::Io(e.to_string()))?;
        let secrets = serde_json::from_str(&text).map_err(|e| InventoryError::Io(e.to_string()))?;
        Ok(Self { secrets })
    }

    pub fn resolve(&self, credential_ref: &str) -> Option<&str> {
        self.secrets.get(credential_ref).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devsim::{SimFleet, SpawnOptions};
    use crate::transport::NetConnector;

    fn inv() -> Inventory {
        Inventory::in_memory(DialectRegistry::builtin(), Arc::new(EventLog::default()))
    }

    fn router(name: &str, asn: Option<u32>) -> DeviceDescriptor {
        DeviceDescriptor {
            name: name.into(),
            platform: Platform::TraditionalRouter,
            dialect_id: "ciscoish".into(),
            mgmt_endpoint: "10.0.0.1:22".into(),
            credential_ref: Some("lab".into()),
            asn,
        }
    }

    #[test]
    fn register_and_duplicates() {
        let inv = inv();
        let d = inv.register_device(router("r1", Some(65001))).unwrap();
        assert_eq!(d.reachability, Reachability::Unknown);
        assert_eq!(d.asn, Some(65001));
        assert_eq!(
            inv.register_device(router("r1", Some(65002))),
            Err(InventoryError::DuplicateName("r1".into()))
        );
        assert_eq!(inv.register_device(router("r2", None)), Err(InventoryError::MissingAsn));
        assert_eq!(inv.register_device(router("r2", Some(0))), Err(InventoryError::InvalidAsn));
        let mut bad = router("r3", Some(1));
        bad.dialect_id = "ios".into();
        assert_eq!(inv.register_device(bad), Err(InventoryError::UnknownDialect("ios".into())));
        let mut bad = router("r3", Some(1));
        bad.mgmt_endpoint = "nowhere".into();
        assert!(matches!(inv.register_device(bad), Err(InventoryError::InvalidEndpoint(_))));
    }

    #[test]
    fn list_is_sorted_and_filtered() {
        let inv = inv();
        assert!(inv.list_devices(DeviceFilter::default()).is_empty());
        inv.register_device(router("r2", Some(2))).unwrap();
        inv.register_device(DeviceDescriptor {
            name: "s1".into(),
            platform: Platform::SdnSwitch,
            dialect_id: "ovsish".into(),
            mgmt_endpoint: "10.0.0.9:6640".into(),
            credential_ref: None,
            asn: None,
        })
        .unwrap();
        inv.register_device(router("a1", Some(3))).unwrap();
        let names: Vec<String> = inv.list_devices(DeviceFilter::default()).into_iter().map(|d| d.name).collect();
        assert_eq!(names, ["a1", "r2", "s1"]);
        let switches = inv.list_devices(DeviceFilter {
            platform: Some(Platform::SdnSwitch),
            ..Default::default()
        });
        assert_eq!(switches.len(), 1);
        assert_eq!(switches[0].name, "s1");
    }

    #[test]
    fn persists_atomically_without_secrets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inventory.json");
        let events = Arc::new(EventLog::default());
        let inv = Inventory::open(&path, DialectRegistry::builtin(), events.clone()).unwrap();
        inv.register_device(router("r1", Some(65001))).unwrap();
        inv.add_tenant(Tenant { name: "t1".into(), quota_instances: 4 }).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["devices"][0]["name"], "r1");
        assert_eq!(v["devices"][0]["credential_ref"], "lab");
        assert_eq!(v["tenants"][0]["quota_instances"], 4);
        let reopened = Inventory::open(&path, DialectRegistry::builtin(), events).unwrap();
        let r2 = reopened.register_device(router("r2", Some(65002))).unwrap();
        assert_eq!(r2.id, "dev-2");
        assert_eq!(reopened.list_devices(DeviceFilter::default()).len(), 2);
    }

    #[test]
    fn secrets_are_resolved_from_their_own_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("secrets.json");
        std::fs::write(&path, r#"{"lab": "hunter2"}"#).unwrap();
        let store = SecretStore::load(&path).unwrap();
        assert_eq!(store.resolve("lab"), Some("hunter2"));
        assert_eq!(store.resolve("prod"), None);
    }

    #[test]
    fn tenants() {
        let inv = inv();
        assert_eq!(
            inv.add_tenant(Tenant { name: "t".into(), quota_instances: 0 }),
            Err(InventoryError::InvalidQuota)
        );
        inv.add_tenant(Tenant { name: "t".into(), quota_instances: 1 }).unwrap();
        assert!(matches!(
            inv.add_tenant(Tenant { name: "t".into(), quota_instances: 2 }),
            Err(InventoryError::DuplicateTenant(_))
        ));
    }

    #[tokio::test]
    async fn probe_live_dead_and_unknown() {
        let fleet = Arc::new(SimFleet::new(DialectRegistry::builtin()));
        let ep = fleet.spawn(SpawnOptions::new("ciscoish")).await.unwrap();
        let conn = NetConnector::new(Some(fleet.clone()));
        let inv = inv();
        let mut live = router("live", Some(1));
        live.mgmt_endpoint = ep.clone();
        let live = inv.register_device(live).unwrap();
        let mut dead = router("dead", Some(2));
        dead.mgmt_endpoint = "sim.local:9".into();
        let dead = inv.register_device(dead).unwrap();

        let before = fleet.inspect(&ep).unwrap().running;
        let r = inv.probe_device(&live.id, &conn, DEFAULT_PROBE_TIMEOUT).await.unwrap();
        assert_eq!(r, Reachability::Reachable);
        assert_eq!(fleet.inspect(&ep).unwrap().running, before);
        assert_eq!(inv.get(&live.id).unwrap().reachability, Reachability::Reachable);
        let r = inv.probe_device(&dead.id, &conn, DEFAULT_PROBE_TIMEOUT).await.unwrap();
        assert_eq!(r, Reachability::Unreachable);
        assert!(matches!(
            inv.probe_device("dev-99", &conn, DEFAULT_PROBE_TIMEOUT).await,
            Err(InventoryError::UnknownDevice(_))
        ));
    }

    #[tokio::test]
    async fn reachability_decays_to_unknown() {
        let fleet = Arc::new(SimFleet::new(DialectRegistry::builtin()));
        let ep = fleet.spawn(SpawnOptions::new("ciscoish")).await.unwrap();
        let conn = NetConnector::new(Some(fleet));
        let inv = inv().with_reachability_ttl(Duration::from_millis(30));
        let mut d = router("r", Some(1));
        d.mgmt_endpoint = ep;
        let d = inv.register_device(d).unwrap();
        inv.probe_device(&d.id, &conn, DEFAULT_PROBE_TIMEOUT).await.unwrap();
        assert_eq!(inv.get(&d.id).unwrap().reachability, Reachability::Reachable);
        tokio::time::sleep(Duration::from_millis(60)).await;
        assert_eq!(inv.get(&d.id).unwrap().reachability, Reachability::Unknown);
    }
}

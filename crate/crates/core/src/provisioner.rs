// SPDX-License-Identifier: Apache-2.0

//! VM/container lifecycle on cloud nodes.
//!
//! An instance is a record plus an endpoint obtained from an
//! [`InstanceProvider`]. Provisioning reconciles the instance type's golden
//! baseline onto that endpoint; the simulated provider backs endpoints with
//! devsim devices.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, Semaphore};

use crate::config::ConfigDocument;
use crate::devsim::{Faults, SimFleet, SpawnOptions};
use crate::events::{Category, EventLog, Severity};
use crate::inventory::{Device, Inventory, Platform};
use crate::reconciler::{diff, Mode, Outcome, Reconciler, Target};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceType {
    RyuController,
    OnosController,
    OdlController,
    FloodlightController,
    Mininet,
    Ovs,
    Dns,
    Dhcp,
}

impl InstanceType {
    pub const ALL: [InstanceType; 8] = [
        Self::RyuController,
        Self::OnosController,
        Self::OdlController,
        Self::FloodlightController,
        Self::Mininet,
        Self::Ovs,
        Self::Dns,
        Self::Dhcp,
    ];

    pub fn is_controller(self) -> bool {
        matches!(
            self,
            Self::RyuController | Self::OnosController | Self::OdlController | Self::FloodlightController
        )
    }

    /// Mininet needs a full kernel; everything else also runs in a container.
    pub fn supports(self, kind: InstanceKind) -> bool {
        !(self == Self::Mininet && kind == InstanceKind::Container)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RyuController => "ryu-controller",
            Self::OnosController => "onos-controller",
            Self::OdlController => "odl-controller",
            Self::FloodlightController => "floodlight-controller",
            Self::Mininet => "mininet",
            Self::Ovs => "ovs",
            Self::Dns => "dns",
            Self::Dhcp => "dhcp",
        }
    }
}

impl std::fmt::Display for InstanceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InstanceType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown instance type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Vm,
    Container,
}

impl std::str::FromStr for InstanceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vm" => Ok(Self::Vm),
            "container" => Ok(Self::Container),
            _ => Err(format!("unknown instance kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceState {
    Requested,
    Provisioning,
    Ready,
    Failed,
    Terminated,
}

impl InstanceState {
    pub const ALL: [InstanceState; 5] = [
        Self::Requested,
        Self::Provisioning,
        Self::Ready,
        Self::Failed,
        Self::Terminated,
    ];

    pub fn can_become(self, to: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, to),
            (Requested, Provisioning)
                | (Provisioning, Ready)
                | (Provisioning, Failed)
                | (Ready, Terminated)
                | (Failed, Provisioning)
                | (Failed, Terminated)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Primary,
    Secondary,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    /// Device id or name of a cloud-node.
    pub host: String,
    pub tenant: String,
    pub count: u32,
    #[serde(rename = "type")]
    pub instance_type: InstanceType,
    pub kind: InstanceKind,
    #[serde(default)]
    pub validate: bool,
    /// Provision in replace mode, wiping whatever the image ships with.
    #[serde(default)]
    pub fresh_install: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub instance_id: String,
    pub checks: Vec<Check>,
    pub overall: bool,
}

impl ValidationReport {
    fn new(instance_id: String, checks: Vec<Check>) -> Self {
        let overall = checks.iter().all(|c| c.pass);
        Self {
            instance_id,
            checks,
            overall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub host_device_id: String,
    pub tenant: String,
    #[serde(rename = "type")]
    pub instance_type: InstanceType,
    pub kind: InstanceKind,
    pub state: InstanceState,
    pub role: Role,
    /// Ready instances serve traffic unless disabled by a failover.
    pub in_service: bool,
    pub endpoint: Option<String>,
    pub dialect_id: String,
    pub mode: Mode,
    pub baseline: ConfigDocument,
    pub created_at: DateTime<Utc>,
    pub ready_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    validate_on_ready: bool,
    /// Background work outstanding on this record.
    #[serde(skip)]
    busy: bool,
}

impl InstanceRecord {
    /// Move to `to` if the lifecycle allows it.
    pub fn advance(&mut self, to: InstanceState, now: DateTime<Utc>) -> Result<(), ProvisionError> {
        if !self.state.can_become(to) {
            return Err(ProvisionError::IllegalTransition { from: self.state, to });
        }
        self.state = to;
        match to {
            InstanceState::Ready => {
                self.ready_at.get_or_insert(now);
                self.in_service = true;
                self.error = None;
            }
            _ => self.in_service = false,
        }
        Ok(())
    }

    /// Not terminated; counts against the tenant quota.
    pub fn is_live(&self) -> bool {
        self.state != InstanceState::Terminated
    }

    pub fn serving(&self) -> bool {
        self.state == InstanceState::Ready && self.in_service
    }

    /// Nothing in flight: not mid-provisioning and no pending worker.
    pub fn settled(&self) -> bool {
        !self.busy && !matches!(self.state, InstanceState::Requested | InstanceState::Provisioning)
    }

    pub fn target(&self) -> Option<Target> {
        Some(Target {
            id: self.id.clone(),
            name: self.id.clone(),
            endpoint: self.endpoint.clone()?,
            dialect_id: self.dialect_id.clone(),
        })
    }

    /// A freshly requested record; exposed for lifecycle model checking.
    pub fn requested(id: String, spec: &InstanceSpec, baseline: &Baseline, role: Role, now: DateTime<Utc>) -> Self {
        Self {
            id,
            host_device_id: spec.host.clone(),
            tenant: spec.tenant.clone(),
            instance_type: spec.instance_type,
            kind: spec.kind,
            state: InstanceState::Requested,
            role,
            in_service: false,
            endpoint: None,
            dialect_id: baseline.dialect.clone(),
            mode: if spec.fresh_install { Mode::Replace } else { Mode::Merge },
            baseline: baseline.config.clone(),
            created_at: now,
            ready_at: None,
            error: None,
            validation: None,
            validate_on_ready: spec.validate,
            busy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvisionError {
    #[error("count must be at least 1")]
    InvalidCount,
    #[error("unknown host {0:?}")]
    UnknownHost(String),
    #[error("host {0:?} is not a cloud-node")]
    NotACloudNode(String),
    #[error("unknown tenant {0:?}")]
    UnknownTenant(String),
    #[error("{instance_type} cannot run as a {kind:?}")]
    IncompatibleKind { instance_type: InstanceType, kind: InstanceKind },
    #[error("tenant {tenant:?} quota {quota} exceeded: {live} live, {requested} requested")]
    QuotaExceeded { tenant: String, quota: u32, live: u32, requested: u32 },
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("instance {id} is {state:?}, not ready")]
    NotReady { id: String, state: InstanceState },
    #[error("instance {0} is terminated")]
    Terminated(String),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: InstanceState, to: InstanceState },
    #[error("provisioning failed: {0}")]
    Failed(String),
    #[error("timed out waiting for instance {0}")]
    WaitTimeout(String),
}

impl ProvisionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidCount => "invalid_count",
            Self::UnknownHost(_) => "unknown_host",
            Self::NotACloudNode(_) => "not_a_cloud_node",
            Self::UnknownTenant(_) => "unknown_tenant",
            Self::IncompatibleKind { .. } => "incompatible_kind",
            Self::QuotaExceeded { .. } => "quota_exceeded",
            Self::UnknownInstance(_) => "unknown_instance",
            Self::NotReady { .. } => "not_ready",
            Self::Terminated(_) => "terminated",
            Self::IllegalTransition { .. } => "illegal_transition",
            Self::Failed(_) => "provision_failed",
            Self::WaitTimeout(_) => "wait_timeout",
        }
    }
}

/// Golden image of one instance type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Baseline {
    pub dialect: String,
    /// Service ports the running instance must listen on.
    pub ports: Vec<u16>,
    pub config: ConfigDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Baselines(BTreeMap<InstanceType, Baseline>);

const BUILTIN_BASELINES: &str = include_str!("../data/baselines.json");

impl Baselines {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_BASELINES).expect("builtin baselines are valid")
    }

    /// Every instance type must have an entry.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let b: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match InstanceType::ALL.iter().find(|t| !b.0.contains_key(t)) {
            Some(missing) => Err(format!("no baseline for {missing}")),
            None => Ok(b),
        }
    }

    pub fn get(&self, t: InstanceType) -> &Baseline {
        &self.0[&t]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Where instance endpoints come from. A hypervisor or container runtime
/// backend would implement this.
#[async_trait]
pub trait InstanceProvider: Send + Sync {
    /// Boot an instance and return its management endpoint.
    async fn create(
        &self,
        host: &Device,
        instance_type: InstanceType,
        kind: InstanceKind,
        baseline: &Baseline,
    ) -> Result<String, ProviderError>;
    async fn destroy(&self, endpoint: &str) -> Result<(), ProviderError>;
    async fn listening_ports(&self, endpoint: &str) -> Result<Vec<u16>, ProviderError>;
}

/// Simulated boot and command timing. These defaults are what "default
/// simulated latencies" means throughout the test suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTiming {
    pub container_boot_ms: u64,
    pub vm_boot_ms: u64,
    /// Per-command latency of instance endpoints.
    pub command_latency_ms: u64,
}

impl Default for SimTiming {
    fn default() -> Self {
        Self {
            container_boot_ms: 900,
            vm_boot_ms: 3000,
            command_latency_ms: 40,
        }
    }
}

impl SimTiming {
    /// Everything instantaneous; for logic tests.
    pub fn instant() -> Self {
        Self {
            container_boot_ms: 0,
            vm_boot_ms: 0,
            command_latency_ms: 0,
        }
    }
}

/// Instances as devsim devices. A host whose own simulator carries the
/// `provision_fail` fault refuses to create instances.
pub struct SimProvider {
    fleet: Arc<SimFleet>,
    timing: SimTiming,
}

impl SimProvider {
    pub fn new(fleet: Arc<SimFleet>, timing: SimTiming) -> Self {
        Self { fleet, timing }
    }

    pub fn timing(&self) -> SimTiming {
        self.timing
    }
}

#[async_trait]
impl InstanceProvider for SimProvider {
    async fn create(
        &self,
        host: &Device,
        instance_type: InstanceType,
        kind: InstanceKind,
        baseline: &Baseline,
    ) -> Result<String, ProviderError> {
        let boot = match kind {
            InstanceKind::Container => self.timing.container_boot_ms,
            InstanceKind::Vm => self.timing.vm_boot_ms,
        };
        tokio::time::sleep(Duration::from_millis(boot)).await;
        let host_sim = self.fleet.get(&host.mgmt_endpoint);
        if host_sim.is_some_and(|h| h.faults().provision_fail) {
            return Err(ProviderError(format!("host {} refused to start {instance_type}", host.name)));
        }
        // Stock images carry a little identity config of their own.
        let mut image = ConfigDocument::new();
        let path = |leaf: &str| format!("image.{leaf}").parse().expect("static path");
        image.set(path("type"), instance_type.as_str().into()).expect("fresh doc");
        image.set(path("build"), "stock".into()).expect("fresh doc");
        let opts = SpawnOptions::new(baseline.dialect.clone())
            .initial(image)
            .ports(baseline.ports.clone())
            .faults(Faults {
                latency_ms: self.timing.command_latency_ms,
                ..Default::default()
            });
        self.fleet.spawn(opts).await.map_err(|e| ProviderError(e.to_string()))
    }

    async fn destroy(&self, endpoint: &str) -> Result<(), ProviderError> {
        self.fleet.despawn(endpoint).map_err(|e| ProviderError(e.to_string()))
    }

    async fn listening_ports(&self, endpoint: &str) -> Result<Vec<u16>, ProviderError> {
        let dev = self
            .fleet
            .get(endpoint)
            .ok_or_else(|| ProviderError(format!("no instance at {endpoint}")))?;
        Ok(dev.listening_ports())
    }
}

struct Inner {
    inventory: Arc<Inventory>,
    reconciler: Arc<Reconciler>,
    provider: Arc<dyn InstanceProvider>,
    events: Arc<EventLog>,
    baselines: Baselines,
    records: RwLock<BTreeMap<u64, InstanceRecord>>,
    next_id: AtomicU64,
    workers: Semaphore,
    changed: watch::Sender<u64>,
}

/// Cheap to clone; all clones share state.
#[derive(Clone)]
pub struct Provisioner {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Provisioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provisioner")
            .field("instances", &self.inner.records.read().len())
            .finish()
    }
}

fn numeric_id(id: &str) -> Option<u64> {
    id.strip_prefix("inst-")?.parse().ok()
}

impl Provisioner {
    pub fn new(
        inventory: Arc<Inventory>,
        reconciler: Arc<Reconciler>,
        provider: Arc<dyn InstanceProvider>,
        events: Arc<EventLog>,
        baselines: Baselines,
        parallelism: usize,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                inventory,
                reconciler,
                provider,
                events,
                baselines,
                records: RwLock::new(BTreeMap::new()),
                next_id: AtomicU64::new(0),
                workers: Semaphore::new(parallelism.max(1)),
                changed: watch::channel(0).0,
            }),
        }
    }

    pub fn baselines(&self) -> &Baselines {
        &self.inner.baselines
    }

    pub fn get(&self, id: &str) -> Result<InstanceRecord, ProvisionError> {
        numeric_id(id)
            .and_then(|n| self.inner.records.read().get(&n).cloned())
            .ok_or_else(|| ProvisionError::UnknownInstance(id.to_string()))
    }

    /// All records in creation order.
    pub fn list(&self) -> Vec<InstanceRecord> {
        self.inner.records.read().values().cloned().collect()
    }

    pub fn live_count(&self, tenant: &str) -> u32 {
        self.inner
            .records
            .read()
            .values()
            .filter(|r| r.tenant == tenant && r.is_live())
            .count() as u32
    }

    fn update<T>(&self, id: &str, f: impl FnOnce(&mut InstanceRecord) -> Result<T, ProvisionError>) -> Result<T, ProvisionError> {
        let out = {
            let mut records = self.inner.records.write();
            let rec = numeric_id(id)
                .and_then(|n| records.get_mut(&n))
                .ok_or_else(|| ProvisionError::UnknownInstance(id.to_string()))?;
            f(rec)?
        };
        self.inner.changed.send_modify(|v| *v += 1);
        Ok(out)
    }

    fn event(&self, severity: Severity, kind: &str, rec: &InstanceRecord, extra: serde_json::Value) {
        let mut payload = json!({
            "kind": kind,
            "instance": rec.id,
            "tenant": rec.tenant,
            "type": rec.instance_type,
            "role": rec.role,
            "state": rec.state,
        });
        if let (Some(p), serde_json::Value::Object(extra)) = (payload.as_object_mut(), extra) {
            p.extend(extra);
        }
        self.inner.events.emit(Category::Instance, severity, payload);
    }

    /// Create `count` records and provision them in the background.
    pub fn submit(&self, spec: &InstanceSpec) -> Result<Vec<InstanceRecord>, ProvisionError> {
        self.submit_as(spec, Role::None)
    }

    pub fn submit_as(&self, spec: &InstanceSpec, role: Role) -> Result<Vec<InstanceRecord>, ProvisionError> {
        if spec.count == 0 {
            return Err(ProvisionError::InvalidCount);
        }
        let host = self
            .inner
            .inventory
            .resolve(&spec.host)
            .map_err(|_| ProvisionError::UnknownHost(spec.host.clone()))?;
        if host.platform != Platform::CloudNode {
            return Err(ProvisionError::NotACloudNode(host.name));
        }
        let tenant = self
            .inner
            .inventory
            .tenant(&spec.tenant)
            .map_err(|_| ProvisionError::UnknownTenant(spec.tenant.clone()))?;
        if !spec.instance_type.supports(spec.kind) {
            return Err(ProvisionError::IncompatibleKind {
                instance_type: spec.instance_type,
                kind: spec.kind,
            });
        }
        let baseline = self.inner.baselines.get(spec.instance_type);
        let spec = InstanceSpec {
            host: host.id.clone(),
            ..spec.clone()
        };
        let created = {
            let mut records = self.inner.records.write();
            let live = records.values().filter(|r| r.tenant == spec.tenant && r.is_live()).count() as u32;
            if live + spec.count > tenant.quota_instances {
                return Err(ProvisionError::QuotaExceeded {
                    tenant: tenant.name,
                    quota: tenant.quota_instances,
                    live,
                    requested: spec.count,
                });
            }
            let now = Utc::now();
            (0..spec.count)
                .map(|_| {
                    let n = self.inner.next_id.fetch_add(1, Ordering::Relaxed) + 1;
                    let mut rec = InstanceRecord::requested(format!("inst-{n}"), &spec, baseline, role, now);
                    rec.busy = true;
                    records.insert(n, rec.clone());
                    rec
                })
                .collect::<Vec<_>>()
        };
        self.inner.changed.send_modify(|v| *v += 1);
        for rec in &created {
            self.event(Severity::Info, "instance.requested", rec, json!({"host": rec.host_device_id}));
            let this = self.clone();
            let id = rec.id.clone();
            tokio::spawn(async move { this.provision(&id).await });
        }
        Ok(created)
    }

    async fn provision(&self, id: &str) {
        let _permit = self.inner.workers.acquire().await.expect("semaphore never closed");
        let started = Instant::now();
        let rec = match self.update(id, |r| {
            r.advance(InstanceState::Provisioning, Utc::now())?;
            r.busy = true;
            Ok(r.clone())
        }) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(instance = id, "cannot start provisioning: {e}");
                let _ = self.update(id, |r| {
                    r.busy = false;
                    Ok(())
                });
                return;
            }
        };
        self.event(Severity::Info, "instance.provisioning", &rec, json!({}));
        let result = self.bring_up(&rec).await;
        let now = Utc::now();
        let elapsed = started.elapsed().as_millis() as u64;
        match result {
            Ok(endpoint) => {
                let rec = self
                    .update(id, |r| {
                        r.endpoint = Some(endpoint);
                        r.advance(InstanceState::Ready, now)?;
                        Ok(r.clone())
                    })
                    .expect("provisioning -> ready is legal");
                self.event(Severity::Info, "instance.ready", &rec, json!({"provision_ms": elapsed}));
                if rec.validate_on_ready {
                    if let Err(e) = self.validate(id).await {
                        tracing::warn!(instance = id, "post-provision validation: {e}");
                    }
                }
            }
            Err((endpoint, reason)) => {
                let rec = self
                    .update(id, |r| {
                        r.endpoint = endpoint;
                        r.error = Some(reason.clone());
                        r.advance(InstanceState::Failed, now)?;
                        Ok(r.clone())
                    })
                    .expect("provisioning -> failed is legal");
                self.event(Severity::Error, "instance.failed", &rec, json!({"error": reason}));
            }
        }
        let _ = self.update(id, |r| {
            r.busy = false;
            Ok(())
        });
    }

    /// Endpoint creation plus baseline push. On failure, returns whatever
    /// endpoint exists so a retry can reuse it.
    async fn bring_up(&self, rec: &InstanceRecord) -> Result<String, (Option<String>, String)> {
        let endpoint = match &rec.endpoint {
            Some(ep) if self.inner.provider.listening_ports(ep).await.is_ok() => ep.clone(),
            _ => {
                let host = self
                    .inner
                    .inventory
                    .get(&rec.host_device_id)
                    .map_err(|e| (None, e.to_string()))?;
                let baseline = self.inner.baselines.get(rec.instance_type);
                self.inner
                    .provider
                    .create(&host, rec.instance_type, rec.kind, baseline)
                    .await
                    .map_err(|e| (None, e.to_string()))?
            }
        };
        let target = Target {
            id: rec.id.clone(),
            name: rec.id.clone(),
            endpoint: endpoint.clone(),
            dialect_id: rec.dialect_id.clone(),
        };
        match self.inner.reconciler.reconcile(&target, &rec.baseline, rec.mode).await {
            Ok(report) if report.outcome == Outcome::Ok => Ok(endpoint),
            Ok(report) => Err((Some(endpoint), report.error.unwrap_or_else(|| "baseline push failed".into()))),
            Err(e) => Err((Some(endpoint), e.to_string())),
        }
    }

    /// Wait until `id` has no work in flight, then return it.
    pub async fn wait_settled(&self, id: &str, timeout: Duration) -> Result<InstanceRecord, ProvisionError> {
        let mut rx = self.inner.changed.subscribe();
        let wait = async {
            loop {
                let rec = self.get(id)?;
                if rec.settled() {
                    return Ok(rec);
                }
                if rx.changed().await.is_err() {
                    return Err(ProvisionError::WaitTimeout(id.to_string()));
                }
            }
        };
        tokio::time::timeout(timeout, wait)
            .await
            .map_err(|_| ProvisionError::WaitTimeout(id.to_string()))?
    }

    fn require_ready(&self, id: &str) -> Result<(InstanceRecord, Target), ProvisionError> {
        let rec = self.get(id)?;
        match (rec.state, rec.target()) {
            (InstanceState::Ready, Some(t)) => Ok((rec, t)),
            (state, _) => Err(ProvisionError::NotReady { id: id.to_string(), state }),
        }
    }

    /// Liveness probe, baseline equality and service ports.
    pub async fn validate(&self, id: &str) -> Result<ValidationReport, ProvisionError> {
        let (rec, target) = self.require_ready(id)?;
        let baseline = self.inner.baselines.get(rec.instance_type);
        let mut checks = Vec::new();

        let live = self.inner.reconciler.probe(&target).await;
        checks.push(Check {
            name: "liveness".into(),
            pass: live.is_ok(),
            detail: match &live {
                Ok(()) => "probe answered".into(),
                Err(e) => e.to_string(),
            },
        });

        let config = match self.inner.reconciler.fetch(&target).await {
            Ok(actual) => {
                let drift = diff(&actual, &rec.baseline, rec.mode);
                Check {
                    name: "baseline-config".into(),
                    pass: drift.is_empty(),
                    detail: if drift.is_empty() {
                        "matches golden baseline".into()
                    } else {
                        format!("{} ops of drift", drift.len())
                    },
                }
            }
            Err(e) => Check {
                name: "baseline-config".into(),
                pass: false,
                detail: e.to_string(),
            },
        };
        checks.push(config);

        let ports = match self.inner.provider.listening_ports(&target.endpoint).await {
            Ok(listening) => {
                let missing: Vec<u16> = baseline.ports.iter().copied().filter(|p| !listening.contains(p)).collect();
                Check {
                    name: "ports".into(),
                    pass: missing.is_empty(),
                    detail: if missing.is_empty() {
                        format!("listening on {:?}", baseline.ports)
                    } else {
                        format!("not listening on {missing:?}")
                    },
                }
            }
            Err(e) => Check {
                name: "ports".into(),
                pass: false,
                detail: e.to_string(),
            },
        };
        checks.push(ports);

        let report = ValidationReport::new(id.to_string(), checks);
        let rec = self.update(id, |r| {
            r.validation = Some(report.clone());
            Ok(r.clone())
        })?;
        self.event(
            if report.overall { Severity::Info } else { Severity::Warn },
            "instance.validated",
            &rec,
            json!({"overall": report.overall}),
        );
        Ok(report)
    }

    /// Revert to the golden baseline in replace mode. A failed instance is
    /// provisioned again from scratch.
    pub async fn fresh_install(&self, id: &str) -> Result<InstanceRecord, ProvisionError> {
        let rec = self.get(id)?;
        match rec.state {
            InstanceState::Terminated => return Err(ProvisionError::Terminated(id.to_string())),
            InstanceState::Requested | InstanceState::Provisioning => {
                return Err(ProvisionError::NotReady { id: id.to_string(), state: rec.state })
            }
            InstanceState::Failed => {
                self.update(id, |r| {
                    r.mode = Mode::Replace;
                    r.busy = true;
                    Ok(())
                })?;
                self.provision(id).await;
                let rec = self.get(id)?;
                return match rec.state {
                    InstanceState::Ready => Ok(rec),
                    _ => Err(ProvisionError::Failed(rec.error.unwrap_or_default())),
                };
            }
            InstanceState::Ready => {}
        }
        let target = rec.target().expect("ready instances have an endpoint");
        let report = self
            .inner
            .reconciler
            .reconcile(&target, &rec.baseline, Mode::Replace)
            .await
            .map_err(|e| ProvisionError::Failed(e.to_string()))?;
        if report.outcome != Outcome::Ok {
            return Err(ProvisionError::Failed(report.error.unwrap_or_default()));
        }
        let rec = self.update(id, |r| {
            r.mode = Mode::Replace;
            Ok(r.clone())
        })?;
        self.event(
            Severity::Info,
            "instance.reset",
            &rec,
            json!({"commands_sent": report.commands_sent}),
        );
        Ok(rec)
    }

    /// Re-run provisioning of a failed instance in the background.
    pub fn retry(&self, id: &str) -> Result<InstanceRecord, ProvisionError> {
        let rec = self.update(id, |r| {
            if r.state != InstanceState::Failed || r.busy {
                return Err(ProvisionError::IllegalTransition {
                    from: r.state,
                    to: InstanceState::Provisioning,
                });
            }
            r.busy = true;
            Ok(r.clone())
        })?;
        let this = self.clone();
        let id = id.to_string();
        tokio::spawn(async move { this.provision(&id).await });
        Ok(rec)
    }

    pub async fn terminate(&self, id: &str) -> Result<InstanceRecord, ProvisionError> {
        let rec = self.update(id, |r| {
            if r.busy {
                return Err(ProvisionError::NotReady { id: r.id.clone(), state: r.state });
            }
            r.advance(InstanceState::Terminated, Utc::now())?;
            Ok(r.clone())
        })?;
        if let Some(ep) = &rec.endpoint {
            if let Err(e) = self.inner.provider.destroy(ep).await {
                tracing::warn!(instance = id, "destroy failed: {e}");
            }
        }
        self.event(Severity::Info, "instance.terminated", &rec, json!({}));
        Ok(rec)
    }

    /// Take a ready instance out of service without destroying it.
    pub fn disable(&self, id: &str) -> Result<InstanceRecord, ProvisionError> {
        let rec = self.update(id, |r| {
            if r.state != InstanceState::Ready {
                return Err(ProvisionError::NotReady { id: r.id.clone(), state: r.state });
            }
            r.in_service = false;
            Ok(r.clone())
        })?;
        self.event(Severity::Info, "instance.disabled", &rec, json!({}));
        Ok(rec)
    }

    pub fn set_role(&self, id: &str, role: Role) -> Result<InstanceRecord, ProvisionError> {
        let rec = self.update(id, |r| {
            r.role = role;
            Ok(r.clone())
        })?;
        self.event(Severity::Info, "instance.role", &rec, json!({}));
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_table() {
        use InstanceState::*;
        let legal: Vec<(InstanceState, InstanceState)> = InstanceState::ALL
            .iter()
            .flat_map(|a| InstanceState::ALL.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_become(*b))
            .collect();
        assert_eq!(
            legal,
            [
                (Requested, Provisioning),
                (Provisioning, Ready),
                (Provisioning, Failed),
                (Ready, Terminated),
                (Failed, Provisioning),
                (Failed, Terminated),
            ]
        );
    }

    #[test]
    fn compatibility_and_names() {
        assert!(!InstanceType::Mininet.supports(InstanceKind::Container));
        for t in InstanceType::ALL {
            assert!(t.supports(InstanceKind::Vm));
            assert_eq!(t.as_str().parse::<InstanceType>().unwrap(), t);
            assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
        }
    }

    #[test]
    fn builtin_baselines_cover_every_type_and_render() {
        let b = Baselines::builtin();
        let reg = crate::dialect::DialectRegistry::builtin();
        for t in InstanceType::ALL {
            let base = b.get(t);
            assert!(!base.config.is_empty(), "{t}");
            assert!(!base.ports.is_empty(), "{t}");
            reg.render(&crate::config::ConfigDelta::full_set(&base.config), &base.dialect)
                .unwrap_or_else(|e| panic!("{t}: {e}"));
        }
        assert!(Baselines::from_json(r#"{"dns":{"dialect":"junosish","ports":[53],"config":{"a":{"b":1}}}}"#).is_err());
    }

    #[test]
    fn spec_wire_format() {
        let spec: InstanceSpec = serde_json::from_str(
            r#"{"host":"h1","tenant":"t1","count":2,"type":"ovs","kind":"container"}"#,
        )
        .unwrap();
        assert_eq!(spec.instance_type, InstanceType::Ovs);
        assert!(!spec.validate && !spec.fresh_install);
    }
}

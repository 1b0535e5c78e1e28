// SPDX-License-Identifier: Apache-2.0

//! Wires every subsystem together behind one handle. The HTTP server and
//! the CLI's embedded mode both drive an [`Orchestrator`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use netorch_bgpd::DaemonConfig;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::autoscaler::{Autoscaler, ScaleError, ScalePolicy, ServiceMetrics};
use crate::devsim::{Faults, SimError, SimFleet, SpawnOptions};
use crate::dialect::{DialectError, DialectRegistry};
use crate::events::{Category, EventLog, Severity, DEFAULT_RETENTION};
use crate::fabric::{Fabric, FabricError};
use crate::inventory::{Device, DeviceDescriptor, Inventory, InventoryError, Reachability, DEFAULT_PROBE_TIMEOUT};
use crate::provisioner::{Baselines, InstanceType, Provisioner, SimProvider, SimTiming, DEFAULT_PARALLELISM};
use crate::reconciler::{ApplyReport, Outcome, ReconcileError, Reconciler, ReconcilerConfig, TaskDocument};
use crate::transport::NetConnector;

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    /// Inventory file; `None` keeps the registry in memory.
    pub inventory_path: Option<PathBuf>,
    /// Append-only mirror of the event stream.
    pub events_path: Option<PathBuf>,
    /// Extra dialect definition files loaded after the built-in ones.
    pub dialect_files: Vec<PathBuf>,
    pub baselines: Baselines,
    pub timing: SimTiming,
    pub reconciler: ReconcilerConfig,
    pub parallelism: usize,
    pub bgp: DaemonConfig,
    pub probe_timeout: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            inventory_path: None,
            events_path: None,
            dialect_files: Vec::new(),
            baselines: Baselines::builtin(),
            timing: SimTiming::default(),
            reconciler: ReconcilerConfig::default(),
            parallelism: DEFAULT_PARALLELISM,
            bgp: DaemonConfig::default(),
            probe_timeout: DEFAULT_PROBE_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Dialect(#[from] DialectError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("event file: {0}")]
    Events(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Running,
    /// Every device reported ok.
    Completed,
    /// At least one device was partial or failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub state: TaskState,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub document: TaskDocument,
    pub reports: Vec<ApplyReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub devices: usize,
    pub devices_reachable: usize,
    pub instances: BTreeMap<String, usize>,
    pub tasks: BTreeMap<String, usize>,
    pub services: BTreeMap<InstanceType, ServiceMetrics>,
    pub bgp_speakers: usize,
    pub bgp_sessions_established: usize,
    pub events_last_seq: u64,
}

pub struct Orchestrator {
    pub events: Arc<EventLog>,
    pub fleet: Arc<SimFleet>,
    pub inventory: Arc<Inventory>,
    pub reconciler: Arc<Reconciler>,
    pub provisioner: Provisioner,
    pub autoscaler: Arc<Autoscaler>,
    pub fabric: Fabric,
    probe_timeout: Duration,
    connector: Arc<NetConnector>,
    tasks: RwLock<BTreeMap<u64, TaskRecord>>,
    next_task: AtomicU64,
    task_done: watch::Sender<u64>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("inventory", &self.inventory).finish()
    }
}

fn task_number(id: &str) -> Option<u64> {
    id.strip_prefix("task-")?.parse().ok()
}

impl Orchestrator {
    pub async fn start(config: OrchestratorConfig) -> Result<Arc<Self>, StartError> {
        let mut dialects = DialectRegistry::builtin();
        for f in &config.dialect_files {
            dialects.load_file(f)?;
        }
        let events = Arc::new(match &config.events_path {
            Some(p) => EventLog::with_file(DEFAULT_RETENTION, p)?,
            None => EventLog::new(DEFAULT_RETENTION),
        });
        let inventory = Arc::new(match &config.inventory_path {
            Some(p) => Inventory::open(p, dialects.clone(), events.clone())?,
            None => Inventory::in_memory(dialects.clone(), events.clone()),
        });
        let fleet = Arc::new(SimFleet::new(dialects.clone()));
        let connector = Arc::new(NetConnector::new(Some(fleet.clone())));
        let reconciler = Arc::new(Reconciler::new(dialects, connector.clone(), events.clone(), config.reconciler));
        let provider = Arc::new(SimProvider::new(fleet.clone(), config.timing));
        let provisioner = Provisioner::new(
            inventory.clone(),
            reconciler.clone(),
            provider,
            events.clone(),
            config.baselines,
            config.parallelism,
        );
        let autoscaler = Arc::new(Autoscaler::new(provisioner.clone(), events.clone()));
        let fabric = Fabric::new(events.clone(), config.bgp);
        fabric.sync(&inventory).await?;
        Ok(Arc::new(Self {
            events,
            fleet,
            inventory,
            reconciler,
            provisioner,
            autoscaler,
            fabric,
            probe_timeout: config.probe_timeout,
            connector,
            tasks: RwLock::new(BTreeMap::new()),
            next_task: AtomicU64::new(0),
            task_done: watch::channel(0).0,
        }))
    }

    /// Register and, for devices with an ASN, start their BGP speaker.
    pub async fn register_device(&self, desc: DeviceDescriptor) -> Result<Device, InventoryError> {
        let device = self.inventory.register_device(desc)?;
        if device.asn.is_some() {
            if let Err(e) = self.fabric.sync(&self.inventory).await {
                self.events.emit(
                    Category::Bgp,
                    Severity::Error,
                    json!({"kind": "bgp.sync-failed", "device": device.id, "error": e.to_string()}),
                );
            }
        }
        Ok(device)
    }

    pub async fn probe_device(&self, id: &str) -> Result<Reachability, InventoryError> {
        let id = self.inventory.resolve(id)?.id;
        self.inventory
            .probe_device(&id, self.connector.as_ref(), self.probe_timeout)
            .await
    }

    /// Validate the targets, record the task and run it in the background.
    pub fn submit_task(self: &Arc<Self>, document: TaskDocument) -> Result<TaskRecord, ReconcileError> {
        Reconciler::resolve_targets(&document, &self.inventory)?;
        let n = self.next_task.fetch_add(1, Ordering::Relaxed) + 1;
        let record = TaskRecord {
            id: format!("task-{n}"),
            state: TaskState::Running,
            submitted_at: Utc::now(),
            finished_at: None,
            document,
            reports: Vec::new(),
        };
        self.tasks.write().insert(n, record.clone());
        let this = self.clone();
        tokio::spawn(async move {
            let doc = this.tasks.read()[&n].document.clone();
            let reports = match this.reconciler.run_task(&doc, &this.inventory).await {
                Ok(r) => r,
                // Targets can vanish between submit and run only if the
                // inventory changed underneath; record it as a failure.
                Err(e) => {
                    this.events.emit(
                        Category::Task,
                        Severity::Error,
                        json!({"kind": "task.aborted", "task": format!("task-{n}"), "error": e.to_string()}),
                    );
                    Vec::new()
                }
            };
            {
                let mut tasks = this.tasks.write();
                let rec = tasks.get_mut(&n).expect("task recorded");
                rec.state = if !reports.is_empty() && reports.iter().all(|r| r.outcome == Outcome::Ok) {
                    TaskState::Completed
                } else {
                    TaskState::Failed
                };
                rec.finished_at = Some(Utc::now());
                rec.reports = reports;
            }
            this.task_done.send_modify(|v| *v += 1);
        });
        Ok(record)
    }

    pub fn task(&self, id: &str) -> Option<TaskRecord> {
        task_number(id).and_then(|n| self.tasks.read().get(&n).cloned())
    }

    pub fn tasks(&self) -> Vec<TaskRecord> {
        self.tasks.read().values().cloned().collect()
    }

    /// The task once it has finished, or its current record after `timeout`.
    pub async fn wait_task(&self, id: &str, timeout: Duration) -> Option<TaskRecord> {
        let mut rx = self.task_done.subscribe();
        let done = |s: &Self| s.task(id).filter(|t| t.state != TaskState::Running);
        let _ = tokio::time::timeout(timeout, async {
            loop {
                if done(self).is_some() {
                    return;
                }
                if rx.changed().await.is_err() {
                    return;
                }
            }
        })
        .await;
        self.task(id)
    }

    pub async fn run_task(self: &Arc<Self>, document: TaskDocument) -> Result<TaskRecord, ReconcileError> {
        let rec = self.submit_task(document)?;
        Ok(self.wait_task(&rec.id, Duration::MAX).await.expect("task recorded"))
    }

    /// Start a simulated device in this process.
    pub async fn spawn_sim(&self, opts: SpawnOptions) -> Result<String, SimError> {
        let dialect = opts.dialect.clone();
        let endpoint = self.fleet.spawn(opts).await?;
        self.events.info(
            Category::Device,
            json!({"kind": "sim.spawned", "endpoint": endpoint, "dialect": dialect}),
        );
        Ok(endpoint)
    }

    pub fn set_sim_faults(&self, endpoint: &str, faults: Faults) -> Result<(), SimError> {
        self.fleet.set_faults(endpoint, faults.clone())?;
        self.events.info(
            Category::Device,
            json!({"kind": "sim.faults", "endpoint": endpoint, "faults": faults}),
        );
        Ok(())
    }

    /// Install a policy and start its control loop.
    pub fn set_policy(&self, policy: ScalePolicy) -> Result<ScalePolicy, ScaleError> {
        let p = self.autoscaler.set_policy(policy)?;
        self.autoscaler.start(p.service)?;
        Ok(p)
    }

    pub fn metrics(&self) -> Metrics {
        let devices = self.inventory.list_devices(Default::default());
        let mut instances = BTreeMap::new();
        for r in self.provisioner.list() {
            let key = serde_json::to_value(r.state).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            *instances.entry(key).or_insert(0) += 1;
        }
        let mut tasks = BTreeMap::new();
        for t in self.tasks.read().values() {
            let key = serde_json::to_value(t.state).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            *tasks.entry(key).or_insert(0) += 1;
        }
        Metrics {
            devices: devices.len(),
            devices_reachable: devices.iter().filter(|d| d.reachability == Reachability::Reachable).count(),
            instances,
            tasks,
            services: self.autoscaler.metrics(),
            bgp_speakers: self.fabric.list().len(),
            bgp_sessions_established: self.fabric.established_sessions(),
            events_last_seq: self.events.last_seq(),
        }
    }

    pub fn shutdown(&self) {
        for p in self.autoscaler.policies() {
            self.autoscaler.stop(p.service);
        }
        self.fabric.shutdown();
    }
}

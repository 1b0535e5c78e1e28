// SPDX-License-Identifier: Apache-2.0

//! Fetch, diff, push.
//!
//! Every reconcile reads the device's running configuration live, computes
//! the minimal delta to the desired document and pushes only that delta,
//! rendered in the device's dialect. Work on one device is serialized by a
//! per-device FIFO lock; distinct devices proceed in parallel.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigDelta, ConfigDocument, ConfigPath, DeltaOp};
use crate::dialect::{Dialect, DialectError, DialectRegistry};
use crate::events::{Category, EventLog, Severity};
use crate::inventory::{Device, DeviceFilter, Inventory, Platform};
use crate::transport::{Channel, ChannelError, Connector, Reply};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Overlay desired onto actual; keys absent from desired are kept.
    #[default]
    Merge,
    /// Make actual exactly equal to desired.
    Replace,
}

/// Minimal delta taking `actual` to the target state for `mode`.
///
/// Deletes come first (sorted by path), then sets (sorted by path). In merge
/// mode the only deletes are leaves that structurally block a desired leaf.
pub fn diff(actual: &ConfigDocument, desired: &ConfigDocument, mode: Mode) -> ConfigDelta {
    let deletes: Vec<ConfigPath> = match mode {
        Mode::Replace => actual.paths().filter(|p| !desired.contains(p)).cloned().collect(),
        Mode::Merge => {
            let mut blocked = std::collections::BTreeSet::new();
            for path in desired.paths() {
                blocked.extend(actual.descendants(path).cloned());
                for k in ConfigPath::MIN_SEGMENTS..path.len() {
                    let ancestor = ConfigPath::new(path.segments()[..k].iter().cloned()).expect("prefix of valid path");
                    if actual.contains(&ancestor) && !desired.contains(&ancestor) {
                        blocked.insert(ancestor);
                    }
                }
            }
            blocked.into_iter().collect()
        }
    };
    let sets = desired
        .iter()
        .filter(|(p, v)| actual.get(p) != Some(*v))
        .map(|(p, v)| DeltaOp::Set {
            path: p.clone(),
            value: v.clone(),
        });
    let ops = deletes
        .into_iter()
        .map(|path| DeltaOp::Delete { path })
        .chain(sets)
        .collect();
    ConfigDelta::new(ops).expect("delete and set paths are disjoint")
}

/// What the document becomes once a diff in `mode` is applied.
pub fn target_state(actual: &ConfigDocument, desired: &ConfigDocument, mode: Mode) -> ConfigDocument {
    match mode {
        Mode::Replace => desired.clone(),
        Mode::Merge => actual.overlaid(desired),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReconcileError {
    #[error(transparent)]
    Dialect(#[from] DialectError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("device refused show command: {0}")]
    Fetch(String),
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("task has no targets")]
    EmptyTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub device_id: String,
    pub device_name: String,
    /// Commands actually transmitted. Equals the rendered length when the
    /// outcome is ok.
    pub commands_sent: usize,
    pub delta: ConfigDelta,
    pub duration_ms: u64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Anything with a command channel: an inventory device or an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub id: String,
    pub name: String,
    pub endpoint: String,
    pub dialect_id: String,
}

impl From<&Device> for Target {
    fn from(d: &Device) -> Self {
        Self {
            id: d.id.clone(),
            name: d.name.clone(),
            endpoint: d.mgmt_endpoint.clone(),
            dialect_id: d.dialect_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconcilerConfig {
    pub command_timeout: Duration,
    /// Extra connection attempts after the first one fails.
    pub retries: u32,
    /// Backoff before retry n is `backoff_base * 2^n`.
    pub backoff_base: Duration,
}

impl Default for ReconcilerConfig {
    fn default() -> Self {
        Self {
            command_timeout: Duration::from_secs(5),
            retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Platform { platform: Platform },
    Device { device: String },
    Name(String),
}

/// The playbook analog: which devices, and what they should look like.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDocument {
    pub targets: Vec<TargetSpec>,
    pub desired: ConfigDocument,
    #[serde(default)]
    pub mode: Mode,
}

pub struct Reconciler {
    dialects: DialectRegistry,
    connector: Arc<dyn Connector>,
    events: Arc<EventLog>,
    config: ReconcilerConfig,
    locks: parking_lot::Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl std::fmt::Debug for Reconciler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reconciler").field("config", &self.config).finish()
    }
}

struct Push {
    sent: usize,
    outcome: Outcome,
    failed_at: Option<usize>,
    error: Option<String>,
}

impl Reconciler {
    pub fn new(
        dialects: DialectRegistry,
        connector: Arc<dyn Connector>,
        events: Arc<EventLog>,
        config: ReconcilerConfig,
    ) -> Self {
        Self {
            dialects,
            connector,
            events,
            config,
            locks: Default::default(),
        }
    }

    pub fn config(&self) -> &ReconcilerConfig {
        &self.config
    }

    fn device_lock(&self, endpoint: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .entry(endpoint.to_string())
            .or_default()
            .clone()
    }

    async fn send(&self, ch: &mut dyn Channel, command: &str) -> Result<Reply, ChannelError> {
        tokio::time::timeout(self.config.command_timeout, ch.send(command))
            .await
            .map_err(|_| ChannelError::Timeout)?
    }

    async fn connect_with_retry(&self, target: &Target, dialect: &Arc<Dialect>) -> Result<Box<dyn Channel>, ChannelError> {
        let mut attempt = 0;
        loop {
            match self.connector.connect(&target.endpoint, dialect).await {
                Ok(ch) => return Ok(ch),
                Err(e) if attempt >= self.config.retries => return Err(e),
                Err(e) => {
                    tracing::debug!(target = %target.name, attempt, "connect failed: {e}");
                    tokio::time::sleep(self.config.backoff_base * 2u32.pow(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    async fn fetch_on(&self, ch: &mut dyn Channel, dialect: &Dialect) -> Result<ConfigDocument, ReconcileError> {
        match self.send(ch, dialect.show_command()).await? {
            Reply::Output(text) => Ok(dialect.parse_running(&text)?),
            Reply::Ok => Ok(ConfigDocument::new()),
            Reply::Err(reason) => Err(ReconcileError::Fetch(reason)),
        }
    }

    async fn push_on(&self, ch: &mut dyn Channel, commands: &[String]) -> Push {
        for (i, cmd) in commands.iter().enumerate() {
            match self.send(ch, cmd).await {
                Ok(Reply::Ok | Reply::Output(_)) => {}
                Ok(Reply::Err(reason)) => {
                    return Push {
                        sent: i + 1,
                        outcome: Outcome::Partial,
                        failed_at: Some(i),
                        error: Some(format!("device rejected {cmd:?}: {reason}")),
                    };
                }
                Err(e) => {
                    return Push {
                        sent: i + 1,
                        outcome: Outcome::Failed,
                        failed_at: Some(i),
                        error: Some(e.to_string()),
                    };
                }
            }
        }
        Push {
            sent: commands.len(),
            outcome: Outcome::Ok,
            failed_at: None,
            error: None,
        }
    }

    fn report(&self, target: &Target, delta: ConfigDelta, push: Push, started: Instant) -> ApplyReport {
        let report = ApplyReport {
            device_id: target.id.clone(),
            device_name: target.name.clone(),
            commands_sent: push.sent,
            delta,
            duration_ms: started.elapsed().as_millis() as u64,
            outcome: push.outcome,
            failed_at: push.failed_at,
            error: push.error,
        };
        let severity = match report.outcome {
            Outcome::Ok => Severity::Info,
            Outcome::Partial => Severity::Warn,
            Outcome::Failed => Severity::Error,
        };
        self.events.emit(
            Category::Task,
            severity,
            json!({
                "kind": "device.applied",
                "device": report.device_id,
                "commands_sent": report.commands_sent,
                "ops": report.delta.len(),
                "outcome": report.outcome,
                "failed_at": report.failed_at,
            }),
        );
        report
    }

    /// Render and push `delta` as is. Rendering problems are returned as
    /// errors before anything is sent; transport and device failures during
    /// the push are reported through the outcome.
    pub async fn apply(&self, target: &Target, delta: ConfigDelta) -> Result<ApplyReport, ReconcileError> {
        let started = Instant::now();
        let dialect = self.dialects.get(&target.dialect_id)?.clone();
        let commands = dialect.render(&delta)?;
        let lock = self.device_lock(&target.endpoint);
        let _guard = lock.lock().await;
        let push = if commands.is_empty() {
            self.push_on(&mut NullChannel, &[]).await
        } else {
            let mut ch = self.connect_with_retry(target, &dialect).await?;
            self.push_on(ch.as_mut(), &commands).await
        };
        Ok(self.report(target, delta, push, started))
    }

    /// Live running configuration of `target`.
    pub async fn fetch(&self, target: &Target) -> Result<ConfigDocument, ReconcileError> {
        let dialect = self.dialects.get(&target.dialect_id)?.clone();
        let lock = self.device_lock(&target.endpoint);
        let _guard = lock.lock().await;
        let mut ch = self.connect_with_retry(target, &dialect).await?;
        self.fetch_on(ch.as_mut(), &dialect).await
    }

    /// Send the dialect's no-op probe command.
    pub async fn probe(&self, target: &Target) -> Result<(), ReconcileError> {
        let dialect = self.dialects.get(&target.dialect_id)?.clone();
        let lock = self.device_lock(&target.endpoint);
        let _guard = lock.lock().await;
        let mut ch = self.connector.connect(&target.endpoint, &dialect).await?;
        match self.send(ch.as_mut(), dialect.probe_command()).await? {
            Reply::Err(reason) => Err(ReconcileError::Fetch(reason)),
            _ => Ok(()),
        }
    }

    /// fetch, diff, apply as one serialized unit on the device.
    pub async fn reconcile(
        &self,
        target: &Target,
        desired: &ConfigDocument,
        mode: Mode,
    ) -> Result<ApplyReport, ReconcileError> {
        let started = Instant::now();
        let dialect = self.dialects.get(&target.dialect_id)?.clone();
        let lock = self.device_lock(&target.endpoint);
        let _guard = lock.lock().await;
        let mut ch = self.connect_with_retry(target, &dialect).await?;
        let actual = self.fetch_on(ch.as_mut(), &dialect).await?;
        let delta = diff(&actual, desired, mode);
        let commands = dialect.render(&delta)?;
        let push = self.push_on(ch.as_mut(), &commands).await;
        Ok(self.report(target, delta, push, started))
    }

    /// The devices `task` selects, deduplicated and ordered by id.
    pub fn resolve_targets(task: &TaskDocument, inventory: &Inventory) -> Result<Vec<Target>, ReconcileError> {
        if task.targets.is_empty() {
            return Err(ReconcileError::EmptyTargets);
        }
        let mut devices: BTreeMap<String, Device> = BTreeMap::new();
        for spec in &task.targets {
            match spec {
                TargetSpec::Platform { platform } => {
                    let filter = DeviceFilter {
                        platform: Some(*platform),
                        ..Default::default()
                    };
                    for d in inventory.list_devices(filter) {
                        devices.insert(d.id.clone(), d);
                    }
                }
                TargetSpec::Device { device: key } | TargetSpec::Name(key) => {
                    let d = inventory
                        .resolve(key)
                        .map_err(|_| ReconcileError::UnknownTarget(key.clone()))?;
                    devices.insert(d.id.clone(), d);
                }
            }
        }
        Ok(devices.values().map(Target::from).collect())
    }

    /// Reconcile every target of `task`. Targets are resolved up front; a
    /// failure on one device never stops the others. Reports are ordered by
    /// device name.
    pub async fn run_task(&self, task: &TaskDocument, inventory: &Inventory) -> Result<Vec<ApplyReport>, ReconcileError> {
        let targets = Self::resolve_targets(task, inventory)?;
        self.events.info(
            Category::Task,
            json!({"kind": "task.started", "devices": targets.iter().map(|t| &t.id).collect::<Vec<_>>()}),
        );
        let runs = targets.iter().map(|t| async move {
            let started = Instant::now();
            match self.reconcile(t, &task.desired, task.mode).await {
                Ok(r) => r,
                Err(e) => self.report(
                    t,
                    ConfigDelta::empty(),
                    Push {
                        sent: 0,
                        outcome: Outcome::Failed,
                        failed_at: None,
                        error: Some(e.to_string()),
                    },
                    started,
                ),
            }
        });
        let mut reports = futures::future::join_all(runs).await;
        reports.sort_by(|a, b| a.device_name.cmp(&b.device_name));
        let failed = reports.iter().filter(|r| r.outcome != Outcome::Ok).count();
        self.events.emit(
            Category::Task,
            if failed == 0 { Severity::Info } else { Severity::Warn },
            json!({"kind": "task.completed", "reports": reports.len(), "failed": failed}),
        );
        Ok(reports)
    }
}

struct NullChannel;

#[async_trait::async_trait]
impl Channel for NullChannel {
    async fn send(&mut self, _command: &str) -> Result<Reply, ChannelError> {
        Err(ChannelError::Closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scalar;

    fn doc(json: &str) -> ConfigDocument {
        serde_json::from_str(json).unwrap()
    }

    fn p(s: &str) -> ConfigPath {
        s.parse().unwrap()
    }

    #[test]
    fn identical_documents_diff_to_nothing() {
        let d = doc(r#"{"a":{"b":1,"c":{"d":"x"}}}"#);
        assert!(diff(&d, &d, Mode::Replace).is_empty());
        assert!(diff(&d, &d, Mode::Merge).is_empty());
    }

    #[test]
    fn empty_actual_is_a_full_set() {
        let desired = doc(r#"{"interfaces":{"eth0":{"mtu":1500}}}"#);
        let delta = diff(&ConfigDocument::new(), &desired, Mode::Merge);
        assert_eq!(
            delta.ops(),
            [DeltaOp::Set {
                path: p("interfaces.eth0.mtu"),
                value: Scalar::Int(1500)
            }]
        );
    }

    #[test]
    fn merge_keeps_extra_keys_replace_removes_them() {
        let actual = doc(r#"{"a":{"keep":1,"x":2}}"#);
        let desired = doc(r#"{"a":{"x":3}}"#);
        let merge = diff(&actual, &desired, Mode::Merge);
        assert_eq!(merge.len(), 1);
        let replace = diff(&actual, &desired, Mode::Replace);
        assert_eq!(
            replace.ops(),
            [
                DeltaOp::Delete { path: p("a.keep") },
                DeltaOp::Set { path: p("a.x"), value: 3.into() }
            ]
        );
        assert_eq!(actual.applied(&merge).unwrap(), doc(r#"{"a":{"keep":1,"x":3}}"#));
        assert_eq!(actual.applied(&replace).unwrap(), desired);
    }

    #[test]
    fn merge_deletes_only_structural_blockers() {
        let actual = doc(r#"{"a":{"b":1,"k":{"x":1,"y":2}},"z":{"q":true}}"#);
        let desired = doc(r#"{"a":{"b":{"c":5},"k":9}}"#);
        let delta = diff(&actual, &desired, Mode::Merge);
        assert_eq!(
            delta.ops(),
            [
                DeltaOp::Delete { path: p("a.b") },
                DeltaOp::Delete { path: p("a.k.x") },
                DeltaOp::Delete { path: p("a.k.y") },
                DeltaOp::Set { path: p("a.b.c"), value: 5.into() },
                DeltaOp::Set { path: p("a.k"), value: 9.into() },
            ]
        );
        let out = actual.applied(&delta).unwrap();
        assert_eq!(out, target_state(&actual, &desired, Mode::Merge));
        assert_eq!(out.get(&p("z.q")), Some(&Scalar::Bool(true)));
    }

    #[test]
    fn task_document_format() {
        let task: TaskDocument = serde_json::from_str(
            r#"{"targets":[{"platform":"sdn-switch"},{"device":"r1"},"dev-3"],
                "desired":{"system":{"ntp":"10.0.0.1"}}}"#,
        )
        .unwrap();
        assert_eq!(task.mode, Mode::Merge);
        assert_eq!(task.targets[0], TargetSpec::Platform { platform: Platform::SdnSwitch });
        assert_eq!(task.targets[1], TargetSpec::Device { device: "r1".into() });
        assert_eq!(task.targets[2], TargetSpec::Name("dev-3".into()));
    }
}

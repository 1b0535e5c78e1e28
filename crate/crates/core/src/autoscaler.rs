// SPDX-License-Identifier: Apache-2.0

//! Threshold-driven failover of containerized controllers.
//!
//! Samples land in a bounded per-instance ring. A policy watches one service
//! (instance type). In failover mode the watched instance is the service's
//! primary; on breach the autoscaler spawns a secondary, waits for it to be
//! ready, and only then disables the primary.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Notify;
use tokio::task::JoinHandle;

use crate::events::{Category, EventLog, Severity};
use crate::provisioner::{InstanceRecord, InstanceSpec, InstanceState, InstanceType, ProvisionError, Provisioner, Role};

pub const RING_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthSample {
    pub instance_id: String,
    pub timestamp: DateTime<Utc>,
    pub utilization: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    Failover,
    ScaleOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePolicy {
    pub service: InstanceType,
    pub threshold: f64,
    pub check_interval_ms: u64,
    pub cooldown_ms: u64,
    pub max_replicas: u32,
    pub mode: ScaleMode,
    /// Average the last n utilization samples; 1 means latest only.
    #[serde(default = "one")]
    pub smoothing: usize,
}

fn one() -> usize {
    1
}

impl ScalePolicy {
    pub fn failover(service: InstanceType) -> Self {
        Self {
            service,
            threshold: 0.8,
            check_interval_ms: 500,
            cooldown_ms: 5000,
            max_replicas: 2,
            mode: ScaleMode::Failover,
            smoothing: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ScaleError> {
        let bad = |m: &str| Err(ScaleError::InvalidPolicy(m.to_string()));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must be in (0, 1]");
        }
        if self.check_interval_ms == 0 {
            return bad("check_interval_ms must be positive");
        }
        if self.cooldown_ms < self.check_interval_ms {
            return bad("cooldown_ms must be at least check_interval_ms");
        }
        if self.max_replicas == 0 || (self.mode == ScaleMode::Failover && self.max_replicas < 2) {
            return bad("max_replicas must be positive, and at least 2 for failover");
        }
        if self.smoothing == 0 || self.smoothing > RING_CAPACITY {
            return bad("smoothing must be in 1..=256");
        }
        Ok(())
    }

    fn heartbeat_window(&self) -> chrono::Duration {
        chrono::Duration::milliseconds(2 * self.check_interval_ms as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    SpawnSecondary,
    DisablePrimary,
    PromoteSecondary,
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Reason {
    Utilization { instance: String, value: f64 },
    Dead { instance: String },
    HeartbeatMissing { instance: String },
    Healthy,
    Cooldown,
    MaxReplicas,
    NothingMonitored,
}

impl Reason {
    pub fn is_breach(&self) -> bool {
        matches!(self, Self::Utilization { .. } | Self::Dead { .. } | Self::HeartbeatMissing { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAction {
    pub kind: ActionKind,
    pub service: InstanceType,
    /// Instance acted on: the primary for spawn and disable, the new
    /// secondary for promote.
    pub target: Option<String>,
    pub reason: Reason,
    pub issued_at: DateTime<Utc>,
    pub completed_at: Option<DateTime<Utc>>,
}

/// One monitored instance: its samples, oldest first, and when monitoring
/// of it began.
#[derive(Debug, Clone)]
pub struct Watched<'a> {
    pub instance_id: &'a str,
    pub samples: &'a [HealthSample],
    pub since: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub policy: &'a ScalePolicy,
    pub watched: Vec<Watched<'a>>,
    pub in_service: u32,
    pub last_action: Option<DateTime<Utc>>,
    pub now: DateTime<Utc>,
}

fn breach_of(policy: &ScalePolicy, w: &Watched<'_>, now: DateTime<Utc>) -> Option<Reason> {
    let instance = w.instance_id.to_string();
    let last_seen = w.samples.last().map(|s| s.timestamp).unwrap_or(w.since).max(w.since);
    if now - last_seen > policy.heartbeat_window() {
        return Some(Reason::HeartbeatMissing { instance });
    }
    let latest = w.samples.last()?;
    if !latest.alive {
        return Some(Reason::Dead { instance });
    }
    let k = policy.smoothing.min(w.samples.len());
    let value = w.samples[w.samples.len() - k..].iter().map(|s| s.utilization).sum::<f64>() / k as f64;
    (value >= policy.threshold).then_some(Reason::Utilization { instance, value })
}

/// The decision rule. Deterministic in its inputs.
pub fn decide(obs: &Observation<'_>) -> (Vec<ActionKind>, Reason) {
    if obs.watched.is_empty() {
        return (vec![ActionKind::NoOp], Reason::NothingMonitored);
    }
    let Some(reason) = obs.watched.iter().find_map(|w| breach_of(obs.policy, w, obs.now)) else {
        return (vec![ActionKind::NoOp], Reason::Healthy);
    };
    let cooldown = chrono::Duration::milliseconds(obs.policy.cooldown_ms as i64);
    if obs.last_action.is_some_and(|at| obs.now - at < cooldown) {
        return (vec![ActionKind::NoOp], Reason::Cooldown);
    }
    if obs.in_service + 1 > obs.policy.max_replicas {
        return (vec![ActionKind::NoOp], Reason::MaxReplicas);
    }
    let kinds = match obs.policy.mode {
        ScaleMode::Failover => vec![ActionKind::SpawnSecondary, ActionKind::DisablePrimary],
        ScaleMode::ScaleOut => vec![ActionKind::SpawnSecondary],
    };
    (kinds, reason)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScaleError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("no policy for {0}")]
    UnknownPolicy(InstanceType),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("secondary failed to provision: {0}")]
    ProvisionFailed(String),
}

/// Cumulative latency histogram, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub count: u64,
    pub sum_ms: u64,
    pub max_ms: u64,
    /// `(upper bound, observations <= bound)`; the last bound is `u64::MAX`.
    pub buckets: Vec<(u64, u64)>,
}

const BUCKETS_MS: [u64; 8] = [250, 500, 1000, 1500, 2000, 5000, 10_000, u64::MAX];

impl Histogram {
    fn from_samples(samples: &[u64]) -> Self {
        Self {
            count: samples.len() as u64,
            sum_ms: samples.iter().sum(),
            max_ms: samples.iter().copied().max().unwrap_or(0),
            buckets: BUCKETS_MS
                .iter()
                .map(|le| (*le, samples.iter().filter(|s| *s <= le).count() as u64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub in_service: u32,
    pub ready: u32,
    pub failovers: u64,
    pub detect_to_ready_ms: Histogram,
}

struct PolicyState {
    policy: ScalePolicy,
    registered_at: DateTime<Utc>,
    last_action: Option<DateTime<Utc>>,
    last_reason: Option<Reason>,
    wake: Arc<Notify>,
}

#[derive(Default)]
struct State {
    rings: HashMap<String, VecDeque<HealthSample>>,
    policies: BTreeMap<InstanceType, PolicyState>,
    latencies: BTreeMap<InstanceType, Vec<u64>>,
    failovers: BTreeMap<InstanceType, u64>,
}

pub struct Autoscaler {
    provisioner: Provisioner,
    events: Arc<EventLog>,
    state: Mutex<State>,
    exec: Mutex<HashMap<InstanceType, Arc<tokio::sync::Mutex<()>>>>,
    loops: Mutex<HashMap<InstanceType, JoinHandle<()>>>,
}

impl std::fmt::Debug for Autoscaler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Autoscaler").finish_non_exhaustive()
    }
}

impl Drop for Autoscaler {
    fn drop(&mut self) {
        for (_, h) in self.loops.lock().drain() {
            h.abort();
        }
    }
}

impl Autoscaler {
    pub fn new(provisioner: Provisioner, events: Arc<EventLog>) -> Self {
        Self {
            provisioner,
            events,
            state: Mutex::new(State::default()),
            exec: Mutex::new(HashMap::new()),
            loops: Mutex::new(HashMap::new()),
        }
    }

    pub fn provisioner(&self) -> &Provisioner {
        &self.provisioner
    }

    /// Store a sample. Returns `false` if it was dropped for arriving out of
    /// order.
    pub fn ingest(&self, sample: HealthSample) -> Result<bool, ScaleError> {
        if !(0.0..=1.0).contains(&sample.utilization) {
            return Err(ScaleError::InvalidSample(format!(
                "utilization {} outside [0, 1]",
                sample.utilization
            )));
        }
        let rec = self
            .provisioner
            .get(&sample.instance_id)
            .map_err(|_| ScaleError::UnknownInstance(sample.instance_id.clone()))?;
        let wake = {
            let mut st = self.state.lock();
            let ring = st.rings.entry(sample.instance_id.clone()).or_default();
            if ring.back().is_some_and(|last| last.timestamp > sample.timestamp) {
                drop(st);
                self.events.emit(
                    Category::Scale,
                    Severity::Warn,
                    json!({"kind": "scale.sample-dropped", "instance": sample.instance_id, "timestamp": sample.timestamp}),
                );
                return Ok(false);
            }
            if ring.len() == RING_CAPACITY {
                ring.pop_front();
            }
            ring.push_back(sample);
            st.policies.get(&rec.instance_type).map(|p| p.wake.clone())
        };
        if let Some(w) = wake {
            w.notify_one();
        }
        Ok(true)
    }

    pub fn samples(&self, instance_id: &str) -> Vec<HealthSample> {
        self.state
            .lock()
            .rings
            .get(instance_id)
            .map(|r| r.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Register or replace the policy for a service. In failover mode the
    /// oldest serving instance becomes primary if the service has none.
    pub fn set_policy(&self, policy: ScalePolicy) -> Result<ScalePolicy, ScaleError> {
        policy.validate()?;
        if policy.mode == ScaleMode::Failover {
            let serving = self.serving(policy.service);
            if !serving.iter().any(|r| r.role == Role::Primary) {
                if let Some(first) = serving.first() {
                    let _ = self.provisioner.set_role(&first.id, Role::Primary);
                }
            }
        }
        {
            let mut st = self.state.lock();
            let now = Utc::now();
            let entry = st.policies.entry(policy.service).or_insert_with(|| PolicyState {
                policy: policy.clone(),
                registered_at: now,
                last_action: None,
                last_reason: None,
                wake: Arc::new(Notify::new()),
            });
            entry.policy = policy.clone();
            entry.registered_at = now;
        }
        self.events.info(Category::Scale, json!({"kind": "scale.policy", "policy": policy}));
        Ok(policy)
    }

    pub fn policies(&self) -> Vec<ScalePolicy> {
        self.state.lock().policies.values().map(|p| p.policy.clone()).collect()
    }

    fn serving(&self, service: InstanceType) -> Vec<InstanceRecord> {
        self.provisioner
            .list()
            .into_iter()
            .filter(|r| r.instance_type == service && r.serving())
            .collect()
    }

    /// Decide on the current state. A non-trivial decision starts the
    /// cooldown immediately so repeated evaluation cannot double-issue.
    pub fn evaluate(&self, service: InstanceType, now: DateTime<Utc>) -> Result<Vec<ScaleAction>, ScaleError> {
        let serving = self.serving(service);
        let mut st = self.state.lock();
        let ps = st.policies.get(&service).ok_or(ScaleError::UnknownPolicy(service))?;
        let policy = ps.policy.clone();
        let (registered_at, last_action) = (ps.registered_at, ps.last_action);
        let monitored: Vec<&InstanceRecord> = match policy.mode {
            ScaleMode::Failover => serving.iter().filter(|r| r.role == Role::Primary).take(1).collect(),
            ScaleMode::ScaleOut => serving.iter().collect(),
        };
        let empty = VecDeque::new();
        let windows: Vec<(String, Vec<HealthSample>, DateTime<Utc>)> = monitored
            .iter()
            .map(|r| {
                let ring = st.rings.get(&r.id).unwrap_or(&empty);
                let since = r.ready_at.unwrap_or(registered_at).max(registered_at);
                (r.id.clone(), ring.iter().cloned().collect(), since)
            })
            .collect();
        let obs = Observation {
            policy: &policy,
            watched: windows
                .iter()
                .map(|(id, s, since)| Watched {
                    instance_id: id,
                    samples: s,
                    since: *since,
                })
                .collect(),
            in_service: serving.len() as u32,
            last_action,
            now,
        };
        let (kinds, reason) = decide(&obs);
        let primary = monitored.first().map(|r| r.id.clone());
        let ps = st.policies.get_mut(&service).expect("checked above");
        if kinds[0] != ActionKind::NoOp {
            ps.last_action = Some(now);
        }
        // Suppressed breaches are logged once per change, not every tick.
        let changed = ps.last_reason.as_ref() != Some(&reason);
        let suppressed = matches!(reason, Reason::Cooldown | Reason::MaxReplicas);
        ps.last_reason = Some(reason.clone());
        drop(st);
        if kinds[0] != ActionKind::NoOp || (suppressed && changed) {
            self.events.emit(
                Category::Scale,
                if reason.is_breach() { Severity::Warn } else { Severity::Info },
                json!({"kind": "scale.decision", "service": service, "actions": kinds, "reason": reason}),
            );
        }
        Ok(kinds
            .into_iter()
            .map(|kind| ScaleAction {
                kind,
                service,
                target: primary.clone(),
                reason: reason.clone(),
                issued_at: now,
                completed_at: None,
            })
            .collect())
    }

    fn exec_lock(&self, service: InstanceType) -> Arc<tokio::sync::Mutex<()>> {
        self.exec.lock().entry(service).or_default().clone()
    }

    fn record(&self, mut action: ScaleAction, severity: Severity, extra: serde_json::Value) -> ScaleAction {
        action.completed_at = Some(Utc::now().max(action.issued_at));
        let mut payload = json!({"kind": "scale.action", "action": action});
        if let (Some(p), serde_json::Value::Object(extra)) = (payload.as_object_mut(), extra) {
            p.extend(extra);
        }
        self.events.emit(Category::Scale, severity, payload);
        action
    }

    /// Carry out a decision. Actions for one service never overlap. The
    /// primary is disabled only once the secondary is ready.
    pub async fn execute(&self, plan: Vec<ScaleAction>) -> Result<Vec<ScaleAction>, ScaleError> {
        let Some(service) = plan.first().map(|a| a.service) else {
            return Ok(Vec::new());
        };
        let lock = self.exec_lock(service);
        let _guard = lock.lock().await;
        let mut done = Vec::new();
        let mut secondary: Option<String> = None;
        for action in plan {
            match action.kind {
                ActionKind::NoOp => done.push(self.record(action, Severity::Info, json!({}))),
                ActionKind::SpawnSecondary => {
                    let id = match self.spawn_secondary(&action).await {
                        Ok(id) => id,
                        Err(e) => {
                            self.events.emit(
                                Category::Scale,
                                Severity::Error,
                                json!({"kind": "scale.alarm", "service": service, "error": e.to_string(), "primary": action.target}),
                            );
                            return Err(e);
                        }
                    };
                    let action = self.record(action, Severity::Info, json!({"secondary": id}));
                    let latency = (action.completed_at.expect("just set") - action.issued_at)
                        .num_milliseconds()
                        .max(0) as u64;
                    self.state.lock().latencies.entry(service).or_default().push(latency);
                    secondary = Some(id);
                    done.push(action);
                }
                ActionKind::DisablePrimary => {
                    let Some(primary) = action.target.clone() else { continue };
                    if secondary.is_none() {
                        // Never leave the service without a replacement.
                        continue;
                    }
                    self.provisioner
                        .disable(&primary)
                        .and_then(|_| self.provisioner.set_role(&primary, Role::None))
                        .map_err(|e| ScaleError::ProvisionFailed(e.to_string()))?;
                    done.push(self.record(action, Severity::Info, json!({})));
                    let new_primary = secondary.clone().expect("checked above");
                    let promote = ScaleAction {
                        kind: ActionKind::PromoteSecondary,
                        target: Some(new_primary.clone()),
                        issued_at: Utc::now(),
                        completed_at: None,
                        ..done.last().cloned().expect("just pushed")
                    };
                    self.provisioner
                        .set_role(&new_primary, Role::Primary)
                        .map_err(|e| ScaleError::ProvisionFailed(e.to_string()))?;
                    done.push(self.record(promote, Severity::Info, json!({})));
                    *self.state.lock().failovers.entry(service).or_default() += 1;
                }
                ActionKind::PromoteSecondary => {
                    if let Some(id) = &action.target {
                        self.provisioner
                            .set_role(id, Role::Primary)
                            .map_err(|e| ScaleError::ProvisionFailed(e.to_string()))?;
                    }
                    done.push(self.record(action, Severity::Info, json!({})));
                }
            }
        }
        Ok(done)
    }

    async fn spawn_secondary(&self, action: &ScaleAction) -> Result<String, ScaleError> {
        let template = action
            .target
            .as_deref()
            .and_then(|id| self.provisioner.get(id).ok())
            .or_else(|| {
                self.provisioner
                    .list()
                    .into_iter()
                    .rev()
                    .find(|r| r.instance_type == action.service && r.is_live())
            })
            .ok_or_else(|| ScaleError::ProvisionFailed(format!("no {} instance to clone", action.service)))?;
        let spec = InstanceSpec {
            host: template.host_device_id.clone(),
            tenant: template.tenant.clone(),
            count: 1,
            instance_type: action.service,
            kind: template.kind,
            validate: false,
            fresh_install: false,
        };
        let failed = |e: ProvisionError| ScaleError::ProvisionFailed(e.to_string());
        let rec = self.provisioner.submit_as(&spec, Role::Secondary).map_err(failed)?.remove(0);
        let rec = self
            .provisioner
            .wait_settled(&rec.id, Duration::from_secs(120))
            .await
            .map_err(failed)?;
        match rec.state {
            InstanceState::Ready => Ok(rec.id),
            _ => Err(ScaleError::ProvisionFailed(rec.error.unwrap_or_else(|| format!("{:?}", rec.state)))),
        }
    }

    /// Evaluate and, on breach, execute. Returns the executed actions.
    pub async fn tick(&self, service: InstanceType) -> Result<Vec<ScaleAction>, ScaleError> {
        let plan = self.evaluate(service, Utc::now())?;
        if plan.iter().all(|a| a.kind == ActionKind::NoOp) {
            return Ok(Vec::new());
        }
        self.execute(plan).await
    }

    /// Start the control loop for a registered policy: every check
    /// interval, and immediately whenever a sample arrives.
    pub fn start(self: &Arc<Self>, service: InstanceType) -> Result<(), ScaleError> {
        let (wake, interval) = {
            let st = self.state.lock();
            let ps = st.policies.get(&service).ok_or(ScaleError::UnknownPolicy(service))?;
            (ps.wake.clone(), Duration::from_millis(ps.policy.check_interval_ms))
        };
        let weak = Arc::downgrade(self);
        let handle = tokio::spawn(async move {
            loop {
                let _ = tokio::time::timeout(interval, wake.notified()).await;
                let Some(this) = weak.upgrade() else { return };
                if let Err(e) = this.tick(service).await {
                    tracing::warn!(%service, "autoscaler tick: {e}");
                }
            }
        });
        if let Some(old) = self.loops.lock().insert(service, handle) {
            old.abort();
        }
        Ok(())
    }

    pub fn stop(&self, service: InstanceType) {
        if let Some(h) = self.loops.lock().remove(&service) {
            h.abort();
        }
    }

    pub fn metrics(&self) -> BTreeMap<InstanceType, ServiceMetrics> {
        let records = self.provisioner.list();
        let st = self.state.lock();
        let mut services: Vec<InstanceType> = st.policies.keys().copied().collect();
        services.extend(records.iter().map(|r| r.instance_type));
        services.sort();
        services.dedup();
        services
            .into_iter()
            .map(|s| {
                let of = records.iter().filter(|r| r.instance_type == s);
                let m = ServiceMetrics {
                    in_service: of.clone().filter(|r| r.serving()).count() as u32,
                    ready: of.filter(|r| r.state == InstanceState::Ready).count() as u32,
                    failovers: st.failovers.get(&s).copied().unwrap_or(0),
                    detect_to_ready_ms: Histogram::from_samples(st.latencies.get(&s).map(Vec::as_slice).unwrap_or(&[])),
                };
                (s, m)
            })
            .collect()
    }
}

/// Think times of the scripted operator who performs a failover by hand
/// through the dashboard. These are the documented stand-in for a manual
/// procedure and sum to 17 s.
pub const HUMAN_STEPS: [(&str, Duration); 5] = [
    ("notice the utilization alert on the dashboard", Duration::from_secs(4)),
    ("inspect the primary controller's metrics", Duration::from_secs(3)),
    ("fill in and submit the provisioning form", Duration::from_secs(4)),
    ("refresh until the secondary shows ready", Duration::from_secs(3)),
    ("disable the primary controller", Duration::from_secs(3)),
];

/// Perform the failover the way an operator would, pausing `scale` times
/// each documented think time. Returns the wall-clock duration.
pub async fn human_paced_failover(
    provisioner: &Provisioner,
    primary_id: &str,
    scale: f64,
) -> Result<Duration, ScaleError> {
    let started = tokio::time::Instant::now();
    let think = |i: usize| tokio::time::sleep(HUMAN_STEPS[i].1.mul_f64(scale));
    think(0).await;
    think(1).await;
    let primary = provisioner
        .get(primary_id)
        .map_err(|_| ScaleError::UnknownInstance(primary_id.to_string()))?;
    think(2).await;
    let spec = InstanceSpec {
        host: primary.host_device_id.clone(),
        tenant: primary.tenant.clone(),
        count: 1,
        instance_type: primary.instance_type,
        kind: primary.kind,
        validate: false,
        fresh_install: false,
    };
    let failed = |e: ProvisionError| ScaleError::ProvisionFailed(e.to_string());
    let rec = provisioner.submit_as(&spec, Role::Secondary).map_err(failed)?.remove(0);
    let rec = provisioner
        .wait_settled(&rec.id, Duration::from_secs(120))
        .await
        .map_err(failed)?;
    think(3).await;
    if rec.state != InstanceState::Ready {
        return Err(ScaleError::ProvisionFailed(rec.error.unwrap_or_default()));
    }
    think(4).await;
    provisioner.disable(primary_id).map_err(failed)?;
    provisioner.set_role(&rec.id, Role::Primary).map_err(failed)?;
    Ok(started.elapsed())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(ms: i64) -> DateTime<Utc> {
        DateTime::<Utc>::from_timestamp_millis(1_700_000_000_000 + ms).unwrap()
    }

    fn sample(ms: i64, u: f64, alive: bool) -> HealthSample {
        HealthSample {
            instance_id: "inst-1".into(),
            timestamp: at(ms),
            utilization: u,
            alive,
        }
    }

    fn obs<'a>(policy: &'a ScalePolicy, samples: &'a [HealthSample], last_action: Option<i64>, now: i64) -> Observation<'a> {
        Observation {
            policy,
            watched: vec![Watched {
                instance_id: "inst-1",
                samples,
                since: at(0),
            }],
            in_service: 1,
            last_action: last_action.map(at),
            now: at(now),
        }
    }

    #[test]
    fn breach_spawns_then_disables() {
        let p = ScalePolicy::failover(InstanceType::RyuController);
        let s = [sample(100, 0.95, true)];
        let (kinds, reason) = decide(&obs(&p, &s, None, 200));
        assert_eq!(kinds, [ActionKind::SpawnSecondary, ActionKind::DisablePrimary]);
        assert!(matches!(reason, Reason::Utilization { value, .. } if value == 0.95));
    }

    #[test]
    fn healthy_cooldown_dead_and_silent() {
        let p = ScalePolicy::failover(InstanceType::RyuController);
        assert_eq!(decide(&obs(&p, &[sample(100, 0.5, true)], None, 200)), (vec![ActionKind::NoOp], Reason::Healthy));
        assert_eq!(
            decide(&obs(&p, &[sample(100, 0.95, true)], Some(0), 200)),
            (vec![ActionKind::NoOp], Reason::Cooldown)
        );
        let (k, r) = decide(&obs(&p, &[sample(100, 0.1, false)], None, 200));
        assert_eq!((k[0], r), (ActionKind::SpawnSecondary, Reason::Dead { instance: "inst-1".into() }));
        // 2 x 500 ms without a sample
        let (k, _) = decide(&obs(&p, &[sample(100, 0.1, true)], None, 1100));
        assert_eq!(k[0], ActionKind::NoOp);
        let (k, r) = decide(&obs(&p, &[sample(100, 0.1, true)], None, 1101));
        assert_eq!((k[0], r), (ActionKind::SpawnSecondary, Reason::HeartbeatMissing { instance: "inst-1".into() }));
    }

    #[test]
    fn replica_bound() {
        let p = ScalePolicy::failover(InstanceType::RyuController);
        let s = [sample(100, 0.95, true)];
        let mut o = obs(&p, &s, None, 200);
        o.in_service = 2;
        assert_eq!(decide(&o), (vec![ActionKind::NoOp], Reason::MaxReplicas));
    }

    #[test]
    fn policy_validation() {
        let ok = ScalePolicy::failover(InstanceType::OnosController);
        assert!(ok.validate().is_ok());
        for bad in [
            ScalePolicy { threshold: 0.0, ..ok.clone() },
            ScalePolicy { threshold: 1.2, ..ok.clone() },
            ScalePolicy { cooldown_ms: 100, ..ok.clone() },
            ScalePolicy { max_replicas: 1, ..ok.clone() },
            ScalePolicy { smoothing: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(ScalePolicy { max_replicas: 1, mode: ScaleMode::ScaleOut, ..ok }.validate().is_ok());
    }

    #[test]
    fn human_steps_sum_to_documented_total() {
        let total: Duration = HUMAN_STEPS.iter().map(|(_, d)| *d).sum();
        assert_eq!(total, Duration::from_secs(17));
    }

    #[test]
    fn histogram_is_cumulative() {
        let h = Histogram::from_samples(&[100, 600, 1200, 3000]);
        assert_eq!((h.count, h.sum_ms, h.max_ms), (4, 4900, 3000));
        let le = |b: u64| h.buckets.iter().find(|(x, _)| *x == b).unwrap().1;
        assert_eq!((le(250), le(1000), le(2000), le(u64::MAX)), (1, 2, 3, 4));
    }
}

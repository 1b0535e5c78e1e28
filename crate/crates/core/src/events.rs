// SPDX-License-Identifier: Apache-2.0

//! Append-only event stream shared by every subsystem.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

pub const DEFAULT_RETENTION: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Device,
    Task,
    Instance,
    Scale,
    Bgp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub category: Category,
    pub severity: Severity,
    pub payload: Value,
}

impl EventRecord {
    /// The `kind` field every emitter puts in its payload.
    pub fn kind(&self) -> &str {
        self.payload.get("kind").and_then(Value::as_str).unwrap_or("")
    }
}

struct Inner {
    last_seq: u64,
    ring: VecDeque<EventRecord>,
    file: Option<File>,
}

/// Multi-producer, single-order log. Keeps the newest `retention` events in
/// memory and optionally mirrors every event to a JSON-lines file.
pub struct EventLog {
    inner: Mutex<Inner>,
    retention: usize,
    tx: watch::Sender<u64>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("last_seq", &self.last_seq())
            .finish()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION)
    }
}

impl EventLog {
    pub fn new(retention: usize) -> Self {
        let (tx, _) = watch::channel(0);
        Self {
            inner: Mutex::new(Inner {
                last_seq: 0,
                ring: VecDeque::new(),
                file: None,
            }),
            retention: retention.max(1),
            tx,
        }
    }

    pub fn with_file(retention: usize, path: &Path) -> std::io::Result<Self> {
        let log = Self::new(retention);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        log.inner.lock().file = Some(file);
        Ok(log)
    }

    pub fn emit(&self, category: Category, severity: Severity, payload: Value) -> EventRecord {
        let record = {
            let mut inner = self.inner.lock();
            inner.last_seq += 1;
            let record = EventRecord {
                seq: inner.last_seq,
                timestamp: Utc::now(),
                category,
                severity,
                payload,
            };
            if let Some(file) = inner.file.as_mut() {
                let line = serde_json::to_string(&record).expect("events serialize");
                if let Err(e) = writeln!(file, "{line}") {
                    tracing::warn!("event file write failed: {e}");
                }
            }
            inner.ring.push_back(record.clone());
            while inner.ring.len() > self.retention {
                inner.ring.pop_front();
            }
            record
        };
        self.tx.send_replace(record.seq);
        record
    }

    pub fn info(&self, category: Category, payload: Value) -> EventRecord {
        self.emit(category, Severity::Info, payload)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().last_seq
    }

    /// Retained events with `seq > since`, in order.
    pub fn since(&self, since: u64) -> Vec<EventRecord> {
        let inner = self.inner.lock();
        let start = inner.ring.partition_point(|e| e.seq <= since);
        inner.ring.range(start..).cloned().collect()
    }

    pub fn all(&self) -> Vec<EventRecord> {
        self.since(0)
    }

    /// Long poll: returns as soon as an event newer than `since` exists, or
    /// an empty list after `timeout`.
    pub async fn wait_since(&self, since: u64, timeout: Duration) -> Vec<EventRecord> {
        let mut rx = self.tx.subscribe();
        let _ = tokio::time::timeout(timeout, rx.wait_for(|seq| *seq > since)).await;
        self.since(since)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_is_strictly_increasing_and_since_filters() {
        let log = EventLog::new(100);
        for i in 0..10 {
            log.info(Category::Device, json!({"kind": "x", "i": i}));
        }
        let after5: Vec<u64> = log.since(5).iter().map(|e| e.seq).collect();
        assert_eq!(after5, [6, 7, 8, 9, 10]);
        assert!(log.since(10).is_empty());
    }

    #[test]
    fn retention_drops_oldest() {
        let log = EventLog::new(3);
        for _ in 0..5 {
            log.info(Category::Task, json!({}));
        }
        let seqs: Vec<u64> = log.all().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [3, 4, 5]);
        assert_eq!(log.last_seq(), 5);
    }

    #[test]
    fn mirrors_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::with_file(2, &path).unwrap();
        for _ in 0..4 {
            log.info(Category::Bgp, json!({"kind": "k"}));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        let last: EventRecord = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(last.seq, 4);
        assert_eq!(last.kind(), "k");
    }

    #[tokio::test]
    async fn long_poll_wakes_on_emit() {
        let log = std::sync::Arc::new(EventLog::default());
        let l2 = log.clone();
        let waiter = tokio::spawn(async move { l2.wait_since(0, Duration::from_secs(5)).await });
        tokio::time::sleep(Duration::from_millis(20)).await;
        log.info(Category::Scale, json!({}));
        let got = waiter.await.unwrap();
        assert_eq!(got.len(), 1);
        let empty = log.wait_since(1, Duration::from_millis(10)).await;
        assert!(empty.is_empty());
    }
}

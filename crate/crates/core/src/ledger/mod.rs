//! Tenant-scoped publish/subscribe over persistent append-only ledgers.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data_dir>/topics/<tenant>/<category>/<topic>/
//!     00000000000000000000.log   frames, see [`frame`]
//!     00000000000000000000.idx   (u64le offset, u64le file position) every N offsets
//!     cursors.json               subscription -> next offset
//! ```
//!
//! Offsets are dense per topic, assigned at publish and never reused. Event
//! timestamps are accepted in any order.

pub mod frame;
mod topic;

use crate::domain::{TimestampMs, TopicName};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;
use subtle::ConstantTimeEq;
use thiserror::Error;
use topic::TopicLedger;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("capability for tenant {tenant:?} cannot access {topic}")]
    Forbidden { tenant: String, topic: TopicName },
    #[error("unknown topic {0}")]
    UnknownTopic(TopicName),
    #[error("offset {requested} out of range for ledger of length {len}")]
    OffsetOutOfRange { requested: u64, len: u64 },
    #[error("checksum mismatch in {topic} at offset {offset}")]
    ChecksumMismatch { topic: TopicName, offset: u64 },
    #[error("ledger {topic} is corrupt from offset {offset}; appends refused")]
    Corrupted { topic: TopicName, offset: u64 },
    #[error("invalid time range [{t0}, {t1})")]
    InvalidRange { t0: TimestampMs, t1: TimestampMs },
    #[error("{context}: {source}")]
    Storage {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlushPolicy {
    /// fsync after every append call.
    #[default]
    EveryRecord,
    /// Hand writes to the OS; survives process crashes, not power loss.
    Os,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TenantCredential {
    pub name: String,
    pub secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub tenants: Vec<TenantCredential>,
    pub segment_bytes: u64,
    pub index_interval: u64,
    pub flush: FlushPolicy,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            tenants: Vec::new(),
            segment_bytes: 64 * 1024 * 1024,
            index_interval: 1024,
            flush: FlushPolicy::EveryRecord,
        }
    }
}

/// Proof of authentication for one tenant. Only [`Broker::authenticate`] creates these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capability {
    tenant: Arc<str>,
}

impl Capability {
    pub fn tenant(&self) -> &str {
        &self.tenant
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub topic: TopicName,
    pub offset: u64,
    pub ts_ms: TimestampMs,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPosition {
    Earliest,
    Latest,
    AtOffset(u64),
}

/// A read position on one topic. Confined to one consumer at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cursor {
    topic: TopicName,
    next_offset: u64,
    subscription_id: String,
}

impl Cursor {
    pub fn topic(&self) -> &TopicName {
        &self.topic
    }
    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }
    pub fn subscription_id(&self) -> &str {
        &self.subscription_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub topic: TopicName,
    pub total_records: u64,
    pub first_ts_ms: Option<TimestampMs>,
    pub last_ts_ms: Option<TimestampMs>,
}

pub struct Broker {
    config: BrokerConfig,
    credentials: BTreeMap<String, String>,
    topics: RwLock<BTreeMap<TopicName, Arc<TopicLedger>>>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("data_dir", &self.config.data_dir)
            .field("topics", &self.topics.read().len())
            .finish()
    }
}

impl Broker {
    /// Open the broker, recovering every topic found under the data directory.
    pub fn open(config: BrokerConfig) -> Result<Self, LedgerError> {
        let root = config.data_dir.join("topics");
        std::fs::create_dir_all(&root).map_err(|source| LedgerError::Storage {
            context: format!("creating {}", root.display()),
            source,
        })?;
        let credentials = config
            .tenants
            .iter()
            .map(|t| (t.name.clone(), t.secret.clone()))
            .collect();
        let broker = Self { config, credentials, topics: RwLock::new(BTreeMap::new()) };
        for name in discover_topics(&root)? {
            let ledger = broker.open_ledger(name.clone())?;
            broker.topics.write().insert(name, Arc::new(ledger));
        }
        Ok(broker)
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    fn open_ledger(&self, name: TopicName) -> Result<TopicLedger, LedgerError> {
        let dir = self
            .config
            .data_dir
            .join("topics")
            .join(name.tenant())
            .join(name.category())
            .join(name.topic());
        TopicLedger::open(
            name,
            dir,
            self.config.segment_bytes,
            self.config.index_interval.max(1),
            self.config.flush,
        )
    }

    /// Unknown tenants and wrong secrets produce the same error.
    pub fn authenticate(&self, tenant: &str, secret: &str) -> Result<Capability, LedgerError> {
        let expected = self.credentials.get(tenant);
        // Compare against a dummy for unknown tenants so both paths do the same work.
        let reference = expected.map(String::as_str).unwrap_or("\u{0}unknown-tenant\u{0}");
        let matches: bool = reference.as_bytes().ct_eq(secret.as_bytes()).into();
        if expected.is_some() && matches {
            Ok(Capability { tenant: Arc::from(tenant) })
        } else {
            Err(LedgerError::AuthFailed)
        }
    }

    fn check(&self, topic: &TopicName, cap: &Capability) -> Result<(), LedgerError> {
        if topic.tenant() != cap.tenant() {
            return Err(LedgerError::Forbidden { tenant: cap.tenant().to_string(), topic: topic.clone() });
        }
        Ok(())
    }

    fn ledger(&self, topic: &TopicName, cap: &Capability) -> Result<Arc<TopicLedger>, LedgerError> {
        self.check(topic, cap)?;
        self.topics
            .read()
            .get(topic)
            .cloned()
            .ok_or_else(|| LedgerError::UnknownTopic(topic.clone()))
    }

    /// Idempotent: an existing topic keeps its data.
    pub fn create_topic(&self, name: &TopicName, cap: &Capability) -> Result<(), LedgerError> {
        self.check(name, cap)?;
        if self.topics.read().contains_key(name) {
            return Ok(());
        }
        let mut topics = self.topics.write();
        if !topics.contains_key(name) {
            let ledger = self.open_ledger(name.clone())?;
            topics.insert(name.clone(), Arc::new(ledger));
        }
        Ok(())
    }

    /// Durably append one record; returns its offset.
    pub fn publish(
        &self,
        topic: &TopicName,
        ts_ms: TimestampMs,
        payload: &[u8],
        cap: &Capability,
    ) -> Result<u64, LedgerError> {
        self.ledger(topic, cap)?.append(&[(ts_ms, payload)])
    }

    /// Append records with consecutive offsets; returns the first offset.
    pub fn publish_batch(
        &self,
        topic: &TopicName,
        records: &[(TimestampMs, &[u8])],
        cap: &Capability,
    ) -> Result<u64, LedgerError> {
        self.ledger(topic, cap)?.append(records)
    }

    /// A reopened subscription resumes from its committed position regardless of `start`.
    pub fn open_cursor(
        &self,
        topic: &TopicName,
        start: StartPosition,
        subscription_id: &str,
        cap: &Capability,
    ) -> Result<Cursor, LedgerError> {
        let ledger = self.ledger(topic, cap)?;
        let len = ledger.len();
        let next_offset = match ledger.cursor_position(subscription_id) {
            Some(pos) => pos.min(len),
            None => match start {
                StartPosition::Earliest => 0,
                StartPosition::Latest => len,
                StartPosition::AtOffset(n) if n <= len => n,
                StartPosition::AtOffset(n) => {
                    return Err(LedgerError::OffsetOutOfRange { requested: n, len })
                }
            },
        };
        Ok(Cursor { topic: topic.clone(), next_offset, subscription_id: subscription_id.to_string() })
    }

    /// Reposition a cursor explicitly, ignoring any committed position.
    pub fn seek_cursor(&self, cursor: &mut Cursor, offset: u64) -> Result<(), LedgerError> {
        let len = self.topic_len(&cursor.topic)?;
        if offset > len {
            return Err(LedgerError::OffsetOutOfRange { requested: offset, len });
        }
        cursor.next_offset = offset;
        Ok(())
    }

    fn topic_len(&self, topic: &TopicName) -> Result<u64, LedgerError> {
        self.topics
            .read()
            .get(topic)
            .map(|l| l.len())
            .ok_or_else(|| LedgerError::UnknownTopic(topic.clone()))
    }

    /// Non-blocking read of up to `max` records; advances the cursor.
    pub fn read_next(&self, cursor: &mut Cursor, max: usize) -> Result<Vec<RecordEnvelope>, LedgerError> {
        let ledger = self
            .topics
            .read()
            .get(&cursor.topic)
            .cloned()
            .ok_or_else(|| LedgerError::UnknownTopic(cursor.topic.clone()))?;
        let batch = ledger.read(cursor.next_offset, max.max(1))?;
        if let Some(last) = batch.last() {
            cursor.next_offset = last.offset + 1;
        }
        Ok(batch)
    }

    /// Like [`Broker::read_next`], waiting at most `wait` for new records when caught up.
    pub fn read_next_wait(
        &self,
        cursor: &mut Cursor,
        max: usize,
        wait: Duration,
    ) -> Result<Vec<RecordEnvelope>, LedgerError> {
        let batch = self.read_next(cursor, max)?;
        if !batch.is_empty() || wait.is_zero() {
            return Ok(batch);
        }
        if let Some(ledger) = self.topics.read().get(&cursor.topic).cloned() {
            ledger.wait_for_growth(cursor.next_offset, wait);
        }
        self.read_next(cursor, max)
    }

    /// Persist the cursor's position for its subscription.
    pub fn commit_cursor(&self, cursor: &Cursor) -> Result<(), LedgerError> {
        let ledger = self
            .topics
            .read()
            .get(&cursor.topic)
            .cloned()
            .ok_or_else(|| LedgerError::UnknownTopic(cursor.topic.clone()))?;
        ledger.commit_cursor(&cursor.subscription_id, cursor.next_offset)
    }

    /// Records with `t0 <= ts_ms < t1`, by event time.
    pub fn count_in_range(
        &self,
        topic: &TopicName,
        t0: TimestampMs,
        t1: TimestampMs,
        cap: &Capability,
    ) -> Result<u64, LedgerError> {
        if t0 > t1 {
            return Err(LedgerError::InvalidRange { t0, t1 });
        }
        self.ledger(topic, cap)?.count_in_range(t0, t1)
    }

    /// Visit records with `t0 <= ts_ms < t1` in offset order.
    pub fn scan_range(
        &self,
        topic: &TopicName,
        t0: TimestampMs,
        t1: TimestampMs,
        cap: &Capability,
        f: impl FnMut(RecordEnvelope),
    ) -> Result<(), LedgerError> {
        if t0 > t1 {
            return Err(LedgerError::InvalidRange { t0, t1 });
        }
        self.ledger(topic, cap)?.for_each_in_range(t0, t1, f)
    }

    /// Every record of the topic from offset 0.
    pub fn read_all(&self, topic: &TopicName, cap: &Capability) -> Result<Vec<RecordEnvelope>, LedgerError> {
        let ledger = self.ledger(topic, cap)?;
        let mut out = Vec::new();
        let mut from = 0;
        loop {
            let batch = ledger.read(from, 65_536)?;
            match batch.last() {
                Some(last) => from = last.offset + 1,
                None => break,
            }
            out.extend(batch);
        }
        Ok(out)
    }

    pub fn topics(&self, cap: &Capability) -> Vec<TopicName> {
        self.topics.read().keys().filter(|t| t.tenant() == cap.tenant()).cloned().collect()
    }

    pub fn topic_stats(&self, topic: &TopicName, cap: &Capability) -> Result<TopicStats, LedgerError> {
        let (total_records, first_ts_ms, last_ts_ms) = self.ledger(topic, cap)?.stats();
        Ok(TopicStats { topic: topic.clone(), total_records, first_ts_ms, last_ts_ms })
    }

    pub fn all_topic_stats(&self, cap: &Capability) -> Vec<TopicStats> {
        self.topics(cap)
            .into_iter()
            .filter_map(|t| self.topic_stats(&t, cap).ok())
            .collect()
    }
}

fn discover_topics(root: &std::path::Path) -> Result<Vec<TopicName>, LedgerError> {
    let list = |p: &std::path::Path| -> Result<Vec<(String, PathBuf)>, LedgerError> {
        let mut v = Vec::new();
        for e in std::fs::read_dir(p).map_err(|source| LedgerError::Storage {
            context: format!("listing {}", p.display()),
            source,
        })? {
            let e = e.map_err(|source| LedgerError::Storage { context: "listing topics".into(), source })?;
            if e.path().is_dir() {
                if let Some(s) = e.file_name().to_str() {
                    v.push((s.to_string(), e.path()));
                }
            }
        }
        Ok(v)
    };
    let mut names = Vec::new();
    for (tenant, tp) in list(root)? {
        for (category, cp) in list(&tp)? {
            for (topic, _) in list(&cp)? {
                if let Ok(n) = TopicName::new(&tenant, &category, &topic) {
                    names.push(n);
                }
            }
        }
    }
    Ok(names)
}

//! Drives a [`JoinEngine`] from broker cursors and publishes the joined stream.
//!
//! A checkpoint holds the engine snapshot, the input offsets it corresponds to,
//! and the output length at that moment. On restart the engine resumes from the
//! checkpoint and skips any `(vehicle, window)` already published after it.

use super::config::JoinConfig;
use super::context::StaticContext;
use super::engine::{EngineSnapshot, Ingest, JoinCounters, JoinEngine};
use super::output::JoinOutput;
use super::JoinError;
use crate::domain::{TimestampMs, WindowId};
use crate::ledger::{Broker, Capability, Cursor, StartPosition};
use crate::sim::SimClock;
use crate::static_data::StaticBundle;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    offsets: BTreeMap<String, u64>,
    output_len: u64,
    engine: EngineSnapshot,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JoinStats {
    pub ingested: u64,
    pub published: u64,
    pub duplicates_skipped: u64,
    pub checkpoints: u64,
    pub counters: JoinCounters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Poll {
    pub ingested: usize,
    pub published: usize,
    /// Every input returned no records in this round.
    pub caught_up: bool,
}

struct Input {
    tag: String,
    cursor: Cursor,
    last_ts: TimestampMs,
    drained: bool,
}

/// Loads the static context the join enriches with.
pub fn load_context(config: &JoinConfig) -> Result<StaticContext, JoinError> {
    match &config.static_dir {
        Some(dir) => Ok(StaticContext::from_bundle(&StaticBundle::load(dir)?, config.tmc_max_distance_m)),
        None => Ok(StaticContext::empty()),
    }
}

pub struct JoinRunner<'b> {
    broker: &'b Broker,
    cap: Capability,
    config: JoinConfig,
    engine: JoinEngine,
    inputs: Vec<Input>,
    dedup: HashSet<(String, WindowId)>,
    since_checkpoint: u64,
    next_refresh_ms: Option<TimestampMs>,
    stats: JoinStats,
}

impl<'b> JoinRunner<'b> {
    pub fn open(broker: &'b Broker, cap: &Capability, config: JoinConfig, ctx: Arc<StaticContext>) -> Result<Self, JoinError> {
        config.validate()?;
        broker.create_topic(&config.output, cap)?;
        let mut engine = JoinEngine::new(&config, ctx);
        let mut inputs = Vec::with_capacity(config.inputs.len());
        for i in &config.inputs {
            broker.create_topic(&i.topic, cap)?;
            let sub = format!("{}/{}", config.subscription, i.tag);
            let mut cursor = broker.open_cursor(&i.topic, StartPosition::Earliest, &sub, cap)?;
            broker.seek_cursor(&mut cursor, 0)?;
            inputs.push(Input { tag: i.tag.clone(), cursor, last_ts: TimestampMs::MIN, drained: false });
        }

        let mut output_from = 0;
        if let Some(path) = config.checkpoint_path.as_deref().filter(|p| p.exists()) {
            let cp = read_checkpoint(path)?;
            engine.restore(cp.engine)?;
            for input in &mut inputs {
                let off = cp.offsets.get(&input.tag).copied().unwrap_or(0);
                broker.seek_cursor(&mut input.cursor, off)?;
            }
            output_from = cp.output_len;
        }
        let mut dedup = HashSet::new();
        let mut bad = None;
        broker.scan_range(&config.output, TimestampMs::MIN, TimestampMs::MAX, cap, |env| {
            if env.offset < output_from {
                return;
            }
            match serde_json::from_slice::<JoinOutput>(&env.payload) {
                Ok(o) => {
                    let (v, w) = o.key();
                    dedup.insert((v.to_string(), w));
                }
                Err(e) => bad = Some(format!("output offset {}: {e}", env.offset)),
            }
        })?;
        if let Some(msg) = bad {
            return Err(JoinError::Checkpoint(msg));
        }

        let stats = JoinStats { counters: engine.counters().clone(), ..Default::default() };
        Ok(Self {
            broker,
            cap: cap.clone(),
            config,
            engine,
            inputs,
            dedup,
            since_checkpoint: 0,
            next_refresh_ms: None,
            stats,
        })
    }

    pub fn engine(&self) -> &JoinEngine {
        &self.engine
    }

    pub fn stats(&self) -> JoinStats {
        JoinStats { counters: self.engine.counters().clone(), ..self.stats.clone() }
    }

    /// Read one batch from the input furthest behind in event time, then emit ready windows.
    pub fn poll(&mut self) -> Result<Poll, JoinError> {
        let mut poll = Poll::default();
        let pick = self
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, i)| !i.drained)
            .min_by_key(|(_, i)| i.last_ts)
            .map(|(n, _)| n);
        match pick {
            None => {
                poll.caught_up = true;
                for i in &mut self.inputs {
                    i.drained = false;
                }
            }
            Some(n) => {
                let batch = self.broker.read_next(&mut self.inputs[n].cursor, self.config.read_batch)?;
                if batch.is_empty() {
                    self.inputs[n].drained = true;
                }
                for env in &batch {
                    if let Ingest::Rejected(msg) = self.engine.ingest(n, env) {
                        tracing::warn!(source = %self.inputs[n].tag, offset = env.offset, "rejected record: {msg}");
                    }
                    self.inputs[n].last_ts = self.inputs[n].last_ts.max(env.ts_ms);
                }
                poll.ingested = batch.len();
                self.stats.ingested += batch.len() as u64;
                self.since_checkpoint += batch.len() as u64;
            }
        }
        self.maybe_refresh()?;
        let out = self.engine.close_ready();
        poll.published = self.publish(out)?;
        if self.since_checkpoint >= self.config.checkpoint_every_records {
            self.checkpoint()?;
        }
        Ok(poll)
    }

    /// Consume everything currently in the inputs, flush all windows and checkpoint.
    pub fn run_to_end(&mut self) -> Result<JoinStats, JoinError> {
        while !self.poll()?.caught_up {}
        let out = self.engine.finish();
        self.publish(out)?;
        self.checkpoint()?;
        Ok(self.stats())
    }

    /// Follow the inputs until `stop` is set, advancing idle sources against the simulation clock.
    pub fn run_live(&mut self, clock: &SimClock, stop: &AtomicBool) -> Result<JoinStats, JoinError> {
        while !stop.load(Ordering::Relaxed) {
            let p = self.poll()?;
            if p.caught_up {
                self.engine.advance_idle(clock.now_ms());
                let out = self.engine.close_ready();
                self.publish(out)?;
                std::thread::sleep(Duration::from_millis(20));
            }
        }
        self.checkpoint()?;
        Ok(self.stats())
    }

    fn maybe_refresh(&mut self) -> Result<(), JoinError> {
        let Some(wm) = self.engine.min_watermark() else { return Ok(()) };
        let period = self.config.static_refresh_ms;
        match self.next_refresh_ms {
            None => self.next_refresh_ms = Some(wm.div_euclid(period) * period + period),
            Some(next) if wm >= next => {
                if self.config.static_dir.is_some() {
                    self.engine.set_context(Arc::new(load_context(&self.config)?));
                }
                self.next_refresh_ms = Some(wm.div_euclid(period) * period + period);
            }
            Some(_) => {}
        }
        Ok(())
    }

    fn publish(&mut self, outputs: Vec<JoinOutput>) -> Result<usize, JoinError> {
        let mut records = Vec::with_capacity(outputs.len());
        for o in outputs {
            let (v, w) = o.key();
            if self.dedup.remove(&(v.to_string(), w)) {
                self.stats.duplicates_skipped += 1;
                continue;
            }
            records.push((o.ts_ms(), o.to_bytes()));
        }
        if records.is_empty() {
            return Ok(0);
        }
        let refs: Vec<(TimestampMs, &[u8])> = records.iter().map(|(t, b)| (*t, b.as_slice())).collect();
        self.broker.publish_batch(&self.config.output, &refs, &self.cap)?;
        self.stats.published += records.len() as u64;
        Ok(records.len())
    }

    /// Persist engine state and commit the input cursors.
    pub fn checkpoint(&mut self) -> Result<(), JoinError> {
        self.since_checkpoint = 0;
        for i in &self.inputs {
            self.broker.commit_cursor(&i.cursor)?;
        }
        let Some(path) = self.config.checkpoint_path.clone() else { return Ok(()) };
        let cp = Checkpoint {
            offsets: self.inputs.iter().map(|i| (i.tag.clone(), i.cursor.next_offset())).collect(),
            output_len: self.broker.topic_stats(&self.config.output, &self.cap)?.total_records,
            engine: self.engine.snapshot(),
        };
        write_checkpoint(&path, &cp)?;
        self.stats.checkpoints += 1;
        Ok(())
    }
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, JoinError> {
    let bytes = std::fs::read(path).map_err(|e| JoinError::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| JoinError::Checkpoint(format!("{}: {e}", path.display())))
}

fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), JoinError> {
    let err = |e: std::io::Error| JoinError::Checkpoint(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec(cp).map_err(|e| JoinError::Checkpoint(e.to_string()))?;
    std::fs::write(&tmp, bytes).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

//! One topic's ledger: an ordered list of segment files plus a sparse offset index.

use super::frame::{self, Frame, FrameError, FrameReader, ScanEnd};
use super::{FlushPolicy, LedgerError, RecordEnvelope};
use crate::domain::{TimestampMs, TopicName};
use parking_lot::{Condvar, Mutex, RwLock};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use tracing::warn;

const SEGMENT_EXT: &str = "log";
const INDEX_EXT: &str = "idx";
const CURSOR_FILE: &str = "cursors.json";

#[derive(Debug, Clone)]
pub(crate) struct SegmentMeta {
    pub base: u64,
    pub path: PathBuf,
    pub count: u64,
    /// Committed byte length; readers never look past it.
    pub bytes: u64,
    pub min_ts: Option<TimestampMs>,
    pub max_ts: Option<TimestampMs>,
    /// (offset, file position) for every offset divisible by the index interval.
    pub sparse: Vec<(u64, u64)>,
}

impl SegmentMeta {
    fn position_hint(&self, offset: u64) -> (u64, u64) {
        match self.sparse.partition_point(|(o, _)| *o <= offset) {
            0 => (self.base, 0),
            i => self.sparse[i - 1],
        }
    }

    fn observe(&mut self, ts: TimestampMs) {
        self.min_ts = Some(self.min_ts.map_or(ts, |m| m.min(ts)));
        self.max_ts = Some(self.max_ts.map_or(ts, |m| m.max(ts)));
    }
}

#[derive(Debug, Default)]
pub(crate) struct LedgerState {
    pub segments: Vec<SegmentMeta>,
    pub len: u64,
    /// First unreachable offset when a sealed segment failed validation at open.
    pub corrupt_at: Option<u64>,
}

struct Writer {
    file: Option<File>,
    index: Option<File>,
    buf: Vec<u8>,
}

pub(crate) struct TopicLedger {
    pub name: TopicName,
    dir: PathBuf,
    segment_bytes: u64,
    index_interval: u64,
    flush: FlushPolicy,
    writer: Mutex<Writer>,
    state: RwLock<LedgerState>,
    cursors: Mutex<BTreeMap<String, u64>>,
    appended: Condvar,
    appended_lock: Mutex<()>,
}

fn segment_path(dir: &Path, base: u64, ext: &str) -> PathBuf {
    dir.join(format!("{base:020}.{ext}"))
}

fn storage(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> LedgerError {
    let context = context.into();
    move |source| LedgerError::Storage { context, source }
}

impl TopicLedger {
    pub fn open(
        name: TopicName,
        dir: PathBuf,
        segment_bytes: u64,
        index_interval: u64,
        flush: FlushPolicy,
    ) -> Result<Self, LedgerError> {
        fs::create_dir_all(&dir).map_err(storage(format!("creating {}", dir.display())))?;
        let state = recover(&name, &dir, index_interval)?;
        let cursors = match fs::read(dir.join(CURSOR_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| LedgerError::Storage {
                context: format!("parsing cursor file for {name}"),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(storage("reading cursor file")(e)),
        };
        Ok(Self {
            name,
            dir,
            segment_bytes,
            index_interval,
            flush,
            writer: Mutex::new(Writer { file: None, index: None, buf: Vec::new() }),
            state: RwLock::new(state),
            cursors: Mutex::new(cursors),
            appended: Condvar::new(),
            appended_lock: Mutex::new(()),
        })
    }

    pub fn len(&self) -> u64 {
        self.state.read().len
    }

    pub fn stats(&self) -> (u64, Option<TimestampMs>, Option<TimestampMs>) {
        let st = self.state.read();
        let min = st.segments.iter().filter_map(|s| s.min_ts).min();
        let max = st.segments.iter().filter_map(|s| s.max_ts).max();
        (st.len, min, max)
    }

    /// Append records atomically with respect to other publishers on this topic.
    pub fn append(&self, records: &[(TimestampMs, &[u8])]) -> Result<u64, LedgerError> {
        if records.is_empty() {
            return Ok(self.len());
        }
        let mut w = self.writer.lock();
        let first_offset = {
            let st = self.state.read();
            if let Some(at) = st.corrupt_at {
                return Err(LedgerError::Corrupted { topic: self.name.clone(), offset: at });
            }
            st.len
        };
        let mut offset = first_offset;
        let mut i = 0;
        while i < records.len() {
            // Open or roll the active segment.
            let (active_bytes, active_count, needs_new) = {
                let st = self.state.read();
                match st.segments.last() {
                    None => (0, 0, true),
                    Some(s) => {
                        let next = frame::frame_len(records[i].1.len()) as u64;
                        (s.bytes, s.count, s.count > 0 && s.bytes + next > self.segment_bytes)
                    }
                }
            };
            let _ = active_count;
            if needs_new {
                self.start_segment(&mut w, offset)?;
            } else if w.file.is_none() {
                self.reopen_active(&mut w)?;
            }
            let mut bytes = if needs_new { 0 } else { active_bytes };
            // Fill this segment with as many frames as fit.
            w.buf.clear();
            let mut batch: Vec<(u64, TimestampMs, u64)> = Vec::new();
            while i < records.len() {
                let (ts, payload) = records[i];
                let flen = frame::frame_len(payload.len()) as u64;
                if !batch.is_empty() && bytes + flen > self.segment_bytes {
                    break;
                }
                batch.push((offset, ts, bytes));
                frame::encode_frame(ts, payload, &mut w.buf);
                bytes += flen;
                offset += 1;
                i += 1;
            }
            let Writer { file, index, buf } = &mut *w;
            let file = file.as_mut().expect("active segment open");
            file.write_all(buf).map_err(storage(format!("appending to {}", self.name)))?;
            let mut idx_buf = Vec::new();
            for (o, _, pos) in &batch {
                if o % self.index_interval == 0 {
                    idx_buf.extend_from_slice(&o.to_le_bytes());
                    idx_buf.extend_from_slice(&pos.to_le_bytes());
                }
            }
            if !idx_buf.is_empty() {
                if let Some(index) = index.as_mut() {
                    index.write_all(&idx_buf).map_err(storage("appending sparse index"))?;
                }
            }
            if self.flush == FlushPolicy::EveryRecord {
                file.sync_data().map_err(storage("fsync segment"))?;
            }
            let mut st = self.state.write();
            let seg = st.segments.last_mut().expect("active segment");
            for (o, ts, pos) in &batch {
                seg.observe(*ts);
                if o % self.index_interval == 0 {
                    seg.sparse.push((*o, *pos));
                }
            }
            seg.count += batch.len() as u64;
            seg.bytes = bytes;
            st.len = offset;
        }
        drop(w);
        let _g = self.appended_lock.lock();
        self.appended.notify_all();
        Ok(first_offset)
    }

    fn start_segment(&self, w: &mut Writer, base: u64) -> Result<(), LedgerError> {
        let path = segment_path(&self.dir, base, SEGMENT_EXT);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(storage(format!("creating segment {}", path.display())))?;
        let index = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(segment_path(&self.dir, base, INDEX_EXT))
            .map_err(storage("creating sparse index"))?;
        if self.flush == FlushPolicy::EveryRecord {
            if let Ok(d) = File::open(&self.dir) {
                let _ = d.sync_all();
            }
        }
        w.file = Some(file);
        w.index = Some(index);
        self.state.write().segments.push(SegmentMeta {
            base,
            path,
            count: 0,
            bytes: 0,
            min_ts: None,
            max_ts: None,
            sparse: Vec::new(),
        });
        Ok(())
    }

    fn reopen_active(&self, w: &mut Writer) -> Result<(), LedgerError> {
        let (path, base) = {
            let st = self.state.read();
            let s = st.segments.last().expect("segment exists");
            (s.path.clone(), s.base)
        };
        w.file = Some(
            OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(storage(format!("reopening {}", path.display())))?,
        );
        w.index = Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(segment_path(&self.dir, base, INDEX_EXT))
                .map_err(storage("reopening sparse index"))?,
        );
        Ok(())
    }

    /// Up to `max` records starting at `from`, in offset order.
    ///
    /// Records before a checksum failure are returned; the failure itself is
    /// reported by the next call that starts at the bad offset.
    pub fn read(&self, from: u64, max: usize) -> Result<Vec<RecordEnvelope>, LedgerError> {
        let (segments, len, corrupt_at) = {
            let st = self.state.read();
            let segs: Vec<SegmentMeta> = st
                .segments
                .iter()
                .filter(|s| s.base + s.count > from)
                .cloned()
                .collect();
            (segs, st.len, st.corrupt_at)
        };
        if from >= len {
            if corrupt_at == Some(from) {
                return Err(LedgerError::ChecksumMismatch { topic: self.name.clone(), offset: from });
            }
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(max.min((len - from) as usize));
        let mut next = from;
        for seg in segments {
            if out.len() >= max {
                break;
            }
            let (mut offset, pos) = seg.position_hint(next);
            let mut reader = FrameReader::open(&seg.path, pos, seg.bytes)
                .map_err(storage(format!("opening {}", seg.path.display())))?;
            let seg_end = seg.base + seg.count;
            while offset < seg_end && out.len() < max {
                let wanted = offset >= next;
                match reader.next_frame(wanted) {
                    Ok(Some(Frame::Full { ts_ms, payload })) => out.push(RecordEnvelope {
                        topic: self.name.clone(),
                        offset,
                        ts_ms,
                        payload,
                    }),
                    Ok(Some(Frame::Skipped { .. })) => {}
                    Ok(None) => break,
                    Err(FrameError::Checksum { .. }) | Err(FrameError::Torn { .. }) => {
                        if out.is_empty() {
                            return Err(LedgerError::ChecksumMismatch {
                                topic: self.name.clone(),
                                offset,
                            });
                        }
                        return Ok(out);
                    }
                    Err(FrameError::Io(e)) => return Err(storage("reading segment")(e)),
                }
                offset += 1;
            }
            next = offset.max(next);
        }
        Ok(out)
    }

    /// Block until the ledger grows past `len` or `timeout` elapses.
    pub fn wait_for_growth(&self, len: u64, timeout: std::time::Duration) {
        let mut g = self.appended_lock.lock();
        if self.len() > len {
            return;
        }
        let _ = self.appended.wait_for(&mut g, timeout);
    }

    /// Visit every record with `t0 <= ts < t1`. Segments whose time range does not
    /// intersect the query are skipped.
    pub fn for_each_in_range(
        &self,
        t0: TimestampMs,
        t1: TimestampMs,
        mut f: impl FnMut(RecordEnvelope),
    ) -> Result<(), LedgerError> {
        let segments: Vec<SegmentMeta> = self.state.read().segments.clone();
        for seg in segments {
            let (Some(lo), Some(hi)) = (seg.min_ts, seg.max_ts) else { continue };
            if hi < t0 || lo >= t1 {
                continue;
            }
            let mut reader = FrameReader::open(&seg.path, 0, seg.bytes)
                .map_err(storage(format!("opening {}", seg.path.display())))?;
            let mut offset = seg.base;
            loop {
                match reader.next_frame(true) {
                    Ok(Some(Frame::Full { ts_ms, payload })) => {
                        if ts_ms >= t0 && ts_ms < t1 {
                            f(RecordEnvelope { topic: self.name.clone(), offset, ts_ms, payload });
                        }
                    }
                    Ok(Some(Frame::Skipped { .. })) => unreachable!(),
                    Ok(None) => break,
                    Err(FrameError::Io(e)) => return Err(storage("scanning segment")(e)),
                    Err(_) => {
                        return Err(LedgerError::ChecksumMismatch { topic: self.name.clone(), offset })
                    }
                }
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn count_in_range(&self, t0: TimestampMs, t1: TimestampMs) -> Result<u64, LedgerError> {
        let segments: Vec<SegmentMeta> = self.state.read().segments.clone();
        let mut n = 0;
        for seg in segments {
            let (Some(lo), Some(hi)) = (seg.min_ts, seg.max_ts) else { continue };
            if hi < t0 || lo >= t1 {
                continue;
            }
            if lo >= t0 && hi < t1 {
                n += seg.count;
                continue;
            }
            let mut reader = FrameReader::open(&seg.path, 0, seg.bytes)
                .map_err(storage(format!("opening {}", seg.path.display())))?;
            loop {
                match reader.next_frame(false) {
                    Ok(Some(Frame::Skipped { ts_ms })) | Ok(Some(Frame::Full { ts_ms, .. })) => {
                        if ts_ms >= t0 && ts_ms < t1 {
                            n += 1;
                        }
                    }
                    Ok(None) => break,
                    Err(FrameError::Io(e)) => return Err(storage("scanning segment")(e)),
                    Err(_) => {
                        return Err(LedgerError::ChecksumMismatch { topic: self.name.clone(), offset: seg.base })
                    }
                }
            }
        }
        Ok(n)
    }

    pub fn cursor_position(&self, subscription: &str) -> Option<u64> {
        self.cursors.lock().get(subscription).copied()
    }

    pub fn commit_cursor(&self, subscription: &str, next_offset: u64) -> Result<(), LedgerError> {
        let mut cursors = self.cursors.lock();
        cursors.insert(subscription.to_string(), next_offset);
        let bytes = serde_json::to_vec_pretty(&*cursors).expect("cursor map serializes");
        let tmp = self.dir.join(format!("{CURSOR_FILE}.tmp"));
        let mut f = File::create(&tmp).map_err(storage("writing cursor file"))?;
        f.write_all(&bytes).map_err(storage("writing cursor file"))?;
        if self.flush == FlushPolicy::EveryRecord {
            f.sync_data().map_err(storage("fsync cursor file"))?;
        }
        fs::rename(&tmp, self.dir.join(CURSOR_FILE)).map_err(storage("renaming cursor file"))?;
        Ok(())
    }
}

/// Rebuild ledger state from the segment files, truncating a torn tail on the
/// active segment and rewriting sparse indexes from the validated frames.
fn recover(name: &TopicName, dir: &Path, index_interval: u64) -> Result<LedgerState, LedgerError> {
    let mut bases: Vec<u64> = fs::read_dir(dir)
        .map_err(storage(format!("listing {}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == SEGMENT_EXT).then(|| p.file_stem()?.to_str()?.parse::<u64>().ok())?
        })
        .collect();
    bases.sort_unstable();
    let mut state = LedgerState::default();
    let last_idx = bases.len().saturating_sub(1);
    for (i, base) in bases.iter().copied().enumerate() {
        let path = segment_path(dir, base, SEGMENT_EXT);
        if base != state.len {
            warn!(topic = %name, expected = state.len, found = base, "gap between ledger segments");
            state.corrupt_at = Some(state.len);
            break;
        }
        let scan = frame::scan_segment(&path).map_err(storage(format!("scanning {}", path.display())))?;
        let mut meta = SegmentMeta {
            base,
            path: path.clone(),
            count: scan.frames.len() as u64,
            bytes: scan.valid_len,
            min_ts: None,
            max_ts: None,
            sparse: Vec::new(),
        };
        let mut idx_buf = Vec::new();
        for (k, fr) in scan.frames.iter().enumerate() {
            let offset = base + k as u64;
            meta.observe(fr.ts_ms);
            if offset.is_multiple_of(index_interval) {
                meta.sparse.push((offset, fr.pos));
                idx_buf.extend_from_slice(&offset.to_le_bytes());
                idx_buf.extend_from_slice(&fr.pos.to_le_bytes());
            }
        }
        fs::write(segment_path(dir, base, INDEX_EXT), &idx_buf).map_err(storage("rewriting sparse index"))?;
        state.len = base + meta.count;
        state.segments.push(meta);
        let torn_tail = match scan.end {
            ScanEnd::Clean => continue,
            ScanEnd::TornTail { .. } => true,
            ScanEnd::ChecksumMismatch { frame_end, .. } => frame_end == scan.file_len,
        };
        if i == last_idx && torn_tail {
            warn!(topic = %name, ?scan.end, "truncating torn tail of active segment");
            let f = OpenOptions::new().write(true).open(&path).map_err(storage("opening for truncate"))?;
            f.set_len(scan.valid_len).map_err(storage("truncating torn tail"))?;
            f.sync_all().map_err(storage("fsync after truncate"))?;
        } else {
            warn!(topic = %name, ?scan.end, "segment failed validation");
            state.corrupt_at = Some(state.len);
            break;
        }
    }
    Ok(state)
}

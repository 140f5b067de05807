//! Frame codec for ledger segment files.
//!
//! ```text
//! +------------+-----------+-----------------+-----------------------------+
//! | len: u32le | ts: u64le | payload (len B) | crc32(len ++ ts ++ payload) |
//! +------------+-----------+-----------------+-----------------------------+
//! ```
//!
//! Segment files are a bare concatenation of frames. A frame whose declared
//! extent runs past the end of the file is a torn tail; a complete frame with
//! a bad checksum is corruption.

use std::fs::File;
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

pub const HEADER_LEN: usize = 12;
pub const TRAILER_LEN: usize = 4;
pub const FRAME_OVERHEAD: usize = HEADER_LEN + TRAILER_LEN;

pub fn frame_len(payload_len: usize) -> usize {
    FRAME_OVERHEAD + payload_len
}

pub fn encode_frame(ts_ms: i64, payload: &[u8], out: &mut Vec<u8>) {
    let len = u32::try_from(payload.len()).expect("payload exceeds u32 framing limit");
    let start = out.len();
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&(ts_ms as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

/// How a scan of a segment ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanEnd {
    /// The last frame ends exactly at end of file.
    Clean,
    /// A partial frame starts at `at`; `trailing_bytes` bytes follow it.
    TornTail { at: u64, trailing_bytes: u64 },
    /// A complete frame at `at`, ending at `frame_end`, failed its checksum.
    ChecksumMismatch { at: u64, frame_end: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInfo {
    pub pos: u64,
    pub ts_ms: i64,
    pub payload_len: u32,
}

#[derive(Debug, Clone)]
pub struct SegmentScan {
    pub frames: Vec<FrameInfo>,
    /// Byte length of the valid frame prefix.
    pub valid_len: u64,
    pub file_len: u64,
    pub end: ScanEnd,
}

/// A decoded frame read through [`FrameReader`].
#[derive(Debug)]
pub enum Frame {
    Full { ts_ms: i64, payload: Vec<u8> },
    /// Header-only read; the payload was skipped without verification.
    Skipped { ts_ms: i64 },
}

#[derive(Debug)]
pub enum FrameError {
    Torn { at: u64 },
    Checksum { at: u64, end: u64 },
    Io(io::Error),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        FrameError::Io(e)
    }
}

/// Sequential reader bounded to a committed byte length.
pub struct FrameReader {
    reader: BufReader<File>,
    pos: u64,
    limit: u64,
    scratch: Vec<u8>,
}

impl FrameReader {
    pub fn open(path: &Path, start: u64, limit: u64) -> io::Result<Self> {
        let mut file = File::open(path)?;
        file.seek(SeekFrom::Start(start))?;
        Ok(Self {
            reader: BufReader::with_capacity(64 * 1024, file),
            pos: start,
            limit,
            scratch: Vec::new(),
        })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    /// Next frame, or `Ok(None)` at the committed limit. With `verify == false`
    /// the payload is skipped and the checksum is not checked.
    pub fn next_frame(&mut self, verify: bool) -> Result<Option<Frame>, FrameError> {
        if self.pos >= self.limit {
            return Ok(None);
        }
        let at = self.pos;
        if self.limit - at < FRAME_OVERHEAD as u64 {
            return Err(FrameError::Torn { at });
        }
        let mut header = [0u8; HEADER_LEN];
        self.reader.read_exact(&mut header)?;
        let len = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let ts_ms = u64::from_le_bytes(header[4..12].try_into().unwrap()) as i64;
        let total = frame_len(len as usize) as u64;
        if self.limit - at < total {
            return Err(FrameError::Torn { at });
        }
        if !verify {
            self.reader.seek_relative(len as i64 + TRAILER_LEN as i64)?;
            self.pos += total;
            return Ok(Some(Frame::Skipped { ts_ms }));
        }
        self.scratch.resize(len as usize + TRAILER_LEN, 0);
        self.reader.read_exact(&mut self.scratch)?;
        let (payload, trailer) = self.scratch.split_at(len as usize);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&header);
        hasher.update(payload);
        if hasher.finalize() != stored {
            return Err(FrameError::Checksum { at, end: at + total });
        }
        let payload = payload.to_vec();
        self.pos += total;
        Ok(Some(Frame::Full { ts_ms, payload }))
    }
}

/// Validate every frame of a segment file.
pub fn scan_segment(path: &Path) -> io::Result<SegmentScan> {
    let file_len = std::fs::metadata(path)?.len();
    let mut reader = FrameReader::open(path, 0, file_len)?;
    let mut frames = Vec::new();
    let end = loop {
        let pos = reader.position();
        match reader.next_frame(true) {
            Ok(None) => break ScanEnd::Clean,
            Ok(Some(Frame::Full { ts_ms, payload })) => frames.push(FrameInfo {
                pos,
                ts_ms,
                payload_len: payload.len() as u32,
            }),
            Ok(Some(Frame::Skipped { .. })) => unreachable!("verify=true never skips"),
            Err(FrameError::Torn { at }) => {
                break ScanEnd::TornTail { at, trailing_bytes: file_len - at }
            }
            Err(FrameError::Checksum { at, end }) => break ScanEnd::ChecksumMismatch { at, frame_end: end },
            Err(FrameError::Io(e)) => return Err(e),
        }
    };
    let valid_len = match end {
        ScanEnd::Clean => file_len,
        ScanEnd::TornTail { at, .. } | ScanEnd::ChecksumMismatch { at, .. } => at,
    };
    Ok(SegmentScan { frames, valid_len, file_len, end })
}

use super::{DomainError, TimestampMs};
use serde::{Deserialize, Serialize};

/// Index of a window: window `w` covers `[origin + w*hop, origin + w*hop + window)`.
pub type WindowId = u64;

/// Tumbling (`hop == window`) or sliding (`hop < window`) event-time windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindowSpec")]
pub struct TimeWindowSpec {
    window_ms: i64,
    hop_ms: i64,
    origin_ms: TimestampMs,
}

#[derive(Deserialize)]
struct RawWindowSpec {
    window_ms: i64,
    hop_ms: Option<i64>,
    #[serde(default)]
    origin_ms: TimestampMs,
}

impl TryFrom<RawWindowSpec> for TimeWindowSpec {
    type Error = DomainError;
    fn try_from(r: RawWindowSpec) -> Result<Self, Self::Error> {
        TimeWindowSpec::new(r.window_ms, r.hop_ms.unwrap_or(r.window_ms), r.origin_ms)
    }
}

impl TimeWindowSpec {
    pub fn new(window_ms: i64, hop_ms: i64, origin_ms: TimestampMs) -> Result<Self, DomainError> {
        if window_ms <= 0 || hop_ms <= 0 {
            return Err(DomainError::InvalidWindow("window_ms and hop_ms must be positive"));
        }
        if hop_ms > window_ms {
            return Err(DomainError::InvalidWindow("hop_ms must not exceed window_ms"));
        }
        if window_ms % hop_ms != 0 {
            return Err(DomainError::InvalidWindow("window_ms must be a multiple of hop_ms"));
        }
        Ok(Self { window_ms, hop_ms, origin_ms })
    }

    pub fn tumbling(window_ms: i64) -> Result<Self, DomainError> {
        Self::new(window_ms, window_ms, 0)
    }

    /// 5 s tumbling windows.
    pub fn default_join() -> Self {
        Self { window_ms: 5_000, hop_ms: 5_000, origin_ms: 0 }
    }

    /// 1 s tumbling windows.
    pub fn one_second() -> Self {
        Self { window_ms: 1_000, hop_ms: 1_000, origin_ms: 0 }
    }

    pub fn window_ms(&self) -> i64 {
        self.window_ms
    }

    pub fn hop_ms(&self) -> i64 {
        self.hop_ms
    }

    pub fn origin_ms(&self) -> TimestampMs {
        self.origin_ms
    }

    pub fn is_tumbling(&self) -> bool {
        self.hop_ms == self.window_ms
    }

    pub fn windows_per_instant(&self) -> u64 {
        (self.window_ms / self.hop_ms) as u64
    }

    pub fn window_start(&self, id: WindowId) -> TimestampMs {
        self.origin_ms + id as i64 * self.hop_ms
    }

    pub fn window_end(&self, id: WindowId) -> TimestampMs {
        self.window_start(id) + self.window_ms
    }

    /// Every window containing `ts_ms`, in increasing id order.
    pub fn window_ids_for(&self, ts_ms: TimestampMs) -> Result<std::ops::RangeInclusive<WindowId>, DomainError> {
        if ts_ms < self.origin_ms {
            return Err(DomainError::TimestampBeforeOrigin { ts_ms, origin_ms: self.origin_ms });
        }
        let rel = ts_ms - self.origin_ms;
        let last = rel.div_euclid(self.hop_ms);
        let first = ((rel - self.window_ms).div_euclid(self.hop_ms) + 1).max(0);
        Ok(first as WindowId..=last as WindowId)
    }
}

//! Nightly integrity checks: per-topic day-of-week message-count anomalies and
//! per-vehicle telemetry coverage of serviced trips.

mod coverage;
mod nightly;

pub use coverage::{check_vehicle_coverage, collect_bindings, BindingSource, CoverageOutcome, TelemetryIndex, TripBinding};
pub use nightly::{run_nightly, MonitorConfig, NightlyReport, TopicReport, TopicStatus};

use crate::domain::{TimestampMs, TopicName};
use crate::ledger::LedgerError;
use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("insufficient history: {have} same-weekday days, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("invalid monitor config: {0}")]
    Config(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCount {
    pub topic: TopicName,
    pub date: NaiveDate,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub topic: TopicName,
    pub day_of_week: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_history: usize,
}

impl Baseline {
    pub fn threshold(&self, sigmas: f64) -> f64 {
        self.mean - sigmas * self.std
    }
}

/// Mean and population standard deviation; two-pass for accuracy.
pub fn mean_and_population_std(counts: &[u64]) -> (f64, f64) {
    if counts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn weekday_name(d: Weekday) -> String {
    let names = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
    names[d.num_days_from_monday() as usize].to_string()
}

/// Baseline over same-weekday days strictly before `date`.
pub fn dow_baseline(topic: &TopicName, history: &[DailyCount], date: NaiveDate, min_history: usize) -> Result<Baseline, MonitorError> {
    let counts: Vec<u64> = history
        .iter()
        .filter(|c| &c.topic == topic && c.date < date && c.date.weekday() == date.weekday())
        .map(|c| c.count)
        .collect();
    if counts.len() < min_history.max(1) {
        return Err(MonitorError::InsufficientHistory { have: counts.len(), need: min_history.max(1) });
    }
    let (mean, std) = mean_and_population_std(&counts);
    Ok(Baseline { topic: topic.clone(), day_of_week: weekday_name(date.weekday()), mean, std, n_history: counts.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    CountAnomaly,
    CoverageGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Critical,
}

/// An alert as stored on the alerts topic. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    /// Topic name, or `vehicle_id/trip_id` for coverage gaps.
    pub subject: String,
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<TopicName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_id: Option<String>,
    pub observed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start_ms: Option<TimestampMs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_end_ms: Option<TimestampMs>,
    pub severity: Severity,
    pub message: String,
}

impl Alert {
    pub fn key(&self) -> (AlertKind, &str, NaiveDate) {
        (self.kind, &self.subject, self.date)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("alert serializes")
    }
}

/// Alert iff `observed < mean - sigmas * std`, strictly. High counts never alert.
pub fn check_topic_day(
    topic: &TopicName,
    date: NaiveDate,
    observed: u64,
    history: &[DailyCount],
    min_history: usize,
    sigmas: f64,
) -> Result<Option<Alert>, MonitorError> {
    let b = dow_baseline(topic, history, date, min_history)?;
    Ok(count_alert(&b, date, observed, sigmas))
}

pub fn count_alert(b: &Baseline, date: NaiveDate, observed: u64, sigmas: f64) -> Option<Alert> {
    let threshold = b.threshold(sigmas);
    ((observed as f64) < threshold).then(|| Alert {
        kind: AlertKind::CountAnomaly,
        subject: b.topic.to_string(),
        date,
        topic: Some(b.topic.clone()),
        vehicle_id: None,
        trip_id: None,
        observed,
        expected_mean: Some(b.mean),
        expected_std: Some(b.std),
        window_start_ms: None,
        window_end_ms: None,
        severity: if (observed as f64) < 0.5 * b.mean { Severity::Critical } else { Severity::Warning },
        message: format!(
            "{} received {observed} messages on {date} ({}), below {threshold:.2} (mean {:.2} - {sigmas} x std {:.2} over {} days)",
            b.topic, b.day_of_week, b.mean, b.std, b.n_history
        ),
    })
}

#[cfg(test)]
mod tests;

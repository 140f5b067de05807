use super::coverage::{check_vehicle_coverage, collect_bindings, TelemetryIndex};
use super::{count_alert, dow_baseline, Alert, Baseline, DailyCount, MonitorError};
use crate::domain::{date_of, date_start_ms, TimestampMs, TopicName, MS_PER_DAY};
use crate::ledger::{Broker, Capability, LedgerError};
use crate::sim::{CleverRecord, Topics};
use crate::static_data::GtfsSchedule;
use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub min_history: usize,
    pub sigmas: f64,
    pub alerts_topic: TopicName,
    pub telemetry_topics: Vec<TopicName>,
    pub trip_context_topic: Option<TopicName>,
    /// Limit baselines to the most recent weeks; all history when absent.
    pub history_weeks: Option<u32>,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Trip to vehicle, used where the trip-context stream has no binding.
    pub assignments: BTreeMap<String, String>,
    pub report_dir: Option<PathBuf>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        let t = Topics::default();
        Self {
            min_history: 4,
            sigmas: 2.0,
            alerts_topic: TopicName::parse("carta/monitoring/alerts").expect("valid"),
            telemetry_topics: vec![t.telemetry_diesel, t.telemetry_electric, t.telemetry_hybrid],
            trip_context_topic: Some(t.clever),
            history_weeks: None,
            retries: 3,
            backoff_ms: 25,
            assignments: BTreeMap::new(),
            report_dir: None,
        }
    }
}

impl MonitorConfig {
    pub fn from_toml(text: &str) -> Result<Self, MonitorError> {
        let c: Self = toml::from_str(text).map_err(|e| MonitorError::Config(e.to_string()))?;
        if c.sigmas < 0.0 || !c.sigmas.is_finite() {
            return Err(MonitorError::Config("sigmas must be a non-negative number".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicStatus {
    Healthy,
    Anomaly,
    /// Not enough same-weekday history.
    Unmonitorable,
    /// The alerts topic itself.
    Excluded,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: TopicName,
    pub observed: u64,
    pub status: TopicStatus,
    pub n_history: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub trips_checked: u64,
    pub trips_covered: u64,
    pub gaps: u64,
    pub unbindable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightlyReport {
    pub date: NaiveDate,
    pub complete: bool,
    pub topics: Vec<TopicReport>,
    pub coverage: CoverageSummary,
    pub alerts: Vec<Alert>,
    pub errors: Vec<String>,
}

impl NightlyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Nightly integrity report for {}{}", self.date, if self.complete { "" } else { " (INCOMPLETE)" });
        let _ = writeln!(s, "\nTopics:");
        for t in &self.topics {
            let detail = match (&t.baseline, t.threshold) {
                (Some(b), Some(th)) => format!("mean {:.2}, std {:.2}, threshold {th:.2}, n={}", b.mean, b.std, b.n_history),
                _ => format!("history n={}", t.n_history),
            };
            let _ = writeln!(s, "  {:<13} {:<45} {:>10}  ({detail})", format!("{:?}", t.status).to_lowercase(), t.topic.as_str(), t.observed);
        }
        let c = &self.coverage;
        let _ = writeln!(
            s,
            "\nTrip coverage: {} trips checked, {} covered, {} gaps, {} unbindable",
            c.trips_checked,
            c.trips_covered,
            c.gaps,
            c.unbindable.len()
        );
        let _ = writeln!(s, "\nAlerts ({}):", self.alerts.len());
        for a in &self.alerts {
            let _ = writeln!(s, "  [{:?}] {}", a.severity, a.message);
        }
        for e in &self.errors {
            let _ = writeln!(s, "  error: {e}");
        }
        s
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), MonitorError> {
        let io = |path: PathBuf| move |source| MonitorError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let json = dir.join(format!("{}.json", self.date));
        std::fs::write(&json, self.to_json()).map_err(io(json.clone()))?;
        let text = dir.join(format!("{}.txt", self.date));
        std::fs::write(&text, self.to_text()).map_err(io(text.clone()))
    }
}

fn with_retry<T>(cfg: &MonitorConfig, mut f: impl FnMut() -> Result<T, LedgerError>) -> Result<T, LedgerError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(LedgerError::Storage { .. }) if attempt < cfg.retries => {
                std::thread::sleep(Duration::from_millis(cfg.backoff_ms << attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn day_range(date: NaiveDate) -> (TimestampMs, TimestampMs) {
    let start = date_start_ms(date);
    (start, start + MS_PER_DAY)
}

fn check_topic(broker: &Broker, cap: &Capability, topic: &TopicName, date: NaiveDate, cfg: &MonitorConfig) -> Result<(TopicReport, Option<Alert>), LedgerError> {
    let (t0, t1) = day_range(date);
    let observed = with_retry(cfg, || broker.count_in_range(topic, t0, t1, cap))?;
    let first_day = with_retry(cfg, || broker.topic_stats(topic, cap))?.first_ts_ms.map(date_of);
    let mut history = Vec::new();
    if let Some(first) = first_day {
        let mut k = 1u64;
        while let Some(d) = date.checked_sub_days(Days::new(7 * k)) {
            if d < first || cfg.history_weeks.is_some_and(|w| k > w as u64) {
                break;
            }
            let (h0, h1) = day_range(d);
            let count = with_retry(cfg, || broker.count_in_range(topic, h0, h1, cap))?;
            history.push(DailyCount { topic: topic.clone(), date: d, count });
            k += 1;
        }
    }
    Ok(match dow_baseline(topic, &history, date, cfg.min_history) {
        Ok(b) => {
            let alert = count_alert(&b, date, observed, cfg.sigmas);
            let report = TopicReport {
                topic: topic.clone(),
                observed,
                status: if alert.is_some() { TopicStatus::Anomaly } else { TopicStatus::Healthy },
                n_history: b.n_history,
                threshold: Some(b.threshold(cfg.sigmas)),
                baseline: Some(b),
            };
            (report, alert)
        }
        Err(_) => (
            TopicReport { topic: topic.clone(), observed, status: TopicStatus::Unmonitorable, n_history: history.len(), baseline: None, threshold: None },
            None,
        ),
    })
}

/// Run both checks for `date`, publish new alerts, and return the report.
///
/// Rerunning for a date publishes nothing new and returns an identical report.
pub fn run_nightly(
    date: NaiveDate,
    broker: &Broker,
    cap: &Capability,
    schedule: Option<&GtfsSchedule>,
    cfg: &MonitorConfig,
) -> Result<NightlyReport, MonitorError> {
    broker.create_topic(&cfg.alerts_topic, cap)?;
    let mut errors = Vec::new();
    let mut topics = Vec::new();
    let mut alerts = Vec::new();
    let registered: BTreeSet<TopicName> = broker.topics(cap).into_iter().collect();
    for topic in &registered {
        if *topic == cfg.alerts_topic {
            topics.push(TopicReport { topic: topic.clone(), observed: 0, status: TopicStatus::Excluded, n_history: 0, baseline: None, threshold: None });
            continue;
        }
        match check_topic(broker, cap, topic, date, cfg) {
            Ok((report, alert)) => {
                topics.push(report);
                alerts.extend(alert);
            }
            Err(e) => {
                errors.push(format!("{topic}: {e}"));
                topics.push(TopicReport { topic: topic.clone(), observed: 0, status: TopicStatus::Error, n_history: 0, baseline: None, threshold: None });
            }
        }
    }

    let mut coverage = CoverageSummary::default();
    if let Some(schedule) = schedule {
        let unbound = collect_bindings(schedule, date, &BTreeMap::new(), &BTreeMap::new());
        if let (Some(t0), Some(t1)) = (unbound.iter().map(|b| b.start_ms).min(), unbound.iter().map(|b| b.end_ms).max()) {
            let mut stream: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
            if let Some(ctx) = cfg.trip_context_topic.as_ref().filter(|t| registered.contains(t)) {
                let scan = with_retry(cfg, || {
                    stream.clear();
                    broker.scan_range(ctx, t0, t1, cap, |env| {
                        if let Ok(r) = serde_json::from_slice::<CleverRecord>(&env.payload) {
                            if let Some(trip) = r.trip_id {
                                *stream.entry(trip).or_default().entry(r.vehicle_id).or_default() += 1;
                            }
                        }
                    })
                });
                if let Err(e) = scan {
                    errors.push(format!("{ctx}: {e}"));
                }
            }
            let bindings = collect_bindings(schedule, date, &stream, &cfg.assignments);
            let tel_topics: Vec<TopicName> = cfg.telemetry_topics.iter().filter(|t| registered.contains(t)).cloned().collect();
            match with_retry(cfg, || TelemetryIndex::build(broker, &tel_topics, t0, t1, cap)) {
                Ok(index) => {
                    let out = check_vehicle_coverage(date, &bindings, |v, a, b| index.count(v, a, b));
                    coverage = CoverageSummary {
                        trips_checked: out.trips_checked,
                        trips_covered: out.trips_covered,
                        gaps: out.alerts.len() as u64,
                        unbindable: out.unbindable,
                    };
                    alerts.extend(out.alerts);
                }
                Err(e) => errors.push(format!("telemetry coverage: {e}")),
            }
        }
    }

    alerts.sort_by(|a, b| a.key().cmp(&b.key()));
    publish_new(broker, cap, cfg, date, &alerts)?;
    let report = NightlyReport { date, complete: errors.is_empty(), topics, coverage, alerts, errors };
    if let Some(dir) = &cfg.report_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}

/// Alerts are timestamped at the start of their date; keys already on the topic are skipped.
fn publish_new(broker: &Broker, cap: &Capability, cfg: &MonitorConfig, date: NaiveDate, alerts: &[Alert]) -> Result<(), MonitorError> {
    let (t0, t1) = day_range(date);
    let mut existing = BTreeSet::new();
    with_retry(cfg, || {
        broker.scan_range(&cfg.alerts_topic, t0, t1, cap, |env| {
            if let Ok(a) = serde_json::from_slice::<Alert>(&env.payload) {
                existing.insert((a.kind, a.subject, a.date));
            }
        })
    })?;
    let fresh: Vec<Vec<u8>> = alerts
        .iter()
        .filter(|a| !existing.contains(&(a.kind, a.subject.clone(), a.date)))
        .map(Alert::to_bytes)
        .collect();
    if !fresh.is_empty() {
        let batch: Vec<(TimestampMs, &[u8])> = fresh.iter().map(|b| (t0, b.as_slice())).collect();
        with_retry(cfg, || broker.publish_batch(&cfg.alerts_topic, &batch, cap))?;
    }
    Ok(())
}

use super::*;
use chrono::Days;

fn topic() -> TopicName {
    TopicName::parse("carta/telemetry/viriciti-diesel").unwrap()
}

/// Same-weekday history ending the week before `date`.
fn weekly(date: NaiveDate, counts: &[u64]) -> Vec<DailyCount> {
    counts
        .iter()
        .enumerate()
        .map(|(k, &count)| DailyCount { topic: topic(), date: date.checked_sub_days(Days::new(7 * (k as u64 + 1))).unwrap(), count })
        .collect()
}

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 30).unwrap()
}

#[test]
fn baseline_examples() {
    let b = dow_baseline(&topic(), &weekly(day(), &[86_400, 86_000, 86_200, 86_600]), day(), 4).unwrap();
    assert_eq!(b.mean, 86_300.0);
    assert!((b.std - 223.606_797_749_979).abs() < 1e-9);
    assert_eq!((b.n_history, b.day_of_week.as_str()), (4, "monday"));

    let flat = dow_baseline(&topic(), &weekly(day(), &[100, 100, 100]), day(), 3).unwrap();
    assert_eq!((flat.mean, flat.std), (100.0, 0.0));

    assert!(matches!(
        dow_baseline(&topic(), &weekly(day(), &[1, 2]), day(), 4),
        Err(MonitorError::InsufficientHistory { have: 2, need: 4 })
    ));
}

#[test]
fn baseline_ignores_other_weekdays_and_the_day_itself() {
    let mut h = weekly(day(), &[10, 10, 10, 10]);
    h.push(DailyCount { topic: topic(), date: day(), count: 0 });
    h.push(DailyCount { topic: topic(), date: day().pred_opt().unwrap(), count: 1_000 });
    let b = dow_baseline(&topic(), &h, day(), 4).unwrap();
    assert_eq!((b.mean, b.n_history), (10.0, 4));
}

#[test]
fn threshold_examples() {
    let h = weekly(day(), &[86_400, 86_000, 86_200, 86_600]);
    let b = dow_baseline(&topic(), &h, day(), 4).unwrap();
    assert!((b.threshold(2.0) - 85_852.786).abs() < 1e-3);
    assert!(check_topic_day(&topic(), day(), 50_000, &h, 4, 2.0).unwrap().is_some());
    assert!(check_topic_day(&topic(), day(), 85_853, &h, 4, 2.0).unwrap().is_none());
    assert!(check_topic_day(&topic(), day(), 200_000, &h, 4, 2.0).unwrap().is_none(), "one-sided");

    let flat = weekly(day(), &[100, 100, 100, 100]);
    let alert = check_topic_day(&topic(), day(), 99, &flat, 4, 2.0).unwrap().unwrap();
    assert_eq!((alert.kind, alert.observed, alert.expected_std), (AlertKind::CountAnomaly, 99, Some(0.0)));
    assert!(check_topic_day(&topic(), day(), 100, &flat, 4, 2.0).unwrap().is_none());
}

#[test]
fn exact_threshold_is_not_an_alert() {
    // Mean 1000, std 10: threshold exactly 980.
    let h = weekly(day(), &[990, 1010, 990, 1010]);
    assert!(check_topic_day(&topic(), day(), 980, &h, 4, 2.0).unwrap().is_none());
    assert!(check_topic_day(&topic(), day(), 979, &h, 4, 2.0).unwrap().is_some());
}

fn binding(trip: &str, vehicle: Option<&str>, start_h: i64, end_h: i64) -> TripBinding {
    let base = crate::domain::date_start_ms(day());
    TripBinding {
        trip_id: trip.into(),
        route_id: "r1".into(),
        vehicle_id: vehicle.map(String::from),
        source: vehicle.map(|_| BindingSource::Assignment),
        start_ms: base + start_h * 3_600_000,
        end_ms: base + end_h * 3_600_000,
    }
}

#[test]
fn coverage_gaps_for_silent_vehicles_only() {
    let bindings: Vec<_> = (0..20).map(|i| binding(&format!("t{i:02}"), Some(&format!("v{i:02}")), 8, 9)).collect();
    let base = crate::domain::date_start_ms(day());
    let index = TelemetryIndex::from_records(
        (0..20).filter(|i| *i != 3 && *i != 17).map(|i| (format!("v{i:02}"), base + 8 * 3_600_000 + 1_800_000)),
    );
    let out = check_vehicle_coverage(day(), &bindings, |v, a, b| index.count(v, a, b));
    let subjects: Vec<_> = out.alerts.iter().map(|a| a.subject.as_str()).collect();
    assert_eq!(subjects, vec!["v03/t03", "v17/t17"]);
    assert_eq!((out.trips_checked, out.trips_covered), (20, 18));
}

#[test]
fn record_inside_window_passes_and_edges_are_half_open() {
    let base = crate::domain::date_start_ms(day());
    let b = [binding("t", Some("v"), 8, 9)];
    let at = |ts: i64| {
        let idx = TelemetryIndex::from_records([("v".to_string(), ts)]);
        check_vehicle_coverage(day(), &b, |v, x, y| idx.count(v, x, y)).alerts.len()
    };
    assert_eq!(at(base + 8 * 3_600_000 + 1_800_000), 0);
    assert_eq!(at(base + 8 * 3_600_000), 0);
    assert_eq!(at(base + 9 * 3_600_000), 1);
}

#[test]
fn unbound_trip_is_counted_not_alerted() {
    let out = check_vehicle_coverage(day(), &[binding("t-unbound", None, 8, 9)], |_, _, _| 0);
    assert!(out.alerts.is_empty());
    assert_eq!(out.unbindable, vec!["t-unbound".to_string()]);
}

#[test]
fn alert_serialization_is_stable() {
    let a = check_topic_day(&topic(), day(), 1, &weekly(day(), &[10, 10, 10, 10]), 4, 2.0).unwrap().unwrap();
    let text = String::from_utf8(a.to_bytes()).unwrap();
    assert!(text.starts_with(r#"{"kind":"count_anomaly","subject":"carta/telemetry/viriciti-diesel","date":"2020-03-30","topic":"#));
    let back: Alert = serde_json::from_str(&text).unwrap();
    assert_eq!(back, a);
}

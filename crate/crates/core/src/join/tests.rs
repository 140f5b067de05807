use super::*;
use crate::domain::{FleetKind, GeoPoint, TimeWindowSpec, TopicName};
use crate::ledger::RecordEnvelope;
use crate::sim::{telemetry_record, CleverRecord, VehicleState, WeatherRecord};
use crate::static_data::synth::{generate_city, SynthCityConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::sync::Arc;

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn two_source_config() -> JoinConfig {
    let topic = |s: &str| TopicName::parse(s).unwrap();
    JoinConfig {
        inputs: vec![
            JoinInput { tag: "tel".into(), kind: SourceKind::Telemetry, topic: topic("carta/t/tel") },
            JoinInput { tag: "clever".into(), kind: SourceKind::Clever, topic: topic("carta/t/clever") },
        ],
        ..JoinConfig::default()
    }
}

fn tel(vid: &str, ts: i64, offset: u64, p: GeoPoint) -> RecordEnvelope {
    let s = VehicleState::new(vid, FleetKind::Diesel, p, 1000.0 + ts as f64 / 100.0, 80.0);
    RecordEnvelope {
        topic: TopicName::parse("carta/t/tel").unwrap(),
        offset,
        ts_ms: ts,
        payload: serde_json::to_vec(&telemetry_record(&s, ts)).unwrap(),
    }
}

fn clever(vid: &str, ts: i64, offset: u64, trip: Option<&str>, route: Option<&str>) -> RecordEnvelope {
    let r = CleverRecord {
        vehicle_id: vid.into(),
        ts_ms: ts,
        position: pt(35.0, -85.0),
        trip_id: trip.map(String::from),
        route_id: route.map(String::from),
        driver_id: Some("drv-1".into()),
    };
    RecordEnvelope { topic: TopicName::parse("carta/t/clever").unwrap(), offset, ts_ms: ts, payload: serde_json::to_vec(&r).unwrap() }
}

fn sample(o: &JoinOutput) -> &JoinedSample {
    match o {
        JoinOutput::Sample(s) => s,
        other => panic!("expected sample, got {other:?}"),
    }
}

#[test]
fn record_behind_its_own_watermark_is_dropped() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    assert_eq!(e.ingest(0, &tel("v1", 20_000, 0, pt(35.0, -85.0))), Ingest::Accepted);
    assert_eq!(e.watermark(0), Some(10_000));
    assert_eq!(e.ingest(0, &tel("v1", 9_000, 1, pt(35.0, -85.0))), Ingest::Late);
    // The other source has its own watermark; an old record there is fine.
    assert_eq!(e.ingest(1, &clever("v1", 9_000, 0, None, None)), Ingest::Accepted);
    assert_eq!(e.counters().sources[0].late, 1);
    assert_eq!(e.counters().late_total(), 1);
}

#[test]
fn window_becomes_ready_when_all_watermarks_pass_its_end() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    e.ingest(0, &tel("v1", 1_000, 0, pt(35.0, -85.0)));
    e.ingest(1, &clever("v1", 1_500, 0, Some("t1"), Some("r1")));
    assert!(e.ready_windows().is_empty());
    e.ingest(0, &tel("v1", 16_000, 1, pt(35.0, -85.0)));
    assert!(e.ready_windows().is_empty(), "clever watermark still behind");
    e.ingest(1, &clever("v1", 15_000, 1, None, None));
    assert_eq!(e.ready_windows(), vec![(0, "v1".to_string())]);
    let out = e.close_ready();
    assert_eq!(out.len(), 1);
    let s = sample(&out[0]);
    assert_eq!((s.window_id, s.ts_ms, s.trip_id.as_deref()), (0, 5_000, Some("t1")));
    assert!(s.present.telemetry && s.present.clever && !s.present.weather);
    assert!(!s.enriched);
}

#[test]
fn latest_record_in_window_wins() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    e.ingest(0, &tel("v1", 3_000, 0, pt(35.3, -85.0)));
    e.ingest(0, &tel("v1", 1_000, 1, pt(35.1, -85.0)));
    e.ingest(0, &tel("v1", 3_000, 2, pt(35.2, -85.0)));
    let out = e.finish();
    let s = sample(&out[0]);
    assert_eq!(s.telemetry_ts_ms, 3_000);
    assert_eq!(s.position, pt(35.2, -85.0), "equal timestamps resolve to the higher offset");
}

#[test]
fn window_without_telemetry_is_a_gap() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    e.ingest(1, &clever("v9", 2_000, 0, None, None));
    let out = e.finish();
    match &out[..] {
        [JoinOutput::Gap(g)] => {
            assert_eq!((g.vehicle_id.as_str(), g.window_id, g.ts_ms), ("v9", 0, 5_000));
            assert_eq!(g.missing, vec!["telemetry".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(e.counters().gaps, 1);
}

#[test]
fn sliding_windows_copy_records_into_each_window() {
    let cfg = two_source_config().with_window(TimeWindowSpec::new(5_000, 1_000, 0).unwrap());
    let mut e = JoinEngine::new(&cfg, Arc::new(StaticContext::empty()));
    e.ingest(0, &tel("v1", 7_500, 0, pt(35.0, -85.0)));
    let ids: Vec<u64> = e.finish().iter().map(|o| sample(o).window_id).collect();
    assert_eq!(ids, vec![3, 4, 5, 6, 7]);
}

#[test]
fn nothing_closes_twice_after_finish() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    e.ingest(0, &tel("v1", 1_000, 0, pt(35.0, -85.0)));
    assert_eq!(e.finish().len(), 1);
    assert_eq!(e.ingest(0, &tel("v1", 2_000, 1, pt(35.0, -85.0))), Ingest::Late);
    assert!(e.finish().is_empty());
}

#[test]
fn idle_source_stops_holding_windows_back() {
    let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
    for (i, ts) in (0..30).map(|s| s * 1_000).enumerate() {
        e.ingest(0, &tel("v1", ts, i as u64, pt(35.0, -85.0)));
    }
    e.advance_idle(30_000);
    assert!(e.close_ready().is_empty(), "clever has no watermark yet");
    e.advance_idle(45_000);
    assert!(e.close_ready().is_empty(), "timeout not yet elapsed");
    e.ingest(0, &tel("v1", 40_000, 30, pt(35.0, -85.0)));
    e.advance_idle(61_000);
    // Clever is forced to 51 s; telemetry (40 s - 10 s) limits closing to windows ending by 30 s.
    let out = e.close_ready();
    assert_eq!(out.iter().map(|o| sample(o).window_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn output_does_not_depend_on_source_interleaving() {
    let mut per_source: Vec<Vec<(usize, RecordEnvelope)>> = vec![Vec::new(), Vec::new()];
    for k in 0..400u64 {
        let vid = format!("v{}", k % 7);
        let ts = (k * 173) as i64;
        per_source[0].push((0, tel(&vid, ts, k, pt(35.0 + k as f64 * 1e-5, -85.0))));
        if k % 3 == 0 {
            per_source[1].push((1, clever(&vid, ts + 40, k, Some("t"), Some("r"))));
        }
    }
    let run = |seed: u64| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut queues: Vec<std::collections::VecDeque<_>> = per_source.iter().map(|v| v.iter().cloned().collect()).collect();
        let mut e = JoinEngine::new(&two_source_config(), Arc::new(StaticContext::empty()));
        let mut out = Vec::new();
        while queues.iter().any(|q| !q.is_empty()) {
            let live: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].is_empty()).collect();
            let q = *live.choose(&mut rng).unwrap();
            let (src, env) = queues[q].pop_front().unwrap();
            e.ingest(src, &env);
            out.extend(e.close_ready());
        }
        out.extend(e.finish());
        out
    };
    let reference = run(0);
    assert!(reference.len() > 50);
    for seed in 1..20 {
        assert_eq!(run(seed), reference, "seed {seed}");
    }
}

#[test]
fn snapshot_restore_continues_identically() {
    let cfg = two_source_config();
    let records: Vec<_> = (0..200u64).map(|k| tel(&format!("v{}", k % 3), (k * 250) as i64, k, pt(35.0, -85.0))).collect();
    let mut full = JoinEngine::new(&cfg, Arc::new(StaticContext::empty()));
    let mut expect = Vec::new();
    for r in &records {
        full.ingest(0, r);
        expect.extend(full.close_ready());
    }
    let mut a = JoinEngine::new(&cfg, Arc::new(StaticContext::empty()));
    let mut got = Vec::new();
    for r in &records[..90] {
        a.ingest(0, r);
        got.extend(a.close_ready());
    }
    let text = serde_json::to_string(&a.snapshot()).unwrap();
    let mut b = JoinEngine::new(&cfg, Arc::new(StaticContext::empty()));
    b.restore(serde_json::from_str(&text).unwrap()).unwrap();
    for r in &records[90..] {
        b.ingest(0, r);
        got.extend(b.close_ready());
    }
    expect.extend(full.finish());
    got.extend(b.finish());
    assert_eq!(got.len(), 200 / 20 * 3);
    assert_eq!(got, expect);
    assert_eq!(b.counters(), full.counters());
}

fn city_context() -> (crate::static_data::StaticBundle, Arc<StaticContext>) {
    let bundle = generate_city(&SynthCityConfig { grid_size: 4, diesel: 2, electric: 1, hybrid: 0, ..Default::default() });
    let ctx = Arc::new(StaticContext::from_bundle(&bundle, 100.0));
    (bundle, ctx)
}

#[test]
fn enrichment_uses_node_elevation_and_segment_grade() {
    let (bundle, ctx) = city_context();
    let node = &bundle.network.nodes["n0101"];
    let mut e = JoinEngine::new(&two_source_config(), ctx);
    e.ingest(0, &tel("d-001", 1_000, 0, node.position));
    let out = e.finish();
    let s = sample(&out[0]);
    assert!(s.enriched);
    assert_eq!(s.elevation_m, node.elevation_m);
    let seg = bundle.network.segment(s.osm_segment_id.as_deref().unwrap()).unwrap();
    assert!(seg.node_ids.iter().any(|n| n == "n0101"));
    assert_eq!(s.grade_pct, Some(seg.grade_pct));
    assert!(s.segment_distance_m.unwrap() < 1e-6);
}

#[test]
fn route_disagreement_keeps_stream_value_and_flags_it() {
    let (bundle, ctx) = city_context();
    let (trip_id, trip) = bundle.gtfs.trips.iter().next().unwrap();
    let other = bundle.gtfs.routes.keys().find(|r| **r != trip.route_id).unwrap().clone();
    let p = bundle.network.nodes["n0000"].position;
    let mut e = JoinEngine::new(&two_source_config(), ctx);
    e.ingest(0, &tel("d-001", 1_000, 0, p));
    e.ingest(1, &clever("d-001", 1_000, 0, Some(trip_id), Some(&other)));
    e.ingest(0, &tel("d-001", 6_000, 1, p));
    e.ingest(1, &clever("d-001", 6_000, 1, Some(trip_id), Some(&trip.route_id)));
    let out = e.finish();
    let (a, b) = (sample(&out[0]), sample(&out[1]));
    assert_eq!(a.route_id.as_deref(), Some(other.as_str()));
    assert!(a.route_mismatch);
    assert!(!b.route_mismatch);
}

#[test]
fn weather_joins_from_nearest_station_when_present_in_window() {
    let (bundle, ctx) = city_context();
    let mut cfg = two_source_config();
    cfg.inputs.push(JoinInput { tag: "wx".into(), kind: SourceKind::Weather, topic: TopicName::parse("carta/t/wx").unwrap() });
    let station = bundle.stations[0].station_id.clone();
    let w = WeatherRecord {
        station_id: station.clone(),
        ts_ms: 2_000,
        temperature_c: 21.5,
        wind_speed_ms: 3.0,
        wind_direction_deg: 90.0,
        precipitation_mmh: 0.0,
        humidity_pct: 55.0,
        visibility_km: 10.0,
        pressure_hpa: 1013.0,
    };
    let env = RecordEnvelope { topic: cfg.inputs[2].topic.clone(), offset: 0, ts_ms: 2_000, payload: serde_json::to_vec(&w).unwrap() };
    let mut e = JoinEngine::new(&cfg, ctx);
    let p = bundle.network.nodes["n0000"].position;
    e.ingest(2, &env);
    e.ingest(0, &tel("d-001", 1_000, 0, p));
    e.ingest(0, &tel("d-001", 6_000, 1, p));
    let out = e.finish();
    let (a, b) = (sample(&out[0]), sample(&out[1]));
    assert_eq!((a.temperature_c, a.station_id.as_deref(), a.present.weather), (Some(21.5), Some(station.as_str()), true));
    assert_eq!((b.temperature_c, b.present.weather), (None, false));
}

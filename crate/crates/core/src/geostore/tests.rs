use super::*;
use crate::join::Presence;

fn sample(vid: &str, wid: u64, fleet: FleetKind, lat: f64, lon: f64) -> JoinedSample {
    JoinedSample {
        vehicle_id: vid.into(),
        window_id: wid,
        ts_ms: (wid as i64 + 1) * 5_000,
        fleet,
        position: GeoPoint::new(lat, lon).unwrap(),
        telemetry_ts_ms: wid as i64 * 5_000 + 4_000,
        trip_id: None,
        route_id: None,
        driver_id: None,
        odometer_m: None,
        soc_pct: None,
        battery_current_a: None,
        battery_voltage_v: None,
        charging: None,
        fuel_level_pct: None,
        fuel_rate_gph: None,
        osm_segment_id: None,
        segment_distance_m: None,
        elevation_m: None,
        grade_pct: None,
        station_id: None,
        temperature_c: None,
        humidity_pct: None,
        wind_speed_ms: None,
        precipitation_mmh: None,
        traffic: None,
        onboard_estimate: None,
        present: Presence { telemetry: true, ..Default::default() },
        route_mismatch: false,
        enriched: false,
    }
}

fn stored(offset: u64, s: JoinedSample) -> StoredSample {
    StoredSample { offset, sample: s }
}

#[test]
fn increment_definitions() {
    let model = EnergyModel { pack_kwh: 50.0, ..EnergyModel::default() };
    let mut a = sample("e", 0, FleetKind::Electric, 35.0, -85.0);
    let mut b = sample("e", 1, FleetKind::Electric, 35.0, -85.0);
    (a.soc_pct, b.soc_pct, a.odometer_m, b.odometer_m) = (Some(80.0), Some(79.0), Some(0.0), Some(3218.688));
    let inc = energy_increment(&a, &b, &model).unwrap();
    assert!((inc.energy_kwh - 0.5).abs() < 1e-12);
    assert!((inc.distance_mi - 2.0).abs() < 1e-12);

    let mut d0 = sample("d", 0, FleetKind::Diesel, 35.0, -85.0);
    let mut d1 = sample("d", 1, FleetKind::Diesel, 35.0, -85.0);
    // One percent of a 100 gallon tank.
    (d0.fuel_level_pct, d1.fuel_level_pct) = (Some(50.0), Some(49.0));
    let inc = energy_increment(&d0, &d1, &EnergyModel::default()).unwrap();
    assert!((inc.energy_kwh - 40.7).abs() < 1e-9);
}

#[test]
fn charging_contributes_nothing_and_is_flagged() {
    let m = EnergyModel::default();
    let mut a = sample("e", 0, FleetKind::Electric, 35.0, -85.0);
    let mut b = sample("e", 1, FleetKind::Electric, 35.0, -85.0);
    (a.soc_pct, b.soc_pct, b.charging) = (Some(50.0), Some(51.0), Some(true));
    let inc = energy_increment(&a, &b, &m).unwrap();
    assert_eq!((inc.energy_kwh, inc.charging), (0.0, true));
    b.odometer_m = Some(10.0);
    a.odometer_m = Some(20.0);
    assert_eq!(energy_increment(&a, &b, &m), Err(NonMonotoneOdometer));
    let incs = compute_energy_increments(&[a.clone(), b.clone(), a], &m);
    assert_eq!(incs.len(), 2);
    assert!(incs[0].is_err() && incs[1].is_ok());
}

#[test]
fn insert_is_idempotent_and_queryable() {
    let mut st = GeoStore::new(EnergyModel::default());
    let s = sample("v", 3, FleetKind::Diesel, 35.01, -85.02);
    assert_eq!(st.insert(stored(0, s.clone())), InsertOutcome::Inserted);
    assert_eq!(st.insert(stored(1, s.clone())), InsertOutcome::Duplicate);
    assert_eq!(st.len(), 1);
    let all = st.query_bbox(&BoundingBox::world(), i64::MIN, i64::MAX);
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].offset, 0);
    let elsewhere = BoundingBox::new(10.0, 10.0, 11.0, 11.0).unwrap();
    assert!(st.query_bbox(&elsewhere, i64::MIN, i64::MAX).is_empty());
    // Time range is half-open on the sample's window end.
    assert_eq!(st.query_bbox(&BoundingBox::world(), 0, 20_000).len(), 0);
    assert_eq!(st.query_bbox(&BoundingBox::world(), 20_000, 20_001).len(), 1);
}

#[test]
fn hand_computed_fixture() {
    // One electric bus, ten samples: SOC falls 0.5 per window except one charging interval,
    // odometer +804.672 m per window (half a mile), route switches after the fifth sample.
    let mut st = GeoStore::new(EnergyModel { pack_kwh: 400.0, ..EnergyModel::default() });
    for k in 0..10u64 {
        let mut s = sample("e-1", k, FleetKind::Electric, 35.0 + k as f64 * 1e-4, -85.0);
        s.soc_pct = Some(if k < 7 { 90.0 - 0.5 * k as f64 } else { 90.0 - 0.5 * k as f64 + 2.0 });
        s.charging = Some(k == 7);
        s.odometer_m = Some(804.672 * k as f64);
        s.route_id = Some(if k < 5 { "r1".into() } else { "r2".into() });
        st.insert(stored(k, s));
    }
    let agg = st.aggregate_energy(GroupBy::Route, &AggregateFilter::time(i64::MIN, i64::MAX)).unwrap();
    // r1: intervals 0..5 each 0.5% of 400 kWh = 2 kWh -> 10 kWh over 2.5 mi.
    // r2: intervals 5->6 (2 kWh), 6->7 and 7->8 charging (0), 8->9 (2 kWh), sample 9 has no successor.
    assert_eq!(agg.rows.len(), 2);
    let (r1, r2) = (&agg.rows[0], &agg.rows[1]);
    assert_eq!((r1.key.as_str(), r1.sample_count), ("r1", 5));
    assert!((r1.energy_kwh - 10.0).abs() < 1e-9 && (r1.distance_mi - 2.5).abs() < 1e-9);
    assert!((r1.kwh_per_mile.unwrap() - 4.0).abs() < 1e-9);
    assert_eq!((r2.key.as_str(), r2.sample_count), ("r2", 5));
    assert!((r2.energy_kwh - 4.0).abs() < 1e-9 && (r2.distance_mi - 2.0).abs() < 1e-9);
    assert_eq!(agg.charging_intervals, 2);

    let fleet = st.aggregate_energy(GroupBy::Fleet, &AggregateFilter::time(i64::MIN, i64::MAX)).unwrap();
    assert_eq!(fleet.rows.len(), 1);
    assert!((fleet.rows[0].energy_kwh - 14.0).abs() < 1e-9);
}

#[test]
fn zero_distance_has_no_rate_and_bad_range_is_rejected() {
    let mut st = GeoStore::new(EnergyModel::default());
    st.insert(stored(0, sample("v", 0, FleetKind::Hybrid, 35.0, -85.0)));
    let agg = st.aggregate_energy(GroupBy::Fleet, &AggregateFilter::time(0, i64::MAX)).unwrap();
    assert_eq!(agg.rows[0].kwh_per_mile, None);
    assert!(matches!(st.aggregate_energy(GroupBy::Fleet, &AggregateFilter::time(10, 5)), Err(GeoStoreError::InvalidQuery(_))));
}

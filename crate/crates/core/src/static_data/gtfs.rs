//! GTFS subset: routes, trips, stops, stop_times and calendar.
//!
//! `trips.txt` may carry an optional `vehicle_id` column binding a trip to a
//! vehicle; real feeds lack it and leave the binding to runtime data.

use super::StaticDataError;
use crate::domain::GeoPoint;
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub route_id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: String,
    pub route_id: String,
    pub service_id: String,
    pub vehicle_id: Option<String>,
    pub block_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub stop_id: String,
    pub name: String,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopTime {
    pub trip_id: String,
    pub stop_id: String,
    /// Seconds after midnight of the service day; may exceed 86400.
    pub arrival_s: u32,
    pub departure_s: u32,
    pub sequence: u32,
}

/// Weekday bitmask (Monday first) over an inclusive date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceCalendar {
    pub service_id: String,
    pub weekdays: [bool; 7],
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl ServiceCalendar {
    pub fn runs_on(&self, date: NaiveDate) -> bool {
        date >= self.start_date
            && date <= self.end_date
            && self.weekdays[date.weekday().num_days_from_monday() as usize]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GtfsSchedule {
    pub routes: BTreeMap<String, Route>,
    pub trips: BTreeMap<String, Trip>,
    pub stops: BTreeMap<String, Stop>,
    /// Per trip, ordered by sequence.
    pub stop_times: BTreeMap<String, Vec<StopTime>>,
    /// Empty when the feed has no calendar: every service then runs daily.
    pub calendar: BTreeMap<String, ServiceCalendar>,
}

impl GtfsSchedule {
    pub fn route_of_trip(&self, trip_id: &str) -> Option<&str> {
        self.trips.get(trip_id).map(|t| t.route_id.as_str())
    }

    pub fn service_runs_on(&self, service_id: &str, date: NaiveDate) -> bool {
        if self.calendar.is_empty() {
            return true;
        }
        self.calendar.get(service_id).is_some_and(|c| c.runs_on(date))
    }

    pub fn stop_time_count(&self) -> usize {
        self.stop_times.values().map(Vec::len).sum()
    }
}

/// A trip operating on a given date, with bounds from its first and last stop times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTrip {
    pub trip_id: String,
    pub vehicle_id: Option<String>,
    pub start_s: u32,
    pub end_s: u32,
    pub route_id: String,
}

pub fn trips_active_at(schedule: &GtfsSchedule, date: NaiveDate) -> Vec<ActiveTrip> {
    schedule
        .trips
        .values()
        .filter(|t| schedule.service_runs_on(&t.service_id, date))
        .filter_map(|t| {
            let times = schedule.stop_times.get(&t.trip_id)?;
            let (first, last) = (times.first()?, times.last()?);
            Some(ActiveTrip {
                trip_id: t.trip_id.clone(),
                vehicle_id: t.vehicle_id.clone(),
                start_s: first.departure_s.min(first.arrival_s),
                end_s: last.arrival_s,
                route_id: t.route_id.clone(),
            })
        })
        .collect()
}

/// Parse `H:MM:SS`; hours may exceed 23 for after-midnight service.
pub fn parse_gtfs_time(s: &str) -> Option<u32> {
    let mut it = s.trim().split(':');
    let h: u32 = it.next()?.parse().ok()?;
    let m: u32 = it.next()?.parse().ok()?;
    let sec: u32 = it.next()?.parse().ok()?;
    if it.next().is_some() || m > 59 || sec > 59 {
        return None;
    }
    Some(h * 3600 + m * 60 + sec)
}

fn format_gtfs_time(s: u32) -> String {
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

struct Table {
    file: String,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(dir: &Path, name: &str, optional: bool) -> Result<Option<Table>, StaticDataError> {
        let path = dir.join(name);
        if !path.exists() {
            return if optional { Ok(None) } else { Err(StaticDataError::MissingFile(path)) };
        }
        let malformed = |line: u64, message: String| StaticDataError::MalformedCsv {
            file: name.to_string(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(&path)
            .map_err(|e| malformed(1, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        let columns = headers
            .iter()
            .enumerate()
            // Tolerate a UTF-8 byte-order mark on the first header.
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                malformed(line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Some(Table { file: name.to_string(), columns, rows }))
    }

    fn col(&self, name: &str) -> Result<usize, StaticDataError> {
        self.columns.get(name).copied().ok_or_else(|| StaticDataError::MalformedCsv {
            file: self.file.clone(),
            line: 1,
            message: format!("missing required column {name:?}"),
        })
    }

    fn opt_col(&self, name: &str) -> Option<usize> {
        self.columns.get(name).copied()
    }

    fn err(&self, line: u64, message: impl Into<String>) -> StaticDataError {
        StaticDataError::MalformedCsv { file: self.file.clone(), line, message: message.into() }
    }

    fn field<'a>(&self, rec: &'a csv::StringRecord, line: u64, idx: usize, name: &str) -> Result<&'a str, StaticDataError> {
        match rec.get(idx) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(self.err(line, format!("empty required field {name:?}"))),
        }
    }
}

fn opt_field(rec: &csv::StringRecord, idx: Option<usize>) -> Option<String> {
    idx.and_then(|i| rec.get(i)).filter(|v| !v.is_empty()).map(str::to_string)
}

/// Load and cross-validate a GTFS directory. Unknown columns are ignored.
pub fn load_gtfs(dir: &Path) -> Result<GtfsSchedule, StaticDataError> {
    let mut schedule = GtfsSchedule::default();

    let routes = Table::read(dir, "routes.txt", false)?.expect("required");
    let (rid, short, long) = (routes.col("route_id")?, routes.opt_col("route_short_name"), routes.opt_col("route_long_name"));
    for (line, rec) in &routes.rows {
        let route_id = routes.field(rec, *line, rid, "route_id")?.to_string();
        let name = opt_field(rec, short).or_else(|| opt_field(rec, long)).unwrap_or_else(|| route_id.clone());
        if schedule.routes.insert(route_id.clone(), Route { route_id: route_id.clone(), name }).is_some() {
            return Err(routes.err(*line, format!("duplicate route_id {route_id:?}")));
        }
    }

    let stops = Table::read(dir, "stops.txt", false)?.expect("required");
    let (sid, sname, slat, slon) = (stops.col("stop_id")?, stops.opt_col("stop_name"), stops.col("stop_lat")?, stops.col("stop_lon")?);
    for (line, rec) in &stops.rows {
        let stop_id = stops.field(rec, *line, sid, "stop_id")?.to_string();
        let parse = |idx, name| -> Result<f64, StaticDataError> {
            stops.field(rec, *line, idx, name)?.parse().map_err(|_| stops.err(*line, format!("{name} is not a number")))
        };
        let position = GeoPoint::new(parse(slat, "stop_lat")?, parse(slon, "stop_lon")?)
            .map_err(|e| stops.err(*line, e.to_string()))?;
        let name = opt_field(rec, sname).unwrap_or_default();
        if schedule.stops.insert(stop_id.clone(), Stop { stop_id: stop_id.clone(), name, position }).is_some() {
            return Err(stops.err(*line, format!("duplicate stop_id {stop_id:?}")));
        }
    }

    if let Some(cal) = Table::read(dir, "calendar.txt", true)? {
        let sid = cal.col("service_id")?;
        let days: Vec<usize> = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
            .iter()
            .map(|d| cal.col(d))
            .collect::<Result<_, _>>()?;
        let (start, end) = (cal.col("start_date")?, cal.col("end_date")?);
        for (line, rec) in &cal.rows {
            let service_id = cal.field(rec, *line, sid, "service_id")?.to_string();
            let mut weekdays = [false; 7];
            for (k, idx) in days.iter().enumerate() {
                weekdays[k] = match cal.field(rec, *line, *idx, "weekday")? {
                    "1" => true,
                    "0" => false,
                    other => return Err(cal.err(*line, format!("weekday flag must be 0 or 1, got {other:?}"))),
                };
            }
            let date = |idx, name| -> Result<NaiveDate, StaticDataError> {
                NaiveDate::parse_from_str(cal.field(rec, *line, idx, name)?, "%Y%m%d")
                    .map_err(|_| cal.err(*line, format!("{name} must be YYYYMMDD")))
            };
            let entry = ServiceCalendar { service_id: service_id.clone(), weekdays, start_date: date(start, "start_date")?, end_date: date(end, "end_date")? };
            schedule.calendar.insert(service_id, entry);
        }
    }

    let trips = Table::read(dir, "trips.txt", false)?.expect("required");
    let (tid, troute, tservice) = (trips.col("trip_id")?, trips.col("route_id")?, trips.col("service_id")?);
    let (tveh, tblock) = (trips.opt_col("vehicle_id"), trips.opt_col("block_id"));
    let mut dangling_routes = Vec::new();
    let mut dangling_services = Vec::new();
    for (line, rec) in &trips.rows {
        let trip = Trip {
            trip_id: trips.field(rec, *line, tid, "trip_id")?.to_string(),
            route_id: trips.field(rec, *line, troute, "route_id")?.to_string(),
            service_id: trips.field(rec, *line, tservice, "service_id")?.to_string(),
            vehicle_id: opt_field(rec, tveh),
            block_id: opt_field(rec, tblock),
        };
        if !schedule.routes.contains_key(&trip.route_id) {
            dangling_routes.push(trip.route_id.clone());
        }
        if !schedule.calendar.is_empty() && !schedule.calendar.contains_key(&trip.service_id) {
            dangling_services.push(trip.service_id.clone());
        }
        if schedule.trips.contains_key(&trip.trip_id) {
            return Err(trips.err(*line, format!("duplicate trip_id {:?}", trip.trip_id)));
        }
        schedule.trips.insert(trip.trip_id.clone(), trip);
    }
    dangling("route", dangling_routes)?;
    dangling("service", dangling_services)?;

    let st = Table::read(dir, "stop_times.txt", false)?.expect("required");
    let (c_trip, c_stop, c_arr, c_dep, c_seq) = (
        st.col("trip_id")?,
        st.col("stop_id")?,
        st.col("arrival_time")?,
        st.col("departure_time")?,
        st.col("stop_sequence")?,
    );
    let mut dangling_trips = Vec::new();
    let mut dangling_stops = Vec::new();
    let mut by_trip: BTreeMap<String, Vec<(u64, StopTime)>> = BTreeMap::new();
    for (line, rec) in &st.rows {
        let time = |idx, name| -> Result<u32, StaticDataError> {
            parse_gtfs_time(st.field(rec, *line, idx, name)?).ok_or_else(|| st.err(*line, format!("{name} must be H:MM:SS")))
        };
        let s = StopTime {
            trip_id: st.field(rec, *line, c_trip, "trip_id")?.to_string(),
            stop_id: st.field(rec, *line, c_stop, "stop_id")?.to_string(),
            arrival_s: time(c_arr, "arrival_time")?,
            departure_s: time(c_dep, "departure_time")?,
            sequence: st
                .field(rec, *line, c_seq, "stop_sequence")?
                .parse()
                .map_err(|_| st.err(*line, "stop_sequence must be a non-negative integer"))?,
        };
        if !schedule.trips.contains_key(&s.trip_id) {
            dangling_trips.push(s.trip_id.clone());
        }
        if !schedule.stops.contains_key(&s.stop_id) {
            dangling_stops.push(s.stop_id.clone());
        }
        by_trip.entry(s.trip_id.clone()).or_default().push((*line, s));
    }
    dangling("trip", dangling_trips)?;
    dangling("stop", dangling_stops)?;
    for (trip_id, mut rows) in by_trip {
        rows.sort_by_key(|(_, s)| s.sequence);
        for pair in rows.windows(2) {
            let ((_, a), (line, b)) = (&pair[0], &pair[1]);
            if a.sequence == b.sequence {
                return Err(st.err(*line, format!("duplicate stop_sequence {} in trip {trip_id:?}", b.sequence)));
            }
            if b.arrival_s < a.departure_s {
                return Err(st.err(*line, format!("non-monotone times in trip {trip_id:?}")));
            }
        }
        for (line, s) in &rows {
            if s.departure_s < s.arrival_s {
                return Err(st.err(*line, format!("departure before arrival in trip {trip_id:?}")));
            }
        }
        schedule.stop_times.insert(trip_id, rows.into_iter().map(|(_, s)| s).collect());
    }
    Ok(schedule)
}

fn dangling(entity: &'static str, mut ids: Vec<String>) -> Result<(), StaticDataError> {
    if ids.is_empty() {
        return Ok(());
    }
    ids.sort();
    ids.dedup();
    Err(StaticDataError::DanglingReference { entity, ids })
}

/// Write the schedule as a GTFS directory readable by [`load_gtfs`].
pub fn write_gtfs(dir: &Path, schedule: &GtfsSchedule) -> Result<(), StaticDataError> {
    std::fs::create_dir_all(dir).map_err(|source| StaticDataError::Io { path: dir.to_path_buf(), source })?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| StaticDataError::Io { path, source: std::io::Error::other(e) }
    };
    let write = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), StaticDataError> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
        w.write_record(header).map_err(io(&path))?;
        for r in rows {
            w.write_record(&r).map_err(io(&path))?;
        }
        w.flush().map_err(|source| StaticDataError::Io { path: path.clone(), source })
    };
    write(
        "routes.txt",
        &["route_id", "route_short_name", "route_type"],
        schedule.routes.values().map(|r| vec![r.route_id.clone(), r.name.clone(), "3".into()]).collect(),
    )?;
    write(
        "stops.txt",
        &["stop_id", "stop_name", "stop_lat", "stop_lon"],
        schedule
            .stops
            .values()
            .map(|s| vec![s.stop_id.clone(), s.name.clone(), s.position.lat().to_string(), s.position.lon().to_string()])
            .collect(),
    )?;
    write(
        "trips.txt",
        &["route_id", "service_id", "trip_id", "block_id", "vehicle_id"],
        schedule
            .trips
            .values()
            .map(|t| {
                vec![
                    t.route_id.clone(),
                    t.service_id.clone(),
                    t.trip_id.clone(),
                    t.block_id.clone().unwrap_or_default(),
                    t.vehicle_id.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )?;
    write(
        "stop_times.txt",
        &["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"],
        schedule
            .stop_times
            .values()
            .flatten()
            .map(|s| {
                vec![
                    s.trip_id.clone(),
                    format_gtfs_time(s.arrival_s),
                    format_gtfs_time(s.departure_s),
                    s.stop_id.clone(),
                    s.sequence.to_string(),
                ]
            })
            .collect(),
    )?;
    if !schedule.calendar.is_empty() {
        write(
            "calendar.txt",
            &["service_id", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "start_date", "end_date"],
            schedule
                .calendar
                .values()
                .map(|c| {
                    let mut r = vec![c.service_id.clone()];
                    r.extend(c.weekdays.iter().map(|&d| if d { "1".to_string() } else { "0".to_string() }));
                    r.push(c.start_date.format("%Y%m%d").to_string());
                    r.push(c.end_date.format("%Y%m%d").to_string());
                    r
                })
                .collect(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, stop_times: &str) {
        std::fs::write(dir.join("routes.txt"), "route_id,route_short_name,agency_id\nR7,Route 7,carta\n").unwrap();
        std::fs::write(
            dir.join("stops.txt"),
            "stop_id,stop_name,stop_lat,stop_lon,wheelchair\nA,\"Market St, North\",35.0456,-85.3097,1\nB,Terminal,35.0556,-85.3097,0\n",
        )
        .unwrap();
        std::fs::write(dir.join("trips.txt"), "route_id,service_id,trip_id,vehicle_id\nR7,wkdy,T1,d-001\n").unwrap();
        std::fs::write(
            dir.join("calendar.txt"),
            "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\nwkdy,1,1,1,1,1,0,0,20200101,20201231\n",
        )
        .unwrap();
        std::fs::write(dir.join("stop_times.txt"), stop_times).unwrap();
    }

    const GOOD: &str = "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:00:00,08:00:00,A,1\nT1,09:00:00,09:00:00,B,2\n";

    #[test]
    fn loads_minimal_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), GOOD);
        let s = load_gtfs(dir.path()).unwrap();
        assert_eq!((s.routes.len(), s.trips.len(), s.stops.len(), s.stop_time_count()), (1, 1, 2, 2));
        assert_eq!(s.stops["A"].name, "Market St, North");
        assert_eq!(s.trips["T1"].vehicle_id.as_deref(), Some("d-001"));
    }

    #[test]
    fn dangling_trip_reference_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:00:00,08:00:00,A,1\nT9,08:10:00,08:10:00,B,1\n");
        match load_gtfs(dir.path()) {
            Err(StaticDataError::DanglingReference { entity: "trip", ids }) => assert_eq!(ids, vec!["T9"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotone_trip_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:00:00,08:00:00,A,1\nT1,07:59:00,07:59:00,B,2\n");
        match load_gtfs(dir.path()) {
            Err(StaticDataError::MalformedCsv { file, line, .. }) => {
                assert_eq!(file, "stop_times.txt");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_bad_field() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_gtfs(dir.path()), Err(StaticDataError::MissingFile(_))));
        fixture(dir.path(), "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,8h,08:00:00,A,1\n");
        assert!(matches!(load_gtfs(dir.path()), Err(StaticDataError::MalformedCsv { line: 2, .. })));
    }

    #[test]
    fn active_trips_follow_calendar_and_stop_times() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), GOOD);
        let s = load_gtfs(dir.path()).unwrap();
        let saturday = NaiveDate::from_ymd_opt(2020, 5, 2).unwrap();
        let friday = NaiveDate::from_ymd_opt(2020, 5, 1).unwrap();
        assert!(trips_active_at(&s, saturday).is_empty());
        let active = trips_active_at(&s, friday);
        assert_eq!(active.len(), 1);
        assert_eq!((active[0].start_s, active[0].end_s), (28_800, 32_400));
        assert_eq!(active[0].vehicle_id.as_deref(), Some("d-001"));
        assert!(trips_active_at(&GtfsSchedule::default(), friday).is_empty());
    }

    #[test]
    fn write_then_load_preserves_schedule() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), GOOD);
        let s = load_gtfs(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_gtfs(out.path(), &s).unwrap();
        assert_eq!(load_gtfs(out.path()).unwrap(), s);
    }

    #[test]
    fn time_parsing_allows_after_midnight() {
        assert_eq!(parse_gtfs_time("25:01:02"), Some(90_062));
        assert_eq!(parse_gtfs_time("7:05:00"), Some(25_500));
        assert_eq!(parse_gtfs_time("07:65:00"), None);
    }
}

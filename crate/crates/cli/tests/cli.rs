mod common;

use common::*;
use serde_json::Value;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn tdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdm")).current_dir(dir).args(args).env_remove("TDM_CONFIG").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdm(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "usage");
    assert!(err["message"].as_str().unwrap().contains("Usage:"));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&tdm(dir.path(), &["--help"]));
    for sub in ["serve", "simulate", "join", "monitor", "backfill-store", "query"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
    assert!(ok(&tdm(dir.path(), &["query", "--help"])).contains("--group-by"));
    assert!(ok(&tdm(dir.path(), &["--version"])).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn bad_arguments_and_configs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tdm(dir.path(), &["backfill-store"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr_json(&missing)["message"].as_str().unwrap().contains("tdm.toml"));

    std::fs::write(dir.path().join("bad.toml"), "[broker]\ntenants = []\n").unwrap();
    let empty = tdm(dir.path(), &["--config", "bad.toml", "backfill-store"]);
    assert_eq!(empty.status.code(), Some(1));
    assert_eq!(stderr_json(&empty)["error"], "usage");

    write_config(dir.path());
    let bad_date = tdm(dir.path(), &["monitor", "--date", "2020-13-01"]);
    assert_eq!(bad_date.status.code(), Some(1));
    let inverted = tdm(dir.path(), &["query", "--group-by", "fleet", "--from", "10", "--to", "5"]);
    assert_eq!(inverted.status.code(), Some(1));
    assert!(stderr_json(&inverted)["message"].as_str().unwrap().contains("from_ms"));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    std::fs::write(dir.path().join("data"), "not a directory").unwrap();
    let out = tdm(dir.path(), &["backfill-store"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "runtime");
}

#[test]
fn pipeline_stages_compose_and_query_matches_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_config(root);
    let f = fleet();
    let synth = ok(&tdm(root, &["synth-city", "--out", "static", "--grid-size", "5", "--diesel", &f.diesel.to_string(), "--electric", &f.electric.to_string(), "--hybrid", &f.hybrid.to_string()]));
    let synth: Value = serde_json::from_str(&synth).unwrap();
    assert_eq!(synth["vehicles"], f.diesel + f.electric + f.hybrid);

    std::fs::write(root.join("scenario.toml"), scenario_toml(1200)).unwrap();
    let sim: Value = serde_json::from_str(&ok(&tdm(root, &["simulate", "scenario.toml"]))).unwrap();
    assert!(sim["published"]["carta/telemetry/viriciti-diesel"].as_u64().unwrap() > 0);

    std::fs::write(root.join("join.toml"), "static_dir = \"static\"\ncheckpoint_path = \"join.ckpt\"\n").unwrap();
    let join: Value = serde_json::from_str(&ok(&tdm(root, &["join", "join.toml"]))).unwrap();
    let published = join["published"].as_u64().unwrap();
    assert!(published > 0);
    // A second run resumes from the checkpoint and publishes nothing new.
    let again: Value = serde_json::from_str(&ok(&tdm(root, &["join", "join.toml"]))).unwrap();
    assert_eq!(again["published"], 0);

    let backfill: Value = serde_json::from_str(&ok(&tdm(root, &["backfill-store"]))).unwrap();
    assert_eq!(backfill["audit"], "ok");
    assert_eq!(backfill["next_offset"], published);
    assert!(backfill["samples"].as_u64().unwrap() > 0);

    let (from, to) = ("1583136000000", "1583137200000");
    let table = ok(&tdm(root, &["query", "--group-by", "fleet", "--from", from, "--to", to]));
    let as_json: Value = serde_json::from_str(&ok(&tdm(root, &["query", "--group-by", "fleet", "--from", from, "--to", to, "--format", "json"]))).unwrap();

    let cfg = tdm_cli::AppConfig::load(&root.join("tdm.toml")).unwrap();
    let (broker, cap) = cfg.open_broker().unwrap();
    let gw = tdm_cli::Gateway::new(std::sync::Arc::new(broker), cap, cfg.gateway.clone()).unwrap();
    gw.refresh().unwrap();
    let params = [("from_ms".to_string(), from.to_string()), ("to_ms".into(), to.into()), ("group_by".into(), "fleet".into())];
    let api = gw.aggregate(&params).unwrap();
    assert_eq!(as_json, api);

    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["key", "energy_kwh", "distance_mi", "kwh_per_mile", "sample_count"]);
    let rows: Vec<Vec<String>> = lines.map(|l| l.split_whitespace().map(String::from).collect()).collect();
    let api_rows = api["rows"].as_array().unwrap();
    assert_eq!(rows.len(), api_rows.len());
    assert!(!rows.is_empty());
    for (t, a) in rows.iter().zip(api_rows) {
        assert_eq!(t[0], a["key"].as_str().unwrap());
        for (i, k) in ["energy_kwh", "distance_mi", "kwh_per_mile"].into_iter().enumerate() {
            match a.get(k).and_then(Value::as_f64) {
                Some(v) => assert_eq!(t[i + 1].parse::<f64>().unwrap(), v, "{k}"),
                None => assert_eq!(t[i + 1], "-"),
            }
        }
        assert_eq!(t[4].parse::<u64>().unwrap(), a["sample_count"].as_u64().unwrap());
    }
}

#[test]
fn monitor_twice_gives_identical_reports() {
    let d = Deployment::empty();
    {
        let (broker, cap) = d.broker();
        monitored_weeks(&broker, &cap, &[33], None);
    }
    let root = d.dir.path();
    std::fs::write(root.join("monitor.toml"), "telemetry_topics = [\"carta/telemetry/viriciti-diesel\"]\n").unwrap();
    let date = day(33).to_string();
    let args = ["monitor", "--date", &date, "--monitor-config", "monitor.toml"];
    let first = ok(&tdm(root, &args));
    let report_path = root.join("reports").join(format!("{date}.json"));
    let file = std::fs::read(&report_path).unwrap();
    let alerts_len = |d: &Deployment| {
        let (broker, cap) = d.broker();
        broker.topic_stats(&d.config.gateway.alerts_topic, &cap).unwrap().total_records
    };
    let alerts_before = alerts_len(&d);
    // The first run adds coverage gaps from the schedule in the static bundle.
    assert!(alerts_before > 1);
    let second = ok(&tdm(root, &args));
    assert_eq!(first, second);
    assert_eq!(file, std::fs::read(&report_path).unwrap());
    assert_eq!(alerts_len(&d), alerts_before);

    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["date"], date);
    let status = |name: &str| report["topics"].as_array().unwrap().iter().find(|t| t["topic"] == name).unwrap()["status"].clone();
    assert_eq!(status("carta/telemetry/viriciti-diesel"), "anomaly");
    let kinds: Vec<&str> = report["alerts"].as_array().unwrap().iter().map(|a| a["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "count_anomaly").count(), 1);
    assert!(kinds.contains(&"coverage_gap"));
    assert_eq!(status("carta/monitoring/alerts"), "excluded");
    let text = ok(&tdm(root, &["monitor", "--date", &date, "--monitor-config", "monitor.toml", "--format", "text"]));
    assert!(text.starts_with(&format!("Nightly integrity report for {date}")));
}

#[test]
fn serve_answers_http_until_killed() {
    let d = Deployment::empty();
    let mut child = Command::new(env!("CARGO_BIN_EXE_tdm"))
        .current_dir(d.dir.path())
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"].as_str().unwrap().to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/v1/topics/stats HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    let (head, body) = response.split_once("\r\n\r\n").unwrap();
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    let head = head.to_ascii_lowercase();
    assert!(head.contains("content-type: application/json; charset=utf-8"));
    assert!(head.contains("access-control-allow-origin: *"));
    let body: Value = serde_json::from_str(body).unwrap();
    assert_valid("topic_stats.json", &body);
}

#![allow(dead_code)]

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use chrono::{Days, NaiveDate};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tdm_cli::{AppConfig, Gateway};
use tdm_core::domain::date_start_ms;
use tdm_core::join::{load_context, JoinConfig, JoinRunner};
use tdm_core::monitor::{run_nightly, MonitorConfig};
use tdm_core::sim::{BrokerSink, FleetSizes, Scenario, Simulation};
use tdm_core::static_data::synth::{generate_city, SynthCityConfig};
use tdm_core::{Broker, Capability, TopicName};
use tower::ServiceExt;

pub const SECRET: &str = "s3cret";

pub fn fleet() -> FleetSizes {
    FleetSizes { diesel: 4, electric: 2, hybrid: 1 }
}

pub fn city() -> SynthCityConfig {
    let f = fleet();
    SynthCityConfig { grid_size: 5, diesel: f.diesel, electric: f.electric, hybrid: f.hybrid, ..SynthCityConfig::default() }
}

/// `tdm.toml` for a deployment rooted at `dir`, with relative paths.
pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tdm.toml");
    std::fs::write(
        &path,
        format!(
            r#"[broker]
listen = "127.0.0.1:0"
data_dir = "data"
flush = "os"
tenants = [{{ name = "carta", secret = "{SECRET}" }}, {{ name = "other", secret = "other-secret" }}]

[gateway]
tenant = "carta"
static_dir = "static"
report_dir = "reports"
"#
        ),
    )
    .unwrap();
    path
}

pub fn scenario_toml(horizon_s: u64) -> String {
    let f = fleet();
    format!(
        "seed = 5\nhorizon_s = {horizon_s}\nstatic_dir = \"static\"\n\n[fleet]\ndiesel = {}\nelectric = {}\nhybrid = {}\n",
        f.diesel, f.electric, f.hybrid
    )
}

pub struct Deployment {
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
    pub config: AppConfig,
}

impl Deployment {
    /// Config and static bundle only; no topics yet.
    pub fn empty() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_config(dir.path());
        generate_city(&city()).save(&dir.path().join("static")).unwrap();
        let config = AppConfig::load(&config_path).unwrap();
        Self { dir, config_path, config }
    }

    /// Half an hour of the small fleet, simulated and joined.
    pub fn joined() -> Self {
        let d = Self::empty();
        std::fs::write(d.dir.path().join("scenario.toml"), scenario_toml(1800)).unwrap();
        let scenario = Scenario::load(&d.dir.path().join("scenario.toml")).unwrap();
        let (broker, cap) = d.config.open_broker().unwrap();
        let mut sim = Simulation::from_scenario(scenario.clone()).unwrap();
        sim.run(&mut BrokerSink::new(&broker, &cap, &scenario).unwrap()).unwrap();
        let jc = JoinConfig { static_dir: Some(d.dir.path().join("static")), ..JoinConfig::default() };
        let ctx = Arc::new(load_context(&jc).unwrap());
        JoinRunner::open(&broker, &cap, jc, ctx).unwrap().run_to_end().unwrap();
        d
    }

    pub fn broker(&self) -> (Broker, Capability) {
        self.config.open_broker().unwrap()
    }

    pub fn gateway(&self) -> Arc<Gateway> {
        let (broker, cap) = self.broker();
        let gw = Gateway::new(Arc::new(broker), cap, self.config.gateway.clone()).unwrap();
        gw.refresh().unwrap();
        Arc::new(gw)
    }
}

pub fn day(n: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 2).unwrap().checked_add_days(Days::new(n)).unwrap()
}

pub fn telemetry_topic() -> TopicName {
    TopicName::parse("carta/telemetry/viriciti-diesel").unwrap()
}

/// Five weeks of flat daily counts with dropouts on the given days, monitored nightly
/// from day 28 so every dropout in that range raises exactly one count alert.
pub fn monitored_weeks(broker: &Broker, cap: &Capability, dropouts: &[u64], report_dir: Option<PathBuf>) -> MonitorConfig {
    broker.create_topic(&telemetry_topic(), cap).unwrap();
    for n in 0..35 {
        let count = if dropouts.contains(&n) { 300 } else { 1000 };
        let start = date_start_ms(day(n));
        let recs: Vec<(i64, &[u8])> = (0..count).map(|i| (start + i * 60_000, &b"{\"vehicle_id\":\"yard\"}"[..])).collect();
        broker.publish_batch(&telemetry_topic(), &recs, cap).unwrap();
    }
    let cfg = MonitorConfig { trip_context_topic: None, telemetry_topics: vec![telemetry_topic()], report_dir, ..MonitorConfig::default() };
    for n in 28..35 {
        run_nightly(day(n), broker, cap, None, &cfg).unwrap();
    }
    cfg
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn send(gw: &Arc<Gateway>, req: Request<Body>) -> Reply {
    let res = gw.clone().router().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(gw: &Arc<Gateway>, uri: &str) -> Reply {
    send(gw, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn assert_valid(schema_name: &str, body: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}\n{body:#}");
}

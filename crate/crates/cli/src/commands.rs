use crate::config::{AppConfig, ConfigError};
use crate::gateway::{ApiError, Gateway};
use anyhow::Context as _;
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tdm_core::geostore::GeoStore;
use tdm_core::join::{load_context, JoinConfig, JoinRunner};
use tdm_core::monitor::{run_nightly, MonitorConfig};
use tdm_core::sim::{BrokerSink, Scenario, Simulation};
use tdm_core::static_data::synth::{generate_city, SynthCityConfig};
use tdm_core::static_data::StaticBundle;
use tdm_core::{Broker, Capability};

/// Transit data management: broker, simulators, stream join, aggregate store and integrity monitor.
///
/// Exit status is 0 on success, 1 on usage or configuration errors and 2 on runtime failures.
/// Errors are written to stderr as one JSON object `{"error": "usage"|"runtime", "message": ...}`.
#[derive(Debug, Parser)]
#[command(name = "tdm", version)]
pub struct Cli {
    /// Deployment config with `[broker]` and `[gateway]` sections.
    #[arg(long, global = true, env = "TDM_CONFIG", default_value = "tdm.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the broker wire endpoints and the /api/v1 query API.
    Serve {
        /// Override `broker.listen`.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run a simulation scenario, publishing onto the broker.
    Simulate {
        /// Scenario TOML.
        scenario: PathBuf,
        /// Also write the scenario's static bundle to this directory.
        #[arg(long)]
        write_static: Option<PathBuf>,
    },
    /// Join the source topics into the enriched output topic.
    Join {
        /// Join config TOML.
        join_config: PathBuf,
        /// Keep following the inputs until interrupted instead of stopping at their ends.
        #[arg(long)]
        follow: bool,
    },
    /// Run the nightly integrity checks for one day.
    Monitor {
        /// Day to check (UTC), YYYY-MM-DD.
        #[arg(long)]
        date: NaiveDate,
        /// Monitor config TOML; defaults are used when absent.
        #[arg(long)]
        monitor_config: Option<PathBuf>,
        /// Static bundle with the GTFS schedule; overrides `gateway.static_dir`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Rebuild the aggregate store from the joined topic and audit it.
    BackfillStore,
    /// Energy aggregates, identical to GET /api/v1/aggregate.
    Query {
        #[arg(long, value_enum)]
        group_by: GroupArg,
        /// Start of the range, inclusive, epoch milliseconds.
        #[arg(long)]
        from: i64,
        /// End of the range, exclusive, epoch milliseconds.
        #[arg(long)]
        to: i64,
        #[arg(long)]
        fleet: Option<String>,
        #[arg(long)]
        route: Option<String>,
        /// min_lat,min_lon,max_lat,max_lon
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generate the synthetic city static bundle.
    SynthCity {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        grid_size: usize,
        #[arg(long, default_value_t = 50)]
        diesel: usize,
        #[arg(long, default_value_t = 3)]
        electric: usize,
        #[arg(long, default_value_t = 7)]
        hybrid: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Route,
    Fleet,
    Segment,
}

impl GroupArg {
    fn as_str(self) -> &'static str {
        match self {
            GroupArg::Route => "route",
            GroupArg::Fleet => "fleet",
            GroupArg::Segment => "segment",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn runtime<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

/// Parse `args`, run the command and map the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report(&CliError::Usage(e.render().to_string()));
            return ExitCode::from(1);
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("TDM_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report(e: &CliError) {
    let line = json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{line}");
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(runtime)?;
    text.push('\n');
    print_text(&text)
}

/// A closed stdout (for example `tdm ... | head`) ends output quietly.
fn print_text(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn open(cfg: &AppConfig) -> Result<(Broker, Capability), CliError> {
    cfg.open_broker().map_err(|e| CliError::Runtime(anyhow::Error::new(e).context(format!("opening broker at {}", cfg.broker.data_dir.display()))))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = || AppConfig::load(&cli.config);
    match &cli.command {
        Command::SynthCity { out, grid_size, diesel, electric, hybrid } => synth_city(out, *grid_size, *diesel, *electric, *hybrid),
        Command::Serve { listen } => serve(config()?, listen.clone()),
        Command::Simulate { scenario, write_static } => simulate(&config()?, scenario, write_static.as_deref()),
        Command::Join { join_config, follow } => join(&config()?, join_config, *follow),
        Command::Monitor { date, monitor_config, static_dir, format } => monitor(&config()?, *date, monitor_config.as_deref(), static_dir.clone(), *format),
        Command::BackfillStore => backfill(&config()?),
        Command::Query { group_by, from, to, fleet, route, bbox, format } => {
            let mut params = vec![("from_ms".to_string(), from.to_string()), ("to_ms".into(), to.to_string()), ("group_by".into(), group_by.as_str().into())];
            params.extend(fleet.clone().map(|f| ("fleet".into(), f)));
            params.extend(route.clone().map(|r| ("route_id".into(), r)));
            params.extend(bbox.clone().map(|b| ("bbox".into(), b)));
            query(&config()?, &params, *format)
        }
    }
}

fn synth_city(out: &Path, grid_size: usize, diesel: usize, electric: usize, hybrid: usize) -> Result<(), CliError> {
    let city = generate_city(&SynthCityConfig { grid_size, diesel, electric, hybrid, ..SynthCityConfig::default() });
    city.save(out).map_err(runtime)?;
    print_json(&json!({
        "out": out,
        "vehicles": city.vehicles.len(),
        "segments": city.network.segments.len(),
        "trips": city.gtfs.trips.len(),
    }))
}

fn serve(cfg: AppConfig, listen: Option<String>) -> Result<(), CliError> {
    let addr = listen.unwrap_or_else(|| cfg.broker.listen.clone());
    let (broker, cap) = open(&cfg)?;
    let gw = Arc::new(Gateway::new(Arc::new(broker), cap, cfg.gateway.clone()).map_err(|e| CliError::Usage(format!("gateway.static_dir: {e}")))?);
    gw.refresh().map_err(runtime)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("{}", json!({ "listening": local.to_string() }));
        tracing::info!(%local, "gateway listening");

        let refresher = {
            let gw = gw.clone();
            let period = Duration::from_millis(gw.config().refresh_ms);
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(period);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    tick.tick().await;
                    let gw = gw.clone();
                    match tokio::task::spawn_blocking(move || gw.refresh()).await {
                        Ok(Ok(s)) if s.inserted > 0 => tracing::debug!(inserted = s.inserted, "store refreshed"),
                        Ok(Ok(_)) => {}
                        Ok(Err(e)) => tracing::warn!(error = %e, "store refresh failed"),
                        Err(e) => tracing::warn!(error = %e, "store refresh panicked"),
                    }
                }
            })
        };
        let app = gw.router();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        refresher.abort();
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

fn simulate(cfg: &AppConfig, path: &Path, write_static: Option<&Path>) -> Result<(), CliError> {
    let scenario = Scenario::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut sim = Simulation::from_scenario(scenario.clone()).map_err(runtime)?;
    if let Some(dir) = write_static {
        sim.bundle().save(dir).map_err(runtime)?;
    }
    let (broker, cap) = open(cfg)?;
    let mut sink = BrokerSink::new(&broker, &cap, &scenario).map_err(runtime)?;
    let summary = sim.run(&mut sink).map_err(runtime)?;
    print_json(&summary)
}

fn join(cfg: &AppConfig, path: &Path, follow: bool) -> Result<(), CliError> {
    let jc = JoinConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Arc::new(load_context(&jc).map_err(runtime)?);
    let (broker, cap) = open(cfg)?;
    let mut runner = JoinRunner::open(&broker, &cap, jc, ctx).map_err(runtime)?;
    let stats = if follow {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(runtime)?;
        let watcher = std::thread::spawn(move || {
            rt.block_on(async {
                let _ = tokio::signal::ctrl_c().await;
            });
            flag.store(true, Ordering::Relaxed);
        });
        while !stop.load(Ordering::Relaxed) {
            if runner.poll().map_err(runtime)?.caught_up {
                std::thread::sleep(Duration::from_millis(200));
            }
        }
        runner.checkpoint().map_err(runtime)?;
        let _ = watcher.join();
        runner.stats()
    } else {
        runner.run_to_end().map_err(runtime)?
    };
    print_json(&stats)
}

fn monitor(cfg: &AppConfig, date: NaiveDate, path: Option<&Path>, static_dir: Option<PathBuf>, format: Format) -> Result<(), CliError> {
    let mut mc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let mut mc = MonitorConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if let (Some(dir), Some(base)) = (mc.report_dir.as_mut(), p.parent()) {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
            mc
        }
        None => MonitorConfig { alerts_topic: cfg.gateway.alerts_topic.clone(), ..MonitorConfig::default() },
    };
    if mc.report_dir.is_none() {
        mc.report_dir = cfg.gateway.report_dir.clone();
    }
    let schedule = match static_dir.or_else(|| cfg.gateway.static_dir.clone()) {
        Some(dir) => Some(StaticBundle::load(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?.gtfs),
        None => None,
    };
    let (broker, cap) = open(cfg)?;
    let report = run_nightly(date, &broker, &cap, schedule.as_ref(), &mc).map_err(runtime)?;
    match format {
        Format::Text => print_text(&report.to_text())?,
        _ => print_text(&format!("{}\n", report.to_json()))?,
    }
    Ok(())
}

fn backfill(cfg: &AppConfig) -> Result<(), CliError> {
    let (broker, cap) = open(cfg)?;
    let (store, stats) = GeoStore::rebuild(&broker, &cfg.gateway.joined_topic, &cap, cfg.gateway.energy).map_err(runtime)?;
    store.audit().map_err(runtime)?;
    print_json(&json!({
        "topic": cfg.gateway.joined_topic,
        "replay": stats,
        "samples": store.len(),
        "next_offset": store.next_offset(),
        "audit": "ok",
    }))
}

fn api_error(e: ApiError) -> CliError {
    if e.status.is_client_error() {
        CliError::Usage(e.message)
    } else {
        CliError::Runtime(anyhow::anyhow!(e.message))
    }
}

fn query(cfg: &AppConfig, params: &[(String, String)], format: Format) -> Result<(), CliError> {
    let (broker, cap) = open(cfg)?;
    let gw = Gateway::with_network(Arc::new(broker), cap, cfg.gateway.clone(), None);
    gw.refresh().map_err(runtime)?;
    let body = gw.aggregate(params).map_err(api_error)?;
    match format {
        Format::Json => print_json(&body),
        _ => {
            print_text(&aggregate_table(&body))?;
            Ok(())
        }
    }
}

/// Fixed-width table of an aggregate response; numbers print in shortest round-trip form.
pub fn aggregate_table(body: &Value) -> String {
    let header = ["key", "energy_kwh", "distance_mi", "kwh_per_mile", "sample_count"];
    let rows: Vec<[String; 5]> = body["rows"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .map(|r| {
                    let cell = |k: &str| match &r[k] {
                        Value::Null => "-".to_string(),
                        Value::String(s) => s.clone(),
                        v => v.to_string(),
                    };
                    header.map(cell)
                })
                .collect()
        })
        .unwrap_or_default();
    let widths: Vec<usize> = (0..5).map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let mut s = String::new();
    let line = |cells: &[&str]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    s.push_str(&line(&header));
    for r in &rows {
        s.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    s
}

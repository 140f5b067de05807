//! Deployment config: one TOML file with `[broker]` and `[gateway]` sections.
//!
//! ```toml
//! [broker]
//! listen = "127.0.0.1:8080"
//! data_dir = "data"
//! tenants = [{ name = "carta", secret = "s3cret" }]
//!
//! [gateway]
//! tenant = "carta"
//! static_dir = "static"
//! report_dir = "reports"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tdm_core::{Broker, BrokerConfig, Capability, EnergyModel, TopicName};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub broker: BrokerConfig,
    pub gateway: GatewayConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Tenant whose topics the gateway and the CLI stages read and write.
    pub tenant: String,
    pub joined_topic: TopicName,
    pub alerts_topic: TopicName,
    /// Static bundle with the road network (segment polylines) and GTFS schedule.
    pub static_dir: Option<PathBuf>,
    /// Where `monitor` writes nightly reports; the latest one is summarised by `/api/v1/topics/stats`.
    pub report_dir: Option<PathBuf>,
    /// How often `serve` replays new joined records into the store.
    pub refresh_ms: u64,
    pub energy: EnergyModel,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            tenant: "carta".into(),
            joined_topic: TopicName::parse("carta/joined/enriched").expect("valid"),
            alerts_topic: TopicName::parse("carta/monitoring/alerts").expect("valid"),
            static_dir: None,
            report_dir: None,
            refresh_ms: 1000,
            energy: EnergyModel::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut c = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut c.broker.data_dir);
        for p in [&mut c.gateway.static_dir, &mut c.gateway.report_dir].into_iter().flatten() {
            resolve(base, p);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.broker.tenants.is_empty() {
            return Err(ConfigError::Invalid("broker.tenants is empty".into()));
        }
        if self.secret().is_none() {
            return Err(ConfigError::Invalid(format!("gateway.tenant {:?} is not listed in broker.tenants", self.gateway.tenant)));
        }
        for t in [&self.gateway.joined_topic, &self.gateway.alerts_topic] {
            if t.tenant() != self.gateway.tenant {
                return Err(ConfigError::Invalid(format!("{t} is outside tenant {:?}", self.gateway.tenant)));
            }
        }
        if self.broker.segment_bytes == 0 || self.broker.index_interval == 0 {
            return Err(ConfigError::Invalid("broker.segment_bytes and broker.index_interval must be positive".into()));
        }
        if self.gateway.refresh_ms == 0 {
            return Err(ConfigError::Invalid("gateway.refresh_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn secret(&self) -> Option<&str> {
        self.broker.tenants.iter().find(|t| t.name == self.gateway.tenant).map(|t| t.secret.as_str())
    }

    /// Open the broker and authenticate as the gateway tenant.
    pub fn open_broker(&self) -> Result<(Broker, Capability), tdm_core::LedgerError> {
        let broker = Broker::open(self.broker.clone())?;
        let cap = broker.authenticate(&self.gateway.tenant, self.secret().unwrap_or_default())?;
        Ok((broker, cap))
    }
}

use super::JoinError;
use crate::domain::{TimeWindowSpec, TopicName};
use crate::sim::Topics;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Telemetry,
    Clever,
    Weather,
    Traffic,
    Occupancy,
}

impl SourceKind {
    pub const ALL: [SourceKind; 5] = [SourceKind::Telemetry, SourceKind::Clever, SourceKind::Weather, SourceKind::Traffic, SourceKind::Occupancy];

    /// Weather and traffic carry no vehicle key and join every vehicle spatially.
    pub fn is_broadcast(self) -> bool {
        matches!(self, SourceKind::Weather | SourceKind::Traffic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Telemetry => "telemetry",
            SourceKind::Clever => "clever",
            SourceKind::Weather => "weather",
            SourceKind::Traffic => "traffic",
            SourceKind::Occupancy => "occupancy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinInput {
    pub tag: String,
    pub kind: SourceKind,
    pub topic: TopicName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowPreset {
    /// 5 s tumbling.
    #[serde(rename = "5s")]
    FiveSecond,
    /// 1 s tumbling.
    #[serde(rename = "1s")]
    OneSecond,
}

/// Join configuration (TOML).
///
/// ```toml
/// output = "carta/joined/enriched"
/// preset = "1s"                 # or an explicit [window] table
/// allowed_lateness_ms = 10000
///
/// [[inputs]]
/// tag = "viriciti-diesel"
/// kind = "telemetry"
/// topic = "carta/telemetry/viriciti-diesel"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoinConfig {
    pub inputs: Vec<JoinInput>,
    pub output: TopicName,
    pub preset: Option<WindowPreset>,
    pub window: TimeWindowSpec,
    pub allowed_lateness_ms: i64,
    pub idle_timeout_ms: i64,
    pub static_refresh_ms: i64,
    /// Segments map to the TMC nearest their midpoint within this distance.
    pub tmc_max_distance_m: f64,
    pub static_dir: Option<PathBuf>,
    pub subscription: String,
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every_records: u64,
    pub read_batch: usize,
}

impl Default for JoinConfig {
    fn default() -> Self {
        Self::for_topics(&Topics::default())
    }
}

impl JoinConfig {
    /// All seven simulator topics as inputs.
    pub fn for_topics(t: &Topics) -> Self {
        let input = |tag: &str, kind, topic: &TopicName| JoinInput { tag: tag.into(), kind, topic: topic.clone() };
        Self {
            inputs: vec![
                input("viriciti-diesel", SourceKind::Telemetry, &t.telemetry_diesel),
                input("viriciti-electric", SourceKind::Telemetry, &t.telemetry_electric),
                input("viriciti-hybrid", SourceKind::Telemetry, &t.telemetry_hybrid),
                input("clever", SourceKind::Clever, &t.clever),
                input("darksky", SourceKind::Weather, &t.weather),
                input("here", SourceKind::Traffic, &t.traffic),
                input("apc", SourceKind::Occupancy, &t.occupancy),
            ],
            output: TopicName::parse("carta/joined/enriched").expect("valid"),
            preset: None,
            window: TimeWindowSpec::default_join(),
            allowed_lateness_ms: 10_000,
            idle_timeout_ms: 30_000,
            static_refresh_ms: 86_400_000,
            tmc_max_distance_m: 100.0,
            static_dir: None,
            subscription: "join".into(),
            checkpoint_path: None,
            checkpoint_every_records: 100_000,
            read_batch: 4_096,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, JoinError> {
        let mut c: JoinConfig = toml::from_str(text).map_err(|e| JoinError::Config(e.to_string()))?;
        c.apply_preset();
        c.validate()?;
        Ok(c)
    }

    /// Relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, JoinError> {
        let text = std::fs::read_to_string(path).map_err(|e| JoinError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [c.static_dir.as_mut(), c.checkpoint_path.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn with_window(mut self, window: TimeWindowSpec) -> Self {
        self.window = window;
        self.preset = None;
        self
    }

    fn apply_preset(&mut self) {
        match self.preset {
            Some(WindowPreset::FiveSecond) => self.window = TimeWindowSpec::default_join(),
            Some(WindowPreset::OneSecond) => self.window = TimeWindowSpec::one_second(),
            None => {}
        }
    }

    pub fn validate(&self) -> Result<(), JoinError> {
        let mut tags = std::collections::BTreeSet::new();
        for i in &self.inputs {
            if !tags.insert(i.tag.as_str()) {
                return Err(JoinError::Config(format!("duplicate source tag {:?}", i.tag)));
            }
            if i.topic == self.output {
                return Err(JoinError::Config(format!("output topic {} is also an input", self.output)));
            }
        }
        if !self.inputs.iter().any(|i| i.kind == SourceKind::Telemetry) {
            return Err(JoinError::Config("at least one telemetry input is required".into()));
        }
        if self.allowed_lateness_ms < 0 || self.idle_timeout_ms <= 0 || self.static_refresh_ms <= 0 || self.read_batch == 0 {
            return Err(JoinError::Config("lateness must be >= 0; idle timeout, refresh period and read batch > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_presets() {
        let c = JoinConfig::from_toml("").unwrap();
        assert_eq!((c.window.window_ms(), c.window.hop_ms()), (5_000, 5_000));
        assert_eq!(c.allowed_lateness_ms, 10_000);
        assert_eq!(c.inputs.len(), 7);
        let one = JoinConfig::from_toml("preset = \"1s\"").unwrap();
        assert_eq!(one.window.window_ms(), 1_000);
        let sliding = JoinConfig::from_toml("[window]\nwindow_ms = 5000\nhop_ms = 1000").unwrap();
        assert_eq!(sliding.window.windows_per_instant(), 5);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(JoinConfig::from_toml("output = \"carta/telemetry/clever\"").is_err());
        let dup = "[[inputs]]\ntag = \"a\"\nkind = \"telemetry\"\ntopic = \"carta/t/a\"\n[[inputs]]\ntag = \"a\"\nkind = \"clever\"\ntopic = \"carta/t/b\"\n";
        assert!(matches!(JoinConfig::from_toml(dup), Err(JoinError::Config(_))));
        let no_tel = "[[inputs]]\ntag = \"w\"\nkind = \"weather\"\ntopic = \"carta/w/x\"\n";
        assert!(JoinConfig::from_toml(no_tel).is_err());
    }
}

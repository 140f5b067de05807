//! `tdm` command line and HTTP gateway over the `tdm-core` pipeline.

pub mod commands;
pub mod config;
pub mod gateway;
pub mod wire;

pub use commands::{main_with_args, Cli, CliError};
pub use config::{AppConfig, ConfigError, GatewayConfig};
pub use gateway::{ApiError, ApiQuery, Gateway};

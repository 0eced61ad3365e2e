pub mod config;
pub mod diagnose;
pub mod oracle;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{run, run_sweep, Outcome};

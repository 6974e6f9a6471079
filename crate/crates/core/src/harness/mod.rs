//! Experiment runner behind the `modehop` binary.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{explain_defaults, parse_config, ConfigError, ExperimentConfig, TargetSpec};
pub use presets::{find_preset, list_presets, preset_config, PRESETS};
pub use run::{audit_registry_file, build_target, prepare_target, run_experiment, sampler_config, Report};

//! Scenario files and trace directories.

pub mod scenario_file;
pub mod trace_files;

pub use scenario_file::{load_scenario, parse_scenario, save_scenario, scenario_to_toml};
pub use trace_files::{read_trace, write_trace};

//! Scenario files, closed-loop runs, run logs and plots.

pub mod config;
pub mod logio;
pub mod plots;
pub mod sim;

pub use config::{load_config, parse_config, ExecutionMode, ScenarioConfig, SimSettings};
pub use logio::{read_log, write_log, LogFormat};
pub use plots::{door_segment, emit_plots};
pub use sim::{run_scenario, RunLog, TickRecord};

//! Configuration, closed-loop runs, trace files, studies and plots.

pub mod acceptance;
pub mod config;
pub mod engine;
pub mod output;
pub mod plot;
pub mod study;

pub use config::{load_config, sample_initial, InitialConditions, InitialProfile, ProfileSpec, RunConfig, SimulationConfig};
pub use engine::{fit_decay_rate, EventRecord, Experiment, RunOptions, RunOutput, RunSummary, TraceRecord};
pub use output::{read_events, read_trace, write_events, write_run, write_trace, RunFiles};
pub use study::{compare, summary_table, sweep_c};

//! Scenario configuration, seeded trials, aggregation, persistence and plotting.
//!
//! A run directory holds `run.json` (the resolved scenario),
//! `trials/trial_<id>.csv`, `aggregate.csv` and `plot.svg`.

pub mod aggregate;
pub mod config;
pub mod export;
pub mod plot;
pub mod trial;

pub use aggregate::{aggregate_records, run_experiment, Aggregate, ExperimentResult};
pub use config::{
    preset, preset_game, validate_scenario, AgentSpec, Dynamics, LearnerSpec, ResolvedAgent,
    Scenario, ScenarioConfig, StationarySpec, ValidationReport, PRESET_NAMES,
};
pub use export::{export, import, write_run_dir, Format};
pub use plot::{render_plot, render_svg};
pub use trial::{
    play_stage, run_trial, AgentRuntime, FinalAgentState, Record, StageAgent, StageOutcome,
    TrialTrace,
};

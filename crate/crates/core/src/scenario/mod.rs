//! Scenario files, fleet sampling, day simulation, the optimization
//! pipeline and report export.

pub mod config;
pub mod decision;
pub mod fleet;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use config::{load_scenario, parse_scenario, ScenarioConfig, ScenarioFile};
pub use decision::{decision_boxes, DecisionLayout, DecisionVector};
pub use fleet::{sample_fleet, uncertain_variables, DeviceFleet, FleetTemplate};
pub use simulate::{run_uncontrolled_baseline, simulate_schedule};
pub use pipeline::{estimate_utopia_bounds, run, RunOptions, RunResult, RunStatus, VppModel, VppProblem};
pub use report::{export_report, export_run, ExportFormat, ScheduleReport};

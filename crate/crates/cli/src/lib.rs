//! Batch front end for `specmm`: scenario configurations, the scenario
//! runner and deterministic CSV/JSON/SVG reports.

pub mod config;
pub mod report;
pub mod scenarios;

pub use config::{ScenarioConfig, ScenarioName};
pub use report::{emit_report, load_csv, render_report, Cell, Format, Node, Plot, Table};
pub use scenarios::{run_scenario, Check, ScenarioOutcome};

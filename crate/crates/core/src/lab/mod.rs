//! Experiment harness: baseline costs, safety audits, regret sweeps, slope
//! fits and CSV reporting.

pub mod audit;
pub mod baseline;
pub mod config;
pub mod report;
pub mod sweep;

pub use audit::{safety_audit, SafetyAudit, AUDIT_SLACK};
pub use baseline::{baseline_cost, mean_ci, BaselineCost};
pub use config::{BoxConfig, KSearchSection, LabConfig, Scenario, ScenarioConfig, SweepSection};
pub use report::{
    fit_slope, read_csv_file, read_rows, summarize, write_csv_file, write_rows, CsvRow,
    DiagnosticsRow, RegretReport, RunRow, SlopeFit, SummaryRow, VariantSlope,
};
pub use sweep::{
    baseline_seed, feasibility_report, regret_sweep, run_seed, scenario_baseline, simulate,
    thread_pool, FeasibilityReport,
};

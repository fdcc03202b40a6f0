//! Scenario configuration, end-to-end runs, sweeps and metrics.

mod config;
pub mod metrics;
mod run;
mod sweep;

pub use config::{AttackConfig, AttackKind, ProtocolConfig, ProtocolKind, ScenarioConfig};
pub use metrics::{auc, multiclass_auc, precision_at};
pub use run::{execute, run_scenario, write_artifacts, MembershipResult, MetricsReport, ScenarioOutcome, TEST_FRACTION};
pub use sweep::{apply_axis, collect_reports, reports_csv, sweep, SweepAxis, SweepRow, SweepTable};

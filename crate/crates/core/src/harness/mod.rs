//! Scenarios, measurement, log checks and sweeps.

mod monitor;
mod run;
mod scenario;
pub mod stats;
mod sweep;

pub use monitor::{check_oracles, measure_convergence, LeaderChange, OracleContext, RunMonitor, Violation};
pub use run::{
    measure_reelection, run_scenario, simulate, simulate_observed, Reelection, ReelectionOutcome, RunResult,
};
pub use scenario::{
    assumption_violations, Algorithm, ChannelSpec, Crash, ModeSpec, Prepared, Scenario, TopologySpec,
};
pub use sweep::{sweep, worker_count, write_csv, HorizonRule, SweepRow, SweepSpec, CSV_COLUMNS, WORKERS_ENV};

/// Slack factor of the time-bound check: a converging run on strict ADD
/// channels must converge within `SLACK_C * diameter * delta` of
/// stabilization.
pub const SLACK_C: u64 = 3;

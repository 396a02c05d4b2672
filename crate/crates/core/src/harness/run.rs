//! Running scenarios and measuring convergence and re-election.

use serde::{Deserialize, Serialize};

use super::monitor::{LeaderChange, OracleContext, RunMonitor, Violation};
use super::scenario::{Crash, Prepared, Scenario};
use crate::error::ScenarioError;
use crate::model::{ProcessId, SimTime};
use crate::sim::{NullObserver, Observer, Simulation, Tee};
use crate::topology;

/// Measured outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub n: u32,
    /// Longest shortest path of the whole graph; absent when it is not
    /// strongly connected.
    pub diameter: Option<u32>,
    pub delta: u64,
    pub horizon: SimTime,
    pub seed: u64,
    pub correct: Vec<ProcessId>,
    pub expected_leader: Option<ProcessId>,
    pub convergence_time: Option<SimTime>,
    /// First moment of agreement on the expected leader, lasting or not.
    pub first_agreement_time: Option<SimTime>,
    pub total_messages: u64,
    pub delivered: u64,
    /// Largest size-bounded message in bits: all messages with known
    /// membership, pending-free messages between correct processes otherwise.
    pub max_message_bits: Option<u64>,
    pub max_message_bits_overall: u64,
    /// Last time a pending pair travelled between correct processes.
    pub pending_quiescence_time: Option<SimTime>,
    pub final_leaders: Vec<ProcessId>,
    pub leader_timeline: Vec<LeaderChange>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timeline_truncated: bool,
    pub assumption_violations: Vec<String>,
    pub oracle_violations: Vec<Violation>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.convergence_time.is_some()
    }
}

fn oracle_context(sc: &Scenario, prepared: &Prepared, victim: Option<ProcessId>) -> OracleContext {
    OracleContext {
        n: prepared.graph.n(),
        protocol: sc.protocol(),
        horizon: sc.horizon,
        correct: prepared.correct.clone(),
        victim,
    }
}

fn execute(
    sc: &Scenario,
    prepared: &Prepared,
    victim: Option<ProcessId>,
    observer: &mut impl Observer,
) -> Result<RunResult, ScenarioError> {
    let ctx = oracle_context(sc, prepared, victim);
    let mut monitor = RunMonitor::new(ctx);
    let mut sim = Simulation::new(sc.sim_setup(prepared));
    sim.run_until(sc.horizon, &mut Tee(&mut monitor, observer));
    let stats = sim.stats();
    Ok(RunResult {
        n: prepared.graph.n(),
        diameter: topology::full_diameter(&prepared.graph).ok(),
        delta: sc.delta()?.0,
        horizon: sc.horizon,
        seed: sc.seed,
        correct: prepared.correct.iter().copied().collect(),
        expected_leader: prepared.expected_leader(),
        convergence_time: monitor.convergence_time(),
        first_agreement_time: monitor.first_agreement_time(),
        total_messages: stats.sends,
        delivered: stats.deliveries,
        max_message_bits: monitor.bounded_message_bits(),
        max_message_bits_overall: monitor.max_message_bits(),
        pending_quiescence_time: match sc.protocol() {
            crate::sim::Protocol::Unknown { .. } => monitor.pending_quiescence_time(),
            crate::sim::Protocol::Known { .. } => None,
        },
        final_leaders: prepared.graph.processes().map(|p| sim.leader(p)).collect(),
        leader_timeline: monitor.timeline().to_vec(),
        timeline_truncated: monitor.timeline_truncated(),
        assumption_violations: prepared.assumption_violations.clone(),
        oracle_violations: monitor.violations(),
    })
}

/// Runs `sc` even when its assumptions do not hold; the violated assumptions
/// are listed in the result.
pub fn simulate(sc: &Scenario) -> Result<RunResult, ScenarioError> {
    simulate_observed(sc, &mut NullObserver)
}

/// [`simulate`], also feeding every engine callback to `observer`.
pub fn simulate_observed(sc: &Scenario, observer: &mut impl Observer) -> Result<RunResult, ScenarioError> {
    let prepared = sc.prepare()?;
    execute(sc, &prepared, None, observer)
}

/// Runs `sc` after checking that the protocol's assumptions hold.
pub fn run_scenario(sc: &Scenario) -> Result<RunResult, ScenarioError> {
    let prepared = sc.validate()?;
    execute(sc, &prepared, None, &mut NullObserver)
}

/// Timing of a leader crash, relative to the crash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reelection {
    pub victim: ProcessId,
    pub crash_time: SimTime,
    /// Mean over correct processes of the delay until they stopped trusting
    /// the victim for good; absent if some process never did.
    pub discard_time: Option<f64>,
    pub new_convergence_time: Option<SimTime>,
    /// `new_convergence_time - crash_time`.
    pub reelection_time: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReelectionOutcome {
    pub baseline: RunResult,
    pub after_crash: RunResult,
    pub reelection: Reelection,
}

/// Runs `sc` to its first convergence, then reruns it with `victim` (the
/// elected leader by default) crashing at that instant and `post_horizon`
/// more ticks of simulated time (`sc.horizon` by default).
pub fn measure_reelection(
    sc: &Scenario,
    victim: Option<ProcessId>,
    post_horizon: Option<u64>,
) -> Result<ReelectionOutcome, ScenarioError> {
    if !sc.crashes.is_empty() {
        return Err(ScenarioError::PreScheduledCrashes);
    }
    let baseline = run_scenario(sc)?;
    let crash_time = baseline.convergence_time.ok_or(ScenarioError::NoConvergence(sc.horizon))?;
    let victim = match victim {
        Some(v) => v,
        None => baseline.expected_leader.ok_or(ScenarioError::NoCorrectProcess)?,
    };
    let mut after = sc.clone();
    after.crashes = vec![Crash { process: victim, time: crash_time }];
    after.horizon = SimTime(crash_time.0 + post_horizon.unwrap_or(sc.horizon.0));
    let prepared = after.prepare()?;

    let ctx = oracle_context(&after, &prepared, Some(victim));
    let mut monitor = RunMonitor::new(ctx);
    let after_crash = execute(&after, &prepared, Some(victim), &mut monitor)?;

    let discards = monitor.discard_times();
    let discard_time = discards
        .iter()
        .map(|(_, t)| t.map(|t| t.0.saturating_sub(crash_time.0) as f64))
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    let new_convergence_time = after_crash.convergence_time;
    let reelection = Reelection {
        victim,
        crash_time,
        discard_time,
        new_convergence_time,
        reelection_time: new_convergence_time.map(|t| t.0.saturating_sub(crash_time.0)),
    };
    Ok(ReelectionOutcome { baseline, after_crash, reelection })
}

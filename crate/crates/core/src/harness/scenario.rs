//! Experiment descriptions and the assumption checks each protocol needs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::known::HopboundSelection;
use crate::model::{compute_delta, AddParams, Duration, ProcessId, SimTime};
use crate::sim::{ChannelConfig, LossMode, Protocol, SimSetup};
use crate::topology::{self, Digraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring {
        n: u32,
    },
    Regular {
        n: u32,
        degree: u32,
        /// Graph seed; the scenario seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Complete {
        n: u32,
    },
    EdgeList {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inline: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<u32>,
    },
}

impl TopologySpec {
    /// Same family with `n` processes; edge lists keep their size.
    pub fn with_size(&self, n: u32) -> Self {
        match self.clone() {
            TopologySpec::Ring { .. } => TopologySpec::Ring { n },
            TopologySpec::Regular { degree, seed, .. } => TopologySpec::Regular { n, degree, seed },
            TopologySpec::Complete { .. } => TopologySpec::Complete { n },
            other @ TopologySpec::EdgeList { .. } => other,
        }
    }

    pub fn build(&self, scenario_seed: u64) -> Result<Digraph, ScenarioError> {
        Ok(match self {
            TopologySpec::Ring { n } => topology::build_ring(*n)?,
            TopologySpec::Regular { n, degree, seed } => {
                topology::build_regular(*n, *degree, seed.unwrap_or(scenario_seed))?
            }
            TopologySpec::Complete { n } => topology::build_complete(*n),
            TopologySpec::EdgeList { path, inline, n } => {
                let text = match (path, inline) {
                    (Some(path), None) => std::fs::read_to_string(path)
                        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?,
                    (None, Some(text)) => text.clone(),
                    _ => {
                        return Err(ScenarioError::Parameter(
                            "edge_list needs exactly one of `path` and `inline`".into(),
                        ))
                    }
                };
                topology::parse_edge_list(&text, *n)?
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Iid,
    Strict,
}

impl ModeSpec {
    pub fn loss_mode(self, drop_probability: f64) -> LossMode {
        match self {
            ModeSpec::Iid => LossMode::Iid { drop_probability },
            ModeSpec::Strict => LossMode::StrictAdd { drop_probability },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeSpec::Iid => "iid",
            ModeSpec::Strict => "strict",
        }
    }
}

fn default_pre_drop() -> f64 {
    1.0
}

/// Scenario-wide channel parameters; edges may override them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "D")]
    pub d: u64,
    #[serde(default)]
    pub stabilization: u64,
    pub mode: ModeSpec,
    pub drop_rate: f64,
    #[serde(default = "default_pre_drop")]
    pub pre_stabilization_drop: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Known,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub process: ProcessId,
    pub time: SimTime,
}

fn default_period() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologySpec,
    pub channel: ChannelSpec,
    pub algorithm: Algorithm,
    #[serde(rename = "T", default = "default_period")]
    pub period: u64,
    #[serde(default)]
    pub crashes: Vec<Crash>,
    pub horizon: SimTime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub clock_offsets: bool,
    #[serde(default)]
    pub staleness_guard: bool,
    /// Known membership only.
    #[serde(default)]
    pub hopbound_selection: HopboundSelection,
}

impl Scenario {
    /// Reads a JSON scenario. A relative edge-list path is taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let mut scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| ScenarioError::Parameter(format!("{}: {e}", path.display())))?;
        scenario.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(scenario)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let TopologySpec::EdgeList { path: Some(p), .. } = &mut self.topology {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self.algorithm {
            Algorithm::Known => Protocol::Known { selection: self.hopbound_selection },
            Algorithm::Unknown => Protocol::Unknown { staleness_guard: self.staleness_guard },
        }
    }

    pub fn delta(&self) -> Result<Duration, ScenarioError> {
        Ok(compute_delta(self.channel.k, Duration(self.channel.d), Duration(self.period))?)
    }

    fn check_parameters(&self) -> Result<(), ScenarioError> {
        let c = &self.channel;
        if c.k < 1 {
            return Err(ScenarioError::Parameter(format!("K must be at least 1, got {}", c.k)));
        }
        if self.period < 1 {
            return Err(ScenarioError::Parameter("T must be at least 1".into()));
        }
        for (name, p) in [("drop_rate", c.drop_rate), ("pre_stabilization_drop", c.pre_stabilization_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::Parameter(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Builds the graph, channel configurations and correct set, checking
    /// everything except the protocol assumptions.
    pub fn prepare(&self) -> Result<Prepared, ScenarioError> {
        self.check_parameters()?;
        let graph = self.topology.build(self.seed)?;
        let n = graph.n();
        let mut crashed = BTreeSet::new();
        for c in &self.crashes {
            if c.process.get() > n {
                return Err(ScenarioError::UnknownCrash(c.process));
            }
            if c.time >= self.horizon {
                return Err(ScenarioError::CrashAfterHorizon {
                    process: c.process,
                    time: c.time,
                    horizon: self.horizon,
                });
            }
            crashed.insert(c.process);
        }
        let correct: BTreeSet<ProcessId> = graph.processes().filter(|p| !crashed.contains(p)).collect();
        if correct.is_empty() && n > 0 {
            return Err(ScenarioError::NoCorrectProcess);
        }
        let channels = graph
            .edges()
            .iter()
            .map(|e| {
                let o = e.overrides;
                let c = &self.channel;
                let params = AddParams::new(
                    o.k.unwrap_or(c.k),
                    Duration(o.d.unwrap_or(c.d)),
                    SimTime(o.stabilization.unwrap_or(c.stabilization)),
                )?;
                let drop = o.drop_probability.unwrap_or(c.drop_rate);
                if !(0.0..=1.0).contains(&drop) {
                    return Err(ScenarioError::Parameter(format!(
                        "drop probability {drop} on {} -> {} outside [0, 1]",
                        e.from, e.to
                    )));
                }
                Ok(ChannelConfig {
                    params,
                    mode: c.mode.loss_mode(drop),
                    pre_stabilization_drop: c.pre_stabilization_drop,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let assumption_violations = assumption_violations(self.algorithm, &graph, &channels, &correct);
        Ok(Prepared { graph, channels, correct, assumption_violations })
    }

    pub fn sim_setup(&self, prepared: &Prepared) -> SimSetup {
        SimSetup {
            graph: prepared.graph.clone(),
            channels: prepared.channels.clone(),
            protocol: self.protocol(),
            period: Duration(self.period),
            seed: self.seed,
            crashes: self.crashes.iter().map(|c| (c.process, c.time)).collect(),
            clock_offsets: self.clock_offsets,
        }
    }

    /// Checks parameters and protocol assumptions, failing on the first
    /// violated assumption.
    pub fn validate(&self) -> Result<Prepared, ScenarioError> {
        let prepared = self.prepare()?;
        if let Some(v) = prepared.assumption_violations.first() {
            return Err(ScenarioError::Assumption(v.clone()));
        }
        Ok(prepared)
    }
}

/// A scenario turned into concrete simulation inputs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub graph: Digraph,
    pub channels: Vec<ChannelConfig>,
    pub correct: BTreeSet<ProcessId>,
    pub assumption_violations: Vec<String>,
}

impl Prepared {
    pub fn expected_leader(&self) -> Option<ProcessId> {
        self.correct.first().copied()
    }
}

/// Known membership needs a spanning tree of eventually-ADD channels rooted at
/// the smallest correct process over exactly the correct processes. Unknown
/// membership needs symmetric channels, all of them eventually ADD, with the
/// correct processes strongly connected.
pub fn assumption_violations(
    algorithm: Algorithm,
    graph: &Digraph,
    channels: &[ChannelConfig],
    correct: &BTreeSet<ProcessId>,
) -> Vec<String> {
    let mut out = Vec::new();
    if correct.is_empty() {
        return out;
    }
    let add_edges: BTreeSet<(ProcessId, ProcessId)> = graph
        .edges()
        .iter()
        .zip(channels)
        .filter(|(_, c)| c.is_eventually_add())
        .map(|(e, _)| (e.from, e.to))
        .collect();
    match algorithm {
        Algorithm::Known => {
            if !topology::validate_span_tree(graph, &add_edges, correct) {
                let root = correct.first().expect("nonempty");
                out.push(format!(
                    "span-tree: no spanning tree of eventually-ADD channels rooted at {root} covers the correct processes"
                ));
            }
        }
        Algorithm::Unknown => {
            if !graph.is_symmetric() {
                out.push("symmetry: some channel has no reverse channel".into());
            }
            if add_edges.len() != graph.edges().len() {
                let e = graph
                    .edges()
                    .iter()
                    .find(|e| !add_edges.contains(&(e.from, e.to)))
                    .expect("some edge is missing");
                out.push(format!("eventual-add: channel {} -> {} never becomes timely", e.from, e.to));
            }
            if !graph.is_strongly_connected(correct) {
                out.push("connectivity: the correct processes are not strongly connected".into());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_scenario(algorithm: Algorithm) -> Scenario {
        serde_json::from_str(&format!(
            r#"{{
                "topology": {{"kind": "ring", "n": 5}},
                "channel": {{"K": 4, "D": 12, "mode": "iid", "drop_rate": 0.01}},
                "algorithm": "{}",
                "horizon": 1000,
                "seed": 3
            }}"#,
            match algorithm {
                Algorithm::Known => "known",
                Algorithm::Unknown => "unknown",
            }
        ))
        .unwrap()
    }

    fn p(id: u32) -> ProcessId {
        ProcessId::from_u32(id)
    }

    #[test]
    fn defaults() {
        let s = ring_scenario(Algorithm::Known);
        assert_eq!(s.period, 1);
        assert!(s.clock_offsets);
        assert_eq!(s.channel.pre_stabilization_drop, 1.0);
        assert_eq!(s.delta().unwrap(), Duration(15));
        let prepared = s.validate().unwrap();
        assert_eq!(prepared.correct.len(), 5);
        assert_eq!(prepared.channels.len(), 10);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"topology": {"kind": "ring", "n": 5}, "channel": {"K": 4, "D": 12, "mode": "iid", "drop_rate": 0.0},
            "algorithm": "known", "horizon": 10, "colour": 1}"#;
        assert!(serde_json::from_str::<Scenario>(text).is_err());
    }

    #[test]
    fn crash_checks() {
        let mut s = ring_scenario(Algorithm::Known);
        s.crashes = vec![Crash { process: p(2), time: SimTime(1000) }];
        assert!(matches!(s.prepare(), Err(ScenarioError::CrashAfterHorizon { .. })));
        s.crashes = vec![Crash { process: p(9), time: SimTime(10) }];
        assert_eq!(s.prepare().unwrap_err(), ScenarioError::UnknownCrash(p(9)));
        s.crashes = (1..=5).map(|i| Crash { process: p(i), time: SimTime(10) }).collect();
        assert_eq!(s.prepare().unwrap_err(), ScenarioError::NoCorrectProcess);
    }

    #[test]
    fn crashes_that_cut_the_graph() {
        // Path 1 - 2 - 3: losing 2 strands 3.
        let mut s = ring_scenario(Algorithm::Unknown);
        s.topology = TopologySpec::EdgeList { path: None, inline: Some("1 2\n2 3\n".into()), n: None };
        s.crashes = vec![Crash { process: p(2), time: SimTime(10) }];
        let err = s.validate().unwrap_err();
        assert!(matches!(err, ScenarioError::Assumption(ref m) if m.starts_with("connectivity")), "{err}");

        s.algorithm = Algorithm::Known;
        let err = s.validate().unwrap_err();
        assert!(matches!(err, ScenarioError::Assumption(ref m) if m.starts_with("span-tree")), "{err}");
    }

    #[test]
    fn dead_channel_breaks_unknown_membership() {
        let mut s = ring_scenario(Algorithm::Unknown);
        s.topology = TopologySpec::EdgeList {
            path: None,
            inline: Some("1 2\n2 3\n3 1\n2 -> 3 4 12 0 1.0\n".into()),
            n: None,
        };
        let prepared = s.prepare().unwrap();
        assert_eq!(prepared.assumption_violations.len(), 1);
        assert!(prepared.assumption_violations[0].starts_with("eventual-add"));
        // Known membership only needs one direction of the triangle.
        s.algorithm = Algorithm::Known;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn bad_rates_rejected() {
        let mut s = ring_scenario(Algorithm::Known);
        s.channel.drop_rate = 1.5;
        assert!(matches!(s.prepare(), Err(ScenarioError::Parameter(_))));
        let mut s = ring_scenario(Algorithm::Known);
        s.period = 0;
        assert!(matches!(s.prepare(), Err(ScenarioError::Parameter(_))));
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let mut s = ring_scenario(Algorithm::Unknown);
        s.crashes = vec![Crash { process: p(1), time: SimTime(400) }];
        s.topology = TopologySpec::Regular { n: 10, degree: 3, seed: None };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    }
}

//! `omega-sim`: run, sweep and validate leader-election scenarios.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omega_core::harness::{
    measure_reelection, run_scenario, simulate_observed, sweep, write_csv, RunResult, Reelection, Scenario,
    SweepSpec,
};
use omega_core::sim::EventLog;
use omega_core::ScenarioError;
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(name = "omega-sim", version, about = "Deterministic simulator for eventual leader election")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and print its result as JSON.
    Run(RunArgs),
    /// Run a sweep and write its CSV.
    Sweep(SweepArgs),
    /// Check a scenario's parameters and protocol assumptions.
    Validate(ScenarioArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TopologyKind {
    Ring,
    Regular,
    Complete,
    EdgeList,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Iid,
    Strict,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    Known,
    Unknown,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Selection {
    Penalized,
    Longest,
}

/// Scenario source plus per-field overrides. Flags win over file values.
#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// JSON scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    topology: Option<TopologyKind>,
    #[arg(long)]
    n: Option<u32>,
    /// Degree of a random regular topology.
    #[arg(long)]
    degree: Option<u32>,
    /// Edge-list file; implies `--topology edge-list`.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long = "K")]
    k: Option<u32>,
    #[arg(long = "D")]
    d: Option<u64>,
    /// Sending period in ticks.
    #[arg(long = "T")]
    t: Option<u64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    stabilization: Option<u64>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Crash `pid` at virtual time `time`; repeatable. Replaces the file's
    /// crash schedule.
    #[arg(long = "crash", value_name = "PID@TIME", value_parser = parse_crash)]
    crashes: Vec<(u32, u64)>,
    #[arg(long, value_enum)]
    hopbound_selection: Option<Selection>,
    #[arg(long)]
    staleness_guard: Option<bool>,
    #[arg(long)]
    clock_offsets: Option<bool>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Crash the elected leader at convergence and time the re-election.
    #[arg(long)]
    reelection: bool,
    /// Write the run's event log as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON sweep file.
    #[arg(long)]
    config: PathBuf,
    /// CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_crash(s: &str) -> Result<(u32, u64), String> {
    let (pid, time) = s.split_once('@').ok_or_else(|| format!("expected PID@TIME, got `{s}`"))?;
    let pid = pid.trim().parse().map_err(|e| format!("bad process id `{pid}`: {e}"))?;
    let time = time.trim().parse().map_err(|e| format!("bad time `{time}`: {e}"))?;
    Ok((pid, time))
}

/// How a command ended, mapped onto the exit code.
enum Failure {
    Assumption(String),
    Usage(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Assumption(_) => Failure::Assumption(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn object<'a>(v: &'a mut Value, key: &str) -> &'a mut Map<String, Value> {
    let map = v.as_object_mut().expect("scenario is an object");
    let entry = map.entry(key).or_insert_with(|| json!({}));
    if !entry.is_object() {
        *entry = json!({});
    }
    entry.as_object_mut().expect("just made an object")
}

impl ScenarioArgs {
    /// The scenario file (or nothing) with every given flag applied.
    fn effective(&self) -> Result<Scenario, Failure> {
        let (mut value, base) = match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                (value, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (json!({}), PathBuf::new()),
        };
        if !value.is_object() {
            return Err(Failure::Usage("scenario must be a JSON object".into()));
        }
        self.apply(&mut value);
        let mut scenario: Scenario =
            serde_json::from_value(value).map_err(|e| Failure::Usage(format!("scenario: {e}")))?;
        scenario.resolve_paths(&base);
        Ok(scenario)
    }

    fn apply(&self, value: &mut Value) {
        let kind = match (self.topology, &self.edges) {
            (Some(t), _) => Some(t),
            (None, Some(_)) => Some(TopologyKind::EdgeList),
            (None, None) => None,
        };
        let topo = object(value, "topology");
        if let Some(kind) = kind {
            let name = match kind {
                TopologyKind::Ring => "ring",
                TopologyKind::Regular => "regular",
                TopologyKind::Complete => "complete",
                TopologyKind::EdgeList => "edge_list",
            };
            if topo.get("kind").and_then(Value::as_str) != Some(name) {
                let n = topo.get("n").cloned();
                topo.clear();
                topo.insert("kind".into(), json!(name));
                if let Some(n) = n.filter(|_| !matches!(kind, TopologyKind::EdgeList)) {
                    topo.insert("n".into(), n);
                }
            }
        }
        if let Some(n) = self.n {
            topo.insert("n".into(), json!(n));
        }
        if let Some(degree) = self.degree {
            topo.insert("degree".into(), json!(degree));
        }
        if let Some(path) = &self.edges {
            topo.remove("inline");
            topo.insert("path".into(), json!(path));
        }

        let channel = object(value, "channel");
        let set = |m: &mut Map<String, Value>, key: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(key.into(), v);
            }
        };
        set(channel, "K", self.k.map(|v| json!(v)));
        set(channel, "D", self.d.map(|v| json!(v)));
        set(channel, "drop_rate", self.drop_rate.map(|v| json!(v)));
        set(channel, "stabilization", self.stabilization.map(|v| json!(v)));
        set(
            channel,
            "mode",
            self.mode.map(|m| {
                json!(match m {
                    Mode::Iid => "iid",
                    Mode::Strict => "strict",
                })
            }),
        );

        let top = value.as_object_mut().expect("scenario is an object");
        set(top, "T", self.t.map(|v| json!(v)));
        set(top, "seed", self.seed.map(|v| json!(v)));
        set(top, "horizon", self.horizon.map(|v| json!(v)));
        set(top, "staleness_guard", self.staleness_guard.map(|v| json!(v)));
        set(top, "clock_offsets", self.clock_offsets.map(|v| json!(v)));
        set(
            top,
            "algorithm",
            self.algorithm.map(|a| {
                json!(match a {
                    AlgorithmArg::Known => "known",
                    AlgorithmArg::Unknown => "unknown",
                })
            }),
        );
        set(
            top,
            "hopbound_selection",
            self.hopbound_selection.map(|s| {
                json!(match s {
                    Selection::Penalized => "penalized",
                    Selection::Longest => "longest",
                })
            }),
        );
        if !self.crashes.is_empty() {
            let crashes: Vec<Value> =
                self.crashes.iter().map(|&(process, time)| json!({"process": process, "time": time})).collect();
            top.insert("crashes".into(), Value::Array(crashes));
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct RunOutput<'a> {
    config: &'a Scenario,
    result: &'a RunResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    reelection: Option<ReelectionOutput<'a>>,
}

#[derive(Serialize)]
struct ReelectionOutput<'a> {
    #[serde(flatten)]
    timing: Option<&'a Reelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    after_crash: Option<&'a RunResult>,
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let sc = args.scenario.effective()?;
    sc.validate()?;
    let result = match &args.log {
        Some(path) => {
            let mut log = EventLog::new();
            let result = simulate_observed(&sc, &mut log)?;
            let file = File::create(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            log.write_jsonl(&mut w)?;
            w.flush()?;
            result
        }
        None => run_scenario(&sc)?,
    };
    let outcome = if args.reelection && result.converged() {
        Some(measure_reelection(&sc, None, None)?)
    } else {
        None
    };
    let reelection = args.reelection.then(|| ReelectionOutput {
        timing: outcome.as_ref().map(|o| &o.reelection),
        after_crash: outcome.as_ref().map(|o| &o.after_crash),
    });
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &RunOutput { config: &sc, result: &result, reelection })?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    let mut spec: SweepSpec =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    spec.base.resolve_paths(args.config.parent().unwrap_or(Path::new("")));
    eprintln!("{}", serde_json::to_string(&spec)?);
    let rows = sweep(&spec)?;
    let out = output(args.out.as_deref())?;
    write_csv(&rows, out).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(())
}

fn validate(args: &ScenarioArgs) -> Result<(), Failure> {
    let sc = args.effective()?;
    let prepared = sc.prepare()?;
    let verdict = json!({
        "config": sc,
        "valid": prepared.assumption_violations.is_empty(),
        "violations": prepared.assumption_violations,
    });
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    match prepared.assumption_violations.first() {
        Some(v) => Err(Failure::Assumption(v.clone())),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Validate(args) => validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assumption(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

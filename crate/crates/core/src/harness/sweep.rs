//! Parameter sweeps: many seeded runs, one CSV row each, plus a mean row per
//! configuration.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::run::{measure_reelection, run_scenario, RunResult};
use super::scenario::Scenario;
use super::stats::mean;
use crate::error::ScenarioError;
use crate::model::SimTime;
use crate::topology;

/// Environment variable overriding the number of sweep worker threads.
pub const WORKERS_ENV: &str = "OMEGA_SIM_WORKERS";

pub const CSV_COLUMNS: [&str; 13] = [
    "n",
    "diameter",
    "K",
    "D",
    "T",
    "drop_rate",
    "mode",
    "seed",
    "convergence_time",
    "discard_time",
    "reelection_time",
    "total_messages",
    "max_message_bits",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonRule {
    Fixed(u64),
    /// `max(min, factor * diameter * delta)`.
    Scaled { factor: f64, min: u64 },
}

impl HorizonRule {
    pub fn horizon(&self, diameter: u32, delta: u64) -> u64 {
        match *self {
            HorizonRule::Fixed(h) => h,
            HorizonRule::Scaled { factor, min } => {
                min.max((factor * f64::from(diameter) * delta as f64).ceil() as u64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Template for every run; sizes, rates, periods and seeds replace its
    /// fields.
    pub base: Scenario,
    #[serde(default)]
    pub sizes: Vec<u32>,
    #[serde(default)]
    pub drop_rates: Vec<f64>,
    #[serde(rename = "T", default)]
    pub periods: Vec<u64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Crash the elected leader at convergence and time the re-election.
    #[serde(default)]
    pub reelection: bool,
    /// Per-run horizon; the base scenario's when absent. Also the length of
    /// the post-crash phase of re-election runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<HorizonRule>,
}

impl SweepSpec {
    fn configurations(&self) -> Vec<Scenario> {
        let sizes: Vec<Option<u32>> =
            if self.sizes.is_empty() { vec![None] } else { self.sizes.iter().copied().map(Some).collect() };
        let drops = if self.drop_rates.is_empty() { vec![self.base.channel.drop_rate] } else { self.drop_rates.clone() };
        let periods = if self.periods.is_empty() { vec![self.base.period] } else { self.periods.clone() };
        let mut out = Vec::new();
        for &size in &sizes {
            for &drop in &drops {
                for &period in &periods {
                    let mut sc = self.base.clone();
                    if let Some(n) = size {
                        sc.topology = sc.topology.with_size(n);
                    }
                    sc.channel.drop_rate = drop;
                    sc.period = period;
                    out.push(sc);
                }
            }
        }
        out
    }

    fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// One CSV row. `seed` is `None` on mean rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    pub diameter: Option<u32>,
    pub k: u32,
    pub d: u64,
    pub t: u64,
    pub drop_rate: f64,
    pub mode: String,
    pub seed: Option<u64>,
    pub convergence_time: Option<f64>,
    pub discard_time: Option<f64>,
    pub reelection_time: Option<f64>,
    pub total_messages: Option<f64>,
    pub max_message_bits: Option<f64>,
    pub delta: u64,
    pub horizon: u64,
    pub oracle_violations: usize,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_mean(&self) -> bool {
        self.seed.is_none()
    }

    fn csv_record(&self) -> [String; 13] {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        [
            self.n.to_string(),
            opt(self.diameter),
            self.k.to_string(),
            self.d.to_string(),
            self.t.to_string(),
            self.drop_rate.to_string(),
            self.mode.clone(),
            self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            opt(self.convergence_time),
            opt(self.discard_time),
            opt(self.reelection_time),
            opt(self.total_messages),
            opt(self.max_message_bits),
        ]
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn template_row(sc: &Scenario, diameter: Option<u32>, delta: u64, seed: Option<u64>) -> SweepRow {
    SweepRow {
        n: 0,
        diameter,
        k: sc.channel.k,
        d: sc.channel.d,
        t: sc.period,
        drop_rate: sc.channel.drop_rate,
        mode: sc.channel.mode.as_str().to_string(),
        seed,
        convergence_time: None,
        discard_time: None,
        reelection_time: None,
        total_messages: None,
        max_message_bits: None,
        delta,
        horizon: sc.horizon.0,
        oracle_violations: 0,
        error: None,
    }
}

fn fill(row: &mut SweepRow, r: &RunResult) {
    row.n = r.n;
    row.convergence_time = r.convergence_time.map(|t| t.0 as f64);
    row.total_messages = Some(r.total_messages as f64);
    row.max_message_bits = r.max_message_bits.map(|b| b as f64);
    row.oracle_violations += r.oracle_violations.len();
}

fn run_one(sc: &Scenario, reelection: bool, rule: Option<HorizonRule>) -> Result<SweepRow, ScenarioError> {
    let graph = sc.topology.build(sc.seed)?;
    let diameter = topology::full_diameter(&graph).ok();
    let delta = sc.delta()?.0;
    let mut sc = sc.clone();
    if let Some(rule) = rule {
        sc.horizon = SimTime(rule.horizon(diameter.unwrap_or(graph.n()), delta));
    }
    let mut row = template_row(&sc, diameter, delta, Some(sc.seed));
    row.n = graph.n();
    if reelection {
        match measure_reelection(&sc, None, Some(sc.horizon.0)) {
            Ok(out) => {
                fill(&mut row, &out.baseline);
                row.oracle_violations += out.after_crash.oracle_violations.len();
                row.discard_time = out.reelection.discard_time;
                row.reelection_time = out.reelection.reelection_time.map(|t| t as f64);
            }
            Err(ScenarioError::NoConvergence(h)) => {
                row.error = Some(ScenarioError::NoConvergence(h).to_string());
            }
            Err(e) => return Err(e),
        }
    } else {
        fill(&mut row, &run_scenario(&sc)?);
    }
    Ok(row)
}

fn mean_row(rows: &[SweepRow]) -> SweepRow {
    let first = &rows[0];
    let all = |f: fn(&SweepRow) -> Option<f64>| -> Option<f64> {
        rows.iter().map(f).collect::<Option<Vec<f64>>>().and_then(|v| mean(&v))
    };
    SweepRow {
        seed: None,
        convergence_time: all(|r| r.convergence_time),
        discard_time: all(|r| r.discard_time),
        reelection_time: all(|r| r.reelection_time),
        total_messages: all(|r| r.total_messages),
        max_message_bits: all(|r| r.max_message_bits),
        oracle_violations: rows.iter().map(|r| r.oracle_violations).sum(),
        error: None,
        ..first.clone()
    }
}

/// Runs every (configuration, seed) pair, on [`worker_count`] threads, and
/// returns per-seed rows each followed by its configuration's mean row.
/// Rows are ordered by configuration then seed regardless of scheduling.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, ScenarioError> {
    let configs = spec.configurations();
    let seeds = spec.seeds();
    let tasks: Vec<Scenario> = configs
        .iter()
        .flat_map(|c| {
            seeds.iter().map(move |&seed| {
                let mut sc = c.clone();
                sc.seed = seed;
                sc
            })
        })
        .collect();
    let results: Vec<Mutex<Option<Result<SweepRow, ScenarioError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = worker_count().min(tasks.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let row = run_one(task, spec.reelection, spec.horizon);
                *results[i].lock().expect("no worker panics while holding the lock") = Some(row);
            });
        }
    });
    let mut rows = Vec::with_capacity(tasks.len() + configs.len());
    for chunk in results.chunks(seeds.len()) {
        let mut group = Vec::with_capacity(seeds.len());
        for cell in chunk {
            group.push(cell.lock().expect("workers finished").take().expect("every task ran")?);
        }
        let mean = mean_row(&group);
        rows.extend(group);
        rows.push(mean);
    }
    Ok(rows)
}

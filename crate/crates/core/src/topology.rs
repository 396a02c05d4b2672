//! Communication graphs: rings, random regular graphs and edge-list files,
//! with diameter and spanning-tree checks.
//!
//! Every graph is directed. An undirected edge stands for the two
//! unidirectional channels between its endpoints, each of which may carry its
//! own channel parameters.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::model::ProcessId;

pub type EdgeId = usize;

/// Per-direction replacements for the scenario-wide channel parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelOverrides {
    pub k: Option<u32>,
    pub d: Option<u64>,
    pub stabilization: Option<u64>,
    pub drop_probability: Option<f64>,
}

impl ChannelOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: ProcessId,
    pub to: ProcessId,
    #[serde(default, skip_serializing_if = "ChannelOverrides::is_empty")]
    pub overrides: ChannelOverrides,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Digraph {
    n: u32,
    edges: Vec<Edge>,
    // Sorted by neighbor id.
    out: Vec<Vec<(ProcessId, EdgeId)>>,
    inc: Vec<Vec<(ProcessId, EdgeId)>>,
}

impl Digraph {
    pub fn new(n: u32) -> Self {
        Self {
            n,
            edges: Vec::new(),
            out: vec![Vec::new(); n as usize],
            inc: vec![Vec::new(); n as usize],
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (1..=self.n).map(ProcessId::from_u32)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    fn check(&self, p: ProcessId) -> Result<(), TopologyError> {
        if p.get() > self.n {
            return Err(TopologyError::UnknownProcess { id: p.get(), n: self.n });
        }
        Ok(())
    }

    /// Adds the channel `from -> to`, or returns the existing one.
    pub fn add_edge(&mut self, from: ProcessId, to: ProcessId) -> Result<EdgeId, TopologyError> {
        self.check(from)?;
        self.check(to)?;
        if from == to {
            return Err(TopologyError::SelfLoop(from));
        }
        let outs = &mut self.out[from.index()];
        match outs.binary_search_by_key(&to, |&(p, _)| p) {
            Ok(pos) => Ok(outs[pos].1),
            Err(pos) => {
                let id = self.edges.len();
                outs.insert(pos, (to, id));
                let ins = &mut self.inc[to.index()];
                let ipos = ins.binary_search_by_key(&from, |&(p, _)| p).unwrap_err();
                ins.insert(ipos, (from, id));
                self.edges.push(Edge { from, to, overrides: ChannelOverrides::default() });
                Ok(id)
            }
        }
    }

    pub fn add_undirected(&mut self, u: ProcessId, v: ProcessId) -> Result<(EdgeId, EdgeId), TopologyError> {
        Ok((self.add_edge(u, v)?, self.add_edge(v, u)?))
    }

    pub fn set_overrides(&mut self, id: EdgeId, overrides: ChannelOverrides) {
        self.edges[id].overrides = overrides;
    }

    pub fn edge_between(&self, from: ProcessId, to: ProcessId) -> Option<EdgeId> {
        let outs = self.out.get(from.index())?;
        outs.binary_search_by_key(&to, |&(p, _)| p).ok().map(|pos| outs[pos].1)
    }

    pub fn out_neighbors(&self, p: ProcessId) -> impl Iterator<Item = ProcessId> + '_ {
        self.out[p.index()].iter().map(|&(q, _)| q)
    }

    pub fn in_neighbors(&self, p: ProcessId) -> impl Iterator<Item = ProcessId> + '_ {
        self.inc[p.index()].iter().map(|&(q, _)| q)
    }

    pub fn out_edges(&self, p: ProcessId) -> &[(ProcessId, EdgeId)] {
        &self.out[p.index()]
    }

    pub fn in_edges(&self, p: ProcessId) -> &[(ProcessId, EdgeId)] {
        &self.inc[p.index()]
    }

    /// Union of in- and out-neighbors, ascending.
    pub fn neighbors(&self, p: ProcessId) -> Vec<ProcessId> {
        let set: BTreeSet<ProcessId> = self.out_neighbors(p).chain(self.in_neighbors(p)).collect();
        set.into_iter().collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|e| self.edge_between(e.to, e.from).is_some())
    }

    /// BFS hop distances from `root` over edges accepted by `keep`.
    pub fn distances_from(
        &self,
        root: ProcessId,
        mut keep: impl FnMut(EdgeId) -> bool,
    ) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n as usize];
        let mut queue = VecDeque::new();
        dist[root.index()] = Some(0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.index()].expect("queued vertices have a distance");
            for &(v, e) in &self.out[u.index()] {
                if dist[v.index()].is_none() && keep(e) {
                    dist[v.index()] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Whether every vertex of `restrict_to` reaches every other one through
    /// edges inside `restrict_to`.
    pub fn is_strongly_connected(&self, restrict_to: &BTreeSet<ProcessId>) -> bool {
        let Some(&root) = restrict_to.first() else {
            return true;
        };
        if restrict_to.iter().any(|p| p.get() > self.n) {
            return false;
        }
        [&self.out, &self.inc].into_iter().all(|adj| {
            let mut seen = vec![false; self.n as usize];
            let mut stack = vec![root];
            seen[root.index()] = true;
            let mut count = 1;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u.index()] {
                    if !seen[v.index()] && restrict_to.contains(&v) {
                        seen[v.index()] = true;
                        count += 1;
                        stack.push(v);
                    }
                }
            }
            count == restrict_to.len()
        })
    }
}

/// Bidirectional ring `1 - 2 - ... - n - 1`.
pub fn build_ring(n: u32) -> Result<Digraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::RingTooSmall(n));
    }
    let mut g = Digraph::new(n);
    for i in 1..=n {
        let j = i % n + 1;
        g.add_undirected(ProcessId::from_u32(i), ProcessId::from_u32(j))?;
    }
    Ok(g)
}

/// Bidirectional complete graph.
pub fn build_complete(n: u32) -> Digraph {
    let mut g = Digraph::new(n);
    for u in 1..=n {
        for v in 1..=n {
            if u != v {
                g.add_edge(ProcessId::from_u32(u), ProcessId::from_u32(v))
                    .expect("ids within 1..=n and distinct");
            }
        }
    }
    g
}

const REGULAR_ATTEMPTS: u32 = 10_000;

/// Connected random `k`-regular simple graph, drawn with the pairing model.
///
/// Pairings with self-loops or repeated edges and disconnected results are
/// rejected and redrawn from a perturbed seed, so the output is a pure
/// function of `(n, k, seed)`.
pub fn build_regular(n: u32, k: u32, seed: u64) -> Result<Digraph, TopologyError> {
    let infeasible = TopologyError::InfeasibleRegular { n, k };
    if n == 0 || k >= n || (u64::from(n) * u64::from(k)) % 2 == 1 {
        return Err(infeasible);
    }
    // Disconnected for every draw: a perfect matching on more than two
    // vertices, or no edges at all on more than one.
    if (k == 0 && n > 1) || (k == 1 && n > 2) {
        return Err(infeasible);
    }
    let everyone: BTreeSet<ProcessId> = (1..=n).map(ProcessId::from_u32).collect();
    for attempt in 0..REGULAR_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let mut stubs: Vec<u32> = (1..=n).flat_map(|v| std::iter::repeat_n(v, k as usize)).collect();
        stubs.shuffle(&mut rng);
        let mut g = Digraph::new(n);
        let mut simple = true;
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (ProcessId::from_u32(pair[0]), ProcessId::from_u32(pair[1]));
            if u == v || g.edge_between(u, v).is_some() {
                simple = false;
                break;
            }
            g.add_undirected(u, v)?;
        }
        if simple && g.is_strongly_connected(&everyone) {
            return Ok(g);
        }
    }
    Err(TopologyError::RegularRetriesExhausted { n, k, attempts: REGULAR_ATTEMPTS })
}

/// Whether a directed spanning tree rooted at the smallest correct process
/// exists that uses only `add_edges` and covers exactly `correct`.
pub fn validate_span_tree(
    g: &Digraph,
    add_edges: &BTreeSet<(ProcessId, ProcessId)>,
    correct: &BTreeSet<ProcessId>,
) -> bool {
    let Some(&root) = correct.first() else {
        return false;
    };
    if correct.iter().any(|p| p.get() > g.n()) {
        return false;
    }
    let dist = g.distances_from(root, |e| {
        let edge = g.edge(e);
        correct.contains(&edge.from)
            && correct.contains(&edge.to)
            && add_edges.contains(&(edge.from, edge.to))
    });
    correct.iter().all(|p| dist[p.index()].is_some())
}

/// Largest shortest-path length between two vertices of `restrict_to`, using
/// only edges between members of `restrict_to`.
pub fn diameter(g: &Digraph, restrict_to: &BTreeSet<ProcessId>) -> Result<u32, TopologyError> {
    if restrict_to.is_empty() {
        return Err(TopologyError::Empty);
    }
    let mut best = 0;
    for &src in restrict_to {
        if src.get() > g.n() {
            return Err(TopologyError::UnknownProcess { id: src.get(), n: g.n() });
        }
        let dist = g.distances_from(src, |e| {
            let edge = g.edge(e);
            restrict_to.contains(&edge.from) && restrict_to.contains(&edge.to)
        });
        for dst in restrict_to {
            match dist[dst.index()] {
                Some(d) => best = best.max(d),
                None => return Err(TopologyError::Disconnected),
            }
        }
    }
    Ok(best)
}

/// Diameter over all processes.
pub fn full_diameter(g: &Digraph) -> Result<u32, TopologyError> {
    diameter(g, &g.processes().collect())
}

/// Parses the edge-list format.
///
/// One edge per line, `#` starts a comment, ids are 1-based:
///
/// ```text
/// u v [K D stabilization p]     # both directions
/// u -> v [K D stabilization p]  # one direction; overrides an earlier line
/// ```
///
/// The optional four columns override the scenario-wide channel parameters.
/// `n` is the largest id mentioned unless `n` is given.
pub fn parse_edge_list(text: &str, n: Option<u32>) -> Result<Digraph, TopologyError> {
    struct Line {
        u: ProcessId,
        v: ProcessId,
        directed: bool,
        overrides: ChannelOverrides,
    }
    let mut lines = Vec::new();
    let mut max_id = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| TopologyError::Parse { line: line_no, msg };
        let mut tokens: Vec<&str> = content.split_whitespace().collect();
        let directed = tokens.get(1) == Some(&"->");
        if directed {
            tokens.remove(1);
        }
        if tokens.len() != 2 && tokens.len() != 6 {
            return Err(err(format!("expected `u v` or `u v K D stabilization p`, got `{content}`")));
        }
        let id = |s: &str| -> Result<ProcessId, TopologyError> {
            let v: u32 = s.parse().map_err(|_| err(format!("bad process id `{s}`")))?;
            ProcessId::new(v).map_err(|_| err("process ids start at 1".into()))
        };
        let (u, v) = (id(tokens[0])?, id(tokens[1])?);
        let mut overrides = ChannelOverrides::default();
        if tokens.len() == 6 {
            let k: u32 = tokens[2].parse().map_err(|_| err(format!("bad K `{}`", tokens[2])))?;
            if k < 1 {
                return Err(err("K must be at least 1".into()));
            }
            overrides.k = Some(k);
            overrides.d = Some(tokens[3].parse().map_err(|_| err(format!("bad D `{}`", tokens[3])))?);
            overrides.stabilization =
                Some(tokens[4].parse().map_err(|_| err(format!("bad stabilization `{}`", tokens[4])))?);
            let p: f64 = tokens[5].parse().map_err(|_| err(format!("bad drop probability `{}`", tokens[5])))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(err(format!("drop probability {p} outside [0, 1]")));
            }
            overrides.drop_probability = Some(p);
        }
        max_id = max_id.max(u.get()).max(v.get());
        lines.push(Line { u, v, directed, overrides });
    }
    let n = match n {
        Some(n) if n < max_id => return Err(TopologyError::UnknownProcess { id: max_id, n }),
        Some(n) => n,
        None => max_id,
    };
    let mut g = Digraph::new(n);
    for line in lines {
        let ids = if line.directed {
            vec![g.add_edge(line.u, line.v)?]
        } else {
            let (a, b) = g.add_undirected(line.u, line.v)?;
            vec![a, b]
        };
        if !line.overrides.is_empty() {
            for id in ids {
                g.set_overrides(id, line.overrides);
            }
        }
    }
    Ok(g)
}

//! Time-varying communication graphs.
//!
//! At iteration `k >= 1` the network is a directed graph on agents
//! `0..m`. An edge `(j, i)` means agent `j`'s iterate reaches agent `i` in
//! that round; every agent always keeps its own iterate, so self-loops are
//! mandatory and inserted by every constructor. Long-run information flow is
//! captured by a window length `Q`: the union of the edge sets over any `Q`
//! consecutive iterations must be strongly connected.

use crate::rng::{self, STREAM_TOPOLOGY};
use rand::Rng;
use thiserror::Error;

/// Dense agent index in `0..m`.
pub type AgentId = usize;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("the agent set must be non-empty")]
    NoAgents,
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("the connectivity window must be at least 1")]
    ZeroWindow,
    #[error("link activation probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("a periodic schedule needs at least one edge set")]
    EmptyPeriod,
    #[error("all edge sets in a schedule must have the same agent count")]
    MixedSizes,
    #[error("window unions are not strongly connected at starts {0:?}")]
    Disconnected(Vec<usize>),
}

/// A directed edge set on `m` agents with all self-loops present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    m: usize,
    /// `in_neighbors[i]` is the sorted list of agents whose iterates reach
    /// `i`, always containing `i` itself.
    in_neighbors: Vec<Vec<AgentId>>,
}

impl EdgeSet {
    /// Builds an edge set from directed `(from, to)` pairs; self-loops are
    /// added automatically and duplicates collapse.
    pub fn new(
        m: usize,
        edges: impl IntoIterator<Item = (AgentId, AgentId)>,
    ) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::NoAgents);
        }
        let mut incoming = vec![Vec::new(); m];
        for (i, list) in incoming.iter_mut().enumerate() {
            list.push(i);
        }
        for (from, to) in edges {
            if from >= m || to >= m {
                return Err(TopologyError::EdgeOutOfRange(from, to, m));
            }
            incoming[to].push(from);
        }
        for list in &mut incoming {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            m,
            in_neighbors: incoming,
        })
    }

    /// Edge set containing only the mandatory self-loops.
    pub fn self_loops(m: usize) -> Result<Self, TopologyError> {
        Self::new(m, std::iter::empty())
    }

    /// Complete graph: every iterate reaches every agent.
    pub fn complete(m: usize) -> Result<Self, TopologyError> {
        let edges = (0..m).flat_map(|j| (0..m).map(move |i| (j, i)));
        Self::new(m, edges)
    }

    /// Builds a symmetric edge set from undirected links.
    pub fn from_links(
        m: usize,
        links: impl IntoIterator<Item = (AgentId, AgentId)>,
    ) -> Result<Self, TopologyError> {
        let edges = links.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]);
        Self::new(m, edges)
    }

    pub fn num_agents(&self) -> usize {
        self.m
    }

    /// Agents whose iterate reaches `i` in this round, `i` included.
    pub fn in_neighbors(&self, i: AgentId) -> &[AgentId] {
        &self.in_neighbors[i]
    }

    /// Whether the directed edge `(from, to)` is present.
    pub fn contains(&self, from: AgentId, to: AgentId) -> bool {
        self.in_neighbors[to].binary_search(&from).is_ok()
    }

    /// Number of neighbors of `i` excluding the self-loop. On symmetric edge
    /// sets this is the undirected degree.
    pub fn degree(&self, i: AgentId) -> usize {
        self.in_neighbors[i].len() - 1
    }

    /// Whether `(j, i)` present implies `(i, j)` present.
    pub fn is_symmetric(&self) -> bool {
        (0..self.m).all(|i| self.in_neighbors[i].iter().all(|&j| self.contains(i, j)))
    }

    /// Union of two edge sets over the same agents.
    pub fn union(&self, other: &EdgeSet) -> Result<EdgeSet, TopologyError> {
        if self.m != other.m {
            return Err(TopologyError::MixedSizes);
        }
        let mut merged = self.clone();
        for (i, list) in merged.in_neighbors.iter_mut().enumerate() {
            list.extend_from_slice(&other.in_neighbors[i]);
            list.sort_unstable();
            list.dedup();
        }
        Ok(merged)
    }

    /// Strong connectivity: every agent reaches every other along directed
    /// edges. Checked as "all agents reach agent 0 and agent 0 reaches all".
    pub fn is_strongly_connected(&self) -> bool {
        if self.m == 1 {
            return true;
        }
        // in_neighbors is the reverse adjacency, so a sweep over it from 0
        // finds everything that reaches 0.
        let reaches_zero = self.sweep(|node| self.in_neighbors[node].as_slice());
        if reaches_zero.iter().any(|&seen| !seen) {
            return false;
        }
        let mut out = vec![Vec::new(); self.m];
        for (i, sources) in self.in_neighbors.iter().enumerate() {
            for &j in sources {
                out[j].push(i);
            }
        }
        let reached_from_zero = self.sweep(|node| out[node].as_slice());
        reached_from_zero.into_iter().all(|seen| seen)
    }

    fn sweep<'a>(&self, adj: impl Fn(usize) -> &'a [usize]) -> Vec<bool> {
        let mut seen = vec![false; self.m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &next in adj(node) {
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone)]
enum ScheduleKind {
    Static(EdgeSet),
    /// `sets[(k - 1) % sets.len()]` is the edge set at iteration `k`.
    Periodic(Vec<EdgeSet>),
    /// Each undirected link activates independently per iteration; draws are
    /// keyed by `(seed, iteration)` so edge sets are pure functions of `k`.
    Random {
        m: usize,
        activation: f64,
        seed: u64,
    },
}

/// A communication graph for every iteration `k >= 1`, together with the
/// declared connectivity window.
#[derive(Debug, Clone)]
pub struct TopologySchedule {
    kind: ScheduleKind,
    window: usize,
}

impl TopologySchedule {
    /// A fixed graph at every iteration, verified strongly connected (every
    /// window union equals the graph itself).
    pub fn fixed(edges: EdgeSet, window: usize) -> Result<Self, TopologyError> {
        let schedule = Self::fixed_unchecked(edges, window)?;
        if !schedule.is_window_connected(0, window) {
            return Err(TopologyError::Disconnected(vec![0]));
        }
        Ok(schedule)
    }

    /// A fixed graph with no connectivity verification; pair with
    /// [`Self::verify`] when a caller wants to warn instead of fail.
    pub fn fixed_unchecked(edges: EdgeSet, window: usize) -> Result<Self, TopologyError> {
        if window == 0 {
            return Err(TopologyError::ZeroWindow);
        }
        Ok(Self {
            kind: ScheduleKind::Static(edges),
            window,
        })
    }

    /// Cycles through `sets` starting at iteration 1. Construction fails
    /// unless every window union over one full period is strongly connected;
    /// by periodicity that covers all window starts.
    pub fn periodic(sets: Vec<EdgeSet>, window: usize) -> Result<Self, TopologyError> {
        let schedule = Self::periodic_unchecked(sets, window)?;
        let period = schedule.period().expect("periodic schedules have a period");
        let bad: Vec<usize> = (0..period)
            .filter(|&start| !schedule.is_window_connected(start, window))
            .collect();
        if bad.is_empty() {
            Ok(schedule)
        } else {
            Err(TopologyError::Disconnected(bad))
        }
    }

    /// A periodic schedule with no connectivity verification.
    pub fn periodic_unchecked(sets: Vec<EdgeSet>, window: usize) -> Result<Self, TopologyError> {
        if window == 0 {
            return Err(TopologyError::ZeroWindow);
        }
        if sets.is_empty() {
            return Err(TopologyError::EmptyPeriod);
        }
        let m = sets[0].num_agents();
        if sets.iter().any(|s| s.num_agents() != m) {
            return Err(TopologyError::MixedSizes);
        }
        Ok(Self {
            kind: ScheduleKind::Periodic(sets),
            window,
        })
    }

    /// Independently activates every undirected link with the given
    /// probability at each iteration (both directions plus self-loops).
    /// Nothing is verified at construction; use [`Self::verify`] to scan a
    /// horizon empirically.
    pub fn random(
        m: usize,
        activation: f64,
        window: usize,
        seed: u64,
    ) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::NoAgents);
        }
        if window == 0 {
            return Err(TopologyError::ZeroWindow);
        }
        if !(0.0..=1.0).contains(&activation) || !activation.is_finite() {
            return Err(TopologyError::BadProbability(activation));
        }
        Ok(Self {
            kind: ScheduleKind::Random {
                m,
                activation,
                seed,
            },
            window,
        })
    }

    pub fn num_agents(&self) -> usize {
        match &self.kind {
            ScheduleKind::Static(e) => e.num_agents(),
            ScheduleKind::Periodic(sets) => sets[0].num_agents(),
            ScheduleKind::Random { m, .. } => *m,
        }
    }

    /// Declared connectivity window length.
    pub fn window(&self) -> usize {
        self.window
    }

    /// For static and periodic schedules, the number of iterations after
    /// which edge sets repeat.
    pub fn period(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Static(_) => Some(1),
            ScheduleKind::Periodic(sets) => Some(sets.len()),
            ScheduleKind::Random { .. } => None,
        }
    }

    /// The edge set at iteration `k >= 1`.
    pub fn edge_set(&self, k: usize) -> EdgeSet {
        assert!(k >= 1, "iterations are numbered from 1");
        match &self.kind {
            ScheduleKind::Static(e) => e.clone(),
            ScheduleKind::Periodic(sets) => sets[(k - 1) % sets.len()].clone(),
            ScheduleKind::Random {
                m,
                activation,
                seed,
            } => {
                let mut rng = rng::substream(&[*seed, STREAM_TOPOLOGY, k as u64]);
                let mut links = Vec::new();
                for a in 0..*m {
                    for b in (a + 1)..*m {
                        if rng.random::<f64>() < *activation {
                            links.push((a, b));
                        }
                    }
                }
                EdgeSet::from_links(*m, links).expect("ids are in range by construction")
            }
        }
    }

    /// Agents whose iterate reaches `i` at iteration `k >= 1`, `i` included.
    pub fn neighbors(&self, k: usize, i: AgentId) -> Vec<AgentId> {
        assert!(i < self.num_agents(), "agent id out of range");
        self.edge_set(k).in_neighbors(i).to_vec()
    }

    /// Whether the union of the edge sets at iterations
    /// `start + 1 ..= start + window` is strongly connected.
    pub fn is_window_connected(&self, start: usize, window: usize) -> bool {
        assert!(window >= 1, "window must be at least 1");
        let mut union = self.edge_set(start + 1);
        for offset in 2..=window {
            if union.is_strongly_connected() {
                return true;
            }
            union = union
                .union(&self.edge_set(start + offset))
                .expect("schedule edge sets share one agent count");
        }
        union.is_strongly_connected()
    }

    /// Scans every window start in `0 ..= horizon - window` and returns the
    /// starts whose window union fails strong connectivity. Horizons shorter
    /// than the window have no complete window and verify vacuously.
    pub fn verify(&self, horizon: usize) -> Vec<usize> {
        if horizon < self.window {
            return Vec::new();
        }
        // Static and periodic schedules repeat, so distinct verdicts only
        // exist for starts within one period; later starts alias them.
        let last_start = horizon - self.window;
        match self.period() {
            Some(period) => {
                let distinct = period.min(last_start + 1);
                let mut bad_residues = Vec::new();
                for start in 0..distinct {
                    if !self.is_window_connected(start, self.window) {
                        bad_residues.push(start);
                    }
                }
                (0..=last_start)
                    .filter(|s| bad_residues.contains(&(s % period)))
                    .collect()
            }
            None => (0..=last_start)
                .filter(|&s| !self.is_window_connected(s, self.window))
                .collect(),
        }
    }
}

//! The synchronous simulation engine.
//!
//! One transition `k` (1-based) takes the network from `w_(k-1)` to `w_k`:
//! every agent mixes its in-neighbors' iterates with the round-`k` weight
//! matrix, takes a subgradient step of size `alpha_k` at the mixed point
//! using a noisy subgradient, and projects back onto the constraint set. All
//! agents move in lockstep; randomness is keyed by `(seed, replica, agent,
//! k)` so replicas differ only through their noise draws.

use crate::linalg;
use crate::mixing::{rate_certificate, MixingError, MixingMatrix, RateCertificate, WeightSchedule};
use crate::problem::{Problem, ProblemError};
use crate::rng::{substream, STREAM_INITIAL};
use crate::stochastic::{NoiseModel, StepsizeSchedule, StochasticError};
use crate::topology::{TopologyError, TopologySchedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility slack for projected iterates during run-time checks.
const FEASIBILITY_TOL: f64 = 1e-9;
/// Absolute slack added to every analytic monitor before flagging.
const MONITOR_SLACK: f64 = 1e-9;
/// Feasibility requirement on explicitly supplied initial iterates.
const INITIAL_TOL: f64 = 1e-12;
/// Aperiodic schedules are certified over at most this many transitions.
pub(crate) const APERIODIC_SCAN_CAP: usize = 20_000;
/// Longest weight-matrix cycle that gets precomputed and reused.
const MATRIX_CACHE_CAP: usize = 256;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error("the problem has {problem} components but the topology has {topology} agents")]
    AgentCountMismatch { problem: usize, topology: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("initial iterates need one vector of the problem dimension per agent")]
    InitialShape,
    #[error("initial iterate of agent {agent} lies {distance:.3e} outside the constraint set")]
    InfeasibleInitial { agent: usize, distance: f64 },
    #[error(
        "windowed connectivity fails for {count} scanned start(s), first at window start {first}"
    )]
    NotConnected { count: usize, first: usize },
    #[error("replica {replica}: {source}")]
    ReplicaFailed {
        replica: u64,
        #[source]
        source: Box<EngineError>,
    },
    #[error("{0}")]
    CheckViolation(Violation),
    #[error("aggregation needs at least one replica")]
    NoReplicas,
    #[error("this analysis needs per-transition states; enable record.record_states")]
    StatesNotRecorded,
    #[error("anchor {index} lies {distance:.3e} outside the constraint set")]
    AnchorOutsideSet { index: usize, distance: f64 },
}

/// What to do when a run-time check fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckPolicy {
    /// Stop the run with an error on the first violation.
    Abort,
    /// Record the violation on the trace and keep going.
    Warn,
}

/// Run-time checks evaluated on every transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub policy: CheckPolicy,
    /// Every projected iterate must stay within 1e-9 of the set.
    pub feasibility: bool,
    /// Per-agent step displacement must respect its analytic cap
    /// `alpha_k * (C_i + ||noise||)`. Needs subgradient norm bounds.
    pub displacement_bound: bool,
    /// Per-agent deviation from the network mean must respect the running
    /// geometric monitor. Needs certified connectivity and norm bounds.
    pub disagreement_bound: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            policy: CheckPolicy::Warn,
            feasibility: true,
            displacement_bound: false,
            disagreement_bound: false,
        }
    }
}

/// What the engine keeps while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordConfig {
    /// Record metrics every `thin` transitions (0 and 1 both mean every
    /// transition). The final transition is always recorded.
    pub thin: usize,
    /// Keep full per-transition states (mixed points, noise, iterates) for
    /// post-hoc analysis. Memory grows linearly with the horizon.
    pub record_states: bool,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            thin: 1,
            record_states: false,
        }
    }
}

/// Where the agents start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialIterates {
    /// One vector per agent, each feasible.
    Explicit { iterates: Vec<Vec<f64>> },
    /// Each agent draws a point of the set, keyed by `(seed, agent)` only,
    /// so all replicas of a study share the same starting corner.
    Sampled,
}

/// A full simulation setup: problem, network, noise, stepsizes, and how to
/// run and observe the algorithm.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub problem: Problem,
    pub topology: TopologySchedule,
    pub weights: WeightSchedule,
    pub noise: NoiseModel,
    pub stepsize: StepsizeSchedule,
    pub horizon: usize,
    pub initial: InitialIterates,
    pub seed: u64,
    pub checks: CheckConfig,
    pub record: RecordConfig,
}

/// One recorded transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Transition index, 1-based.
    pub k: usize,
    /// `alpha_k` used by this transition.
    pub stepsize: f64,
    /// `max_j || w_(j,k) - mean_i w_(i,k) ||`.
    pub disagreement: f64,
    /// Global objective at the network mean of the iterates.
    pub objective_at_average: f64,
    /// Worst global objective over the agents' own iterates.
    pub objective_at_iterate: f64,
    /// Worst global objective over the agents' running averages. When the
    /// averaging weights are all zero this falls back to the iterates.
    pub objective_at_running_avg: f64,
    /// `max_i || w_(i,k) - v_(i,k-1) ||`: the largest projected step taken.
    pub displacement: f64,
    /// `max_i || noise_(i,k) ||`.
    pub error_norm: f64,
}

/// Full state of one transition, kept only when `record_states` is on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateRecord {
    /// Transition index, 1-based.
    pub k: usize,
    /// `alpha_k`.
    pub alpha: f64,
    /// The mixed points this transition stepped from (one per agent).
    pub mixed: Vec<Vec<f64>>,
    /// The subgradient noise applied by each agent.
    pub errors: Vec<Vec<f64>>,
    /// The projected iterates `w_(., k)` after the transition.
    pub iterates: Vec<Vec<f64>>,
}

/// A run-time check failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub k: usize,
    pub agent: Option<usize>,
    pub observed: f64,
    pub allowed: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check failed at transition {}", self.check, self.k)?;
        if let Some(agent) = self.agent {
            write!(f, " (agent {agent})")?;
        }
        write!(
            f,
            ": observed {:.6e}, allowed {:.6e}",
            self.observed, self.allowed
        )
    }
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub num_agents: usize,
    pub dim: usize,
    pub horizon: usize,
    pub seed: u64,
    pub replica: u64,
    /// `w_(., 0)`.
    pub initial: Vec<Vec<f64>>,
    /// The second transition's mixed points: the earliest network state the
    /// finite-time analysis anchors to.
    pub first_mixed: Vec<Vec<f64>>,
    /// `w_(., horizon)`.
    pub final_iterates: Vec<Vec<f64>>,
    /// Stepsize-weighted running averages at the horizon, one per agent.
    pub final_running_avg: Vec<Vec<f64>>,
    pub records: Vec<IterationRecord>,
    pub states: Option<Vec<StateRecord>>,
    pub warnings: Vec<String>,
    /// Check violations observed under the `Warn` policy.
    pub violations: Vec<Violation>,
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Across-replica statistics for one recorded transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedRecord {
    pub k: usize,
    pub stepsize: f64,
    pub disagreement: MeanSe,
    pub objective_at_average: MeanSe,
    pub objective_at_iterate: MeanSe,
    pub objective_at_running_avg: MeanSe,
    pub displacement: MeanSe,
    pub error_norm: MeanSe,
}

/// Monte Carlo aggregate over independent replicas of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedTrace {
    pub replicas: u64,
    pub num_agents: usize,
    pub dim: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Shared starting iterates (replicas differ only through noise).
    pub initial: Vec<Vec<f64>>,
    /// Coordinatewise mean of the second transition's mixed points.
    pub first_mixed_mean: Vec<Vec<f64>>,
    /// Per-agent mean and standard error of `|| mixed ||^2` at the second
    /// transition.
    pub first_mixed_sq: Vec<MeanSe>,
    pub records: Vec<AggregatedRecord>,
    pub warnings: Vec<String>,
    /// Total check violations across replicas (under the `Warn` policy).
    pub violation_count: u64,
    /// The first few violations, for diagnosis.
    pub violations: Vec<Violation>,
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stats(&self) -> MeanSe {
        let se = if self.n >= 2 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        MeanSe {
            mean: self.mean,
            se,
        }
    }
}

#[derive(Default)]
struct RecordAccumulator {
    k: usize,
    stepsize: f64,
    disagreement: Welford,
    objective_at_average: Welford,
    objective_at_iterate: Welford,
    objective_at_running_avg: Welford,
    displacement: Welford,
    error_norm: Welford,
}

impl RecordAccumulator {
    fn push(&mut self, r: &IterationRecord) {
        self.k = r.k;
        self.stepsize = r.stepsize;
        self.disagreement.push(r.disagreement);
        self.objective_at_average.push(r.objective_at_average);
        self.objective_at_iterate.push(r.objective_at_iterate);
        self.objective_at_running_avg
            .push(r.objective_at_running_avg);
        self.displacement.push(r.displacement);
        self.error_norm.push(r.error_norm);
    }

    fn finish(&self) -> AggregatedRecord {
        AggregatedRecord {
            k: self.k,
            stepsize: self.stepsize,
            disagreement: self.disagreement.stats(),
            objective_at_average: self.objective_at_average.stats(),
            objective_at_iterate: self.objective_at_iterate.stats(),
            objective_at_running_avg: self.objective_at_running_avg.stats(),
            displacement: self.displacement.stats(),
            error_norm: self.error_norm.stats(),
        }
    }
}

/// Validated, precomputed run ingredients shared by all replicas.
struct Prepared {
    initial: Vec<Vec<f64>>,
    max_init_norm: f64,
    /// Subgradient norm caps `C_i`, present when any monitor needs them.
    bounds: Option<Vec<f64>>,
    /// Geometric consensus certificate, present when the disagreement
    /// monitor is armed.
    certificate: Option<RateCertificate>,
    /// One full cycle of weight matrices for repeating schedules.
    cached: Option<Vec<MixingMatrix>>,
    warnings: Vec<String>,
    feasibility_on: bool,
    displacement_on: bool,
    disagreement_on: bool,
}

struct RunCore {
    first_mixed: Vec<Vec<f64>>,
    final_iterates: Vec<Vec<f64>>,
    final_running_avg: Vec<Vec<f64>>,
    states: Option<Vec<StateRecord>>,
    violations: Vec<Violation>,
}

impl SimConfig {
    /// Checks the whole configuration without running it. Returns the
    /// warnings a run would start with.
    pub fn validate(&self) -> Result<Vec<String>, EngineError> {
        self.prepare().map(|p| p.warnings)
    }

    fn prepare(&self) -> Result<Prepared, EngineError> {
        let m = self.problem.num_agents();
        let n = self.problem.dim();
        if self.topology.num_agents() != m {
            return Err(EngineError::AgentCountMismatch {
                problem: m,
                topology: self.topology.num_agents(),
            });
        }
        if self.horizon == 0 {
            return Err(EngineError::ZeroHorizon);
        }
        self.stepsize.validate()?;
        self.noise.validate(m, n)?;

        let mut warnings = Vec::new();
        let initial = match &self.initial {
            InitialIterates::Explicit { iterates } => {
                if iterates.len() != m || iterates.iter().any(|w| w.len() != n) {
                    return Err(EngineError::InitialShape);
                }
                for (agent, w) in iterates.iter().enumerate() {
                    let distance = self.problem.set().distance(w);
                    if distance > INITIAL_TOL {
                        return Err(EngineError::InfeasibleInitial { agent, distance });
                    }
                }
                iterates.clone()
            }
            InitialIterates::Sampled => (0..m)
                .map(|i| {
                    let mut rng = substream(&[self.seed, STREAM_INITIAL, i as u64]);
                    self.problem.set().sample(&mut rng)
                })
                .collect(),
        };
        let max_init_norm = initial.iter().map(|w| linalg::norm(w)).fold(0.0, f64::max);

        let mut disagreement_on = self.checks.disagreement_bound;
        let periodic = self.topology.period().is_some();
        let scan = if periodic {
            self.horizon
        } else {
            self.horizon.min(APERIODIC_SCAN_CAP)
        };
        if scan < self.horizon {
            warnings.push(format!(
                "connectivity and weight validity certified over the first {scan} of {} \
                 transitions only (aperiodic schedule)",
                self.horizon
            ));
        }
        let failures = self.topology.verify(scan);
        if !failures.is_empty() {
            match self.checks.policy {
                CheckPolicy::Abort => {
                    return Err(EngineError::NotConnected {
                        count: failures.len(),
                        first: failures[0],
                    });
                }
                CheckPolicy::Warn => {
                    warnings.push(format!(
                        "windowed connectivity fails for {} scanned start(s), first at \
                         window start {}; consensus is not guaranteed",
                        failures.len(),
                        failures[0]
                    ));
                    if disagreement_on {
                        warnings.push(
                            "disagreement monitor disabled: it needs certified connectivity".into(),
                        );
                        disagreement_on = false;
                    }
                }
            }
        }
        let eta = self.weights.eta_over(&self.topology, scan)?;

        let bounds = if self.checks.displacement_bound || disagreement_on {
            Some(
                self.problem
                    .subgradient_bounds()?
                    .iter()
                    .map(|b| b.value)
                    .collect::<Vec<f64>>(),
            )
        } else {
            None
        };
        let certificate = if disagreement_on {
            Some(rate_certificate(m, eta, self.topology.window())?)
        } else {
            None
        };

        let cached = match self.weights.cycle_length(&self.topology) {
            Some(cycle) if cycle <= MATRIX_CACHE_CAP => {
                let mut matrices = Vec::with_capacity(cycle);
                for k in 1..=cycle {
                    matrices.push(self.weights.matrix(&self.topology, k)?);
                }
                Some(matrices)
            }
            _ => None,
        };

        Ok(Prepared {
            initial,
            max_init_norm,
            bounds,
            certificate,
            cached,
            warnings,
            feasibility_on: self.checks.feasibility,
            displacement_on: self.checks.displacement_bound,
            disagreement_on,
        })
    }

    /// Runs replica 0.
    pub fn run(&self) -> Result<RunTrace, EngineError> {
        self.run_replica(0)
    }

    /// Runs one replica: same configuration and starting point, noise keyed
    /// by the replica index.
    pub fn run_replica(&self, replica: u64) -> Result<RunTrace, EngineError> {
        let prep = self.prepare()?;
        let mut records = Vec::new();
        let core = self.run_core(&prep, replica, self.record.record_states, |r| {
            records.push(r)
        })?;
        Ok(RunTrace {
            num_agents: self.problem.num_agents(),
            dim: self.problem.dim(),
            horizon: self.horizon,
            seed: self.seed,
            replica,
            initial: prep.initial,
            first_mixed: core.first_mixed,
            final_iterates: core.final_iterates,
            final_running_avg: core.final_running_avg,
            records,
            states: core.states,
            warnings: prep.warnings,
            violations: core.violations,
        })
    }

    /// Runs `replicas` independent replicas sequentially and aggregates the
    /// recorded metrics pointwise across them. Per-transition states are
    /// never kept here.
    pub fn monte_carlo(&self, replicas: u64) -> Result<AggregatedTrace, EngineError> {
        if replicas == 0 {
            return Err(EngineError::NoReplicas);
        }
        let prep = self.prepare()?;
        let m = self.problem.num_agents();
        let n = self.problem.dim();
        let mut slots: Vec<RecordAccumulator> = Vec::new();
        let mut first_pass = true;
        let mut first_mixed_sums = vec![vec![0.0; n]; m];
        let mut first_mixed_sq: Vec<Welford> = vec![Welford::default(); m];
        let mut violation_count = 0u64;
        let mut violations: Vec<Violation> = Vec::new();
        for replica in 0..replicas {
            let mut cursor = 0usize;
            let core = self
                .run_core(&prep, replica, false, |r| {
                    if first_pass {
                        slots.push(RecordAccumulator::default());
                    }
                    debug_assert!(cursor < slots.len(), "record layout must not vary");
                    slots[cursor].push(&r);
                    cursor += 1;
                })
                .map_err(|source| EngineError::ReplicaFailed {
                    replica,
                    source: Box::new(source),
                })?;
            first_pass = false;
            for (sums, v) in first_mixed_sums.iter_mut().zip(&core.first_mixed) {
                for (s, &x) in sums.iter_mut().zip(v) {
                    *s += x;
                }
            }
            for (w, v) in first_mixed_sq.iter_mut().zip(&core.first_mixed) {
                w.push(linalg::norm_sq(v));
            }
            violation_count += core.violations.len() as u64;
            for v in core.violations {
                if violations.len() < 16 {
                    violations.push(v);
                }
            }
        }
        let scale = 1.0 / replicas as f64;
        for sums in &mut first_mixed_sums {
            for s in sums.iter_mut() {
                *s *= scale;
            }
        }
        Ok(AggregatedTrace {
            replicas,
            num_agents: m,
            dim: n,
            horizon: self.horizon,
            seed: self.seed,
            initial: prep.initial,
            first_mixed_mean: first_mixed_sums,
            first_mixed_sq: first_mixed_sq.iter().map(Welford::stats).collect(),
            records: slots.iter().map(RecordAccumulator::finish).collect(),
            warnings: prep.warnings,
            violation_count,
            violations,
        })
    }

    fn matrix_of<'a>(
        &self,
        prep: &'a Prepared,
        storage: &'a mut Option<MixingMatrix>,
        k: usize,
    ) -> Result<&'a MixingMatrix, EngineError> {
        match &prep.cached {
            Some(cycle) => Ok(&cycle[(k - 1) % cycle.len()]),
            None => {
                *storage = Some(self.weights.matrix(&self.topology, k)?);
                Ok(storage.as_ref().expect("just stored"))
            }
        }
    }

    fn run_core(
        &self,
        prep: &Prepared,
        replica: u64,
        want_states: bool,
        mut sink: impl FnMut(IterationRecord),
    ) -> Result<RunCore, EngineError> {
        let m = self.problem.num_agents();
        let n = self.problem.dim();
        let horizon = self.horizon;
        let thin = self.record.thin.max(1);
        let noise_free = self.noise.is_none();
        let set = self.problem.set();

        let mut w = prep.initial.clone();
        let mut w_next = vec![vec![0.0; n]; m];
        let mut v = vec![vec![0.0; n]; m];
        let mut eps = vec![vec![0.0; n]; m];
        let mut grad = vec![0.0; n];
        let mut target = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut mean = vec![0.0; n];
        let mut displacement = vec![0.0; m];
        let mut eps_norm = vec![0.0; m];
        let mut avg_num = vec![vec![0.0; n]; m];
        let mut avg_den = 0.0;
        let mut first_mixed: Option<Vec<Vec<f64>>> = None;
        let mut states = want_states.then(Vec::new);
        let mut violations: Vec<Violation> = Vec::new();
        // Running disagreement monitor: s_monitor carries the geometric sum
        // of past kick totals, beta_pow carries beta^k.
        let mut s_monitor = 0.0;
        let mut beta_pow = 1.0;

        let flag =
            |violation: Violation, violations: &mut Vec<Violation>| -> Result<(), EngineError> {
                match self.checks.policy {
                    CheckPolicy::Abort => Err(EngineError::CheckViolation(violation)),
                    CheckPolicy::Warn => {
                        violations.push(violation);
                        Ok(())
                    }
                }
            };

        for k in 1..=horizon {
            let alpha = self.stepsize.value(k as u64);
            let mut storage = None;
            let matrix = self.matrix_of(prep, &mut storage, k)?;
            matrix.weighted_combine(&w, &mut v);
            if k == 2 {
                first_mixed = Some(v.clone());
            }

            for i in 0..m {
                self.problem.component(i).subgradient_into(&v[i], &mut grad);
                if !noise_free {
                    self.noise
                        .sample_into(self.seed, replica, i, k as u64, &mut eps[i]);
                }
                for d in 0..n {
                    target[d] = v[i][d] - alpha * (grad[d] + eps[i][d]);
                }
                set.project_into(&target, &mut w_next[i]);
                displacement[i] = linalg::dist(&w_next[i], &v[i]);
                eps_norm[i] = if noise_free {
                    0.0
                } else {
                    linalg::norm(&eps[i])
                };
            }

            if prep.feasibility_on {
                for (i, wi) in w_next.iter().enumerate() {
                    set.project_into(wi, &mut scratch);
                    let distance = linalg::dist(wi, &scratch);
                    if distance > FEASIBILITY_TOL {
                        flag(
                            Violation {
                                check: "feasibility",
                                k,
                                agent: Some(i),
                                observed: distance,
                                allowed: FEASIBILITY_TOL,
                            },
                            &mut violations,
                        )?;
                    }
                }
            }
            if prep.displacement_on {
                let bounds = prep.bounds.as_ref().expect("armed checks carry bounds");
                for i in 0..m {
                    let allowed = alpha * (bounds[i] + eps_norm[i]) + MONITOR_SLACK;
                    if displacement[i] > allowed {
                        flag(
                            Violation {
                                check: "displacement bound",
                                k,
                                agent: Some(i),
                                observed: displacement[i],
                                allowed,
                            },
                            &mut violations,
                        )?;
                    }
                }
            }

            let recording = k == horizon || k % thin == 0;
            if prep.disagreement_on || recording {
                for d in 0..n {
                    mean[d] = w_next.iter().map(|wi| wi[d]).sum::<f64>() / m as f64;
                }
            }
            if prep.disagreement_on {
                let bounds = prep.bounds.as_ref().expect("armed checks carry bounds");
                let cert = prep.certificate.expect("armed monitor carries certificate");
                beta_pow *= cert.beta;
                let kick_total: f64 = (0..m).map(|i| bounds[i] + eps_norm[i]).sum();
                for (j, wj) in w_next.iter().enumerate() {
                    let allowed = m as f64 * cert.theta * beta_pow * prep.max_init_norm
                        + cert.theta * s_monitor
                        + alpha / m as f64 * kick_total
                        + alpha * (bounds[j] + eps_norm[j])
                        + MONITOR_SLACK;
                    let observed = linalg::dist(wj, &mean);
                    if observed > allowed {
                        flag(
                            Violation {
                                check: "disagreement bound",
                                k,
                                agent: Some(j),
                                observed,
                                allowed,
                            },
                            &mut violations,
                        )?;
                    }
                }
                s_monitor = cert.beta * (s_monitor + alpha * kick_total);
            }

            std::mem::swap(&mut w, &mut w_next);

            // The running average weights each iterate by the next stepsize.
            let weight = self.stepsize.value(k as u64 + 1);
            avg_den += weight;
            for (num, wi) in avg_num.iter_mut().zip(&w) {
                for (s, &x) in num.iter_mut().zip(wi) {
                    *s += weight * x;
                }
            }

            if recording {
                let disagreement = w
                    .iter()
                    .map(|wi| linalg::dist(wi, &mean))
                    .fold(0.0, f64::max);
                let objective_at_average = self.problem.total_value(&mean);
                let objective_at_iterate = w
                    .iter()
                    .map(|wi| self.problem.total_value(wi))
                    .fold(f64::NEG_INFINITY, f64::max);
                let objective_at_running_avg = if avg_den > 0.0 {
                    let mut worst = f64::NEG_INFINITY;
                    for num in &avg_num {
                        for (s, &x) in scratch.iter_mut().zip(num) {
                            *s = x / avg_den;
                        }
                        worst = worst.max(self.problem.total_value(&scratch));
                    }
                    worst
                } else {
                    objective_at_iterate
                };
                sink(IterationRecord {
                    k,
                    stepsize: alpha,
                    disagreement,
                    objective_at_average,
                    objective_at_iterate,
                    objective_at_running_avg,
                    displacement: displacement.iter().copied().fold(0.0, f64::max),
                    error_norm: eps_norm.iter().copied().fold(0.0, f64::max),
                });
            }
            if let Some(states) = states.as_mut() {
                states.push(StateRecord {
                    k,
                    alpha,
                    mixed: v.clone(),
                    errors: eps.clone(),
                    iterates: w.clone(),
                });
            }
        }

        let first_mixed = match first_mixed {
            Some(v) => v,
            None => {
                // A one-transition run never reaches the second mix; compute
                // it directly so the finite-time anchor always exists.
                let mut storage = None;
                let matrix = self.matrix_of(prep, &mut storage, 2)?;
                let mut out = vec![vec![0.0; n]; m];
                matrix.weighted_combine(&w, &mut out);
                out
            }
        };
        let final_running_avg = if avg_den > 0.0 {
            avg_num
                .iter()
                .map(|num| num.iter().map(|&s| s / avg_den).collect())
                .collect()
        } else {
            w.clone()
        };
        Ok(RunCore {
            first_mixed,
            final_iterates: w,
            final_running_avg,
            states,
            violations,
        })
    }
}

/// One evaluation of the per-transition distance inequality.
///
/// `k` indexes the pair: the inequality links the iterates after transition
/// `k` (`k = 0` means the initial iterates) to those after transition
/// `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionCheck {
    pub k: usize,
    pub anchor: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl RecursionCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Replays a recorded trace against the one-transition distance inequality:
/// for any feasible anchor `z`, the summed squared distances of the iterates
/// to `z` can grow by at most the stepsize-weighted objective gap plus
/// disagreement, noise, and second-order terms. Needs per-transition states
/// and finite subgradient norm bounds.
pub fn check_distance_recursion(
    problem: &Problem,
    trace: &RunTrace,
    anchors: &[Vec<f64>],
) -> Result<Vec<RecursionCheck>, EngineError> {
    let states = trace
        .states
        .as_ref()
        .ok_or(EngineError::StatesNotRecorded)?;
    let bounds: Vec<f64> = problem
        .subgradient_bounds()?
        .iter()
        .map(|b| b.value)
        .collect();
    let c_max = bounds.iter().copied().fold(0.0, f64::max);
    let mut anchor_values = Vec::with_capacity(anchors.len());
    for (index, z) in anchors.iter().enumerate() {
        let distance = problem.set().distance(z);
        if distance > 1e-9 {
            return Err(EngineError::AnchorOutsideSet { index, distance });
        }
        anchor_values.push(problem.total_value(z));
    }
    let mut checks = Vec::with_capacity(states.len() * anchors.len());
    for (pair, state) in states.iter().enumerate() {
        let w_prev = if pair == 0 {
            &trace.initial
        } else {
            &states[pair - 1].iterates
        };
        let y = linalg::mean(w_prev);
        let f_y = problem.total_value(&y);
        let spread: f64 = w_prev.iter().map(|wj| linalg::dist(&y, wj)).sum();
        let alpha = state.alpha;
        let second_order: f64 = bounds
            .iter()
            .zip(&state.errors)
            .map(|(&c, e)| (c + linalg::norm(e)).powi(2))
            .sum();
        for (anchor, (z, &f_z)) in anchors.iter().zip(&anchor_values).enumerate() {
            let lhs: f64 = state
                .iterates
                .iter()
                .map(|wi| {
                    wi.iter()
                        .zip(z)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            let base: f64 = state
                .mixed
                .iter()
                .map(|vi| {
                    vi.iter()
                        .zip(z)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            let noise_term: f64 = state
                .errors
                .iter()
                .zip(&state.mixed)
                .map(|(e, vi)| {
                    e.iter()
                        .zip(vi.iter().zip(z))
                        .map(|(&ed, (&vd, &zd))| ed * (vd - zd))
                        .sum::<f64>()
                })
                .sum();
            let rhs = base - 2.0 * alpha * (f_y - f_z) + 2.0 * alpha * c_max * spread
                - 2.0 * alpha * noise_term
                + alpha * alpha * second_order;
            checks.push(RecursionCheck {
                k: pair,
                anchor,
                lhs,
                rhs,
            });
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::WeightRule;
    use crate::problem::{Component, ConvexSet};
    use crate::topology::EdgeSet;

    fn single_agent_config(
        component: Component,
        set: ConvexSet,
        stepsize: StepsizeSchedule,
        horizon: usize,
        w0: f64,
    ) -> SimConfig {
        let problem = Problem::new(vec![component], set).unwrap();
        SimConfig {
            problem,
            topology: TopologySchedule::fixed(EdgeSet::complete(1).unwrap(), 1).unwrap(),
            weights: WeightSchedule::metropolis(),
            noise: NoiseModel::None,
            stepsize,
            horizon,
            initial: InitialIterates::Explicit {
                iterates: vec![vec![w0]],
            },
            seed: 0,
            checks: CheckConfig::default(),
            record: RecordConfig::default(),
        }
    }

    fn three_agent_path_config() -> SimConfig {
        let problem = Problem::new(
            vec![
                Component::Quadratic { center: vec![-1.0] },
                Component::Quadratic { center: vec![0.0] },
                Component::Quadratic { center: vec![1.0] },
            ],
            ConvexSet::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
        )
        .unwrap();
        let edges = EdgeSet::from_links(3, [(0, 1), (1, 2)]).unwrap();
        SimConfig {
            problem,
            topology: TopologySchedule::fixed(edges, 1).unwrap(),
            weights: WeightSchedule::metropolis(),
            noise: NoiseModel::None,
            stepsize: StepsizeSchedule::Harmonic { a: 1.0, b: 1.0 },
            horizon: 100,
            initial: InitialIterates::Explicit {
                iterates: vec![vec![-0.5], vec![0.0], vec![1.0]],
            },
            seed: 7,
            checks: CheckConfig::default(),
            record: RecordConfig::default(),
        }
    }

    #[test]
    fn one_gradient_step_matches_hand_arithmetic() {
        let config = single_agent_config(
            Component::Quadratic { center: vec![0.0] },
            ConvexSet::All { dim: 1 },
            StepsizeSchedule::Constant { alpha: 0.25 },
            1,
            1.0,
        );
        let trace = config.run().unwrap();
        assert_eq!(trace.final_iterates[0][0], 0.5);
    }

    #[test]
    fn the_projection_clamps_an_overshooting_step() {
        let config = single_agent_config(
            Component::Quadratic { center: vec![0.0] },
            ConvexSet::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            StepsizeSchedule::Constant { alpha: 1.0 },
            1,
            0.5,
        );
        let trace = config.run().unwrap();
        assert_eq!(trace.final_iterates[0][0], 0.0);
    }

    #[test]
    fn diminishing_steps_drive_a_single_agent_to_its_minimum() {
        let config = single_agent_config(
            Component::Quadratic { center: vec![0.0] },
            ConvexSet::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            StepsizeSchedule::Harmonic { a: 0.3, b: 0.0 },
            5_000,
            1.0,
        );
        let trace = config.run().unwrap();
        assert!(trace.final_iterates[0][0].abs() < 1e-2);
        assert!(trace.violations.is_empty());
    }

    #[test]
    fn the_engine_replays_an_inline_scalar_oracle_bitwise() {
        let noise = NoiseModel::Gaussian { sigma: 0.1 };
        let mut config = single_agent_config(
            Component::Quadratic { center: vec![1.0] },
            ConvexSet::Box {
                lower: vec![-2.0],
                upper: vec![2.0],
            },
            StepsizeSchedule::Power {
                a: 0.3,
                b: 0.0,
                p: 0.75,
            },
            200,
            0.5,
        );
        config.noise = noise.clone();
        config.seed = 42;
        let trace = config.run().unwrap();

        let mut x = 0.5f64;
        for k in 1..=200u64 {
            let alpha = 0.3 / (k as f64).powf(0.75);
            let g = 2.0 * (x - 1.0);
            let e = noise.sample(42, 0, 0, k, 1)[0];
            x = (x - alpha * (g + e)).clamp(-2.0, 2.0);
        }
        assert_eq!(trace.final_iterates[0][0], x);
    }

    #[test]
    fn zero_stepsizes_reduce_the_run_to_pure_averaging() {
        let mut config = three_agent_path_config();
        config.stepsize = StepsizeSchedule::Constant { alpha: 0.0 };
        config.horizon = 400;
        let trace = config.run().unwrap();
        let initial_mean = linalg::mean(&trace.initial)[0];
        let final_mean = linalg::mean(&trace.final_iterates)[0];
        assert!((final_mean - initial_mean).abs() < 1e-9);
        for w in &trace.final_iterates {
            assert!((w[0] - initial_mean).abs() < 1e-9);
        }
        let last = trace.records.last().unwrap();
        assert!(last.disagreement < 1e-9);
        assert_eq!(last.displacement, 0.0);
    }

    #[test]
    fn iterates_stay_feasible_under_noise() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 1.0 };
        config.horizon = 500;
        config.checks.policy = CheckPolicy::Abort;
        config.record.record_states = true;
        let trace = config.run().unwrap();
        assert!(trace.violations.is_empty());
        for state in trace.states.as_ref().unwrap() {
            for w in &state.iterates {
                assert!(w[0].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn running_averages_match_a_direct_recomputation() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.5 };
        config.record.record_states = true;
        let trace = config.run().unwrap();
        let states = trace.states.as_ref().unwrap();
        let mut den = 0.0;
        let mut num = [0.0; 3];
        for state in states {
            let weight = config.stepsize.value(state.k as u64 + 1);
            den += weight;
            for (n, w) in num.iter_mut().zip(&state.iterates) {
                *n += weight * w[0];
            }
        }
        for (agent, n) in num.iter().enumerate() {
            let direct = n / den;
            let reported = trace.final_running_avg[agent][0];
            assert!(
                (direct - reported).abs() <= 1e-9 * direct.abs().max(1.0),
                "agent {agent}: {direct} vs {reported}"
            );
        }
    }

    #[test]
    fn identical_configurations_reproduce_identical_traces() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.3 };
        let a = config.run().unwrap();
        let b = config.run().unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_iterates, b.final_iterates);
    }

    #[test]
    fn replicas_differ_only_through_their_noise() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.3 };
        let a = config.run_replica(0).unwrap();
        let b = config.run_replica(1).unwrap();
        assert_eq!(a.initial, b.initial);
        assert_ne!(a.final_iterates, b.final_iterates);

        config.noise = NoiseModel::None;
        let a = config.run_replica(0).unwrap();
        let b = config.run_replica(1).unwrap();
        assert_eq!(a.final_iterates, b.final_iterates);
    }

    #[test]
    fn analytic_monitors_hold_along_a_noisy_run() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.5 };
        config.horizon = 2_000;
        config.checks = CheckConfig {
            policy: CheckPolicy::Abort,
            feasibility: true,
            displacement_bound: true,
            disagreement_bound: true,
        };
        let trace = config.run().unwrap();
        assert!(trace.violations.is_empty());
    }

    #[test]
    fn the_first_mixed_state_is_the_second_transition_mix() {
        let mut long = three_agent_path_config();
        long.horizon = 2;
        let mut short = three_agent_path_config();
        short.horizon = 1;
        let a = long.run().unwrap();
        let b = short.run().unwrap();
        assert_eq!(a.first_mixed, b.first_mixed);
    }

    #[test]
    fn thinning_keeps_the_final_transition() {
        let mut config = three_agent_path_config();
        config.record.thin = 7;
        config.horizon = 100;
        let trace = config.run().unwrap();
        let ks: Vec<usize> = trace.records.iter().map(|r| r.k).collect();
        assert_eq!(ks.last(), Some(&100));
        assert_eq!(ks.len(), 15);
        assert!(ks.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn degenerate_configurations_are_rejected() {
        let mut config = three_agent_path_config();
        config.horizon = 0;
        assert!(matches!(config.run(), Err(EngineError::ZeroHorizon)));

        let mut config = three_agent_path_config();
        config.initial = InitialIterates::Explicit {
            iterates: vec![vec![2.0], vec![0.0], vec![0.0]],
        };
        assert!(matches!(
            config.run(),
            Err(EngineError::InfeasibleInitial { agent: 0, .. })
        ));

        let mut config = three_agent_path_config();
        config.initial = InitialIterates::Explicit {
            iterates: vec![vec![0.0], vec![0.0]],
        };
        assert!(matches!(config.run(), Err(EngineError::InitialShape)));

        let mut config = three_agent_path_config();
        config.topology = TopologySchedule::fixed(EdgeSet::complete(4).unwrap(), 1).unwrap();
        assert!(matches!(
            config.run(),
            Err(EngineError::AgentCountMismatch { .. })
        ));
    }

    #[test]
    fn disconnected_networks_abort_or_warn_by_policy() {
        let mut config = three_agent_path_config();
        config.topology =
            TopologySchedule::fixed_unchecked(EdgeSet::self_loops(3).unwrap(), 1).unwrap();
        config.checks.policy = CheckPolicy::Abort;
        assert!(matches!(
            config.run(),
            Err(EngineError::NotConnected { .. })
        ));

        config.checks.policy = CheckPolicy::Warn;
        config.checks.disagreement_bound = true;
        let trace = config.run().unwrap();
        assert!(trace
            .warnings
            .iter()
            .any(|w| w.contains("connectivity fails")));
        assert!(trace
            .warnings
            .iter()
            .any(|w| w.contains("disagreement monitor disabled")));
    }

    #[test]
    fn sampled_initial_iterates_are_feasible_and_replica_independent() {
        let mut config = three_agent_path_config();
        config.initial = InitialIterates::Sampled;
        config.noise = NoiseModel::Gaussian { sigma: 0.2 };
        let a = config.run_replica(0).unwrap();
        let b = config.run_replica(3).unwrap();
        assert_eq!(a.initial, b.initial);
        for w in &a.initial {
            assert!(w[0].abs() <= 1.0);
        }
    }

    #[test]
    fn zero_noise_aggregation_collapses_to_the_single_run() {
        let mut config = three_agent_path_config();
        config.record.thin = 10;
        let single = config.run().unwrap();
        let agg = config.monte_carlo(5).unwrap();
        assert_eq!(agg.records.len(), single.records.len());
        for (a, s) in agg.records.iter().zip(&single.records) {
            assert_eq!(a.k, s.k);
            assert_eq!(a.disagreement.mean, s.disagreement);
            assert_eq!(a.disagreement.se, 0.0);
            assert_eq!(a.objective_at_average.mean, s.objective_at_average);
            assert_eq!(a.objective_at_average.se, 0.0);
        }
        // The coordinate means accumulate five identical summands, so they
        // can pick up a rounding ulp relative to the single run.
        for (mean, v) in agg.first_mixed_mean.iter().zip(&single.first_mixed) {
            for (a, b) in mean.iter().zip(v) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn noisy_aggregation_reports_spread_and_reproduces() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.5 };
        config.record.thin = 25;
        let a = config.monte_carlo(30).unwrap();
        let b = config.monte_carlo(30).unwrap();
        assert_eq!(a, b);
        let last = a.records.last().unwrap();
        assert!(last.objective_at_average.se > 0.0);
        assert!(last.disagreement.mean.is_finite());
    }

    #[test]
    fn aggregation_rejects_broken_configurations_up_front() {
        let mut config = three_agent_path_config();
        config.topology =
            TopologySchedule::fixed_unchecked(EdgeSet::self_loops(3).unwrap(), 1).unwrap();
        config.checks.policy = CheckPolicy::Abort;
        let err = config.monte_carlo(3).unwrap_err();
        assert!(matches!(err, EngineError::NotConnected { .. }));
        assert!(matches!(
            config.monte_carlo(0),
            Err(EngineError::NoReplicas)
        ));
    }

    #[test]
    fn the_distance_recursion_holds_along_noisy_runs() {
        let mut config = three_agent_path_config();
        config.noise = NoiseModel::Gaussian { sigma: 0.6 };
        config.horizon = 50;
        config.record.record_states = true;
        let trace = config.run().unwrap();
        let anchors = vec![vec![0.0], vec![-1.0], vec![0.75]];
        let checks = check_distance_recursion(&config.problem, &trace, &anchors).unwrap();
        assert_eq!(checks.len(), 50 * 3);
        for c in &checks {
            assert!(
                c.holds(1e-9),
                "pair {} anchor {}: lhs {} rhs {}",
                c.k,
                c.anchor,
                c.lhs,
                c.rhs
            );
        }
    }

    #[test]
    fn the_distance_recursion_needs_states_and_feasible_anchors() {
        let config = three_agent_path_config();
        let trace = config.run().unwrap();
        assert!(matches!(
            check_distance_recursion(&config.problem, &trace, &[vec![0.0]]),
            Err(EngineError::StatesNotRecorded)
        ));

        let mut config = three_agent_path_config();
        config.record.record_states = true;
        let trace = config.run().unwrap();
        assert!(matches!(
            check_distance_recursion(&config.problem, &trace, &[vec![5.0]]),
            Err(EngineError::AnchorOutsideSet { index: 0, .. })
        ));
    }

    #[test]
    fn explicit_weight_schedules_cycle_through_their_matrices() {
        let uniform = MixingMatrix::uniform(3);
        let identity = MixingMatrix::identity(3);
        let mut config = three_agent_path_config();
        config.topology = TopologySchedule::fixed(EdgeSet::complete(3).unwrap(), 2).unwrap();
        config.weights =
            WeightSchedule::new(WeightRule::Explicit(vec![uniform, identity])).unwrap();
        config.stepsize = StepsizeSchedule::Constant { alpha: 0.0 };
        config.horizon = 1;
        let trace = config.run().unwrap();
        // The first transition applies the uniform matrix, so one zero-step
        // round already reaches exact consensus at the mean.
        let mean = linalg::mean(&trace.initial)[0];
        for w in &trace.final_iterates {
            assert!((w[0] - mean).abs() < 1e-15);
        }
    }
}

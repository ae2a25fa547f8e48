//! Weight matrices that average neighbor iterates.
//!
//! Each iteration `k` carries a mixing matrix `A(k)` whose row `i` holds the
//! weights agent `i` puts on incoming iterates. Valid matrices are doubly
//! stochastic, nonnegative, supported on the iteration's edge set, and bounded
//! below by a positive floor `eta` on every declared neighbor. Products of
//! such matrices converge geometrically to the uniform averaging matrix; this
//! module computes that certificate and verifies it empirically.

use crate::topology::{EdgeSet, TopologySchedule};
use serde::Serialize;
use thiserror::Error;

/// Numerical slack for stochasticity and support checks.
pub const VALIDATION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("weight rows must form a square matrix")]
    NotSquare,
    #[error("matrix size {found} does not match the agent count {expected}")]
    SizeMismatch { found: usize, expected: usize },
    #[error("{rule} weights need a symmetric edge set")]
    AsymmetricEdges { rule: &'static str },
    #[error("an explicit weight schedule needs at least one matrix")]
    EmptySchedule,
    #[error("weight matrix at iteration {k} violates {clause}: {detail}")]
    AssumptionViolated {
        k: usize,
        clause: &'static str,
        detail: String,
    },
    #[error("the weight floor must lie in (0, 1], got {0}")]
    BadFloor(f64),
    #[error("the agent count must be at least 1")]
    NoAgents,
    #[error("the connectivity window must be at least 1")]
    ZeroWindow,
    #[error("scanning weights needs a horizon of at least 1")]
    ZeroHorizon,
}

/// A square, row-major weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl MixingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MixingError> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(MixingError::NotSquare);
        }
        Ok(Self {
            m,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(m: usize) -> Self {
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        Self { m, entries }
    }

    /// The uniform averaging matrix with every entry `1/m`.
    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            entries: vec![1.0 / m as f64; m * m],
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    /// `self * rhs` in the usual matrix sense.
    pub fn matmul(&self, rhs: &MixingMatrix) -> MixingMatrix {
        assert_eq!(self.m, rhs.m, "matrix product needs matching sizes");
        let m = self.m;
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for l in 0..m {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                let rhs_row = rhs.row(l);
                let out_row = &mut entries[i * m..(i + 1) * m];
                for (o, r) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * r;
                }
            }
        }
        MixingMatrix { m, entries }
    }

    /// Writes `out[i] = sum_j a[i][j] * vectors[j]` without allocating.
    pub fn weighted_combine(&self, vectors: &[Vec<f64>], out: &mut [Vec<f64>]) {
        assert_eq!(vectors.len(), self.m, "one vector per agent");
        assert_eq!(out.len(), self.m, "one output per agent");
        for (i, target) in out.iter_mut().enumerate() {
            target.iter_mut().for_each(|t| *t = 0.0);
            for (j, source) in vectors.iter().enumerate() {
                let weight = self.get(i, j);
                if weight == 0.0 {
                    continue;
                }
                for (t, s) in target.iter_mut().zip(source) {
                    *t += weight * s;
                }
            }
        }
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            let row_sum: f64 = self.row(i).iter().sum();
            worst = worst.max((row_sum - 1.0).abs());
        }
        for j in 0..self.m {
            let col_sum: f64 = (0..self.m).map(|i| self.get(i, j)).sum();
            worst = worst.max((col_sum - 1.0).abs());
        }
        worst
    }

    /// Largest `|a_ij - 1/m|` over all entries.
    pub fn max_deviation_from_uniform(&self) -> f64 {
        let target = 1.0 / self.m as f64;
        self.entries
            .iter()
            .map(|a| (a - target).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_positive_entry(&self) -> Option<f64> {
        self.entries
            .iter()
            .copied()
            .filter(|&a| a > 0.0)
            .fold(None, |best, a| Some(best.map_or(a, |b: f64| b.min(a))))
    }

    /// Checks the full weight contract against an edge set: nonnegativity,
    /// row and column stochasticity, support on declared neighbors only, and
    /// (when a floor is given) `a_ij >= eta` on every declared neighbor.
    pub fn validate(&self, edges: &EdgeSet, eta: Option<f64>, k: usize) -> Result<(), MixingError> {
        if self.m != edges.num_agents() {
            return Err(MixingError::SizeMismatch {
                found: self.m,
                expected: edges.num_agents(),
            });
        }
        let fail = |clause: &'static str, detail: String| {
            Err(MixingError::AssumptionViolated { k, clause, detail })
        };
        for i in 0..self.m {
            for j in 0..self.m {
                let a = self.get(i, j);
                if a < -VALIDATION_TOL {
                    return fail("nonnegativity", format!("entry ({i}, {j}) is {a}"));
                }
                if !edges.contains(j, i) && a.abs() > VALIDATION_TOL {
                    return fail(
                        "support",
                        format!("entry ({i}, {j}) is {a} but ({j}, {i}) is not an edge"),
                    );
                }
                if edges.contains(j, i) {
                    if a <= 0.0 {
                        return fail(
                            "neighbor weight floor",
                            format!("entry ({i}, {j}) is {a} on a declared neighbor"),
                        );
                    }
                    if let Some(floor) = eta {
                        if a < floor - VALIDATION_TOL {
                            return fail(
                                "neighbor weight floor",
                                format!("entry ({i}, {j}) is {a}, below the floor {floor}"),
                            );
                        }
                    }
                }
            }
        }
        for i in 0..self.m {
            let row_sum: f64 = self.row(i).iter().sum();
            if (row_sum - 1.0).abs() > VALIDATION_TOL {
                return fail("row stochasticity", format!("row {i} sums to {row_sum}"));
            }
        }
        for j in 0..self.m {
            let col_sum: f64 = (0..self.m).map(|i| self.get(i, j)).sum();
            if (col_sum - 1.0).abs() > VALIDATION_TOL {
                return fail(
                    "column stochasticity",
                    format!("column {j} sums to {col_sum}"),
                );
            }
        }
        Ok(())
    }
}

/// Metropolis weights on a symmetric edge set: for a link between distinct
/// `i` and `j`, `a_ij = 1 / (1 + max(deg_i, deg_j))`; the self weight absorbs
/// the remainder. Doubly stochastic by symmetry, with every declared entry at
/// least `1 / (1 + max degree)`.
pub fn metropolis_weights(edges: &EdgeSet) -> Result<MixingMatrix, MixingError> {
    if !edges.is_symmetric() {
        return Err(MixingError::AsymmetricEdges { rule: "metropolis" });
    }
    let m = edges.num_agents();
    let mut rows = vec![vec![0.0; m]; m];
    for (i, row) in rows.iter_mut().enumerate() {
        let mut off_diagonal = 0.0;
        for &j in edges.in_neighbors(i) {
            if j == i {
                continue;
            }
            let w = 1.0 / (1.0 + edges.degree(i).max(edges.degree(j)) as f64);
            row[j] = w;
            off_diagonal += w;
        }
        row[i] = 1.0 - off_diagonal;
    }
    MixingMatrix::from_rows(rows)
}

/// Equal-neighbor weights on a symmetric edge set: each of the `deg_i`
/// neighbors gets weight `1/m` and the self weight absorbs the remainder,
/// which keeps the matrix doubly stochastic with floor `1/m`.
pub fn equal_neighbor_weights(edges: &EdgeSet) -> Result<MixingMatrix, MixingError> {
    if !edges.is_symmetric() {
        return Err(MixingError::AsymmetricEdges {
            rule: "equal-neighbor",
        });
    }
    let m = edges.num_agents();
    let share = 1.0 / m as f64;
    let mut rows = vec![vec![0.0; m]; m];
    for (i, row) in rows.iter_mut().enumerate() {
        let mut off_diagonal = 0.0;
        for &j in edges.in_neighbors(i) {
            if j == i {
                continue;
            }
            row[j] = share;
            off_diagonal += share;
        }
        row[i] = 1.0 - off_diagonal;
    }
    MixingMatrix::from_rows(rows)
}

/// How the per-iteration weight matrix is produced.
#[derive(Debug, Clone)]
pub enum WeightRule {
    Metropolis,
    EqualNeighbor,
    /// Cycles through the given matrices: `matrices[(k - 1) % len]` at
    /// iteration `k`. Validate with [`WeightSchedule::eta_over`] before use.
    Explicit(Vec<MixingMatrix>),
}

/// A weight rule bound to no particular topology; combine with a
/// [`TopologySchedule`] to obtain the matrix for an iteration.
#[derive(Debug, Clone)]
pub struct WeightSchedule {
    rule: WeightRule,
}

impl WeightSchedule {
    pub fn new(rule: WeightRule) -> Result<Self, MixingError> {
        if let WeightRule::Explicit(list) = &rule {
            if list.is_empty() {
                return Err(MixingError::EmptySchedule);
            }
            let m = list[0].dim();
            if list.iter().any(|a| a.dim() != m) {
                return Err(MixingError::SizeMismatch {
                    found: list.iter().map(|a| a.dim()).find(|&d| d != m).unwrap_or(m),
                    expected: m,
                });
            }
        }
        Ok(Self { rule })
    }

    pub fn metropolis() -> Self {
        Self {
            rule: WeightRule::Metropolis,
        }
    }

    pub fn equal_neighbor() -> Self {
        Self {
            rule: WeightRule::EqualNeighbor,
        }
    }

    pub fn rule(&self) -> &WeightRule {
        &self.rule
    }

    /// The mixing matrix for iteration `k >= 1` on the given topology.
    pub fn matrix(
        &self,
        topology: &TopologySchedule,
        k: usize,
    ) -> Result<MixingMatrix, MixingError> {
        let edges = topology.edge_set(k);
        match &self.rule {
            WeightRule::Metropolis => metropolis_weights(&edges),
            WeightRule::EqualNeighbor => equal_neighbor_weights(&edges),
            WeightRule::Explicit(list) => Ok(list[(k - 1) % list.len()].clone()),
        }
    }

    /// Number of iterations after which generated matrices provably repeat,
    /// when the topology itself repeats.
    pub fn cycle_length(&self, topology: &TopologySchedule) -> Option<usize> {
        let topo_period = topology.period()?;
        let rule_period = match &self.rule {
            WeightRule::Metropolis | WeightRule::EqualNeighbor => 1,
            WeightRule::Explicit(list) => list.len(),
        };
        Some(lcm(topo_period, rule_period))
    }

    /// Validates every matrix the schedule yields and returns the weight
    /// floor `eta`: the smallest entry appearing on any declared neighbor.
    ///
    /// Repeating schedules are scanned over one full cycle, so the result is
    /// exact for them; random topologies are scanned over `horizon`
    /// iterations and the floor is exact for that horizon.
    pub fn eta_over(
        &self,
        topology: &TopologySchedule,
        horizon: usize,
    ) -> Result<f64, MixingError> {
        if horizon == 0 {
            return Err(MixingError::ZeroHorizon);
        }
        let scan = match self.cycle_length(topology) {
            Some(cycle) => cycle.min(horizon),
            None => horizon,
        };
        let mut floor = f64::INFINITY;
        for k in 1..=scan {
            let edges = topology.edge_set(k);
            let matrix = self.matrix(topology, k)?;
            matrix.validate(&edges, None, k)?;
            for i in 0..matrix.dim() {
                for &j in edges.in_neighbors(i) {
                    floor = floor.min(matrix.get(i, j));
                }
            }
        }
        Ok(floor)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Ordered product of weight matrices. `factors` lists the matrices in time
/// order (earliest iteration first); the product applies them so the earliest
/// factor acts first, i.e. the latest factor is leftmost. An empty slice
/// yields the identity.
pub fn phi_product(m: usize, factors: &[MixingMatrix]) -> Result<MixingMatrix, MixingError> {
    if m == 0 {
        return Err(MixingError::NoAgents);
    }
    let mut acc = PhiAccumulator::new(m);
    for a in factors {
        if a.dim() != m {
            return Err(MixingError::SizeMismatch {
                found: a.dim(),
                expected: m,
            });
        }
        acc.absorb(a);
    }
    Ok(acc.into_product())
}

/// Incrementally maintains a transition product as later factors arrive.
#[derive(Debug, Clone)]
pub struct PhiAccumulator {
    product: MixingMatrix,
}

impl PhiAccumulator {
    pub fn new(m: usize) -> Self {
        Self {
            product: MixingMatrix::identity(m),
        }
    }

    /// Applies the next (later) factor on the left.
    pub fn absorb(&mut self, factor: &MixingMatrix) {
        self.product = factor.matmul(&self.product);
    }

    pub fn product(&self) -> &MixingMatrix {
        &self.product
    }

    pub fn into_product(self) -> MixingMatrix {
        self.product
    }
}

/// Geometric consensus-rate certificate: transition products over any window
/// satisfy `|phi_ij - 1/m| <= theta * beta^(elapsed iterations)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateCertificate {
    pub theta: f64,
    pub beta: f64,
}

/// Certificate for `m` agents with weight floor `eta` and connectivity window
/// `window`: with `x = 1 - eta / (4 m^2)`, the decay per iteration is
/// `beta = x^(1/window)` and the leading constant is `theta = x^(-2)`.
pub fn rate_certificate(m: usize, eta: f64, window: usize) -> Result<RateCertificate, MixingError> {
    if m == 0 {
        return Err(MixingError::NoAgents);
    }
    if window == 0 {
        return Err(MixingError::ZeroWindow);
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(MixingError::BadFloor(eta));
    }
    let x = 1.0 - eta / (4.0 * (m * m) as f64);
    let beta = if window == 1 {
        x
    } else {
        x.powf(1.0 / window as f64)
    };
    Ok(RateCertificate {
        theta: 1.0 / (x * x),
        beta,
    })
}

/// Empirical check of the geometric certificate along one schedule.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub theta: f64,
    pub beta: f64,
    pub eta: f64,
    /// Worst observed `deviation / bound` over the scanned window; at most 1
    /// (up to rounding) whenever the contract holds.
    pub worst_ratio: f64,
    pub horizon: usize,
}

impl RateReport {
    /// Whether every scanned deviation stayed at or below its bound.
    pub fn holds(&self) -> bool {
        self.worst_ratio <= 1.0 + 1e-9
    }
}

/// Accumulates transition products `A(horizon)...A(start+1)` and compares the
/// deviation from uniform against `theta * beta^(k - start)` at every step.
pub fn verify_geometric_rate(
    topology: &TopologySchedule,
    weights: &WeightSchedule,
    start: usize,
    horizon: usize,
) -> Result<RateReport, MixingError> {
    if horizon <= start {
        return Err(MixingError::ZeroHorizon);
    }
    let m = topology.num_agents();
    let eta = weights.eta_over(topology, horizon)?;
    let certificate = rate_certificate(m, eta, topology.window())?;
    let mut acc = PhiAccumulator::new(m);
    let mut worst_ratio: f64 = 0.0;
    let mut bound = certificate.theta;
    for k in (start + 1)..=horizon {
        acc.absorb(&weights.matrix(topology, k)?);
        bound *= certificate.beta;
        let deviation = acc.product().max_deviation_from_uniform();
        let ratio = if bound > 0.0 {
            deviation / bound
        } else if deviation <= 1e-15 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_ratio = worst_ratio.max(ratio);
    }
    Ok(RateReport {
        theta: certificate.theta,
        beta: certificate.beta,
        eta,
        worst_ratio,
        horizon,
    })
}

//! Constraint sets and convex objective components.
//!
//! A problem couples `m` convex components `f_i` (one per agent, summing to
//! the global objective) with one closed convex constraint set shared by all
//! agents. The set provides exact Euclidean projections; each component
//! provides values, subgradients (minimum-norm at kinks), and a uniform bound
//! on subgradient norms over the set when one exists.

use crate::linalg;
use crate::rng::{self, STREAM_AUX};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("box bounds need lower <= upper in every coordinate")]
    BadBox,
    #[error("ball radius must be finite and nonnegative, got {0}")]
    BadRadius(f64),
    #[error("halfspace normal must be nonzero")]
    ZeroNormal,
    #[error("parameters must be finite")]
    NonFiniteParameter,
    #[error("component weights must be nonnegative")]
    NegativeWeight,
    #[error("component dimension {found} does not match the set dimension {expected}")]
    DimensionMismatch { found: usize, expected: usize },
    #[error("a problem needs at least one component")]
    NoComponents,
    #[error("declared optimum is inconsistent: {0}")]
    InconsistentOptimum(String),
    #[error("no uniform subgradient bound: {0}")]
    NoUniformBound(String),
    #[error("the reference solver needs a bounded constraint set")]
    UnboundedSet,
    #[error("the reference solver handles at most {max} dimensions, got {found}")]
    TooManyDimensions { max: usize, found: usize },
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
}

/// A closed convex constraint set with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    /// Axis-aligned box `[lower_d, upper_d]` per coordinate.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Euclidean ball around `center` with the given radius.
    Ball { center: Vec<f64>, radius: f64 },
    /// Probability simplex: nonnegative coordinates summing to 1.
    Simplex { dim: usize },
    /// `{ x : normal . x <= offset }`.
    Halfspace { normal: Vec<f64>, offset: f64 },
    /// The whole space (projection is the identity).
    All { dim: usize },
}

impl ConvexSet {
    pub fn validate(&self) -> Result<(), ProblemError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(ProblemError::BadBox);
                }
                if lower.iter().chain(upper).any(|v| !v.is_finite()) {
                    return Err(ProblemError::NonFiniteParameter);
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(ProblemError::BadBox);
                }
                Ok(())
            }
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(ProblemError::ZeroDimension);
                }
                if center.iter().any(|v| !v.is_finite()) {
                    return Err(ProblemError::NonFiniteParameter);
                }
                if !radius.is_finite() || *radius < 0.0 {
                    return Err(ProblemError::BadRadius(*radius));
                }
                Ok(())
            }
            ConvexSet::Simplex { dim } | ConvexSet::All { dim } => {
                if *dim == 0 {
                    Err(ProblemError::ZeroDimension)
                } else {
                    Ok(())
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                if normal.is_empty() {
                    return Err(ProblemError::ZeroDimension);
                }
                if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
                    return Err(ProblemError::NonFiniteParameter);
                }
                if linalg::norm(normal) == 0.0 {
                    return Err(ProblemError::ZeroNormal);
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Simplex { dim } | ConvexSet::All { dim } => *dim,
            ConvexSet::Halfspace { normal, .. } => normal.len(),
        }
    }

    /// Writes the Euclidean projection of `x` into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        assert_eq!(out.len(), self.dim(), "output dimension mismatch");
        match self {
            ConvexSet::Box { lower, upper } => {
                for (((o, &v), &l), &u) in out.iter_mut().zip(x).zip(lower).zip(upper) {
                    *o = v.clamp(l, u);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let gap = linalg::dist(x, center);
                if gap <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / gap;
                    for ((o, &v), &c) in out.iter_mut().zip(x).zip(center) {
                        *o = c + scale * (v - c);
                    }
                }
            }
            ConvexSet::Simplex { .. } => {
                // Sort-based projection: find the largest prefix of the
                // sorted coordinates that stays positive after the common
                // shift enforcing a unit sum.
                let mut sorted = x.to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite coordinates"));
                let mut prefix = 0.0;
                let mut shift = 0.0;
                let mut kept = 0;
                for (idx, &v) in sorted.iter().enumerate() {
                    prefix += v;
                    let candidate = (prefix - 1.0) / (idx + 1) as f64;
                    if v - candidate > 0.0 {
                        shift = candidate;
                        kept = idx + 1;
                    }
                }
                debug_assert!(kept > 0, "some coordinate always survives");
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = (v - shift).max(0.0);
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                let slack = linalg::dot(normal, x) - offset;
                if slack <= 0.0 {
                    out.copy_from_slice(x);
                } else {
                    let scale = slack / linalg::norm_sq(normal);
                    for ((o, &v), &a) in out.iter_mut().zip(x).zip(normal) {
                        *o = v - scale * a;
                    }
                }
            }
            ConvexSet::All { .. } => out.copy_from_slice(x),
        }
    }

    /// The Euclidean projection of `x` onto the set.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.project_into(x, &mut out);
        out
    }

    /// Distance from `x` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        linalg::dist(x, &self.project(x))
    }

    /// Whether `x` lies in the set up to `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Euclidean diameter, or `None` when the set is unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            ConvexSet::Box { lower, upper } => Some(linalg::dist(lower, upper)),
            ConvexSet::Ball { radius, .. } => Some(2.0 * radius),
            ConvexSet::Simplex { dim } => {
                if *dim == 1 {
                    Some(0.0)
                } else {
                    Some(std::f64::consts::SQRT_2)
                }
            }
            ConvexSet::Halfspace { .. } | ConvexSet::All { .. } => None,
        }
    }

    /// Draws a point of the set: uniform for boxes, balls, and the simplex;
    /// a projected standard normal for unbounded sets.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ConvexSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            ConvexSet::Ball { center, radius } => {
                let n = center.len();
                let mut direction: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let norm = linalg::norm(&direction);
                if norm == 0.0 {
                    return center.clone();
                }
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64) / norm;
                for (d, &c) in direction.iter_mut().zip(center) {
                    *d = c + r * *d;
                }
                direction
            }
            ConvexSet::Simplex { dim } => {
                // Normalized exponential spacings are uniform on the simplex.
                let mut draws: Vec<f64> = (0..*dim)
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let total: f64 = draws.iter().sum();
                if total == 0.0 {
                    draws.fill(1.0 / *dim as f64);
                    return draws;
                }
                for d in &mut draws {
                    *d /= total;
                }
                draws
            }
            ConvexSet::Halfspace { .. } | ConvexSet::All { .. } => {
                let raw: Vec<f64> = (0..self.dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                self.project(&raw)
            }
        }
    }
}

/// A uniform bound on subgradient norms over a set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubgradientBound {
    pub value: f64,
    /// True when the bound comes from a closed form; false when it is a
    /// sampled supremum inflated by 10%.
    pub exact: bool,
}

/// One agent's convex objective component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// `||x - center||^2`.
    Quadratic { center: Vec<f64> },
    /// `sum_d weights_d (x_d - center_d)^2` with nonnegative weights.
    WeightedQuadratic { center: Vec<f64>, weights: Vec<f64> },
    /// `sum_d |x_d - center_d|`.
    AbsDeviation { center: Vec<f64> },
    /// `max(0, normal . x + offset)`.
    Hinge { normal: Vec<f64>, offset: f64 },
}

impl Component {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let params: Box<dyn Iterator<Item = f64>> = match self {
            Component::Quadratic { center } | Component::AbsDeviation { center } => {
                if center.is_empty() {
                    return Err(ProblemError::ZeroDimension);
                }
                Box::new(center.iter().copied())
            }
            Component::WeightedQuadratic { center, weights } => {
                if center.is_empty() {
                    return Err(ProblemError::ZeroDimension);
                }
                if weights.len() != center.len() {
                    return Err(ProblemError::DimensionMismatch {
                        found: weights.len(),
                        expected: center.len(),
                    });
                }
                if weights.iter().any(|&w| w < 0.0) {
                    return Err(ProblemError::NegativeWeight);
                }
                Box::new(center.iter().chain(weights).copied())
            }
            Component::Hinge { normal, offset } => {
                if normal.is_empty() {
                    return Err(ProblemError::ZeroDimension);
                }
                Box::new(normal.iter().copied().chain([*offset]))
            }
        };
        for p in params {
            if !p.is_finite() {
                return Err(ProblemError::NonFiniteParameter);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Component::Quadratic { center }
            | Component::WeightedQuadratic { center, .. }
            | Component::AbsDeviation { center } => center.len(),
            Component::Hinge { normal, .. } => normal.len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Component::Quadratic { center } => {
                x.iter().zip(center).map(|(&v, &c)| (v - c) * (v - c)).sum()
            }
            Component::WeightedQuadratic { center, weights } => x
                .iter()
                .zip(center)
                .zip(weights)
                .map(|((&v, &c), &w)| w * (v - c) * (v - c))
                .sum(),
            Component::AbsDeviation { center } => {
                x.iter().zip(center).map(|(&v, &c)| (v - c).abs()).sum()
            }
            Component::Hinge { normal, offset } => (linalg::dot(normal, x) + offset).max(0.0),
        }
    }

    /// Writes a subgradient at `x` into `out`, choosing the minimum-norm
    /// element wherever the subdifferential is not a singleton.
    pub fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        assert_eq!(out.len(), self.dim(), "output dimension mismatch");
        match self {
            Component::Quadratic { center } => {
                for ((o, &v), &c) in out.iter_mut().zip(x).zip(center) {
                    *o = 2.0 * (v - c);
                }
            }
            Component::WeightedQuadratic { center, weights } => {
                for (((o, &v), &c), &w) in out.iter_mut().zip(x).zip(center).zip(weights) {
                    *o = 2.0 * w * (v - c);
                }
            }
            Component::AbsDeviation { center } => {
                // At a kink the subdifferential is [-1, 1]; 0 is its
                // minimum-norm element.
                for ((o, &v), &c) in out.iter_mut().zip(x).zip(center) {
                    *o = if v > c {
                        1.0
                    } else if v < c {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Component::Hinge { normal, offset } => {
                let margin = linalg::dot(normal, x) + offset;
                // On the boundary the subdifferential is {t * normal : t in
                // [0, 1]}, whose minimum-norm element is 0.
                if margin > 0.0 {
                    out.copy_from_slice(normal);
                } else {
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
            }
        }
    }

    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.subgradient_into(x, &mut out);
        out
    }

    /// A uniform bound on `||g||` over the set, exact in closed form where
    /// possible. Growing components over unbounded sets have no bound.
    pub fn subgradient_bound(&self, set: &ConvexSet) -> Result<SubgradientBound, ProblemError> {
        let exact = |value: f64| Ok(SubgradientBound { value, exact: true });
        match self {
            Component::AbsDeviation { center } => exact((center.len() as f64).sqrt()),
            Component::Hinge { normal, .. } => exact(linalg::norm(normal)),
            Component::Quadratic { center } => match set {
                ConvexSet::Box { lower, upper } => {
                    let farthest: f64 = lower
                        .iter()
                        .zip(upper)
                        .zip(center)
                        .map(|((&l, &u), &c)| (l - c).abs().max((u - c).abs()).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    exact(2.0 * farthest)
                }
                ConvexSet::Ball { center: b, radius } => {
                    exact(2.0 * (radius + linalg::dist(b, center)))
                }
                ConvexSet::Simplex { dim } => {
                    // The norm is convex, so its supremum over the simplex
                    // sits at a vertex.
                    let worst = (0..*dim)
                        .map(|v| {
                            center
                                .iter()
                                .enumerate()
                                .map(|(d, &c)| {
                                    let coord = if d == v { 1.0 } else { 0.0 };
                                    (coord - c) * (coord - c)
                                })
                                .sum::<f64>()
                                .sqrt()
                        })
                        .fold(0.0, f64::max);
                    exact(2.0 * worst)
                }
                ConvexSet::Halfspace { .. } | ConvexSet::All { .. } => {
                    Err(ProblemError::NoUniformBound(
                        "quadratic growth is unbounded on an unbounded set".into(),
                    ))
                }
            },
            Component::WeightedQuadratic { center, weights } => {
                if weights.iter().all(|&w| w == 0.0) {
                    return exact(0.0);
                }
                match set {
                    ConvexSet::Box { lower, upper } => {
                        let farthest: f64 = lower
                            .iter()
                            .zip(upper)
                            .zip(center)
                            .zip(weights)
                            .map(|(((&l, &u), &c), &w)| {
                                let reach = (l - c).abs().max((u - c).abs());
                                (2.0 * w * reach).powi(2)
                            })
                            .sum::<f64>()
                            .sqrt();
                        exact(farthest)
                    }
                    ConvexSet::Simplex { dim } => {
                        let worst = (0..*dim)
                            .map(|v| {
                                center
                                    .iter()
                                    .zip(weights)
                                    .enumerate()
                                    .map(|(d, (&c, &w))| {
                                        let coord = if d == v { 1.0 } else { 0.0 };
                                        (2.0 * w * (coord - c)).powi(2)
                                    })
                                    .sum::<f64>()
                                    .sqrt()
                            })
                            .fold(0.0, f64::max);
                        exact(worst)
                    }
                    ConvexSet::Ball { .. } => Ok(self.sampled_bound(set)),
                    ConvexSet::Halfspace { .. } | ConvexSet::All { .. } => {
                        Err(ProblemError::NoUniformBound(
                            "quadratic growth is unbounded on an unbounded set".into(),
                        ))
                    }
                }
            }
        }
    }

    /// Sampled supremum of `||g||` over the set, inflated by 10%. Only used
    /// where no closed form is implemented; the flag records that.
    fn sampled_bound(&self, set: &ConvexSet) -> SubgradientBound {
        let mut rng = rng::substream(&[0xB0DD, STREAM_AUX]);
        let mut grad = vec![0.0; self.dim()];
        let mut sup: f64 = 0.0;
        for _ in 0..4096 {
            let point = set.sample(&mut rng);
            self.subgradient_into(&point, &mut grad);
            sup = sup.max(linalg::norm(&grad));
        }
        SubgradientBound {
            value: sup * 1.1,
            exact: false,
        }
    }
}

/// `m` convex components over one shared constraint set, with an optional
/// declared optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    components: Vec<Component>,
    set: ConvexSet,
    optimum: Option<(f64, Vec<f64>)>,
}

impl Problem {
    pub fn new(components: Vec<Component>, set: ConvexSet) -> Result<Self, ProblemError> {
        if components.is_empty() {
            return Err(ProblemError::NoComponents);
        }
        set.validate()?;
        for c in &components {
            c.validate()?;
            if c.dim() != set.dim() {
                return Err(ProblemError::DimensionMismatch {
                    found: c.dim(),
                    expected: set.dim(),
                });
            }
        }
        Ok(Self {
            components,
            set,
            optimum: None,
        })
    }

    /// Attaches a declared optimum, checked for internal consistency: the
    /// minimizer must lie in the set and reproduce the declared value within
    /// 1e-9.
    pub fn with_optimum(mut self, f_star: f64, x_star: Vec<f64>) -> Result<Self, ProblemError> {
        if x_star.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                found: x_star.len(),
                expected: self.dim(),
            });
        }
        let gap = self.set.distance(&x_star);
        if gap > 1e-9 {
            return Err(ProblemError::InconsistentOptimum(format!(
                "declared minimizer is {gap:.3e} away from the constraint set"
            )));
        }
        let value = self.total_value(&x_star);
        if (value - f_star).abs() > 1e-9 {
            return Err(ProblemError::InconsistentOptimum(format!(
                "objective at the declared minimizer is {value}, declared {f_star}"
            )));
        }
        self.optimum = Some((f_star, x_star));
        Ok(self)
    }

    pub fn num_agents(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn component(&self, i: usize) -> &Component {
        &self.components[i]
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn set(&self) -> &ConvexSet {
        &self.set
    }

    pub fn optimum(&self) -> Option<(f64, &[f64])> {
        self.optimum.as_ref().map(|(f, x)| (*f, x.as_slice()))
    }

    /// The global objective: the sum of all component values at `x`.
    pub fn total_value(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.value(x)).sum()
    }

    /// Uniform subgradient norm bounds, one per component.
    pub fn subgradient_bounds(&self) -> Result<Vec<SubgradientBound>, ProblemError> {
        self.components
            .iter()
            .map(|c| c.subgradient_bound(&self.set))
            .collect()
    }
}

/// Brute-force reference optimum by multiscale grid search with projection,
/// for bounded sets in at most 3 dimensions. The returned value is accurate
/// to roughly the local growth of the objective over one final-level grid
/// cell; the returned minimizer is one point achieving it. Intended for
/// separable or well-conditioned reference problems; strongly anisotropic
/// valleys that are not axis-aligned can stall the window refinement short
/// of full accuracy.
pub fn solve_reference(problem: &Problem, tol: f64) -> Result<(f64, Vec<f64>), ProblemError> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(ProblemError::BadTolerance(tol));
    }
    let set = problem.set();
    if set.diameter().is_none() {
        return Err(ProblemError::UnboundedSet);
    }
    let n = set.dim();
    if n > 3 {
        return Err(ProblemError::TooManyDimensions { max: 3, found: n });
    }
    let (mut lower, mut upper): (Vec<f64>, Vec<f64>) = match set {
        ConvexSet::Box { lower, upper } => (lower.clone(), upper.clone()),
        ConvexSet::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        ConvexSet::Simplex { dim } => (vec![0.0; *dim], vec![1.0; *dim]),
        ConvexSet::Halfspace { .. } | ConvexSet::All { .. } => {
            unreachable!("unbounded sets were rejected above")
        }
    };
    let points_per_axis = match n {
        1 => 513,
        2 => 65,
        _ => 17,
    };
    let mut best_x = set.project(&linalg::mean(&[lower.clone(), upper.clone()]));
    let mut best_f = problem.total_value(&best_x);
    for _level in 0..200 {
        let steps: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(&l, &u)| (u - l) / (points_per_axis - 1) as f64)
            .collect();
        let mut index = vec![0usize; n];
        let mut point = vec![0.0; n];
        let mut projected = vec![0.0; n];
        'grid: loop {
            for d in 0..n {
                point[d] = lower[d] + steps[d] * index[d] as f64;
            }
            set.project_into(&point, &mut projected);
            let f = problem.total_value(&projected);
            if f < best_f {
                best_f = f;
                best_x.copy_from_slice(&projected);
            }
            for slot in index.iter_mut() {
                *slot += 1;
                if *slot < points_per_axis {
                    continue 'grid;
                }
                *slot = 0;
            }
            break;
        }
        let cell = steps.iter().fold(0.0f64, |a, &s| a.max(s));
        if cell <= tol {
            break;
        }
        // Shrink to a window of three cells around the incumbent. Candidates
        // are projected before evaluation, so the window may safely poke
        // outside the feasible region.
        for d in 0..n {
            let half = 3.0 * steps[d];
            lower[d] = best_x[d] - half;
            upper[d] = best_x[d] + half;
        }
    }
    Ok((best_f, best_x))
}

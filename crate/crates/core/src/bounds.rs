//! Closed-form error bounds, finite-time certificates, and stopping rules,
//! plus comparisons of each bound against simulated data.
//!
//! All bounds share one ingredient bundle: the network size, the geometric
//! consensus certificate `(theta, beta)`, per-agent subgradient norm caps
//! `C_i`, per-agent noise statistics (root mean square `nu_i` and persistent
//! mean `mu_i`), the limiting stepsize, and a few initial-state quantities.

use crate::engine::{AggregatedTrace, RunTrace, SimConfig};
use crate::linalg;
use crate::mixing::{rate_certificate, MixingError};
use crate::problem::ProblemError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{name} must be {requirement}, got {value}")]
    BadInput {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("per-agent inputs must all have one entry per agent")]
    MismatchedShapes,
    #[error("the reference point lies {0:.3e} outside the constraint set")]
    InfeasibleReference(f64),
    #[error("persistent mean noise adds a diameter term; the constraint set has none")]
    NeedsDiameter,
    #[error("this analysis requires noise with vanishing mean")]
    BiasedNoise,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("accuracy target must be positive and finite, got {0}")]
    BadTarget(f64),
    #[error("the accuracy target would need about {0:.3e} transitions")]
    HorizonOverflow(f64),
    #[error("the aggregate carries no records")]
    EmptyRecords,
}

/// Everything the closed-form bounds consume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub num_agents: usize,
    /// Leading constant of the geometric consensus certificate.
    pub theta: f64,
    /// Per-transition decay of the certificate, in (0, 1).
    pub beta: f64,
    /// The weight floor the certificate was derived from (echoed for
    /// reports).
    pub eta: f64,
    /// The connectivity window the certificate assumes (echoed for reports).
    pub window: usize,
    /// Per-agent uniform subgradient norm caps `C_i`.
    pub subgrad_bounds: Vec<f64>,
    /// Per-agent uniform caps on `sqrt(E ||noise||^2)`.
    pub noise_rms: Vec<f64>,
    /// Per-agent `limsup_k || E noise_k ||`: the persistent mean noise.
    pub noise_mean: Vec<f64>,
    /// `lim_k alpha_k`: zero for diminishing schedules.
    pub stepsize_limit: f64,
    /// Euclidean diameter of the constraint set, when finite.
    pub diameter: Option<f64>,
    /// `sum_i || v_(i,1) - x* ||^2` at the second transition's mixed points
    /// (in expectation, for noisy runs).
    pub first_mixed_sq_sum: f64,
    /// `max_i || w_(i,0) ||`.
    pub initial_max_norm: f64,
}

/// Constants of the finite-time guarantee
/// `bound(t, alpha) = init / (t alpha) + transient / t + floor * alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteTimeConstants {
    /// Weight of the initial-distance term.
    pub init: f64,
    /// Weight of the initial-disagreement transient.
    pub transient: f64,
    /// Weight of the persistent stepsize floor.
    pub floor: f64,
}

/// A stepsize and horizon certified to reach a target accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingRule {
    /// The finite-time constants the rule was solved against.
    pub constants: FiniteTimeConstants,
    /// The requested accuracy.
    pub target: f64,
    /// The positive root of `transient x^2 + 2 sqrt(init floor) x = target`;
    /// `iterations` is about `1 / psi^2`.
    pub psi: f64,
    /// The constant stepsize to run with.
    pub stepsize: f64,
    /// Transitions to run.
    pub iterations: u64,
    /// The finite-time bound evaluated at the returned pair; at most the
    /// target by construction.
    pub predicted_bound: f64,
}

/// Solves for the cheapest certified horizon: the stepsize and iteration
/// count whose finite-time bound `init/(t a) + transient/t + floor a` meets
/// the accuracy target.
pub fn stopping_rule(
    constants: FiniteTimeConstants,
    target: f64,
) -> Result<StoppingRule, BoundsError> {
    if !target.is_finite() || target <= 0.0 {
        return Err(BoundsError::BadTarget(target));
    }
    let FiniteTimeConstants {
        init: a,
        transient: b,
        floor: c,
    } = constants;
    if !(a.is_finite() && a > 0.0) {
        return Err(BoundsError::BadInput {
            name: "init",
            requirement: "positive (agents must start off the optimum)",
            value: a,
        });
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(BoundsError::BadInput {
            name: "floor",
            requirement: "positive (some agent must have a nonzero kick scale)",
            value: c,
        });
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(BoundsError::BadInput {
            name: "transient",
            requirement: "finite and nonnegative",
            value: b,
        });
    }
    let root_ac = (a * c).sqrt();
    // psi solves b psi^2 + 2 sqrt(a c) psi = target; written to stay stable
    // when b is small relative to the other terms.
    let psi = if b > 0.0 {
        ((a * c + b * target).sqrt() - root_ac) / b
    } else {
        target / (2.0 * root_ac)
    };
    let stepsize = (a / c).sqrt() * psi;
    let iterations_f = (1.0 / (psi * psi)).ceil();
    if !(1.0..=9.0e18).contains(&iterations_f) {
        return Err(BoundsError::HorizonOverflow(iterations_f));
    }
    let iterations = iterations_f as u64;
    let t = iterations as f64;
    let predicted_bound = a / (t * stepsize) + b / t + c * stepsize;
    debug_assert!(
        predicted_bound <= target + 1e-9,
        "stopping rule self-check: {predicted_bound} > {target}"
    );
    Ok(StoppingRule {
        constants,
        target,
        psi,
        stepsize,
        iterations,
        predicted_bound,
    })
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), BoundsError> {
        let m = self.num_agents;
        if m == 0 {
            return Err(BoundsError::BadInput {
                name: "num_agents",
                requirement: "at least 1",
                value: 0.0,
            });
        }
        if self.subgrad_bounds.len() != m || self.noise_rms.len() != m || self.noise_mean.len() != m
        {
            return Err(BoundsError::MismatchedShapes);
        }
        let nonneg: [(&'static str, &dyn Fn() -> bool, f64); 3] = [
            (
                "theta",
                &|| self.theta.is_finite() && self.theta > 0.0,
                self.theta,
            ),
            ("beta", &|| self.beta > 0.0 && self.beta < 1.0, self.beta),
            (
                "stepsize_limit",
                &|| self.stepsize_limit.is_finite() && self.stepsize_limit >= 0.0,
                self.stepsize_limit,
            ),
        ];
        for (name, ok, value) in nonneg {
            if !ok() {
                return Err(BoundsError::BadInput {
                    name,
                    requirement: "a valid certificate value",
                    value,
                });
            }
        }
        for (name, list) in [
            ("subgrad_bounds", &self.subgrad_bounds),
            ("noise_rms", &self.noise_rms),
            ("noise_mean", &self.noise_mean),
        ] {
            if let Some(&bad) = list.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(BoundsError::BadInput {
                    name,
                    requirement: "finite and nonnegative",
                    value: bad,
                });
            }
        }
        if let Some(d) = self.diameter {
            if !d.is_finite() || d < 0.0 {
                return Err(BoundsError::BadInput {
                    name: "diameter",
                    requirement: "finite and nonnegative",
                    value: d,
                });
            }
        }
        if !self.first_mixed_sq_sum.is_finite() || self.first_mixed_sq_sum < 0.0 {
            return Err(BoundsError::BadInput {
                name: "first_mixed_sq_sum",
                requirement: "finite and nonnegative",
                value: self.first_mixed_sq_sum,
            });
        }
        if !self.initial_max_norm.is_finite() || self.initial_max_norm < 0.0 {
            return Err(BoundsError::BadInput {
                name: "initial_max_norm",
                requirement: "finite and nonnegative",
                value: self.initial_max_norm,
            });
        }
        Ok(())
    }

    /// `max_i (C_i + nu_i)`: the worst per-transition kick scale.
    fn worst_kick(&self) -> f64 {
        self.subgrad_bounds
            .iter()
            .zip(&self.noise_rms)
            .map(|(&c, &nu)| c + nu)
            .fold(0.0, f64::max)
    }

    /// `theta * beta / (1 - beta)`: the summed geometric tail.
    fn geometric_sum(&self) -> f64 {
        self.theta * self.beta / (1.0 - self.beta)
    }

    /// Asymptotic cap on the expected deviation of any agent from the
    /// network mean, for the limiting stepsize. Zero under diminishing
    /// schedules.
    pub fn disagreement_bound(&self) -> Result<f64, BoundsError> {
        self.validate()?;
        let m = self.num_agents as f64;
        Ok(self.stepsize_limit * self.worst_kick() * (2.0 + m * self.geometric_sum()))
    }

    /// Asymptotic cap on the expected objective excess at the agents'
    /// iterates: a stepsize-proportional noise floor, plus a diameter term
    /// when the noise keeps a persistent mean.
    pub fn function_value_bound(&self) -> Result<f64, BoundsError> {
        self.validate()?;
        let m = self.num_agents as f64;
        let mean_total: f64 = self.noise_mean.iter().sum();
        let bias_term = if mean_total > 0.0 {
            match self.diameter {
                Some(d) => d * mean_total,
                None => return Err(BoundsError::NeedsDiameter),
            }
        } else {
            0.0
        };
        let kick = self.worst_kick();
        let floor = m * self.stepsize_limit * kick * kick * (4.5 + 2.0 * m * self.geometric_sum());
        Ok(bias_term + floor)
    }

    /// The same asymptotic cap applied to the stepsize-weighted running
    /// averages; averaging does not pay extra by convexity.
    pub fn averaged_bound(&self) -> Result<f64, BoundsError> {
        self.function_value_bound()
    }

    /// Constants of the finite-time guarantee on the running averages.
    /// Requires unbiased noise.
    pub fn finite_time_constants(&self) -> Result<FiniteTimeConstants, BoundsError> {
        self.validate()?;
        if self.noise_mean.iter().sum::<f64>() > 0.0 {
            return Err(BoundsError::BiasedNoise);
        }
        let m = self.num_agents as f64;
        let c_max = self.subgrad_bounds.iter().copied().fold(0.0, f64::max);
        let kick = self.worst_kick();
        Ok(FiniteTimeConstants {
            init: 0.5 * self.first_mixed_sq_sum,
            transient: 2.0 * m * m * self.theta * self.beta * self.beta / (1.0 - self.beta)
                * c_max
                * self.initial_max_norm,
            floor: m * kick * kick * (4.5 + 2.0 * m * self.geometric_sum()),
        })
    }

    /// The finite-time excess bound after `t` transitions at constant
    /// stepsize `alpha`.
    pub fn finite_time_bound(&self, t: u64, alpha: f64) -> Result<f64, BoundsError> {
        if t == 0 {
            return Err(BoundsError::ZeroHorizon);
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(BoundsError::BadInput {
                name: "alpha",
                requirement: "positive and finite",
                value: alpha,
            });
        }
        let c = self.finite_time_constants()?;
        let t = t as f64;
        Ok(c.init / (t * alpha) + c.transient / t + c.floor * alpha)
    }

    /// Picks a constant stepsize and horizon whose finite-time bound meets
    /// the accuracy target, balancing the three terms. The returned rule is
    /// self-checked: its predicted bound never exceeds the target (up to
    /// 1e-9).
    pub fn stopping_rule(&self, target: f64) -> Result<StoppingRule, BoundsError> {
        stopping_rule(self.finite_time_constants()?, target)
    }
}

fn certificate_for(config: &SimConfig) -> Result<(f64, f64, f64), BoundsError> {
    let scan = if config.topology.period().is_some() {
        config.horizon
    } else {
        config.horizon.min(crate::engine::APERIODIC_SCAN_CAP)
    };
    let eta = config.weights.eta_over(&config.topology, scan.max(1))?;
    let cert = rate_certificate(config.problem.num_agents(), eta, config.topology.window())?;
    Ok((cert.theta, cert.beta, eta))
}

fn shared_inputs(config: &SimConfig, x_star: &[f64]) -> Result<BoundInputs, BoundsError> {
    let m = config.problem.num_agents();
    let n = config.problem.dim();
    if x_star.len() != n {
        return Err(BoundsError::MismatchedShapes);
    }
    let gap = config.problem.set().distance(x_star);
    if gap > 1e-9 {
        return Err(BoundsError::InfeasibleReference(gap));
    }
    let (theta, beta, eta) = certificate_for(config)?;
    let subgrad_bounds = config
        .problem
        .subgradient_bounds()?
        .iter()
        .map(|b| b.value)
        .collect();
    Ok(BoundInputs {
        num_agents: m,
        theta,
        beta,
        eta,
        window: config.topology.window(),
        subgrad_bounds,
        noise_rms: (0..m).map(|i| config.noise.rms_bound(i, n)).collect(),
        noise_mean: (0..m).map(|i| config.noise.mean_norm_limsup(i)).collect(),
        stepsize_limit: config.stepsize.limit(),
        diameter: config.problem.set().diameter(),
        first_mixed_sq_sum: 0.0,
        initial_max_norm: 0.0,
    })
}

/// Assembles the bound ingredients from one run: certificate and noise
/// statistics from the configuration, initial quantities from the trace,
/// distances measured against the reference minimizer `x_star`.
pub fn constants_from_run(
    config: &SimConfig,
    trace: &RunTrace,
    x_star: &[f64],
) -> Result<BoundInputs, BoundsError> {
    let mut inputs = shared_inputs(config, x_star)?;
    inputs.first_mixed_sq_sum = trace
        .first_mixed
        .iter()
        .map(|v| linalg::dist(v, x_star).powi(2))
        .sum();
    inputs.initial_max_norm = trace
        .initial
        .iter()
        .map(|w| linalg::norm(w))
        .fold(0.0, f64::max);
    inputs.validate()?;
    Ok(inputs)
}

/// Same as [`constants_from_run`], with the expected initial distance
/// reconstructed from replica moments:
/// `E||v - x*||^2 = E||v||^2 - 2 x* . E[v] + ||x*||^2` per agent.
pub fn constants_from_aggregate(
    config: &SimConfig,
    agg: &AggregatedTrace,
    x_star: &[f64],
) -> Result<BoundInputs, BoundsError> {
    let mut inputs = shared_inputs(config, x_star)?;
    let x_norm_sq = linalg::norm_sq(x_star);
    inputs.first_mixed_sq_sum = agg
        .first_mixed_sq
        .iter()
        .zip(&agg.first_mixed_mean)
        .map(|(sq, mean)| sq.mean - 2.0 * linalg::dot(x_star, mean) + x_norm_sq)
        .sum();
    inputs.initial_max_norm = agg
        .initial
        .iter()
        .map(|w| linalg::norm(w))
        .fold(0.0, f64::max);
    inputs.validate()?;
    Ok(inputs)
}

/// Which bound to hold against the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    /// Worst per-agent deviation from the network mean, at the tail.
    Disagreement,
    /// Objective excess at the agents' own iterates, at the tail.
    IterateObjective,
    /// Objective excess at the running averages, at the tail.
    AveragedObjective,
    /// Objective excess of the running averages at one recorded transition.
    FiniteTime { t: usize },
}

/// How empirical data is held against a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonOptions {
    /// Fraction of the recorded trail treated as the stationary tail.
    pub tail_fraction: f64,
    /// How many standard errors of headroom the empirical side receives.
    pub se_slack: f64,
    /// Below this replica count comparisons report `Unscored`.
    pub min_replicas: u64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.1,
            se_slack: 3.0,
            min_replicas: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unscored,
}

/// One bound held against one empirical statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundComparison {
    pub kind: BoundKind,
    pub bound: f64,
    pub empirical: Option<f64>,
    pub std_error: Option<f64>,
    /// `bound + slack - empirical`; negative means the data broke the bound.
    pub margin: Option<f64>,
    pub verdict: Verdict,
    pub note: String,
}

/// Holds each requested bound against the aggregated simulation data.
///
/// Tail statistics average the across-replica means over the last fraction
/// of the recorded transitions; the reported uncertainty is the worst
/// standard error in that window, which is conservative for correlated
/// records. Asymptotic bounds are meaningful only when the horizon reaches
/// deep enough into the stationary regime; picking such a horizon is the
/// caller's job.
pub fn bound_vs_empirical(
    inputs: &BoundInputs,
    agg: &AggregatedTrace,
    f_star: Option<f64>,
    kinds: &[BoundKind],
    opts: &ComparisonOptions,
) -> Result<Vec<BoundComparison>, BoundsError> {
    if agg.records.is_empty() {
        return Err(BoundsError::EmptyRecords);
    }
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0) {
        return Err(BoundsError::BadInput {
            name: "tail_fraction",
            requirement: "in (0, 1]",
            value: opts.tail_fraction,
        });
    }
    let tail_len = ((agg.records.len() as f64 * opts.tail_fraction).ceil() as usize)
        .clamp(1, agg.records.len());
    let tail = &agg.records[agg.records.len() - tail_len..];
    let tail_stats = |pick: &dyn Fn(&crate::engine::AggregatedRecord) -> crate::engine::MeanSe| {
        let mean = tail.iter().map(|r| pick(r).mean).sum::<f64>() / tail_len as f64;
        let se = tail.iter().map(|r| pick(r).se).fold(0.0, f64::max);
        (mean, se)
    };
    let score = |bound: f64, empirical: f64, se: f64, note: String| {
        if agg.replicas < opts.min_replicas {
            BoundComparison {
                kind: BoundKind::Disagreement,
                bound,
                empirical: Some(empirical),
                std_error: Some(se),
                margin: None,
                verdict: Verdict::Unscored,
                note: format!(
                    "{note}; needs at least {} replicas to score, have {}",
                    opts.min_replicas, agg.replicas
                ),
            }
        } else {
            let slack = opts.se_slack * se;
            let margin = bound + slack - empirical;
            BoundComparison {
                kind: BoundKind::Disagreement,
                bound,
                empirical: Some(empirical),
                std_error: Some(se),
                margin: Some(margin),
                verdict: if empirical <= bound + slack {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                },
                note,
            }
        }
    };
    let unscored = |bound: f64, note: String| BoundComparison {
        kind: BoundKind::Disagreement,
        bound,
        empirical: None,
        std_error: None,
        margin: None,
        verdict: Verdict::Unscored,
        note,
    };
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut comparison = match kind {
            BoundKind::Disagreement => {
                let bound = inputs.disagreement_bound()?;
                let (mean, se) = tail_stats(&|r| r.disagreement);
                score(
                    bound,
                    mean,
                    se,
                    format!("tail mean over the last {tail_len} recorded transitions"),
                )
            }
            BoundKind::IterateObjective => {
                // The iterate guarantee is of liminf type, so its empirical
                // proxy is the running minimum over the recorded trail.
                let bound = inputs.function_value_bound()?;
                match f_star {
                    None => unscored(bound, "no reference optimum supplied".into()),
                    Some(f_star) => {
                        let best = agg
                            .records
                            .iter()
                            .min_by(|a, b| {
                                a.objective_at_iterate
                                    .mean
                                    .total_cmp(&b.objective_at_iterate.mean)
                            })
                            .expect("records checked nonempty");
                        score(
                            bound,
                            best.objective_at_iterate.mean - f_star,
                            best.objective_at_iterate.se,
                            format!(
                                "running minimum of the mean excess, reached at transition {}",
                                best.k
                            ),
                        )
                    }
                }
            }
            BoundKind::AveragedObjective => {
                let bound = inputs.averaged_bound()?;
                match f_star {
                    None => unscored(bound, "no reference optimum supplied".into()),
                    Some(f_star) => {
                        let (mean, se) = tail_stats(&|r| r.objective_at_running_avg);
                        score(
                            bound,
                            mean - f_star,
                            se,
                            format!(
                                "tail mean excess over the last {tail_len} recorded transitions"
                            ),
                        )
                    }
                }
            }
            BoundKind::FiniteTime { t } => {
                let record = agg.records.iter().find(|r| r.k == t);
                match (record, f_star) {
                    (None, _) => unscored(f64::NAN, format!("transition {t} was not recorded")),
                    (_, None) => unscored(f64::NAN, "no reference optimum supplied".into()),
                    (Some(record), Some(f_star)) => {
                        let bound = inputs.finite_time_bound(t as u64, record.stepsize)?;
                        score(
                            bound,
                            record.objective_at_running_avg.mean - f_star,
                            record.objective_at_running_avg.se,
                            format!("running-average excess at transition {t}"),
                        )
                    }
                }
            }
        };
        comparison.kind = kind;
        out.push(comparison);
    }
    Ok(out)
}

//! Result serialization: the JSON summary, the guarantee report, and the
//! CSV traces.
//!
//! Everything written here is a pure function of the configuration document,
//! so re-running a study regenerates byte-identical files; the only field
//! exempt from that promise is the wall clock.

use std::fmt::Write as _;

use netgrad::bounds::{
    constants_from_aggregate, constants_from_run, stopping_rule, BoundComparison, BoundInputs,
    BoundsError, FiniteTimeConstants, StoppingRule,
};
use netgrad::engine::{AggregatedTrace, RunTrace, SimConfig};
use netgrad::problem::{solve_reference, Problem};
use netgrad::stochastic::StepsizeSchedule;
use serde::Serialize;

use crate::config::RunConfigFile;
use crate::CliError;

/// The JSON summary written next to every trace.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    /// Fingerprint of the canonical configuration document.
    pub digest: String,
    pub seed: u64,
    pub replicas: u64,
    pub horizon: usize,
    pub num_agents: usize,
    pub dim: usize,
    pub recorded_transitions: usize,
    /// Statistics over the trailing tenth of the recorded transitions.
    pub tail: TailStats,
    /// Final per-agent state; only available for single runs, since the
    /// aggregated trace keeps across-replica statistics instead.
    pub agents: Option<Vec<AgentSummary>>,
    pub bounds: Option<BoundBundle>,
    /// Why the guarantee block is missing, when it is.
    pub bounds_note: Option<String>,
    pub warnings: Vec<String>,
    pub violation_count: u64,
    /// Excluded from the reproducibility contract.
    pub wall_clock_seconds: f64,
    /// Canonical echo of the configuration; reloading it reproduces every
    /// other field of this report.
    pub config: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailStats {
    /// How many trailing records were averaged.
    pub window: usize,
    pub disagreement: TailStat,
    pub objective_at_average: TailStat,
    pub objective_at_running_avg: TailStat,
}

/// A tail mean; the standard error is present only for aggregated runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailStat {
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub final_iterate: Vec<f64>,
    pub final_running_avg: Vec<f64>,
    /// Global objective at this agent's final iterate.
    pub objective_at_iterate: f64,
    /// Global objective at this agent's final running average.
    pub objective_at_running_avg: f64,
}

/// The reference optimum the guarantees are measured against.
#[derive(Debug, Clone, Serialize)]
pub struct ReferencePoint {
    pub f_star: f64,
    pub x_star: Vec<f64>,
    /// Where the reference came from: "declared", "problem optimum", or
    /// "grid search".
    pub source: &'static str,
}

/// Every guarantee the configuration supports, in one block.
#[derive(Debug, Clone, Serialize)]
pub struct BoundBundle {
    pub reference: ReferencePoint,
    /// The certificate and scale constants behind every number below.
    pub inputs: BoundInputs,
    /// Asymptotic cap on any agent's deviation from the network mean.
    pub disagreement: f64,
    /// Asymptotic cap on the worst expected objective excess; absent when
    /// the hypothesis it needs does not hold (see `note`).
    pub function_value: Option<f64>,
    pub note: Option<String>,
    pub finite_time: Option<FiniteTimeBlock>,
    pub stopping: Option<StoppingRule>,
    /// Guarantees held against the recorded data, when replicas allow it.
    pub comparisons: Vec<BoundComparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteTimeBlock {
    pub constants: FiniteTimeConstants,
    /// The constant stepsize the curve is evaluated at.
    pub stepsize: f64,
    pub samples: Vec<CurveSample>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveSample {
    pub t: u64,
    pub bound: f64,
}

/// Trailing tenth of `len` records, at least one.
pub fn tail_window(len: usize) -> usize {
    len.div_ceil(10).max(1)
}

fn tail_mean(values: impl Iterator<Item = f64>, window: usize) -> f64 {
    let tail: Vec<f64> = values.collect();
    let tail = &tail[tail.len() - window..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn tail_stats_from_run(trace: &RunTrace) -> TailStats {
    let window = tail_window(trace.records.len());
    let stat = |f: fn(&netgrad::engine::IterationRecord) -> f64| TailStat {
        mean: tail_mean(trace.records.iter().map(f), window),
        se: None,
    };
    TailStats {
        window,
        disagreement: stat(|r| r.disagreement),
        objective_at_average: stat(|r| r.objective_at_average),
        objective_at_running_avg: stat(|r| r.objective_at_running_avg),
    }
}

pub fn tail_stats_from_aggregate(agg: &AggregatedTrace) -> TailStats {
    let window = tail_window(agg.records.len());
    let stat = |f: fn(&netgrad::engine::AggregatedRecord) -> netgrad::engine::MeanSe| {
        let start = agg.records.len() - window;
        let tail = &agg.records[start..];
        TailStat {
            mean: tail.iter().map(|r| f(r).mean).sum::<f64>() / window as f64,
            se: Some(tail.iter().map(|r| f(r).se).fold(0.0, f64::max)),
        }
    };
    TailStats {
        window,
        disagreement: stat(|r| r.disagreement),
        objective_at_average: stat(|r| r.objective_at_average),
        objective_at_running_avg: stat(|r| r.objective_at_running_avg),
    }
}

pub fn agent_summaries(problem: &Problem, trace: &RunTrace) -> Vec<AgentSummary> {
    trace
        .final_iterates
        .iter()
        .zip(&trace.final_running_avg)
        .enumerate()
        .map(|(agent, (w, z))| AgentSummary {
            agent,
            final_iterate: w.clone(),
            final_running_avg: z.clone(),
            objective_at_iterate: problem.total_value(w),
            objective_at_running_avg: problem.total_value(z),
        })
        .collect()
}

/// Finds the optimum the guarantees are measured against, in order of
/// preference: a declared `[bounds]` reference, the problem's own declared
/// optimum, then a grid search over bounded low-dimensional sets. `None`
/// means no reference is available (the caller decides how hard that is).
pub fn resolve_reference(
    file: &RunConfigFile,
    problem: &Problem,
) -> Result<Option<ReferencePoint>, CliError> {
    if let Some(x_star) = &file.bounds.x_star {
        let f_star = match file.bounds.f_star {
            Some(f) => f,
            None => problem.total_value(x_star),
        };
        return Ok(Some(ReferencePoint {
            f_star,
            x_star: x_star.clone(),
            source: "declared",
        }));
    }
    if let Some((f_star, x_star)) = problem.optimum() {
        return Ok(Some(ReferencePoint {
            f_star,
            x_star: x_star.to_vec(),
            source: "problem optimum",
        }));
    }
    match solve_reference(problem, 1e-7) {
        Ok((f_star, x_star)) => Ok(Some(ReferencePoint {
            f_star,
            x_star,
            source: "grid search",
        })),
        Err(_) => Ok(None),
    }
}

pub const BOUNDED_SET_EXPLANATION: &str = "the function-value guarantee needs a bounded \
constraint set when the noise keeps a persistent mean: the bias term scales with the set \
diameter. Declare a bounded set, or remove the persistent bias from the noise model.";

const UNBIASED_EXPLANATION: &str = "the finite-time guarantee and the stopping rule need \
unbiased gradient noise; this noise model keeps a persistent mean.";

/// Assembles the guarantee block from prepared inputs. `epsilon` adds the
/// stopping-rule block and is an error to request under biased noise;
/// everything else degrades to an explanatory note instead of failing.
pub fn assemble_bounds(
    inputs: BoundInputs,
    reference: ReferencePoint,
    stepsize: &StepsizeSchedule,
    curve: &[u64],
    epsilon: Option<f64>,
    comparisons: Vec<BoundComparison>,
) -> Result<BoundBundle, CliError> {
    let disagreement = inputs.disagreement_bound().map_err(bound_failure)?;
    let mut note: Option<String> = None;
    let function_value = match inputs.function_value_bound() {
        Ok(v) => Some(v),
        Err(BoundsError::NeedsDiameter) => {
            note = Some(BOUNDED_SET_EXPLANATION.to_string());
            None
        }
        Err(e) => return Err(bound_failure(e)),
    };
    let constants = match inputs.finite_time_constants() {
        Ok(c) => Some(c),
        Err(BoundsError::BiasedNoise) => {
            let text = UNBIASED_EXPLANATION.to_string();
            match &mut note {
                Some(n) => {
                    n.push(' ');
                    n.push_str(&text);
                }
                None => note = Some(text),
            }
            None
        }
        Err(e) => return Err(bound_failure(e)),
    };
    let finite_time = constants.map(|constants| {
        // The curve needs one constant stepsize; diminishing schedules are
        // sampled at their first value.
        let alpha = match *stepsize {
            StepsizeSchedule::Constant { alpha } => alpha,
            other => other.value(1),
        };
        let samples = curve
            .iter()
            .filter_map(|&t| {
                inputs
                    .finite_time_bound(t, alpha)
                    .ok()
                    .map(|bound| CurveSample { t, bound })
            })
            .collect();
        FiniteTimeBlock {
            constants,
            stepsize: alpha,
            samples,
        }
    });
    let stopping = match (epsilon, constants) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(CliError::Config {
                path: Some("noise".into()),
                message: UNBIASED_EXPLANATION.to_string(),
            });
        }
        (Some(eps), Some(constants)) => Some(stopping_rule(constants, eps).map_err(bound_failure)?),
    };
    Ok(BoundBundle {
        reference,
        inputs,
        disagreement,
        function_value,
        note,
        finite_time,
        stopping,
        comparisons,
    })
}

fn bound_failure(e: BoundsError) -> CliError {
    CliError::Config {
        path: None,
        message: format!("cannot compute the guarantee: {e}"),
    }
}

/// Derives the guarantee inputs for a run without executing the study: the
/// starting distances come from a deterministic two-transition prefix with
/// the noise turned off.
pub fn inputs_from_prefix(
    config: &SimConfig,
    reference: &ReferencePoint,
) -> Result<BoundInputs, CliError> {
    let mut prefix = config.clone();
    prefix.noise = netgrad::stochastic::NoiseModel::None;
    prefix.horizon = 2;
    prefix.record = netgrad::engine::RecordConfig {
        thin: 1,
        record_states: false,
    };
    prefix.checks = netgrad::engine::CheckConfig::default();
    let trace = prefix.run().map_err(crate::engine_failure)?;
    constants_from_run(config, &trace, &reference.x_star).map_err(bound_failure)
}

pub fn inputs_from_run(
    config: &SimConfig,
    trace: &RunTrace,
    reference: &ReferencePoint,
) -> Result<BoundInputs, CliError> {
    constants_from_run(config, trace, &reference.x_star).map_err(bound_failure)
}

pub fn inputs_from_aggregate(
    config: &SimConfig,
    agg: &AggregatedTrace,
    reference: &ReferencePoint,
) -> Result<BoundInputs, CliError> {
    constants_from_aggregate(config, agg, &reference.x_star).map_err(bound_failure)
}

const RUN_METRICS: [&str; 6] = [
    "disagreement",
    "objective_at_average",
    "objective_at_iterate",
    "objective_at_running_avg",
    "displacement",
    "error_norm",
];

/// CSV of a single-run trace: one row per recorded transition. The column
/// set depends only on the recorded metrics, never on the data.
pub fn run_csv(trace: &RunTrace) -> String {
    let mut out = String::from("k,stepsize");
    for name in RUN_METRICS {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            r.stepsize,
            r.disagreement,
            r.objective_at_average,
            r.objective_at_iterate,
            r.objective_at_running_avg,
            r.displacement,
            r.error_norm
        );
    }
    out
}

/// CSV of an aggregated trace: per metric, the across-replica mean and its
/// standard error as adjacent columns.
pub fn aggregate_csv(agg: &AggregatedTrace) -> String {
    let mut out = String::from("k,stepsize");
    for name in RUN_METRICS {
        let _ = write!(out, ",{name}_mean,{name}_se");
    }
    out.push('\n');
    for r in &agg.records {
        let _ = write!(out, "{},{}", r.k, r.stepsize);
        for stat in [
            r.disagreement,
            r.objective_at_average,
            r.objective_at_iterate,
            r.objective_at_running_avg,
            r.displacement,
            r.error_norm,
        ] {
            let _ = write!(out, ",{},{}", stat.mean, stat.se);
        }
        out.push('\n');
    }
    out
}

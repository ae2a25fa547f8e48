//! The four subcommands: run, bounds, sweep, check-topology.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use netgrad::bounds::{BoundInputs, BoundKind, ComparisonOptions};
use netgrad::mixing::{rate_certificate, verify_geometric_rate};
use netgrad::problem::Problem;
use netgrad::stochastic::{NoiseModel, StepsizeSchedule};

use crate::config::{self, RunConfigFile, TraceFormat};
use crate::report::{
    agent_summaries, aggregate_csv, assemble_bounds, inputs_from_aggregate, inputs_from_prefix,
    inputs_from_run, resolve_reference, run_csv, tail_stats_from_aggregate, tail_stats_from_run,
    SummaryReport, BOUNDED_SET_EXPLANATION,
};
use crate::{engine_failure, BoundsArgs, CliError, RunArgs, SweepArgs, TopologyArgs};

/// Long schedules are scanned up to this many transitions when measuring the
/// weight floor; periodic schedules are exact after one cycle regardless.
const ETA_SCAN_CAP: usize = 20_000;

/// Transition counts sampled along the finite-time curve by default.
const DEFAULT_CURVE: [u64; 4] = [100, 1_000, 10_000, 100_000];

fn merged_sets(base: &[String], seed: Option<u64>, replicas: Option<u64>) -> Vec<String> {
    let mut sets = base.to_vec();
    if let Some(seed) = seed {
        sets.push(format!("engine.seed={seed}"));
    }
    if let Some(replicas) = replicas {
        sets.push(format!("engine.replicas={replicas}"));
    }
    sets
}

fn curve_points(file: &RunConfigFile) -> Vec<u64> {
    file.bounds
        .curve
        .clone()
        .unwrap_or_else(|| DEFAULT_CURVE.to_vec())
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let sets = merged_sets(&args.common.set, args.seed, args.replicas);
    let loaded = config::load(&args.common.config, &sets)?;
    let file = &loaded.file;
    let sim = file.build()?;

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| file.output.out_dir.clone())
        .or_else(|| std::env::var_os("NETGRAD_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Write {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let prefix = file.output.prefix.clone().unwrap_or_else(|| "run".into());
    let format = args
        .format
        .or(file.output.format)
        .unwrap_or(TraceFormat::Csv);

    let reference = resolve_reference(file, &sim.problem)?;
    let replicas = file.engine.replicas;
    let curve = curve_points(file);

    let started = Instant::now();
    let mut bounds_note = None;
    let (trace_text, summary) = if replicas == 1 {
        let trace = sim.run().map_err(engine_failure)?;
        let bounds = match &reference {
            Some(reference) => {
                let inputs = inputs_from_run(&sim, &trace, reference)?;
                Some(assemble_bounds(
                    inputs,
                    reference.clone(),
                    &file.stepsize,
                    &curve,
                    None,
                    Vec::new(),
                )?)
            }
            None => {
                bounds_note = Some(missing_reference_note());
                None
            }
        };
        let text = match format {
            TraceFormat::Csv => run_csv(&trace),
            TraceFormat::Json => to_json(&trace)?,
        };
        let summary = SummaryReport {
            digest: loaded.digest.clone(),
            seed: file.engine.seed,
            replicas,
            horizon: file.engine.horizon,
            num_agents: trace.num_agents,
            dim: trace.dim,
            recorded_transitions: trace.records.len(),
            tail: tail_stats_from_run(&trace),
            agents: Some(agent_summaries(&sim.problem, &trace)),
            bounds,
            bounds_note,
            warnings: trace.warnings.clone(),
            violation_count: trace.violations.len() as u64,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            config: loaded.canonical.clone(),
        };
        (text, summary)
    } else {
        let agg = sim.monte_carlo(replicas).map_err(engine_failure)?;
        let bounds = match &reference {
            Some(reference) => {
                let inputs = inputs_from_aggregate(&sim, &agg, reference)?;
                let comparisons = netgrad::bounds::bound_vs_empirical(
                    &inputs,
                    &agg,
                    Some(reference.f_star),
                    &[
                        BoundKind::Disagreement,
                        BoundKind::IterateObjective,
                        BoundKind::AveragedObjective,
                    ],
                    &ComparisonOptions::default(),
                )
                .map_err(|e| CliError::Config {
                    path: None,
                    message: format!("cannot compare guarantees with the data: {e}"),
                })?;
                Some(assemble_bounds(
                    inputs,
                    reference.clone(),
                    &file.stepsize,
                    &curve,
                    None,
                    comparisons,
                )?)
            }
            None => {
                bounds_note = Some(missing_reference_note());
                None
            }
        };
        let text = match format {
            TraceFormat::Csv => aggregate_csv(&agg),
            TraceFormat::Json => to_json(&agg)?,
        };
        let summary = SummaryReport {
            digest: loaded.digest.clone(),
            seed: file.engine.seed,
            replicas,
            horizon: file.engine.horizon,
            num_agents: agg.num_agents,
            dim: agg.dim,
            recorded_transitions: agg.records.len(),
            tail: tail_stats_from_aggregate(&agg),
            agents: None,
            bounds,
            bounds_note,
            warnings: agg.warnings.clone(),
            violation_count: agg.violation_count,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            config: loaded.canonical.clone(),
        };
        (text, summary)
    };

    let ext = match format {
        TraceFormat::Csv => "csv",
        TraceFormat::Json => "json",
    };
    let trace_path = out_dir.join(format!("{prefix}_trace.{ext}"));
    let summary_path = out_dir.join(format!("{prefix}_summary.json"));
    write_file(&trace_path, &trace_text)?;
    write_file(&summary_path, &(to_json(&summary)?))?;
    println!("wrote {}", trace_path.display());
    println!("wrote {}", summary_path.display());
    println!(
        "ok: {} replica(s), {} recorded transition(s), tail disagreement {:.6e}, tail objective {:.6e}",
        replicas,
        summary.recorded_transitions,
        summary.tail.disagreement.mean,
        summary.tail.objective_at_running_avg.mean,
    );
    Ok(())
}

fn missing_reference_note() -> String {
    "no reference optimum available: declare bounds.x_star or problem.optimum, or use a \
     bounded set of dimension at most three so the grid search applies"
        .to_string()
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Config {
            path: None,
            message: format!("cannot serialize the report: {e}"),
        })
}

fn write_file(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn cmd_bounds(args: &BoundsArgs) -> Result<(), CliError> {
    let loaded = config::load(&args.common.config, &args.common.set)?;
    let file = &loaded.file;
    let sim = file.build()?;
    let epsilon = match args.epsilon.or(file.bounds.epsilon) {
        Some(eps) if eps.is_finite() && eps > 0.0 => Some(eps),
        Some(eps) => {
            return Err(CliError::Config {
                path: Some("bounds.epsilon".into()),
                message: format!("the accuracy target must be positive, got {eps}"),
            });
        }
        None => None,
    };
    let reference = resolve_reference(file, &sim.problem)?.ok_or_else(|| CliError::Config {
        path: Some("bounds.x_star".into()),
        message: missing_reference_note(),
    })?;
    let inputs = inputs_from_prefix(&sim, &reference)?;
    let bundle = assemble_bounds(
        inputs,
        reference,
        &file.stepsize,
        &curve_points(file),
        epsilon,
        Vec::new(),
    )?;
    // A persistent noise mean on an unbounded set leaves no function-value
    // guarantee at all; report that as an error rather than a thinner block.
    if bundle.function_value.is_none() {
        return Err(CliError::Config {
            path: Some("problem.set".into()),
            message: BOUNDED_SET_EXPLANATION.to_string(),
        });
    }
    print!("{}", to_json(&bundle)?);
    Ok(())
}

/// What a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepParam {
    /// Constant stepsize; re-runs the study per value.
    Alpha,
    /// Gaussian noise scale; re-runs the study per value.
    Sigma,
    /// Network size; certificate arithmetic only.
    Agents,
    /// Connectivity window; certificate arithmetic only.
    Window,
    /// Weight floor; certificate arithmetic only.
    Eta,
}

impl SweepParam {
    fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "alpha" => Ok(Self::Alpha),
            "sigma" => Ok(Self::Sigma),
            "m" => Ok(Self::Agents),
            "q" => Ok(Self::Window),
            "eta" => Ok(Self::Eta),
            other => Err(CliError::Config {
                path: None,
                message: format!(
                    "parameter `{other}` is not sweepable; choose alpha, sigma, m, q, or eta"
                ),
            }),
        }
    }

    fn runs_the_engine(self) -> bool {
        matches!(self, Self::Alpha | Self::Sigma)
    }

    fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Sigma => "sigma",
            Self::Agents => "m",
            Self::Window => "q",
            Self::Eta => "eta",
        }
    }
}

/// The certificate and the scale constants of a configuration, measured once
/// and reused across sweep rows.
struct SweepBase {
    eta: f64,
    window: usize,
    num_agents: usize,
    dim: usize,
    subgrad: Vec<f64>,
    noise_rms: Vec<f64>,
    noise_mean: Vec<f64>,
    diameter: Option<f64>,
}

impl SweepBase {
    fn measure(file: &RunConfigFile, problem: &Problem) -> Result<Self, CliError> {
        let topology = file.build_topology()?;
        let weights = file.build_weights();
        let horizon = file.engine.horizon.min(ETA_SCAN_CAP);
        let eta = weights
            .eta_over(&topology, horizon)
            .map_err(|e| CliError::Config {
                path: Some("topology".into()),
                message: e.to_string(),
            })?;
        let subgrad: Vec<f64> = problem
            .subgradient_bounds()
            .map_err(|e| CliError::Config {
                path: Some("problem".into()),
                message: e.to_string(),
            })?
            .into_iter()
            .map(|b| b.value)
            .collect();
        let m = problem.num_agents();
        let dim = problem.dim();
        let noise = file.noise_model();
        Ok(Self {
            eta,
            window: topology.window(),
            num_agents: m,
            dim,
            subgrad,
            noise_rms: (0..m).map(|i| noise.rms_bound(i, dim)).collect(),
            noise_mean: (0..m).map(|i| noise.mean_norm_limsup(i)).collect(),
            diameter: problem.set().diameter(),
        })
    }

    /// Guarantee inputs for a synthetic certificate. When the agent count
    /// changes, per-agent scales are replaced by their worst case.
    fn inputs(
        &self,
        m: usize,
        eta: f64,
        window: usize,
        stepsize_limit: f64,
        noise_override: Option<&[f64]>,
    ) -> Result<BoundInputs, CliError> {
        let cert = rate_certificate(m, eta, window).map_err(|e| CliError::Config {
            path: None,
            message: format!("cannot build the certificate: {e}"),
        })?;
        let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let (subgrad, rms, mean) = if m == self.num_agents {
            (
                self.subgrad.clone(),
                noise_override
                    .map(|v| v.to_vec())
                    .unwrap_or_else(|| self.noise_rms.clone()),
                self.noise_mean.clone(),
            )
        } else {
            (
                vec![worst(&self.subgrad); m],
                vec![worst(&self.noise_rms); m],
                vec![worst(&self.noise_mean); m],
            )
        };
        Ok(BoundInputs {
            num_agents: m,
            theta: cert.theta,
            beta: cert.beta,
            eta,
            window,
            subgrad_bounds: subgrad,
            noise_rms: rms,
            noise_mean: mean,
            stepsize_limit,
            diameter: self.diameter,
            first_mixed_sq_sum: 0.0,
            initial_max_norm: 0.0,
        })
    }
}

fn float_cell(value: Result<f64, netgrad::bounds::BoundsError>) -> String {
    match value {
        Ok(v) => format!("{v}"),
        Err(_) => "nan".to_string(),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let param = SweepParam::parse(&args.param)?;
    let sets = merged_sets(&args.common.set, args.seed, None);
    let loaded = config::load(&args.common.config, &sets)?;
    let file = &loaded.file;
    let problem = file.build_problem()?;
    let base = SweepBase::measure(file, &problem)?;

    let values: Vec<f64> = args
        .values
        .iter()
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| CliError::Config {
                path: None,
                message: format!("sweep value `{v}` is not a number"),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut header = String::from("param,value,theta,beta,disagreement_bound,function_value_bound");
    if param.runs_the_engine() {
        header.push_str(",tail_disagreement,tail_objective");
    }

    // Each row is composed in its own buffer and merged at the end, so a
    // failing row never leaves a half-written table behind.
    let mut rows: Vec<String> = Vec::with_capacity(values.len());
    for &value in &values {
        rows.push(sweep_row(param, value, file, &base, args.replicas)?);
    }

    println!("{header}");
    for row in rows {
        println!("{row}");
    }
    Ok(())
}

fn sweep_row(
    param: SweepParam,
    value: f64,
    file: &RunConfigFile,
    base: &SweepBase,
    replicas: Option<u64>,
) -> Result<String, CliError> {
    let bad_value = |requirement: &str| CliError::Config {
        path: None,
        message: format!("sweep value {value} for {}: {requirement}", param.name()),
    };
    let as_count = |requirement: &str| -> Result<usize, CliError> {
        if value >= 1.0 && value.fract() == 0.0 && value <= 1e6 {
            Ok(value as usize)
        } else {
            Err(bad_value(requirement))
        }
    };

    let inputs = match param {
        SweepParam::Alpha => {
            if !(value > 0.0 && value.is_finite()) {
                return Err(bad_value("the stepsize must be positive"));
            }
            base.inputs(base.num_agents, base.eta, base.window, value, None)?
        }
        SweepParam::Sigma => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(bad_value("the noise scale must be nonnegative"));
            }
            let noise = NoiseModel::Gaussian { sigma: value };
            let rms: Vec<f64> = (0..base.num_agents)
                .map(|i| noise.rms_bound(i, base.dim))
                .collect();
            base.inputs(
                base.num_agents,
                base.eta,
                base.window,
                file.stepsize.limit(),
                Some(&rms),
            )?
        }
        SweepParam::Agents => {
            let m = as_count("the agent count must be a positive integer")?;
            base.inputs(m, base.eta, base.window, file.stepsize.limit(), None)?
        }
        SweepParam::Window => {
            let q = as_count("the window must be a positive integer")?;
            base.inputs(base.num_agents, base.eta, q, file.stepsize.limit(), None)?
        }
        SweepParam::Eta => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(bad_value("the weight floor must lie in (0, 1]"));
            }
            base.inputs(
                base.num_agents,
                value,
                base.window,
                file.stepsize.limit(),
                None,
            )?
        }
    };

    let mut row = format!(
        "{},{},{},{},{},{}",
        param.name(),
        value,
        inputs.theta,
        inputs.beta,
        float_cell(inputs.disagreement_bound()),
        float_cell(inputs.function_value_bound()),
    );

    if param.runs_the_engine() {
        let mut variant = file.clone();
        match param {
            SweepParam::Alpha => variant.stepsize = StepsizeSchedule::Constant { alpha: value },
            SweepParam::Sigma => variant.noise = Some(NoiseModel::Gaussian { sigma: value }),
            _ => unreachable!("only engine parameters reach this branch"),
        }
        let sim = variant.build()?;
        let replicas = replicas.unwrap_or(variant.engine.replicas);
        let agg = sim.monte_carlo(replicas).map_err(engine_failure)?;
        let tail = tail_stats_from_aggregate(&agg);
        let _ = write!(
            row,
            ",{},{}",
            tail.disagreement.mean, tail.objective_at_running_avg.mean
        );
    }
    Ok(row)
}

pub fn cmd_check_topology(args: &TopologyArgs) -> Result<(), CliError> {
    let loaded = config::load(&args.common.config, &args.common.set)?;
    let file = &loaded.file;
    let topology = file.build_topology()?;
    let weights = file.build_weights();
    let horizon = file.engine.horizon;

    let violations = topology.verify(horizon);
    if !violations.is_empty() {
        return Err(CliError::Check {
            message: format!(
                "windowed connectivity fails for {} window start(s) within horizon {}, \
                 first at window start {}",
                violations.len(),
                horizon,
                violations[0],
            ),
        });
    }

    let scan = horizon.min(ETA_SCAN_CAP);
    let eta = weights
        .eta_over(&topology, scan)
        .map_err(|e| CliError::Config {
            path: Some("topology".into()),
            message: e.to_string(),
        })?;
    let cert = rate_certificate(topology.num_agents(), eta, topology.window()).map_err(|e| {
        CliError::Config {
            path: Some("topology".into()),
            message: e.to_string(),
        }
    })?;
    println!(
        "connected over every window: horizon {horizon}, window {}",
        topology.window()
    );
    println!("eta = {eta}; theta = {}; beta = {}", cert.theta, cert.beta);

    let envelope_scan = horizon.min(500);
    let report = verify_geometric_rate(&topology, &weights, 0, envelope_scan).map_err(|e| {
        CliError::Config {
            path: Some("topology".into()),
            message: e.to_string(),
        }
    })?;
    println!(
        "geometric envelope over the first {envelope_scan} transition(s): worst ratio {:.6} ({})",
        report.worst_ratio,
        if report.holds() { "holds" } else { "exceeded" },
    );
    if !report.holds() {
        return Err(CliError::Check {
            message: format!(
                "the mixing deviation exceeded its geometric envelope: worst ratio {:.6}",
                report.worst_ratio
            ),
        });
    }
    Ok(())
}

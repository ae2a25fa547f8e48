//! Configuration files: a single TOML document describes a whole study.
//!
//! Loading goes through three stages. The raw text is parsed into a generic
//! TOML tree, dotted-path overrides are applied to that tree, and the merged
//! tree is serialized back into a canonical string. The canonical string is
//! what gets deserialized, echoed into summaries, and hashed into the config
//! digest, so a file and its echo always agree byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use netgrad::engine::{CheckConfig, CheckPolicy, InitialIterates, RecordConfig, SimConfig};
use netgrad::mixing::WeightSchedule;
use netgrad::problem::{Component, ConvexSet, Problem};
use netgrad::stochastic::{NoiseModel, StepsizeSchedule};
use netgrad::topology::{EdgeSet, TopologySchedule};
use serde::Deserialize;

use crate::CliError;

/// A parsed configuration document together with its canonical form.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: RunConfigFile,
    /// The merged document serialized canonically; echoed into summaries.
    pub canonical: String,
    /// FNV-1a hash of the canonical document, as 16 hex digits.
    pub digest: String,
}

/// The schema of a study configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub problem: ProblemSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub stepsize: StepsizeSchedule,
    pub engine: EngineSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// One objective component per agent.
    pub components: Vec<Component>,
    pub set: ConvexSet,
    /// Known optimum, when available; skips the grid-search reference.
    #[serde(default)]
    pub optimum: Option<OptimumSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimumSection {
    pub value: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySection {
    /// The same links at every transition.
    Fixed {
        links: Vec<(usize, usize)>,
        #[serde(default = "default_window")]
        window: usize,
    },
    /// Link rounds cycled in order; the window defaults to one full cycle.
    Periodic {
        rounds: Vec<Vec<(usize, usize)>>,
        #[serde(default)]
        window: Option<usize>,
    },
    /// Each link fires independently per transition. The schedule is part of
    /// the environment: every replica sees the same link sequence, keyed by
    /// `seed` (the engine seed when omitted).
    Random {
        activation: f64,
        window: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_window() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default)]
    pub rule: WeightRuleName,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRuleName {
    #[default]
    Metropolis,
    EqualNeighbor,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub horizon: usize,
    pub seed: u64,
    /// Independent replicas; above one the run aggregates across them.
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Record metrics every `thin` transitions.
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub record_states: bool,
    /// Explicit starting iterates, one row per agent; omitted means each
    /// agent samples a feasible start keyed by the seed.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
}

fn default_replicas() -> u64 {
    1
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub policy: CheckPolicy,
    pub feasibility: bool,
    pub displacement_bound: bool,
    pub disagreement_bound: bool,
}

impl Default for ChecksSection {
    fn default() -> Self {
        let base = CheckConfig::default();
        Self {
            policy: base.policy,
            feasibility: base.feasibility,
            displacement_bound: base.displacement_bound,
            disagreement_bound: base.disagreement_bound,
        }
    }
}

impl From<ChecksSection> for CheckConfig {
    fn from(s: ChecksSection) -> Self {
        Self {
            policy: s.policy,
            feasibility: s.feasibility,
            displacement_bound: s.displacement_bound,
            disagreement_bound: s.disagreement_bound,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<TraceFormat>,
    /// Stem of the written files; defaults to "run".
    #[serde(default)]
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Csv,
    Json,
}

/// Inputs for the guarantee reports; everything here is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Declared minimizer of the global objective.
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
    /// Declared optimal value; computed from `x_star` when omitted.
    #[serde(default)]
    pub f_star: Option<f64>,
    /// Accuracy target for the stopping-rule block.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Transition counts sampled along the finite-time curve.
    #[serde(default)]
    pub curve: Option<Vec<u64>>,
}

/// Reads a configuration file, applies `key=value` overrides, and validates
/// the result. Overrides are dotted table paths into the document, for
/// example `stepsize.alpha=0.05`; values are parsed as TOML literals and
/// fall back to strings.
pub fn load(path: &Path, sets: &[String]) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    load_str(&text, sets)
}

/// [`load`] on in-memory text; the unit of all parsing tests.
pub fn load_str(text: &str, sets: &[String]) -> Result<LoadedConfig, CliError> {
    let mut tree: toml::Value = toml::from_str(text).map_err(|e| CliError::Config {
        path: None,
        message: format!("invalid TOML: {e}"),
    })?;
    for set in sets {
        apply_set(&mut tree, set)?;
    }
    check_keys(&tree)?;
    let canonical = toml::to_string(&tree).map_err(|e| CliError::Config {
        path: None,
        message: format!("cannot canonicalize the document: {e}"),
    })?;
    let file: RunConfigFile = toml::from_str(&canonical).map_err(|e| CliError::Config {
        path: None,
        message: e.to_string(),
    })?;
    file.validate()?;
    let digest = digest(canonical.as_bytes());
    Ok(LoadedConfig {
        file,
        canonical,
        digest,
    })
}

/// FNV-1a over the canonical document: a stable fingerprint for summaries.
pub fn digest(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn apply_set(tree: &mut toml::Value, set: &str) -> Result<(), CliError> {
    let Some((key, raw)) = set.split_once('=') else {
        return Err(CliError::Config {
            path: None,
            message: format!("override `{set}` is not of the form key=value"),
        });
    };
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|part| part.is_empty()) {
        return Err(CliError::Config {
            path: None,
            message: format!("override `{set}` has an empty key segment"),
        });
    }
    let value = parse_literal(raw.trim());
    let mut node = tree;
    let mut walked = String::new();
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        let table = node.as_table_mut().ok_or_else(|| CliError::Config {
            path: Some(walked.clone()),
            message: "the existing value is not a table".into(),
        })?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("the key has at least one segment");
}

/// Parses an override value as a TOML literal (number, bool, array, ...),
/// falling back to a plain string so `--set output.prefix=tuned` works
/// without quoting.
fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Value>(&wrapped) {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("the key v was just parsed"),
        _ => toml::Value::String(raw.to_string()),
    }
}

/// Allowed keys per `kind` tag of a tagged table.
type TaggedSchema = &'static [(&'static str, &'static [&'static str])];

const SET_SCHEMA: TaggedSchema = &[
    ("box", &["lower", "upper"]),
    ("ball", &["center", "radius"]),
    ("simplex", &["dim"]),
    ("halfspace", &["normal", "offset"]),
    ("all", &["dim"]),
];

const COMPONENT_SCHEMA: TaggedSchema = &[
    ("quadratic", &["center"]),
    ("weighted_quadratic", &["center", "weights"]),
    ("abs_deviation", &["center"]),
    ("hinge", &["normal", "offset"]),
];

const NOISE_SCHEMA: TaggedSchema = &[
    ("none", &[]),
    ("gaussian", &["sigma"]),
    ("uniform_ball", &["radius"]),
    ("biased", &["bias", "decay", "sigma"]),
];

const STEPSIZE_SCHEMA: TaggedSchema = &[
    ("constant", &["alpha"]),
    ("harmonic", &["a", "b"]),
    ("power", &["a", "b", "p"]),
];

const TOPOLOGY_SCHEMA: TaggedSchema = &[
    ("fixed", &["links", "window"]),
    ("periodic", &["rounds", "window"]),
    ("random", &["activation", "window", "seed"]),
];

/// Rejects unknown keys everywhere in the document. Serde already rejects
/// them on plain structs, but tagged tables (noise, stepsize, ...) would
/// silently ignore extras, so the whole tree is screened up front and errors
/// name the full key path.
fn check_keys(tree: &toml::Value) -> Result<(), CliError> {
    let root = expect_table(tree, "the document root")?;
    for (key, value) in root {
        match key.as_str() {
            "problem" => {
                check_table(value, "problem", &["components", "set", "optimum"])?;
                let table = expect_table(value, "problem")?;
                if let Some(components) = table.get("components") {
                    let list = components.as_array().ok_or_else(|| {
                        unknown_key(
                            "problem.components",
                            "expected an array of component tables",
                        )
                    })?;
                    for (i, c) in list.iter().enumerate() {
                        check_tagged(c, &format!("problem.components[{i}]"), COMPONENT_SCHEMA)?;
                    }
                }
                if let Some(set) = table.get("set") {
                    check_tagged(set, "problem.set", SET_SCHEMA)?;
                }
                if let Some(opt) = table.get("optimum") {
                    check_table(opt, "problem.optimum", &["value", "point"])?;
                }
            }
            "topology" => check_tagged(value, "topology", TOPOLOGY_SCHEMA)?,
            "weights" => check_table(value, "weights", &["rule"])?,
            "noise" => check_tagged(value, "noise", NOISE_SCHEMA)?,
            "stepsize" => check_tagged(value, "stepsize", STEPSIZE_SCHEMA)?,
            "engine" => check_table(
                value,
                "engine",
                &[
                    "horizon",
                    "seed",
                    "replicas",
                    "thin",
                    "record_states",
                    "initial",
                ],
            )?,
            "checks" => check_table(
                value,
                "checks",
                &[
                    "policy",
                    "feasibility",
                    "displacement_bound",
                    "disagreement_bound",
                ],
            )?,
            "output" => check_table(value, "output", &["out_dir", "format", "prefix"])?,
            "bounds" => check_table(value, "bounds", &["x_star", "f_star", "epsilon", "curve"])?,
            other => {
                return Err(unknown_key(other, "not a recognized section"));
            }
        }
    }
    Ok(())
}

fn expect_table<'a>(
    value: &'a toml::Value,
    what: &str,
) -> Result<&'a toml::map::Map<String, toml::Value>, CliError> {
    value.as_table().ok_or_else(|| CliError::Config {
        path: Some(what.to_string()),
        message: "expected a table".into(),
    })
}

fn check_table(value: &toml::Value, path: &str, allowed: &[&str]) -> Result<(), CliError> {
    let table = expect_table(value, path)?;
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            let mut hint = String::from("expected one of");
            for (i, k) in allowed.iter().enumerate() {
                let _ = write!(hint, "{} `{k}`", if i == 0 { "" } else { "," });
            }
            return Err(unknown_key(&format!("{path}.{key}"), hint.trim()));
        }
    }
    Ok(())
}

fn check_tagged(value: &toml::Value, path: &str, schema: TaggedSchema) -> Result<(), CliError> {
    let table = expect_table(value, path)?;
    let Some(kind) = table.get("kind").and_then(|k| k.as_str()) else {
        return Err(CliError::Config {
            path: Some(format!("{path}.kind")),
            message: "every tagged table needs a string `kind`".into(),
        });
    };
    let Some((_, allowed)) = schema.iter().find(|(k, _)| *k == kind) else {
        let names: Vec<&str> = schema.iter().map(|(k, _)| *k).collect();
        return Err(CliError::Config {
            path: Some(format!("{path}.kind")),
            message: format!("unknown kind `{kind}`, expected one of {names:?}"),
        });
    };
    for key in table.keys() {
        if key != "kind" && !allowed.contains(&key.as_str()) {
            return Err(unknown_key(
                &format!("{path}.{key}"),
                &format!("not a field of kind `{kind}`"),
            ));
        }
    }
    Ok(())
}

fn unknown_key(path: &str, hint: &str) -> CliError {
    CliError::Config {
        path: Some(path.to_string()),
        message: format!("unknown key; {hint}"),
    }
}

impl RunConfigFile {
    /// Semantic validation beyond the schema; errors name the failing key.
    pub fn validate(&self) -> Result<(), CliError> {
        for (i, c) in self.problem.components.iter().enumerate() {
            c.validate().map_err(|e| CliError::Config {
                path: Some(format!("problem.components[{i}]")),
                message: e.to_string(),
            })?;
        }
        self.problem.set.validate().map_err(|e| CliError::Config {
            path: Some("problem.set".into()),
            message: e.to_string(),
        })?;
        self.stepsize.validate().map_err(|e| {
            use netgrad::stochastic::StochasticError;
            let path = match &e {
                StochasticError::BadStepsizeParameter { name, .. } => {
                    format!("stepsize.{name}")
                }
                _ => "stepsize".into(),
            };
            CliError::Config {
                path: Some(path),
                message: e.to_string(),
            }
        })?;
        if self.engine.horizon == 0 {
            return Err(CliError::Config {
                path: Some("engine.horizon".into()),
                message: "at least one transition is needed".into(),
            });
        }
        if self.engine.replicas == 0 {
            return Err(CliError::Config {
                path: Some("engine.replicas".into()),
                message: "at least one replica is needed".into(),
            });
        }
        if let Some(initial) = &self.engine.initial {
            if initial.len() != self.problem.components.len() {
                return Err(CliError::Config {
                    path: Some("engine.initial".into()),
                    message: format!(
                        "{} starting rows for {} agents",
                        initial.len(),
                        self.problem.components.len()
                    ),
                });
            }
        }
        if let Some(eps) = self.bounds.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(CliError::Config {
                    path: Some("bounds.epsilon".into()),
                    message: "the accuracy target must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.problem.components.len()
    }

    /// Builds the optimization problem of the document.
    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let problem = Problem::new(self.problem.components.clone(), self.problem.set.clone())
            .map_err(|e| CliError::Config {
                path: Some("problem".into()),
                message: e.to_string(),
            })?;
        match &self.problem.optimum {
            Some(opt) => problem
                .with_optimum(opt.value, opt.point.clone())
                .map_err(|e| CliError::Config {
                    path: Some("problem.optimum".into()),
                    message: e.to_string(),
                }),
            None => Ok(problem),
        }
    }

    /// Builds the communication schedule. Connectivity is deliberately not
    /// enforced here: the engine scans the whole horizon before running and
    /// a disconnected window is reported as a check failure, not a parse
    /// error.
    pub fn build_topology(&self) -> Result<TopologySchedule, CliError> {
        let m = self.num_agents();
        let at = |message: String| CliError::Config {
            path: Some("topology".into()),
            message,
        };
        match &self.topology {
            TopologySection::Fixed { links, window } => {
                let edges =
                    EdgeSet::from_links(m, links.iter().copied()).map_err(|e| at(e.to_string()))?;
                TopologySchedule::fixed_unchecked(edges, *window).map_err(|e| at(e.to_string()))
            }
            TopologySection::Periodic { rounds, window } => {
                let sets = rounds
                    .iter()
                    .map(|links| EdgeSet::from_links(m, links.iter().copied()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| at(e.to_string()))?;
                let window = window.unwrap_or(rounds.len());
                TopologySchedule::periodic_unchecked(sets, window).map_err(|e| at(e.to_string()))
            }
            TopologySection::Random {
                activation,
                window,
                seed,
            } => {
                TopologySchedule::random(m, *activation, *window, seed.unwrap_or(self.engine.seed))
                    .map_err(|e| at(e.to_string()))
            }
        }
    }

    pub fn build_weights(&self) -> WeightSchedule {
        match self.weights.rule {
            WeightRuleName::Metropolis => WeightSchedule::metropolis(),
            WeightRuleName::EqualNeighbor => WeightSchedule::equal_neighbor(),
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise.clone().unwrap_or(NoiseModel::None)
    }

    /// Assembles the full simulation configuration.
    pub fn build(&self) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            problem: self.build_problem()?,
            topology: self.build_topology()?,
            weights: self.build_weights(),
            noise: self.noise_model(),
            stepsize: self.stepsize,
            horizon: self.engine.horizon,
            initial: match &self.engine.initial {
                Some(iterates) => InitialIterates::Explicit {
                    iterates: iterates.clone(),
                },
                None => InitialIterates::Sampled,
            },
            seed: self.engine.seed,
            checks: self.checks.into(),
            record: RecordConfig {
                thin: self.engine.thin,
                record_states: self.engine.record_states,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const BASE: &str = r#"
        [problem]
        components = [
            { kind = "quadratic", center = [-2.0] },
            { kind = "quadratic", center = [0.0] },
            { kind = "quadratic", center = [2.0] },
        ]
        set = { kind = "box", lower = [-1.0], upper = [1.0] }

        [topology]
        kind = "fixed"
        links = [[0, 1], [1, 2]]

        [stepsize]
        kind = "harmonic"
        a = 1.0
        b = 10.0

        [engine]
        horizon = 50
        seed = 7
    "#;

    #[test]
    fn the_base_document_loads_with_defaults() {
        let loaded = load_str(BASE, &[]).unwrap();
        assert_eq!(loaded.file.num_agents(), 3);
        assert_eq!(loaded.file.engine.replicas, 1);
        assert_eq!(loaded.file.engine.thin, 1);
        assert!(loaded.file.noise.is_none());
        assert_eq!(loaded.file.weights.rule, WeightRuleName::Metropolis);
        assert_eq!(loaded.digest.len(), 16);
        let config = loaded.file.build().unwrap();
        assert_eq!(config.horizon, 50);
        assert_eq!(config.problem.num_agents(), 3);
    }

    #[test]
    fn overrides_reach_nested_keys_and_create_missing_tables() {
        let sets = vec![
            "engine.horizon=80".to_string(),
            "noise.kind=gaussian".to_string(),
            "noise.sigma=0.25".to_string(),
            "output.prefix=tuned".to_string(),
        ];
        let loaded = load_str(BASE, &sets).unwrap();
        assert_eq!(loaded.file.engine.horizon, 80);
        assert_eq!(
            loaded.file.noise,
            Some(NoiseModel::Gaussian { sigma: 0.25 })
        );
        assert_eq!(loaded.file.output.prefix.as_deref(), Some("tuned"));
    }

    #[test]
    fn bad_overrides_are_rejected_with_their_key() {
        let err = load_str(BASE, &["engine.horizon".to_string()]).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");
        let err = load_str(BASE, &["engine..horizon=3".to_string()]).unwrap_err();
        assert!(err.to_string().contains("empty key segment"), "{err}");
        let err = load_str(BASE, &["engine.horizon.deep=3".to_string()]).unwrap_err();
        assert!(err.to_string().contains("engine.horizon"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named_in_full() {
        let doc = format!("{BASE}\n[extra]\nx = 1\n");
        let err = load_str(&doc, &[]).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");

        let err = load_str(BASE, &["stepsize.alpha=0.1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("stepsize.alpha"), "{err}");

        let err = load_str(BASE, &["engine.horizons=9".to_string()]).unwrap_err();
        assert!(err.to_string().contains("engine.horizons"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_failing_key_path() {
        let err = load_str(BASE, &["stepsize.a=-1.0".to_string()]).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("stepsize.a"), "{text}");

        let err = load_str(BASE, &["engine.replicas=0".to_string()]).unwrap_err();
        assert!(err.to_string().contains("engine.replicas"), "{err}");

        let err = load_str(BASE, &["bounds.epsilon=-0.5".to_string()]).unwrap_err();
        assert!(err.to_string().contains("bounds.epsilon"), "{err}");
    }

    #[test]
    fn the_canonical_echo_is_a_fixed_point() {
        let loaded = load_str(BASE, &["engine.seed=9".to_string()]).unwrap();
        let reloaded = load_str(&loaded.canonical, &[]).unwrap();
        assert_eq!(loaded.canonical, reloaded.canonical);
        assert_eq!(loaded.digest, reloaded.digest);
    }

    #[test]
    fn literal_overrides_keep_their_types() {
        let loaded = load_str(
            BASE,
            &[
                "engine.record_states=true".to_string(),
                "bounds.curve=[10, 100]".to_string(),
            ],
        )
        .unwrap();
        assert!(loaded.file.engine.record_states);
        assert_eq!(loaded.file.bounds.curve, Some(vec![10, 100]));
    }

    proptest! {
        /// Overriding a numeric engine key always round-trips through the
        /// canonical echo: reloading the echo reproduces digest and value.
        #[test]
        fn overridden_documents_reload_identically(
            horizon in 1usize..10_000,
            seed in 0u64..1_000_000,
        ) {
            let sets = vec![
                format!("engine.horizon={horizon}"),
                format!("engine.seed={seed}"),
            ];
            let loaded = load_str(BASE, &sets).unwrap();
            prop_assert_eq!(loaded.file.engine.horizon, horizon);
            let again = load_str(&loaded.canonical, &[]).unwrap();
            prop_assert_eq!(loaded.digest, again.digest);
            prop_assert_eq!(again.file.engine.seed, seed);
        }
    }
}

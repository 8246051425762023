//! Experiment configuration: plain-text format, parsing, validation and
//! canonical serialization.
//!
//! The format is line-oriented `[section]` headers with `key = value`
//! pairs; `#` starts a comment. Parsing is not fail-fast: every syntax
//! error (with line number) and every semantic violation (with field
//! path) is reported. A serialized config parses back to an identical
//! resolved configuration, which is what makes the run manifest reusable
//! as a config file.

use std::fmt;
use std::path::PathBuf;

use crate::acquisition::StrategyKind;
use crate::al_loop::ScheduleConfig;
use crate::classifier::ClassifierConfig;
use crate::cohort::{CohortConfig, InterventionMap};
use crate::metrics::PolicyKind;

/// One configuration problem: a syntax error (line) or a semantic
/// violation (field path).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub path: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at_line(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            path: None,
            message: message.into(),
        }
    }

    fn at_path(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line: None,
            path: Some(path.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.path) {
            (Some(line), _) => write!(f, "line {line}: {}", self.message),
            (None, Some(path)) => write!(f, "{path}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Test-set construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub n_test_eyes: usize,
    pub fixed_size: usize,
    pub fixed_visit_min: u32,
    /// Inclusive upper visit of the fixed set; defaults to the last visit.
    pub fixed_visit_max: u32,
    pub dynamic_per_round: usize,
}

/// The full resolved experiment matrix configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cohort: CohortConfig,
    pub classifier: ClassifierConfig,
    pub schedule: ScheduleConfig,
    pub test: TestConfig,
    pub strategies: Vec<StrategyKind>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker cap for the replicate pool; 0 means one worker per core.
    pub jobs: usize,
}

/// Default per-class dynamics at a given dimension. Each class spirals
/// outward in its own two-axis plane (growing rotation plus drift), so
/// classes share the initial distribution, their separation grows with
/// the visit index, per-visit clusters relocate between visits, and late
/// visits sit far from the origin. Narrow feature spaces fall back to a
/// mirrored arc (one shared plane) or pure drift.
pub fn default_interventions(dim: usize) -> [InterventionMap; 2] {
    if dim >= 4 {
        [
            InterventionMap::rotation(dim, 0, 1, 30f64.to_radians(), 1.06)
                .with_offset(offset_axis(dim, 0, 0.5)),
            InterventionMap::rotation(dim, 2, 3, 30f64.to_radians(), 1.06)
                .with_offset(offset_axis(dim, 2, 0.5)),
        ]
    } else if dim >= 2 {
        [
            InterventionMap::rotation(dim, 0, 1, 4.5f64.to_radians(), 1.0)
                .with_offset(offset_axis(dim, 0, 0.25)),
            InterventionMap::rotation(dim, 0, 1, (-4.5f64).to_radians(), 1.0)
                .with_offset(offset_axis(dim, 0, -0.25)),
        ]
    } else {
        [
            InterventionMap::identity(dim).with_offset(vec![0.25]),
            InterventionMap::identity(dim).with_offset(vec![-0.25]),
        ]
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let feature_dim = 16;
        Self {
            cohort: CohortConfig {
                n_patients: 60,
                eyes_per_patient: 1,
                n_visits: 20,
                samples_per_visit: 10,
                feature_dim,
                interventions: default_interventions(feature_dim),
                obs_noise: 0.15,
                initial_dispersion: 1.0,
                rng_seed: 11,
            },
            classifier: ClassifierConfig {
                feature_dim,
                ..ClassifierConfig::default()
            },
            schedule: ScheduleConfig::default(),
            test: TestConfig {
                n_test_eyes: 20,
                fixed_size: 1000,
                fixed_visit_min: 1,
                fixed_visit_max: 20,
                dynamic_per_round: 40,
            },
            strategies: StrategyKind::ALL.to_vec(),
            policies: vec![PolicyKind::Retrospective, PolicyKind::Prospective],
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("results"),
            jobs: 0,
        }
    }
}

fn offset_axis(dim: usize, axis: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = value;
    v
}

/// Parses and validates a config text, reporting every violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut cfg = ExperimentConfig::default();
    // Pending values that need the resolved cohort to finish.
    let mut fixed_visit_max: Option<u32> = None;
    let mut class_maps: [Option<(usize, MapSpec)>; 2] = [None, None];
    let mut class_offsets: [Option<(usize, OffsetSpec)>; 2] = [None, None];

    let mut section = String::new();
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if KNOWN_SECTIONS.contains(&name) => section = name.to_string(),
                Some(name) => {
                    errors.push(ConfigError::at_line(
                        lineno,
                        format!("unknown section [{name}]"),
                    ));
                    section = name.to_string();
                }
                None => {
                    errors.push(ConfigError::at_line(lineno, "unterminated section header"));
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError::at_line(lineno, "expected `key = value`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        let path = format!("{section}.{key}");
        if seen.contains(&path) {
            errors.push(ConfigError::at_line(
                lineno,
                format!("duplicate key {path}"),
            ));
            continue;
        }
        seen.push(path.clone());

        let outcome = apply_key(
            &mut cfg,
            &section,
            key,
            value,
            lineno,
            &mut fixed_visit_max,
            &mut class_maps,
            &mut class_offsets,
        );
        if let Err(e) = outcome {
            errors.push(e);
        }
    }

    // Resolution: pieces that depend on other keys.
    let dim = cfg.cohort.feature_dim;
    cfg.classifier.feature_dim = dim;
    cfg.test.fixed_visit_max = fixed_visit_max.unwrap_or(cfg.cohort.n_visits as u32);
    if cfg.test.fixed_visit_max > cfg.cohort.n_visits as u32 {
        errors.push(ConfigError::at_path(
            "test.fixed_visit_max",
            format!("exceeds cohort visits {}", cfg.cohort.n_visits),
        ));
    }
    // Changing feature_dim rebuilds the default dynamics at the new
    // dimension; explicit specs then overwrite per class. An explicit map
    // resets the class offset to zero unless an offset is also given.
    if dim >= 1 && cfg.cohort.interventions.iter().any(|m| m.dim != dim) {
        cfg.cohort.interventions = default_interventions(dim);
    }
    for class in 0..2 {
        if let Some((line, spec)) = class_maps[class].take() {
            match spec.build(dim) {
                Ok(map) => cfg.cohort.interventions[class] = map,
                Err(msg) => errors.push(ConfigError {
                    line: Some(line),
                    path: Some(format!("cohort.class{class}.map")),
                    message: msg,
                }),
            }
        }
        if let Some((line, spec)) = class_offsets[class].take() {
            match spec.build(dim) {
                Ok(offset) => cfg.cohort.interventions[class].offset = offset,
                Err(msg) => errors.push(ConfigError {
                    line: Some(line),
                    path: Some(format!("cohort.class{class}.offset")),
                    message: msg,
                }),
            }
        }
    }

    errors.extend(validate_config(&cfg));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

const KNOWN_SECTIONS: [&str; 8] = [
    "cohort",
    "cohort.class0",
    "cohort.class1",
    "classifier",
    "schedule",
    "test",
    "experiment",
    "engine",
];

enum MapSpec {
    Identity,
    Scale(f64),
    Diag(Vec<f64>),
    Rotation {
        i: usize,
        j: usize,
        degrees: f64,
        scale: f64,
    },
    Rows(Vec<Vec<f64>>),
}

impl MapSpec {
    fn parse(value: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = value.split_whitespace().collect();
        let number = |t: &str| t.parse::<f64>().map_err(|_| format!("bad number: {t}"));
        match tokens.as_slice() {
            ["identity"] => Ok(MapSpec::Identity),
            ["scale", s] => Ok(MapSpec::Scale(number(s)?)),
            ["diag", rest @ ..] if !rest.is_empty() => Ok(MapSpec::Diag(
                rest.iter().map(|t| number(t)).collect::<Result<_, _>>()?,
            )),
            ["rotation", i, j, deg] | ["rotation", i, j, deg, _] => {
                let parse_axis = |t: &str| t.parse::<usize>().map_err(|_| format!("bad axis: {t}"));
                let scale = if tokens.len() == 5 {
                    number(tokens[4])?
                } else {
                    1.0
                };
                Ok(MapSpec::Rotation {
                    i: parse_axis(i)?,
                    j: parse_axis(j)?,
                    degrees: number(deg)?,
                    scale,
                })
            }
            ["rows", ..] => {
                let body = value.trim_start_matches("rows").trim();
                let rows: Result<Vec<Vec<f64>>, String> = body
                    .split(';')
                    .map(|row| {
                        row.split_whitespace()
                            .map(number)
                            .collect::<Result<Vec<f64>, _>>()
                    })
                    .collect();
                Ok(MapSpec::Rows(rows?))
            }
            _ => Err(format!(
                "expected `identity`, `scale S`, `diag V..`, `rotation I J DEG [SCALE]` \
                 or `rows R11 R12 .. ; R21 ..`, got `{value}`"
            )),
        }
    }

    fn build(self, dim: usize) -> Result<InterventionMap, String> {
        match self {
            MapSpec::Identity => Ok(InterventionMap::identity(dim)),
            MapSpec::Scale(s) => Ok(InterventionMap::uniform_scale(dim, s)),
            MapSpec::Diag(d) => {
                if d.len() != dim {
                    return Err(format!(
                        "diag has {} entries, feature_dim is {dim}",
                        d.len()
                    ));
                }
                Ok(InterventionMap::diagonal(&d))
            }
            MapSpec::Rotation {
                i,
                j,
                degrees,
                scale,
            } => {
                if i >= dim || j >= dim || i == j {
                    return Err(format!(
                        "rotation axes {i},{j} invalid for feature_dim {dim}"
                    ));
                }
                Ok(InterventionMap::rotation(
                    dim,
                    i,
                    j,
                    degrees.to_radians(),
                    scale,
                ))
            }
            MapSpec::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(format!("rows must form a {dim}x{dim} matrix"));
                }
                Ok(InterventionMap::from_rows(rows))
            }
        }
    }
}

enum OffsetSpec {
    Zero,
    Fill(f64),
    Axis(usize, f64),
    Vec(Vec<f64>),
}

impl OffsetSpec {
    fn parse(value: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = value.split_whitespace().collect();
        let number = |t: &str| t.parse::<f64>().map_err(|_| format!("bad number: {t}"));
        match tokens.as_slice() {
            ["zero"] => Ok(OffsetSpec::Zero),
            ["fill", x] => Ok(OffsetSpec::Fill(number(x)?)),
            ["axis", i, x] => Ok(OffsetSpec::Axis(
                i.parse::<usize>().map_err(|_| format!("bad axis: {i}"))?,
                number(x)?,
            )),
            ["vec", rest @ ..] if !rest.is_empty() => Ok(OffsetSpec::Vec(
                rest.iter().map(|t| number(t)).collect::<Result<_, _>>()?,
            )),
            _ => Err(format!(
                "expected `zero`, `fill X`, `axis I X` or `vec V..`, got `{value}`"
            )),
        }
    }

    fn build(self, dim: usize) -> Result<Vec<f64>, String> {
        match self {
            OffsetSpec::Zero => Ok(vec![0.0; dim]),
            OffsetSpec::Fill(x) => Ok(vec![x; dim]),
            OffsetSpec::Axis(i, x) => {
                if i >= dim {
                    return Err(format!("axis {i} out of range for feature_dim {dim}"));
                }
                Ok(offset_axis(dim, i, x))
            }
            OffsetSpec::Vec(v) => {
                if v.len() != dim {
                    return Err(format!("vec has {} entries, feature_dim is {dim}", v.len()));
                }
                Ok(v)
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_key(
    cfg: &mut ExperimentConfig,
    section: &str,
    key: &str,
    value: &str,
    lineno: usize,
    fixed_visit_max: &mut Option<u32>,
    class_maps: &mut [Option<(usize, MapSpec)>; 2],
    class_offsets: &mut [Option<(usize, OffsetSpec)>; 2],
) -> Result<(), ConfigError> {
    let bad = |msg: String| ConfigError {
        line: Some(lineno),
        path: Some(format!("{section}.{key}")),
        message: msg,
    };
    macro_rules! parse_as {
        ($ty:ty) => {
            value
                .parse::<$ty>()
                .map_err(|_| bad(format!("cannot parse `{value}`")))
        };
    }

    match (section, key) {
        ("cohort", "patients") => cfg.cohort.n_patients = parse_as!(usize)?,
        ("cohort", "eyes_per_patient") => cfg.cohort.eyes_per_patient = parse_as!(usize)?,
        ("cohort", "visits") => cfg.cohort.n_visits = parse_as!(usize)?,
        ("cohort", "samples_per_visit") => cfg.cohort.samples_per_visit = parse_as!(usize)?,
        ("cohort", "feature_dim") => cfg.cohort.feature_dim = parse_as!(usize)?,
        ("cohort", "initial_dispersion") => cfg.cohort.initial_dispersion = parse_as!(f64)?,
        ("cohort", "obs_noise") => cfg.cohort.obs_noise = parse_as!(f64)?,
        ("cohort", "seed") => cfg.cohort.rng_seed = parse_as!(u64)?,
        ("cohort.class0", "map") => {
            class_maps[0] = Some((lineno, MapSpec::parse(value).map_err(bad)?))
        }
        ("cohort.class1", "map") => {
            class_maps[1] = Some((lineno, MapSpec::parse(value).map_err(bad)?))
        }
        ("cohort.class0", "offset") => {
            class_offsets[0] = Some((lineno, OffsetSpec::parse(value).map_err(bad)?))
        }
        ("cohort.class1", "offset") => {
            class_offsets[1] = Some((lineno, OffsetSpec::parse(value).map_err(bad)?))
        }
        ("classifier", "hidden_dim") => cfg.classifier.hidden_dim = parse_as!(usize)?,
        ("classifier", "learning_rate") => cfg.classifier.learning_rate = parse_as!(f64)?,
        ("classifier", "train_accuracy_threshold") => {
            cfg.classifier.train_accuracy_threshold = parse_as!(f64)?
        }
        ("classifier", "max_epochs") => cfg.classifier.max_epochs = parse_as!(u32)?,
        ("classifier", "batch_size") => cfg.classifier.batch_size = parse_as!(usize)?,
        ("classifier", "warm_start") => cfg.classifier.warm_start = parse_as!(bool)?,
        ("schedule", "initial_size") => cfg.schedule.initial_size = parse_as!(usize)?,
        ("schedule", "per_round_query") => cfg.schedule.per_round_query = parse_as!(usize)?,
        ("schedule", "rounds") => cfg.schedule.n_rounds = parse_as!(u32)?,
        ("schedule", "budget") => cfg.schedule.budget = parse_as!(usize)?,
        ("test", "test_eyes") => cfg.test.n_test_eyes = parse_as!(usize)?,
        ("test", "fixed_size") => cfg.test.fixed_size = parse_as!(usize)?,
        ("test", "fixed_visit_min") => cfg.test.fixed_visit_min = parse_as!(u32)?,
        ("test", "fixed_visit_max") => *fixed_visit_max = Some(parse_as!(u32)?),
        ("test", "dynamic_per_round") => cfg.test.dynamic_per_round = parse_as!(usize)?,
        ("experiment", "strategies") => {
            cfg.strategies = value
                .split_whitespace()
                .map(|t| t.parse::<StrategyKind>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_, _>>()?
        }
        ("experiment", "policies") => {
            cfg.policies = value
                .split_whitespace()
                .map(|t| t.parse::<PolicyKind>().map_err(bad))
                .collect::<Result<_, _>>()?
        }
        ("experiment", "seeds") => {
            cfg.seeds = value
                .split_whitespace()
                .map(|t| t.parse::<u64>().map_err(|_| bad(format!("bad seed: {t}"))))
                .collect::<Result<_, _>>()?
        }
        ("experiment", "output_dir") => cfg.output_dir = PathBuf::from(value),
        ("experiment", "jobs") => cfg.jobs = parse_as!(usize)?,
        ("engine", _) => {} // informational echo in manifests
        _ => {
            return Err(ConfigError::at_line(
                lineno,
                format!("unknown key {section}.{key}"),
            ))
        }
    }
    Ok(())
}

/// Semantic validation of a resolved config; returns every violation.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<ConfigError> {
    let mut errors = Vec::new();
    let mut check = |cond: bool, path: &str, msg: &str| {
        if !cond {
            errors.push(ConfigError::at_path(path, msg));
        }
    };

    check(
        cfg.cohort.n_patients >= 1,
        "cohort.patients",
        "must be >= 1",
    );
    check(
        (1..=2).contains(&cfg.cohort.eyes_per_patient),
        "cohort.eyes_per_patient",
        "must be 1 or 2",
    );
    check(cfg.cohort.n_visits >= 1, "cohort.visits", "must be >= 1");
    check(
        cfg.cohort.samples_per_visit >= 1,
        "cohort.samples_per_visit",
        "must be >= 1",
    );
    check(
        cfg.cohort.feature_dim >= 1,
        "cohort.feature_dim",
        "must be >= 1",
    );
    check(
        cfg.cohort.obs_noise.is_finite() && cfg.cohort.obs_noise >= 0.0,
        "cohort.obs_noise",
        "must be finite and >= 0",
    );
    check(
        cfg.cohort.initial_dispersion.is_finite() && cfg.cohort.initial_dispersion >= 0.0,
        "cohort.initial_dispersion",
        "must be finite and >= 0",
    );
    for class in 0..2 {
        let m = &cfg.cohort.interventions[class];
        let finite =
            m.matrix.iter().all(|v| v.is_finite()) && m.offset.iter().all(|v| v.is_finite());
        check(
            finite,
            &format!("cohort.class{class}.map"),
            "must be finite",
        );
    }

    check(
        cfg.classifier.hidden_dim >= 1,
        "classifier.hidden_dim",
        "must be >= 1",
    );
    check(
        cfg.classifier.learning_rate > 0.0 && cfg.classifier.learning_rate.is_finite(),
        "classifier.learning_rate",
        "must be > 0",
    );
    check(
        cfg.classifier.train_accuracy_threshold > 0.0
            && cfg.classifier.train_accuracy_threshold <= 1.0,
        "classifier.train_accuracy_threshold",
        "must be in (0, 1]",
    );
    check(
        cfg.classifier.max_epochs >= 1,
        "classifier.max_epochs",
        "must be >= 1",
    );
    check(
        cfg.classifier.batch_size >= 1,
        "classifier.batch_size",
        "must be >= 1",
    );

    check(
        cfg.schedule.per_round_query >= 1,
        "schedule.per_round_query",
        "must be >= 1",
    );
    check(
        cfg.schedule.n_rounds >= 1,
        "schedule.rounds",
        "must be >= 1",
    );
    check(
        cfg.schedule.budget >= cfg.schedule.initial_size,
        "schedule.budget",
        "must be >= schedule.initial_size",
    );

    check(
        cfg.test.n_test_eyes.is_multiple_of(2),
        "test.test_eyes",
        "must be even (class-balanced)",
    );
    check(
        cfg.test.fixed_size.is_multiple_of(2),
        "test.fixed_size",
        "must be even (class-balanced)",
    );
    check(
        cfg.test.fixed_visit_min >= 1 && cfg.test.fixed_visit_min <= cfg.test.fixed_visit_max,
        "test.fixed_visit_min",
        "must satisfy 1 <= min <= max",
    );

    check(
        !cfg.strategies.is_empty(),
        "experiment.strategies",
        "must be non-empty",
    );
    check(
        !cfg.policies.is_empty(),
        "experiment.policies",
        "must be non-empty",
    );
    check(
        !cfg.seeds.is_empty(),
        "experiment.seeds",
        "seeds must be non-empty",
    );
    let unique = |n: usize, list_len: usize| n == list_len;
    let mut s = cfg.strategies.clone();
    s.sort_unstable();
    s.dedup();
    check(
        unique(s.len(), cfg.strategies.len()),
        "experiment.strategies",
        "must be unique",
    );
    let mut p = cfg.policies.clone();
    p.sort_unstable();
    p.dedup();
    check(
        unique(p.len(), cfg.policies.len()),
        "experiment.policies",
        "must be unique",
    );
    let mut d = cfg.seeds.clone();
    d.sort_unstable();
    d.dedup();
    check(
        unique(d.len(), cfg.seeds.len()),
        "experiment.seeds",
        "must be unique",
    );

    errors
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical text form of a resolved config. `parse_config` of the output
/// yields an identical configuration.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("[cohort]\n");
    out.push_str(&format!("patients = {}\n", cfg.cohort.n_patients));
    out.push_str(&format!(
        "eyes_per_patient = {}\n",
        cfg.cohort.eyes_per_patient
    ));
    out.push_str(&format!("visits = {}\n", cfg.cohort.n_visits));
    out.push_str(&format!(
        "samples_per_visit = {}\n",
        cfg.cohort.samples_per_visit
    ));
    out.push_str(&format!("feature_dim = {}\n", cfg.cohort.feature_dim));
    out.push_str(&format!(
        "initial_dispersion = {}\n",
        cfg.cohort.initial_dispersion
    ));
    out.push_str(&format!("obs_noise = {}\n", cfg.cohort.obs_noise));
    out.push_str(&format!("seed = {}\n", cfg.cohort.rng_seed));
    for class in 0..2 {
        let m = &cfg.cohort.interventions[class];
        out.push_str(&format!("\n[cohort.class{class}]\n"));
        let rows: Vec<String> = m.matrix.chunks_exact(m.dim).map(join_f64).collect();
        out.push_str(&format!("map = rows {}\n", rows.join(" ; ")));
        out.push_str(&format!("offset = vec {}\n", join_f64(&m.offset)));
    }
    out.push_str("\n[classifier]\n");
    out.push_str(&format!("hidden_dim = {}\n", cfg.classifier.hidden_dim));
    out.push_str(&format!(
        "learning_rate = {}\n",
        cfg.classifier.learning_rate
    ));
    out.push_str(&format!(
        "train_accuracy_threshold = {}\n",
        cfg.classifier.train_accuracy_threshold
    ));
    out.push_str(&format!("max_epochs = {}\n", cfg.classifier.max_epochs));
    out.push_str(&format!("batch_size = {}\n", cfg.classifier.batch_size));
    out.push_str(&format!("warm_start = {}\n", cfg.classifier.warm_start));
    out.push_str("\n[schedule]\n");
    out.push_str(&format!("initial_size = {}\n", cfg.schedule.initial_size));
    out.push_str(&format!(
        "per_round_query = {}\n",
        cfg.schedule.per_round_query
    ));
    out.push_str(&format!("rounds = {}\n", cfg.schedule.n_rounds));
    out.push_str(&format!("budget = {}\n", cfg.schedule.budget));
    out.push_str("\n[test]\n");
    out.push_str(&format!("test_eyes = {}\n", cfg.test.n_test_eyes));
    out.push_str(&format!("fixed_size = {}\n", cfg.test.fixed_size));
    out.push_str(&format!("fixed_visit_min = {}\n", cfg.test.fixed_visit_min));
    out.push_str(&format!("fixed_visit_max = {}\n", cfg.test.fixed_visit_max));
    out.push_str(&format!(
        "dynamic_per_round = {}\n",
        cfg.test.dynamic_per_round
    ));
    out.push_str("\n[experiment]\n");
    out.push_str(&format!(
        "strategies = {}\n",
        cfg.strategies
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    out.push_str(&format!(
        "policies = {}\n",
        cfg.policies
            .iter()
            .map(|p| p.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    out.push_str(&format!(
        "seeds = {}\n",
        cfg.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    out.push_str(&format!("output_dir = {}\n", cfg.output_dir.display()));
    out.push_str(&format!("jobs = {}\n", cfg.jobs));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        assert!(validate_config(&cfg).is_empty());
        let text = serialize_config(&cfg);
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn empty_seeds_are_rejected_with_message() {
        let errors = parse_config("[experiment]\nseeds =\n").unwrap_err();
        assert!(errors
            .iter()
            .any(|e| e.message.contains("seeds must be non-empty")));
    }

    #[test]
    fn zero_batch_names_the_field_path() {
        let errors = parse_config("[schedule]\nper_round_query = 0\n").unwrap_err();
        assert!(errors
            .iter()
            .any(|e| e.path.as_deref() == Some("schedule.per_round_query")));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let errors = parse_config("[cohort]\npatients 60\nvisits = ten\n").unwrap_err();
        assert!(errors.iter().any(|e| e.line == Some(2)));
        assert!(errors.iter().any(|e| e.line == Some(3)));
    }

    #[test]
    fn all_violations_are_reported_not_just_the_first() {
        let text = "[schedule]\nper_round_query = 0\nrounds = 0\n";
        let errors = parse_config(text).unwrap_err();
        assert!(errors.len() >= 2);
    }

    #[test]
    fn unknown_keys_and_sections_are_flagged() {
        let errors = parse_config("[nope]\nx = 1\n[cohort]\nbananas = 2\n").unwrap_err();
        assert!(errors.iter().any(|e| e.message.contains("unknown section")));
        assert!(errors.iter().any(|e| e.message.contains("unknown key")));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let errors = parse_config("[cohort]\npatients = 3\npatients = 4\n").unwrap_err();
        assert!(errors.iter().any(|e| e.message.contains("duplicate key")));
    }

    #[test]
    fn intervention_specs_build_expected_maps() {
        let text = "\
[cohort]
feature_dim = 2

[cohort.class0]
map = diag 0.5 2
offset = axis 1 0.25

[cohort.class1]
map = rows 0 1 ; 1 0
offset = vec 0.1 0.2
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.cohort.interventions[0].matrix, vec![0.5, 0.0, 0.0, 2.0]);
        assert_eq!(cfg.cohort.interventions[0].offset, vec![0.0, 0.25]);
        assert_eq!(cfg.cohort.interventions[1].matrix, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(cfg.cohort.interventions[1].offset, vec![0.1, 0.2]);
    }

    #[test]
    fn map_dimension_mismatch_is_reported_with_path() {
        let text = "[cohort]\nfeature_dim = 3\n[cohort.class0]\nmap = diag 1 2\n";
        let errors = parse_config(text).unwrap_err();
        assert!(errors
            .iter()
            .any(|e| e.path.as_deref() == Some("cohort.class0.map")));
    }

    #[test]
    fn feature_dim_change_rebuilds_default_maps() {
        let cfg = parse_config("[cohort]\nfeature_dim = 4\n").unwrap();
        assert_eq!(cfg.cohort.interventions[0].dim, 4);
        assert_eq!(cfg.cohort.interventions[1].dim, 4);
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# top\n\n[cohort]\npatients = 7 # inline\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.cohort.n_patients, 7);
    }
}

//! Experiment matrix execution and result files.
//!
//! `run_matrix` executes every (seed, strategy, policy) arm of a config,
//! in parallel with a bounded worker pool, and writes four files to the
//! output directory:
//!
//! - `raw.csv` — one row per (seed, strategy, policy, round), sorted by
//!   that key. Every value is a pure function of the manifest, so two
//!   runs of the same manifest produce byte-identical files. The
//!   `wall_time_ms` column is part of the pinned schema but reported as
//!   `0` here; measured timings are in `timings.csv`.
//! - `aggregate.csv` — mean and standard error across seeds per
//!   (strategy, policy, round).
//! - `manifest.txt` — the full resolved config plus engine version;
//!   feeding it back through `run` reproduces `raw.csv` bit for bit.
//! - `timings.csv` — measured per-round wall time (not reproducible).
//!
//! Evaluation data is shared per seed: the split and both test sets
//! derive from the seed alone, so every strategy/policy arm of a seed is
//! scored on identical samples.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::acquisition::StrategyKind;
use crate::al_loop::{
    run_experiment, EvalContext, ExperimentSetup, ReplicateResult, VisibilityPolicy,
};
use crate::cohort::{generate_cohort, split_train_test, Cohort, CohortError, EyeSplit};
use crate::config::{serialize_config, validate_config, ConfigError, ExperimentConfig};
use crate::metrics::{
    build_fixed_test, extend_dynamic_test, DynamicTestSet, MetricsError, PolicyKind, RoundRecord,
};
use crate::rng;

/// Exact header of `raw.csv`.
pub const RAW_HEADER: &str = "seed,strategy,policy,round,train_size,train_acc_reached,\
fixed_acc,dynamic_acc,nfr_fixed,nfr_dynamic,nfr_fixed_count,future_fraction,wall_time_ms";

/// Header of `aggregate.csv`.
pub const AGGREGATE_HEADER: &str = "strategy,policy,round,n_seeds,train_size_mean,\
fixed_acc_mean,fixed_acc_se,dynamic_acc_mean,dynamic_acc_se,nfr_fixed_mean,nfr_fixed_se,\
nfr_dynamic_mean,nfr_dynamic_se,future_fraction_mean,future_fraction_se";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid config:\n{}", format_errors(.0))]
    InvalidConfig(Vec<ConfigError>),
    #[error("cohort generation failed: {0}")]
    Cohort(#[from] CohortError),
    #[error("evaluation set construction failed (seed {seed}): {source}")]
    Evaluation { seed: u64, source: MetricsError },
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("raw csv parse error at line {line}: {message}")]
    RawParse { line: usize, message: String },
}

fn format_errors(errors: &[ConfigError]) -> String {
    errors
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Outcome summary of one matrix run, including the in-memory arm
/// results for consumers that need more than the CSV projection (e.g.
/// per-round prediction vectors).
#[derive(Debug, Clone)]
pub struct MatrixSummary {
    pub out_dir: PathBuf,
    pub raw_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub manifest_path: PathBuf,
    pub timings_path: PathBuf,
    pub n_rows: usize,
    pub n_replicates: usize,
    /// Diagnostics of replicates that aborted early; their completed
    /// rounds are still in the raw rows.
    pub failures: Vec<String>,
    pub arms: Vec<ArmOutput>,
}

/// One arm's results, keyed for deterministic ordering.
struct ArmResult {
    seed: u64,
    strategy: StrategyKind,
    policy: PolicyKind,
    result: ReplicateResult,
}

/// Builds the split and evaluation sets for one experiment seed. These
/// derive from the seed alone (never the strategy or policy), so every
/// arm of a seed trains on the same split and is scored on the same
/// fixed and dynamic test samples.
pub fn eval_context_for_seed(
    cohort: &Cohort,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(EyeSplit, EvalContext), RunnerError> {
    let wrap = |source: MetricsError| RunnerError::Evaluation { seed, source };
    let split = split_train_test(cohort, config.test.n_test_eyes, rng::mix(seed, "split"))?;
    let mut fixed_rng = rng::stream(rng::mix(seed, "fixed_test"));
    let fixed = build_fixed_test(
        cohort,
        &split.test_eyes,
        config.test.fixed_size,
        config.test.fixed_visit_min,
        config.test.fixed_visit_max,
        &mut fixed_rng,
    )
    .map_err(wrap)?;
    let mut dynamic = DynamicTestSet::default();
    let mut dyn_rng = rng::stream(rng::mix(seed, "dynamic_test"));
    for round in 1..=config.schedule.n_rounds {
        extend_dynamic_test(
            &mut dynamic,
            round,
            cohort,
            &split.test_eyes,
            config.test.dynamic_per_round,
            &mut dyn_rng,
        )
        .map_err(wrap)?;
    }
    Ok((split, EvalContext { fixed, dynamic }))
}

/// Runs every arm of the matrix and returns the results sorted by
/// (seed, strategy, policy). Pure computation, no file output.
pub fn run_arms(config: &ExperimentConfig) -> Result<Vec<ArmOutput>, RunnerError> {
    let problems = validate_config(config);
    if !problems.is_empty() {
        return Err(RunnerError::InvalidConfig(problems));
    }
    let cohort = generate_cohort(&config.cohort)?;

    let mut contexts: Vec<(u64, EyeSplit, EvalContext)> = Vec::new();
    for &seed in &config.seeds {
        let (split, eval) = eval_context_for_seed(&cohort, config, seed)?;
        contexts.push((seed, split, eval));
    }

    let mut arms: Vec<(usize, StrategyKind, PolicyKind)> = Vec::new();
    for ctx_idx in 0..contexts.len() {
        for &strategy in &config.strategies {
            for &policy in &config.policies {
                arms.push((ctx_idx, strategy, policy));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .expect("worker pool");
    let mut results: Vec<ArmResult> = pool.install(|| {
        arms.par_iter()
            .map(|&(ctx_idx, strategy, policy)| {
                let (seed, ref split, ref eval) = contexts[ctx_idx];
                let replicate_seed = rng::mix2(seed, strategy.as_str(), policy.as_str());
                let setup = ExperimentSetup {
                    cohort: &cohort,
                    split,
                    eval,
                    schedule: &config.schedule,
                    classifier: &config.classifier,
                    strategy,
                    policy: VisibilityPolicy::for_replicate(
                        policy,
                        cohort.n_visits(),
                        replicate_seed,
                    ),
                    seed,
                    rng_seed: replicate_seed,
                };
                ArmResult {
                    seed,
                    strategy,
                    policy,
                    result: run_experiment(&setup),
                }
            })
            .collect()
    });

    results.sort_by_key(|a| (a.seed, a.strategy.as_str(), a.policy.as_str()));
    Ok(results
        .into_iter()
        .map(|a| ArmOutput {
            seed: a.seed,
            strategy: a.strategy,
            policy: a.policy,
            result: a.result,
        })
        .collect())
}

/// Results of one arm, exposed for in-process consumers (tests, custom
/// reports).
#[derive(Debug, Clone)]
pub struct ArmOutput {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub policy: PolicyKind,
    pub result: ReplicateResult,
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Formats one raw row (schema [`RAW_HEADER`]).
pub fn raw_row(record: &RoundRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},0",
        record.seed,
        record.strategy,
        record.policy,
        record.round,
        record.train_size,
        record.train_acc_reached,
        record.fixed_acc,
        record.dynamic_acc,
        fmt_opt_f64(record.nfr_fixed),
        fmt_opt_f64(record.nfr_dynamic),
        fmt_opt_usize(record.nfr_fixed_count),
        record.future_fraction,
    )
}

/// Renders the full raw CSV from sorted arm outputs.
pub fn raw_csv(arms: &[ArmOutput]) -> String {
    let mut out = String::from(RAW_HEADER);
    out.push('\n');
    for arm in arms {
        for record in &arm.result.records {
            out.push_str(&raw_row(record));
            out.push('\n');
        }
    }
    out
}

/// A raw row parsed back from CSV; only the fields aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub seed: u64,
    pub strategy: String,
    pub policy: String,
    pub round: u32,
    pub train_size: f64,
    pub fixed_acc: f64,
    pub dynamic_acc: f64,
    pub nfr_fixed: Option<f64>,
    pub nfr_dynamic: Option<f64>,
    pub future_fraction: f64,
}

/// Parses a raw CSV produced by [`raw_csv`].
pub fn parse_raw_csv(text: &str) -> Result<Vec<RawRow>, RunnerError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RAW_HEADER => {}
        _ => {
            return Err(RunnerError::RawParse {
                line: 1,
                message: "unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(RunnerError::RawParse {
                line: lineno,
                message: format!("expected 13 fields, got {}", fields.len()),
            });
        }
        let req = |i: usize| -> Result<f64, RunnerError> {
            fields[i].parse::<f64>().map_err(|_| RunnerError::RawParse {
                line: lineno,
                message: format!("bad number: {}", fields[i]),
            })
        };
        let opt = |i: usize| -> Result<Option<f64>, RunnerError> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        rows.push(RawRow {
            seed: req(0)? as u64,
            strategy: fields[1].to_string(),
            policy: fields[2].to_string(),
            round: req(3)? as u32,
            train_size: req(4)?,
            fixed_acc: req(6)?,
            dynamic_acc: req(7)?,
            nfr_fixed: opt(8)?,
            nfr_dynamic: opt(9)?,
            future_fraction: req(11)?,
        });
    }
    Ok(rows)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

fn fmt_mean_se(values: &[f64]) -> String {
    if values.is_empty() {
        return String::from(",");
    }
    let (mean, se) = mean_se(values);
    format!("{mean},{se}")
}

/// Renders the aggregate CSV (mean and standard error over seeds per
/// (strategy, policy, round)) from raw rows. Null flip rates (round 1)
/// aggregate over the seeds that reported a value; all-null groups emit
/// empty fields.
pub fn aggregate_csv(rows: &[RawRow]) -> String {
    let mut groups: BTreeMap<(String, String, u32), Vec<&RawRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.strategy.clone(), row.policy.clone(), row.round))
            .or_default()
            .push(row);
    }
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for ((strategy, policy, round), members) in groups {
        let collect = |f: &dyn Fn(&RawRow) -> Option<f64>| -> Vec<f64> {
            members.iter().filter_map(|r| f(r)).collect()
        };
        let train_size = collect(&|r| Some(r.train_size));
        let fixed = collect(&|r| Some(r.fixed_acc));
        let dynamic = collect(&|r| Some(r.dynamic_acc));
        let nfr_fixed = collect(&|r| r.nfr_fixed);
        let nfr_dynamic = collect(&|r| r.nfr_dynamic);
        let future = collect(&|r| Some(r.future_fraction));
        out.push_str(&format!(
            "{strategy},{policy},{round},{},{},{},{},{},{},{}\n",
            members.len(),
            mean_se(&train_size).0,
            fmt_mean_se(&fixed),
            fmt_mean_se(&dynamic),
            fmt_mean_se(&nfr_fixed),
            fmt_mean_se(&nfr_dynamic),
            fmt_mean_se(&future),
        ));
    }
    out
}

/// Renders the manifest: engine metadata as comments plus the canonical
/// serialized config.
pub fn manifest_text(config: &ExperimentConfig) -> String {
    format!(
        "# engine = proal {}\n# raw schema = {}\n\n{}",
        env!("CARGO_PKG_VERSION"),
        RAW_HEADER,
        serialize_config(config)
    )
}

fn timings_csv(arms: &[ArmOutput]) -> String {
    let mut out = String::from("seed,strategy,policy,round,wall_time_ms\n");
    for arm in arms {
        for (i, ms) in arm.result.round_times_ms.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{ms}\n",
                arm.seed,
                arm.strategy,
                arm.policy,
                i + 1
            ));
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunnerError> {
    let mut file = fs::File::create(path).map_err(|e| RunnerError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.write_all(contents.as_bytes())
        .map_err(|e| RunnerError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Executes the full matrix and writes `raw.csv`, `aggregate.csv`,
/// `manifest.txt` and `timings.csv` into the config's output directory.
pub fn run_matrix(config: &ExperimentConfig) -> Result<MatrixSummary, RunnerError> {
    let out_dir = config.output_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| RunnerError::Io {
        path: out_dir.clone(),
        message: e.to_string(),
    })?;

    let arms = run_arms(config)?;
    let raw = raw_csv(&arms);
    let rows = parse_raw_csv(&raw)?;
    let aggregate = aggregate_csv(&rows);

    let raw_path = out_dir.join("raw.csv");
    let aggregate_path = out_dir.join("aggregate.csv");
    let manifest_path = out_dir.join("manifest.txt");
    let timings_path = out_dir.join("timings.csv");
    write_file(&raw_path, &raw)?;
    write_file(&aggregate_path, &aggregate)?;
    write_file(&manifest_path, &manifest_text(config))?;
    write_file(&timings_path, &timings_csv(&arms))?;

    let failures: Vec<String> = arms
        .iter()
        .filter_map(|a| {
            a.result.failure.as_ref().map(|f| {
                format!(
                    "seed {} strategy {} policy {}: {f}",
                    a.seed, a.strategy, a.policy
                )
            })
        })
        .collect();
    if !failures.is_empty() {
        write_file(&out_dir.join("failures.txt"), &(failures.join("\n") + "\n"))?;
    }

    Ok(MatrixSummary {
        out_dir,
        raw_path,
        aggregate_path,
        manifest_path,
        timings_path,
        n_rows: rows.len(),
        n_replicates: arms.len(),
        failures,
        arms,
    })
}

/// Recomputes the aggregate CSV from an existing raw CSV file.
pub fn aggregate_from_raw(raw_path: &Path, out_path: &Path) -> Result<usize, RunnerError> {
    let text = fs::read_to_string(raw_path).map_err(|e| RunnerError::Io {
        path: raw_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rows = parse_raw_csv(&text)?;
    let aggregate = aggregate_csv(&rows);
    write_file(out_path, &aggregate)?;
    Ok(aggregate.lines().count() - 1)
}

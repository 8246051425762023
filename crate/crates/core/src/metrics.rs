//! Evaluation sets and per-round metrics.
//!
//! Two test views over the held-out eyes: a fixed, class-balanced set
//! spanning the whole visit range, and a dynamic set that grows by one
//! class-balanced visit slice per round. Metrics per round: accuracy on
//! both sets, the negative flip rate (predictions that changed from
//! correct to incorrect since the previous round) and the future-visit
//! fraction of the accumulated training set.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquisition::StrategyKind;
use crate::cohort::{Cohort, SampleId};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("fixed test size must be even, got {0}")]
    OddTestSize(usize),
    #[error("not enough test samples of class {class}: need {need}, have {have}")]
    InsufficientSamples { class: u8, need: usize, have: usize },
    #[error("prediction and label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("fixed-test visit range {min}..={max} is empty or out of cohort range")]
    BadVisitRange { min: u32, max: u32 },
}

/// Immutable class-balanced evaluation set drawn from test eyes across
/// the configured visit range.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTestSet {
    pub ids: Vec<SampleId>,
}

impl FixedTestSet {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Builds the fixed test set: `size / 2` samples per class, drawn
/// uniformly from the test eyes' samples within `visit_min..=visit_max`.
pub fn build_fixed_test(
    cohort: &Cohort,
    test_eyes: &BTreeSet<u32>,
    size: usize,
    visit_min: u32,
    visit_max: u32,
    rng: &mut ChaCha8Rng,
) -> Result<FixedTestSet, MetricsError> {
    if !size.is_multiple_of(2) {
        return Err(MetricsError::OddTestSize(size));
    }
    if visit_min < 1 || visit_min > visit_max || visit_max > cohort.n_visits() as u32 {
        return Err(MetricsError::BadVisitRange {
            min: visit_min,
            max: visit_max,
        });
    }
    let per_class = size / 2;
    let mut by_class: [Vec<SampleId>; 2] = [Vec::new(), Vec::new()];
    for id in cohort.samples_of_eyes(test_eyes) {
        let s = cohort.sample(id);
        if s.visit >= visit_min && s.visit <= visit_max {
            by_class[s.label as usize].push(id);
        }
    }
    let mut ids = Vec::with_capacity(size);
    for (class, pool) in by_class.iter().enumerate() {
        if pool.len() < per_class {
            return Err(MetricsError::InsufficientSamples {
                class: class as u8,
                need: per_class,
                have: pool.len(),
            });
        }
        ids.extend(rng::sample_without_replacement(pool, per_class, rng));
    }
    ids.sort_unstable();
    Ok(FixedTestSet { ids })
}

/// Evaluation set that grows by one class-balanced visit slice per round.
/// `slices[r - 1]` holds the samples added at round `r` (visit `r` data
/// from test eyes); the set evaluated at round `r` is the concatenation of
/// the first `r` slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicTestSet {
    pub slices: Vec<Vec<SampleId>>,
    /// Some slice was smaller than requested (not enough visit-r samples).
    pub shortfall: bool,
}

impl DynamicTestSet {
    /// Ids visible at round `round` (slices 1..=round), in slice order.
    pub fn ids_at_round(&self, round: u32) -> Vec<SampleId> {
        self.slices
            .iter()
            .take(round as usize)
            .flat_map(|s| s.iter().copied())
            .collect()
    }

    pub fn cumulative_len(&self, round: u32) -> usize {
        self.slices.iter().take(round as usize).map(Vec::len).sum()
    }
}

/// Appends the slice for `round`: `per_round / 2` samples per class from
/// test-eye data at visit `round`. Short classes shrink the slice to stay
/// balanced and set the shortfall flag; a visit beyond the cohort yields
/// an empty slice.
pub fn extend_dynamic_test(
    dts: &mut DynamicTestSet,
    round: u32,
    cohort: &Cohort,
    test_eyes: &BTreeSet<u32>,
    per_round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), MetricsError> {
    debug_assert_eq!(
        dts.slices.len() + 1,
        round as usize,
        "slices must be appended in order"
    );
    let mut slice = Vec::new();
    if round as usize <= cohort.n_visits() {
        let mut by_class: [Vec<SampleId>; 2] = [Vec::new(), Vec::new()];
        for &id in cohort.visit_bucket(round) {
            let s = cohort.sample(id);
            if test_eyes.contains(&s.eye_id) {
                by_class[s.label as usize].push(id);
            }
        }
        let want = per_round / 2;
        let take = want.min(by_class[0].len()).min(by_class[1].len());
        if take < want || !per_round.is_multiple_of(2) {
            dts.shortfall = true;
        }
        for pool in &by_class {
            slice.extend(rng::sample_without_replacement(pool, take, rng));
        }
        slice.sort_unstable();
    } else {
        dts.shortfall = true;
    }
    dts.slices.push(slice);
    Ok(())
}

/// Fraction of exact matches. An empty evaluation set scores 1.0 by
/// convention.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(
            predictions.len(),
            labels.len(),
        ));
    }
    if predictions.is_empty() {
        return Ok(1.0);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Negative flip rate between two prediction vectors over the same
/// samples, plus the raw flip count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfrResult {
    pub rate: f64,
    pub count: usize,
}

/// Counts predictions that changed from correct to incorrect, normalized
/// by the number of evaluated samples.
pub fn nfr(
    prev_predictions: &[u8],
    curr_predictions: &[u8],
    labels: &[u8],
) -> Result<NfrResult, MetricsError> {
    if prev_predictions.len() != curr_predictions.len() {
        return Err(MetricsError::LengthMismatch(
            prev_predictions.len(),
            curr_predictions.len(),
        ));
    }
    if prev_predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(
            prev_predictions.len(),
            labels.len(),
        ));
    }
    if labels.is_empty() {
        return Ok(NfrResult {
            rate: 0.0,
            count: 0,
        });
    }
    let count = prev_predictions
        .iter()
        .zip(curr_predictions)
        .zip(labels)
        .filter(|((prev, curr), label)| prev == label && curr != label)
        .count();
    Ok(NfrResult {
        rate: count as f64 / labels.len() as f64,
        count,
    })
}

/// Share of the accumulated training set drawn from visits later than the
/// current round.
pub fn future_fraction(train_tags: &BTreeMap<SampleId, u32>, round: u32, cohort: &Cohort) -> f64 {
    if train_tags.is_empty() {
        return 0.0;
    }
    let future = train_tags
        .keys()
        .filter(|&&id| cohort.visit_of(id) > round)
        .count();
    future as f64 / train_tags.len() as f64
}

/// Which acquisition-visibility policy produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Retrospective,
    Prospective,
    NonSequential,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::Retrospective,
        PolicyKind::Prospective,
        PolicyKind::NonSequential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Retrospective => "retrospective",
            PolicyKind::Prospective => "prospective",
            PolicyKind::NonSequential => "nonsequential",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrospective" => Ok(PolicyKind::Retrospective),
            "prospective" => Ok(PolicyKind::Prospective),
            "nonsequential" => Ok(PolicyKind::NonSequential),
            other => Err(format!(
                "unknown policy: {other} (expected retrospective|prospective|nonsequential)"
            )),
        }
    }
}

/// One row of the experiment record stream. Round 1 is the seed round, so
/// its flip rates are undefined and carried as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub policy: PolicyKind,
    pub round: u32,
    pub train_size: usize,
    pub train_acc_reached: bool,
    pub fixed_acc: f64,
    pub dynamic_acc: f64,
    pub nfr_fixed: Option<f64>,
    pub nfr_dynamic: Option<f64>,
    pub nfr_fixed_count: Option<usize>,
    pub future_fraction: f64,
}

//! Round orchestration for one experiment replicate.
//!
//! A replicate runs `n_rounds` rounds over a train split. Round 1 seeds
//! the labeled set with a uniform draw from the visible pool; each later
//! round applies the visibility policy, lets the query strategy pick a
//! batch from the visible candidates, moves it into the labeled set,
//! retrains the classifier and evaluates on both test sets.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquisition::{self, AcquisitionError, SelectionRequest, StrategyKind};
use crate::classifier::{self, ClassifierConfig, ClassifierError, ClassifierState, TrainOutcome};
use crate::cohort::{Cohort, EyeSplit, SampleId};
use crate::matrix::Matrix;
use crate::metrics::{
    accuracy, future_fraction, nfr, DynamicTestSet, FixedTestSet, PolicyKind, RoundRecord,
};
use crate::rng;

/// Acquisition-visibility policy: which part of the unlabeled pool a
/// strategy may see at round `r`.
#[derive(Debug, Clone, PartialEq)]
pub enum VisibilityPolicy {
    /// The whole pool, no temporal constraint.
    Retrospective,
    /// Visits up to the current round.
    Prospective,
    /// Visits whose position in the stored permutation is at most the
    /// current round (ablation: visit order scrambled once per replicate).
    NonSequential(Vec<u32>),
}

impl VisibilityPolicy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            VisibilityPolicy::Retrospective => PolicyKind::Retrospective,
            VisibilityPolicy::Prospective => PolicyKind::Prospective,
            VisibilityPolicy::NonSequential(_) => PolicyKind::NonSequential,
        }
    }

    /// Checks the non-sequential permutation is a bijection on `1..=D`.
    pub fn validate(&self, n_visits: usize) -> Result<(), LoopError> {
        if let VisibilityPolicy::NonSequential(perm) = self {
            let unique: BTreeSet<u32> = perm.iter().copied().collect();
            let expect: BTreeSet<u32> = (1..=n_visits as u32).collect();
            if unique != expect || perm.len() != n_visits {
                return Err(LoopError::BadPermutation { n_visits });
            }
        }
        Ok(())
    }

    fn admits(&self, visit: u32, round: u32) -> bool {
        match self {
            VisibilityPolicy::Retrospective => true,
            VisibilityPolicy::Prospective => visit <= round,
            VisibilityPolicy::NonSequential(perm) => {
                let horizon = (round as usize).min(perm.len());
                perm[..horizon].contains(&visit)
            }
        }
    }

    /// Materializes a policy for a replicate; the non-sequential visit
    /// permutation is drawn from the replicate's seed.
    pub fn for_replicate(kind: PolicyKind, n_visits: usize, seed: u64) -> VisibilityPolicy {
        match kind {
            PolicyKind::Retrospective => VisibilityPolicy::Retrospective,
            PolicyKind::Prospective => VisibilityPolicy::Prospective,
            PolicyKind::NonSequential => {
                let visits: Vec<u32> = (1..=n_visits as u32).collect();
                let mut stream = rng::stream(rng::mix(seed, "permutation"));
                let perm = rng::sample_without_replacement(&visits, n_visits, &mut stream);
                VisibilityPolicy::NonSequential(perm)
            }
        }
    }
}

/// Acquisition schedule: seed-round size, per-round query size, number of
/// rounds and the total labeling budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub initial_size: usize,
    pub per_round_query: usize,
    pub n_rounds: u32,
    pub budget: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // 128 + 19 * 256 = 4,992.
        Self {
            initial_size: 128,
            per_round_query: 256,
            n_rounds: 20,
            budget: 4992,
        }
    }
}

impl ScheduleConfig {
    /// The default schedule spends exactly its budget: initial size plus
    /// one query batch per remaining round.
    pub fn spends_budget_exactly(&self) -> bool {
        self.initial_size + (self.n_rounds as usize - 1) * self.per_round_query == self.budget
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LoopError {
    #[error("round {round} out of range 1..={n_rounds}")]
    RoundOutOfRange { round: u32, n_rounds: u32 },
    #[error("non-sequential permutation must be a bijection on 1..={n_visits}")]
    BadPermutation { n_visits: usize },
    #[error("initial size {need} exceeds the {have} visible candidates at round 1")]
    InitialSizeExceedsVisible { need: usize, have: usize },
    #[error("pool already initialized")]
    AlreadyInitialized,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
}

/// Labeled/unlabeled partition of the train split, with acquisition-round
/// tags and the visibility policy for the replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pool: BTreeSet<SampleId>,
    train: BTreeMap<SampleId, u32>,
    round: u32,
    policy: VisibilityPolicy,
}

impl PoolState {
    pub fn new(train_split_ids: &[SampleId], policy: VisibilityPolicy) -> Self {
        Self {
            pool: train_split_ids.iter().copied().collect(),
            train: BTreeMap::new(),
            round: 0,
            policy,
        }
    }

    pub fn policy(&self) -> &VisibilityPolicy {
        &self.policy
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn budget_used(&self) -> usize {
        self.train.len()
    }

    /// Labeled ids, ascending.
    pub fn train_ids(&self) -> Vec<SampleId> {
        self.train.keys().copied().collect()
    }

    pub fn train_tags(&self) -> &BTreeMap<SampleId, u32> {
        &self.train
    }

    fn acquire(&mut self, ids: &[SampleId], round: u32) {
        for &id in ids {
            let was_pooled = self.pool.remove(&id);
            debug_assert!(was_pooled, "selected id {id} was not in the pool");
            self.train.insert(id, round);
        }
        debug_assert!(self.pool.iter().all(|id| !self.train.contains_key(id)));
    }
}

/// The part of the unlabeled pool a strategy may see at round `round`.
pub fn visible_candidates(
    pool: &PoolState,
    cohort: &Cohort,
    round: u32,
    n_rounds: u32,
) -> Result<Vec<SampleId>, LoopError> {
    if round < 1 || round > n_rounds {
        return Err(LoopError::RoundOutOfRange { round, n_rounds });
    }
    Ok(pool
        .pool
        .iter()
        .copied()
        .filter(|&id| pool.policy.admits(cohort.visit_of(id), round))
        .collect())
}

/// Seeds the labeled set with `initial_size` uniform draws from the pool
/// visible at round 1 and marks round 1 consumed.
pub fn initialize(
    pool: &mut PoolState,
    cohort: &Cohort,
    schedule: &ScheduleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleId>, LoopError> {
    if !pool.train.is_empty() || pool.round != 0 {
        return Err(LoopError::AlreadyInitialized);
    }
    let visible = visible_candidates(pool, cohort, 1, schedule.n_rounds)?;
    if schedule.initial_size > visible.len() {
        return Err(LoopError::InitialSizeExceedsVisible {
            need: schedule.initial_size,
            have: visible.len(),
        });
    }
    let picked = rng::sample_without_replacement(&visible, schedule.initial_size, rng);
    pool.acquire(&picked, 1);
    pool.round = 1;
    Ok(picked)
}

/// What one query round did.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub selected: Vec<SampleId>,
    /// Fewer visible candidates than the requested batch.
    pub shortfall: bool,
    /// No visible candidates (or budget exhausted); nothing was acquired.
    pub skipped: bool,
}

/// Executes one query round (round >= 2): computes visible candidates,
/// obtains the model views the strategy needs, selects, and moves the
/// selection into the labeled set. An empty visible set yields a skipped
/// round, not an error. Retraining is the caller's next step.
pub fn run_round(
    pool: &mut PoolState,
    cohort: &Cohort,
    state: &ClassifierState,
    strategy: StrategyKind,
    schedule: &ScheduleConfig,
    round: u32,
    rng: &mut ChaCha8Rng,
) -> Result<RoundOutcome, LoopError> {
    if round < 2 || round > schedule.n_rounds {
        return Err(LoopError::RoundOutOfRange {
            round,
            n_rounds: schedule.n_rounds,
        });
    }
    let visible = visible_candidates(pool, cohort, round, schedule.n_rounds)?;
    let headroom = schedule.budget.saturating_sub(pool.budget_used());
    let batch = schedule.per_round_query.min(headroom);
    if visible.is_empty() || batch == 0 {
        pool.round = round;
        return Ok(RoundOutcome {
            selected: Vec::new(),
            shortfall: false,
            skipped: true,
        });
    }

    let features = cohort.feature_rows(&visible);
    let probs;
    let cand_emb;
    let labeled_emb;
    let grad_emb;
    let mut request = SelectionRequest {
        candidates: &visible,
        batch,
        probs: None,
        candidate_embeddings: None,
        labeled_embeddings: None,
        gradient_embeddings: None,
    };
    match strategy {
        StrategyKind::Random => {}
        StrategyKind::Entropy | StrategyKind::Margin | StrategyKind::LeastConfidence => {
            probs = classifier::predict_proba(state, &features)?;
            request.probs = Some(&probs);
        }
        StrategyKind::Coreset => {
            cand_emb = classifier::embed(state, &features)?;
            let labeled_ids = pool.train_ids();
            let labeled_features = cohort.feature_rows(&labeled_ids);
            labeled_emb = if labeled_features.is_empty() {
                Matrix::empty(state.hidden_dim)
            } else {
                classifier::embed(state, &labeled_features)?
            };
            request.candidate_embeddings = Some(&cand_emb);
            request.labeled_embeddings = Some(&labeled_emb);
        }
        StrategyKind::Badge => {
            grad_emb = classifier::gradient_embed(state, &features)?;
            request.gradient_embeddings = Some(&grad_emb);
        }
    }

    let outcome = acquisition::select(strategy, &request, rng)?;
    pool.acquire(&outcome.selected, round);
    pool.round = round;
    debug_assert!(pool.budget_used() <= schedule.budget);
    Ok(RoundOutcome {
        selected: outcome.selected,
        shortfall: outcome.shortfall,
        skipped: false,
    })
}

/// Test sets shared by every arm of one experiment seed, so policy and
/// strategy comparisons see identical evaluation data.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub fixed: FixedTestSet,
    pub dynamic: DynamicTestSet,
}

/// Inputs for one replicate.
pub struct ExperimentSetup<'a> {
    pub cohort: &'a Cohort,
    pub split: &'a EyeSplit,
    pub eval: &'a EvalContext,
    pub schedule: &'a ScheduleConfig,
    pub classifier: &'a ClassifierConfig,
    pub strategy: StrategyKind,
    pub policy: VisibilityPolicy,
    /// Experiment seed stamped on every output record.
    pub seed: u64,
    /// Basis for all replicate randomness. The matrix runner derives one
    /// per (seed, strategy, policy) arm so arms are independent; equal
    /// values reproduce identical selections.
    pub rng_seed: u64,
}

/// Everything one replicate produced. `failure` carries a diagnostic when
/// the replicate aborted early (e.g. divergent training); the records
/// gathered up to that point are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub records: Vec<RoundRecord>,
    /// Per-round predictions on the fixed test set.
    pub fixed_preds: Vec<Vec<u8>>,
    /// Per-round predictions on the dynamic test set (slices 1..=round).
    pub dynamic_preds: Vec<Vec<u8>>,
    pub skipped_rounds: Vec<u32>,
    pub round_times_ms: Vec<u64>,
    pub failure: Option<String>,
}

struct Evaluator<'a> {
    cohort: &'a Cohort,
    fixed_ids: &'a [SampleId],
    fixed_labels: Vec<u8>,
    dynamic: &'a DynamicTestSet,
}

impl<'a> Evaluator<'a> {
    fn new(cohort: &'a Cohort, eval: &'a EvalContext) -> Self {
        Self {
            cohort,
            fixed_ids: &eval.fixed.ids,
            fixed_labels: cohort.labels(&eval.fixed.ids),
            dynamic: &eval.dynamic,
        }
    }

    fn predictions(
        &self,
        state: &ClassifierState,
        round: u32,
    ) -> Result<(Vec<u8>, Vec<u8>), ClassifierError> {
        let fixed_rows = self.cohort.feature_rows(self.fixed_ids);
        let fixed = classifier::predictions(&classifier::predict_proba(state, &fixed_rows)?);
        let dyn_ids = self.dynamic.ids_at_round(round);
        let dyn_rows = self.cohort.feature_rows(&dyn_ids);
        let dynamic = classifier::predictions(&classifier::predict_proba(state, &dyn_rows)?);
        Ok((fixed, dynamic))
    }

    fn dynamic_labels(&self, round: u32) -> Vec<u8> {
        self.cohort.labels(&self.dynamic.ids_at_round(round))
    }
}

/// Runs a full replicate: initialization, rounds 2..=n_rounds, one record
/// per round. Deterministic given the setup (classifier weights, all
/// sampling and training randomness derive from `seed`).
pub fn run_experiment(setup: &ExperimentSetup<'_>) -> ReplicateResult {
    let mut result = ReplicateResult {
        records: Vec::with_capacity(setup.schedule.n_rounds as usize),
        fixed_preds: Vec::new(),
        dynamic_preds: Vec::new(),
        skipped_rounds: Vec::new(),
        round_times_ms: Vec::new(),
        failure: None,
    };
    if let Err(e) = setup.policy.validate(setup.cohort.n_visits()) {
        result.failure = Some(e.to_string());
        return result;
    }

    let mut rng_init = rng::stream(rng::mix(setup.rng_seed, "init"));
    let mut rng_select = rng::stream(rng::mix(setup.rng_seed, "select"));
    let mut rng_train = rng::stream(rng::mix(setup.rng_seed, "train"));
    let weights_seed = rng::mix(setup.rng_seed, "weights");

    let mut classifier_cfg = setup.classifier.clone();
    classifier_cfg.rng_seed = weights_seed;
    let mut state = ClassifierState::init(&classifier_cfg);

    let train_split = setup.cohort.samples_of_eyes(&setup.split.train_eyes);
    let mut pool = PoolState::new(&train_split, setup.policy.clone());
    let evaluator = Evaluator::new(setup.cohort, setup.eval);
    let policy_kind = setup.policy.kind();

    let mut last_reached = true;
    let train_on = |state: &mut ClassifierState,
                    pool: &PoolState,
                    round: u32,
                    rng: &mut ChaCha8Rng|
     -> Result<Option<TrainOutcome>, ClassifierError> {
        let ids = pool.train_ids();
        if ids.is_empty() {
            return Ok(None);
        }
        if !classifier_cfg.warm_start {
            let mut fresh_cfg = classifier_cfg.clone();
            fresh_cfg.rng_seed = rng::mix(weights_seed, &round.to_string());
            *state = ClassifierState::init(&fresh_cfg);
        }
        let features = setup.cohort.feature_rows(&ids);
        let labels = setup.cohort.labels(&ids);
        classifier::train(state, &features, &labels, &classifier_cfg, rng).map(Some)
    };

    for round in 1..=setup.schedule.n_rounds {
        let started = Instant::now();
        let step: Result<(), LoopError> = (|| {
            if round == 1 {
                initialize(&mut pool, setup.cohort, setup.schedule, &mut rng_init)?;
            } else {
                let outcome = run_round(
                    &mut pool,
                    setup.cohort,
                    &state,
                    setup.strategy,
                    setup.schedule,
                    round,
                    &mut rng_select,
                )?;
                if outcome.skipped {
                    result.skipped_rounds.push(round);
                }
            }
            if round == 1 || !result.skipped_rounds.contains(&round) {
                if let Some(outcome) = train_on(&mut state, &pool, round, &mut rng_train)? {
                    last_reached = outcome.reached_threshold;
                }
            }
            Ok(())
        })();
        if let Err(e) = step {
            result.failure = Some(format!("round {round}: {e}"));
            return result;
        }

        let (fixed_preds, dynamic_preds) = match evaluator.predictions(&state, round) {
            Ok(p) => p,
            Err(e) => {
                result.failure = Some(format!("round {round} evaluation: {e}"));
                return result;
            }
        };
        let fixed_acc = accuracy(&fixed_preds, &evaluator.fixed_labels)
            .expect("fixed predictions align with labels");
        let dynamic_labels = evaluator.dynamic_labels(round);
        let dynamic_acc = accuracy(&dynamic_preds, &dynamic_labels)
            .expect("dynamic predictions align with labels");

        let (nfr_fixed, nfr_fixed_count, nfr_dynamic) = if round == 1 {
            (None, None, None)
        } else {
            let prev_fixed = &result.fixed_preds[result.fixed_preds.len() - 1];
            let fixed_flips = nfr(prev_fixed, &fixed_preds, &evaluator.fixed_labels)
                .expect("fixed sets align across rounds");
            // Dynamic flips are counted over the slice intersection of the
            // two rounds: everything evaluated at round - 1.
            let prev_dynamic = &result.dynamic_preds[result.dynamic_preds.len() - 1];
            let shared = prev_dynamic.len();
            let dyn_flips = nfr(
                prev_dynamic,
                &dynamic_preds[..shared],
                &dynamic_labels[..shared],
            )
            .expect("dynamic prefix aligns across rounds");
            (
                Some(fixed_flips.rate),
                Some(fixed_flips.count),
                Some(dyn_flips.rate),
            )
        };

        result.records.push(RoundRecord {
            seed: setup.seed,
            strategy: setup.strategy,
            policy: policy_kind,
            round,
            train_size: pool.budget_used(),
            train_acc_reached: last_reached,
            fixed_acc,
            dynamic_acc,
            nfr_fixed,
            nfr_dynamic,
            nfr_fixed_count,
            future_fraction: future_fraction(pool.train_tags(), round, setup.cohort),
        });
        result.fixed_preds.push(fixed_preds);
        result.dynamic_preds.push(dynamic_preds);
        result
            .round_times_ms
            .push(started.elapsed().as_millis() as u64);

        debug_assert!(pool.budget_used() <= setup.schedule.budget);
        if policy_kind == PolicyKind::Prospective {
            debug_assert!(pool
                .train_tags()
                .iter()
                .all(|(&id, &tag)| setup.cohort.visit_of(id) <= tag));
        }
    }

    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, split_train_test, CohortConfig, InterventionMap};
    use crate::metrics::{build_fixed_test, extend_dynamic_test};

    fn small_cohort(n_visits: usize) -> (Cohort, EyeSplit) {
        let cfg = CohortConfig {
            n_patients: 10,
            eyes_per_patient: 1,
            n_visits,
            samples_per_visit: 6,
            feature_dim: 2,
            interventions: [
                InterventionMap::identity(2).with_offset(vec![0.3, 0.0]),
                InterventionMap::identity(2).with_offset(vec![-0.3, 0.0]),
            ],
            obs_noise: 0.2,
            initial_dispersion: 0.5,
            rng_seed: 31,
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let split = split_train_test(&cohort, 4, 7).unwrap();
        (cohort, split)
    }

    fn eval_context(cohort: &Cohort, split: &EyeSplit, rounds: u32) -> EvalContext {
        let mut rng_fixed = rng::stream(1);
        let fixed = build_fixed_test(
            cohort,
            &split.test_eyes,
            8,
            1,
            cohort.n_visits() as u32,
            &mut rng_fixed,
        )
        .unwrap();
        let mut dynamic = DynamicTestSet::default();
        let mut rng_dyn = rng::stream(2);
        for r in 1..=rounds {
            extend_dynamic_test(&mut dynamic, r, cohort, &split.test_eyes, 4, &mut rng_dyn)
                .unwrap();
        }
        EvalContext { fixed, dynamic }
    }

    fn quick_classifier() -> ClassifierConfig {
        ClassifierConfig {
            feature_dim: 2,
            hidden_dim: 8,
            learning_rate: 0.01,
            max_epochs: 50,
            batch_size: 16,
            ..ClassifierConfig::default()
        }
    }

    fn schedule(initial: usize, query: usize, rounds: u32) -> ScheduleConfig {
        ScheduleConfig {
            initial_size: initial,
            per_round_query: query,
            n_rounds: rounds,
            budget: initial + (rounds as usize - 1) * query,
        }
    }

    #[test]
    fn default_schedule_spends_its_budget_exactly() {
        let sched = ScheduleConfig::default();
        assert_eq!(sched.initial_size, 128);
        assert_eq!(sched.per_round_query, 256);
        assert_eq!(sched.n_rounds, 20);
        assert_eq!(sched.budget, 4992);
        assert!(sched.spends_budget_exactly());
    }

    #[test]
    fn prospective_round_one_sees_only_first_visit() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let pool = PoolState::new(&ids, VisibilityPolicy::Prospective);
        let visible = visible_candidates(&pool, &cohort, 1, 3).unwrap();
        assert!(!visible.is_empty());
        assert!(visible.iter().all(|&id| cohort.visit_of(id) == 1));
    }

    #[test]
    fn retrospective_sees_the_whole_pool() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let pool = PoolState::new(&ids, VisibilityPolicy::Retrospective);
        for round in 1..=3 {
            let visible = visible_candidates(&pool, &cohort, round, 3).unwrap();
            assert_eq!(visible.len(), ids.len());
        }
    }

    #[test]
    fn prospective_at_final_visit_matches_retrospective() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let retro = PoolState::new(&ids, VisibilityPolicy::Retrospective);
        let pro = PoolState::new(&ids, VisibilityPolicy::Prospective);
        assert_eq!(
            visible_candidates(&retro, &cohort, 3, 3).unwrap(),
            visible_candidates(&pro, &cohort, 3, 3).unwrap()
        );
    }

    #[test]
    fn nonsequential_follows_its_permutation() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let pool = PoolState::new(&ids, VisibilityPolicy::NonSequential(vec![2, 3, 1]));
        let visible = visible_candidates(&pool, &cohort, 1, 3).unwrap();
        assert!(visible.iter().all(|&id| cohort.visit_of(id) == 2));
        let visible2 = visible_candidates(&pool, &cohort, 2, 3).unwrap();
        assert!(visible2.iter().all(|&id| {
            let v = cohort.visit_of(id);
            v == 2 || v == 3
        }));
    }

    #[test]
    fn permutation_must_be_bijective() {
        let policy = VisibilityPolicy::NonSequential(vec![1, 1, 2]);
        assert!(policy.validate(3).is_err());
        let policy = VisibilityPolicy::NonSequential(vec![1, 2, 3]);
        assert!(policy.validate(3).is_ok());
    }

    #[test]
    fn round_out_of_range_is_rejected() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let pool = PoolState::new(&ids, VisibilityPolicy::Retrospective);
        assert!(matches!(
            visible_candidates(&pool, &cohort, 0, 3).unwrap_err(),
            LoopError::RoundOutOfRange { .. }
        ));
        assert!(matches!(
            visible_candidates(&pool, &cohort, 4, 3).unwrap_err(),
            LoopError::RoundOutOfRange { .. }
        ));
    }

    #[test]
    fn initialization_draws_from_round_one_visibility() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let mut pool = PoolState::new(&ids, VisibilityPolicy::Prospective);
        let sched = schedule(10, 5, 3);
        let mut stream = rng::stream(3);
        let picked = initialize(&mut pool, &cohort, &sched, &mut stream).unwrap();
        assert_eq!(picked.len(), 10);
        assert_eq!(pool.budget_used(), 10);
        assert!(picked.iter().all(|&id| cohort.visit_of(id) == 1));
        assert_eq!(pool.round(), 1);
    }

    #[test]
    fn initialization_with_zero_size_is_valid() {
        let (cohort, split) = small_cohort(3);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let mut pool = PoolState::new(&ids, VisibilityPolicy::Retrospective);
        let sched = schedule(0, 5, 3);
        let mut stream = rng::stream(3);
        initialize(&mut pool, &cohort, &sched, &mut stream).unwrap();
        assert_eq!(pool.budget_used(), 0);
    }

    #[test]
    fn initialization_fails_when_pool_is_too_small() {
        let (cohort, split) = small_cohort(2);
        let ids = cohort.samples_of_eyes(&split.train_eyes);
        let mut pool = PoolState::new(&ids, VisibilityPolicy::Prospective);
        // Visit 1 holds 6 train eyes x 6 samples = 36 < 50.
        let sched = schedule(50, 5, 2);
        let mut stream = rng::stream(3);
        assert!(matches!(
            initialize(&mut pool, &cohort, &sched, &mut stream).unwrap_err(),
            LoopError::InitialSizeExceedsVisible { need: 50, .. }
        ));
    }

    #[test]
    fn replicate_follows_the_budget_arithmetic() {
        let (cohort, split) = small_cohort(4);
        let eval = eval_context(&cohort, &split, 4);
        let sched = schedule(8, 10, 4);
        let setup = ExperimentSetup {
            cohort: &cohort,
            split: &split,
            eval: &eval,
            schedule: &sched,
            classifier: &quick_classifier(),
            strategy: StrategyKind::Random,
            policy: VisibilityPolicy::Retrospective,
            seed: 5,
            rng_seed: 5,
        };
        let result = run_experiment(&setup);
        assert!(result.failure.is_none(), "{:?}", result.failure);
        assert_eq!(result.records.len(), 4);
        for (i, rec) in result.records.iter().enumerate() {
            assert_eq!(rec.round, i as u32 + 1);
            assert_eq!(rec.train_size, 8 + 10 * i);
            assert!(rec.fixed_acc >= 0.0 && rec.fixed_acc <= 1.0);
        }
        assert_eq!(result.records[0].nfr_fixed, None);
        assert!(result.records[1].nfr_fixed.is_some());
    }

    #[test]
    fn prospective_never_trains_on_future_visits() {
        let (cohort, split) = small_cohort(4);
        let eval = eval_context(&cohort, &split, 4);
        let sched = schedule(8, 10, 4);
        for strategy in [
            StrategyKind::Entropy,
            StrategyKind::Coreset,
            StrategyKind::Badge,
        ] {
            let setup = ExperimentSetup {
                cohort: &cohort,
                split: &split,
                eval: &eval,
                schedule: &sched,
                classifier: &quick_classifier(),
                strategy,
                policy: VisibilityPolicy::Prospective,
                seed: 5,
                rng_seed: 5,
            };
            let result = run_experiment(&setup);
            assert!(result.failure.is_none(), "{:?}", result.failure);
            for rec in &result.records {
                assert_eq!(rec.future_fraction, 0.0, "{strategy} round {}", rec.round);
            }
        }
    }

    #[test]
    fn single_visit_policies_agree_for_every_strategy() {
        let (cohort, split) = small_cohort(1);
        let eval = eval_context(&cohort, &split, 3);
        let sched = schedule(6, 4, 3);
        for strategy in StrategyKind::ALL {
            let run = |policy: VisibilityPolicy| {
                let setup = ExperimentSetup {
                    cohort: &cohort,
                    split: &split,
                    eval: &eval,
                    schedule: &sched,
                    classifier: &quick_classifier(),
                    strategy,
                    policy,
                    seed: 11,
                    rng_seed: 11,
                };
                run_experiment(&setup)
            };
            let retro = run(VisibilityPolicy::Retrospective);
            let pro = run(VisibilityPolicy::Prospective);
            assert!(retro.failure.is_none() && pro.failure.is_none());
            for (a, b) in retro.records.iter().zip(&pro.records) {
                assert_eq!(a.train_size, b.train_size);
                assert_eq!(a.fixed_acc, b.fixed_acc, "{strategy}");
            }
            // Identical selections mean identical tagged train sets.
            assert_eq!(retro.fixed_preds, pro.fixed_preds);
        }
    }

    #[test]
    fn replicates_are_deterministic() {
        let (cohort, split) = small_cohort(3);
        let eval = eval_context(&cohort, &split, 3);
        let sched = schedule(8, 6, 3);
        let run = || {
            let setup = ExperimentSetup {
                cohort: &cohort,
                split: &split,
                eval: &eval,
                schedule: &sched,
                classifier: &quick_classifier(),
                strategy: StrategyKind::Badge,
                policy: VisibilityPolicy::Prospective,
                seed: 9,
                rng_seed: 9,
            };
            run_experiment(&setup)
        };
        let a = run();
        let b = run();
        assert_eq!(a.records, b.records);
        assert_eq!(a.fixed_preds, b.fixed_preds);
    }

    #[test]
    fn exhausted_pool_records_skipped_rounds() {
        let (cohort, split) = small_cohort(2);
        let eval = eval_context(&cohort, &split, 6);
        // Train pool is 6 eyes x 2 visits x 6 samples = 72; rounds ask for
        // far more than remains.
        let sched = ScheduleConfig {
            initial_size: 30,
            per_round_query: 30,
            n_rounds: 6,
            budget: 400,
        };
        let setup = ExperimentSetup {
            cohort: &cohort,
            split: &split,
            eval: &eval,
            schedule: &sched,
            classifier: &quick_classifier(),
            strategy: StrategyKind::Random,
            policy: VisibilityPolicy::Retrospective,
            seed: 2,
            rng_seed: 2,
        };
        let result = run_experiment(&setup);
        assert!(result.failure.is_none());
        assert_eq!(result.records.len(), 6);
        assert!(!result.skipped_rounds.is_empty());
        let last = result.records.last().unwrap();
        assert_eq!(last.train_size, 72);
    }

    #[test]
    fn cold_restart_mode_runs() {
        let (cohort, split) = small_cohort(3);
        let eval = eval_context(&cohort, &split, 3);
        let sched = schedule(8, 6, 3);
        let mut cfg = quick_classifier();
        cfg.warm_start = false;
        let setup = ExperimentSetup {
            cohort: &cohort,
            split: &split,
            eval: &eval,
            schedule: &sched,
            classifier: &cfg,
            strategy: StrategyKind::Margin,
            policy: VisibilityPolicy::Prospective,
            seed: 3,
            rng_seed: 3,
        };
        let result = run_experiment(&setup);
        assert!(result.failure.is_none(), "{:?}", result.failure);
        assert_eq!(result.records.len(), 3);
    }

    #[test]
    fn divergent_learning_rate_is_a_failed_replicate() {
        let (cohort, split) = small_cohort(3);
        let eval = eval_context(&cohort, &split, 3);
        let sched = schedule(8, 6, 3);
        let mut cfg = quick_classifier();
        cfg.learning_rate = 1e308;
        let setup = ExperimentSetup {
            cohort: &cohort,
            split: &split,
            eval: &eval,
            schedule: &sched,
            classifier: &cfg,
            strategy: StrategyKind::Random,
            policy: VisibilityPolicy::Retrospective,
            seed: 3,
            rng_seed: 3,
        };
        let result = run_experiment(&setup);
        assert!(result.failure.is_some());
    }
}

//! Batch query strategies.
//!
//! Six selectors over a visible candidate pool: random, three uncertainty
//! scores (entropy, margin, least confidence) ranked by [`select_top_b`],
//! greedy k-center over penultimate embeddings (coreset), and k-means++
//! seeding over gradient embeddings (badge). All are pure given their
//! inputs and an explicit RNG stream; ties break by ascending sample id.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::ProbMatrix;
use crate::cohort::SampleId;
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Random,
    Entropy,
    Margin,
    LeastConfidence,
    Coreset,
    Badge,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::Margin,
        StrategyKind::LeastConfidence,
        StrategyKind::Coreset,
        StrategyKind::Badge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Margin => "margin",
            StrategyKind::LeastConfidence => "leastconf",
            StrategyKind::Coreset => "coreset",
            StrategyKind::Badge => "badge",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = AcquisitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(StrategyKind::Random),
            "entropy" => Ok(StrategyKind::Entropy),
            "margin" => Ok(StrategyKind::Margin),
            "leastconf" => Ok(StrategyKind::LeastConfidence),
            "coreset" => Ok(StrategyKind::Coreset),
            "badge" => Ok(StrategyKind::Badge),
            other => Err(AcquisitionError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("unknown strategy: {0} (expected random|entropy|margin|leastconf|coreset|badge)")]
    UnknownStrategy(String),
    #[error("probability row {row} sums to {sum}, not 1 within 1e-6")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("probability matrix needs at least 2 classes")]
    TooFewClasses,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    EmbeddingDimMismatch(usize, usize),
    #[error("scores length {scores} does not match candidates length {candidates}")]
    ScoreLengthMismatch { scores: usize, candidates: usize },
    #[error("strategy {0} requires the {1} model view")]
    MissingView(StrategyKind, &'static str),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("candidate ids must be unique")]
    DuplicateCandidates,
}

/// Everything a strategy may need for one selection: the visible
/// candidates, the batch size, and the model views computed on them.
pub struct SelectionRequest<'a> {
    pub candidates: &'a [SampleId],
    pub batch: usize,
    /// Class probabilities per candidate (uncertainty strategies).
    pub probs: Option<&'a ProbMatrix>,
    /// Penultimate embeddings per candidate (coreset).
    pub candidate_embeddings: Option<&'a Matrix>,
    /// Penultimate embeddings of the labeled set (coreset anchors).
    pub labeled_embeddings: Option<&'a Matrix>,
    /// Gradient embeddings per candidate (badge).
    pub gradient_embeddings: Option<&'a Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub selected: Vec<SampleId>,
    /// True when fewer candidates than the requested batch were visible
    /// (the whole candidate set was selected).
    pub shortfall: bool,
}

fn check_row_stochastic(probs: &ProbMatrix) -> Result<(), AcquisitionError> {
    if probs.n_cols() < 2 {
        return Err(AcquisitionError::TooFewClasses);
    }
    for (i, row) in probs.rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(AcquisitionError::NotRowStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// Shannon entropy per row, natural log, with `0 ln 0 = 0`. Higher means
/// more uncertain, i.e. more preferred.
pub fn score_entropy(probs: &ProbMatrix) -> Result<Vec<f64>, AcquisitionError> {
    check_row_stochastic(probs)?;
    Ok(probs
        .rows()
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect())
}

/// Negated margin between the two largest class probabilities; the
/// smallest margin scores highest.
pub fn score_margin(probs: &ProbMatrix) -> Result<Vec<f64>, AcquisitionError> {
    check_row_stochastic(probs)?;
    Ok(probs
        .rows()
        .map(|row| {
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in row {
                if p > top {
                    second = top;
                    top = p;
                } else if p > second {
                    second = p;
                }
            }
            -(top - second)
        })
        .collect())
}

/// One minus the top class probability; the least confident prediction
/// scores highest.
pub fn score_least_confidence(probs: &ProbMatrix) -> Result<Vec<f64>, AcquisitionError> {
    check_row_stochastic(probs)?;
    Ok(probs
        .rows()
        .map(|row| 1.0 - row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// The `b` candidates with the largest scores; ties break by ascending
/// sample id. Returns all candidates when `b >= len`. Output is in
/// preference order.
pub fn select_top_b(
    scores: &[f64],
    candidates: &[SampleId],
    b: usize,
) -> Result<Vec<SampleId>, AcquisitionError> {
    if scores.len() != candidates.len() {
        return Err(AcquisitionError::ScoreLengthMismatch {
            scores: scores.len(),
            candidates: candidates.len(),
        });
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let prefer = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| candidates[*a].cmp(&candidates[*b]))
    };
    let b = b.min(order.len());
    if b == 0 {
        return Ok(Vec::new());
    }
    // Quickselect to isolate the top b, then order just that prefix.
    if b < order.len() {
        order.select_nth_unstable_by(b - 1, prefer);
        order.truncate(b);
    }
    order.sort_unstable_by(prefer);
    Ok(order.into_iter().map(|i| candidates[i]).collect())
}

/// Uniform sample of `b` candidates without replacement.
pub fn select_random(candidates: &[SampleId], b: usize, rng: &mut ChaCha8Rng) -> Vec<SampleId> {
    crate::rng::sample_without_replacement(candidates, b, rng)
}

/// Greedy k-center (farthest-first) in embedding space: repeatedly pick
/// the candidate maximizing its minimum distance to the labeled set plus
/// everything already selected. With no labeled anchors the first pick is
/// the candidate farthest from the candidate centroid.
pub fn select_coreset(
    labeled_embeddings: &Matrix,
    candidate_embeddings: &Matrix,
    candidates: &[SampleId],
    b: usize,
) -> Result<Vec<SampleId>, AcquisitionError> {
    if !labeled_embeddings.is_empty()
        && labeled_embeddings.n_cols() != candidate_embeddings.n_cols()
    {
        return Err(AcquisitionError::EmbeddingDimMismatch(
            labeled_embeddings.n_cols(),
            candidate_embeddings.n_cols(),
        ));
    }
    if candidate_embeddings.n_rows() != candidates.len() {
        return Err(AcquisitionError::ScoreLengthMismatch {
            scores: candidate_embeddings.n_rows(),
            candidates: candidates.len(),
        });
    }
    let n = candidates.len();
    let b = b.min(n);
    let mut selected = Vec::with_capacity(b);
    if b == 0 {
        return Ok(selected);
    }

    // Minimum squared distance from each candidate to the anchor set.
    let mut min_sq = vec![f64::INFINITY; n];
    if labeled_embeddings.is_empty() {
        let dim = candidate_embeddings.n_cols();
        let mut centroid = vec![0.0; dim];
        for row in candidate_embeddings.rows() {
            for (c, v) in centroid.iter_mut().zip(row) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }
        for (i, row) in candidate_embeddings.rows().enumerate() {
            min_sq[i] = squared_distance(row, &centroid);
        }
    } else {
        for (i, row) in candidate_embeddings.rows().enumerate() {
            for anchor in labeled_embeddings.rows() {
                let d = squared_distance(row, anchor);
                if d < min_sq[i] {
                    min_sq[i] = d;
                }
            }
        }
    }

    let mut taken = vec![false; n];
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(j) => {
                    if min_sq[i] > min_sq[j]
                        || (min_sq[i] == min_sq[j] && candidates[i] < candidates[j])
                    {
                        best = Some(i);
                    }
                }
            }
        }
        let pick = best.expect("candidates remain");
        taken[pick] = true;
        selected.push(candidates[pick]);
        let pick_row = candidate_embeddings.row(pick);
        for i in 0..n {
            if !taken[i] {
                let d = squared_distance(candidate_embeddings.row(i), pick_row);
                if d < min_sq[i] {
                    min_sq[i] = d;
                }
            }
        }
    }
    Ok(selected)
}

/// k-means++ seeding over gradient embeddings: the first pick is uniform,
/// each later pick is drawn with probability proportional to its squared
/// distance to the nearest already-picked point. The seeds themselves are
/// the batch. Zero remaining distance mass falls back to a uniform draw
/// over the unpicked candidates.
pub fn select_badge(
    gradient_embeddings: &Matrix,
    candidates: &[SampleId],
    b: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleId>, AcquisitionError> {
    if gradient_embeddings.n_rows() != candidates.len() {
        return Err(AcquisitionError::ScoreLengthMismatch {
            scores: gradient_embeddings.n_rows(),
            candidates: candidates.len(),
        });
    }
    let n = candidates.len();
    let b = b.min(n);
    let mut selected = Vec::with_capacity(b);
    if b == 0 {
        return Ok(selected);
    }

    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    taken[first] = true;
    selected.push(candidates[first]);

    let mut min_sq: Vec<f64> = gradient_embeddings
        .rows()
        .map(|row| squared_distance(row, gradient_embeddings.row(first)))
        .collect();

    while selected.len() < b {
        let total: f64 = min_sq
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(d, _)| d)
            .sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for i in 0..n {
                if taken[i] {
                    continue;
                }
                target -= min_sq[i];
                if target <= 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // Guard against accumulated rounding: fall back to the last
            // unpicked candidate.
            chosen.unwrap_or_else(|| (0..n).rev().find(|&i| !taken[i]).expect("unpicked remains"))
        } else {
            // All remaining candidates coincide with picked points.
            let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        taken[pick] = true;
        selected.push(candidates[pick]);
        let pick_row = gradient_embeddings.row(pick);
        for i in 0..n {
            if !taken[i] {
                let d = squared_distance(gradient_embeddings.row(i), pick_row);
                if d < min_sq[i] {
                    min_sq[i] = d;
                }
            }
        }
    }
    Ok(selected)
}

/// Dispatches one selection. `|selected| = min(b, |candidates|)`; a
/// shortfall (fewer candidates than requested) is flagged, not an error.
pub fn select(
    kind: StrategyKind,
    request: &SelectionRequest<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionOutcome, AcquisitionError> {
    if request.batch == 0 {
        return Err(AcquisitionError::ZeroBatch);
    }
    {
        let mut sorted: Vec<SampleId> = request.candidates.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != request.candidates.len() {
            return Err(AcquisitionError::DuplicateCandidates);
        }
    }
    let need_probs = || {
        request
            .probs
            .ok_or(AcquisitionError::MissingView(kind, "probability"))
    };
    let selected = match kind {
        StrategyKind::Random => select_random(request.candidates, request.batch, rng),
        StrategyKind::Entropy => select_top_b(
            &score_entropy(need_probs()?)?,
            request.candidates,
            request.batch,
        )?,
        StrategyKind::Margin => select_top_b(
            &score_margin(need_probs()?)?,
            request.candidates,
            request.batch,
        )?,
        StrategyKind::LeastConfidence => select_top_b(
            &score_least_confidence(need_probs()?)?,
            request.candidates,
            request.batch,
        )?,
        StrategyKind::Coreset => {
            let cand = request
                .candidate_embeddings
                .ok_or(AcquisitionError::MissingView(kind, "candidate embedding"))?;
            let labeled = request
                .labeled_embeddings
                .ok_or(AcquisitionError::MissingView(kind, "labeled embedding"))?;
            select_coreset(labeled, cand, request.candidates, request.batch)?
        }
        StrategyKind::Badge => {
            let grads = request
                .gradient_embeddings
                .ok_or(AcquisitionError::MissingView(kind, "gradient embedding"))?;
            select_badge(grads, request.candidates, request.batch, rng)?
        }
    };
    Ok(SelectionOutcome {
        shortfall: request.batch > request.candidates.len(),
        selected,
    })
}

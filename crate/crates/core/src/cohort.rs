//! Synthetic visit-structured cohort generator.
//!
//! A cohort is a set of eyes observed over `D` visits. Every eye carries a
//! latent state that starts from a shared initial distribution and is
//! advanced between visits by a class-specific affine map, so the two
//! classes drift apart as visits accumulate and the order in which visit
//! data becomes available carries real signal. Each visit deposits `K`
//! feature vectors per eye: the latent state plus isotropic observation
//! noise.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng;

/// Identifier of one sample (one feature-vector deposit). Dense: ids run
/// `0..cohort.len()` in (eye, visit, replicate) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId(pub u64);

impl SampleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One data deposit: identity, visit index and the observed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: SampleId,
    pub patient_id: u32,
    pub eye_id: u32,
    /// Visit index, 1-based.
    pub visit: u32,
    pub features: Vec<f64>,
    /// Class label, 0 or 1. Constant across all samples of one eye.
    pub label: u8,
}

/// Affine latent-state update applied between consecutive visits:
/// `z' = A z + b` with `A` row-major `dim x dim` and `b` of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionMap {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub dim: usize,
}

impl InterventionMap {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            matrix,
            offset: vec![0.0; dim],
            dim,
        }
    }

    pub fn uniform_scale(dim: usize, scale: f64) -> Self {
        let mut m = Self::identity(dim);
        for i in 0..dim {
            m.matrix[i * dim + i] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.matrix[i * diag.len() + i] = v;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let dim = rows.len();
        let mut matrix = Vec::with_capacity(dim * dim);
        for row in &rows {
            assert_eq!(row.len(), dim, "intervention matrix must be square");
            matrix.extend_from_slice(row);
        }
        Self {
            matrix,
            offset: vec![0.0; dim],
            dim,
        }
    }

    /// Identity everywhere except a scaled 2x2 rotation block on axes
    /// `(i, j)`; `angle` in radians.
    pub fn rotation(dim: usize, i: usize, j: usize, angle: f64, scale: f64) -> Self {
        assert!(
            i < dim && j < dim && i != j,
            "rotation axes must be distinct and in range"
        );
        let mut m = Self::identity(dim);
        let (s, c) = angle.sin_cos();
        m.matrix[i * dim + i] = scale * c;
        m.matrix[i * dim + j] = -scale * s;
        m.matrix[j * dim + i] = scale * s;
        m.matrix[j * dim + j] = scale * c;
        m
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        assert_eq!(offset.len(), self.dim, "offset length must match dimension");
        self.offset = offset;
        self
    }

    pub fn apply(&self, state: &[f64], out: &mut [f64]) {
        debug_assert_eq!(state.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            let mut acc = self.offset[i];
            for (a, z) in row.iter().zip(state) {
                acc += a * z;
            }
            *o = acc;
        }
    }

    fn is_finite(&self) -> bool {
        self.matrix.iter().all(|v| v.is_finite()) && self.offset.iter().all(|v| v.is_finite())
    }
}

/// Generator parameters for one synthetic trial.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Eyes enrolled per patient (1 or 2).
    pub eyes_per_patient: usize,
    /// Number of visits `D`; every eye completes all of them.
    pub n_visits: usize,
    /// Samples deposited per (eye, visit) pair.
    pub samples_per_visit: usize,
    pub feature_dim: usize,
    /// Per-class affine updates, indexed by label.
    pub interventions: [InterventionMap; 2],
    /// Scale of the i.i.d. Gaussian observation noise added per sample.
    pub obs_noise: f64,
    /// Standard deviation of the shared (class-independent) initial state.
    pub initial_dispersion: f64,
    pub rng_seed: u64,
}

impl CohortConfig {
    pub fn n_eyes(&self) -> usize {
        self.n_patients * self.eyes_per_patient
    }

    pub fn total_samples(&self) -> usize {
        self.n_eyes() * self.n_visits * self.samples_per_visit
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error(
        "cohort sizes must all be at least 1 (patients, visits, samples_per_visit, feature_dim)"
    )]
    EmptyDimension,
    #[error("eyes_per_patient must be 1 or 2, got {0}")]
    BadEyesPerPatient(usize),
    #[error("observation noise and dispersion must be finite and non-negative")]
    BadNoise,
    #[error("intervention parameters for class {0} contain non-finite values")]
    NonFiniteIntervention(u8),
    #[error("intervention for class {class} has dimension {got}, expected feature_dim {expected}")]
    DimensionMismatch {
        class: u8,
        got: usize,
        expected: usize,
    },
    #[error("n_test_eyes must be even, got {0}")]
    OddTestEyes(usize),
    #[error("not enough eyes of class {class}: need {need}, have {have}")]
    InsufficientEyes { class: u8, need: usize, have: usize },
    #[error("cohort csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error("cohort csv io error: {0}")]
    CsvIo(String),
}

/// The generated trial: all samples plus the per-visit partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    samples: Vec<Sample>,
    /// `per_visit[d - 1]` lists the sample ids deposited at visit `d`,
    /// ascending. The buckets partition `samples` exactly.
    per_visit: Vec<Vec<SampleId>>,
    n_eyes: usize,
    feature_dim: usize,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_visits(&self) -> usize {
        self.per_visit.len()
    }

    pub fn n_eyes(&self) -> usize {
        self.n_eyes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn sample(&self, id: SampleId) -> &Sample {
        &self.samples[id.index()]
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn visit_of(&self, id: SampleId) -> u32 {
        self.samples[id.index()].visit
    }

    pub fn label_of(&self, id: SampleId) -> u8 {
        self.samples[id.index()].label
    }

    pub fn features_of(&self, id: SampleId) -> &[f64] {
        &self.samples[id.index()].features
    }

    /// Sample ids at visit `d` (1-based), ascending.
    pub fn visit_bucket(&self, visit: u32) -> &[SampleId] {
        &self.per_visit[(visit - 1) as usize]
    }

    pub fn per_visit_index(&self) -> &[Vec<SampleId>] {
        &self.per_visit
    }

    /// All eye ids present, ascending.
    pub fn eye_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = Vec::with_capacity(self.n_eyes);
        let mut last = None;
        for s in &self.samples {
            if last != Some(s.eye_id) {
                ids.push(s.eye_id);
                last = Some(s.eye_id);
            }
        }
        ids
    }

    /// Class label of an eye (constant across its samples).
    pub fn eye_label(&self, eye_id: u32) -> u8 {
        self.samples
            .iter()
            .find(|s| s.eye_id == eye_id)
            .map(|s| s.label)
            .expect("unknown eye id")
    }

    /// All sample ids belonging to the given eyes, ascending.
    pub fn samples_of_eyes(&self, eyes: &BTreeSet<u32>) -> Vec<SampleId> {
        self.samples
            .iter()
            .filter(|s| eyes.contains(&s.eye_id))
            .map(|s| s.sample_id)
            .collect()
    }

    /// Feature slices for a batch of ids, in order.
    pub fn feature_rows(&self, ids: &[SampleId]) -> Vec<&[f64]> {
        ids.iter().map(|&id| self.features_of(id)).collect()
    }

    pub fn labels(&self, ids: &[SampleId]) -> Vec<u8> {
        ids.iter().map(|&id| self.label_of(id)).collect()
    }
}

/// Builds the synthetic trial described by `config`. Deterministic:
/// identical configs (including seed) produce bit-identical cohorts.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort, CohortError> {
    validate_config(config)?;

    let n_eyes = config.n_eyes();
    let d = config.n_visits;
    let k = config.samples_per_visit;
    let f = config.feature_dim;

    let mut rng = rng::stream(config.rng_seed);
    let normal = StandardNormal;

    let mut samples = Vec::with_capacity(config.total_samples());
    let mut per_visit: Vec<Vec<SampleId>> = vec![Vec::with_capacity(n_eyes * k); d];

    let mut state = vec![0.0; f];
    let mut next = vec![0.0; f];

    for eye_idx in 0..n_eyes {
        let eye_id = eye_idx as u32 + 1;
        let patient_id = (eye_idx / config.eyes_per_patient) as u32 + 1;
        // Alternating assignment keeps |class 0| - |class 1| in {0, 1}.
        let label = (eye_idx % 2) as u8;
        let intervention = &config.interventions[label as usize];

        for z in state.iter_mut() {
            let draw: f64 = normal.sample(&mut rng);
            *z = config.initial_dispersion * draw;
        }

        for visit in 1..=d as u32 {
            if visit > 1 {
                intervention.apply(&state, &mut next);
                std::mem::swap(&mut state, &mut next);
            }
            for rep in 0..k {
                let sample_id = SampleId((((eye_idx * d) + (visit as usize - 1)) * k + rep) as u64);
                let mut features = Vec::with_capacity(f);
                for &z in &state {
                    let noise: f64 = normal.sample(&mut rng);
                    features.push(z + config.obs_noise * noise);
                }
                per_visit[visit as usize - 1].push(sample_id);
                samples.push(Sample {
                    sample_id,
                    patient_id,
                    eye_id,
                    visit,
                    features,
                    label,
                });
            }
        }
    }

    for bucket in per_visit.iter_mut() {
        bucket.sort_unstable();
    }

    Ok(Cohort {
        samples,
        per_visit,
        n_eyes,
        feature_dim: f,
    })
}

fn validate_config(config: &CohortConfig) -> Result<(), CohortError> {
    if config.n_patients == 0
        || config.n_visits == 0
        || config.samples_per_visit == 0
        || config.feature_dim == 0
    {
        return Err(CohortError::EmptyDimension);
    }
    if config.eyes_per_patient == 0 || config.eyes_per_patient > 2 {
        return Err(CohortError::BadEyesPerPatient(config.eyes_per_patient));
    }
    if !config.obs_noise.is_finite()
        || config.obs_noise < 0.0
        || !config.initial_dispersion.is_finite()
        || config.initial_dispersion < 0.0
    {
        return Err(CohortError::BadNoise);
    }
    for (class, m) in config.interventions.iter().enumerate() {
        if m.dim != config.feature_dim {
            return Err(CohortError::DimensionMismatch {
                class: class as u8,
                got: m.dim,
                expected: config.feature_dim,
            });
        }
        if !m.is_finite() {
            return Err(CohortError::NonFiniteIntervention(class as u8));
        }
    }
    Ok(())
}

/// Eye-level train/test split. Test eyes never contribute samples to any
/// training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeSplit {
    pub train_eyes: BTreeSet<u32>,
    pub test_eyes: BTreeSet<u32>,
}

/// Draws a class-balanced test set of `n_test_eyes` eyes; everything else
/// trains. All samples of a test eye land on the test side.
pub fn split_train_test(
    cohort: &Cohort,
    n_test_eyes: usize,
    seed: u64,
) -> Result<EyeSplit, CohortError> {
    if !n_test_eyes.is_multiple_of(2) {
        return Err(CohortError::OddTestEyes(n_test_eyes));
    }
    let per_class = n_test_eyes / 2;

    let mut class_eyes: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    for eye in cohort.eye_ids() {
        class_eyes[cohort.eye_label(eye) as usize].push(eye);
    }
    for (class, eyes) in class_eyes.iter().enumerate() {
        if eyes.len() < per_class {
            return Err(CohortError::InsufficientEyes {
                class: class as u8,
                need: per_class,
                have: eyes.len(),
            });
        }
    }

    let mut rng = rng::stream(seed);
    let mut test_eyes = BTreeSet::new();
    for eyes in &class_eyes {
        for eye in rng::sample_without_replacement(eyes, per_class, &mut rng) {
            test_eyes.insert(eye);
        }
    }
    let train_eyes = cohort
        .eye_ids()
        .into_iter()
        .filter(|e| !test_eyes.contains(e))
        .collect();

    Ok(EyeSplit {
        train_eyes,
        test_eyes,
    })
}

/// Writes the cohort as CSV with header
/// `sample_id,patient_id,eye_id,visit,label,f_0..f_{F-1}`.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, mut out: W) -> Result<(), CohortError> {
    let io = |e: std::io::Error| CohortError::CsvIo(e.to_string());
    let mut header = String::from("sample_id,patient_id,eye_id,visit,label");
    for i in 0..cohort.feature_dim() {
        header.push_str(&format!(",f_{i}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for s in cohort.samples() {
        let mut line = format!(
            "{},{},{},{},{}",
            s.sample_id, s.patient_id, s.eye_id, s.visit, s.label
        );
        for v in &s.features {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Reads a cohort written by [`write_cohort_csv`], rebuilding the
/// per-visit index.
pub fn read_cohort_csv<R: BufRead>(input: R) -> Result<Cohort, CohortError> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CohortError::CsvParse {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.map_err(|e| CohortError::CsvIo(e.to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[..5] != ["sample_id", "patient_id", "eye_id", "visit", "label"] {
        return Err(CohortError::CsvParse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let feature_dim = cols.len() - 5;

    let mut samples: Vec<Sample> = Vec::new();
    let mut max_visit = 0u32;
    for (idx, line) in lines {
        let line = line.map_err(|e| CohortError::CsvIo(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        fn parse_field<T: std::str::FromStr>(
            field: &str,
            what: &str,
            lineno: usize,
        ) -> Result<T, CohortError> {
            field.parse::<T>().map_err(|_| CohortError::CsvParse {
                line: lineno,
                message: format!("bad {what}: {field}"),
            })
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + feature_dim {
            return Err(CohortError::CsvParse {
                line: lineno,
                message: format!("expected {} fields, got {}", 5 + feature_dim, fields.len()),
            });
        }
        let visit: u32 = parse_field(fields[3], "visit", lineno)?;
        if visit == 0 {
            return Err(CohortError::CsvParse {
                line: lineno,
                message: "visit must be >= 1".into(),
            });
        }
        max_visit = max_visit.max(visit);
        let mut features = Vec::with_capacity(feature_dim);
        for f in &fields[5..] {
            features.push(parse_field::<f64>(f, "feature", lineno)?);
        }
        let label: u8 = parse_field(fields[4], "label", lineno)?;
        if label > 1 {
            return Err(CohortError::CsvParse {
                line: lineno,
                message: format!("label must be 0 or 1, got {label}"),
            });
        }
        samples.push(Sample {
            sample_id: SampleId(parse_field(fields[0], "sample_id", lineno)?),
            patient_id: parse_field(fields[1], "patient_id", lineno)?,
            eye_id: parse_field(fields[2], "eye_id", lineno)?,
            visit,
            features,
            label,
        });
    }

    samples.sort_by_key(|s| s.sample_id);
    let n_eyes = samples
        .iter()
        .map(|s| s.eye_id)
        .collect::<BTreeSet<_>>()
        .len();
    let mut per_visit: Vec<Vec<SampleId>> = vec![Vec::new(); max_visit as usize];
    for s in &samples {
        per_visit[(s.visit - 1) as usize].push(s.sample_id);
    }
    Ok(Cohort {
        samples,
        per_visit,
        n_eyes,
        feature_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> CohortConfig {
        CohortConfig {
            n_patients: 8,
            eyes_per_patient: 1,
            n_visits: 4,
            samples_per_visit: 3,
            feature_dim: 2,
            interventions: [InterventionMap::identity(2), InterventionMap::identity(2)],
            obs_noise: 0.0,
            initial_dispersion: 1.0,
            rng_seed: 9,
        }
    }

    #[test]
    fn identity_intervention_freezes_state() {
        let cohort = generate_cohort(&base_config()).unwrap();
        for eye in cohort.eye_ids() {
            let eyes: BTreeSet<u32> = [eye].into();
            let ids = cohort.samples_of_eyes(&eyes);
            let first = cohort.features_of(ids[0]).to_vec();
            for id in ids {
                assert_eq!(cohort.features_of(id), &first[..]);
            }
        }
    }

    #[test]
    fn single_visit_cohort_has_one_bucket() {
        let mut cfg = base_config();
        cfg.n_visits = 1;
        let cohort = generate_cohort(&cfg).unwrap();
        assert_eq!(cohort.n_visits(), 1);
        assert_eq!(cohort.visit_bucket(1).len(), cohort.len());
    }

    #[test]
    fn offset_drift_separates_classes_exactly() {
        // A = I, b = (+0.1, 0) vs (-0.1, 0), no noise, no dispersion:
        // class-mean separation along axis 0 at visit d is 0.2 * (d - 1).
        let mut cfg = base_config();
        cfg.initial_dispersion = 0.0;
        cfg.interventions = [
            InterventionMap::identity(2).with_offset(vec![0.1, 0.0]),
            InterventionMap::identity(2).with_offset(vec![-0.1, 0.0]),
        ];
        cfg.n_visits = 6;
        let cohort = generate_cohort(&cfg).unwrap();

        for d in 1..=6u32 {
            let mut means = [[0.0f64; 2]; 2];
            let mut counts = [0usize; 2];
            for &id in cohort.visit_bucket(d) {
                let s = cohort.sample(id);
                means[s.label as usize][0] += s.features[0];
                means[s.label as usize][1] += s.features[1];
                counts[s.label as usize] += 1;
            }
            for c in 0..2 {
                means[c][0] /= counts[c] as f64;
                means[c][1] /= counts[c] as f64;
            }
            let sep =
                ((means[0][0] - means[1][0]).powi(2) + (means[0][1] - means[1][1]).powi(2)).sqrt();
            let expected = 0.2 * f64::from(d - 1);
            assert!(
                (sep - expected).abs() < 1e-12,
                "visit {d}: separation {sep} vs expected {expected}"
            );
        }
    }

    #[test]
    fn recurrence_replay_matches_visit_means() {
        // With zero observation noise, the per-visit mean of an eye equals
        // the replayed latent recurrence exactly.
        let mut cfg = base_config();
        cfg.obs_noise = 0.0;
        cfg.interventions = [
            InterventionMap::diagonal(&[0.9, 1.1]).with_offset(vec![0.05, -0.02]),
            InterventionMap::rotation(2, 0, 1, 0.3, 1.02).with_offset(vec![-0.01, 0.04]),
        ];
        let cohort = generate_cohort(&cfg).unwrap();

        for eye in cohort.eye_ids() {
            let eyes: BTreeSet<u32> = [eye].into();
            let ids = cohort.samples_of_eyes(&eyes);
            let label = cohort.eye_label(eye) as usize;
            let mut state = cohort.features_of(ids[0]).to_vec();
            let mut next = vec![0.0; 2];
            for d in 1..=cfg.n_visits as u32 {
                if d > 1 {
                    cfg.interventions[label].apply(&state, &mut next);
                    std::mem::swap(&mut state, &mut next);
                }
                for &id in ids.iter().filter(|&&id| cohort.visit_of(id) == d) {
                    let feats = cohort.features_of(id);
                    for (a, b) in feats.iter().zip(&state) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = base_config();
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_visit_index_partitions_samples() {
        let mut cfg = base_config();
        cfg.obs_noise = 0.2;
        let cohort = generate_cohort(&cfg).unwrap();
        let mut seen = BTreeSet::new();
        for bucket in cohort.per_visit_index() {
            assert_eq!(bucket.len(), cohort.n_eyes() * cfg.samples_per_visit);
            for &id in bucket {
                assert!(seen.insert(id), "sample {id} appears in two buckets");
            }
        }
        assert_eq!(seen.len(), cohort.len());
    }

    #[test]
    fn class_balance_favors_class_zero_by_at_most_one() {
        for n_patients in [7, 8, 9] {
            let mut cfg = base_config();
            cfg.n_patients = n_patients;
            let cohort = generate_cohort(&cfg).unwrap();
            let mut counts = [0i64; 2];
            for eye in cohort.eye_ids() {
                counts[cohort.eye_label(eye) as usize] += 1;
            }
            let diff = counts[0] - counts[1];
            assert!(
                diff == 0 || diff == 1,
                "imbalance {diff} for {n_patients} patients"
            );
        }
    }

    #[test]
    fn rejects_non_finite_interventions() {
        let mut cfg = base_config();
        cfg.interventions[1].offset[0] = f64::NAN;
        assert_eq!(
            generate_cohort(&cfg).unwrap_err(),
            CohortError::NonFiniteIntervention(1)
        );
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut cfg = base_config();
        cfg.interventions[0] = InterventionMap::identity(3);
        assert!(matches!(
            generate_cohort(&cfg).unwrap_err(),
            CohortError::DimensionMismatch {
                class: 0,
                got: 3,
                expected: 2
            }
        ));
    }

    #[test]
    fn split_is_balanced_and_disjoint() {
        let mut cfg = base_config();
        cfg.n_patients = 96;
        let cohort = generate_cohort(&cfg).unwrap();
        let split = split_train_test(&cohort, 20, 5).unwrap();
        assert_eq!(split.train_eyes.len(), 76);
        assert_eq!(split.test_eyes.len(), 20);
        let per_class = split
            .test_eyes
            .iter()
            .filter(|&&e| cohort.eye_label(e) == 0)
            .count();
        assert_eq!(per_class, 10);
        assert!(split.train_eyes.is_disjoint(&split.test_eyes));
    }

    #[test]
    fn split_with_zero_test_eyes_keeps_everything_in_train() {
        let cohort = generate_cohort(&base_config()).unwrap();
        let split = split_train_test(&cohort, 0, 5).unwrap();
        assert!(split.test_eyes.is_empty());
        assert_eq!(split.train_eyes.len(), cohort.n_eyes());
    }

    #[test]
    fn split_rejects_odd_and_oversized_requests() {
        let cohort = generate_cohort(&base_config()).unwrap();
        assert_eq!(
            split_train_test(&cohort, 3, 5).unwrap_err(),
            CohortError::OddTestEyes(3)
        );
        assert!(matches!(
            split_train_test(&cohort, 10, 5).unwrap_err(),
            CohortError::InsufficientEyes { .. }
        ));
    }

    #[test]
    fn csv_round_trip_preserves_cohort() {
        let mut cfg = base_config();
        cfg.obs_noise = 0.3;
        let cohort = generate_cohort(&cfg).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        let parsed = read_cohort_csv(&buf[..]).unwrap();
        assert_eq!(parsed, cohort);
    }

    #[test]
    fn csv_import_rejects_malformed_rows() {
        let header = "sample_id,patient_id,eye_id,visit,label,f_0";
        let cases = [
            ("0,1,1,1,1", "expected 6 fields"),        // missing feature
            ("0,1,1,0,1,0.5", "visit must be >= 1"),   // zero visit
            ("0,1,1,1,2,0.5", "label must be 0 or 1"), // bad label
            ("0.5,1,1,1,1,0.5", "bad sample_id"),      // fractional id
            ("0,1,1,1,1,abc", "bad feature"),          // unparsable float
        ];
        for (row, expected) in cases {
            let text = format!("{header}\n{row}\n");
            let err = read_cohort_csv(text.as_bytes()).unwrap_err();
            match err {
                CohortError::CsvParse { line: 2, message } => {
                    assert!(message.contains(expected), "{message} vs {expected}")
                }
                other => panic!("unexpected error: {other}"),
            }
        }
    }
}

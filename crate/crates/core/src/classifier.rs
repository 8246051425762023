//! Trainable probabilistic classifier.
//!
//! A one-hidden-layer network (input -> ReLU hidden -> linear logits ->
//! softmax) trained with Adam on cross-entropy until a training-accuracy
//! threshold is met or an epoch cap is hit. Besides class probabilities it
//! exposes the two views the batch query strategies consume: penultimate
//! (hidden) embeddings and last-layer gradient embeddings.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub learning_rate: f64,
    /// Training stops once training accuracy reaches this threshold.
    pub train_accuracy_threshold: f64,
    pub max_epochs: u32,
    pub batch_size: usize,
    /// Continue each round from the previous round's weights instead of
    /// re-initializing. Off by default: fresh training per round makes the
    /// round-20 comparison reflect what was acquired rather than the
    /// optimizer's path through earlier rounds.
    pub warm_start: bool,
    pub rng_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            hidden_dim: 32,
            n_classes: 2,
            learning_rate: 0.00015,
            train_accuracy_threshold: 0.97,
            max_epochs: 500,
            batch_size: 64,
            warm_start: false,
            rng_seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.n_classes < 2 {
            return Err(ClassifierError::BadConfig(
                "feature_dim, hidden_dim must be >= 1 and n_classes >= 2".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::BadConfig(
                "learning_rate must be > 0".into(),
            ));
        }
        if !(self.train_accuracy_threshold > 0.0 && self.train_accuracy_threshold <= 1.0) {
            return Err(ClassifierError::BadConfig(
                "train_accuracy_threshold must be in (0, 1]".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::BadConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    BadConfig(String),
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("feature dimension mismatch: state expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(u8, usize),
    #[error("non-finite training loss at epoch {0} (divergent learning rate?)")]
    NonFiniteLoss(u32),
    #[error("weight snapshot parse error at line {line}: {message}")]
    SnapshotParse { line: usize, message: String },
    #[error("weight snapshot io error: {0}")]
    SnapshotIo(String),
}

/// Network weights plus Adam moment accumulators. Parameters live in one
/// flat vector, ordered `w1 (H x F) | b1 (H) | w2 (C x H) | b2 (C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    pub params: Vec<f64>,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_step: u64,
    pub epochs_trained: u32,
}

impl ClassifierState {
    /// Fresh state with small random hidden weights, zero output layer.
    pub fn init(config: &ClassifierConfig) -> Self {
        let mut state = Self::zeroed(config.feature_dim, config.hidden_dim, config.n_classes);
        let mut stream = rng::stream(config.rng_seed);
        let normal = StandardNormal;
        let w1_scale = 1.0 / (config.feature_dim as f64).sqrt();
        let w2_scale = 1.0 / (config.hidden_dim as f64).sqrt();
        let (w1_end, b1_end) = (state.w1_len(), state.w1_len() + config.hidden_dim);
        let w2_end = b1_end + config.n_classes * config.hidden_dim;
        for (i, p) in state.params.iter_mut().enumerate() {
            if i < w1_end {
                let draw: f64 = normal.sample(&mut stream);
                *p = w1_scale * draw;
            } else if i >= b1_end && i < w2_end {
                let draw: f64 = normal.sample(&mut stream);
                *p = w2_scale * draw;
            }
        }
        state
    }

    pub fn zeroed(feature_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        let n = hidden_dim * feature_dim + hidden_dim + n_classes * hidden_dim + n_classes;
        Self {
            params: vec![0.0; n],
            feature_dim,
            hidden_dim,
            n_classes,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_step: 0,
            epochs_trained: 0,
        }
    }

    fn w1_len(&self) -> usize {
        self.hidden_dim * self.feature_dim
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.w1_len();
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.n_classes * self.hidden_dim;
        (b1, w2, b2)
    }

    /// Hidden pre-activations, ReLU activations, logits and probabilities
    /// for one input.
    fn forward_into(&self, x: &[f64], pre: &mut [f64], hidden: &mut [f64], probs: &mut [f64]) {
        let (b1_off, w2_off, b2_off) = self.offsets();
        let f = self.feature_dim;
        for h in 0..self.hidden_dim {
            let row = &self.params[h * f..(h + 1) * f];
            let mut acc = self.params[b1_off + h];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            pre[h] = acc;
            hidden[h] = acc.max(0.0);
        }
        let mut max_logit = f64::NEG_INFINITY;
        for (c, p) in probs.iter_mut().enumerate() {
            let row =
                &self.params[w2_off + c * self.hidden_dim..w2_off + (c + 1) * self.hidden_dim];
            let mut acc = self.params[b2_off + c];
            for (w, hv) in row.iter().zip(hidden.iter()) {
                acc += w * hv;
            }
            *p = acc;
            max_logit = max_logit.max(acc);
        }
        let mut denom = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            denom += *p;
        }
        for p in probs.iter_mut() {
            *p /= denom;
        }
    }

    fn check_dim(&self, features: &[&[f64]]) -> Result<(), ClassifierError> {
        for row in features {
            if row.len() != self.feature_dim {
                return Err(ClassifierError::DimensionMismatch {
                    expected: self.feature_dim,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Row-stochastic class-probability matrix (rows sum to 1).
pub type ProbMatrix = Matrix;

/// Softmax class probabilities for each input row.
pub fn predict_proba(
    state: &ClassifierState,
    features: &[&[f64]],
) -> Result<ProbMatrix, ClassifierError> {
    state.check_dim(features)?;
    let mut out = Matrix::with_capacity(features.len(), state.n_classes);
    let mut pre = vec![0.0; state.hidden_dim];
    let mut hidden = vec![0.0; state.hidden_dim];
    let mut probs = vec![0.0; state.n_classes];
    for x in features {
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        out.push_row(&probs);
    }
    Ok(out)
}

/// Argmax class per row of a probability matrix, first max on ties.
pub fn predictions(probs: &ProbMatrix) -> Vec<u8> {
    probs
        .rows()
        .map(|row| {
            let mut best = 0usize;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Post-ReLU hidden activations for each input row (`rows x H`).
pub fn embed(state: &ClassifierState, features: &[&[f64]]) -> Result<Matrix, ClassifierError> {
    state.check_dim(features)?;
    let mut out = Matrix::with_capacity(features.len(), state.hidden_dim);
    let mut pre = vec![0.0; state.hidden_dim];
    let mut hidden = vec![0.0; state.hidden_dim];
    let mut probs = vec![0.0; state.n_classes];
    for x in features {
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        out.push_row(&hidden);
    }
    Ok(out)
}

/// Last-layer gradient embedding per input row (`rows x C*H`): the
/// cross-entropy gradient w.r.t. the output weights at the argmax
/// pseudo-label, `g[c*H + h] = (p_c - [c == argmax p]) * hidden_h`.
pub fn gradient_embed(
    state: &ClassifierState,
    features: &[&[f64]],
) -> Result<Matrix, ClassifierError> {
    state.check_dim(features)?;
    let width = state.n_classes * state.hidden_dim;
    let mut out = Matrix::with_capacity(features.len(), width);
    let mut pre = vec![0.0; state.hidden_dim];
    let mut hidden = vec![0.0; state.hidden_dim];
    let mut probs = vec![0.0; state.n_classes];
    let mut g = vec![0.0; width];
    for x in features {
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        let mut pseudo = 0usize;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[pseudo] {
                pseudo = c;
            }
        }
        for c in 0..state.n_classes {
            let residual = probs[c] - if c == pseudo { 1.0 } else { 0.0 };
            for (h, &hv) in hidden.iter().enumerate() {
                g[c * state.hidden_dim + h] = residual * hv;
            }
        }
        out.push_row(&g);
    }
    Ok(out)
}

/// Mean cross-entropy loss and its gradient w.r.t. the flat parameter
/// vector, over a labeled batch.
pub fn loss_and_grad(
    state: &ClassifierState,
    features: &[&[f64]],
    labels: &[u8],
) -> Result<(f64, Vec<f64>), ClassifierError> {
    state.check_dim(features)?;
    let mut grad = vec![0.0; state.params.len()];
    let loss = accumulate_grad(state, features, labels, &mut grad)?;
    Ok((loss, grad))
}

/// Mean cross-entropy loss over a labeled batch.
pub fn loss(
    state: &ClassifierState,
    features: &[&[f64]],
    labels: &[u8],
) -> Result<f64, ClassifierError> {
    state.check_dim(features)?;
    let mut pre = vec![0.0; state.hidden_dim];
    let mut hidden = vec![0.0; state.hidden_dim];
    let mut probs = vec![0.0; state.n_classes];
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        if usize::from(y) >= state.n_classes {
            return Err(ClassifierError::LabelOutOfRange(y, state.n_classes));
        }
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        total -= probs[usize::from(y)].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / features.len() as f64)
}

fn accumulate_grad(
    state: &ClassifierState,
    features: &[&[f64]],
    labels: &[u8],
    grad: &mut [f64],
) -> Result<f64, ClassifierError> {
    let (b1_off, w2_off, b2_off) = state.offsets();
    let f = state.feature_dim;
    let hdim = state.hidden_dim;
    let mut pre = vec![0.0; hdim];
    let mut hidden = vec![0.0; hdim];
    let mut probs = vec![0.0; state.n_classes];
    let mut dhidden = vec![0.0; hdim];
    let n = features.len() as f64;
    let mut total_loss = 0.0;

    for (x, &y) in features.iter().zip(labels) {
        if usize::from(y) >= state.n_classes {
            return Err(ClassifierError::LabelOutOfRange(y, state.n_classes));
        }
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        total_loss -= probs[usize::from(y)].max(f64::MIN_POSITIVE).ln();

        dhidden.iter_mut().for_each(|d| *d = 0.0);
        for c in 0..state.n_classes {
            let dz = (probs[c] - if c == usize::from(y) { 1.0 } else { 0.0 }) / n;
            let w2_row = w2_off + c * hdim;
            for h in 0..hdim {
                grad[w2_row + h] += dz * hidden[h];
                dhidden[h] += state.params[w2_row + h] * dz;
            }
            grad[b2_off + c] += dz;
        }
        for h in 0..hdim {
            if pre[h] > 0.0 {
                let da = dhidden[h];
                let w1_row = h * f;
                for (g, xv) in grad[w1_row..w1_row + f].iter_mut().zip(*x) {
                    *g += da * xv;
                }
                grad[b1_off + h] += da;
            }
        }
    }
    Ok(total_loss / n)
}

/// Result of one [`train`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Training accuracy at the last evaluation.
    pub accuracy: f64,
    /// Whether the accuracy threshold was met within the epoch cap.
    pub reached_threshold: bool,
    pub epochs_run: u32,
    /// The labeled set contained a single class (permitted, flagged).
    pub single_class: bool,
    /// Mean minibatch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
}

fn training_accuracy(state: &ClassifierState, features: &[&[f64]], labels: &[u8]) -> f64 {
    let mut pre = vec![0.0; state.hidden_dim];
    let mut hidden = vec![0.0; state.hidden_dim];
    let mut probs = vec![0.0; state.n_classes];
    let mut correct = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        state.forward_into(x, &mut pre, &mut hidden, &mut probs);
        let mut best = 0usize;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = c;
            }
        }
        if best == usize::from(y) {
            correct += 1;
        }
    }
    correct as f64 / features.len() as f64
}

/// Adam minibatch training on cross-entropy over the labeled set, stopping
/// once training accuracy reaches the threshold or the epoch cap is hit.
/// Mutates `state` in place; the caller decides warm vs cold start by
/// reusing or re-initializing the state.
pub fn train(
    state: &mut ClassifierState,
    features: &[&[f64]],
    labels: &[u8],
    config: &ClassifierConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    if features.is_empty() {
        return Err(ClassifierError::EmptyLabeledSet);
    }
    state.check_dim(features)?;
    for &y in labels {
        if usize::from(y) >= state.n_classes {
            return Err(ClassifierError::LabelOutOfRange(y, state.n_classes));
        }
    }
    let single_class = labels.windows(2).all(|w| w[0] == w[1]);

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut grad = vec![0.0; state.params.len()];
    let mut epoch_losses = Vec::new();
    let mut accuracy = training_accuracy(state, features, labels);
    let mut epochs_run = 0u32;

    while accuracy < config.train_accuracy_threshold && epochs_run < config.max_epochs {
        // Fisher-Yates shuffle of the sample order for this epoch.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        let mut batch_feats: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
        let mut batch_labels: Vec<u8> = Vec::with_capacity(config.batch_size);
        for chunk in order.chunks(config.batch_size) {
            batch_feats.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_feats.push(features[i]);
                batch_labels.push(labels[i]);
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let batch_loss = accumulate_grad(state, &batch_feats, &batch_labels, &mut grad)?;
            if !batch_loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss(epochs_run + 1));
            }
            adam_step(state, &grad, config.learning_rate);
            epoch_loss += batch_loss;
            n_batches += 1;
        }

        epochs_run += 1;
        state.epochs_trained += 1;
        epoch_losses.push(epoch_loss / n_batches as f64);
        if !state.all_finite() {
            return Err(ClassifierError::NonFiniteLoss(epochs_run));
        }
        accuracy = training_accuracy(state, features, labels);
    }

    Ok(TrainOutcome {
        accuracy,
        reached_threshold: accuracy >= config.train_accuracy_threshold,
        epochs_run,
        single_class,
        epoch_losses,
    })
}

fn adam_step(state: &mut ClassifierState, grad: &[f64], lr: f64) {
    state.adam_step += 1;
    let t = state.adam_step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let moments = state.adam_m.iter_mut().zip(state.adam_v.iter_mut());
    for ((param, &g), (m, v)) in state.params.iter_mut().zip(grad).zip(moments) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *param -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Writes the weights as CSV (`param,index,value` rows; dims first) for
/// determinism audits. Adam accumulators are not part of the snapshot.
pub fn write_weights_csv<W: Write>(
    state: &ClassifierState,
    mut out: W,
) -> Result<(), ClassifierError> {
    let io = |e: std::io::Error| ClassifierError::SnapshotIo(e.to_string());
    writeln!(out, "param,index,value").map_err(io)?;
    writeln!(out, "dims,0,{}", state.feature_dim).map_err(io)?;
    writeln!(out, "dims,1,{}", state.hidden_dim).map_err(io)?;
    writeln!(out, "dims,2,{}", state.n_classes).map_err(io)?;
    let (b1_off, w2_off, b2_off) = state.offsets();
    for (i, &v) in state.params.iter().enumerate() {
        let (name, idx) = if i < b1_off {
            ("w1", i)
        } else if i < w2_off {
            ("b1", i - b1_off)
        } else if i < b2_off {
            ("w2", i - w2_off)
        } else {
            ("b2", i - b2_off)
        };
        writeln!(out, "{name},{idx},{v}").map_err(io)?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_weights_csv`].
pub fn read_weights_csv<R: BufRead>(input: R) -> Result<ClassifierState, ClassifierError> {
    let mut dims = [0usize; 3];
    let mut rows: Vec<(String, usize, f64)> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ClassifierError::SnapshotIo(e.to_string()))?;
        let lineno = idx + 1;
        if lineno == 1 {
            if line != "param,index,value" {
                return Err(ClassifierError::SnapshotParse {
                    line: lineno,
                    message: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(ClassifierError::SnapshotParse {
                line: lineno,
                message: "expected 3 fields".into(),
            });
        }
        let index: usize = parts[1]
            .parse()
            .map_err(|_| ClassifierError::SnapshotParse {
                line: lineno,
                message: format!("bad index: {}", parts[1]),
            })?;
        let value: f64 = parts[2]
            .parse()
            .map_err(|_| ClassifierError::SnapshotParse {
                line: lineno,
                message: format!("bad value: {}", parts[2]),
            })?;
        if parts[0] == "dims" {
            if index > 2 {
                return Err(ClassifierError::SnapshotParse {
                    line: lineno,
                    message: "dims index out of range".into(),
                });
            }
            dims[index] = value as usize;
        } else {
            rows.push((parts[0].to_string(), index, value));
        }
    }
    let mut state = ClassifierState::zeroed(dims[0], dims[1], dims[2]);
    let (b1_off, w2_off, b2_off) = state.offsets();
    for (name, idx, value) in rows {
        let flat = match name.as_str() {
            "w1" => idx,
            "b1" => b1_off + idx,
            "w2" => w2_off + idx,
            "b2" => b2_off + idx,
            other => {
                return Err(ClassifierError::SnapshotParse {
                    line: 0,
                    message: format!("unknown param {other}"),
                })
            }
        };
        state.params[flat] = value;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            feature_dim: 2,
            hidden_dim: 4,
            n_classes: 2,
            learning_rate: 0.01,
            max_epochs: 200,
            batch_size: 16,
            rng_seed: 3,
            ..ClassifierConfig::default()
        }
    }

    fn two_clouds(n_per_class: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = rng::stream(17);
        let normal = StandardNormal;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u8 {
            let center = if class == 0 { 3.0 } else { -3.0 };
            for _ in 0..n_per_class {
                let a: f64 = normal.sample(&mut rng);
                let b: f64 = normal.sample(&mut rng);
                feats.push(vec![center + 0.1 * a, 0.1 * b]);
                labels.push(class);
            }
        }
        (feats, labels)
    }

    #[test]
    fn defaults_pin_the_training_regimen() {
        let cfg = ClassifierConfig::default();
        assert_eq!(cfg.learning_rate, 0.00015);
        assert_eq!(cfg.train_accuracy_threshold, 0.97);
        assert_eq!(cfg.max_epochs, 500);
        assert_eq!(cfg.n_classes, 2);
    }

    #[test]
    fn zero_output_layer_predicts_uniform() {
        let state = ClassifierState::zeroed(2, 4, 2);
        let feats: Vec<&[f64]> = vec![&[1.0, -2.0], &[0.5, 0.5]];
        let probs = predict_proba(&state, &feats).unwrap();
        for row in probs.rows() {
            assert_eq!(row, &[0.5, 0.5]);
        }
    }

    #[test]
    fn probability_rows_sum_to_one_and_are_positive() {
        let cfg = tiny_config();
        let state = ClassifierState::init(&cfg);
        let (feats, _) = two_clouds(20);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let probs = predict_proba(&state, &rows).unwrap();
        for row in probs.rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn embed_matches_hand_forward_pass() {
        // Identity-like first layer with ReLU: input (1, -1) -> (1, 0).
        let mut state = ClassifierState::zeroed(2, 2, 2);
        state.params[0] = 1.0; // w1[0][0]
        state.params[3] = 1.0; // w1[1][1]
        let feats: Vec<&[f64]> = vec![&[1.0, -1.0]];
        let emb = embed(&state, &feats).unwrap();
        assert_eq!(emb.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn embed_of_empty_input_is_empty() {
        let state = ClassifierState::zeroed(2, 2, 2);
        let emb = embed(&state, &[]).unwrap();
        assert_eq!(emb.n_rows(), 0);
    }

    #[test]
    fn embed_is_deterministic() {
        let cfg = tiny_config();
        let state = ClassifierState::init(&cfg);
        let feats: Vec<&[f64]> = vec![&[0.3, 0.7], &[0.3, 0.7]];
        let emb = embed(&state, &feats).unwrap();
        assert_eq!(emb.row(0), emb.row(1));
    }

    #[test]
    fn gradient_embedding_matches_outer_product() {
        // p = (0.5, 0.5) via zero output layer, pseudo-label 0,
        // hidden (1, 0): g = (-0.5, 0, 0.5, 0).
        let mut state = ClassifierState::zeroed(2, 2, 2);
        state.params[0] = 1.0;
        state.params[3] = 1.0;
        let feats: Vec<&[f64]> = vec![&[1.0, -1.0]];
        let g = gradient_embed(&state, &feats).unwrap();
        assert_eq!(g.row(0), &[-0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn gradient_embedding_norm_identity() {
        let cfg = tiny_config();
        let state = ClassifierState::init(&cfg);
        let (feats, _) = two_clouds(10);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let probs = predict_proba(&state, &rows).unwrap();
        let emb = embed(&state, &rows).unwrap();
        let g = gradient_embed(&state, &rows).unwrap();
        for i in 0..rows.len() {
            let p = probs.row(i);
            let pseudo = if p[0] >= p[1] { 0 } else { 1 };
            let mut residual_sq = 0.0;
            for (c, &pc) in p.iter().enumerate() {
                let r = pc - if c == pseudo { 1.0 } else { 0.0 };
                residual_sq += r * r;
            }
            let h_sq: f64 = emb.row(i).iter().map(|v| v * v).sum();
            let g_sq: f64 = g.row(i).iter().map(|v| v * v).sum();
            assert!((g_sq - residual_sq * h_sq).abs() < 1e-9);
        }
    }

    #[test]
    fn trains_separable_clouds_past_threshold() {
        let cfg = tiny_config();
        let mut state = ClassifierState::init(&cfg);
        let (feats, labels) = two_clouds(64);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let mut rng = rng::stream(5);
        let outcome = train(&mut state, &rows, &labels, &cfg, &mut rng).unwrap();
        assert!(outcome.reached_threshold, "accuracy {}", outcome.accuracy);
        assert!(outcome.accuracy >= 0.97);
    }

    #[test]
    fn single_sample_is_fit_quickly_and_flagged() {
        let cfg = tiny_config();
        let mut state = ClassifierState::init(&cfg);
        let feats: Vec<&[f64]> = vec![&[1.0, 1.0]];
        let mut rng = rng::stream(5);
        let outcome = train(&mut state, &feats, &[1], &cfg, &mut rng).unwrap();
        assert_eq!(outcome.accuracy, 1.0);
        assert!(outcome.single_class);
        assert!(outcome.epochs_run <= 20);
    }

    #[test]
    fn empty_labeled_set_is_an_error() {
        let cfg = tiny_config();
        let mut state = ClassifierState::init(&cfg);
        let mut rng = rng::stream(5);
        assert_eq!(
            train(&mut state, &[], &[], &cfg, &mut rng).unwrap_err(),
            ClassifierError::EmptyLabeledSet
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let state = ClassifierState::zeroed(2, 2, 2);
        let feats: Vec<&[f64]> = vec![&[1.0, 2.0, 3.0]];
        assert!(matches!(
            predict_proba(&state, &feats).unwrap_err(),
            ClassifierError::DimensionMismatch {
                expected: 2,
                got: 3
            }
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let (feats, labels) = two_clouds(32);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let run = || {
            let mut state = ClassifierState::init(&cfg);
            let mut rng = rng::stream(5);
            train(&mut state, &rows, &labels, &cfg, &mut rng).unwrap();
            state
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn warm_start_with_no_new_data_stays_converged() {
        let cfg = tiny_config();
        let mut state = ClassifierState::init(&cfg);
        let (feats, labels) = two_clouds(64);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let mut rng = rng::stream(5);
        let first = train(&mut state, &rows, &labels, &cfg, &mut rng).unwrap();
        assert!(first.reached_threshold);
        let second = train(&mut state, &rows, &labels, &cfg, &mut rng).unwrap();
        assert!(second.accuracy >= cfg.train_accuracy_threshold);
        assert_eq!(second.epochs_run, 0);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        // Mean training loss at epoch 10 is below epoch 1, averaged over
        // 10 seeds.
        let mut cfg = tiny_config();
        cfg.train_accuracy_threshold = 1.0;
        cfg.max_epochs = 10;
        cfg.learning_rate = 0.001;
        let (feats, labels) = two_clouds(32);
        let rows: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let mut first_sum = 0.0;
        let mut last_sum = 0.0;
        for seed in 0..10 {
            let mut c = cfg.clone();
            c.rng_seed = seed;
            let mut state = ClassifierState::init(&c);
            let mut rng = rng::stream(seed + 100);
            let outcome = train(&mut state, &rows, &labels, &c, &mut rng).unwrap();
            if outcome.epoch_losses.len() == 10 {
                first_sum += outcome.epoch_losses[0];
                last_sum += outcome.epoch_losses[9];
            } else {
                // Converged to 100% before epoch 10; count as improvement.
                first_sum += outcome.epoch_losses.first().copied().unwrap_or(1.0);
                last_sum += outcome.epoch_losses.last().copied().unwrap_or(0.0);
            }
        }
        assert!(last_sum / 10.0 < first_sum / 10.0);
    }

    #[test]
    fn weight_snapshot_round_trips() {
        let cfg = tiny_config();
        let state = ClassifierState::init(&cfg);
        let mut buf = Vec::new();
        write_weights_csv(&state, &mut buf).unwrap();
        let loaded = read_weights_csv(&buf[..]).unwrap();
        assert_eq!(loaded.params, state.params);
        assert_eq!(loaded.feature_dim, state.feature_dim);
    }
}

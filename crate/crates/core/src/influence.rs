//! Desk-scale classifier, per-sample gradients and the validation→training
//! influence graph.
//!
//! The classifier is multinomial logistic regression with a bias column.
//! Influence of validation sample `i` on training sample `j` is the dot
//! product of their per-sample loss gradients, so a positive entry means a
//! gradient step on `s_j` also lowers the loss on `v_i`. Other kernels plug in
//! through [`InfluenceKernel`].

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, epochs: 300, batch_size: 0, l2: 1e-3, seed: 0 }
    }
}

/// Parameters of the classifier, `C × (d+1)` with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelState {
    pub theta: Matrix,
    pub config: TrainingConfig,
}

impl ModelState {
    pub fn zeros(num_classes: usize, feature_dim: usize, config: TrainingConfig) -> Self {
        Self { theta: Matrix::zeros(num_classes, feature_dim + 1), config }
    }

    pub fn num_classes(&self) -> usize {
        self.theta.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.cols() - 1
    }

    pub fn num_params(&self) -> usize {
        self.theta.rows() * self.theta.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.feature_dim();
        (0..self.num_classes())
            .map(|c| {
                let row = self.theta.row(c);
                dot(&row[..d], x) + row[d]
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Arg-max class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Cross-entropy of `label` under the model, computed from log-sum-exp.
fn sample_loss(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
    lse - z[label]
}

/// Weighted logistic regression by gradient descent from zero parameters.
///
/// The loss is `Σ_j w_j ℓ_j / Σ_j w_j + (l2/2)·‖W‖²` where negative weights are
/// clamped to zero and the bias column is not regularised. `weights` aligns
/// with `samples`; `None` means all ones.
pub fn train_on(
    samples: &[&Sample],
    labels: Option<&[usize]>,
    weights: Option<&[f64]>,
    num_classes: usize,
    feature_dim: usize,
    config: &TrainingConfig,
) -> Result<ModelState> {
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::WeightLength { expected: samples.len(), found: w.len() });
        }
    }
    let eff: Vec<f64> = match weights {
        Some(w) => w.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        None => vec![1.0; samples.len()],
    };
    if !eff.iter().any(|&v| v > 0.0) {
        return Err(Error::ZeroEffectiveWeight);
    }
    for s in samples {
        if s.features.len() != feature_dim {
            return Err(Error::DimensionMismatch { id: s.id, expected: feature_dim, found: s.features.len() });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeatures { id: s.id });
        }
    }
    let label_of = |k: usize| labels.map_or(samples[k].observed_label, |l| l[k]);

    let mut model = ModelState::zeros(num_classes, feature_dim, config.clone());
    let cols = feature_dim + 1;
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(config.seed);
    let batch = if config.batch_size == 0 || config.batch_size >= n { n } else { config.batch_size };

    for epoch in 0..config.epochs {
        if batch < n {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let total: f64 = chunk.iter().map(|&k| eff[k]).sum();
            if total <= 0.0 {
                continue;
            }
            let mut grad = Matrix::zeros(num_classes, cols);
            for &k in chunk {
                let w = eff[k];
                if w == 0.0 {
                    continue;
                }
                let x = &samples[k].features;
                let label = label_of(k);
                let z = model.logits(x);
                epoch_loss += w * sample_loss(&z, label) / total;
                let p = softmax(&z);
                for c in 0..num_classes {
                    let r = (p[c] - if c == label { 1.0 } else { 0.0 }) * w / total;
                    let row = grad.row_mut(c);
                    for (g, xv) in row[..feature_dim].iter_mut().zip(x) {
                        *g += r * xv;
                    }
                    row[feature_dim] += r;
                }
            }
            for c in 0..num_classes {
                let theta_row = model.theta.row_mut(c);
                let g_row = grad.row(c);
                for k in 0..cols {
                    let reg = if k < feature_dim { config.l2 * theta_row[k] } else { 0.0 };
                    theta_row[k] -= config.learning_rate * (g_row[k] + reg);
                }
            }
        }
        if !epoch_loss.is_finite() || !model.theta.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}

/// Trains on the dataset's training split; `sample_weights` aligns with the split order.
pub fn train_model(ds: &Dataset, sample_weights: Option<&[f64]>, config: &TrainingConfig) -> Result<ModelState> {
    let train = ds.split_samples(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    train_on(&train, None, sample_weights, ds.num_classes, ds.feature_dim, config)
}

/// Gradient of the cross-entropy of `label` w.r.t. θ, flattened row-major:
/// `(softmax(z) − onehot(label)) ⊗ [x; 1]`.
pub fn gradient_for_label(model: &ModelState, features: &[f64], label: usize) -> Vec<f64> {
    let d = model.feature_dim();
    let p = model.predict_proba(features);
    let mut g = Vec::with_capacity(model.num_params());
    for (c, pc) in p.iter().enumerate() {
        let r = pc - if c == label { 1.0 } else { 0.0 };
        g.extend(features.iter().map(|x| r * x));
        g.push(r);
    }
    debug_assert_eq!(g.len(), model.num_classes() * (d + 1));
    g
}

pub fn per_sample_gradient(model: &ModelState, sample: &Sample) -> Result<Vec<f64>> {
    if sample.features.len() != model.feature_dim() {
        return Err(Error::DimensionMismatch { id: sample.id, expected: model.feature_dim(), found: sample.features.len() });
    }
    if sample.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeatures { id: sample.id });
    }
    Ok(gradient_for_label(model, &sample.features, sample.observed_label))
}

/// Per-sample gradients stacked as rows.
pub fn gradient_matrix(model: &ModelState, samples: &[&Sample]) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(samples.len() * model.num_params());
    for s in samples {
        rows.extend(per_sample_gradient(model, s)?);
    }
    Matrix::from_vec(samples.len(), model.num_params(), rows)
}

/// How a validation gradient and a training gradient combine into one influence value.
pub trait InfluenceKernel {
    fn influence(&self, val_grad: &[f64], train_grad: &[f64]) -> f64;
}

/// `∇ℓ(v_i) · ∇ℓ(s_j)`; positive means beneficial.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientDot;

impl InfluenceKernel for GradientDot {
    fn influence(&self, val_grad: &[f64], train_grad: &[f64]) -> f64 {
        dot(val_grad, train_grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BipartiteGraph {
    pub val_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    /// `m × n`, row `i` is validation sample `val_ids[i]`.
    pub g: Matrix,
    pub val_weights: Vec<f64>,
    pub confidences: Vec<f64>,
}

impl BipartiteGraph {
    pub fn new(val_ids: Vec<u64>, train_ids: Vec<u64>, g: Matrix, val_weights: Vec<f64>, confidences: Vec<f64>) -> Result<Self> {
        let graph = Self { val_ids, train_ids, g, val_weights, confidences };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.val_ids.len(), self.train_ids.len());
        if self.g.rows() != m || self.g.cols() != n && m > 0 {
            return Err(Error::Shape(alloc::format!("influence matrix is {}x{}, ids say {m}x{n}", self.g.rows(), self.g.cols())));
        }
        if self.val_weights.len() != m || self.confidences.len() != n {
            return Err(Error::Shape("weight/confidence lengths do not match the ids".into()));
        }
        if !self.g.is_finite() {
            return Err(Error::Shape("influence matrix has non-finite entries".into()));
        }
        if self.val_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Shape("validation weights must be finite and non-negative".into()));
        }
        if self.confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Shape("confidences must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.val_ids.len()
    }

    pub fn n(&self) -> usize {
        self.train_ids.len()
    }

    pub fn val_index(&self, id: u64) -> Option<usize> {
        self.val_ids.iter().position(|&v| v == id)
    }

    pub fn train_index(&self, id: u64) -> Option<usize> {
        self.train_ids.iter().position(|&v| v == id)
    }

    pub fn training_weights(&self) -> TrainingWeights {
        training_weights_for(&self.g, &self.val_weights)
    }
}

/// `w^s_j = Σ_i w^v_i g_ij`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingWeights(pub Vec<f64>);

impl TrainingWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn training_weights(graph: &BipartiteGraph) -> TrainingWeights {
    graph.training_weights()
}

/// Weighted column sums, accumulated row by row in ascending index order.
pub fn training_weights_for(g: &Matrix, val_weights: &[f64]) -> TrainingWeights {
    let mut w = vec![0.0; g.cols()];
    for (i, &wv) in val_weights.iter().enumerate().take(g.rows()) {
        for (acc, gij) in w.iter_mut().zip(g.row(i)) {
            *acc += wv * gij;
        }
    }
    TrainingWeights(w)
}

pub fn influence_row<K: InfluenceKernel>(kernel: &K, val_grad: &[f64], train_grads: &Matrix) -> Vec<f64> {
    (0..train_grads.rows()).map(|j| kernel.influence(val_grad, train_grads.row(j))).collect()
}

pub fn influence_matrix<K: InfluenceKernel>(kernel: &K, val_grads: &Matrix, train_grads: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(val_grads.rows(), train_grads.rows());
    for i in 0..val_grads.rows() {
        let row = influence_row(kernel, val_grads.row(i), train_grads);
        g.row_mut(i).copy_from_slice(&row);
    }
    g
}

/// Builds the validation × training influence graph at the given model.
pub fn build_graph(model: &ModelState, ds: &Dataset, init_val_weights: Option<&[f64]>) -> Result<BipartiteGraph> {
    build_graph_with(&GradientDot, model, ds, init_val_weights, DEFAULT_FOLDS)
}

pub fn build_graph_with<K: InfluenceKernel>(
    kernel: &K,
    model: &ModelState,
    ds: &Dataset,
    init_val_weights: Option<&[f64]>,
    folds: usize,
) -> Result<BipartiteGraph> {
    build_graph_split(kernel, model, model, ds, init_val_weights, folds)
}

/// Like [`build_graph_with`], with gradients taken at `gradient_model` and
/// confidences cross-fitted with `confidence_model`'s training configuration.
pub fn build_graph_split<K: InfluenceKernel>(
    kernel: &K,
    gradient_model: &ModelState,
    confidence_model: &ModelState,
    ds: &Dataset,
    init_val_weights: Option<&[f64]>,
    folds: usize,
) -> Result<BipartiteGraph> {
    let model = gradient_model;
    let val = ds.split_samples(Split::Validation);
    let train = ds.split_samples(Split::Train);
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let val_grads = gradient_matrix(model, &val)?;
    let train_grads = gradient_matrix(model, &train)?;
    let g = influence_matrix(kernel, &val_grads, &train_grads);
    let val_weights = match init_val_weights {
        Some(w) if w.len() != val.len() => return Err(Error::WeightLength { expected: val.len(), found: w.len() }),
        Some(w) => w.to_vec(),
        None => vec![1.0; val.len()],
    };
    let confidences = compute_confidence_k(confidence_model, ds, folds)?.values;
    BipartiteGraph::new(
        val.iter().map(|s| s.id).collect(),
        train.iter().map(|s| s.id).collect(),
        g,
        val_weights,
        confidences,
    )
}

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confidence {
    /// Aligned with the training split.
    pub values: Vec<f64>,
    /// Folds that lacked a class in their complement and were scored by the whole model.
    pub fallback_folds: Vec<usize>,
}

pub fn compute_confidence(model: &ModelState, ds: &Dataset) -> Result<Confidence> {
    compute_confidence_k(model, ds, DEFAULT_FOLDS)
}

/// Cross-fitted probability of each training sample's observed label.
///
/// Training positions are shuffled with the model's seed and dealt into `k`
/// folds; each fold is scored by a model trained on the remaining folds with
/// the same configuration.
pub fn compute_confidence_k(model: &ModelState, ds: &Dataset, k: usize) -> Result<Confidence> {
    if k < 2 {
        return Err(Error::InvalidFolds(k));
    }
    let train = ds.split_samples(Split::Train);
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptySplit("train"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(model.config.seed ^ 0x5eed_f01d).shuffle(&mut order);
    let mut fold_of = vec![0; n];
    for (rank, &pos) in order.iter().enumerate() {
        fold_of[pos] = rank % k;
    }

    let mut values = vec![0.0; n];
    let mut fallback_folds = Vec::new();
    for fold in 0..k {
        let held: Vec<usize> = (0..n).filter(|&p| fold_of[p] == fold).collect();
        if held.is_empty() {
            continue;
        }
        let rest: Vec<&Sample> = (0..n).filter(|&p| fold_of[p] != fold).map(|p| train[p]).collect();
        let mut present = vec![false; ds.num_classes];
        for s in &rest {
            present[s.observed_label] = true;
        }
        let fold_model = if rest.is_empty() || present.iter().any(|p| !p) {
            fallback_folds.push(fold);
            None
        } else {
            Some(train_on(&rest, None, None, ds.num_classes, ds.feature_dim, &model.config)?)
        };
        let scorer = fold_model.as_ref().unwrap_or(model);
        for p in held {
            let s = train[p];
            values[p] = scorer.predict_proba(&s.features)[s.observed_label];
        }
    }
    Ok(Confidence { values, fallback_folds })
}

/// Fraction of samples whose prediction matches the reference label
/// (true label when known, observed otherwise), plus per-class accuracy.
pub fn evaluate(model: &ModelState, samples: &[&Sample], num_classes: usize) -> (f64, Vec<f64>) {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for s in samples {
        let truth = s.true_label.unwrap_or(s.observed_label);
        totals[truth] += 1;
        if model.predict(&s.features) == truth {
            hits[truth] += 1;
        }
    }
    let all: usize = totals.iter().sum();
    let acc = if all == 0 { 0.0 } else { hits.iter().sum::<usize>() as f64 / all as f64 };
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    (acc, per_class)
}

//! The three desk-scale training pipelines compared by `run`.

use alloc::vec::Vec;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::influence::{build_graph_split, evaluate, train_model, GradientDot, ModelState, TrainingConfig, DEFAULT_FOLDS};
use crate::metrics::roc_auc;
use crate::quality::{optimize_weights, ConfidenceThresholds, MultiTaskState, Problem, QualitySets, SolverConfig, WeightBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Unweighted training.
    Uniform,
    /// Training weights from uniform validation weights.
    Reweight,
    /// Validation weights optimised for correctness and balance first.
    Improve,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Uniform, Mode::Reweight, Mode::Improve];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Reweight => "reweight",
            Mode::Improve => "improve",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    pub solver: SolverConfig,
    pub thresholds: ConfidenceThresholds,
    /// Training epochs of the checkpoint where influence gradients are taken;
    /// 0 is the initial parameters.
    pub influence_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            solver: SolverConfig::default(),
            thresholds: ConfidenceThresholds::default(),
            influence_epochs: 0,
        }
    }
}

/// Model trained for `epochs` epochs, keeping every other setting of `training`.
pub fn influence_checkpoint(ds: &Dataset, training: &TrainingConfig, epochs: usize) -> Result<ModelState> {
    train_model(ds, None, &TrainingConfig { epochs, ..training.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: ModelState,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// AUC of `−w^s` as a detector of mislabeled training samples.
    pub noise_auc: Option<f64>,
    pub training_weights: Option<Vec<f64>>,
}

/// Negative weights clamped to zero, then scaled so the largest weight is 1.
pub fn fine_tune_weights(w_s: &[f64]) -> Result<Vec<f64>> {
    let max = w_s.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::ZeroEffectiveWeight);
    }
    Ok(w_s.iter().map(|&w| if w > 0.0 { w / max } else { 0.0 }).collect())
}

/// AUC of `−w^s` against the mislabeled flags; `None` without ground truth
/// or when one of the two groups is empty.
pub fn noise_auc(ds: &Dataset, w_s: &[f64]) -> Option<f64> {
    let train = ds.split_samples(Split::Train);
    let flags: Option<Vec<bool>> = train.iter().map(|s| s.is_mislabeled()).collect();
    let scores: Vec<f64> = w_s.iter().map(|w| -w).collect();
    roc_auc(&scores, &flags?)
}

pub fn run(ds: &Dataset, mode: Mode, config: &ExperimentConfig) -> Result<RunOutcome> {
    let base = train_model(ds, None, &config.training)?;
    let w_s = match mode {
        Mode::Uniform => None,
        Mode::Reweight | Mode::Improve => {
            let checkpoint = influence_checkpoint(ds, &config.training, config.influence_epochs)?;
            let mut graph = build_graph_split(&GradientDot, &checkpoint, &base, ds, None, DEFAULT_FOLDS)?;
            if mode == Mode::Improve {
                let quality = QualitySets::from_confidence(&graph.train_ids, &graph.confidences, config.thresholds);
                let labels: Vec<usize> = ds.split_samples(Split::Train).iter().map(|s| s.observed_label).collect();
                let problem = Problem::new(&graph, &quality, &labels, ds.num_classes);
                let bounds = WeightBounds::unbounded(graph.m());
                let out = optimize_weights(&problem, &graph.val_weights, &bounds, MultiTaskState::default(), &config.solver)?;
                graph.val_weights = out.w_v;
            }
            Some(graph.training_weights().0)
        }
    };
    let model = match &w_s {
        None => base,
        Some(w) => train_model(ds, Some(&fine_tune_weights(w)?), &config.training)?,
    };
    let test = ds.split_samples(Split::Test);
    let (test_accuracy, per_class_accuracy) = evaluate(&model, &test, ds.num_classes);
    let noise_auc = w_s.as_deref().and_then(|w| noise_auc(ds, w));
    Ok(RunOutcome { model, test_accuracy, per_class_accuracy, noise_auc, training_weights: w_s })
}

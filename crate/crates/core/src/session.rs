//! Mutable workbench state: adjustments, recompute, undo, fine-tuning and a
//! replayable event log.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cocluster::{discretize_with, faca, faca_warm, refine_hierarchy, CoClustering, DiscreteMatrix, Normalization, DEFAULT_EPSILON, DEFAULT_MAX_LEAF};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::experiment::{fine_tune_weights, influence_checkpoint};
use crate::influence::{
    build_graph_split, compute_confidence_k, evaluate, gradient_matrix, influence_row, per_sample_gradient, train_model, BipartiteGraph,
    GradientDot, ModelState, TrainingConfig, DEFAULT_FOLDS,
};
use crate::layout::{build_layout, compute_diff, ClusterLayout, DiffResult, LayoutConfig};
use crate::matrix::Matrix;
use crate::quality::{optimize_weights, Bound, ConfidenceThresholds, MultiTaskState, Problem, QualitySets, SolverConfig, Verdict, WeightBounds};

/// Relative step of a drag bound.
pub const DRAG_GAMMA: f64 = 0.1;
/// Snapshot name written by every recompute.
pub const PRE_RECOMPUTE: &str = "pre-recompute";
pub const DEFAULT_DIFF_PCT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Up,
    Down,
}

/// One user correction. Validation ids for relabel and drag, training ids
/// for add and verify.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum Action {
    RelabelValidation { targets: Vec<u64>, label: usize },
    AddValidation { targets: Vec<u64> },
    DragWeight { targets: Vec<u64>, direction: Direction },
    VerifyQuality { targets: Vec<u64>, verdict: Verdict },
}

impl Action {
    pub fn targets(&self) -> &[u64] {
        match self {
            Action::RelabelValidation { targets, .. }
            | Action::AddValidation { targets }
            | Action::DragWeight { targets, .. }
            | Action::VerifyQuality { targets, .. } => targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adjustment {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, supplied by the caller.
    pub timestamp: u64,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event", rename_all = "snake_case"))]
pub enum Event {
    Adjust(Adjustment),
    Recompute { seq: u64, timestamp: u64 },
    Undo { seq: u64, timestamp: u64 },
    FineTune { seq: u64, timestamp: u64 },
    RefreshInfluence { seq: u64, timestamp: u64 },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Adjust(a) => a.seq,
            Event::Recompute { seq, .. } | Event::Undo { seq, .. } | Event::FineTune { seq, .. } | Event::RefreshInfluence { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SessionConfig {
    pub training: TrainingConfig,
    pub solver: SolverConfig,
    pub thresholds: ConfidenceThresholds,
    pub influence_epochs: usize,
    pub folds: usize,
    pub epsilon: f64,
    pub normalization: Normalization,
    pub max_leaf: usize,
    pub layout: LayoutConfig,
    pub gamma: f64,
    /// Re-run co-clustering from scratch on every recompute.
    pub cold_start: bool,
}

impl SessionConfig {
    /// Tighter than the batch default so that recomputing without an
    /// adjustment in between leaves the weights where they are.
    pub fn default_solver() -> SolverConfig {
        SolverConfig { tol: 1e-14, max_iters: 20_000, ..SolverConfig::default() }
    }
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            solver: SessionConfig::default_solver(),
            thresholds: ConfidenceThresholds::default(),
            influence_epochs: 0,
            folds: DEFAULT_FOLDS,
            epsilon: DEFAULT_EPSILON,
            normalization: Normalization::ColumnMax,
            max_leaf: DEFAULT_MAX_LEAF,
            layout: LayoutConfig::default(),
            gamma: DRAG_GAMMA,
            cold_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Snapshot {
    pub name: String,
    pub epoch: u64,
    pub w_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FineTuneMetrics {
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub test_size: usize,
}

/// Everything an undo checkpoint restores.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionState {
    pub dataset: Dataset,
    /// Current classifier; replaced by fine-tuning.
    pub model: ModelState,
    /// Checkpoint whose gradients define the graph.
    pub influence_model: ModelState,
    pub graph: BipartiteGraph,
    pub quality: QualitySets,
    pub bounds: WeightBounds,
    pub mt: MultiTaskState,
    pub clustering: CoClustering,
    /// Co-clustering with the training side cut at the hierarchy leaves; the layout indexes these groups.
    pub leaf_clustering: CoClustering,
    pub layout: ClusterLayout,
    pub snapshots: Vec<Snapshot>,
    /// Recompute epoch shared by graph weights, clustering and layout.
    pub epoch: u64,
    /// Added validation copies mapped to their training source.
    pub added: BTreeMap<u64, u64>,
    pub last_metrics: Option<FineTuneMetrics>,
}

impl SessionState {
    pub fn training_weights(&self) -> Vec<f64> {
        self.graph.training_weights().0
    }

    pub fn snapshot(&self, name: &str) -> Option<&Snapshot> {
        self.snapshots.iter().rev().find(|s| s.name == name)
    }

    /// Diff of the current training weights against the latest `pre-recompute` snapshot.
    pub fn diff(&self, pct: f64) -> Option<DiffResult> {
        let old = self.snapshot(PRE_RECOMPUTE)?;
        let new = self.training_weights();
        compute_diff(&self.graph.train_ids, &old.w_s, &new, pct).ok()
    }

    /// Observed training labels, with the label of a relabeled added copy
    /// carried back to its training source.
    pub fn corrected_training_set(&self) -> Dataset {
        let mut ds = self.dataset.clone();
        for (&copy, &source) in &self.added {
            let label = self.dataset.sample(copy).map(|s| s.observed_label);
            if let (Some(label), Some(s)) = (label, ds.sample_mut(source)) {
                s.observed_label = label;
            }
        }
        ds
    }

    fn train_labels(&self) -> Result<Vec<usize>> {
        let index = self.dataset.index();
        self.graph
            .train_ids
            .iter()
            .map(|id| index.get(id).map(|&p| self.dataset.samples[p].observed_label).ok_or(Error::UnknownSample { id: *id }))
            .collect()
    }

    fn train_gradients(&self) -> Result<Matrix> {
        let train = self.dataset.split_samples(Split::Train);
        gradient_matrix(&self.influence_model, &train)
    }

    fn val_row(&self, id: u64, train_grads: &Matrix) -> Result<Vec<f64>> {
        let s = self.dataset.sample(id).ok_or(Error::UnknownSample { id })?;
        let grad = per_sample_gradient(&self.influence_model, s)?;
        Ok(influence_row(&GradientDot, &grad, train_grads))
    }
}

/// Weighted influence `w^v_i g_ij`, the matrix that is discretized and co-clustered.
pub fn weighted_influence(graph: &BipartiteGraph) -> Matrix {
    let mut out = graph.g.clone();
    for i in 0..graph.m() {
        let w = graph.val_weights[i];
        for v in out.row_mut(i) {
            *v *= w;
        }
    }
    out
}

/// The clustering with each training group replaced by its hierarchy leaves.
pub fn leaf_clustering(dm: &DiscreteMatrix, cc: &CoClustering) -> CoClustering {
    match &cc.col_children {
        None => cc.clone(),
        Some(trees) => {
            let leaves: Vec<Vec<usize>> = trees.iter().flat_map(|t| t.leaves()).map(|t| t.members.clone()).collect();
            CoClustering::from_partitions(dm, cc.row_groups.clone(), leaves)
        }
    }
}

/// Discretization, co-clustering, hierarchy and layout for the current graph.
fn build_views(
    graph: &BipartiteGraph,
    ds: &Dataset,
    quality: &QualitySets,
    previous: Option<&CoClustering>,
    config: &SessionConfig,
) -> Result<(CoClustering, CoClustering, ClusterLayout)> {
    let dm = discretize_with(&weighted_influence(graph), config.epsilon, config.normalization);
    let top = match previous {
        Some(prev) if !config.cold_start => faca_warm(&dm, &extend_rows(prev, dm.rows())),
        _ => faca(&dm),
    };
    let clustering = refine_hierarchy(&dm, &top, config.max_leaf);
    let leaves = leaf_clustering(&dm, &clustering);
    let layout = build_layout(graph, ds, &leaves, quality, &config.layout)?;
    Ok((clustering, leaves, layout))
}

/// Previous partition with rows added since then placed in the last row group.
fn extend_rows(prev: &CoClustering, rows: usize) -> CoClustering {
    let known: usize = prev.row_groups.iter().map(Vec::len).sum();
    let mut out = prev.clone();
    if rows > known {
        if let Some(last) = out.row_groups.last_mut() {
            last.extend(known..rows);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecomputeOutcome {
    pub epoch: u64,
    pub diff: DiffResult,
    pub converged: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Session {
    pub config: SessionConfig,
    /// State right after construction; the log replays onto it.
    pub origin: SessionState,
    pub state: SessionState,
    pub log: Vec<Event>,
    /// Checkpoints taken before each applied adjustment, oldest first.
    pub undo_stack: Vec<SessionState>,
    /// Staged adjustments, applied at the next recompute.
    pub pending: Vec<Adjustment>,
    pub next_seq: u64,
}

impl Session {
    /// Trains the base model, builds the graph at the influence checkpoint and
    /// lays out the initial clustering with uniform validation weights.
    pub fn new(dataset: Dataset, config: SessionConfig) -> Result<Self> {
        dataset.validate()?;
        let model = train_model(&dataset, None, &config.training)?;
        let influence_model = influence_checkpoint(&dataset, &config.training, config.influence_epochs)?;
        let graph = build_graph_split(&GradientDot, &influence_model, &model, &dataset, None, config.folds)?;
        let quality = QualitySets::from_confidence(&graph.train_ids, &graph.confidences, config.thresholds);
        let bounds = WeightBounds::unbounded(graph.m());
        let (clustering, leaf_clustering, layout) = build_views(&graph, &dataset, &quality, None, &config)?;
        let state = SessionState {
            dataset,
            model,
            influence_model,
            graph,
            quality,
            bounds,
            mt: MultiTaskState::default(),
            clustering,
            leaf_clustering,
            layout,
            snapshots: Vec::new(),
            epoch: 0,
            added: BTreeMap::new(),
            last_metrics: None,
        };
        Ok(Self { config, origin: state.clone(), state, log: Vec::new(), undo_stack: Vec::new(), pending: Vec::new(), next_seq: 1 })
    }

    /// Session over an externally computed graph. The base model still comes
    /// from training on `dataset`, and adjusted rows use its gradients.
    pub fn from_graph(dataset: Dataset, graph: BipartiteGraph, config: SessionConfig) -> Result<Self> {
        dataset.validate()?;
        graph.validate()?;
        let val: Vec<u64> = dataset.split_samples(Split::Validation).iter().map(|s| s.id).collect();
        let train: Vec<u64> = dataset.split_samples(Split::Train).iter().map(|s| s.id).collect();
        if val != graph.val_ids || train != graph.train_ids {
            return Err(Error::Shape(String::from("graph ids do not match the dataset splits")));
        }
        let model = train_model(&dataset, None, &config.training)?;
        let quality = QualitySets::from_confidence(&graph.train_ids, &graph.confidences, config.thresholds);
        let bounds = WeightBounds::unbounded(graph.m());
        let (clustering, leaf_clustering, layout) = build_views(&graph, &dataset, &quality, None, &config)?;
        let state = SessionState {
            dataset,
            influence_model: model.clone(),
            model,
            graph,
            quality,
            bounds,
            mt: MultiTaskState::default(),
            clustering,
            leaf_clustering,
            layout,
            snapshots: Vec::new(),
            epoch: 0,
            added: BTreeMap::new(),
            last_metrics: None,
        };
        Ok(Self { config, origin: state.clone(), state, log: Vec::new(), undo_stack: Vec::new(), pending: Vec::new(), next_seq: 1 })
    }

    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Queues adjustments without touching the state; returns their sequence numbers.
    /// Targets are checked against the state they will be applied to only at recompute.
    pub fn stage(&mut self, actions: Vec<Action>, timestamp: u64) -> Vec<u64> {
        actions
            .into_iter()
            .map(|action| {
                let seq = self.take_seq();
                self.pending.push(Adjustment { seq, timestamp, action });
                seq
            })
            .collect()
    }

    /// Applies any staged adjustments and then `actions`, all or nothing.
    pub fn apply(&mut self, actions: Vec<Action>, timestamp: u64) -> Result<Vec<u64>> {
        let next_seq = self.next_seq;
        let mut batch = core::mem::take(&mut self.pending);
        let fresh: Vec<u64> = actions
            .into_iter()
            .map(|action| {
                let seq = self.take_seq();
                batch.push(Adjustment { seq, timestamp, action });
                seq
            })
            .collect();
        let staged = batch.len() - fresh.len();
        match self.apply_batch(&batch) {
            Ok(()) => Ok(fresh),
            Err(e) => {
                batch.truncate(staged);
                self.pending = batch;
                self.next_seq = next_seq;
                Err(e)
            }
        }
    }

    fn apply_batch(&mut self, batch: &[Adjustment]) -> Result<()> {
        let (log_len, undo_len) = (self.log.len(), self.undo_stack.len());
        for adj in batch {
            if let Err(e) = self.apply_one(adj.clone()) {
                if undo_len < self.undo_stack.len() {
                    self.state = self.undo_stack[undo_len].clone();
                }
                self.undo_stack.truncate(undo_len);
                self.log.truncate(log_len);
                return Err(e);
            }
        }
        Ok(())
    }

    fn apply_one(&mut self, adj: Adjustment) -> Result<()> {
        let next = apply_adjustment(&self.state, &adj.action, self.config.gamma)?;
        let prev = core::mem::replace(&mut self.state, next);
        self.undo_stack.push(prev);
        self.log.push(Event::Adjust(adj));
        Ok(())
    }

    /// Applies staged adjustments, re-solves the validation weights and
    /// refreshes clustering and layout. On error nothing changes.
    pub fn recompute(&mut self, timestamp: u64) -> Result<RecomputeOutcome> {
        let before = (self.state.clone(), self.log.len(), self.undo_stack.len(), self.pending.clone(), self.next_seq);
        let batch = core::mem::take(&mut self.pending);
        let result = self.apply_batch(&batch).and_then(|()| {
            let seq = self.take_seq();
            let out = recompute_state(&self.state, &self.config)?;
            self.state = out.0;
            self.log.push(Event::Recompute { seq, timestamp });
            Ok(out.1)
        });
        if result.is_err() {
            let (state, log_len, undo_len, pending, next_seq) = before;
            self.state = state;
            self.log.truncate(log_len);
            self.undo_stack.truncate(undo_len);
            self.pending = pending;
            self.next_seq = next_seq;
        }
        result
    }

    /// Drops the newest staged adjustment if there is one, otherwise restores
    /// the checkpoint taken before the last applied adjustment.
    pub fn undo(&mut self, timestamp: u64) -> Result<()> {
        if self.pending.pop().is_some() {
            return Ok(());
        }
        let prev = self.undo_stack.pop().ok_or(Error::NothingToUndo)?;
        self.state = prev;
        let seq = self.take_seq();
        self.log.push(Event::Undo { seq, timestamp });
        Ok(())
    }

    /// Retrains the classifier on the clamped, max-normalized training weights.
    /// The graph is left as is.
    pub fn fine_tune(&mut self, timestamp: u64) -> Result<FineTuneMetrics> {
        let (model, metrics) = fine_tune_state(&self.state, &self.config)?;
        self.state.model = model;
        self.state.last_metrics = Some(metrics.clone());
        let seq = self.take_seq();
        self.log.push(Event::FineTune { seq, timestamp });
        Ok(metrics)
    }

    /// Rebuilds the graph at the current classifier, refreshes confidence-derived
    /// quality sets and the views. Validation weights and bounds are kept.
    pub fn refresh_influence(&mut self, timestamp: u64) -> Result<u64> {
        let next = refresh_state(&self.state, &self.config)?;
        self.state = next;
        let seq = self.take_seq();
        self.log.push(Event::RefreshInfluence { seq, timestamp });
        Ok(self.state.epoch)
    }

    /// Re-executes `log` on `origin`. Staged adjustments are carried over as is.
    pub fn replay(config: SessionConfig, origin: SessionState, log: &[Event], pending: Vec<Adjustment>, next_seq: u64) -> Result<Self> {
        let mut s = Self { config, origin: origin.clone(), state: origin, log: Vec::new(), undo_stack: Vec::new(), pending: Vec::new(), next_seq: 1 };
        let mut last = 0;
        for event in log {
            if event.seq() <= last {
                return Err(Error::InvalidConfig(alloc::format!("log sequence {} is not increasing", event.seq())));
            }
            last = event.seq();
            match event {
                Event::Adjust(adj) => s.apply_one(adj.clone())?,
                Event::Recompute { seq, timestamp } => {
                    let (state, _) = recompute_state(&s.state, &s.config)?;
                    s.state = state;
                    s.log.push(Event::Recompute { seq: *seq, timestamp: *timestamp });
                }
                Event::Undo { seq, timestamp } => {
                    s.state = s.undo_stack.pop().ok_or(Error::NothingToUndo)?;
                    s.log.push(Event::Undo { seq: *seq, timestamp: *timestamp });
                }
                Event::FineTune { seq, timestamp } => {
                    let (model, metrics) = fine_tune_state(&s.state, &s.config)?;
                    s.state.model = model;
                    s.state.last_metrics = Some(metrics);
                    s.log.push(Event::FineTune { seq: *seq, timestamp: *timestamp });
                }
                Event::RefreshInfluence { seq, timestamp } => {
                    s.state = refresh_state(&s.state, &s.config)?;
                    s.log.push(Event::RefreshInfluence { seq: *seq, timestamp: *timestamp });
                }
            }
        }
        s.pending = pending;
        s.next_seq = next_seq.max(last + 1);
        Ok(s)
    }

    /// Adjustments in application order, for audit logs.
    pub fn adjustments(&self) -> impl Iterator<Item = &Adjustment> {
        self.log.iter().filter_map(|e| match e {
            Event::Adjust(a) => Some(a),
            _ => None,
        })
    }
}

/// Pure application of one adjustment to a state.
pub fn apply_adjustment(state: &SessionState, action: &Action, gamma: f64) -> Result<SessionState> {
    let targets = action.targets();
    let val_index = |id: u64| state.graph.val_index(id).ok_or(Error::UnknownSample { id });
    let train_index = |id: u64| state.graph.train_index(id).ok_or(Error::UnknownSample { id });
    let mut next = state.clone();
    match action {
        Action::RelabelValidation { label, .. } => {
            let rows: Vec<usize> = targets.iter().map(|&id| val_index(id)).collect::<Result<_>>()?;
            if *label >= state.dataset.num_classes {
                return Err(Error::InvalidClassIndex { id: targets.first().copied().unwrap_or(0), label: *label, num_classes: state.dataset.num_classes });
            }
            for &id in targets {
                if let Some(s) = next.dataset.sample_mut(id) {
                    s.observed_label = *label;
                }
            }
            let train_grads = next.train_gradients()?;
            for (&id, &i) in targets.iter().zip(&rows) {
                let row = next.val_row(id, &train_grads)?;
                next.graph.g.row_mut(i).copy_from_slice(&row);
            }
        }
        Action::AddValidation { .. } => {
            let mut seen = Vec::new();
            for &id in targets {
                train_index(id)?;
                if state.added.values().any(|&src| src == id) || seen.contains(&id) {
                    return Err(Error::AlreadyValidation { id });
                }
                seen.push(id);
            }
            let train_grads = next.train_gradients()?;
            let m = state.graph.m().max(1) as f64;
            let init = state.graph.val_weights.iter().sum::<f64>() / m;
            for &source in targets {
                let copy_id = next.dataset.next_id();
                let mut copy = next.dataset.sample(source).ok_or(Error::UnknownSample { id: source })?.clone();
                copy.id = copy_id;
                next.dataset.samples.push(copy);
                next.dataset.splits.validation.push(copy_id);
                let row = next.val_row(copy_id, &train_grads)?;
                next.graph.g.push_row(&row)?;
                next.graph.val_ids.push(copy_id);
                next.graph.val_weights.push(init);
                next.bounds.bounds.push(Bound::default());
                next.added.insert(copy_id, source);
            }
        }
        Action::DragWeight { direction, .. } => {
            let rows: Vec<usize> = targets.iter().map(|&id| val_index(id)).collect::<Result<_>>()?;
            for i in rows {
                let w = state.graph.val_weights[i];
                next.bounds.bounds[i] = match direction {
                    Direction::Up => Bound { lower: Some((1.0 + gamma) * w), upper: None },
                    Direction::Down => Bound { lower: Some(0.0), upper: Some((1.0 - gamma) * w) },
                };
            }
            next.bounds.validate()?;
        }
        Action::VerifyQuality { verdict, .. } => {
            for &id in targets {
                train_index(id)?;
            }
            for &id in targets {
                next.quality.verify(id, *verdict);
            }
        }
    }
    Ok(next)
}

fn recompute_state(state: &SessionState, config: &SessionConfig) -> Result<(SessionState, RecomputeOutcome)> {
    let labels = state.train_labels()?;
    let problem = Problem::new(&state.graph, &state.quality, &labels, state.dataset.num_classes);
    let out = optimize_weights(&problem, &state.graph.val_weights, &state.bounds, state.mt, &config.solver)?;
    let mut next = state.clone();
    next.snapshots.push(Snapshot { name: String::from(PRE_RECOMPUTE), epoch: state.epoch, w_s: state.training_weights() });
    next.graph.val_weights = out.w_v;
    next.mt = out.state;
    let (clustering, leaves, layout) = build_views(&next.graph, &next.dataset, &next.quality, Some(&state.clustering), config)?;
    next.clustering = clustering;
    next.leaf_clustering = leaves;
    next.layout = layout;
    next.epoch += 1;
    let diff = next.diff(DEFAULT_DIFF_PCT).unwrap_or(DiffResult { entries: Vec::new(), threshold_pct: DEFAULT_DIFF_PCT });
    let outcome = RecomputeOutcome { epoch: next.epoch, diff, converged: out.converged, objective: out.report.objective };
    Ok((next, outcome))
}

fn fine_tune_state(state: &SessionState, config: &SessionConfig) -> Result<(ModelState, FineTuneMetrics)> {
    let weights = fine_tune_weights(&state.training_weights())?;
    let ds = state.corrected_training_set();
    let model = train_model(&ds, Some(&weights), &config.training)?;
    let test = ds.split_samples(Split::Test);
    let (test_accuracy, per_class_accuracy) = evaluate(&model, &test, ds.num_classes);
    Ok((model, FineTuneMetrics { test_accuracy, per_class_accuracy, test_size: test.len() }))
}

fn refresh_state(state: &SessionState, config: &SessionConfig) -> Result<SessionState> {
    let ds = state.corrected_training_set();
    let mut next = state.clone();
    next.influence_model = state.model.clone();
    let train = state.dataset.split_samples(Split::Train);
    let train_grads = gradient_matrix(&next.influence_model, &train)?;
    let mut g = Matrix::zeros(0, train.len());
    for &id in &state.graph.val_ids {
        g.push_row(&next.val_row(id, &train_grads)?)?;
    }
    let confidences = compute_confidence_k(&state.model, &ds, config.folds)?.values;
    let graph = BipartiteGraph::new(state.graph.val_ids.clone(), state.graph.train_ids.clone(), g, state.graph.val_weights.clone(), confidences)?;
    next.quality.refresh_from_confidence(&graph.train_ids, &graph.confidences, config.thresholds);
    let (clustering, leaves, layout) = build_views(&graph, &next.dataset, &next.quality, Some(&state.clustering), config)?;
    next.graph = graph;
    next.clustering = clustering;
    next.leaf_clustering = leaves;
    next.layout = layout;
    next.epoch += 1;
    Ok(next)
}

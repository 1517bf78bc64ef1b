//! Validation-sample quality and the constrained weight solver.
//!
//! Correctness asks every high-quality training sample (S+) for a positive
//! weight and every low-quality one (S−) for a negative weight. Balancedness
//! is the negative entropy `Σ_c p_c log p_c` of the class distribution of S+
//! weight mass. The two are combined with learned uncertainties
//! `L_c/σ_c² + L_b/σ_b² + log(σ_c σ_b)` and minimised over the validation
//! weights by projected gradient descent.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::influence::{training_weights_for, BipartiteGraph};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    Confidence,
    UserVerified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    High,
    Low,
}

/// Confidence cut-offs that seed S+ (`≥ high`) and S− (`≤ low`).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfidenceThresholds {
    pub high: f64,
    pub low: f64,
}

impl Default for ConfidenceThresholds {
    fn default() -> Self {
        Self { high: 0.8, low: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QualitySets {
    pub s_plus: BTreeSet<u64>,
    pub s_minus: BTreeSet<u64>,
    pub provenance: BTreeMap<u64, Provenance>,
}

impl QualitySets {
    pub fn from_confidence(train_ids: &[u64], confidences: &[f64], thresholds: ConfidenceThresholds) -> Self {
        let mut q = Self::default();
        q.refresh_from_confidence(train_ids, confidences, thresholds);
        q
    }

    /// Re-derives every confidence-based membership; user-verified ids are left alone.
    pub fn refresh_from_confidence(&mut self, train_ids: &[u64], confidences: &[f64], thresholds: ConfidenceThresholds) {
        let derived: Vec<u64> = self
            .provenance
            .iter()
            .filter(|(_, p)| **p == Provenance::Confidence)
            .map(|(id, _)| *id)
            .collect();
        for id in derived {
            self.s_plus.remove(&id);
            self.s_minus.remove(&id);
            self.provenance.remove(&id);
        }
        for (&id, &c) in train_ids.iter().zip(confidences) {
            if self.provenance.contains_key(&id) {
                continue;
            }
            if c >= thresholds.high {
                self.s_plus.insert(id);
            } else if c <= thresholds.low {
                self.s_minus.insert(id);
            } else {
                continue;
            }
            self.provenance.insert(id, Provenance::Confidence);
        }
    }

    pub fn verify(&mut self, id: u64, verdict: Verdict) {
        match verdict {
            Verdict::High => {
                self.s_minus.remove(&id);
                self.s_plus.insert(id);
            }
            Verdict::Low => {
                self.s_plus.remove(&id);
                self.s_minus.insert(id);
            }
        }
        self.provenance.insert(id, Provenance::UserVerified);
    }

    pub fn contains(&self, id: u64) -> bool {
        self.s_plus.contains(&id) || self.s_minus.contains(&id)
    }

    /// Column indices of S+ and S− in `train_ids`, ascending. Ids not in the graph are skipped.
    pub fn resolve(&self, train_ids: &[u64]) -> QualityIndex {
        let mut idx = QualityIndex::default();
        for (j, id) in train_ids.iter().enumerate() {
            if self.s_plus.contains(id) {
                idx.plus.push(j);
            } else if self.s_minus.contains(id) {
                idx.minus.push(j);
            }
        }
        idx
    }
}

/// S+ and S− as column indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QualityIndex {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

/// Optional lower/upper bound for one validation weight.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bound {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightBounds {
    pub bounds: Vec<Bound>,
}

impl WeightBounds {
    pub fn unbounded(m: usize) -> Self {
        Self { bounds: vec![Bound::default(); m] }
    }

    pub fn validate(&self) -> Result<()> {
        for (index, b) in self.bounds.iter().enumerate() {
            let lower_ok = b.lower.is_none_or(|l| l >= 0.0 && l.is_finite());
            let upper_ok = b.upper.is_none_or(|u| !u.is_nan());
            let ordered = match (b.lower, b.upper) {
                (Some(l), Some(u)) => l <= u,
                _ => true,
            };
            if !(lower_ok && upper_ok && ordered) {
                return Err(Error::InvalidBounds { index });
            }
        }
        Ok(())
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.bounds.get(i).and_then(|b| b.lower).map_or(0.0, |l| l.max(0.0))
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.bounds.get(i).and_then(|b| b.upper).unwrap_or(f64::INFINITY)
    }
}

/// Elementwise clamp to `[max(0, lower_i), upper_i]`.
pub fn project(w_v: &[f64], bounds: &WeightBounds) -> Vec<f64> {
    w_v.iter()
        .enumerate()
        .map(|(i, &w)| {
            let (lo, hi) = (bounds.lower(i), bounds.upper(i));
            if w < lo {
                lo
            } else if w > hi {
                hi
            } else {
                w
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MultiTaskState {
    pub sigma_c: f64,
    pub sigma_b: f64,
}

impl Default for MultiTaskState {
    fn default() -> Self {
        Self { sigma_c: 1.0, sigma_b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QualityReport {
    pub l_c: f64,
    pub l_b: f64,
    pub p: Vec<f64>,
    pub objective: f64,
}

/// A loss value with its gradient w.r.t. the training weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of the training-weight signs against S+/S−.
pub fn correctness_loss(w_s: &[f64], q: &QualityIndex) -> Result<LossGrad> {
    if q.plus.is_empty() && q.minus.is_empty() {
        return Err(Error::NoQualityEvidence);
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; w_s.len()];
    for &j in &q.plus {
        // −log φ(w) = softplus(−w)
        value += softplus(-w_s[j]);
        grad[j] = -sigmoid(-w_s[j]);
    }
    for &j in &q.minus {
        // −log(1 − φ(w)) = softplus(w)
        value += softplus(w_s[j]);
        grad[j] = sigmoid(w_s[j]);
    }
    Ok(LossGrad { value, grad })
}

#[inline]
fn xlogx(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * libm::log(p)
    }
}

/// Negative entropy of the per-class S+ weight distribution.
///
/// Class mass counts only the positive part of each S+ weight, so `p` always
/// lies on the simplex and the loss stays within `[−ln C, 0]`. Returns the
/// loss, `p`, and the gradient w.r.t. `w_s`; classes with zero mass are left
/// out of the gradient.
pub fn balancedness_loss(w_s: &[f64], q: &QualityIndex, labels: &[usize], num_classes: usize) -> Result<(LossGrad, Vec<f64>)> {
    if q.plus.is_empty() {
        return Err(Error::EmptyHighQuality);
    }
    let mut mass = vec![0.0; num_classes];
    let mut total = 0.0;
    for &j in &q.plus {
        let w = w_s[j].max(0.0);
        mass[labels[j]] += w;
        total += w;
    }
    if total < 1e-12 {
        return Err(Error::DegenerateWeightMass(total));
    }
    let p: Vec<f64> = mass.iter().map(|m| m / total).collect();
    let value: f64 = p.iter().map(|&pc| xlogx(pc)).sum();
    // dL/dp_c = ln p_c + 1 ; dp_c/dw_j = (δ(c, c_j) − p_c)/T for w_j > 0
    let dl_dp: Vec<f64> = p.iter().map(|&pc| if pc == 0.0 { 0.0 } else { libm::log(pc) + 1.0 }).collect();
    let mean_term: f64 = dl_dp.iter().zip(&p).map(|(d, pc)| d * pc).sum();
    let mut grad = vec![0.0; w_s.len()];
    for &j in &q.plus {
        if w_s[j] > 0.0 {
            grad[j] = (dl_dp[labels[j]] - mean_term) / total;
        }
    }
    Ok((LossGrad { value, grad }, p))
}

/// Everything the objective needs besides the decision variables.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub g: &'a Matrix,
    pub quality: QualityIndex,
    /// Class of every training column.
    pub labels: &'a [usize],
    pub num_classes: usize,
}

/// Objective value and its gradient w.r.t. `(w_v, σ_c, σ_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: QualityReport,
    pub w_s: Vec<f64>,
    pub grad_w_v: Vec<f64>,
    pub grad_sigma_c: f64,
    pub grad_sigma_b: f64,
}

impl<'a> Problem<'a> {
    pub fn new(graph: &'a BipartiteGraph, quality: &QualitySets, labels: &'a [usize], num_classes: usize) -> Self {
        Self { g: &graph.g, quality: quality.resolve(&graph.train_ids), labels, num_classes }
    }

    pub fn evaluate(&self, w_v: &[f64], mt: MultiTaskState) -> Result<Evaluation> {
        let w_s = training_weights_for(self.g, w_v).0;
        let lc = correctness_loss(&w_s, &self.quality)?;
        let (lb, p) = balancedness_loss(&w_s, &self.quality, self.labels, self.num_classes)?;
        let (sc, sb) = (mt.sigma_c, mt.sigma_b);
        let (ic, ib) = (1.0 / (sc * sc), 1.0 / (sb * sb));
        let objective = ic * lc.value + ib * lb.value + libm::log(sc * sb);

        let dw_s: Vec<f64> = lc.grad.iter().zip(&lb.grad).map(|(c, b)| ic * c + ib * b).collect();
        let grad_w_v = (0..self.g.rows())
            .map(|i| {
                let mut acc = 0.0;
                for (gij, d) in self.g.row(i).iter().zip(&dw_s) {
                    acc += gij * d;
                }
                acc
            })
            .collect();
        Ok(Evaluation {
            report: QualityReport { l_c: lc.value, l_b: lb.value, p, objective },
            w_s,
            grad_w_v,
            grad_sigma_c: -2.0 * lc.value / (sc * sc * sc) + 1.0 / sc,
            grad_sigma_b: -2.0 * lb.value / (sb * sb * sb) + 1.0 / sb,
        })
    }
}

/// Combined quality objective for the given validation weights.
pub fn objective(
    graph: &BipartiteGraph,
    w_v: &[f64],
    mt: MultiTaskState,
    quality: &QualitySets,
    labels: &[usize],
    num_classes: usize,
) -> Result<QualityReport> {
    if w_v.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidBounds { index: w_v.iter().position(|w| *w < 0.0).unwrap_or(0) });
    }
    Ok(Problem::new(graph, quality, labels, num_classes).evaluate(w_v, mt)?.report)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub init_step: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    /// Box for the uncertainties. The balancedness loss is never positive, so
    /// without a floor on σ_b the objective has no lower bound.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Upper limit for every validation weight unless a lower bound exceeds it.
    /// When all S+/S− signs can be met the correctness loss only vanishes as the
    /// weights grow without limit, so `None` can leave the solver creeping.
    pub max_weight: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 2000,
            init_step: 0.1,
            shrink: 0.5,
            max_halvings: 30,
            sigma_min: 1.0,
            sigma_max: 1e4,
            max_weight: Some(10.0),
        }
    }
}

/// `bounds` with the solver's weight cap folded into every upper bound.
pub fn capped_bounds(bounds: &WeightBounds, max_weight: Option<f64>) -> WeightBounds {
    let Some(cap) = max_weight else {
        return bounds.clone();
    };
    let bounds = bounds
        .bounds
        .iter()
        .map(|b| {
            let cap = cap.max(b.lower.unwrap_or(0.0));
            Bound { lower: b.lower, upper: Some(b.upper.map_or(cap, |u| u.min(cap))) }
        })
        .collect();
    WeightBounds { bounds }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Optimized {
    pub w_v: Vec<f64>,
    pub state: MultiTaskState,
    /// Objective at the (projected) starting point followed by one entry per accepted step.
    pub trace: Vec<f64>,
    /// No descent was possible from the starting point.
    pub stationary: bool,
    pub converged: bool,
    pub report: QualityReport,
}

impl Optimized {
    pub fn accepted_steps(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Projected gradient descent over `(w_v, log σ_c, log σ_b)` with
/// backtracking: the first iteration tries `init_step`, later ones twice the
/// last accepted step, halving while the projected trial point does not
/// lower the objective.
pub fn optimize_weights(
    problem: &Problem<'_>,
    init_w_v: &[f64],
    bounds: &WeightBounds,
    init_state: MultiTaskState,
    config: &SolverConfig,
) -> Result<Optimized> {
    solve(problem, init_w_v, bounds, init_state, config, |_| {})
}

/// [`optimize_weights`] that also returns the projected start and every accepted iterate.
pub fn optimize_weights_traced(
    problem: &Problem<'_>,
    init_w_v: &[f64],
    bounds: &WeightBounds,
    init_state: MultiTaskState,
    config: &SolverConfig,
) -> Result<(Optimized, Vec<Vec<f64>>)> {
    let mut iterates = Vec::new();
    let out = solve(problem, init_w_v, bounds, init_state, config, |w| iterates.push(w.to_vec()))?;
    Ok((out, iterates))
}

fn solve(
    problem: &Problem<'_>,
    init_w_v: &[f64],
    bounds: &WeightBounds,
    init_state: MultiTaskState,
    config: &SolverConfig,
    mut visit: impl FnMut(&[f64]),
) -> Result<Optimized> {
    bounds.validate()?;
    let bounds = &capped_bounds(bounds, config.max_weight);
    if init_w_v.len() != problem.g.rows() {
        return Err(Error::WeightLength { expected: problem.g.rows(), found: init_w_v.len() });
    }
    let (ls_min, ls_max) = (libm::log(config.sigma_min), libm::log(config.sigma_max));
    let clamp_ls = |v: f64| v.max(ls_min).min(ls_max);
    let state_of = |lc: f64, lb: f64| MultiTaskState { sigma_c: libm::exp(lc), sigma_b: libm::exp(lb) };

    let mut w = project(init_w_v, bounds);
    let mut ls_c = clamp_ls(libm::log(init_state.sigma_c));
    let mut ls_b = clamp_ls(libm::log(init_state.sigma_b));
    let mut eval = problem.evaluate(&w, state_of(ls_c, ls_b))?;
    if !eval.report.objective.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0, iterate: w });
    }
    visit(&w);
    let mut trace = vec![eval.report.objective];
    let mut stationary = false;
    let mut converged = false;
    let mut step_hint = config.init_step;
    let mut probing = false;

    for iteration in 0..config.max_iters {
        let state = state_of(ls_c, ls_b);
        // chain rule into log-space: ∂f/∂log σ = σ ∂f/∂σ
        let g_lc = state.sigma_c * eval.grad_sigma_c;
        let g_lb = state.sigma_b * eval.grad_sigma_b;
        let mut step = step_hint;
        let mut next = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = w.iter().zip(&eval.grad_w_v).map(|(x, g)| x - step * g).collect();
            let trial = project(&trial, bounds);
            let t_lc = clamp_ls(ls_c - step * g_lc);
            let t_lb = clamp_ls(ls_b - step * g_lb);
            if trial == w && t_lc == ls_c && t_lb == ls_b {
                break;
            }
            match problem.evaluate(&trial, state_of(t_lc, t_lb)) {
                Ok(e) if e.report.objective.is_nan() => {
                    return Err(Error::NonFiniteObjective { iteration, iterate: trial });
                }
                Ok(e) if e.report.objective <= eval.report.objective => {
                    next = Some((trial, t_lc, t_lb, e));
                    step_hint = 2.0 * step;
                    break;
                }
                _ => step *= config.shrink,
            }
        }
        let Some((trial, t_lc, t_lb, e)) = next else {
            stationary = iteration == 0;
            converged = true;
            break;
        };
        let delta = (eval.report.objective - e.report.objective).abs();
        w = trial;
        ls_c = t_lc;
        ls_b = t_lb;
        eval = e;
        visit(&w);
        trace.push(eval.report.objective);
        if delta < config.tol {
            // confirm with one probe from `init_step`, which is where a restart would begin
            if probing || step >= config.init_step {
                converged = true;
                break;
            }
            probing = true;
            step_hint = config.init_step;
        } else {
            probing = false;
        }
    }

    Ok(Optimized { w_v: w, state: state_of(ls_c, ls_b), trace, stationary, converged, report: eval.report })
}

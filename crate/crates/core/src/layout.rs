//! Everything the cluster and sample views draw: aggregated links and their
//! ordering, per-sample 1-D positions, consistency glyphs, bar charts,
//! representative sampling, top contributors and the diff overlay.

use alloc::vec;
use alloc::vec::Vec;

use crate::cocluster::CoClustering;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::influence::BipartiteGraph;
use crate::matrix::{sq_dist, Matrix};
use crate::quality::QualitySets;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Link {
    pub row_cluster: usize,
    pub col_cluster: usize,
    /// Sum of the positive `w^v_i g_ij` terms in the block.
    pub pos_mass: f64,
    /// Sum of the negative terms (≤ 0).
    pub neg_mass: f64,
    /// Drawn light grey and ignored when counting crossings.
    pub context: bool,
}

impl Link {
    pub fn mass(&self) -> f64 {
        self.pos_mass.abs() + self.neg_mass.abs()
    }
}

/// Block sums of the weighted influence; a link is context when its mass is
/// below `context_frac` of the heaviest link.
pub fn aggregate_links(graph: &BipartiteGraph, cc: &CoClustering, context_frac: f64) -> Vec<Link> {
    let mut links = Vec::with_capacity(cc.k() * cc.l());
    for (a, rows) in cc.row_groups.iter().enumerate() {
        for (b, cols) in cc.col_groups.iter().enumerate() {
            let (mut pos, mut neg) = (0.0, 0.0);
            for &i in rows {
                let wv = graph.val_weights[i];
                for &j in cols {
                    let v = wv * graph.g.get(i, j);
                    if v > 0.0 {
                        pos += v;
                    } else {
                        neg += v;
                    }
                }
            }
            links.push(Link { row_cluster: a, col_cluster: b, pos_mass: pos, neg_mass: neg, context: false });
        }
    }
    let max = links.iter().map(Link::mass).fold(0.0, f64::max);
    for l in &mut links {
        l.context = l.mass() < context_frac * max || l.mass() == 0.0;
    }
    links
}

fn positions(order: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; order.len()];
    for (p, &c) in order.iter().enumerate() {
        pos[c] = p;
    }
    pos
}

/// Pairs of non-context links whose endpoints are in opposite order on the two sides.
pub fn count_crossings(links: &[Link], row_order: &[usize], col_order: &[usize]) -> usize {
    let rp = positions(row_order);
    let cp = positions(col_order);
    let active: Vec<(isize, isize)> = links
        .iter()
        .filter(|l| !l.context)
        .map(|l| (rp[l.row_cluster] as isize, cp[l.col_cluster] as isize))
        .collect();
    let mut crossings = 0;
    for (i, a) in active.iter().enumerate() {
        for b in &active[i + 1..] {
            if (a.0 - b.0) * (a.1 - b.1) < 0 {
                crossings += 1;
            }
        }
    }
    crossings
}

fn barycenter_sort(order: &mut Vec<usize>, other_pos: &[usize], links: &[Link], rows_side: bool) {
    let my_pos = positions(order);
    let mut keyed: Vec<(f64, usize, usize)> = order
        .iter()
        .map(|&c| {
            let (mut num, mut den) = (0.0, 0.0);
            for l in links {
                let (mine, other) = if rows_side { (l.row_cluster, l.col_cluster) } else { (l.col_cluster, l.row_cluster) };
                if mine == c {
                    num += l.mass() * other_pos[other] as f64;
                    den += l.mass();
                }
            }
            let bc = if den > 0.0 { num / den } else { my_pos[c] as f64 };
            (bc, my_pos[c], c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    *order = keyed.into_iter().map(|(_, _, c)| c).collect();
}

/// Barycenter orderings after `sweeps` alternating passes (columns first).
pub fn barycenter_orders(links: &[Link], k: usize, l: usize, sweeps: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..k).collect();
    let mut cols: Vec<usize> = (0..l).collect();
    for _ in 0..sweeps {
        barycenter_sort(&mut cols, &positions(&rows), links, false);
        barycenter_sort(&mut rows, &positions(&cols), links, true);
    }
    (rows, cols)
}

/// Instances with at most this many joint orderings are finished by exhaustive search.
pub const EXHAUSTIVE_LIMIT: usize = 14_400;

/// Barycenter initialisation (3 sweeps) followed by adjacent-swap hill
/// climbing on the crossing count, always taking the leftmost improving swap.
/// Small instances are then polished exhaustively, so their result is optimal.
pub fn order_clusters(links: &[Link], k: usize, l: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut rows, mut cols) = barycenter_orders(links, k, l, 3);
    let mut best = count_crossings(links, &rows, &cols);
    'outer: while best > 0 {
        for side in 0..2 {
            let len = if side == 0 { rows.len() } else { cols.len() };
            for i in 0..len.saturating_sub(1) {
                let order = if side == 0 { &mut rows } else { &mut cols };
                order.swap(i, i + 1);
                let c = count_crossings(links, &rows, &cols);
                if c < best {
                    best = c;
                    continue 'outer;
                }
                let order = if side == 0 { &mut rows } else { &mut cols };
                order.swap(i, i + 1);
            }
        }
        break;
    }
    let joint = factorial(k).saturating_mul(factorial(l));
    if best > 0 && joint <= EXHAUSTIVE_LIMIT {
        let col_perms = permutations(l);
        for r in permutations(k) {
            for c in &col_perms {
                let crossings = count_crossings(links, &r, c);
                if crossings < best {
                    best = crossings;
                    rows.clone_from(&r);
                    cols.clone_from(c);
                }
            }
        }
    }
    (rows, cols)
}

fn factorial(n: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, x| acc.checked_mul(x)).unwrap_or(usize::MAX)
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else { break };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap_or(i);
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Upper bound; the effective rate is `min(learning_rate, n / exaggeration)`.
    pub learning_rate: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self { iterations: 500, exaggeration: 4.0, exaggeration_iters: 100, learning_rate: 100.0 }
    }
}

/// Projection of the centred points on their first principal component
/// (power iteration, sign fixed so the largest loading is positive).
fn first_pc(points: &[&[f64]]) -> Vec<f64> {
    let n = points.len();
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let mut cov = Matrix::zeros(d, d);
    for c in &centred {
        for a in 0..d {
            for b in 0..d {
                cov.set(a, b, cov.get(a, b) + c[a] * c[b]);
            }
        }
    }
    let mut v = vec![1.0; d];
    for _ in 0..200 {
        let mut next: Vec<f64> = (0..d).map(|a| crate::matrix::dot(cov.row(a), &v)).collect();
        let norm = libm::sqrt(next.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
    }
    let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    centred.iter().map(|c| crate::matrix::dot(c, &v)).collect()
}

/// Row-conditional affinities with per-point precision tuned to `perplexity`.
fn conditional_affinities(dist: &Matrix, perplexity: f64) -> Matrix {
    let n = dist.rows();
    let target = libm::log(perplexity);
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..100 {
            let row: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { libm::exp(-dist.get(i, j) * beta) }).collect();
            let total: f64 = row.iter().sum();
            let total = if total > 0.0 { total } else { 1e-300 };
            let mut entropy = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if j != i {
                    let pj = r / total;
                    p.set(i, j, pj);
                    entropy += beta * dist.get(i, j) * pj;
                }
            }
            entropy += libm::log(total);
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    p
}

/// One-dimensional exact t-SNE of a cluster, rescaled to `[0, 1]`.
///
/// Perplexity is `max(2, ⌊√n⌋)`, initialisation is the first principal
/// component scaled to standard deviation 1e-4 (a seeded draw only when all
/// points coincide along it). Exact duplicates share a position.
pub fn project_1d(points: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    project_1d_with(points, seed, &TsneConfig::default())
}

pub fn project_1d_with(points: &[&[f64]], seed: u64, config: &TsneConfig) -> Result<Vec<f64>> {
    let n = points.len();
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteFeatures { id: u64::MAX });
    }
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![0.5]),
        _ => {}
    }
    let pc = first_pc(points);
    if n == 2 {
        return Ok(match pc[0].total_cmp(&pc[1]) {
            core::cmp::Ordering::Less => vec![0.25, 0.75],
            core::cmp::Ordering::Greater => vec![0.75, 0.25],
            core::cmp::Ordering::Equal => vec![0.5, 0.5],
        });
    }

    let mut dist = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(points[i], points[j]);
            dist.set(i, j, d);
            dist.set(j, i, d);
        }
    }
    let perplexity = (libm::floor(libm::sqrt(n as f64))).max(2.0);
    let cond = conditional_affinities(&dist, perplexity);
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, ((cond.get(i, j) + cond.get(j, i)) / (2.0 * n as f64)).max(1e-12));
            }
        }
    }

    let mean = pc.iter().sum::<f64>() / n as f64;
    let std = libm::sqrt(pc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64);
    let mut y: Vec<f64> = if std > 0.0 {
        pc.iter().map(|v| (v - mean) / std * 1e-4).collect()
    } else {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal() * 1e-4).collect()
    };

    let lr = config.learning_rate.min(n as f64 / config.exaggeration.max(1.0));
    let mut update = vec![0.0; n];
    let mut gains = vec![1.0; n];
    let mut grad = vec![0.0; n];
    let p_flat = p.as_slice();
    let mut w = vec![0.0; n * n];
    for it in 0..config.iterations {
        let exaggerate = it < config.exaggeration_iters;
        let ex = if exaggerate { config.exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            let yi = y[i];
            let row = &mut w[i * n..(i + 1) * n];
            for j in i + 1..n {
                let d = yi - y[j];
                let wij = 1.0 / (1.0 + d * d);
                row[j] = wij;
                z += 2.0 * wij;
            }
        }
        let inv_z = 1.0 / z;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let yi = y[i];
            let row = &w[i * n..(i + 1) * n];
            let prow = &p_flat[i * n..(i + 1) * n];
            let mut gi = 0.0;
            for j in i + 1..n {
                let wij = row[j];
                let f = (ex * prow[j] - wij * inv_z) * wij * (yi - y[j]);
                gi += f;
                grad[j] -= f;
            }
            grad[i] += gi;
        }
        for i in 0..n {
            let g = 4.0 * grad[i];
            let same_sign = (g > 0.0) == (update[i] > 0.0);
            gains[i] = if same_sign { (gains[i] * 0.8f64).max(0.01) } else { gains[i] + 0.2 };
            update[i] = momentum * update[i] - lr * gains[i] * g;
            y[i] += update[i];
        }
    }

    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut x: Vec<f64> = if hi > lo { y.iter().map(|v| (v - lo) / (hi - lo)).collect() } else { vec![0.5; n] };
    for i in 1..n {
        if let Some(first) = (0..i).find(|&j| points[j] == points[i]) {
            x[i] = x[first];
        }
    }
    Ok(x)
}

/// The four bar-chart categories, in bar order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GlyphKind {
    /// consistent, positive weight
    GreenCircle = 0,
    /// inconsistent, positive weight
    GreenTriangle = 1,
    /// inconsistent, negative weight
    RedTriangle = 2,
    /// consistent, negative weight
    RedCircle = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Glyph {
    pub consistent: bool,
    pub positive: bool,
}

impl Glyph {
    pub fn kind(self) -> GlyphKind {
        match (self.consistent, self.positive) {
            (true, true) => GlyphKind::GreenCircle,
            (false, true) => GlyphKind::GreenTriangle,
            (false, false) => GlyphKind::RedTriangle,
            (true, false) => GlyphKind::RedCircle,
        }
    }
}

pub const HIGH_CONFIDENCE: f64 = 0.5;

/// A weight agrees with its confidence when high-confidence samples are
/// non-negative and low-confidence samples are negative.
pub fn classify_glyphs(w_s: &[f64], confidences: &[f64]) -> Vec<Glyph> {
    w_s.iter()
        .zip(confidences)
        .map(|(&w, &c)| {
            let high = c >= HIGH_CONFIDENCE;
            let positive = w >= 0.0;
            Glyph { consistent: high == positive, positive }
        })
        .collect()
}

pub fn bar_counts(glyphs: &[Glyph], col_groups: &[Vec<usize>]) -> Vec<[u32; 4]> {
    col_groups
        .iter()
        .map(|members| {
            let mut c = [0u32; 4];
            for &j in members {
                c[glyphs[j].kind() as usize] += 1;
            }
            c
        })
        .collect()
}

pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.05;

/// A cluster collapses when its inconsistent fraction is strictly below the threshold.
pub fn collapse_policy(bar_counts: &[[u32; 4]], threshold_frac: f64) -> Vec<bool> {
    bar_counts
        .iter()
        .map(|c| {
            let total: u32 = c.iter().sum();
            if total == 0 {
                return true;
            }
            let inconsistent = c[GlyphKind::GreenTriangle as usize] + c[GlyphKind::RedTriangle as usize];
            (inconsistent as f64 / total as f64) < threshold_frac
        })
        .collect()
}

/// Local density `k / (Σ distances to the k nearest neighbours + 1e-12)` with `k = min(10, n−1)`.
pub fn local_density(points: &[&[f64]]) -> Vec<f64> {
    let n = points.len();
    let k = 10.min(n.saturating_sub(1));
    if k == 0 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| libm::sqrt(sq_dist(points[i], points[j]))).collect();
            d.sort_by(f64::total_cmp);
            k as f64 / (d[..k].iter().sum::<f64>() + 1e-12)
        })
        .collect()
}

/// Inclusion weight of each point: `clamp01(ρ_min/ρ(x)) + 1[prioritised]`.
pub fn sampling_weights(points: &[&[f64]], prioritized: &[bool]) -> Vec<f64> {
    let rho = local_density(points);
    let rho_min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    rho.iter()
        .zip(prioritized)
        .map(|(&r, &p)| (rho_min / r).clamp(0.0, 1.0) + if p { 1.0 } else { 0.0 })
        .collect()
}

/// Outlier-biased sampling without replacement. Returns positions into
/// `points`, ascending; everything when the cluster fits the budget.
pub fn sample_representatives(points: &[&[f64]], prioritized: &[bool], budget: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n <= budget {
        return (0..n).collect();
    }
    let mut weights = sampling_weights(points, prioritized);
    let mut rng = Rng::new(seed);
    let mut chosen = Vec::with_capacity(budget);
    for _ in 0..budget {
        let total: f64 = weights.iter().sum();
        let mut target = rng.uniform() * total;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let Some(i) = pick else { break };
        chosen.push(i);
        weights[i] = 0.0;
    }
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Side {
    Validation,
    Training,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contributor {
    pub id: u64,
    /// `w^v_i g_ij`
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contributors {
    pub positive: Vec<Contributor>,
    pub negative: Vec<Contributor>,
}

/// Strongest positive and negative weighted influences on (or from) one sample.
pub fn top_contributors(graph: &BipartiteGraph, side: Side, sample_id: u64, k: usize) -> Result<Contributors> {
    let terms: Vec<Contributor> = match side {
        Side::Training => {
            let j = graph.train_index(sample_id).ok_or(Error::UnknownSample { id: sample_id })?;
            (0..graph.m()).map(|i| Contributor { id: graph.val_ids[i], value: graph.val_weights[i] * graph.g.get(i, j) }).collect()
        }
        Side::Validation => {
            let i = graph.val_index(sample_id).ok_or(Error::UnknownSample { id: sample_id })?;
            (0..graph.n()).map(|j| Contributor { id: graph.train_ids[j], value: graph.val_weights[i] * graph.g.get(i, j) }).collect()
        }
    };
    let mut positive: Vec<Contributor> = terms.iter().filter(|c| c.value > 0.0).cloned().collect();
    let mut negative: Vec<Contributor> = terms.into_iter().filter(|c| c.value < 0.0).collect();
    positive.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.id.cmp(&b.id)));
    negative.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.id.cmp(&b.id)));
    positive.truncate(k);
    negative.truncate(k);
    Ok(Contributors { positive, negative })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiffEntry {
    pub id: u64,
    pub old: f64,
    pub new: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiffResult {
    pub entries: Vec<DiffEntry>,
    pub threshold_pct: f64,
}

impl DiffResult {
    pub fn flagged_ids(&self) -> Vec<u64> {
        self.entries.iter().filter(|e| e.flagged).map(|e| e.id).collect()
    }
}

/// Number of samples flagged at `pct` percent of `n`: `⌈pct/100 · n⌉`, capped at `n`.
pub fn flag_count(pct: f64, n: usize) -> usize {
    let raw = pct * n as f64 / 100.0;
    let count = libm::ceil(raw - 1e-9 * raw.abs().max(1.0)).max(0.0) as usize;
    count.min(n)
}

/// Flags the samples with the largest `|new − old|` (ties by ascending id).
pub fn compute_diff(ids: &[u64], old_w_s: &[f64], new_w_s: &[f64], threshold_pct: f64) -> Result<DiffResult> {
    if ids.len() != old_w_s.len() || ids.len() != new_w_s.len() {
        return Err(Error::Shape("diff vectors are not aligned".into()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (new_w_s[a] - old_w_s[a]).abs();
        let db = (new_w_s[b] - old_w_s[b]).abs();
        db.total_cmp(&da).then(ids[a].cmp(&ids[b]))
    });
    let mut flagged = vec![false; ids.len()];
    for &i in order.iter().take(flag_count(threshold_pct, ids.len())) {
        flagged[i] = true;
    }
    let entries = (0..ids.len())
        .map(|i| DiffEntry { id: ids[i], old: old_w_s[i], new: new_w_s[i], flagged: flagged[i] })
        .collect();
    Ok(DiffResult { entries, threshold_pct })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutConfig {
    pub context_frac: f64,
    pub collapse_threshold: f64,
    pub representative_budget: usize,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { context_frac: 0.02, collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD, representative_budget: 60, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplePosition {
    pub id: u64,
    pub cluster: usize,
    /// Position within the cluster, in `[0, 1]`.
    pub x: f64,
    /// The sample's weight.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusterLayout {
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
    pub links: Vec<Link>,
    pub val_positions: Vec<SamplePosition>,
    pub train_positions: Vec<SamplePosition>,
    /// Aligned with the graph's training columns.
    pub glyphs: Vec<Glyph>,
    pub bar_counts: Vec<[u32; 4]>,
    pub collapsed: Vec<bool>,
    pub val_representatives: Vec<Vec<u64>>,
    pub train_representatives: Vec<Vec<u64>>,
    /// Mean validation weight per validation cluster.
    pub avg_val_weight: Vec<f64>,
    pub crossings: usize,
}

/// Seed used for the t-SNE projection and representative draw of one cluster.
pub fn cluster_seed(base: u64, side: Side, cluster: usize) -> u64 {
    match side {
        Side::Validation => base ^ (cluster as u64).wrapping_mul(0x9e37_79b9),
        Side::Training => base ^ (cluster as u64).wrapping_mul(0x85eb_ca6b) ^ 0xffff,
    }
}

pub fn features_of<'a>(ds: &'a Dataset, ids: &[u64]) -> Result<Vec<&'a [f64]>> {
    let index = ds.index();
    ids.iter()
        .map(|id| index.get(id).map(|&p| ds.samples[p].features.as_slice()).ok_or(Error::UnknownSample { id: *id }))
        .collect()
}

/// Computes the full cluster-view model for the current graph and clustering.
pub fn build_layout(
    graph: &BipartiteGraph,
    ds: &Dataset,
    cc: &CoClustering,
    quality: &QualitySets,
    config: &LayoutConfig,
) -> Result<ClusterLayout> {
    let w_s = graph.training_weights().0;
    let links = aggregate_links(graph, cc, config.context_frac);
    let (row_order, col_order) = order_clusters(&links, cc.k(), cc.l());
    let crossings = count_crossings(&links, &row_order, &col_order);
    let val_feats = features_of(ds, &graph.val_ids)?;
    let train_feats = features_of(ds, &graph.train_ids)?;

    let mut val_positions = Vec::with_capacity(graph.m());
    let mut val_representatives = Vec::with_capacity(cc.k());
    let mut avg_val_weight = Vec::with_capacity(cc.k());
    for (a, members) in cc.row_groups.iter().enumerate() {
        let pts: Vec<&[f64]> = members.iter().map(|&i| val_feats[i]).collect();
        let seed = cluster_seed(config.seed, Side::Validation, a);
        let xs = project_1d(&pts, seed)?;
        for (&i, x) in members.iter().zip(xs) {
            val_positions.push(SamplePosition { id: graph.val_ids[i], cluster: a, x, y: graph.val_weights[i] });
        }
        let picks = sample_representatives(&pts, &vec![false; pts.len()], config.representative_budget, seed);
        val_representatives.push(picks.into_iter().map(|p| graph.val_ids[members[p]]).collect());
        avg_val_weight.push(members.iter().map(|&i| graph.val_weights[i]).sum::<f64>() / members.len().max(1) as f64);
    }

    let mut train_positions = Vec::with_capacity(graph.n());
    let mut train_representatives = Vec::with_capacity(cc.l());
    for (b, members) in cc.col_groups.iter().enumerate() {
        let pts: Vec<&[f64]> = members.iter().map(|&j| train_feats[j]).collect();
        let seed = cluster_seed(config.seed, Side::Training, b);
        let xs = project_1d(&pts, seed)?;
        for (&j, x) in members.iter().zip(xs) {
            train_positions.push(SamplePosition { id: graph.train_ids[j], cluster: b, x, y: w_s[j] });
        }
        let prioritized: Vec<bool> = members.iter().map(|&j| quality.contains(graph.train_ids[j])).collect();
        let picks = sample_representatives(&pts, &prioritized, config.representative_budget, seed);
        train_representatives.push(picks.into_iter().map(|p| graph.train_ids[members[p]]).collect());
    }

    let glyphs = classify_glyphs(&w_s, &graph.confidences);
    let bars = bar_counts(&glyphs, &cc.col_groups);
    let collapsed = collapse_policy(&bars, config.collapse_threshold);
    Ok(ClusterLayout {
        row_order,
        col_order,
        links,
        val_positions,
        train_positions,
        glyphs,
        bar_counts: bars,
        collapsed,
        val_representatives,
        train_representatives,
        avg_val_weight,
        crossings,
    })
}

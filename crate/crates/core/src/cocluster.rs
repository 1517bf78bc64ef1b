//! Three-way discretisation of the influence matrix and parameter-free MDL
//! co-clustering (cross-associations) with hierarchical column refinement.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 0.05;
const IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Category {
    Pos = 0,
    Neu = 1,
    Neg = 2,
}

impl Category {
    pub fn negate(self) -> Self {
        match self {
            Category::Pos => Category::Neg,
            Category::Neu => Category::Neu,
            Category::Neg => Category::Pos,
        }
    }
}

/// How the influence values are scaled before thresholding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    None,
    #[default]
    ColumnMax,
    GlobalMax,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscreteMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Category>,
    pub epsilon: f64,
}

impl DiscreteMatrix {
    pub fn from_categories(rows: usize, cols: usize, entries: Vec<Category>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must be rows * cols");
        Self { rows, cols, entries, epsilon: DEFAULT_EPSILON }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Category {
        self.entries[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Category] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                entries.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, entries, epsilon: self.epsilon }
    }

    /// Same rows, only the listed columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            entries.extend(cols.iter().map(|&c| self.get(r, c)));
        }
        Self { rows: self.rows, cols: cols.len(), entries, epsilon: self.epsilon }
    }
}

/// Threshold raw values: `≥ ε` → POS, `≤ −ε` → NEG, otherwise NEU.
pub fn discretize(g: &Matrix, epsilon: f64) -> DiscreteMatrix {
    let entries = g
        .as_slice()
        .iter()
        .map(|&v| {
            if v >= epsilon {
                Category::Pos
            } else if v <= -epsilon {
                Category::Neg
            } else {
                Category::Neu
            }
        })
        .collect();
    DiscreteMatrix { rows: g.rows(), cols: g.cols(), entries, epsilon }
}

/// Scales `g` by column or global max-|g| (zero columns stay zero), then thresholds.
pub fn discretize_with(g: &Matrix, epsilon: f64, normalization: Normalization) -> DiscreteMatrix {
    let scaled = match normalization {
        Normalization::None => g.clone(),
        Normalization::GlobalMax => {
            let max = g.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if max > 0.0 {
                g.map(|v| v / max)
            } else {
                g.clone()
            }
        }
        Normalization::ColumnMax => {
            let mut out = g.clone();
            for c in 0..g.cols() {
                let max = (0..g.rows()).fold(0.0f64, |a, r| a.max(g.get(r, c).abs()));
                if max > 0.0 {
                    for r in 0..g.rows() {
                        out.set(r, c, g.get(r, c) / max);
                    }
                }
            }
            out
        }
    };
    discretize(&scaled, epsilon)
}

/// A node of the column hierarchy: a set of column indices and its sub-clusters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnTree {
    pub members: Vec<usize>,
    pub children: Vec<ColumnTree>,
    /// The split below this node was a balanced bisection, not an MDL split.
    pub forced: bool,
}

impl ColumnTree {
    pub fn leaves(&self) -> Vec<&ColumnTree> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ColumnTree::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoClustering {
    pub row_groups: Vec<Vec<usize>>,
    pub col_groups: Vec<Vec<usize>>,
    /// `block_counts[a][b]` = (POS, NEU, NEG) counts of row group `a` × column group `b`.
    pub block_counts: Vec<Vec<[u32; 3]>>,
    pub total_cost: f64,
    pub col_children: Option<Vec<ColumnTree>>,
}

impl CoClustering {
    /// Builds a clustering from explicit partitions, computing counts and cost.
    pub fn from_partitions(dm: &DiscreteMatrix, row_groups: Vec<Vec<usize>>, col_groups: Vec<Vec<usize>>) -> Self {
        let rows = Partition::from_groups(dm.rows(), &row_groups);
        let cols = Partition::from_groups(dm.cols(), &col_groups);
        Search::new(dm, rows, cols).finish()
    }

    pub fn k(&self) -> usize {
        self.row_groups.len()
    }

    pub fn l(&self) -> usize {
        self.col_groups.len()
    }

    pub fn row_labels(&self) -> Vec<usize> {
        labels_of(&self.row_groups)
    }

    pub fn col_labels(&self) -> Vec<usize> {
        labels_of(&self.col_groups)
    }
}

fn labels_of(groups: &[Vec<usize>]) -> Vec<usize> {
    let n = groups.iter().map(Vec::len).sum();
    let mut out = vec![0; n];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            out[i] = g;
        }
    }
    out
}

/// Universal code length for positive integers (Rissanen's log*), in bits.
pub fn log2_star(k: usize) -> f64 {
    let mut bits = libm::log2(2.865_064);
    let mut x = libm::log2(k as f64);
    while x > 0.0 {
        bits += x;
        x = libm::log2(x);
    }
    bits
}

/// `t·H(block)` in bits: `t log2 t − Σ_c n_c log2 n_c`.
fn block_data_bits(counts: &[u32; 3]) -> f64 {
    let t: u32 = counts.iter().sum();
    if t == 0 {
        return 0.0;
    }
    let xlog = |v: u32| if v == 0 { 0.0 } else { v as f64 * libm::log2(v as f64) };
    xlog(t) - counts.iter().map(|&c| xlog(c)).sum::<f64>()
}

/// Total description length of a clustering:
/// `Σ_blocks [t·H + 2·log2(t+1)] + log2*(k) + log2*(l) + m·log2 k + n·log2 l`.
pub fn code_cost(cc: &CoClustering) -> f64 {
    let m: usize = cc.row_groups.iter().map(Vec::len).sum();
    let n: usize = cc.col_groups.iter().map(Vec::len).sum();
    let counts: Vec<[u32; 3]> = cc.block_counts.iter().flatten().copied().collect();
    let row_sizes: Vec<usize> = cc.row_groups.iter().map(Vec::len).collect();
    let col_sizes: Vec<usize> = cc.col_groups.iter().map(Vec::len).collect();
    cost_of(&counts, &row_sizes, &col_sizes, m, n)
}

fn cost_of(counts: &[[u32; 3]], row_sizes: &[usize], col_sizes: &[usize], m: usize, n: usize) -> f64 {
    let l = col_sizes.len();
    let k_eff = row_sizes.iter().filter(|&&s| s > 0).count();
    let l_eff = col_sizes.iter().filter(|&&s| s > 0).count();
    let mut bits = 0.0;
    for (a, &rs) in row_sizes.iter().enumerate() {
        if rs == 0 {
            continue;
        }
        for (b, &cs) in col_sizes.iter().enumerate() {
            if cs == 0 {
                continue;
            }
            let t = (rs * cs) as f64;
            bits += block_data_bits(&counts[a * l + b]) + 2.0 * libm::log2(t + 1.0);
        }
    }
    bits + log2_star(k_eff.max(1))
        + log2_star(l_eff.max(1))
        + m as f64 * libm::log2(k_eff.max(1) as f64)
        + n as f64 * libm::log2(l_eff.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
struct Partition {
    of: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    fn single(n: usize) -> Self {
        Self { of: vec![0; n], sizes: vec![n] }
    }

    fn from_groups(n: usize, groups: &[Vec<usize>]) -> Self {
        let mut of = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                of[i] = g;
            }
        }
        assert!(of.iter().all(|&g| g != usize::MAX), "groups must cover every index");
        let sizes = groups.iter().map(Vec::len).collect();
        Self { of, sizes }
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &g) in self.of.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// Drops empty groups, keeping the relative order of the rest. Returns the old→new map.
    fn prune(&mut self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.sizes.len()];
        let mut next = 0;
        for (g, &s) in self.sizes.iter().enumerate() {
            if s > 0 {
                map[g] = Some(next);
                next += 1;
            }
        }
        for g in &mut self.of {
            *g = map[*g].expect("non-empty group");
        }
        self.sizes.retain(|&s| s > 0);
        map
    }
}

/// Greedy search state, oriented so that "rows" are the side being moved.
#[derive(Clone)]
struct Search<'a> {
    mat: &'a DiscreteMatrix,
    rows: Partition,
    cols: Partition,
    /// `k × l`, row-major.
    counts: Vec<[u32; 3]>,
    cost: f64,
}

impl<'a> Search<'a> {
    fn new(mat: &'a DiscreteMatrix, rows: Partition, cols: Partition) -> Self {
        let (k, l) = (rows.sizes.len(), cols.sizes.len());
        let mut counts = vec![[0u32; 3]; k * l];
        for r in 0..mat.rows() {
            let a = rows.of[r];
            for (c, cat) in mat.row(r).iter().enumerate() {
                counts[a * l + cols.of[c]][*cat as usize] += 1;
            }
        }
        let mut s = Self { mat, rows, cols, counts, cost: 0.0 };
        s.cost = s.compute_cost();
        s
    }

    fn k(&self) -> usize {
        self.rows.sizes.len()
    }

    fn l(&self) -> usize {
        self.cols.sizes.len()
    }

    fn compute_cost(&self) -> f64 {
        cost_of(&self.counts, &self.rows.sizes, &self.cols.sizes, self.mat.rows(), self.mat.cols())
    }

    /// Category counts of row `r` per column group.
    fn profile(&self, r: usize) -> Vec<[u32; 3]> {
        let mut p = vec![[0u32; 3]; self.l()];
        for (c, cat) in self.mat.row(r).iter().enumerate() {
            p[self.cols.of[c]][*cat as usize] += 1;
        }
        p
    }

    fn shift(&mut self, profile: &[[u32; 3]], from: usize, to: usize) {
        let l = self.l();
        for (b, pc) in profile.iter().enumerate() {
            for cat in 0..3 {
                self.counts[from * l + b][cat] -= pc[cat];
                self.counts[to * l + b][cat] += pc[cat];
            }
        }
        self.rows.sizes[from] -= 1;
        self.rows.sizes[to] += 1;
    }

    fn move_row(&mut self, r: usize, profile: &[[u32; 3]], to: usize) {
        let from = self.rows.of[r];
        self.shift(profile, from, to);
        self.rows.of[r] = to;
    }

    fn cost_if_moved(&mut self, profile: &[[u32; 3]], from: usize, to: usize) -> f64 {
        self.shift(profile, from, to);
        let c = self.compute_cost();
        self.shift(profile, to, from);
        c
    }

    fn add_row_group(&mut self) -> usize {
        let l = self.l();
        self.counts.extend(core::iter::repeat_n([0u32; 3], l));
        self.rows.sizes.push(0);
        self.k() - 1
    }

    /// One ascending scan; each row moves to the non-empty group with the
    /// strictly lowest total cost (ties keep the current group).
    fn reassign_rows(&mut self, history: &mut Option<&mut Vec<f64>>) -> bool {
        let mut moved = false;
        for r in 0..self.mat.rows() {
            let from = self.rows.of[r];
            let profile = self.profile(r);
            let (mut best, mut best_cost) = (from, self.cost);
            for to in 0..self.k() {
                if to == from || self.rows.sizes[to] == 0 {
                    continue;
                }
                let c = self.cost_if_moved(&profile, from, to);
                if c < best_cost - IMPROVEMENT {
                    best = to;
                    best_cost = c;
                }
            }
            if best != from {
                self.move_row(r, &profile, best);
                self.cost = best_cost;
                moved = true;
                if let Some(h) = history.as_mut() {
                    h.push(self.cost);
                }
            }
        }
        moved
    }

    fn prune(&mut self) {
        let (k_old, l) = (self.k(), self.l());
        let map = self.rows.prune();
        let mut counts = vec![[0u32; 3]; self.k() * l];
        for a in 0..k_old {
            if let Some(na) = map[a] {
                counts[na * l..(na + 1) * l].copy_from_slice(&self.counts[a * l..(a + 1) * l]);
            }
        }
        self.counts = counts;
    }

    /// Swaps the roles of rows and columns.
    fn transposed(self, mat_t: &'a DiscreteMatrix) -> Search<'a> {
        let (k, l) = (self.k(), self.l());
        let mut counts = vec![[0u32; 3]; k * l];
        for a in 0..k {
            for b in 0..l {
                counts[b * k + a] = self.counts[a * l + b];
            }
        }
        Search { mat: mat_t, rows: self.cols, cols: self.rows, counts, cost: self.cost }
    }

    /// Attempts to open a new row group by peeling rows off the group with the
    /// highest per-row entropy. Returns the row indices moved, or `None` when
    /// no usable split exists.
    fn seed_row_split(&mut self) -> Option<()> {
        let l = self.l();
        let group_bits = |s: &Self, a: usize| -> f64 { (0..l).map(|b| block_data_bits(&s.counts[a * l + b])).sum() };
        let mut target = None;
        let mut best = 0.0;
        for a in 0..self.k() {
            if self.rows.sizes[a] < 2 {
                continue;
            }
            let per_row = group_bits(self, a) / self.rows.sizes[a] as f64;
            if per_row > best + IMPROVEMENT {
                best = per_row;
                target = Some(a);
            }
        }
        let source = target?;
        let fresh = self.add_row_group();
        for r in 0..self.mat.rows() {
            if self.rows.of[r] != source || self.rows.sizes[source] < 2 {
                continue;
            }
            let size = self.rows.sizes[source] as f64;
            let with = group_bits(self, source) / size;
            let profile = self.profile(r);
            self.shift(&profile, source, fresh);
            let without = group_bits(self, source) / (size - 1.0);
            self.shift(&profile, fresh, source);
            if without < with - IMPROVEMENT {
                self.move_row(r, &profile, fresh);
            }
        }
        self.cost = self.compute_cost();
        if self.rows.sizes[fresh] == 0 {
            None
        } else {
            Some(())
        }
    }

    fn finish(self) -> CoClustering {
        let l = self.l();
        let block_counts = (0..self.k()).map(|a| self.counts[a * l..(a + 1) * l].to_vec()).collect();
        CoClustering {
            row_groups: self.rows.groups(),
            col_groups: self.cols.groups(),
            block_counts,
            total_cost: self.cost,
            col_children: None,
        }
    }
}

/// Which sides the search may move and split.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Sides {
    Both,
    ColumnsOnly,
}

struct Faca<'a> {
    mat: &'a DiscreteMatrix,
    mat_t: DiscreteMatrix,
    sides: Sides,
}

impl<'a> Faca<'a> {
    fn new(mat: &'a DiscreteMatrix, sides: Sides) -> Self {
        Self { mat, mat_t: mat.transpose(), sides }
    }

    fn reassign_columns<'s>(&'s self, s: Search<'s>, history: &mut Option<&mut Vec<f64>>) -> (Search<'s>, bool) {
        let mut t = s.transposed(&self.mat_t);
        let moved = t.reassign_rows(history);
        t.prune();
        (t.transposed(self.mat), moved)
    }

    /// Alternates row and column reassignment until neither side moves.
    fn converge<'s>(&'s self, mut s: Search<'s>, history: &mut Option<&mut Vec<f64>>) -> Search<'s> {
        loop {
            let mut moved = false;
            if self.sides == Sides::Both {
                moved |= s.reassign_rows(history);
                s.prune();
            }
            let (next, col_moved) = self.reassign_columns(s, history);
            s = next;
            moved |= col_moved;
            if !moved {
                return s;
            }
        }
    }

    fn try_split<'s>(&'s self, s: Search<'s>, columns: bool) -> (Search<'s>, bool) {
        let before = s.clone();
        let mut trial = if columns { s.transposed(&self.mat_t) } else { s };
        if trial.seed_row_split().is_none() {
            return (before, false);
        }
        let trial = if columns { trial.transposed(self.mat) } else { trial };
        let trial = self.converge(trial, &mut None);
        if trial.cost < before.cost - IMPROVEMENT {
            (trial, true)
        } else {
            (before, false)
        }
    }

    fn run<'s>(&'s self, start: Search<'s>, mut history: Option<&mut Vec<f64>>) -> Search<'s> {
        if let Some(h) = history.as_mut() {
            h.push(start.cost);
        }
        let mut s = self.converge(start, &mut history);
        loop {
            let mut improved = false;
            if self.sides == Sides::Both {
                let (next, ok) = self.try_split(s, false);
                s = next;
                if ok {
                    improved = true;
                    if let Some(h) = history.as_mut() {
                        h.push(s.cost);
                    }
                }
            }
            let (next, ok) = self.try_split(s, true);
            s = next;
            if ok {
                improved = true;
                if let Some(h) = history.as_mut() {
                    h.push(s.cost);
                }
            }
            if !improved {
                return s;
            }
        }
    }
}

/// Fully automatic cross-associations from the 1×1 grouping.
pub fn faca(dm: &DiscreteMatrix) -> CoClustering {
    faca_traced(dm).0
}

/// As [`faca`], also returning the cost after every accepted move and split.
pub fn faca_traced(dm: &DiscreteMatrix) -> (CoClustering, Vec<f64>) {
    let mut history = Vec::new();
    let faca = Faca::new(dm, Sides::Both);
    let start = Search::new(dm, Partition::single(dm.rows()), Partition::single(dm.cols()));
    let out = faca.run(start, Some(&mut history)).finish();
    (out, history)
}

/// Cross-associations started from an existing partition, so group identities
/// stay stable between recomputes. Falls back to a cold start when the shape changed.
pub fn faca_warm(dm: &DiscreteMatrix, previous: &CoClustering) -> CoClustering {
    let covers = |groups: &[Vec<usize>], n: usize| {
        let mut seen = vec![false; n];
        for &i in groups.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.iter().all(|&s| s) && groups.iter().all(|g| !g.is_empty())
    };
    if !covers(&previous.row_groups, dm.rows()) || !covers(&previous.col_groups, dm.cols()) {
        return faca(dm);
    }
    let faca = Faca::new(dm, Sides::Both);
    let start = Search::new(
        dm,
        Partition::from_groups(dm.rows(), &previous.row_groups),
        Partition::from_groups(dm.cols(), &previous.col_groups),
    );
    faca.run(start, None).finish()
}

/// Per-block fraction of the dominant category, and the size-weighted mean.
pub fn purity(cc: &CoClustering) -> (Vec<Vec<f64>>, f64) {
    let mut weighted = 0.0;
    let mut total = 0u64;
    let per_block = cc
        .block_counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    let t: u32 = c.iter().sum();
                    let max = *c.iter().max().unwrap_or(&0);
                    weighted += max as f64;
                    total += t as u64;
                    if t == 0 {
                        1.0
                    } else {
                        max as f64 / t as f64
                    }
                })
                .collect()
        })
        .collect();
    let global = if total == 0 { 1.0 } else { weighted / total as f64 };
    (per_block, global)
}

pub const DEFAULT_MAX_LEAF: usize = 50;

/// Recursively splits every column group larger than `max_leaf` with the row
/// groups held fixed. When MDL refuses to split an oversized group it is
/// bisected by its mean influence sign and the node is flagged `forced`.
pub fn refine_hierarchy(dm: &DiscreteMatrix, cc: &CoClustering, max_leaf: usize) -> CoClustering {
    let max_leaf = max_leaf.max(1);
    let mut out = cc.clone();
    if cc.col_groups.iter().all(|g| g.len() <= max_leaf) {
        out.col_children = None;
        return out;
    }
    let row_of = cc.row_labels();
    out.col_children = Some(cc.col_groups.iter().map(|g| build_tree(dm, &cc.row_groups, &row_of, g.clone(), max_leaf)).collect());
    out
}

fn build_tree(dm: &DiscreteMatrix, row_groups: &[Vec<usize>], row_of: &[usize], members: Vec<usize>, max_leaf: usize) -> ColumnTree {
    if members.len() <= max_leaf {
        return ColumnTree { members, children: Vec::new(), forced: false };
    }
    let sub = dm.select_columns(&members);
    let faca = Faca::new(&sub, Sides::ColumnsOnly);
    let start = Search::new(&sub, Partition::from_groups(dm.rows(), row_groups), Partition::single(sub.cols()));
    let found = faca.run(start, None).finish();

    let (parts, forced) = if found.col_groups.len() >= 2 {
        let parts = found.col_groups.iter().map(|g| g.iter().map(|&c| members[c]).collect()).collect();
        (parts, false)
    } else {
        (bisect(dm, row_of, &members), true)
    };
    let children = parts
        .into_iter()
        .map(|p: Vec<usize>| build_tree(dm, row_groups, row_of, p, max_leaf))
        .collect();
    ColumnTree { members, children, forced }
}

/// Balanced split of columns ordered by (POS − NEG) count, ties by index.
fn bisect(dm: &DiscreteMatrix, _row_of: &[usize], members: &[usize]) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(i64, usize)> = members
        .iter()
        .map(|&c| {
            let score: i64 = (0..dm.rows())
                .map(|r| match dm.get(r, c) {
                    Category::Pos => 1,
                    Category::Neu => 0,
                    Category::Neg => -1,
                })
                .sum();
            (score, c)
        })
        .collect();
    keyed.sort_unstable();
    let half = keyed.len() / 2;
    let mut lo: Vec<usize> = keyed[..half].iter().map(|&(_, c)| c).collect();
    let mut hi: Vec<usize> = keyed[half..].iter().map(|&(_, c)| c).collect();
    lo.sort_unstable();
    hi.sort_unstable();
    vec![lo, hi]
}

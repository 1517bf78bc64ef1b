//! Labelled samples, splits, and the synthetic noisy/imbalanced generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::sq_dist;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub observed_label: usize,
    pub true_label: Option<usize>,
    pub payload: Option<String>,
}

impl Sample {
    pub fn is_mislabeled(&self) -> Option<bool> {
        self.true_label.map(|t| t != self.observed_label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Splits {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
    pub splits: Splits,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(num_classes: usize, feature_dim: usize, samples: Vec<Sample>, splits: Splits) -> Result<Self> {
        let ds = Self { num_classes, feature_dim, samples, splits };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!("num_classes must be >= 2 (got {})", self.num_classes)));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id) {
                return Err(Error::DuplicateId { id: s.id });
            }
            if s.features.len() != self.feature_dim {
                return Err(Error::DimensionMismatch { id: s.id, expected: self.feature_dim, found: s.features.len() });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeatures { id: s.id });
            }
            for label in core::iter::once(s.observed_label).chain(s.true_label) {
                if label >= self.num_classes {
                    return Err(Error::InvalidClassIndex { id: s.id, label, num_classes: self.num_classes });
                }
            }
        }
        let mut seen = BTreeSet::new();
        for &id in self.splits.train.iter().chain(&self.splits.validation).chain(&self.splits.test) {
            if !seen.insert(id) {
                return Err(Error::OverlappingSplits { id });
            }
            if !ids.contains(&id) {
                return Err(Error::SplitCoverage { id, problem: "listed in a split but not declared" });
            }
        }
        if let Some(&id) = ids.iter().find(|id| !seen.contains(id)) {
            return Err(Error::SplitCoverage { id, problem: "declared but not assigned to any split" });
        }
        Ok(())
    }

    /// Map from sample id to its position in `samples`.
    pub fn index(&self) -> BTreeMap<u64, usize> {
        self.samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect()
    }

    pub fn sample(&self, id: u64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn sample_mut(&mut self, id: u64) -> Option<&mut Sample> {
        self.samples.iter_mut().find(|s| s.id == id)
    }

    /// Samples of a split, in split order.
    pub fn split_samples(&self, split: Split) -> Vec<&Sample> {
        let index = self.index();
        self.splits.ids(split).iter().map(|id| &self.samples[index[id]]).collect()
    }

    pub fn next_id(&self) -> u64 {
        self.samples.iter().map(|s| s.id + 1).max().unwrap_or(0)
    }

    pub fn class_counts(&self, split: Split, observed: bool) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for s in self.split_samples(split) {
            let label = if observed { s.observed_label } else { s.true_label.unwrap_or(s.observed_label) };
            counts[label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetGenConfig {
    pub num_classes: usize,
    /// Training count of the largest class.
    pub per_class: usize,
    pub noise_ratio: f64,
    /// Largest-to-smallest training class ratio (λ).
    pub imbalance_factor: f64,
    pub val_per_class: usize,
    pub val_noise_ratio: f64,
    pub test_per_class: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for DatasetGenConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 100,
            noise_ratio: 0.0,
            imbalance_factor: 1.0,
            val_per_class: 10,
            val_noise_ratio: 0.2,
            test_per_class: 100,
            feature_dim: 2,
            class_separation: 3.0,
            seed: 0,
        }
    }
}

impl DatasetGenConfig {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2 (got {})", self.num_classes));
        }
        if self.per_class < 1 || self.val_per_class < 1 {
            return bad("per_class and val_per_class must be >= 1".into());
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be >= 1".into());
        }
        for (name, r) in [("noise_ratio", self.noise_ratio), ("val_noise_ratio", self.val_noise_ratio)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1) (got {r})"));
            }
        }
        if !(self.imbalance_factor >= 1.0) || !self.imbalance_factor.is_finite() {
            return bad(format!("imbalance_factor must be >= 1 (got {})", self.imbalance_factor));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return bad(format!("class_separation must be > 0 (got {})", self.class_separation));
        }
        Ok(())
    }

    /// Training counts per class: `per_class · λ^(−c/(C−1))`, rounded half away from zero.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        self.check()?;
        let c_max = (self.num_classes - 1) as f64;
        let counts: Vec<usize> = (0..self.num_classes)
            .map(|c| {
                let scale = libm::pow(self.imbalance_factor, -(c as f64) / c_max);
                libm::round(self.per_class as f64 * scale) as usize
            })
            .collect();
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "imbalance factor {} leaves class {c} with no training samples",
                self.imbalance_factor
            )));
        }
        Ok(counts)
    }
}

/// Class means: on a circle in the first two dimensions with adjacent means
/// `class_separation` apart, or on a line when `d = 1`.
pub fn class_means(num_classes: usize, feature_dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut mean = alloc::vec![0.0; feature_dim];
            if feature_dim == 1 {
                mean[0] = separation * (c as f64 - (num_classes - 1) as f64 / 2.0);
            } else {
                let radius = separation / (2.0 * libm::sin(core::f64::consts::PI / num_classes as f64));
                let angle = 2.0 * core::f64::consts::PI * c as f64 / num_classes as f64;
                mean[0] = radius * libm::cos(angle);
                mean[1] = radius * libm::sin(angle);
            }
            mean
        })
        .collect()
}

/// The most-confusable class of every class: the other class whose mean is
/// nearest to its own mean, ties to the lower index.
pub fn confusable_classes(means: &[Vec<f64>]) -> Vec<usize> {
    (0..means.len()).map(|c| nearest_other_class(&means[c], means, c)).collect()
}

fn nearest_other_class(x: &[f64], means: &[Vec<f64>], exclude: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for (c, m) in means.iter().enumerate() {
        if c == exclude {
            continue;
        }
        let d = sq_dist(x, m);
        if d < best_d - 1e-9 * (1.0 + best_d.min(d)) {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Deterministic synthetic dataset with Pareto-style imbalance and
/// confusion-structured label noise.
///
/// Ids are assigned train first, then validation, then test, class-major
/// within each split. A noisy sample takes the label of its class's
/// most-confusable class (see [`confusable_classes`]).
pub fn generate(config: &DatasetGenConfig) -> Result<Dataset> {
    let counts = config.class_counts()?;
    let means = class_means(config.num_classes, config.feature_dim, config.class_separation);
    let mut rng = Rng::new(config.seed);
    let mut samples = Vec::new();
    let mut splits = Splits::default();

    let draw = |rng: &mut Rng, class: usize, tag: &str, out: &mut Vec<u64>, samples: &mut Vec<Sample>| {
        let id = samples.len() as u64;
        let features = means[class].iter().map(|m| m + rng.normal()).collect();
        samples.push(Sample {
            id,
            features,
            observed_label: class,
            true_label: Some(class),
            payload: Some(format!("{tag}/class-{class}/#{id}")),
        });
        out.push(id);
    };

    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            draw(&mut rng, class, "train", &mut splits.train, &mut samples);
        }
    }
    for class in 0..config.num_classes {
        for _ in 0..config.val_per_class {
            draw(&mut rng, class, "val", &mut splits.validation, &mut samples);
        }
    }
    for class in 0..config.num_classes {
        for _ in 0..config.test_per_class {
            draw(&mut rng, class, "test", &mut splits.test, &mut samples);
        }
    }

    let confusable = confusable_classes(&means);
    for (ids, ratio) in [(&splits.train, config.noise_ratio), (&splits.validation, config.val_noise_ratio)] {
        let n_noisy = libm::floor(ratio * ids.len() as f64) as usize;
        for pick in rng.choose_distinct(ids.len(), n_noisy) {
            let s = &mut samples[ids[pick] as usize];
            s.observed_label = confusable[s.observed_label];
        }
    }

    Dataset::new(config.num_classes, config.feature_dim, samples, splits)
}

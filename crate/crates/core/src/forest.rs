//! Random forest over robust-z feature vectors.
//!
//! Trees are grown on bootstrap samples with Gini impurity weighted by
//! balanced class weights (`N / (4·N_c)`). Each tree owns a ChaCha RNG
//! seeded with `seed + tree_index`, so parallel and sequential training
//! produce the same model.
//!
//! Ties are broken deterministically: equal split gains keep the lowest
//! feature index and then the lowest threshold; equal class probabilities
//! resolve by state priority.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::signal::{argmax_state, Attribution, AttentionState, EstimateSource, StateEstimate};
use crate::stats::{self, StatsError};

pub const MODEL_VERSION: u32 = 1;
const N_CLASSES: usize = 4;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForestError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data has a single class; set allow_single_class to permit it")]
    SingleClass,
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("model feature order does not match the feature vector layout")]
    FeatureMismatch,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("need at least {folds} groups for {folds}-fold cross-validation, got {groups}")]
    TooFewGroups { groups: usize, folds: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("model (de)serialization: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    /// Balanced class weights; plain counts when false.
    pub balanced: bool,
    pub allow_single_class: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: (FEATURE_COUNT as f64).sqrt().ceil() as usize,
            balanced: true,
            allow_single_class: false,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if self.features_per_split == 0 || self.features_per_split > FEATURE_COUNT {
            return Err(ForestError::InvalidConfig(format!(
                "features_per_split must be in 1..={FEATURE_COUNT}"
            )));
        }
        Ok(())
    }
}

/// One node of a flattened tree. Split nodes send `x[feature] <= threshold`
/// to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    /// Weighted impurity decrease of the split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    /// Class-weighted histogram at a leaf.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_histogram: Option<[f64; N_CLASSES]>,
}

impl TreeNode {
    fn leaf(hist: [f64; N_CLASSES]) -> Self {
        TreeNode {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            gain: None,
            leaf_histogram: Some(hist),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64; FEATURE_COUNT]) -> &[f64; N_CLASSES] {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if let Some(h) = &node.leaf_histogram {
                return h;
            }
            let (f, t) = (node.feature.unwrap(), node.threshold.unwrap());
            i = if x[f] <= t {
                node.left.unwrap()
            } else {
                node.right.unwrap()
            };
        }
    }

    fn validate(&self) -> Result<(), ForestError> {
        let bad = |msg: String| Err(ForestError::InvalidModel(msg));
        if self.nodes.is_empty() {
            return bad("tree without nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match (&n.leaf_histogram, n.feature, n.threshold, n.left, n.right) {
                (Some(h), None, None, None, None) => {
                    if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || h.iter().sum::<f64>() <= 0.0 {
                        return bad(format!("node {i}: leaf histogram must be non-negative with positive total"));
                    }
                }
                (None, Some(f), Some(t), Some(l), Some(r)) => {
                    if f >= FEATURE_COUNT || !t.is_finite() {
                        return bad(format!("node {i}: bad split"));
                    }
                    // children always follow their parent
                    if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() {
                        return bad(format!("node {i}: child index out of order"));
                    }
                }
                _ => return bad(format!("node {i}: neither a split nor a leaf")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub cfg: ForestConfig,
    pub seed: u64,
    pub feature_order: Vec<String>,
    pub class_weights: [f64; N_CLASSES],
    pub trees: Vec<Tree>,
    /// Free-form provenance (tool version, flags), written by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl ForestModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let model: ForestModel =
            serde_json::from_str(text).map_err(|e| ForestError::Serde(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.version != MODEL_VERSION {
            return Err(ForestError::InvalidModel(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if self.feature_order.len() != FEATURE_COUNT
            || self.feature_order.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(ForestError::FeatureMismatch);
        }
        if self.trees.is_empty() {
            return Err(ForestError::InvalidModel("no trees".into()));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ForestError::InvalidModel("class weights must be positive".into()));
        }
        self.trees.iter().try_for_each(Tree::validate)
    }

    /// Mean of the per-tree normalized leaf histograms.
    pub fn predict_probs(&self, x: &[f64; FEATURE_COUNT]) -> [f64; N_CLASSES] {
        let mut acc = [0.0; N_CLASSES];
        for tree in &self.trees {
            let h = tree.leaf_for(x);
            let total: f64 = h.iter().sum();
            for c in 0..N_CLASSES {
                acc[c] += h[c] / total;
            }
        }
        let sum: f64 = acc.iter().sum();
        acc.map(|v| v / sum)
    }
}

/// Classifies one feature vector. Attributions are the three largest
/// absolute deviations of the input.
pub fn predict_proba(model: &ForestModel, fv: &FeatureVector) -> Result<StateEstimate, ForestError> {
    if model.feature_order.len() != FEATURE_COUNT {
        return Err(ForestError::FeatureMismatch);
    }
    let probs = model.predict_probs(&fv.values);
    Ok(StateEstimate {
        t_ms: fv.t_end_ms,
        state: argmax_state(&probs),
        probs,
        attributions: attributions(fv),
        source: EstimateSource::Classifier,
    })
}

pub fn attributions(fv: &FeatureVector) -> Vec<Attribution> {
    fv.top_deviations(3)
        .into_iter()
        .map(|(f, v)| Attribution {
            feature: f.dev_name().to_string(),
            deviation: v,
        })
        .collect()
}

/// Balanced weights `N / (4·N_c)`; absent classes get weight 1.
pub fn balanced_class_weights(labels: &[AttentionState]) -> [f64; N_CLASSES] {
    let mut counts = [0usize; N_CLASSES];
    for s in labels {
        counts[s.index()] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| {
        if c == 0 {
            1.0
        } else {
            n / (N_CLASSES as f64 * c as f64)
        }
    })
}

struct TrainSet<'a> {
    x: &'a [[f64; FEATURE_COUNT]],
    y: &'a [usize],
    weights: [f64; N_CLASSES],
}

fn weighted_sum_sq(h: &[f64; N_CLASSES]) -> f64 {
    h.iter().map(|v| v * v).sum()
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct TreeBuilder<'a> {
    data: &'a TrainSet<'a>,
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn histogram(&self, idx: &[usize]) -> [f64; N_CLASSES] {
        let mut h = [0.0; N_CLASSES];
        for &i in idx {
            let c = self.data.y[i];
            h[c] += self.data.weights[c];
        }
        h
    }

    fn best_split(&mut self, idx: &[usize], hist: &[f64; N_CLASSES]) -> Option<SplitChoice> {
        let total_w: f64 = hist.iter().sum();
        let parent = weighted_sum_sq(hist) / total_w;
        let mut features: Vec<usize> =
            sample(&mut self.rng, FEATURE_COUNT, self.cfg.features_per_split).into_vec();
        features.sort_unstable();

        let n = idx.len();
        let min_leaf = self.cfg.min_leaf;
        let mut best: Option<SplitChoice> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data.x[i][f], self.data.y[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0.0; N_CLASSES];
            for j in 0..n - 1 {
                let c = column[j].1;
                left[c] += self.data.weights[c];
                let (lo, hi) = (column[j].0, column[j + 1].0);
                if lo == hi || j + 1 < min_leaf || n - j - 1 < min_leaf {
                    continue;
                }
                let mut right = [0.0; N_CLASSES];
                for k in 0..N_CLASSES {
                    right[k] = (hist[k] - left[k]).max(0.0);
                }
                let wl: f64 = left.iter().sum();
                let wr: f64 = right.iter().sum();
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let gain = weighted_sum_sq(&left) / wl + weighted_sum_sq(&right) / wr - parent;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let hist = self.histogram(&idx);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::leaf(hist));

        let pure = hist.iter().filter(|&&w| w > 0.0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx, &hist) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.data.x[i][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = TreeNode {
            feature: Some(split.feature),
            threshold: Some(split.threshold),
            left: Some(l),
            right: Some(r),
            gain: Some(split.gain),
            leaf_histogram: None,
        };
        id
    }
}

fn grow_tree(data: &TrainSet<'_>, cfg: &ForestConfig, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.x.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut builder = TreeBuilder {
        data,
        cfg,
        rng,
        nodes: Vec::new(),
    };
    builder.grow(bootstrap, 0);
    Tree {
        nodes: builder.nodes,
    }
}

/// Trains a forest. Deterministic for fixed data, config and seed.
pub fn train(
    data: &[(FeatureVector, AttentionState)],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ForestError::EmptyData);
    }
    let labels: Vec<AttentionState> = data.iter().map(|(_, s)| *s).collect();
    let distinct = AttentionState::ALL
        .iter()
        .filter(|s| labels.contains(s))
        .count();
    if distinct < 2 && !cfg.allow_single_class {
        return Err(ForestError::SingleClass);
    }
    if data.iter().any(|(fv, _)| fv.values.iter().any(|v| !v.is_finite())) {
        return Err(ForestError::InvalidConfig("feature values must be finite".into()));
    }
    let x: Vec<[f64; FEATURE_COUNT]> = data.iter().map(|(fv, _)| fv.values).collect();
    let y: Vec<usize> = labels.iter().map(|s| s.index()).collect();
    let weights = if cfg.balanced {
        balanced_class_weights(&labels)
    } else {
        [1.0; N_CLASSES]
    };
    let set = TrainSet {
        x: &x,
        y: &y,
        weights,
    };
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&set, cfg, seed.wrapping_add(t as u64)))
        .collect();
    Ok(ForestModel {
        version: MODEL_VERSION,
        cfg: cfg.clone(),
        seed,
        feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        class_weights: weights,
        trees,
        meta: None,
    })
}

/// Mean impurity decrease per feature, each tree normalized before
/// averaging. A forest without any split reports uniform importances.
pub fn feature_importances(model: &ForestModel) -> [f64; FEATURE_COUNT] {
    let mut acc = [0.0; FEATURE_COUNT];
    for tree in &model.trees {
        let mut per_tree = [0.0; FEATURE_COUNT];
        for n in &tree.nodes {
            if let (Some(f), Some(g)) = (n.feature, n.gain) {
                per_tree[f] += g;
            }
        }
        let total: f64 = per_tree.iter().sum();
        if total > 0.0 {
            for f in 0..FEATURE_COUNT {
                acc[f] += per_tree[f] / total;
            }
        }
    }
    normalize_or_uniform(acc)
}

fn normalize_or_uniform(v: [f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.map(|x| x / total)
    } else {
        [1.0 / FEATURE_COUNT as f64; FEATURE_COUNT]
    }
}

/// Classification metrics over a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub per_class_f1: [f64; N_CLASSES],
    pub macro_f1: f64,
    /// Macro one-vs-rest AUC over classes with both positives and negatives.
    pub auc_ovr_macro: Option<f64>,
    /// Support-weighted one-vs-rest AUC.
    pub auc_ovr_weighted: Option<f64>,
    pub per_class_auc: [Option<f64>; N_CLASSES],
    /// Rows are true states, columns predicted, in canonical state order.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
    pub support: [u64; N_CLASSES],
}

/// Accuracy, per-class and macro F1, and one-vs-rest AUC.
pub fn evaluate(
    truth: &[AttentionState],
    predicted: &[AttentionState],
    probs: &[[f64; N_CLASSES]],
) -> Result<Metrics, ForestError> {
    if truth.len() != predicted.len() || truth.len() != probs.len() {
        return Err(StatsError::LengthMismatch {
            left: truth.len(),
            right: predicted.len().min(probs.len()),
        }
        .into());
    }
    if truth.is_empty() {
        return Err(StatsError::EmptyInput.into());
    }
    let n = truth.len();
    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let support: [u64; N_CLASSES] = std::array::from_fn(|c| confusion[c].iter().sum());
    let correct: u64 = (0..N_CLASSES).map(|c| confusion[c][c]).sum();

    let per_class_f1: [f64; N_CLASSES] = std::array::from_fn(|c| {
        let tp = confusion[c][c] as f64;
        let fp = (0..N_CLASSES).map(|r| confusion[r][c]).sum::<u64>() as f64 - tp;
        let fn_ = support[c] as f64 - tp;
        let denom = 2.0 * tp + fp + fn_;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    });

    let mut per_class_auc = [None; N_CLASSES];
    for (c, slot) in per_class_auc.iter_mut().enumerate() {
        let (pos, neg): (Vec<(usize, f64)>, Vec<(usize, f64)>) = truth
            .iter()
            .zip(probs)
            .map(|(t, p)| (t.index(), p[c]))
            .partition(|(t, _)| *t == c);
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let pos: Vec<f64> = pos.into_iter().map(|(_, s)| s).collect();
        let neg: Vec<f64> = neg.into_iter().map(|(_, s)| s).collect();
        *slot = Some(stats::roc_auc(&pos, &neg)?);
    }
    let defined: Vec<(usize, f64)> = per_class_auc
        .iter()
        .enumerate()
        .filter_map(|(c, a)| a.map(|v| (c, v)))
        .collect();
    let auc_ovr_macro =
        (!defined.is_empty()).then(|| defined.iter().map(|(_, a)| a).sum::<f64>() / defined.len() as f64);
    let auc_ovr_weighted = (!defined.is_empty()).then(|| {
        let w: f64 = defined.iter().map(|(c, _)| support[*c] as f64).sum();
        defined.iter().map(|(c, a)| a * support[*c] as f64).sum::<f64>() / w
    });

    Ok(Metrics {
        n,
        accuracy: correct as f64 / n as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / N_CLASSES as f64,
        per_class_f1,
        auc_ovr_macro,
        auc_ovr_weighted,
        per_class_auc,
        confusion,
        support,
    })
}

/// One training sample tagged with the participant it came from.
#[derive(Debug, Clone)]
pub struct GroupedSample {
    pub group: String,
    pub features: FeatureVector,
    pub label: AttentionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Mean of the fold models' importances, in feature order.
    pub feature_importances: [f64; FEATURE_COUNT],
    pub fold_assignments: BTreeMap<String, usize>,
    pub folds: usize,
    pub seed: u64,
    pub cfg: ForestConfig,
}

impl EvalReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let m = &self.metrics;
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>10}", "metric", "value");
        let _ = writeln!(out, "{:<28}{:>10}", "samples", m.n);
        let _ = writeln!(out, "{:<28}{:>10.4}", "accuracy", m.accuracy);
        let _ = writeln!(out, "{:<28}{:>10.4}", "macro_f1", m.macro_f1);
        let _ = writeln!(out, "{:<28}{:>10}", "auc_ovr_macro", fmt_opt(m.auc_ovr_macro));
        let _ = writeln!(out, "{:<28}{:>10}", "auc_ovr_weighted", fmt_opt(m.auc_ovr_weighted));
        for s in AttentionState::ALL {
            let _ = writeln!(
                out,
                "{:<28}{:>10.4}",
                format!("f1_{}", s.as_str().to_lowercase()),
                m.per_class_f1[s.index()]
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<28}{:>10}", "feature", "importance");
        for f in Feature::ALL {
            let _ = writeln!(out, "{:<28}{:>10.4}", f.dev_name(), self.feature_importances[f.index()]);
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<14}", "true\\pred");
        for s in AttentionState::ALL {
            let _ = write!(out, "{:>14}", s.as_str());
        }
        let _ = writeln!(out);
        for s in AttentionState::ALL {
            let _ = write!(out, "{:<14}", s.as_str());
            for c in 0..N_CLASSES {
                let _ = write!(out, "{:>14}", m.confusion[s.index()][c]);
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// Assigns whole groups to `k` folds. Largest groups go first; each of the
/// first `k` seeds its own fold, later groups go to the fold whose class
/// counts end up closest to the per-fold target.
pub fn assign_folds(
    samples: &[GroupedSample],
    k: usize,
) -> Result<BTreeMap<String, usize>, ForestError> {
    let mut groups: BTreeMap<&str, [f64; N_CLASSES]> = BTreeMap::new();
    for s in samples {
        groups.entry(&s.group).or_insert([0.0; N_CLASSES])[s.label.index()] += 1.0;
    }
    if k < 2 || groups.len() < k {
        return Err(ForestError::TooFewGroups {
            groups: groups.len(),
            folds: k,
        });
    }
    let mut totals = [0.0; N_CLASSES];
    for counts in groups.values() {
        for c in 0..N_CLASSES {
            totals[c] += counts[c];
        }
    }
    let target = totals.map(|t| t / k as f64);

    let mut order: Vec<(&str, [f64; N_CLASSES])> = groups.into_iter().collect();
    order.sort_by(|a, b| {
        let (sa, sb): (f64, f64) = (a.1.iter().sum(), b.1.iter().sum());
        sb.total_cmp(&sa).then(a.0.cmp(b.0))
    });

    let mut fold_counts = vec![[0.0; N_CLASSES]; k];
    let mut assignment = BTreeMap::new();
    for (i, (group, counts)) in order.into_iter().enumerate() {
        let fold = if i < k {
            i
        } else {
            let cost = |f: usize| -> f64 {
                (0..N_CLASSES)
                    .map(|c| (fold_counts[f][c] + counts[c] - target[c]).powi(2))
                    .sum()
            };
            (0..k)
                .min_by(|&a, &b| {
                    cost(a).total_cmp(&cost(b)).then_with(|| {
                        let na: f64 = fold_counts[a].iter().sum();
                        let nb: f64 = fold_counts[b].iter().sum();
                        na.total_cmp(&nb)
                    })
                })
                .expect("k >= 2")
        };
        for c in 0..N_CLASSES {
            fold_counts[fold][c] += counts[c];
        }
        assignment.insert(group.to_string(), fold);
    }
    Ok(assignment)
}

/// Grouped k-fold cross-validation. Metrics pool the held-out predictions of
/// every fold; fold `f` trains with seed `seed + 1_000_003·f`.
pub fn cross_validate(
    samples: &[GroupedSample],
    k: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<EvalReport, ForestError> {
    cfg.validate()?;
    let assignment = assign_folds(samples, k)?;
    let fold_of: Vec<usize> = samples.iter().map(|s| assignment[&s.group]).collect();

    let mut truth = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    let mut probs = Vec::with_capacity(samples.len());
    let mut importances = [0.0; FEATURE_COUNT];
    for fold in 0..k {
        let train_set: Vec<(FeatureVector, AttentionState)> = samples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &f)| f != fold)
            .map(|(s, _)| (s.features.clone(), s.label))
            .collect();
        let model = train(&train_set, cfg, seed.wrapping_add(1_000_003 * fold as u64))?;
        let imp = feature_importances(&model);
        for f in 0..FEATURE_COUNT {
            importances[f] += imp[f] / k as f64;
        }
        for (s, _) in samples.iter().zip(&fold_of).filter(|(_, &f)| f == fold) {
            let p = model.predict_probs(&s.features.values);
            truth.push(s.label);
            predicted.push(argmax_state(&p));
            probs.push(p);
        }
    }
    Ok(EvalReport {
        metrics: evaluate(&truth, &predicted, &probs)?,
        feature_importances: normalize_or_uniform(importances),
        fold_assignments: assignment,
        folds: k,
        seed,
        cfg: cfg.clone(),
    })
}

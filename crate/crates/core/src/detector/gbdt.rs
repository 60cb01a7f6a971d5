//! Gradient-boosted decision trees for binary log-loss.
//!
//! Numeric features split on histogram cut points. Categorical features
//! either split natively on category sets (categories ordered by their
//! gradient ratio, prefix partitions scanned) or are mapped to ordinal codes
//! and treated as numbers.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorError, Feature, FeatureKind, LabeledTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMode {
    Native,
    Ordinal,
}

impl CategoricalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CategoricalMode::Native => "native",
            CategoricalMode::Ordinal => "ordinal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub categorical_mode: CategoricalMode,
    pub seed: u64,
    pub histogram_bins: usize,
    pub lambda: f64,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample: f64,
    pub min_child_hessian: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 500,
            learning_rate: 0.01,
            max_depth: 5,
            categorical_mode: CategoricalMode::Native,
            seed: 200,
            histogram_bins: 64,
            lambda: 1.0,
            subsample: 1.0,
            min_child_hessian: 1e-6,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::InvalidConfig(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.histogram_bins < 2 {
            return bad("histogram_bins must be at least 2");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

/// Named configurations mirroring three boosting libraries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub config: GbdtConfig,
}

pub fn default_presets() -> Vec<Preset> {
    let base = GbdtConfig::default();
    vec![
        Preset {
            name: "catboost-like".into(),
            config: GbdtConfig {
                categorical_mode: CategoricalMode::Native,
                seed: 200,
                ..base.clone()
            },
        },
        Preset {
            name: "xgboost-like".into(),
            config: GbdtConfig {
                categorical_mode: CategoricalMode::Ordinal,
                seed: 200,
                ..base.clone()
            },
        },
        Preset {
            name: "lgbm-like".into(),
            config: GbdtConfig {
                categorical_mode: CategoricalMode::Native,
                seed: 100,
                subsample: 0.8,
                ..base
            },
        },
    ]
}

/// How one input feature is turned into a split variable.
#[derive(Debug, Clone, PartialEq)]
enum Encoder {
    /// Ascending cut points; bin `b` holds `x ≤ cuts[b]`, the last bin the
    /// rest.
    Numeric { cuts: Vec<f64> },
    Categorical {
        index: HashMap<String, u32>,
        names: Vec<String>,
    },
    /// Category → number: the parsed value when every training category is
    /// numeric, otherwise its lexicographic rank.
    Ordinal {
        numeric: bool,
        sorted: Vec<String>,
        cuts: Vec<f64>,
    },
}

fn cut_points(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let mut unique = finite.clone();
    unique.dedup();
    if unique.len() <= 1 {
        return Vec::new();
    }
    if unique.len() <= bins {
        return unique.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = finite.len();
    let mut cuts: Vec<f64> = (1..bins).map(|b| finite[(b * n / bins).min(n - 1)]).collect();
    cuts.dedup();
    if cuts.last() == unique.last() {
        cuts.pop();
    }
    cuts
}

fn numeric_bin(cuts: &[f64], x: f64) -> u32 {
    if x.is_nan() {
        return cuts.len() as u32;
    }
    cuts.partition_point(|&c| c < x) as u32
}

impl Encoder {
    fn ordinal_value(numeric: bool, sorted: &[String], v: &str) -> f64 {
        if numeric {
            if let Ok(x) = v.parse::<f64>() {
                return x;
            }
        }
        match sorted.binary_search_by(|s| s.as_str().cmp(v)) {
            Ok(i) => i as f64,
            Err(i) => i as f64 - 0.5,
        }
    }

    fn fit(kind: FeatureKind, column: Vec<&Feature>, mode: CategoricalMode, bins: usize) -> Encoder {
        match (kind, mode) {
            (FeatureKind::Numeric, _) => {
                let mut values: Vec<f64> = column.iter().map(|f| f.number()).collect();
                Encoder::Numeric {
                    cuts: cut_points(&mut values, bins),
                }
            }
            (FeatureKind::Categorical, CategoricalMode::Native) => {
                let mut index = HashMap::new();
                let mut names = Vec::new();
                for f in column {
                    let c = f.category();
                    if !index.contains_key(c) {
                        index.insert(c.to_string(), names.len() as u32);
                        names.push(c.to_string());
                    }
                }
                Encoder::Categorical { index, names }
            }
            (FeatureKind::Categorical, CategoricalMode::Ordinal) => {
                let mut sorted: Vec<String> = column.iter().map(|f| f.category().to_string()).collect();
                sorted.sort();
                sorted.dedup();
                let numeric = sorted.iter().all(|s| s.parse::<f64>().is_ok());
                let mut values: Vec<f64> = column
                    .iter()
                    .map(|f| Encoder::ordinal_value(numeric, &sorted, f.category()))
                    .collect();
                Encoder::Ordinal {
                    numeric,
                    cuts: cut_points(&mut values, bins),
                    sorted,
                }
            }
        }
    }

    fn bins(&self) -> usize {
        match self {
            Encoder::Numeric { cuts } | Encoder::Ordinal { cuts, .. } => cuts.len() + 1,
            Encoder::Categorical { names, .. } => names.len(),
        }
    }

    /// Training-time bin of a value known to the encoder.
    fn bin(&self, f: &Feature) -> u32 {
        match self {
            Encoder::Numeric { cuts } => numeric_bin(cuts, f.number()),
            Encoder::Ordinal { numeric, sorted, cuts } => {
                numeric_bin(cuts, Encoder::ordinal_value(*numeric, sorted, f.category()))
            }
            Encoder::Categorical { index, .. } => index[f.category()],
        }
    }

    fn is_categorical(&self) -> bool {
        matches!(self, Encoder::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Left when the split variable is at most `threshold`.
    Numeric {
        feature: usize,
        threshold: f64,
        bin: u32,
        left: usize,
        right: usize,
    },
    /// Left for categories in `left_set`, right for `right_set`, anything
    /// else follows the child that received more training rows.
    Categorical {
        feature: usize,
        left_set: Vec<u32>,
        right_set: Vec<u32>,
        left: usize,
        right: usize,
        default_left: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Numeric { left, right, .. } | TreeNode::Categorical { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    feature_names: Vec<String>,
    encoders: Vec<Encoder>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary log-loss of raw scores.
pub fn log_loss(labels: &[bool], scores: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .zip(scores)
        .map(|(&y, &s)| {
            // ln(1 + e^{-s}) for positives, ln(1 + e^{s}) for negatives
            let z = if y { -s } else { s };
            if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
        })
        .sum::<f64>()
        / n
}

struct Split {
    gain: f64,
    feature: usize,
    kind: SplitKind,
}

enum SplitKind {
    /// Bins `0..=bin` go left.
    Threshold(u32),
    Set { left: Vec<u32>, right: Vec<u32> },
}

struct Grower<'a> {
    binned: &'a [Vec<u32>],
    encoders: &'a [Encoder],
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a GbdtConfig,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.config.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let (g_tot, h_tot) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r], h + self.hess[r]));
        let parent = self.score(g_tot, h_tot);
        let min_h = self.config.min_child_hessian;
        let mut best: Option<Split> = None;
        for (f, enc) in self.encoders.iter().enumerate() {
            let nb = enc.bins();
            if nb < 2 {
                continue;
            }
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            let col = &self.binned[f];
            for &r in rows {
                let b = col[r] as usize;
                hg[b] += self.grad[r];
                hh[b] += self.hess[r];
                hc[b] += 1;
            }
            let order: Vec<usize> = if enc.is_categorical() {
                let mut present: Vec<usize> = (0..nb).filter(|&b| hc[b] > 0).collect();
                present.sort_by(|&a, &b| {
                    let ra = hg[a] / (hh[a] + self.config.lambda);
                    let rb = hg[b] / (hh[b] + self.config.lambda);
                    ra.total_cmp(&rb).then(a.cmp(&b))
                });
                present
            } else {
                (0..nb).collect()
            };
            let (mut gl, mut hl) = (0.0, 0.0);
            for (i, &b) in order.iter().enumerate().take(order.len().saturating_sub(1)) {
                gl += hg[b];
                hl += hh[b];
                if hc[b] == 0 && !enc.is_categorical() {
                    continue;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                if hl < min_h || hr < min_h {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    let kind = if enc.is_categorical() {
                        let mut left: Vec<u32> = order[..=i].iter().map(|&b| b as u32).collect();
                        let mut right: Vec<u32> = order[i + 1..].iter().map(|&b| b as u32).collect();
                        left.sort_unstable();
                        right.sort_unstable();
                        SplitKind::Set { left, right }
                    } else {
                        SplitKind::Threshold(b as u32)
                    };
                    best = Some(Split { gain, feature: f, kind });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r], h + self.hess[r]));
        self.nodes.push(TreeNode::Leaf {
            value: -self.config.learning_rate * g / (h + self.config.lambda),
        });
        if depth >= self.config.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(split) = self.best_split(&rows) else {
            return id;
        };
        let col = &self.binned[split.feature];
        let goes_left = |r: usize| match &split.kind {
            SplitKind::Threshold(t) => col[r] <= *t,
            SplitKind::Set { left, .. } => left.binary_search(&col[r]).is_ok(),
        };
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| goes_left(r));
        let default_left = lrows.len() >= rrows.len();
        let left = self.grow(lrows, depth + 1);
        let right = self.grow(rrows, depth + 1);
        self.nodes[id] = match split.kind {
            SplitKind::Threshold(t) => {
                let threshold = match &self.encoders[split.feature] {
                    Encoder::Numeric { cuts } | Encoder::Ordinal { cuts, .. } => cuts[t as usize],
                    Encoder::Categorical { .. } => unreachable!("categorical features split on sets"),
                };
                TreeNode::Numeric {
                    feature: split.feature,
                    threshold,
                    bin: t,
                    left,
                    right,
                }
            }
            SplitKind::Set { left: ls, right: rs } => TreeNode::Categorical {
                feature: split.feature,
                left_set: ls,
                right_set: rs,
                left,
                right,
                default_left,
            },
        };
        id
    }
}

impl GbdtModel {
    pub fn fit(train: &LabeledTable, config: &GbdtConfig) -> Result<GbdtModel, DetectorError> {
        Self::fit_traced(train, config, |_, _| {})
    }

    /// Same as [`GbdtModel::fit`], calling `trace(round, scores)` with the
    /// training scores after every round (round 0 is the base score).
    pub fn fit_traced(
        train: &LabeledTable,
        config: &GbdtConfig,
        mut trace: impl FnMut(usize, &[f64]),
    ) -> Result<GbdtModel, DetectorError> {
        config.validate()?;
        let n = train.len();
        if n == 0 {
            return Err(DetectorError::EmptyTrain);
        }
        let positives = train.labels.iter().filter(|&&y| y).count();
        if positives == 0 || positives == n {
            return Err(DetectorError::SingleClass);
        }
        let encoders: Vec<Encoder> = train
            .features
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                Encoder::fit(
                    spec.kind,
                    train.rows.iter().map(|r| &r[j]).collect(),
                    config.categorical_mode,
                    config.histogram_bins,
                )
            })
            .collect();
        let binned: Vec<Vec<u32>> = encoders
            .iter()
            .enumerate()
            .map(|(j, e)| train.rows.iter().map(|r| e.bin(&r[j])).collect())
            .collect();

        let prevalence = positives as f64 / n as f64;
        let base_score = (prevalence / (1.0 - prevalence)).ln();
        let mut scores = vec![base_score; n];
        trace(0, &scores);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut trees = Vec::with_capacity(config.rounds);
        let take = ((config.subsample * n as f64).round() as usize).clamp(1, n);

        for round in 1..=config.rounds {
            for i in 0..n {
                let p = sigmoid(scores[i]);
                grad[i] = p - if train.labels[i] { 1.0 } else { 0.0 };
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let mut rows: Vec<usize> = if take < n {
                sample(&mut rng, n, take).into_vec()
            } else {
                (0..n).collect()
            };
            rows.sort_unstable();
            let mut grower = Grower {
                binned: &binned,
                encoders: &encoders,
                grad: &grad,
                hess: &hess,
                config,
                nodes: Vec::new(),
            };
            grower.grow(rows, 0);
            let tree = Tree { nodes: grower.nodes };
            for (i, s) in scores.iter_mut().enumerate() {
                *s += tree_output_binned(&tree, &binned, i);
            }
            trace(round, &scores);
            trees.push(tree);
        }
        Ok(GbdtModel {
            config: config.clone(),
            base_score,
            trees,
            feature_names: train.features.iter().map(|f| f.name.clone()).collect(),
            encoders,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Category names by id for a natively split feature.
    pub fn vocabulary(&self, feature: usize) -> Option<&[String]> {
        match &self.encoders[feature] {
            Encoder::Categorical { names, .. } => Some(names),
            _ => None,
        }
    }

    fn goes_left(&self, node: &TreeNode, row: &[Feature]) -> bool {
        match node {
            TreeNode::Numeric { feature, threshold, .. } => {
                let x = match &self.encoders[*feature] {
                    Encoder::Ordinal { numeric, sorted, .. } => {
                        Encoder::ordinal_value(*numeric, sorted, row[*feature].category())
                    }
                    _ => row[*feature].number(),
                };
                x <= *threshold
            }
            TreeNode::Categorical {
                feature,
                left_set,
                right_set,
                default_left,
                ..
            } => {
                let Encoder::Categorical { index, .. } = &self.encoders[*feature] else {
                    unreachable!("set splits use categorical encoders")
                };
                match index.get(row[*feature].category()) {
                    Some(id) if left_set.binary_search(id).is_ok() => true,
                    Some(id) if right_set.binary_search(id).is_ok() => false,
                    _ => *default_left,
                }
            }
            TreeNode::Leaf { .. } => unreachable!("leaves do not route"),
        }
    }

    fn tree_output(&self, tree: &Tree, row: &[Feature]) -> f64 {
        let mut i = 0;
        loop {
            match &tree.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                node @ (TreeNode::Numeric { left, right, .. } | TreeNode::Categorical { left, right, .. }) => {
                    i = if self.goes_left(node, row) { *left } else { *right };
                }
            }
        }
    }

    /// Log-odds: base score plus every tree's leaf value.
    pub fn raw_score(&self, row: &[Feature]) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.tree_output(t, row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[Feature]) -> f64 {
        sigmoid(self.raw_score(row))
    }

    pub fn predict_table(&self, table: &LabeledTable) -> Result<Vec<f64>, DetectorError> {
        let names: Vec<&str> = table.features.iter().map(|f| f.name.as_str()).collect();
        if names != self.feature_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(DetectorError::FeatureMismatch);
        }
        Ok(table.rows.iter().map(|r| self.predict_proba(r)).collect())
    }

    /// Walks a tree and returns the visited split features and the leaf value,
    /// for inspection.
    pub fn path(&self, tree: usize, row: &[Feature]) -> (Vec<usize>, f64) {
        let t = &self.trees[tree];
        let mut i = 0;
        let mut visited = Vec::new();
        loop {
            match &t.nodes[i] {
                TreeNode::Leaf { value } => return (visited, *value),
                node @ (TreeNode::Numeric { feature, left, right, .. }
                | TreeNode::Categorical { feature, left, right, .. }) => {
                    visited.push(*feature);
                    i = if self.goes_left(node, row) { *left } else { *right };
                }
            }
        }
    }
}

fn tree_output_binned(tree: &Tree, binned: &[Vec<u32>], row: usize) -> f64 {
    let mut i = 0;
    loop {
        i = match &tree.nodes[i] {
            TreeNode::Leaf { value } => return *value,
            TreeNode::Numeric {
                feature, bin, left, right, ..
            } => {
                if binned[*feature][row] <= *bin {
                    *left
                } else {
                    *right
                }
            }
            TreeNode::Categorical {
                feature, left_set, left, right, ..
            } => {
                if left_set.binary_search(&binned[*feature][row]).is_ok() {
                    *left
                } else {
                    *right
                }
            }
        };
    }
}

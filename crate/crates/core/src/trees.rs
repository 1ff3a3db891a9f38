//! From-scratch CART classifier (Gini criterion, unlimited depth by
//! default), a bootstrap-aggregated tree ensemble, evaluation metrics, and
//! model import/export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, LabeledDataset, SymbolicState};

pub const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// None = unlimited.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

/// Arena node. Splits route rows with feature value <= threshold left,
/// > threshold right. Every node records its training-sample coverage; the
/// Shapley computation's conditional expectation is defined by these counts.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        coverage: f64,
    },
    Leaf {
        counts: Vec<f64>,
        probs: Vec<f64>,
        coverage: f64,
    },
}

impl Node {
    pub fn coverage(&self) -> f64 {
        match self {
            Node::Split { coverage, .. } | Node::Leaf { coverage, .. } => *coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
    pub schema_hash: u64,
    pub seed: u64,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<TreeModel>,
    pub schema_hash: u64,
}

pub trait Predictor {
    fn predict_proba(&self, state: &SymbolicState) -> Vec<f64>;
    fn n_classes(&self) -> usize;

    /// Argmax with lowest-index tie-break.
    fn predict(&self, state: &SymbolicState) -> usize {
        argmax(&self.predict_proba(state))
    }
}

pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

struct FitContext<'a> {
    data: &'a LabeledDataset,
    n_features: usize,
    n_classes: usize,
    params: TreeParams,
    nodes: Vec<Node>,
}

impl FitContext<'_> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.data.rows[row].state.values[feature]
    }

    fn label(&self, row: usize) -> usize {
        self.data.rows[row].label
    }

    fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &r in rows {
            counts[self.label(r)] += 1;
        }
        counts
    }

    fn make_leaf(&mut self, counts: Vec<usize>, n: usize) -> usize {
        let total = n as f64;
        let probs = counts.iter().map(|&c| c as f64 / total).collect();
        self.nodes.push(Node::Leaf {
            counts: counts.iter().map(|&c| c as f64).collect(),
            probs,
            coverage: total,
        });
        self.nodes.len() - 1
    }

    /// Best (gain, feature, threshold) over all features; thresholds are
    /// midpoints between consecutive distinct sorted values; ties between
    /// equal-gain splits break to the lowest feature index then lowest
    /// threshold (guaranteed by ascending scan order and strict comparison).
    fn best_split(&self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let parent = gini(counts, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for feature in 0..self.n_features {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| {
                self.value(a, feature)
                    .partial_cmp(&self.value(b, feature))
                    .unwrap()
            });
            let mut left = vec![0usize; self.n_classes];
            for i in 0..n - 1 {
                left[self.label(order[i])] += 1;
                let v = self.value(order[i], feature);
                let next = self.value(order[i + 1], feature);
                if v == next {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                if nl < self.params.min_samples_leaf || nr < self.params.min_samples_leaf {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(&c, &l)| c - l).collect();
                let weighted = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr))
                    / n as f64;
                let gain = parent - weighted;
                if gain > 0.0 && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, feature, (v + next) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn fit_node(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let counts = self.class_counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || n < self.params.min_samples_split || depth_capped {
            return self.make_leaf(counts, n);
        }
        let Some((feature, threshold)) = self.best_split(rows, &counts) else {
            return self.make_leaf(counts, n);
        };
        let mid = partition(rows, |r| self.value(r, feature) <= threshold);
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        // Children are strictly smaller: a valid threshold separates at
        // least one row on each side.
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
        let mut left_rows = left_rows.to_vec();
        let mut right_rows = right_rows.to_vec();
        let left = self.fit_node(&mut left_rows, depth + 1);
        let right = self.fit_node(&mut right_rows, depth + 1);
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left,
            right,
            coverage: n as f64,
        });
        self.nodes.len() - 1
    }
}

/// Stable in-place partition; returns the split point.
fn partition<F: Fn(usize) -> bool>(rows: &mut [usize], pred: F) -> usize {
    let mut ordered: Vec<usize> = rows.iter().copied().filter(|&r| pred(r)).collect();
    let mid = ordered.len();
    ordered.extend(rows.iter().copied().filter(|&r| !pred(r)));
    rows.copy_from_slice(&ordered);
    mid
}

fn fit_tree_on_rows(
    data: &LabeledDataset,
    rows: &[usize],
    params: TreeParams,
    seed: u64,
) -> Result<TreeModel> {
    if rows.is_empty() {
        return Err(Error::Data("cannot fit a tree on an empty dataset".into()));
    }
    let mut ctx = FitContext {
        data,
        n_features: data.schema.feature_count(),
        n_classes: data.schema.action_count,
        params,
        nodes: Vec::new(),
    };
    let mut idx = rows.to_vec();
    let root = ctx.fit_node(&mut idx, 0);
    let nodes = reorder_root_first(&ctx.nodes, root);
    Ok(TreeModel {
        nodes,
        n_features: data.schema.feature_count(),
        n_classes: data.schema.action_count,
        schema_hash: data.schema.schema_hash(),
        seed,
        n_rows: rows.len(),
    })
}

/// fit_node appends parents after children; renumber into preorder so the
/// root is node 0.
fn reorder_root_first(nodes: &[Node], root: usize) -> Vec<Node> {
    fn copy(nodes: &[Node], at: usize, out: &mut Vec<Node>) -> usize {
        let slot = out.len();
        out.push(nodes[at].clone());
        if let Node::Split { left, right, .. } = nodes[at] {
            let new_left = copy(nodes, left, out);
            let new_right = copy(nodes, right, out);
            if let Node::Split {
                left: l, right: r, ..
            } = &mut out[slot]
            {
                *l = new_left;
                *r = new_right;
            }
        }
        slot
    }
    let mut out = Vec::with_capacity(nodes.len());
    copy(nodes, root, &mut out);
    out
}

/// Greedy recursive binary splitting minimizing weighted Gini impurity.
pub fn fit_tree(data: &LabeledDataset, params: TreeParams, seed: u64) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..data.rows.len()).collect();
    fit_tree_on_rows(data, &rows, params, seed)
}

/// Each tree is fit on a bootstrap resample (with replacement, same size).
pub fn fit_ensemble(data: &LabeledDataset, n_trees: usize, seed: u64) -> Result<TreeEnsemble> {
    fit_ensemble_opts(data, n_trees, true, TreeParams::default(), seed)
}

pub fn fit_ensemble_opts(
    data: &LabeledDataset,
    n_trees: usize,
    bootstrap: bool,
    params: TreeParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    if data.rows.is_empty() {
        return Err(Error::Data("cannot fit an ensemble on an empty dataset".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let n = data.rows.len();
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let tree_seed: u64 = master.gen();
        let rows: Vec<usize> = if bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(fit_tree_on_rows(data, &rows, params, tree_seed)?);
    }
    Ok(TreeEnsemble {
        trees,
        schema_hash: data.schema.schema_hash(),
    })
}

impl TreeModel {
    pub fn leaf_for(&self, state: &SymbolicState) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if state.values[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl Predictor for TreeModel {
    fn predict_proba(&self, state: &SymbolicState) -> Vec<f64> {
        match &self.nodes[self.leaf_for(state)] {
            Node::Leaf { probs, .. } => probs.clone(),
            Node::Split { .. } => unreachable!(),
        }
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }
}

impl Predictor for TreeEnsemble {
    fn predict_proba(&self, state: &SymbolicState) -> Vec<f64> {
        let n_classes = self.n_classes();
        let mut acc = vec![0.0; n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict_proba(state)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        acc
    }

    fn n_classes(&self) -> usize {
        self.trees[0].n_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean negative log-likelihood in nats, p clipped to [1e-15, 1].
    pub cross_entropy: f64,
}

pub fn evaluate<P: Predictor>(model: &P, data: &LabeledDataset) -> Metrics {
    let mut correct = 0usize;
    let mut nll = 0.0;
    for row in &data.rows {
        let probs = model.predict_proba(&row.state);
        if argmax(&probs) == row.label {
            correct += 1;
        }
        let p = probs[row.label].clamp(PROB_CLIP, 1.0);
        nll -= p.ln();
    }
    let n = data.rows.len() as f64;
    Metrics {
        accuracy: correct as f64 / n,
        cross_entropy: nll / n,
    }
}

#[derive(Debug, Clone)]
pub struct KFoldReport {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
    pub stderr_accuracy: f64,
    pub mean_cross_entropy: f64,
    pub stderr_cross_entropy: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl LabeledDataset {
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            schema: self.schema.clone(),
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
        }
    }
}

/// Shuffled row-level split into k folds (sizes differ by at most one),
/// train-on-rest / evaluate per fold.
pub fn kfold_evaluate<P, F>(
    data: &LabeledDataset,
    k: usize,
    seed: u64,
    fit: F,
) -> Result<KFoldReport>
where
    P: Predictor,
    F: Fn(&LabeledDataset, u64) -> Result<P>,
{
    let n = data.rows.len();
    if n < k || k < 2 {
        return Err(Error::Data(format!("{n} rows is too few for {k}-fold split")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates, explicit so fold assignment is stable across rand versions.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds_rows = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds_rows.push(order[at..at + size].to_vec());
        at += size;
    }
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test = data.subset(&folds_rows[f]);
        let train_rows: Vec<usize> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| folds_rows[g].iter().copied())
            .collect();
        let train = data.subset(&train_rows);
        let model = fit(&train, seed.wrapping_add(f as u64))?;
        folds.push(evaluate(&model, &test));
    }
    let (mean_accuracy, stderr_accuracy) =
        mean_stderr(&folds.iter().map(|m| m.accuracy).collect::<Vec<_>>());
    let (mean_cross_entropy, stderr_cross_entropy) =
        mean_stderr(&folds.iter().map(|m| m.cross_entropy).collect::<Vec<_>>());
    Ok(KFoldReport {
        folds,
        mean_accuracy,
        stderr_accuracy,
        mean_cross_entropy,
        stderr_cross_entropy,
    })
}

/// Graphviz dot text for the first `depth_limit` split levels.
pub fn export_tree(model: &TreeModel, schema: &FeatureSchema, depth_limit: usize) -> String {
    let mut out = String::from("digraph tree {\n  node [shape=box];\n");
    let mut queue = vec![(0usize, 0usize)];
    let mut edges = String::new();
    while let Some((at, depth)) = queue.pop() {
        match &model.nodes[at] {
            Node::Leaf { counts, .. } => {
                let counts_i: Vec<u64> = counts.iter().map(|&c| c as u64).collect();
                writeln!(
                    out,
                    "  n{at} [label=\"counts = {counts_i:?}\\nclass = {}\"];",
                    argmax(counts)
                )
                .unwrap();
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                writeln!(
                    out,
                    "  n{at} [label=\"{} <= {threshold}\"];",
                    schema.friendly_name(*feature)
                )
                .unwrap();
                if depth + 1 <= depth_limit {
                    writeln!(edges, "  n{at} -> n{left};").unwrap();
                    writeln!(edges, "  n{at} -> n{right};").unwrap();
                    queue.push((*left, depth + 1));
                    queue.push((*right, depth + 1));
                }
            }
        }
    }
    out.push_str(&edges);
    out.push_str("}\n");
    out
}

impl TreeEnsemble {
    pub fn single(tree: TreeModel) -> TreeEnsemble {
        TreeEnsemble {
            schema_hash: tree.schema_hash,
            trees: vec![tree],
        }
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        writeln!(out, "treemodel v1").unwrap();
        writeln!(out, "schema_hash {:016x}", self.schema_hash).unwrap();
        writeln!(out, "trees {}", self.trees.len()).unwrap();
        for tree in &self.trees {
            writeln!(
                out,
                "tree features {} classes {} seed {} rows {} nodes {}",
                tree.n_features,
                tree.n_classes,
                tree.seed,
                tree.n_rows,
                tree.nodes.len()
            )
            .unwrap();
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        coverage,
                    } => writeln!(
                        out,
                        "split {feature} {threshold} {left} {right} {coverage}"
                    )
                    .unwrap(),
                    Node::Leaf {
                        counts, coverage, ..
                    } => {
                        let joined = counts
                            .iter()
                            .map(f64::to_string)
                            .collect::<Vec<_>>()
                            .join(",");
                        writeln!(out, "leaf {coverage} {joined}").unwrap()
                    }
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// Load a model file; when `expected_schema` is given, a stored schema
    /// hash that does not match is rejected.
    pub fn read(path: &Path, expected_schema: Option<&FeatureSchema>) -> Result<TreeEnsemble> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ensemble = Self::decode(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message,
        })?;
        if let Some(schema) = expected_schema {
            if schema.schema_hash() != ensemble.schema_hash {
                return Err(Error::Schema(format!(
                    "model was trained on schema {:016x}, dataset schema is {:016x}",
                    ensemble.schema_hash,
                    schema.schema_hash()
                )));
            }
        }
        Ok(ensemble)
    }

    pub fn decode(text: &str) -> std::result::Result<TreeEnsemble, String> {
        let mut lines = text.lines();
        if lines.next() != Some("treemodel v1") {
            return Err("expected header \"treemodel v1\"".into());
        }
        let schema_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("schema_hash "))
            .ok_or("missing schema_hash")
            .and_then(|h| u64::from_str_radix(h, 16).map_err(|_| "bad schema_hash"))?;
        let n_trees: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("trees "))
            .ok_or("missing tree count")?
            .parse()
            .map_err(|e| format!("bad tree count: {e}"))?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let header = lines.next().ok_or("unexpected end of model file")?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 11
                || parts[0] != "tree"
                || [parts[1], parts[3], parts[5], parts[7], parts[9]]
                    != ["features", "classes", "seed", "rows", "nodes"]
            {
                return Err(format!("bad tree header: {header}"));
            }
            let n_features = parts[2].parse().map_err(|e| format!("features: {e}"))?;
            let n_classes: usize = parts[4].parse().map_err(|e| format!("classes: {e}"))?;
            let seed = parts[6].parse().map_err(|e| format!("seed: {e}"))?;
            let n_rows = parts[8].parse().map_err(|e| format!("rows: {e}"))?;
            let n_nodes: usize = parts[10].parse().map_err(|e| format!("nodes: {e}"))?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let line = lines.next().ok_or("unexpected end of node list")?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                match fields.first() {
                    Some(&"split") if fields.len() == 6 => nodes.push(Node::Split {
                        feature: fields[1].parse().map_err(|e| format!("feature: {e}"))?,
                        threshold: fields[2].parse().map_err(|e| format!("threshold: {e}"))?,
                        left: fields[3].parse().map_err(|e| format!("left: {e}"))?,
                        right: fields[4].parse().map_err(|e| format!("right: {e}"))?,
                        coverage: fields[5].parse().map_err(|e| format!("coverage: {e}"))?,
                    }),
                    Some(&"leaf") if fields.len() == 3 => {
                        let coverage: f64 =
                            fields[1].parse().map_err(|e| format!("coverage: {e}"))?;
                        let counts: Vec<f64> = fields[2]
                            .split(',')
                            .map(|c| c.parse().map_err(|e| format!("count: {e}")))
                            .collect::<std::result::Result<_, _>>()?;
                        if counts.len() != n_classes {
                            return Err("leaf count arity mismatch".into());
                        }
                        let total: f64 = counts.iter().sum();
                        let probs = counts.iter().map(|&c| c / total).collect();
                        nodes.push(Node::Leaf {
                            counts,
                            probs,
                            coverage,
                        });
                    }
                    _ => return Err(format!("bad node line: {line}")),
                }
            }
            trees.push(TreeModel {
                nodes,
                n_features,
                n_classes,
                schema_hash,
                seed,
                n_rows,
            });
        }
        Ok(TreeEnsemble { trees, schema_hash })
    }
}

//! Exact Shapley-value attribution for tree models in polynomial time,
//! a brute-force subset-enumeration oracle for verification, and per-sprite
//! attribution aggregation.
//!
//! The conditional expectation is tree-path-dependent: a feature outside the
//! conditioning set routes down both children of its split, weighted by the
//! children's training-sample coverage.

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, SymbolicState, FEATURES_PER_SLOT};
use crate::trees::{Node, Predictor, TreeEnsemble, TreeModel};

/// Per-feature, per-class Shapley values for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// Coverage-weighted expectation of the model output at the root, per
    /// class (the training-distribution mean prediction).
    pub base_values: Vec<f64>,
    /// values[feature][class].
    pub values: Vec<Vec<f64>>,
    pub predicted_class: usize,
}

impl Attribution {
    /// Largest per-class violation of base + sum(values) = output.
    pub fn local_accuracy_error(&self, output: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (c, &o) in output.iter().enumerate() {
            let total: f64 =
                self.base_values[c] + self.values.iter().map(|v| v[c]).sum::<f64>();
            worst = worst.max((total - o).abs());
        }
        worst
    }
}

fn check_coverage(model: &TreeModel) -> Result<()> {
    if model.nodes.iter().any(|n| n.coverage() <= 0.0) {
        return Err(Error::Data(
            "tree is missing per-node coverage counts; refit before attribution".into(),
        ));
    }
    Ok(())
}

/// Coverage-weighted expectation of the leaf distribution, conditioning on
/// the features in `fixed` taking their values from `state`.
fn expect_value(model: &TreeModel, state: &SymbolicState, fixed: &[bool]) -> Vec<f64> {
    fn walk(model: &TreeModel, state: &SymbolicState, fixed: &[bool], at: usize, w: f64, acc: &mut [f64]) {
        match &model.nodes[at] {
            Node::Leaf { probs, .. } => {
                for (a, p) in acc.iter_mut().zip(probs) {
                    *a += w * p;
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                coverage,
            } => {
                if fixed[*feature] {
                    let next = if state.values[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                    walk(model, state, fixed, next, w, acc);
                } else {
                    let wl = model.nodes[*left].coverage() / coverage;
                    let wr = model.nodes[*right].coverage() / coverage;
                    walk(model, state, fixed, *left, w * wl, acc);
                    walk(model, state, fixed, *right, w * wr, acc);
                }
            }
        }
    }
    let mut acc = vec![0.0; model.n_classes];
    walk(model, state, fixed, 0, 1.0, &mut acc);
    acc
}

#[derive(Clone)]
struct PathItem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

impl PathItem {
    fn empty() -> PathItem {
        PathItem {
            feature: None,
            zero_fraction: 0.0,
            one_fraction: 0.0,
            pweight: 0.0,
        }
    }
}

fn extend_path(
    path: &mut [PathItem],
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    path[depth] = PathItem {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    for i in (0..depth).rev() {
        path[i + 1].pweight +=
            one_fraction * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight =
            zero_fraction * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut [PathItem], depth: usize, index: usize) {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight =
                next_one_portion * (depth + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one_portion =
                tmp - path[i].pweight * zero_fraction * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].pweight =
                path[i].pweight * (depth + 1) as f64 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathItem], depth: usize, index: usize) -> f64 {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero_fraction * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].pweight / (zero_fraction * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn shap_recurse(
    model: &TreeModel,
    state: &SymbolicState,
    phi: &mut [Vec<f64>],
    at: usize,
    path: &mut [PathItem],
    depth: usize,
    parent_zero_fraction: f64,
    parent_one_fraction: f64,
    parent_feature: Option<usize>,
) {
    extend_path(path, depth, parent_zero_fraction, parent_one_fraction, parent_feature);
    match &model.nodes[at] {
        Node::Leaf { probs, .. } => {
            for i in 1..=depth {
                let weight = unwound_path_sum(path, depth, i);
                let item = &path[i];
                let scale = weight * (item.one_fraction - item.zero_fraction);
                let f = item.feature.unwrap();
                for (c, &p) in probs.iter().enumerate() {
                    phi[f][c] += scale * p;
                }
            }
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
            coverage,
        } => {
            let goes_left = state.values[*feature] <= *threshold;
            let (hot, cold) = if goes_left {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero = model.nodes[hot].coverage() / coverage;
            let cold_zero = model.nodes[cold].coverage() / coverage;
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            let mut depth = depth;
            if let Some(k) = (1..=depth).find(|&i| path[i].feature == Some(*feature)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(path, depth, k);
                depth -= 1;
            }
            let (parent_path, child_path) = path.split_at_mut(depth + 1);
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            shap_recurse(
                model,
                state,
                phi,
                hot,
                child_path,
                depth + 1,
                hot_zero * incoming_zero,
                incoming_one,
                Some(*feature),
            );
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            shap_recurse(
                model,
                state,
                phi,
                cold,
                child_path,
                depth + 1,
                cold_zero * incoming_zero,
                0.0,
                Some(*feature),
            );
        }
    }
}

/// Exact Shapley values under the coverage-weighted path expectation, in time
/// polynomial in leaves and depth.
pub fn tree_shap(model: &TreeModel, state: &SymbolicState) -> Result<Attribution> {
    check_coverage(model)?;
    if state.values.len() != model.n_features {
        return Err(Error::Schema(format!(
            "state has {} features, model expects {}",
            state.values.len(),
            model.n_features
        )));
    }
    let max_depth = model.depth() + 2;
    let mut path = vec![PathItem::empty(); max_depth * (max_depth + 1) / 2 + 1];
    let mut phi = vec![vec![0.0; model.n_classes]; model.n_features];
    shap_recurse(model, state, &mut phi, 0, &mut path, 0, 1.0, 1.0, None);
    let base_values = expect_value(model, state, &vec![false; model.n_features]);
    let predicted_class = crate::trees::argmax(&model.predict_proba(state));
    Ok(Attribution {
        base_values,
        values: phi,
        predicted_class,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Classic Shapley sum over all feature subsets with the coverage-weighted
/// expectation as the characteristic function. Exponential; verification
/// only.
pub fn brute_force_shap(model: &TreeModel, state: &SymbolicState) -> Result<Attribution> {
    check_coverage(model)?;
    let m = model.n_features;
    if m > 20 {
        return Err(Error::Data(format!(
            "brute-force Shapley is limited to 20 features, got {m}"
        )));
    }
    // v(S) for every subset, encoded as a bitmask.
    let mut v = Vec::with_capacity(1 << m);
    for mask in 0..(1usize << m) {
        let fixed: Vec<bool> = (0..m).map(|f| mask >> f & 1 == 1).collect();
        v.push(expect_value(model, state, &fixed));
    }
    let mut values = vec![vec![0.0; model.n_classes]; m];
    for f in 0..m {
        for mask in 0..(1usize << m) {
            if mask >> f & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            // |S|! (M-|S|-1)! / M! = 1 / (M * C(M-1, |S|))
            let weight = 1.0 / (m as f64 * binomial(m - 1, s));
            let with = &v[mask | 1 << f];
            let without = &v[mask];
            for c in 0..model.n_classes {
                values[f][c] += weight * (with[c] - without[c]);
            }
        }
    }
    let predicted_class = crate::trees::argmax(&model.predict_proba(state));
    Ok(Attribution {
        base_values: v[0].clone(),
        values,
        predicted_class,
    })
}

/// Mean of per-tree attributions; Shapley values are linear, so local
/// accuracy holds against the ensemble's mean output.
pub fn ensemble_shap(ensemble: &TreeEnsemble, state: &SymbolicState) -> Result<Attribution> {
    let n = ensemble.trees.len() as f64;
    let n_classes = ensemble.n_classes();
    let n_features = ensemble.trees[0].n_features;
    let mut base_values = vec![0.0; n_classes];
    let mut values = vec![vec![0.0; n_classes]; n_features];
    for tree in &ensemble.trees {
        let attr = tree_shap(tree, state)?;
        for (acc, b) in base_values.iter_mut().zip(&attr.base_values) {
            *acc += b / n;
        }
        for (acc_row, row) in values.iter_mut().zip(&attr.values) {
            for (acc, v) in acc_row.iter_mut().zip(row) {
                *acc += v / n;
            }
        }
    }
    let predicted_class = crate::trees::argmax(&ensemble.predict_proba(state));
    Ok(Attribution {
        base_values,
        values,
        predicted_class,
    })
}

/// One ranked entry per present schema slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSlot {
    pub slot: usize,
    /// Maximum |Shapley value| over the slot's five features, for the
    /// predicted class.
    pub max_abs_shap: f64,
    /// 1 = most influential.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteAttribution {
    pub slots: Vec<RankedSlot>,
}

/// Rank the sprites present in `state` by descending maximum absolute
/// Shapley value over each slot's features (ties keep slot order). Absent
/// slots are excluded.
pub fn rank_sprites(
    attr: &Attribution,
    schema: &FeatureSchema,
    state: &SymbolicState,
) -> SpriteAttribution {
    let c = attr.predicted_class;
    let mut entries: Vec<RankedSlot> = (0..schema.slots.len())
        .filter(|&slot| state.present(slot))
        .map(|slot| {
            let base = slot * FEATURES_PER_SLOT;
            let max_abs_shap = (base..base + FEATURES_PER_SLOT)
                .map(|f| attr.values[f][c].abs())
                .fold(0.0f64, f64::max);
            RankedSlot {
                slot,
                max_abs_shap,
                rank: 0,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.max_abs_shap
            .partial_cmp(&a.max_abs_shap)
            .unwrap()
            .then(a.slot.cmp(&b.slot))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    SpriteAttribution { slots: entries }
}

/// Delimited attribution export: one line per (feature, class).
pub fn encode_attribution(attr: &Attribution, schema: &FeatureSchema) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("feature\tclass\tshapley\n");
    for (f, row) in attr.values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            writeln!(out, "{}\t{c}\t{v}", schema.column_name(f)).unwrap();
        }
    }
    out
}

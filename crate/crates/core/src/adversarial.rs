//! Adversarial feature permutations for tree ensembles.
//!
//! For an origin state: rank its present sprites by attribution, take the
//! top 10% (rounded up), and for every tree in the ensemble partition the
//! dataset with a 3-ply search over its splits (at most eight subsets per
//! tree). One donor row is drawn uniformly from each non-empty subset; each
//! donor yields a candidate by copying the selected sprites' features into
//! a copy of the origin. The returned candidate minimizes the ensemble's
//! probability of the origin's predicted action. The target policy is never
//! consulted during generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envharness::TargetPolicy;
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, LabeledDataset, SymbolicState, FEATURES_PER_SLOT};
use crate::shap::{ensemble_shap, rank_sprites};
use crate::trees::{Node, Predictor, TreeEnsemble, TreeModel};

/// Split depth of the subset search; 2^3 = 8 regions at most.
pub const SUBSET_PLIES: usize = 3;
/// Cap on scored (state, action) pairs per report.
pub const DEFAULT_PAIR_CAP: usize = 200;

#[derive(Debug, Clone)]
pub struct AdversarialCandidate {
    pub origin_state: SymbolicState,
    pub permuted_state: SymbolicState,
    /// (trajectory id, timestep) of the donor row.
    pub donor: (usize, usize),
    /// Ensemble probability of the origin's predicted action, evaluated on
    /// the permuted state.
    pub original_action_prob: f64,
    /// Slot indices whose 5 features were copied from the donor.
    pub swapped_slots: Vec<usize>,
    /// The origin's predicted action under the ensemble.
    pub origin_action: usize,
    /// Provenance for deterministic tie-breaking: (tree index, subset index).
    pub source: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationReport {
    pub pairs_evaluated: usize,
    pub changed: usize,
    pub change_rate: f64,
    pub seed: u64,
}

impl PermutationReport {
    pub fn encode(&self) -> String {
        format!(
            "permutationreport v1\npairs_evaluated {}\nchanged {}\nchange_rate {}\nseed {}\n",
            self.pairs_evaluated, self.changed, self.change_rate, self.seed
        )
    }
}

/// Route every dataset row through the first [`SUBSET_PLIES`] split levels
/// of `tree`; returns the non-empty regions in depth-first order. The
/// returned subsets are disjoint and cover all rows.
pub fn three_ply_subsets(tree: &TreeModel, data: &LabeledDataset) -> Vec<Vec<usize>> {
    // Region node ids: nodes at depth SUBSET_PLIES, or leaves above it.
    let mut regions = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    // Depth-first, left before right, matching recursion order.
    while let Some((node, depth)) = stack.pop() {
        match &tree.nodes[node] {
            Node::Leaf { .. } => regions.push(node),
            Node::Split { left, right, .. } => {
                if depth == SUBSET_PLIES {
                    regions.push(node);
                } else {
                    stack.push((*right, depth + 1));
                    stack.push((*left, depth + 1));
                }
            }
        }
    }
    let region_index = |state: &SymbolicState| {
        let mut node = 0usize;
        let mut depth = 0usize;
        loop {
            if let Some(i) = regions.iter().position(|&r| r == node) {
                return i;
            }
            let Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = &tree.nodes[node]
            else {
                unreachable!("regions cover every root-to-leaf path");
            };
            node = if state.values[*feature] <= *threshold {
                *left
            } else {
                *right
            };
            depth += 1;
            debug_assert!(depth <= SUBSET_PLIES);
        }
    };
    let mut subsets = vec![Vec::new(); regions.len()];
    for (row, r) in data.rows.iter().enumerate() {
        subsets[region_index(&r.state)].push(row);
    }
    subsets.retain(|s| !s.is_empty());
    subsets
}

/// Precomputed per-tree subsets, reusable across origin states.
pub fn ensemble_subsets(ensemble: &TreeEnsemble, data: &LabeledDataset) -> Vec<Vec<Vec<usize>>> {
    ensemble
        .trees
        .iter()
        .map(|t| three_ply_subsets(t, data))
        .collect()
}

/// Enumerate every candidate for an origin state (≤ trees × 8), in
/// (tree index, subset index) order.
pub fn enumerate_candidates(
    origin: &SymbolicState,
    ensemble: &TreeEnsemble,
    data: &LabeledDataset,
    schema: &FeatureSchema,
    subsets: &[Vec<Vec<usize>>],
    seed: u64,
) -> Result<Vec<AdversarialCandidate>> {
    if data.rows.is_empty() {
        return Err(Error::Data("adversarial donor dataset is empty".into()));
    }
    let attr = ensemble_shap(ensemble, origin)?;
    let ranked = rank_sprites(&attr, schema, origin);
    if ranked.slots.is_empty() {
        return Err(Error::Data(
            "origin state has zero present sprites to swap".into(),
        ));
    }
    // Top 10% of present sprites, rounded up: always at least one.
    let top_n = (ranked.slots.len() + 9) / 10;
    let swapped_slots: Vec<usize> = ranked.slots[..top_n].iter().map(|r| r.slot).collect();
    let origin_action = attr.predicted_class;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (tree_idx, tree_subsets) in subsets.iter().enumerate() {
        for (subset_idx, subset) in tree_subsets.iter().enumerate() {
            let row = subset[rng.gen_range(0..subset.len())];
            let donor = &data.rows[row];
            let mut permuted = origin.clone();
            for &slot in &swapped_slots {
                let base = slot * FEATURES_PER_SLOT;
                permuted.values[base..base + FEATURES_PER_SLOT]
                    .copy_from_slice(&donor.state.values[base..base + FEATURES_PER_SLOT]);
            }
            let prob = ensemble.predict_proba(&permuted)[origin_action];
            out.push(AdversarialCandidate {
                origin_state: origin.clone(),
                permuted_state: permuted,
                donor: (donor.trajectory as usize, donor.timestep as usize),
                original_action_prob: prob,
                swapped_slots: swapped_slots.clone(),
                origin_action,
                source: (tree_idx, subset_idx),
            });
        }
    }
    Ok(out)
}

/// Generate the adversarial permutation of `origin`: the candidate that
/// minimizes the ensemble's probability of the origin's predicted action
/// (ties broken by tree index, then subset index).
pub fn generate_adversarial(
    origin: &SymbolicState,
    ensemble: &TreeEnsemble,
    data: &LabeledDataset,
    schema: &FeatureSchema,
    seed: u64,
) -> Result<AdversarialCandidate> {
    let subsets = ensemble_subsets(ensemble, data);
    generate_adversarial_with_subsets(origin, ensemble, data, schema, &subsets, seed)
}

/// As [`generate_adversarial`] with precomputed [`ensemble_subsets`].
pub fn generate_adversarial_with_subsets(
    origin: &SymbolicState,
    ensemble: &TreeEnsemble,
    data: &LabeledDataset,
    schema: &FeatureSchema,
    subsets: &[Vec<Vec<usize>>],
    seed: u64,
) -> Result<AdversarialCandidate> {
    let candidates = enumerate_candidates(origin, ensemble, data, schema, subsets, seed)?;
    // Strict < keeps the first minimizer: (tree, subset) order.
    let mut best = 0usize;
    for (i, c) in candidates.iter().enumerate() {
        if c.original_action_prob < candidates[best].original_action_prob {
            best = i;
        }
    }
    Ok(candidates.into_iter().nth(best).unwrap())
}

/// For each (state, action) pair (capped at `cap`): generate an adversarial
/// candidate and re-query the scripted target policy on the permuted
/// symbolic state; count how often its action differs from the pair's.
pub fn measure_action_change(
    policy: &TargetPolicy,
    pairs: &[(SymbolicState, usize)],
    ensemble: &TreeEnsemble,
    data: &LabeledDataset,
    schema: &FeatureSchema,
    seed: u64,
    cap: usize,
) -> Result<PermutationReport> {
    if pairs.is_empty() {
        return Err(Error::Data(
            "no (state, action) pairs to permute".into(),
        ));
    }
    let subsets = ensemble_subsets(ensemble, data);
    let n = pairs.len().min(cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = 0usize;
    for (i, (state, action)) in pairs.iter().take(n).enumerate() {
        let candidate = generate_adversarial_with_subsets(
            state,
            ensemble,
            data,
            schema,
            &subsets,
            seed.wrapping_add(1 + i as u64),
        )?;
        if policy.act_on_state(schema, &candidate.permuted_state, &mut rng) != *action {
            changed += 1;
        }
    }
    Ok(PermutationReport {
        pairs_evaluated: n,
        changed,
        change_rate: changed as f64 / n as f64,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::tests::toy_dataset;
    use crate::trees::{fit_ensemble, fit_tree, TreeParams};

    // XOR-ish data over two slots (10 features); labels depend on the
    // first slot's x coordinate and the second slot's presence.
    fn sample_data() -> LabeledDataset {
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
        for i in 0..40 {
            let x = i as f64;
            let second = f64::from(i % 3 == 0);
            let label = usize::from(x > 20.0) + usize::from(second > 0.5);
            rows.push((
                vec![1.0, x, 5.0, 0.0, 0.0, second, 9.0, 9.0, 0.0, 0.0],
                label,
            ));
        }
        let borrowed: Vec<(&[f64], usize)> =
            rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        toy_dataset(&borrowed, 10, 3)
    }

    #[test]
    fn subsets_partition_rows() {
        let data = sample_data();
        let tree = fit_tree(&data, TreeParams::default(), 0).unwrap();
        let subsets = three_ply_subsets(&tree, &data);
        assert!(subsets.len() <= 8);
        let mut seen = vec![false; data.rows.len()];
        for s in &subsets {
            assert!(!s.is_empty());
            for &row in s {
                assert!(!seen[row], "row {row} appears in two subsets");
                seen[row] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn single_leaf_tree_yields_one_subset() {
        let rows: Vec<(&[f64], usize)> = vec![
            (&[1.0, 2.0, 3.0, 0.0, 0.0][..], 1),
            (&[1.0, 2.0, 3.0, 0.0, 0.0][..], 1),
        ];
        let data = toy_dataset(&rows, 5, 2);
        let tree = fit_tree(&data, TreeParams::default(), 0).unwrap();
        let subsets = three_ply_subsets(&tree, &data);
        assert_eq!(subsets.len(), 1);
        assert_eq!(subsets[0], vec![0, 1]);
    }

    #[test]
    fn candidate_count_is_bounded_and_minimizer_is_exact() {
        let data = sample_data();
        let ensemble = fit_ensemble(&data, 5, 77).unwrap();
        let origin = data.rows[4].state.clone();
        let subsets = ensemble_subsets(&ensemble, &data);
        let candidates =
            enumerate_candidates(&origin, &ensemble, &data, &data.schema, &subsets, 3).unwrap();
        assert!(candidates.len() <= 5 * 8);
        let best = generate_adversarial_with_subsets(
            &origin,
            &ensemble,
            &data,
            &data.schema,
            &subsets,
            3,
        )
        .unwrap();
        for c in &candidates {
            assert!(best.original_action_prob <= c.original_action_prob + 1e-15);
        }
        // Tie-break: no earlier candidate attains the minimum.
        let first = candidates
            .iter()
            .position(|c| c.original_action_prob == best.original_action_prob)
            .unwrap();
        assert_eq!(candidates[first].source, best.source);
    }

    #[test]
    fn only_selected_slot_features_change() {
        let data = sample_data();
        let ensemble = fit_ensemble(&data, 5, 1).unwrap();
        let origin = data.rows[7].state.clone();
        let best =
            generate_adversarial(&origin, &ensemble, &data, &data.schema, 12).unwrap();
        for f in 0..origin.values.len() {
            let slot = f / FEATURES_PER_SLOT;
            if !best.swapped_slots.contains(&slot) {
                assert!(
                    best.permuted_state.values[f].to_bits() == origin.values[f].to_bits(),
                    "feature {f} outside swapped slots changed"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic_given_seed() {
        let data = sample_data();
        let ensemble = fit_ensemble(&data, 4, 2).unwrap();
        let origin = data.rows[10].state.clone();
        let a = generate_adversarial(&origin, &ensemble, &data, &data.schema, 99).unwrap();
        let b = generate_adversarial(&origin, &ensemble, &data, &data.schema, 99).unwrap();
        assert_eq!(a.donor, b.donor);
        assert_eq!(a.source, b.source);
        assert_eq!(a.permuted_state.values, b.permuted_state.values);
    }

    #[test]
    fn degenerate_single_leaf_ensemble_cannot_lower_probability() {
        // Constant labels: every tree is a single leaf, so permutation
        // cannot change the predicted probability.
        let rows: Vec<(&[f64], usize)> = (0..10)
            .map(|_| (&[1.0, 4.0, 4.0, 0.0, 0.0][..], 0))
            .collect();
        let data = toy_dataset(&rows, 5, 2);
        let ensemble = fit_ensemble(&data, 6, 5).unwrap();
        let origin = data.rows[0].state.clone();
        let origin_prob =
            ensemble.predict_proba(&origin)[ensemble.predict(&origin)];
        let best = generate_adversarial(&origin, &ensemble, &data, &data.schema, 0).unwrap();
        assert_eq!(best.original_action_prob, origin_prob);
    }

    #[test]
    fn empty_dataset_and_absent_sprites_are_errors() {
        let data = sample_data();
        let ensemble = fit_ensemble(&data, 3, 0).unwrap();
        let mut empty = data.clone();
        empty.rows.clear();
        let origin = data.rows[0].state.clone();
        assert!(generate_adversarial(&origin, &ensemble, &empty, &data.schema, 0).is_err());
        let absent = SymbolicState {
            values: vec![0.0; 10],
        };
        assert!(generate_adversarial(&absent, &ensemble, &data, &data.schema, 0).is_err());
    }

    #[test]
    fn report_encodes_counts_and_rate() {
        let report = PermutationReport {
            pairs_evaluated: 200,
            changed: 144,
            change_rate: 0.72,
            seed: 9,
        };
        let text = report.encode();
        assert!(text.starts_with("permutationreport v1\n"));
        assert!(text.contains("pairs_evaluated 200\n"));
        assert!(text.contains("changed 144\n"));
        assert!(text.contains("change_rate 0.72\n"));
    }
}

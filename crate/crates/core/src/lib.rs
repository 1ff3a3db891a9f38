//! Symbolic sprite features, decision-tree policy surrogates, exact tree
//! Shapley attributions, and adversarial feature permutations for small
//! Atari-style games.
//!
//! The pipeline, end to end:
//! 1. [`envharness`] renders raw 210x160 frames and samples trajectories
//!    from scripted target policies (noop starts, sticky actions, frame
//!    skip 4 with a per-channel max over raw frames 3 and 4).
//! 2. [`pixelgrid`] preprocesses raw frames to 105x80 observations.
//! 3. [`sprites`] decomposes an observation into uniform-color 4-connected
//!    sprites (an exact partition of the foreground).
//! 4. [`features`] vectorizes decompositions into fixed-length symbolic
//!    states over a corpus-derived slot schema and assembles labeled
//!    behavioral-cloning datasets.
//! 5. [`trees`] fits CART trees and bagged ensembles to imitate the policy.
//! 6. [`shap`] computes exact tree Shapley attributions and ranks sprites.
//! 7. [`adversarial`] permutes top-ranked sprite features to probe whether
//!    surrogate and target policy share decision logic.

pub mod adversarial;
pub mod envharness;
pub mod error;
pub mod features;
pub mod pixelgrid;
pub mod shap;
pub mod sprites;
pub mod trees;

pub use adversarial::{
    generate_adversarial, measure_action_change, three_ply_subsets, AdversarialCandidate,
    PermutationReport,
};
pub use envharness::{
    sample_suite, sample_trajectory, GameId, MiniEnv, PolicyKind, TargetPolicy, Trajectory,
};
pub use error::{Error, Result};
pub use features::{
    assemble_dataset, build_schema, vectorize, FeatureSchema, LabeledDataset, SymbolicState,
};
pub use pixelgrid::{downsample, framemax, read_image, write_image, Color, Frame};
pub use shap::{brute_force_shap, ensemble_shap, rank_sprites, tree_shap, Attribution};
pub use sprites::{identify_sprites, reconstruct, ShapeSignature, Sprite, SpriteDecomposition};
pub use trees::{
    evaluate, export_tree, fit_ensemble, fit_tree, kfold_evaluate, Metrics, Predictor,
    TreeEnsemble, TreeModel, TreeParams,
};

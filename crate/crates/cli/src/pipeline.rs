//! Shared plumbing between subcommands: trajectory directory discovery,
//! schema/dataset construction, and per-step state vectorization.

use std::fs;
use std::path::{Path, PathBuf};

use spritetree_core::envharness::{read_trajectory, GameId, MiniEnv, Trajectory};
use spritetree_core::error::{Error, Result};
use spritetree_core::features::{
    assemble_dataset, build_schema, vectorize, FeatureSchema, LabeledDataset, SymbolicState,
    TrajectoryRecord,
};
use spritetree_core::sprites::{identify_sprites, SpriteDecomposition};

pub const ACTION_COUNT: usize = spritetree_core::envharness::ACTION_COUNT;

/// Trajectory subdirectories of `dir` (anything holding a manifest.txt),
/// sorted by name for deterministic processing order.
pub fn list_trajectory_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("manifest.txt").is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no trajectory directories under {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub struct Corpus {
    pub game: GameId,
    pub trajectories: Vec<Trajectory>,
}

/// Load every trajectory under `dir`; all must come from the same game.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mut game = None;
    let mut trajectories = Vec::new();
    for path in list_trajectory_dirs(dir)? {
        let (traj, traj_game, _) = read_trajectory(&path)?;
        match game {
            None => game = Some(traj_game),
            Some(g) if g == traj_game => {}
            Some(g) => {
                return Err(Error::Data(format!(
                    "{} is {} but earlier trajectories are {}",
                    path.display(),
                    traj_game.name(),
                    g.name()
                )))
            }
        }
        trajectories.push(traj);
    }
    Ok(Corpus {
        game: game.unwrap(),
        trajectories,
    })
}

/// Build the feature schema over a corpus and assemble its labeled dataset.
pub fn corpus_dataset(corpus: &Corpus) -> Result<(FeatureSchema, LabeledDataset)> {
    let records: Vec<TrajectoryRecord> =
        corpus.trajectories.iter().map(|t| t.to_record()).collect();
    let decomps: Vec<SpriteDecomposition> = records
        .iter()
        .flat_map(|r| r.frames.iter().map(identify_sprites))
        .collect();
    let mut schema = build_schema(&decomps, true, ACTION_COUNT)?;
    MiniEnv::annotate_schema(corpus.game, &mut schema);
    let data = assemble_dataset(&records, &schema)?;
    Ok((schema, data))
}

/// Vectorize step `t` of a trajectory exactly as dataset assembly does:
/// velocities against frame t-1, last action = executed action at t-1
/// (noop at t=0).
pub fn vectorize_step(
    traj: &Trajectory,
    schema: &FeatureSchema,
    t: usize,
) -> Result<(SpriteDecomposition, SymbolicState)> {
    if t >= traj.len() {
        return Err(Error::Data(format!(
            "timestep {t} out of range for trajectory of length {}",
            traj.len()
        )));
    }
    let d = identify_sprites(&traj.frames[t]);
    let prev = if t > 0 {
        Some(identify_sprites(&traj.frames[t - 1]))
    } else {
        None
    };
    let last_action = if schema.include_last_action {
        Some(if t > 0 { traj.actions[t - 1] } else { 0 })
    } else {
        None
    };
    let state = vectorize(&d, prev.as_ref(), schema, last_action)?.state;
    Ok((d, state))
}

/// (state, executed action) pairs for every step of a trajectory.
pub fn trajectory_pairs(
    traj: &Trajectory,
    schema: &FeatureSchema,
) -> Result<Vec<(SymbolicState, usize)>> {
    (0..traj.len())
        .map(|t| Ok((vectorize_step(traj, schema, t)?.1, traj.actions[t])))
        .collect()
}

//! Trajectory sampling protocol and on-disk trajectory format.
//!
//! A trajectory starts with `k` unrecorded noop observations (k in [0, 29]),
//! then records one (observation, action) pair per decision step. With
//! sticky actions enabled, each intended action is replaced by the
//! previously executed action with probability zeta.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::TrajectoryRecord;
use crate::pixelgrid::{read_image, write_image, Frame};
use crate::sprites::identify_sprites;

use super::policy::TargetPolicy;
use super::{GameId, MiniEnv, ACTION_COUNT, ACTION_NOOP};

pub const DEFAULT_EPISODE_CAP: usize = 1000;
pub const MAX_NOOP_STARTS: usize = 29;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub k: usize,
    pub sticky: bool,
    pub zeta: f64,
    pub seed: u64,
    /// Preprocessed observations, one per recorded decision step.
    pub frames: Vec<Frame>,
    /// Executed actions (after sticky substitution).
    pub actions: Vec<usize>,
    /// Actions the policy intended before sticky substitution.
    pub agent_actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// View used by dataset assembly: executed actions label each frame.
    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            id: self.k as u32,
            frames: self.frames.clone(),
            actions: self.actions.clone(),
        }
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over seed + salt.
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample one trajectory. Resets `env` from `seed`; deterministic given
/// identical arguments.
pub fn sample_trajectory(
    env: &mut MiniEnv,
    policy: &TargetPolicy,
    k: usize,
    sticky: bool,
    zeta: f64,
    seed: u64,
    max_steps: usize,
) -> Result<Trajectory> {
    if k > MAX_NOOP_STARTS {
        return Err(Error::Config(format!(
            "noop starts k must be in [0, {MAX_NOOP_STARTS}], got {k}"
        )));
    }
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::Config(format!(
            "zeta must be in [0, 1), got {zeta}"
        )));
    }
    env.reset(mix_seed(seed, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut traj = Trajectory {
        k,
        sticky,
        zeta,
        seed,
        frames: Vec::new(),
        actions: Vec::new(),
        agent_actions: Vec::new(),
        rewards: Vec::new(),
    };
    for _ in 0..k {
        if env.is_done() {
            return Ok(traj);
        }
        env.step(ACTION_NOOP)?;
    }
    let mut prev_executed = ACTION_NOOP;
    while !env.is_done() && traj.len() < max_steps {
        let obs = env.observation().clone();
        let d = identify_sprites(&obs);
        let intended = policy.act(&d, &mut rng);
        let executed = if sticky && rng.gen::<f64>() < zeta {
            prev_executed
        } else {
            intended
        };
        let (_, reward, _) = env.step(executed)?;
        traj.frames.push(obs);
        traj.actions.push(executed);
        traj.agent_actions.push(intended);
        traj.rewards.push(reward);
        prev_executed = executed;
    }
    Ok(traj)
}

/// Sample trajectories for every k in `k_from..=k_to`, deriving one seed per
/// trajectory from `seed`.
pub fn sample_suite(
    game: GameId,
    policy: &TargetPolicy,
    k_from: usize,
    k_to: usize,
    sticky: bool,
    zeta: f64,
    seed: u64,
    max_steps: usize,
) -> Result<Vec<Trajectory>> {
    if k_from > k_to {
        return Err(Error::Config(format!(
            "empty noop range {k_from}..={k_to}"
        )));
    }
    let mut out = Vec::new();
    for k in k_from..=k_to {
        let traj_seed = mix_seed(seed, 1000 + k as u64);
        let mut env = MiniEnv::new(game, traj_seed);
        out.push(sample_trajectory(
            &mut env, policy, k, sticky, zeta, traj_seed, max_steps,
        )?);
    }
    Ok(out)
}

/// Write a trajectory as a directory: `manifest.txt`, `actions.tsv`, and one
/// PPM frame per recorded step.
pub fn write_trajectory(
    dir: &Path,
    traj: &Trajectory,
    game: GameId,
    policy_name: &str,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    manifest.push_str("trajectory v1\n");
    manifest.push_str(&format!("game {}\n", game.name()));
    manifest.push_str(&format!("policy {policy_name}\n"));
    manifest.push_str(&format!("k {}\n", traj.k));
    manifest.push_str(&format!("sticky {}\n", u8::from(traj.sticky)));
    manifest.push_str(&format!("zeta {}\n", traj.zeta));
    manifest.push_str(&format!("seed {}\n", traj.seed));
    manifest.push_str(&format!("length {}\n", traj.len()));
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let mut actions = String::from("step\texecuted\tintended\treward\n");
    for t in 0..traj.len() {
        actions.push_str(&format!(
            "{t}\t{}\t{}\t{}\n",
            traj.actions[t], traj.agent_actions[t], traj.rewards[t]
        ));
    }
    let actions_path = dir.join("actions.tsv");
    fs::write(&actions_path, actions).map_err(|e| Error::io(&actions_path, e))?;

    for (t, frame) in traj.frames.iter().enumerate() {
        write_image(frame, &dir.join(format!("frame_{t:06}.ppm")))?;
    }
    Ok(())
}

/// Read a trajectory directory written by [`write_trajectory`]. Returns the
/// trajectory plus the game and policy recorded in its manifest.
pub fn read_trajectory(dir: &Path) -> Result<(Trajectory, GameId, String)> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let parse_err = |msg: &str| Error::Parse {
        path: manifest_path.clone(),
        offset: 0,
        message: msg.to_string(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("trajectory v1") {
        return Err(parse_err("expected header \"trajectory v1\""));
    }
    let mut game = None;
    let mut policy = None;
    let mut k = None;
    let mut sticky = None;
    let mut zeta = None;
    let mut seed = None;
    let mut length = None;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(&format!("malformed manifest line \"{line}\"")))?;
        match key {
            "game" => game = Some(GameId::parse(value)?),
            "policy" => policy = Some(value.to_string()),
            "k" => k = Some(value.parse::<usize>().map_err(|_| parse_err("bad k"))?),
            "sticky" => {
                sticky = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(parse_err("bad sticky flag")),
                })
            }
            "zeta" => zeta = Some(value.parse::<f64>().map_err(|_| parse_err("bad zeta"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| parse_err("bad seed"))?),
            "length" => {
                length = Some(value.parse::<usize>().map_err(|_| parse_err("bad length"))?)
            }
            other => return Err(parse_err(&format!("unknown manifest key \"{other}\""))),
        }
    }
    let game = game.ok_or_else(|| parse_err("missing game"))?;
    let policy = policy.ok_or_else(|| parse_err("missing policy"))?;
    let length = length.ok_or_else(|| parse_err("missing length"))?;

    let actions_path = dir.join("actions.tsv");
    let text = fs::read_to_string(&actions_path).map_err(|e| Error::io(&actions_path, e))?;
    let actions_err = |msg: String| Error::Parse {
        path: actions_path.clone(),
        offset: 0,
        message: msg,
    };
    let mut rows = text.lines();
    if rows.next() != Some("step\texecuted\tintended\treward") {
        return Err(actions_err("bad actions header".into()));
    }
    let mut traj = Trajectory {
        k: k.ok_or_else(|| parse_err("missing k"))?,
        sticky: sticky.ok_or_else(|| parse_err("missing sticky"))?,
        zeta: zeta.ok_or_else(|| parse_err("missing zeta"))?,
        seed: seed.ok_or_else(|| parse_err("missing seed"))?,
        frames: Vec::with_capacity(length),
        actions: Vec::new(),
        agent_actions: Vec::new(),
        rewards: Vec::new(),
    };
    for (i, row) in rows.enumerate() {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 4 {
            return Err(actions_err(format!("row {i}: expected 4 fields")));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| actions_err(format!("row {i}: bad step")))?;
        if step != i {
            return Err(actions_err(format!("row {i}: out-of-order step {step}")));
        }
        let executed: usize = fields[1]
            .parse()
            .map_err(|_| actions_err(format!("row {i}: bad action")))?;
        let intended: usize = fields[2]
            .parse()
            .map_err(|_| actions_err(format!("row {i}: bad action")))?;
        if executed >= ACTION_COUNT || intended >= ACTION_COUNT {
            return Err(actions_err(format!("row {i}: action out of range")));
        }
        traj.actions.push(executed);
        traj.agent_actions.push(intended);
        traj.rewards.push(
            fields[3]
                .parse()
                .map_err(|_| actions_err(format!("row {i}: bad reward")))?,
        );
    }
    if traj.actions.len() != length {
        return Err(actions_err(format!(
            "manifest says {length} steps, actions table has {}",
            traj.actions.len()
        )));
    }
    for t in 0..length {
        traj.frames.push(read_image(&dir.join(format!("frame_{t:06}.ppm")))?);
    }
    Ok((traj, game, policy))
}

//! Run configuration: a flat key-value text file, overridable by
//! `SPRITETREE_*` environment variables, overridable again by command-line
//! flags (defaults < file < environment < flags).

use std::fs;
use std::path::Path;

use spritetree_core::envharness::{GameId, PolicyKind, TargetPolicy, MAX_NOOP_STARTS};
use spritetree_core::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub game: GameId,
    /// "scripted-tracker" or "scripted-epsilon".
    pub policy: String,
    pub epsilon: f64,
    /// Noop-start range sampled by `record`, inclusive.
    pub k_from: usize,
    pub k_to: usize,
    pub sticky: bool,
    pub zeta: f64,
    pub seed: u64,
    pub folds: usize,
    /// Ensemble size for adversarial generation.
    pub trees: usize,
    /// Episode cap in recorded observations.
    pub max_steps: usize,
    /// Trajectory ids >= this are treated as held-out at evaluation time.
    pub held_from: usize,
    /// Output directory, relative to the workdir.
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            game: GameId::MiniPong,
            policy: "scripted-tracker".into(),
            epsilon: 0.1,
            k_from: 0,
            k_to: 24,
            sticky: false,
            zeta: 0.25,
            seed: 7,
            folds: 5,
            trees: 100,
            max_steps: 1000,
            held_from: 25,
            out_dir: "out".into(),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "game",
    "policy",
    "epsilon",
    "k_from",
    "k_to",
    "sticky",
    "zeta",
    "seed",
    "folds",
    "trees",
    "max_steps",
    "held_from",
    "out_dir",
];

impl RunConfig {
    /// Defaults, then the optional file, then environment overrides.
    /// Validation runs after every source is applied.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                // Accept `key value` and `key = value`.
                let (key, value) = line
                    .split_once('=')
                    .or_else(|| line.split_once(' '))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "{}:{}: expected \"key = value\"",
                            path.display(),
                            i + 1
                        ))
                    })?;
                cfg.set(key.trim(), value.trim())?;
            }
        }
        for key in CONFIG_KEYS {
            let var = format!("SPRITETREE_{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                cfg.set(key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad {what} \"{value}\""));
        match key {
            "game" => self.game = GameId::parse(value)?,
            "policy" => match value {
                "scripted-tracker" | "scripted-epsilon" => self.policy = value.into(),
                _ => return Err(bad("policy")),
            },
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
            "k_from" => self.k_from = value.parse().map_err(|_| bad("k_from"))?,
            "k_to" => self.k_to = value.parse().map_err(|_| bad("k_to"))?,
            "sticky" => {
                self.sticky = match value {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    _ => return Err(bad("sticky")),
                }
            }
            "zeta" => self.zeta = value.parse().map_err(|_| bad("zeta"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "folds" => self.folds = value.parse().map_err(|_| bad("folds"))?,
            "trees" => self.trees = value.parse().map_err(|_| bad("trees"))?,
            "max_steps" => self.max_steps = value.parse().map_err(|_| bad("max_steps"))?,
            "held_from" => self.held_from = value.parse().map_err(|_| bad("held_from"))?,
            "out_dir" => self.out_dir = value.into(),
            other => return Err(Error::Config(format!("unknown config key \"{other}\""))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_from > self.k_to {
            return Err(Error::Config(format!(
                "k_from {} exceeds k_to {}",
                self.k_from, self.k_to
            )));
        }
        if self.k_to > MAX_NOOP_STARTS {
            return Err(Error::Config(format!(
                "k_to {} exceeds the noop-start maximum {MAX_NOOP_STARTS}",
                self.k_to
            )));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::Config(format!(
                "zeta must be in [0, 1), got {}",
                self.zeta
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.trees == 0 {
            return Err(Error::Config("trees must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        // Instantiating the policy re-checks its own parameters.
        self.target_policy()?;
        Ok(())
    }

    pub fn target_policy(&self) -> Result<TargetPolicy> {
        let kind = match self.policy.as_str() {
            "scripted-tracker" => PolicyKind::ScriptedTracker,
            "scripted-epsilon" => PolicyKind::ScriptedEpsilon {
                epsilon: self.epsilon,
            },
            other => return Err(Error::Config(format!("unknown policy \"{other}\""))),
        };
        TargetPolicy::new(self.game, kind)
    }

    pub fn encode(&self) -> String {
        format!(
            "game {}\npolicy {}\nepsilon {}\nk_from {}\nk_to {}\nsticky {}\nzeta {}\nseed {}\nfolds {}\ntrees {}\nmax_steps {}\nheld_from {}\nout_dir {}\n",
            self.game.name(),
            self.policy,
            self.epsilon,
            self.k_from,
            self.k_to,
            u8::from(self.sticky),
            self.zeta,
            self.seed,
            self.folds,
            self.trees,
            self.max_steps,
            self.held_from,
            self.out_dir
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_file_format() {
        let mut cfg = RunConfig::default();
        cfg.game = GameId::MiniBreakout;
        cfg.sticky = true;
        cfg.zeta = 0.33;
        cfg.seed = 123;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        fs::write(&path, cfg.encode()).unwrap();
        let back = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.zeta = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.k_from = 5;
        cfg.k_to = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.set("game", "pong").is_err());
        assert!(cfg.set("unknown_key", "1").is_err());
    }
}

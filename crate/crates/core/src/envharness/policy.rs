//! Scripted target policies. Both read only the symbolic view of an
//! observation (sprite presence and anchors), never the raw game state, so
//! their decisions are exactly representable over the feature schema.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GameId, ACTION_COUNT, ACTION_NEG, ACTION_NOOP, ACTION_POS};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, SymbolicState};
use crate::pixelgrid::Color;
use crate::sprites::SpriteDecomposition;

/// A moving 2x2 ball smears over at most 8 pixels per observation.
const BALL_MAX_PIXELS: usize = 8;
/// Paddles are 16+ pixels; 12 separates them from any ball smear.
const PADDLE_MIN_PIXELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Move toward the ball along the paddle's axis when the gap exceeds
    /// the deadzone; otherwise noop.
    ScriptedTracker,
    /// Tracker that takes a uniformly random action with probability
    /// epsilon.
    ScriptedEpsilon { epsilon: f64 },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::ScriptedTracker => "scripted-tracker",
            PolicyKind::ScriptedEpsilon { .. } => "scripted-epsilon",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetPolicy {
    pub game: GameId,
    pub kind: PolicyKind,
    pub deadzone: i64,
}

impl TargetPolicy {
    pub fn new(game: GameId, kind: PolicyKind) -> Result<TargetPolicy> {
        if let PolicyKind::ScriptedEpsilon { epsilon } = kind {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!(
                    "epsilon must be in [0, 1], got {epsilon}"
                )));
            }
        }
        Ok(TargetPolicy {
            game,
            kind,
            deadzone: 2,
        })
    }

    fn ball_paddle_color(&self) -> Color {
        match self.game {
            GameId::MiniPong => super::PONG_BALL_PADDLE,
            GameId::MiniBreakout => super::BREAKOUT_BALL_PADDLE,
        }
    }

    /// Tracker rule over ball and paddle anchors along the control axis.
    /// Returns noop when either sprite is missing (including the merged
    /// ball+paddle case, which classifies as a paddle by pixel count).
    fn track(&self, ball: Option<(f64, f64)>, paddle: Option<(f64, f64)>) -> usize {
        let (Some(ball), Some(paddle)) = (ball, paddle) else {
            return ACTION_NOOP;
        };
        // Compare the ball anchor with the paddle anchor shifted to its
        // midpoint along the control axis.
        let diff = match self.game {
            GameId::MiniPong => ball.1 - (paddle.1 + 5.0),
            GameId::MiniBreakout => ball.0 - (paddle.0 + 4.0),
        };
        if diff < -self.deadzone as f64 {
            ACTION_NEG
        } else if diff > self.deadzone as f64 {
            ACTION_POS
        } else {
            ACTION_NOOP
        }
    }

    fn maybe_explore(&self, tracked: usize, rng: &mut ChaCha8Rng) -> usize {
        match self.kind {
            PolicyKind::ScriptedTracker => tracked,
            PolicyKind::ScriptedEpsilon { epsilon } => {
                if rng.gen::<f64>() < epsilon {
                    rng.gen_range(0..ACTION_COUNT)
                } else {
                    tracked
                }
            }
        }
    }

    /// Act on a sprite decomposition of an observation.
    pub fn act(&self, d: &SpriteDecomposition, rng: &mut ChaCha8Rng) -> usize {
        let color = self.ball_paddle_color();
        let ball = d
            .sprites
            .iter()
            .find(|s| s.color == color && s.pixels.len() <= BALL_MAX_PIXELS)
            .map(|s| (s.anchor.0 as f64, s.anchor.1 as f64));
        let paddle = d
            .sprites
            .iter()
            .find(|s| s.color == color && s.pixels.len() >= PADDLE_MIN_PIXELS)
            .map(|s| (s.anchor.0 as f64, s.anchor.1 as f64));
        self.maybe_explore(self.track(ball, paddle), rng)
    }

    /// Act on a vectorized state. Used to re-query the policy on permuted
    /// feature vectors; equivalent to `act` on the state's source frame.
    pub fn act_on_state(
        &self,
        schema: &FeatureSchema,
        state: &SymbolicState,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let color = self.ball_paddle_color();
        let mut ball = None;
        let mut paddle = None;
        for (i, slot) in schema.slots.iter().enumerate() {
            if slot.signature.color != color || !state.present(i) {
                continue;
            }
            let n = slot.signature.offsets.len();
            if n <= BALL_MAX_PIXELS && ball.is_none() {
                ball = Some(state.slot_xy(i));
            } else if n >= PADDLE_MIN_PIXELS && paddle.is_none() {
                paddle = Some(state.slot_xy(i));
            }
        }
        self.maybe_explore(self.track(ball, paddle), rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    use crate::envharness::MiniEnv;
    use crate::features::{build_schema, vectorize};
    use crate::sprites::identify_sprites;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn tracker_moves_toward_ball() {
        let policy = TargetPolicy::new(GameId::MiniPong, PolicyKind::ScriptedTracker).unwrap();
        let mut env = MiniEnv::new(GameId::MiniPong, 0);
        // Paddle starts at y = 36; ball far above.
        env.set_ball(50, 5, 0, 0);
        let d = identify_sprites(env.observation());
        assert_eq!(policy.act(&d, &mut rng()), ACTION_NEG);
        env.set_ball(50, 70, 0, 0);
        let d = identify_sprites(env.observation());
        assert_eq!(policy.act(&d, &mut rng()), ACTION_POS);
        // Aligned with the paddle midpoint: inside the deadzone.
        env.set_ball(50, 39, 0, 0);
        let d = identify_sprites(env.observation());
        assert_eq!(policy.act(&d, &mut rng()), ACTION_NOOP);
    }

    #[test]
    fn tracker_noops_when_ball_merged_into_paddle() {
        let policy = TargetPolicy::new(GameId::MiniPong, PolicyKind::ScriptedTracker).unwrap();
        let mut env = MiniEnv::new(GameId::MiniPong, 0);
        // Touching the player paddle's left face: one merged component.
        env.set_ball(99, 36, 0, 0);
        let d = identify_sprites(env.observation());
        assert!(env.ball_touching_paddle());
        assert_eq!(policy.act(&d, &mut rng()), ACTION_NOOP);
    }

    #[test]
    fn act_on_state_matches_act() {
        let policy =
            TargetPolicy::new(GameId::MiniBreakout, PolicyKind::ScriptedTracker).unwrap();
        let mut env = MiniEnv::new(GameId::MiniBreakout, 5);
        let mut decomps = Vec::new();
        for _ in 0..40 {
            decomps.push(identify_sprites(env.observation()));
            env.step(super::super::ACTION_POS).unwrap();
        }
        let schema = build_schema(&decomps, true, 3).unwrap();
        for d in &decomps {
            let state = vectorize(d, None, &schema, Some(0)).unwrap().state;
            assert_eq!(
                policy.act(d, &mut rng()),
                policy.act_on_state(&schema, &state, &mut rng())
            );
        }
    }

    #[test]
    fn epsilon_policy_explores_at_roughly_epsilon_rate() {
        let policy = TargetPolicy::new(
            GameId::MiniPong,
            PolicyKind::ScriptedEpsilon { epsilon: 0.3 },
        )
        .unwrap();
        let mut env = MiniEnv::new(GameId::MiniPong, 0);
        // Ball far above: the tracker always answers "up", so any other
        // action must come from exploration.
        env.set_ball(50, 0, 0, 0);
        let d = identify_sprites(env.observation());
        let mut rng = rng();
        let n = 20_000;
        let deviations = (0..n)
            .filter(|_| policy.act(&d, &mut rng) != ACTION_NEG)
            .count();
        // Exploration picks uniformly, so 2/3 of explored steps deviate.
        let rate = deviations as f64 / n as f64;
        assert!((rate - 0.2).abs() < 0.02, "deviation rate {rate}");
    }

    #[test]
    fn invalid_epsilon_is_rejected() {
        assert!(TargetPolicy::new(
            GameId::MiniPong,
            PolicyKind::ScriptedEpsilon { epsilon: 1.5 }
        )
        .is_err());
    }
}

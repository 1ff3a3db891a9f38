//! Built-in mini Atari-style environments with scripted target policies and
//! the trajectory sampling protocol (noop starts, sticky actions, frame
//! skip 4 with max over raw frames 3 and 4).
//!
//! Internal game state lives on the downsampled 105x80 grid; the renderer
//! scales each cell to a 2x2 block of the raw 210x160 frame, so the
//! preprocessing pipeline recovers internal geometry exactly. All rendered
//! sprites are uniform-color 4-connected components distinct from the
//! background.

mod policy;
mod sampling;

pub use policy::{PolicyKind, TargetPolicy};
pub use sampling::{
    read_trajectory, sample_suite, sample_trajectory, write_trajectory, Trajectory,
    DEFAULT_EPISODE_CAP, MAX_NOOP_STARTS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::pixelgrid::{downsample, framemax, Color, Frame};

/// Downsampled playfield dimensions; raw frames are twice this.
pub const FIELD_W: i64 = 105;
pub const FIELD_H: i64 = 80;

pub const ACTION_NOOP: usize = 0;
/// Pong: up; breakout: left.
pub const ACTION_NEG: usize = 1;
/// Pong: down; breakout: right.
pub const ACTION_POS: usize = 2;
pub const ACTION_COUNT: usize = 3;

pub const BG: Color = Color([0, 0, 0]);
/// Ball and player paddle share a color so the documented
/// ball-touching-paddle merge can occur.
pub const PONG_BALL_PADDLE: Color = Color([236, 236, 236]);
pub const PONG_OPPONENT: Color = Color([213, 130, 74]);
pub const BREAKOUT_BALL_PADDLE: Color = Color([200, 72, 72]);
pub const BREAKOUT_BRICK_ROWS: [Color; 3] = [
    Color([66, 72, 200]),
    Color([72, 160, 72]),
    Color([198, 108, 58]),
];

const BALL_SIZE: i64 = 2;
const PONG_PADDLE_H: i64 = 12;
const PONG_PADDLE_W: i64 = 2;
const PONG_PLAYER_X: i64 = 101;
const PONG_OPPONENT_X: i64 = 2;
const BREAKOUT_PADDLE_W: i64 = 10;
const BREAKOUT_PADDLE_H: i64 = 2;
const BREAKOUT_PADDLE_Y: i64 = 76;
const BRICK_W: i64 = 12;
const BRICK_H: i64 = 2;
const BRICKS_PER_ROW: i64 = 6;
const BRICK_X0: i64 = 3;
const BRICK_X_STRIDE: i64 = 17;
const BRICK_Y0: i64 = 10;
const BRICK_Y_STRIDE: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GameId {
    MiniPong,
    MiniBreakout,
}

impl GameId {
    pub fn name(&self) -> &'static str {
        match self {
            GameId::MiniPong => "mini-pong",
            GameId::MiniBreakout => "mini-breakout",
        }
    }

    pub fn parse(s: &str) -> Result<GameId> {
        match s {
            "mini-pong" => Ok(GameId::MiniPong),
            "mini-breakout" => Ok(GameId::MiniBreakout),
            other => Err(Error::Config(format!("unknown game \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    fn overlap_x(&self, other: &Rect) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w
    }

    fn overlap_y(&self, other: &Rect) -> bool {
        self.y < other.y + other.h && other.y < self.y + self.h
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.overlap_x(other) && self.overlap_y(other)
    }

    /// Overlapping or edge-adjacent (4-connectivity); corner contact does
    /// not count.
    pub fn touches4(&self, other: &Rect) -> bool {
        if self.overlaps(other) {
            return true;
        }
        let x_adjacent = self.x + self.w == other.x || other.x + other.w == self.x;
        let y_adjacent = self.y + self.h == other.y || other.y + other.h == self.y;
        (x_adjacent && self.overlap_y(other)) || (y_adjacent && self.overlap_x(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Ball {
    x: i64,
    y: i64,
    vx: i64,
    vy: i64,
}

impl Ball {
    fn rect(&self) -> Rect {
        Rect {
            x: self.x,
            y: self.y,
            w: BALL_SIZE,
            h: BALL_SIZE,
        }
    }
}

#[derive(Debug, Clone)]
enum GameState {
    Pong {
        ball: Ball,
        player_y: i64,
        opponent_y: i64,
        phase: u64,
    },
    Breakout {
        ball: Ball,
        paddle_x: i64,
        /// One entry per brick slot; destroyed bricks are None.
        bricks: Vec<Option<Rect>>,
    },
}

/// One renderable entity with a stable identity across the two raw frames
/// an observation is built from. `rects` holds its position in frame 3 and
/// frame 4 (deduplicated when static).
#[derive(Debug, Clone)]
pub struct ObsEntity {
    pub color: Color,
    pub rects: Vec<Rect>,
}

impl ObsEntity {
    fn touches4(&self, other: &ObsEntity) -> bool {
        self.rects
            .iter()
            .any(|a| other.rects.iter().any(|b| a.touches4(b)))
    }
}

#[derive(Debug)]
pub struct MiniEnv {
    pub game: GameId,
    state: GameState,
    rng: ChaCha8Rng,
    done: bool,
    observation: Frame,
    obs_entities: Vec<ObsEntity>,
}

/// Snapshot of entity geometry, keyed by stable entity index.
type Snapshot = Vec<(usize, Color, Rect)>;

impl MiniEnv {
    pub fn new(game: GameId, seed: u64) -> MiniEnv {
        let mut env = MiniEnv {
            game,
            state: GameState::Pong {
                ball: Ball {
                    x: 0,
                    y: 0,
                    vx: 0,
                    vy: 0,
                },
                player_y: 0,
                opponent_y: 0,
                phase: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            done: false,
            observation: Frame::filled(1, 1, BG).unwrap(),
            obs_entities: Vec::new(),
        };
        env.reset(seed);
        env
    }

    pub fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.done = false;
        self.state = match self.game {
            GameId::MiniPong => GameState::Pong {
                ball: self.serve_pong(),
                player_y: (FIELD_H - PONG_PADDLE_H) / 2,
                opponent_y: (FIELD_H - PONG_PADDLE_H) / 2,
                phase: 0,
            },
            GameId::MiniBreakout => {
                let mut bricks = Vec::new();
                for row in 0..3 {
                    for col in 0..BRICKS_PER_ROW {
                        bricks.push(Some(Rect {
                            x: BRICK_X0 + col * BRICK_X_STRIDE,
                            y: BRICK_Y0 + row * BRICK_Y_STRIDE,
                            w: BRICK_W,
                            h: BRICK_H,
                        }));
                    }
                }
                GameState::Breakout {
                    ball: self.serve_breakout(),
                    paddle_x: (FIELD_W - BREAKOUT_PADDLE_W) / 2,
                    bricks,
                }
            }
        };
        let snap = self.snapshot();
        self.obs_entities = combine_snapshots(&snap, &snap);
        self.observation = downsample(&self.render_raw()).unwrap();
    }

    fn serve_pong(&mut self) -> Ball {
        // Serve toward the opponent so noop starts cannot end the episode.
        Ball {
            x: (FIELD_W - BALL_SIZE) / 2,
            y: (FIELD_H - BALL_SIZE) / 2,
            vx: -1,
            vy: if self.rng.gen::<bool>() { 1 } else { -1 },
        }
    }

    fn serve_breakout(&mut self) -> Ball {
        // Serve upward for the same reason.
        Ball {
            x: (FIELD_W - BALL_SIZE) / 2,
            y: 44,
            vx: if self.rng.gen::<bool>() { 1 } else { -1 },
            vy: -1,
        }
    }

    pub fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The current preprocessed observation (105x80).
    pub fn observation(&self) -> &Frame {
        &self.observation
    }

    /// Advance 4 raw frames applying the same action; the observation is
    /// downsample(framemax(raw frame 3, raw frame 4)).
    pub fn step(&mut self, action: usize) -> Result<(Frame, f64, bool)> {
        if self.done {
            return Err(Error::Env("step after episode termination".into()));
        }
        if action >= ACTION_COUNT {
            return Err(Error::Env(format!("action {action} out of range")));
        }
        let mut reward = 0.0;
        let mut frame3 = None;
        let mut snap3 = None;
        for i in 0..4 {
            if !self.done {
                self.raw_step(action, &mut reward);
            }
            if i == 2 {
                frame3 = Some(self.render_raw());
                snap3 = Some(self.snapshot());
            }
        }
        let frame4 = self.render_raw();
        let snap4 = self.snapshot();
        let raw = framemax(&frame3.unwrap(), &frame4)?;
        self.observation = downsample(&raw)?;
        self.obs_entities = combine_snapshots(&snap3.unwrap(), &snap4);
        Ok((self.observation.clone(), reward, self.done))
    }

    fn raw_step(&mut self, action: usize, reward: &mut f64) {
        match self.game {
            GameId::MiniPong => self.raw_step_pong(action, reward),
            GameId::MiniBreakout => self.raw_step_breakout(action, reward),
        }
    }

    fn raw_step_pong(&mut self, action: usize, reward: &mut f64) {
        let serve = |rng: &mut ChaCha8Rng| Ball {
            x: (FIELD_W - BALL_SIZE) / 2,
            y: (FIELD_H - BALL_SIZE) / 2,
            vx: -1,
            vy: if rng.gen::<bool>() { 1 } else { -1 },
        };
        let GameState::Pong {
            ball,
            player_y,
            opponent_y,
            phase,
        } = &mut self.state
        else {
            unreachable!()
        };
        // The player paddle is faster than the ball so the tracker can
        // recover from reaction delay.
        match action {
            ACTION_NEG => *player_y -= 2,
            ACTION_POS => *player_y += 2,
            _ => {}
        }
        *player_y = (*player_y).clamp(0, FIELD_H - PONG_PADDLE_H);

        // The opponent tracks the ball at half speed, so it can miss.
        if *phase % 2 == 0 {
            let target = ball.y + BALL_SIZE / 2;
            let center = *opponent_y + PONG_PADDLE_H / 2;
            if target < center - 1 {
                *opponent_y -= 1;
            } else if target > center + 1 {
                *opponent_y += 1;
            }
            *opponent_y = (*opponent_y).clamp(0, FIELD_H - PONG_PADDLE_H);
        }
        *phase += 1;

        let mut nx = ball.x + ball.vx;
        let mut ny = ball.y + ball.vy;
        if ny < 0 {
            ny = 0;
            ball.vy = ball.vy.abs();
        }
        if ny + BALL_SIZE > FIELD_H {
            ny = FIELD_H - BALL_SIZE;
            ball.vy = -ball.vy.abs();
        }
        let overlap_player = ny < *player_y + PONG_PADDLE_H && *player_y < ny + BALL_SIZE;
        let overlap_opponent = ny < *opponent_y + PONG_PADDLE_H && *opponent_y < ny + BALL_SIZE;
        if ball.vx > 0 && nx + BALL_SIZE > PONG_PLAYER_X && ball.x + BALL_SIZE <= PONG_PLAYER_X {
            if overlap_player {
                nx = PONG_PLAYER_X - BALL_SIZE;
                ball.vx = -ball.vx.abs();
                ball.vy = deflect(ny, *player_y, PONG_PADDLE_H, ball.vy);
            }
        }
        let opp_face = PONG_OPPONENT_X + PONG_PADDLE_W;
        if ball.vx < 0 && nx < opp_face && ball.x >= opp_face {
            if overlap_opponent {
                nx = opp_face;
                ball.vx = ball.vx.abs();
                ball.vy = deflect(ny, *opponent_y, PONG_PADDLE_H, ball.vy);
            }
        }
        if nx + BALL_SIZE > FIELD_W {
            // Past the player: episode over.
            *reward -= 1.0;
            self.done = true;
            nx = FIELD_W - BALL_SIZE;
        } else if nx < 0 {
            // Past the opponent: point for the player, re-serve.
            *reward += 1.0;
            *ball = serve(&mut self.rng);
            return;
        }
        ball.x = nx;
        ball.y = ny;
    }

    fn raw_step_breakout(&mut self, action: usize, reward: &mut f64) {
        let GameState::Breakout {
            ball,
            paddle_x,
            bricks,
        } = &mut self.state
        else {
            unreachable!()
        };
        match action {
            ACTION_NEG => *paddle_x -= 1,
            ACTION_POS => *paddle_x += 1,
            _ => {}
        }
        *paddle_x = (*paddle_x).clamp(0, FIELD_W - BREAKOUT_PADDLE_W);

        let mut nx = ball.x + ball.vx;
        let mut ny = ball.y + ball.vy;
        if nx < 0 {
            nx = 0;
            ball.vx = ball.vx.abs();
        }
        if nx + BALL_SIZE > FIELD_W {
            nx = FIELD_W - BALL_SIZE;
            ball.vx = -ball.vx.abs();
        }
        if ny < 0 {
            ny = 0;
            ball.vy = ball.vy.abs();
        }
        let next = Rect {
            x: nx,
            y: ny,
            w: BALL_SIZE,
            h: BALL_SIZE,
        };
        if let Some(hit) = bricks
            .iter()
            .position(|b| b.is_some_and(|r| r.overlaps(&next)))
        {
            bricks[hit] = None;
            *reward += 1.0;
            ball.vy = -ball.vy;
            ny = ball.y;
            if bricks.iter().all(Option::is_none) {
                self.done = true;
            }
        }
        let overlap_paddle = nx < *paddle_x + BREAKOUT_PADDLE_W && *paddle_x < nx + BALL_SIZE;
        if ball.vy > 0
            && ny + BALL_SIZE > BREAKOUT_PADDLE_Y
            && ball.y + BALL_SIZE <= BREAKOUT_PADDLE_Y
            && overlap_paddle
        {
            ny = BREAKOUT_PADDLE_Y - BALL_SIZE;
            ball.vy = -1;
            let offset = (nx + BALL_SIZE / 2) - (*paddle_x + BREAKOUT_PADDLE_W / 2);
            if offset < -2 {
                ball.vx = -1;
            } else if offset > 2 {
                ball.vx = 1;
            }
        }
        if ny + BALL_SIZE > FIELD_H {
            // Missed: bounce off the floor with a penalty so noop starts
            // cannot dead-end the episode.
            ny = FIELD_H - BALL_SIZE;
            ball.vy = -1;
            *reward -= 1.0;
        }
        ball.x = nx;
        ball.y = ny;
    }

    /// Current entity geometry with stable entity indices.
    fn snapshot(&self) -> Snapshot {
        let mut out = Vec::new();
        match &self.state {
            GameState::Pong {
                ball,
                player_y,
                opponent_y,
                ..
            } => {
                out.push((0, PONG_BALL_PADDLE, ball.rect()));
                out.push((
                    1,
                    PONG_BALL_PADDLE,
                    Rect {
                        x: PONG_PLAYER_X,
                        y: *player_y,
                        w: PONG_PADDLE_W,
                        h: PONG_PADDLE_H,
                    },
                ));
                out.push((
                    2,
                    PONG_OPPONENT,
                    Rect {
                        x: PONG_OPPONENT_X,
                        y: *opponent_y,
                        w: PONG_PADDLE_W,
                        h: PONG_PADDLE_H,
                    },
                ));
            }
            GameState::Breakout {
                ball,
                paddle_x,
                bricks,
            } => {
                out.push((0, BREAKOUT_BALL_PADDLE, ball.rect()));
                out.push((
                    1,
                    BREAKOUT_BALL_PADDLE,
                    Rect {
                        x: *paddle_x,
                        y: BREAKOUT_PADDLE_Y,
                        w: BREAKOUT_PADDLE_W,
                        h: BREAKOUT_PADDLE_H,
                    },
                ));
                for (i, brick) in bricks.iter().enumerate() {
                    if let Some(r) = brick {
                        let row = i / BRICKS_PER_ROW as usize;
                        out.push((2 + i, BREAKOUT_BRICK_ROWS[row], *r));
                    }
                }
            }
        }
        out
    }

    /// Raw 210x160 frame: each internal cell drawn as a 2x2 block.
    pub fn render_raw(&self) -> Frame {
        let mut f = Frame::filled((FIELD_W * 2) as usize, (FIELD_H * 2) as usize, BG).unwrap();
        for (_, color, rect) in self.snapshot() {
            for y in rect.y..rect.y + rect.h {
                for x in rect.x..rect.x + rect.w {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            f.set((2 * x + dx) as usize, (2 * y + dy) as usize, color);
                        }
                    }
                }
            }
        }
        f
    }

    /// Ground-truth sprite count for the current observation: the number of
    /// entity groups after merging same-colored entities whose geometry is
    /// 4-connected across the two raw frames the observation maxes over.
    /// The documented merge case is the ball touching the player paddle.
    pub fn expected_sprite_count(&self) -> usize {
        // One node per rendered rectangle: an entity's own two per-frame
        // rects can also be disconnected (e.g. the ball re-serving mid
        // frame-skip).
        let nodes: Vec<(Color, Rect)> = self
            .obs_entities
            .iter()
            .flat_map(|e| e.rects.iter().map(|r| (e.color, *r)))
            .collect();
        let n = nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..n {
            for j in i + 1..n {
                if nodes[i].0 == nodes[j].0 && nodes[i].1.touches4(&nodes[j].1) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// True when the ball and the player paddle merge into one component in
    /// the current observation.
    pub fn ball_touching_paddle(&self) -> bool {
        self.obs_entities.len() >= 2
            && self.obs_entities[0].color == self.obs_entities[1].color
            && self.obs_entities[0].touches4(&self.obs_entities[1])
    }

    /// Test and demo hook: place the ball directly.
    pub fn set_ball(&mut self, x: i64, y: i64, vx: i64, vy: i64) {
        let ball = match &mut self.state {
            GameState::Pong { ball, .. } => ball,
            GameState::Breakout { ball, .. } => ball,
        };
        *ball = Ball { x, y, vx, vy };
        let snap = self.snapshot();
        self.obs_entities = combine_snapshots(&snap, &snap);
        self.observation = downsample(&self.render_raw()).unwrap();
    }

    /// Friendly names for the signatures this game renders, keyed by color
    /// and pixel count. Used to label schema slots in reports.
    pub fn describe_signature(game: GameId, color: Color, pixel_count: usize) -> Option<String> {
        let (bp, paddle_area) = match game {
            GameId::MiniPong => (
                PONG_BALL_PADDLE,
                (PONG_PADDLE_W * PONG_PADDLE_H) as usize,
            ),
            GameId::MiniBreakout => (
                BREAKOUT_BALL_PADDLE,
                (BREAKOUT_PADDLE_W * BREAKOUT_PADDLE_H) as usize,
            ),
        };
        if color == bp {
            // A moving entity smears over at most two overlapping or
            // adjacent positions per observation.
            if pixel_count <= 2 * (BALL_SIZE * BALL_SIZE) as usize {
                return Some("ball".into());
            }
            if pixel_count <= paddle_area + paddle_area / 2 {
                return Some("paddle".into());
            }
            return Some("paddle+ball".into());
        }
        if game == GameId::MiniPong && color == PONG_OPPONENT {
            return Some("opponent".into());
        }
        if game == GameId::MiniBreakout {
            for (row, c) in BREAKOUT_BRICK_ROWS.iter().enumerate() {
                if color == *c {
                    return Some(format!("brick-row{row}"));
                }
            }
        }
        None
    }

    /// Attach friendly per-signature names to a schema built from this
    /// game's observations.
    pub fn annotate_schema(game: GameId, schema: &mut FeatureSchema) {
        for slot in &schema.slots {
            if let Some(name) = Self::describe_signature(
                game,
                slot.signature.color,
                slot.signature.offsets.len(),
            ) {
                schema.names.entry(slot.sig_hash).or_insert(name);
            }
        }
    }
}

fn deflect(ball_y: i64, paddle_y: i64, paddle_h: i64, current_vy: i64) -> i64 {
    let offset = (ball_y + BALL_SIZE / 2) - (paddle_y + paddle_h / 2);
    if offset < -1 {
        -1
    } else if offset > 1 {
        1
    } else {
        // Centered hits keep the incoming vertical direction so rallies
        // never collapse into a purely horizontal loop.
        current_vy
    }
}

fn combine_snapshots(a: &Snapshot, b: &Snapshot) -> Vec<ObsEntity> {
    let mut out: Vec<(usize, ObsEntity)> = Vec::new();
    for (id, color, rect) in a.iter().chain(b.iter()) {
        match out.iter_mut().find(|(i, _)| i == id) {
            Some((_, e)) => {
                if !e.rects.contains(rect) {
                    e.rects.push(*rect);
                }
            }
            None => out.push((
                *id,
                ObsEntity {
                    color: *color,
                    rects: vec![*rect],
                },
            )),
        }
    }
    out.sort_by_key(|(id, _)| *id);
    out.into_iter().map(|(_, e)| e).collect()
}

//! Two-dimensional point mass: drive the position to the origin.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 1;
const DT_POSITION: f64 = 0.05;
const DT_VELOCITY: f64 = 0.1;
const ACTION_COST: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
}

fn default_episode_length() -> usize {
    200
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_length: default_episode_length(),
        }
    }
}

/// `(position, velocity)`, both in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointState {
    pub position: f64,
    pub velocity: f64,
}

impl PointState {
    pub fn new(position: f64, velocity: f64) -> Self {
        PointState { position, velocity }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.position, self.velocity]
    }
}

/// One deterministic transition. Out-of-range actions are clamped to
/// `[-1, 1]`. The dynamics have no terminal states, so `done` is always
/// false; episode time limits are handled by [`PointMassEnv`] and are not
/// terminal for bootstrapping.
pub fn toy_env_step(state: PointState, action: f64) -> (PointState, f64, bool) {
    let a = if (-1.0..=1.0).contains(&action) {
        action
    } else {
        log::warn!("action {action} outside [-1, 1]; clamped");
        action.clamp(-1.0, 1.0)
    };
    let x = state.position;
    let v = state.velocity;
    let next = PointState {
        position: (x + DT_POSITION * v).clamp(-1.0, 1.0),
        velocity: (v + DT_VELOCITY * a).clamp(-1.0, 1.0),
    };
    let reward = -(x * x + ACTION_COST * a * a);
    (next, reward, false)
}

/// Episodic wrapper with uniform random starts.
#[derive(Clone, Debug)]
pub struct PointMassEnv {
    cfg: EnvConfig,
    state: PointState,
    t: usize,
}

impl PointMassEnv {
    pub fn new(cfg: EnvConfig, rng: &mut SeededRng) -> Self {
        let mut env = PointMassEnv {
            cfg,
            state: PointState::new(0.0, 0.0),
            t: 0,
        };
        env.reset(rng);
        env
    }

    pub fn reset(&mut self, rng: &mut SeededRng) -> PointState {
        self.state = PointState::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
        self.t = 0;
        self.state
    }

    pub fn reset_to(&mut self, state: PointState) {
        self.state = state;
        self.t = 0;
    }

    pub fn state(&self) -> PointState {
        self.state
    }

    /// Returns `(next_state, reward, done, time_limit_reached)`.
    pub fn step(&mut self, action: f64) -> (PointState, f64, bool, bool) {
        let (next, r, done) = toy_env_step(self.state, action);
        self.state = next;
        self.t += 1;
        (next, r, done, self.t >= self.cfg.episode_length)
    }

    /// Return of one full episode from `start` under `policy`.
    pub fn rollout(&mut self, start: PointState, mut policy: impl FnMut(PointState) -> f64) -> f64 {
        self.reset_to(start);
        let mut ret = 0.0;
        loop {
            let a = policy(self.state);
            let (_, r, done, limit) = self.step(a);
            ret += r;
            if done || limit {
                return ret;
            }
        }
    }
}

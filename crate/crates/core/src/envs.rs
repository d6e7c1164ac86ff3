//! Benchmark environments behind a common episodic interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<S> {
    pub reward: f64,
    pub next: S,
    pub terminal: bool,
}

pub trait EpisodicEnv {
    type State: Clone;

    fn action_count(&self) -> usize;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Fails when called from a terminal state.
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> Result<Step<Self::State>>;
}

/// Environments whose states are indices `0..state_count()`.
pub trait DiscreteEnv: EpisodicEnv<State = usize> {
    fn state_count(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "random-walk-19")]
    RandomWalk19,
    #[serde(rename = "mountain-car")]
    MountainCar,
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-walk-19" => Ok(EnvId::RandomWalk19),
            "mountain-car" => Ok(EnvId::MountainCar),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvId::RandomWalk19 => "random-walk-19",
            EnvId::MountainCar => "mountain-car",
        })
    }
}

// ---------------------------------------------------------------------------
// Random walk
// ---------------------------------------------------------------------------

/// Number of non-terminal states in the walk.
pub const WALK_INTERIOR: usize = 19;
/// Left terminal index; the right terminal is `WALK_INTERIOR + 1`.
pub const WALK_LEFT_END: usize = 0;
pub const WALK_RIGHT_END: usize = WALK_INTERIOR + 1;
pub const WALK_START: usize = 10;
pub const WALK_LEFT: usize = 0;
pub const WALK_RIGHT: usize = 1;

/// 19-state random walk. Index 0 and 20 are terminals, 1..=19 the interior,
/// start at 10. Entering the left end pays -1, the right end +1.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomWalk19;

impl RandomWalk19 {
    fn transition(state: usize, action: usize) -> (f64, usize) {
        let next = if action == WALK_LEFT { state - 1 } else { state + 1 };
        let reward = match next {
            WALK_LEFT_END => -1.0,
            WALK_RIGHT_END => 1.0,
            _ => 0.0,
        };
        (reward, next)
    }
}

impl EpisodicEnv for RandomWalk19 {
    type State = usize;

    fn action_count(&self) -> usize {
        2
    }

    fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> usize {
        WALK_START
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, _rng: &mut R) -> Result<Step<usize>> {
        let state = *state;
        if state == WALK_LEFT_END || state == WALK_RIGHT_END {
            return Err(Error::Contract(format!("step from terminal state {state}")));
        }
        if state > WALK_RIGHT_END || action > 1 {
            return Err(Error::Index(format!("state {state}, action {action}")));
        }
        let (reward, next) = RandomWalk19::transition(state, action);
        Ok(Step { reward, next, terminal: next == WALK_LEFT_END || next == WALK_RIGHT_END })
    }
}

impl DiscreteEnv for RandomWalk19 {
    fn state_count(&self) -> usize {
        WALK_RIGHT_END + 1
    }
}

/// True values of interior states 1..=19 under the uniform policy with no
/// discounting: `v(i) = 2i/20 - 1`.
pub fn random_walk_true_values() -> Vec<f64> {
    (1..=WALK_INTERIOR).map(|i| 2.0 * i as f64 / (WALK_INTERIOR + 1) as f64 - 1.0).collect()
}

/// The walk as an explicit 21-state model with absorbing ends and `gamma = 1`.
pub fn random_walk_as_tabular_mdp() -> TabularMdp {
    let ns = WALK_RIGHT_END + 1;
    let mut transition = vec![0.0; ns * 2 * ns];
    let mut reward = vec![0.0; ns * 2 * ns];
    for s in 1..=WALK_INTERIOR {
        for a in 0..2 {
            let (r, next) = RandomWalk19::transition(s, a);
            transition[(s * 2 + a) * ns + next] = 1.0;
            reward[(s * 2 + a) * ns + next] = r;
        }
    }
    let mut terminal = vec![false; ns];
    terminal[WALK_LEFT_END] = true;
    terminal[WALK_RIGHT_END] = true;
    TabularMdp::new(ns, 2, transition, reward, terminal, 1.0).expect("walk model is well formed")
}

// ---------------------------------------------------------------------------
// Sampled tabular MDP
// ---------------------------------------------------------------------------

/// How [`MdpEnv`] picks the first state of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartState {
    Fixed(usize),
    /// Uniform over non-terminal states.
    Uniform,
}

/// Samples trajectories from an explicit model.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    mdp: TabularMdp,
    start: StartState,
    starts: Vec<usize>,
}

impl MdpEnv {
    pub fn new(mdp: TabularMdp, start: StartState) -> Result<Self> {
        let starts: Vec<usize> = match start {
            StartState::Fixed(s) if s >= mdp.num_states() => {
                return Err(Error::Index(format!("start state {s}")));
            }
            StartState::Fixed(s) => vec![s],
            StartState::Uniform => (0..mdp.num_states()).filter(|s| !mdp.is_terminal(*s)).collect(),
        };
        if starts.is_empty() {
            return Err(Error::InvalidModel("no non-terminal start state".into()));
        }
        Ok(MdpEnv { mdp, start, starts })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn start(&self) -> StartState {
        self.start
    }
}

impl EpisodicEnv for MdpEnv {
    type State = usize;

    fn action_count(&self) -> usize {
        self.mdp.num_actions()
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.starts.len() == 1 {
            self.starts[0]
        } else {
            self.starts[rng.gen_range(0..self.starts.len())]
        }
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> Result<Step<usize>> {
        let state = *state;
        if state >= self.mdp.num_states() || action >= self.mdp.num_actions() {
            return Err(Error::Index(format!("state {state}, action {action}")));
        }
        if self.mdp.is_terminal(state) {
            return Err(Error::Contract(format!("step from terminal state {state}")));
        }
        let (reward, next) = self.mdp.sample(state, action, rng);
        Ok(Step { reward, next, terminal: self.mdp.is_terminal(next) })
    }
}

impl DiscreteEnv for MdpEnv {
    fn state_count(&self) -> usize {
        self.mdp.num_states()
    }
}

// ---------------------------------------------------------------------------
// Mountain car
// ---------------------------------------------------------------------------

pub const POSITION_MIN: f64 = -1.2;
pub const POSITION_MAX: f64 = 0.5;
pub const VELOCITY_MIN: f64 = -0.07;
pub const VELOCITY_MAX: f64 = 0.07;
/// Episode cap used by the control experiments.
pub const MOUNTAIN_CAR_STEP_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarState {
    pub position: f64,
    pub velocity: f64,
}

impl CarState {
    pub fn as_array(&self) -> [f64; 2] {
        [self.position, self.velocity]
    }

    fn in_bounds(&self) -> bool {
        (POSITION_MIN..=POSITION_MAX).contains(&self.position)
            && (VELOCITY_MIN..=VELOCITY_MAX).contains(&self.velocity)
    }
}

/// Classic mountain car dynamics. Actions 0, 1, 2 apply throttle -1, 0, +1.
///
/// Returns `(reward, next, terminal)`; reward is -1 on every step.
pub fn mountain_car_step(state: CarState, action: usize) -> Result<(f64, CarState, bool)> {
    if !state.in_bounds() {
        return Err(Error::Contract(format!("car state out of bounds: {state:?}")));
    }
    if action > 2 {
        return Err(Error::Index(format!("throttle action {action}")));
    }
    let throttle = action as f64 - 1.0;
    let mut velocity = (state.velocity + 0.001 * throttle - 0.0025 * (3.0 * state.position).cos())
        .clamp(VELOCITY_MIN, VELOCITY_MAX);
    let position = (state.position + velocity).clamp(POSITION_MIN, POSITION_MAX);
    if position == POSITION_MIN && velocity < 0.0 {
        velocity = 0.0;
    }
    let terminal = position >= POSITION_MAX;
    Ok((-1.0, CarState { position, velocity }, terminal))
}

/// Mountain car starting at rest with position uniform in `[-0.6, -0.4]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MountainCar;

impl EpisodicEnv for MountainCar {
    type State = CarState;

    fn action_count(&self) -> usize {
        3
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> CarState {
        CarState { position: rng.gen_range(-0.6..=-0.4), velocity: 0.0 }
    }

    fn step<R: Rng + ?Sized>(&self, state: &CarState, action: usize, _rng: &mut R) -> Result<Step<CarState>> {
        if state.position >= POSITION_MAX {
            return Err(Error::Contract("step from terminal car state".into()));
        }
        let (reward, next, terminal) = mountain_car_step(*state, action)?;
        Ok(Step { reward, next, terminal })
    }
}

//! Hashed tile coding and the semi-gradient linear form of on-line Q(sigma, lambda).

use rand::Rng;

use crate::envs::{CarState, EpisodicEnv, POSITION_MAX, POSITION_MIN, VELOCITY_MAX, VELOCITY_MIN};
use crate::error::{check_unit_interval, Error, Result};
use crate::td::{sigma_schedule_step, EpisodeStats, LearnerConfig, StepSize, TraceKind};

pub const DEFAULT_TILINGS: usize = 8;
pub const DEFAULT_TILES_PER_DIM: usize = 8;
pub const DEFAULT_HASH_SIZE: usize = 4096;
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Trace entries below this magnitude are dropped after decay.
pub const TRACE_FLOOR: f64 = 1e-8;

/// Grid tilings over a box, each displaced asymmetrically. When every
/// (tiling, tile, action) triple fits in the index space the indices are
/// distinct; otherwise they are hashed and collisions go undetected.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCoder {
    num_tilings: usize,
    tiles_per_dim: usize,
    hash_size: usize,
    num_actions: usize,
    lows: Vec<f64>,
    highs: Vec<f64>,
    /// Per-dimension coordinate range of one tiling, set when indices are dense.
    extents: Option<Vec<usize>>,
}

impl TileCoder {
    pub fn new(
        num_tilings: usize,
        tiles_per_dim: usize,
        hash_size: usize,
        num_actions: usize,
        lows: Vec<f64>,
        highs: Vec<f64>,
    ) -> Result<Self> {
        if num_tilings == 0 || tiles_per_dim == 0 || hash_size == 0 || num_actions == 0 {
            return Err(Error::Parameter("tilings, tiles, hash size and actions must be positive".into()));
        }
        if lows.len() != highs.len() || lows.is_empty() {
            return Err(Error::Shape("bounds must be non-empty and of equal length".into()));
        }
        if lows.iter().zip(&highs).any(|(l, h)| !(l < h)) {
            return Err(Error::Parameter("every lower bound must be below its upper bound".into()));
        }
        // Tiling t shifts dimension i by less than 1 + 2i tiles, past the tiles_per_dim + 1 cells.
        let extents: Vec<usize> = (0..lows.len()).map(|i| tiles_per_dim + 2 + 2 * i).collect();
        let capacity = extents
            .iter()
            .try_fold(num_tilings.checked_mul(num_actions), |acc, e| Some(acc?.checked_mul(*e)))
            .flatten();
        let extents = capacity.filter(|c| *c <= hash_size).map(|_| extents);
        Ok(TileCoder { num_tilings, tiles_per_dim, hash_size, num_actions, lows, highs, extents })
    }

    /// Coder over mountain car's (position, velocity) box.
    pub fn mountain_car(num_tilings: usize, tiles_per_dim: usize, hash_size: usize) -> Result<Self> {
        TileCoder::new(
            num_tilings,
            tiles_per_dim,
            hash_size,
            3,
            vec![POSITION_MIN, VELOCITY_MIN],
            vec![POSITION_MAX, VELOCITY_MAX],
        )
    }

    pub fn num_tilings(&self) -> usize {
        self.num_tilings
    }

    pub fn hash_size(&self) -> usize {
        self.hash_size
    }

    /// Whether distinct tiles always get distinct indices.
    pub fn is_collision_free(&self) -> bool {
        self.extents.is_some()
    }

    pub fn tile_width(&self, dim: usize) -> f64 {
        (self.highs[dim] - self.lows[dim]) / self.tiles_per_dim as f64
    }

    /// One active index per tiling for `(state, action)`.
    pub fn features(&self, state: &[f64], action: usize) -> Result<Vec<usize>> {
        let mut out = vec![0; self.num_tilings];
        self.features_into(state, action, &mut out)?;
        Ok(out)
    }

    pub fn features_into(&self, state: &[f64], action: usize, out: &mut [usize]) -> Result<()> {
        if state.len() != self.lows.len() || out.len() != self.num_tilings {
            return Err(Error::Shape(format!(
                "expected a {}-dimensional state and {} output slots",
                self.lows.len(),
                self.num_tilings
            )));
        }
        if action >= self.num_actions {
            return Err(Error::Index(format!("action {action} of {}", self.num_actions)));
        }
        let n = self.num_tilings as i64;
        let mut quantized = [0i64; 8];
        let mut quantized_vec;
        let quantized: &mut [i64] = if state.len() <= 8 {
            &mut quantized[..state.len()]
        } else {
            quantized_vec = vec![0i64; state.len()];
            &mut quantized_vec
        };
        for (i, x) in state.iter().enumerate() {
            if !(self.lows[i]..=self.highs[i]).contains(x) {
                return Err(Error::Contract(format!("coordinate {i} = {x} outside tile bounds")));
            }
            let scaled = (x - self.lows[i]) / (self.highs[i] - self.lows[i]) * self.tiles_per_dim as f64;
            quantized[i] = (scaled * self.num_tilings as f64).floor() as i64;
        }
        for (tiling, slot) in out.iter_mut().enumerate() {
            let t = tiling as i64;
            // Tiling t is displaced by t * (2i + 1) / n of a tile along dimension i.
            let coord = |i: usize, q: i64| (q + t * (2 * i as i64 + 1)).div_euclid(n);
            *slot = match &self.extents {
                Some(extents) => {
                    let mut index = tiling;
                    for (i, (q, extent)) in quantized.iter().zip(extents).enumerate() {
                        index = index * extent + coord(i, *q) as usize;
                    }
                    index * self.num_actions + action
                }
                None => {
                    let mut hash = Fnv::new();
                    hash.write(t);
                    for (i, q) in quantized.iter().enumerate() {
                        hash.write(coord(i, *q));
                    }
                    hash.write(action as i64);
                    (hash.finish() % self.hash_size as u64) as usize
                }
            };
        }
        Ok(())
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, value: i64) {
        for byte in value.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    /// Avalanches the state so that the low bits used by the modulus are well mixed.
    fn finish(&self) -> u64 {
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Sum of the weights at the active indices.
pub fn linear_q_value(weights: &[f64], features: &[usize]) -> Result<f64> {
    features.iter().try_fold(0.0, |acc, &i| {
        weights
            .get(i)
            .map(|w| acc + w)
            .ok_or_else(|| Error::Index(format!("feature {i} outside {} weights", weights.len())))
    })
}

/// Per-feature trace that only stores entries above [`TRACE_FLOOR`].
#[derive(Debug, Clone)]
pub struct SparseTrace {
    kind: TraceKind,
    values: Vec<f64>,
    active: Vec<usize>,
}

impl SparseTrace {
    pub fn new(kind: TraceKind, len: usize) -> Self {
        SparseTrace { kind, values: vec![0.0; len], active: Vec::new() }
    }

    pub fn reset(&mut self) {
        for &i in &self.active {
            self.values[i] = 0.0;
        }
        self.active.clear();
    }

    pub fn decay(&mut self, factor: f64) {
        let values = &mut self.values;
        self.active.retain(|&i| {
            values[i] *= factor;
            if values[i] < TRACE_FLOOR {
                values[i] = 0.0;
                false
            } else {
                true
            }
        });
    }

    pub fn mark(&mut self, features: &[usize]) {
        for &i in features {
            if self.values[i] == 0.0 {
                self.active.push(i);
            }
            match self.kind {
                TraceKind::Accumulating => self.values[i] += 1.0,
                TraceKind::Replacing => self.values[i] = 1.0,
            }
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn nonzero_count(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn within_bounds(&self) -> bool {
        self.active.iter().all(|&i| match self.kind {
            TraceKind::Accumulating => self.values[i] >= 0.0,
            TraceKind::Replacing => (0.0..=1.0).contains(&self.values[i]),
        })
    }
}

/// Linear action values over hashed features, with their trace.
#[derive(Debug, Clone)]
pub struct LinearQ {
    pub weights: Vec<f64>,
    pub trace: SparseTrace,
}

impl LinearQ {
    pub fn zeros(len: usize, kind: TraceKind) -> Self {
        LinearQ { weights: vec![0.0; len], trace: SparseTrace::new(kind, len) }
    }

    pub fn value(&self, features: &[usize]) -> Result<f64> {
        linear_q_value(&self.weights, features)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Coordinates fed to the tile coder.
pub trait ContinuousState {
    type Coords: AsRef<[f64]>;

    fn coords(&self) -> Self::Coords;
}

impl ContinuousState for CarState {
    type Coords = [f64; 2];

    fn coords(&self) -> [f64; 2] {
        self.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConfig {
    pub learner: LearnerConfig,
    /// Exploration of the epsilon-greedy behavior policy.
    pub epsilon: f64,
    /// Divide the step size by the number of tilings.
    pub alpha_per_tiling: bool,
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        check_unit_interval("epsilon", self.epsilon)?;
        if !matches!(self.learner.alpha, StepSize::Constant(_)) {
            return Err(Error::Parameter("linear learner needs a constant step size".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics passed to observers of the linear learner.
pub struct LinearStepView<'a> {
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub delta: f64,
    pub q: &'a LinearQ,
}

/// On-line Q(sigma, lambda) with linear function approximation. The target
/// policy is greedy and the behavior policy epsilon-greedy with respect to
/// the current weights; ties go to the lowest action index.
#[derive(Debug, Clone)]
pub struct LinearLearner {
    coder: TileCoder,
    cfg: LinearConfig,
    q: LinearQ,
    episodes: usize,
}

impl LinearLearner {
    pub fn new(coder: TileCoder, cfg: LinearConfig) -> Result<Self> {
        cfg.validate()?;
        let q = LinearQ::zeros(coder.hash_size(), cfg.learner.trace);
        Ok(LinearLearner { coder, cfg, q, episodes: 0 })
    }

    pub fn q(&self) -> &LinearQ {
        &self.q
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn episodes_completed(&self) -> usize {
        self.episodes
    }

    /// Effective per-feature step size.
    pub fn step_size(&self) -> f64 {
        let StepSize::Constant(alpha) = self.cfg.learner.alpha else {
            unreachable!("validated at construction")
        };
        if self.cfg.alpha_per_tiling {
            alpha / self.coder.num_tilings() as f64
        } else {
            alpha
        }
    }

    /// Action value under the current weights.
    pub fn value(&self, coords: &[f64], action: usize) -> Result<f64> {
        self.q.value(&self.coder.features(coords, action)?)
    }

    pub fn run_episode<E, R>(&mut self, env: &E, rng: &mut R) -> Result<EpisodeStats>
    where
        E: EpisodicEnv,
        E::State: ContinuousState,
        R: Rng + ?Sized,
    {
        self.run_episode_observed(env, rng, |_| {})
    }

    pub fn run_episode_observed<E, R, F>(&mut self, env: &E, rng: &mut R, mut observe: F) -> Result<EpisodeStats>
    where
        E: EpisodicEnv,
        E::State: ContinuousState,
        R: Rng + ?Sized,
        F: FnMut(&LinearStepView<'_>),
    {
        let na = env.action_count();
        let tilings = self.coder.num_tilings();
        let cfg = self.cfg.learner;
        let sigma = sigma_schedule_step(&cfg, self.episodes);
        let alpha = self.step_size();
        let decay = cfg.gamma * cfg.lambda;

        // Active features of every action in the current and next state.
        let mut feats = vec![0usize; na * tilings];
        let mut next_feats = vec![0usize; na * tilings];
        let mut next_values = vec![0.0; na];

        self.q.trace.reset();
        let mut state = env.reset(rng);
        self.fill_features(&state, &mut feats)?;
        for (b, v) in next_values.iter_mut().enumerate() {
            *v = self.q.value(&feats[b * tilings..(b + 1) * tilings])?;
        }
        let mut action = self.behave(&next_values, rng);
        let mut stats = EpisodeStats { episode_return: 0.0, steps: 0, truncated: false };

        loop {
            let current = &feats[action * tilings..(action + 1) * tilings];
            let q_sa = self.q.value(current)?;
            let step = env.step(&state, action, rng)?;
            let mut next_action = None;
            let bootstrap = if step.terminal {
                0.0
            } else {
                self.fill_features(&step.next, &mut next_feats)?;
                for (b, v) in next_values.iter_mut().enumerate() {
                    *v = self.q.value(&next_feats[b * tilings..(b + 1) * tilings])?;
                }
                let b = self.behave(&next_values, rng);
                next_action = Some(b);
                let greedy = next_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (1.0 - sigma) * greedy + sigma * next_values[b]
            };
            let delta = step.reward + cfg.gamma * bootstrap - q_sa;

            self.q.trace.decay(decay);
            self.q.trace.mark(current);
            let LinearQ { weights, trace } = &mut self.q;
            for &i in trace.active() {
                weights[i] += alpha * delta * trace.get(i);
            }

            stats.episode_return += step.reward;
            stats.steps += 1;
            observe(&LinearStepView { t: stats.steps - 1, action, reward: step.reward, delta, q: &self.q });

            match next_action {
                None => break,
                Some(_) if stats.steps >= cfg.max_steps => {
                    stats.truncated = true;
                    break;
                }
                Some(b) => {
                    state = step.next;
                    std::mem::swap(&mut feats, &mut next_feats);
                    action = b;
                }
            }
        }
        self.episodes += 1;
        Ok(stats)
    }

    fn fill_features<S: ContinuousState>(&self, state: &S, out: &mut [usize]) -> Result<()> {
        let coords = state.coords();
        let tilings = self.coder.num_tilings();
        for (b, chunk) in out.chunks_mut(tilings).enumerate() {
            self.coder.features_into(coords.as_ref(), b, chunk)?;
        }
        Ok(())
    }

    fn behave<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> usize {
        if rng.gen::<f64>() < self.cfg.epsilon {
            rng.gen_range(0..values.len())
        } else {
            argmax(values)
        }
    }
}

/// Lowest-index maximizer.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
